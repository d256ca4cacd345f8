"""Lattice-free sequence-discriminative training (MMI, boosted MMI, sMBR) for HMM acoustic models."""

__version__ = "0.1.0"
