"""LF-MMI, LF-bMMI and LF-sMBR objectives with gradients w.r.t. the log-likelihoods.

All criteria are maximized.  Reference occupancies ``gamma_num`` enter the
boosting (bMMI) and the per-frame accuracies (sMBR) as constants: no
gradient is propagated through them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .forward_backward import boost_table, forward_backward, smbr_backward, smbr_forward
from .graphs import DenominatorGraph, Supervision

CRITERIA = ("mmi", "bmmi", "smbr")


@dataclass(frozen=True)
class CriterionConfig:
    kind: str = "mmi"
    b: float = 0.0
    silence_scale: float = 1.0
    leaky_coeff: float = 0.1
    xent_smooth: float = 0.025
    silence_pdfs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        object.__setattr__(self, "silence_pdfs", frozenset(int(j) for j in self.silence_pdfs))
        if self.kind not in CRITERIA:
            raise ValueError(f"unknown criterion {self.kind!r}; expected one of {', '.join(CRITERIA)}")
        if self.b < 0:
            raise ValueError("boosting factor must be >= 0")
        if self.kind == "mmi" and self.b != 0:
            raise ValueError("plain MMI requires b = 0; use the bmmi criterion to boost")
        if not 0 < self.silence_scale <= 1:
            raise ValueError("silence accuracy scale must lie in (0, 1]")
        if self.leaky_coeff < 0:
            raise ValueError("leaky coefficient must be >= 0")
        if self.xent_smooth < 0:
            raise ValueError("cross-entropy smoothing must be >= 0")


@dataclass
class AccuracyModel:
    gamma_num: np.ndarray
    silence_pdfs: frozenset = frozenset()
    silence_scale: float = 1.0

    def table(self) -> np.ndarray:
        """Frame accuracy ``a(t, j)``: reference occupancy, scaled on silence pdfs."""
        a = np.array(self.gamma_num, dtype=np.float64)
        if self.silence_scale != 1.0 and self.silence_pdfs:
            cols = sorted(j for j in self.silence_pdfs if j < a.shape[1])
            a[:, cols] *= self.silence_scale
        return a


@dataclass
class CriterionOutput:
    objective: float
    grad: np.ndarray
    num_logprob: float
    den_logprob: float
    avg_accuracy: float | None = None
    xent_value: float = 0.0
    gamma_num: np.ndarray | None = None
    gamma_den: np.ndarray | None = None

    @property
    def total_objective(self) -> float:
        """Criterion plus cross-entropy regularizer; ``grad`` is the gradient of this."""
        return self.objective + self.xent_value


def _den(den: DenominatorGraph, cfg: CriterionConfig) -> DenominatorGraph:
    if den.leaky_coeff == cfg.leaky_coeff:
        return den
    return den.with_leaky_coeff(cfg.leaky_coeff)


def _check(den, sup, ll):
    ll = np.asarray(ll, dtype=np.float64)
    if ll.ndim != 2 or ll.shape[1] != den.num_pdfs:
        raise ValueError(f"log-likelihoods must be T x {den.num_pdfs}, got {ll.shape}")
    if ll.shape[0] != sup.num_frames:
        raise ValueError(f"{sup.utt_id}: supervision has {sup.num_frames} frames, log-likelihoods {ll.shape[0]}")
    return ll


def compute_mmi(den: DenominatorGraph, sup: Supervision, ll, cfg: CriterionConfig,
                gamma_num: np.ndarray | None = None) -> CriterionOutput:
    """LF-MMI (``b == 0``) or LF-bMMI (``b > 0``).

    The boosted recursion multiplies every denominator likelihood by
    ``exp(-b * gamma_num(t, j))``; with ``b == 0`` no boost table is built, so
    both criteria run exactly the same arithmetic.
    """
    ll = _check(den, sup, ll)
    num_lp, g_num, _ = forward_backward(sup, ll)
    ref = g_num if gamma_num is None else gamma_num
    den_lp, g_den, _ = forward_backward(_den(den, cfg), ll, boost_table(ref, cfg.b))
    out = CriterionOutput(num_lp - den_lp, g_num - g_den, num_lp, den_lp, gamma_num=g_num, gamma_den=g_den)
    return _add_xent(out, ref, ll, cfg)


def compute_bmmi(den, sup, ll, cfg: CriterionConfig, gamma_num=None) -> CriterionOutput:
    return compute_mmi(den, sup, ll, cfg, gamma_num)


def compute_smbr(den: DenominatorGraph, sup: Supervision, ll, cfg: CriterionConfig,
                 gamma_num: np.ndarray | None = None) -> CriterionOutput:
    """Expected state accuracy over the (leaky) denominator graph.

    One forward and one backward sweep over the denominator; the gradient is
    ``gamma_den * (cond_accuracy - avg_accuracy)``.
    """
    ll = _check(den, sup, ll)
    num_lp, g_num, _ = forward_backward(sup, ll)
    ref = g_num if gamma_num is None else gamma_num
    acc = AccuracyModel(ref, cfg.silence_pdfs, cfg.silence_scale).table()
    g = _den(den, cfg)
    ab, q = smbr_forward(g, ll, acc)
    smbr_backward(g, ll, acc, ab, q)
    grad = q.weighted - q.gamma * q.total_avg_accuracy
    out = CriterionOutput(q.total_avg_accuracy, grad, num_lp, ab.total_logprob,
                          avg_accuracy=q.total_avg_accuracy, gamma_num=g_num, gamma_den=q.gamma)
    return _add_xent(out, ref, ll, cfg)


def xent_regularizer(gamma_num: np.ndarray, ll: np.ndarray, smooth: float):
    """Cross-entropy of the output softmax against the reference occupancies, scaled by ``smooth``."""
    if smooth == 0:
        return 0.0, np.zeros_like(ll, dtype=np.float64)
    value = smooth * float(np.sum(gamma_num * log_softmax(ll, axis=1)))
    grad = smooth * (gamma_num - gamma_num.sum(axis=1, keepdims=True) * softmax(ll, axis=1))
    return value, grad


def _add_xent(out: CriterionOutput, gamma_num, ll, cfg: CriterionConfig) -> CriterionOutput:
    if cfg.xent_smooth > 0:
        out.xent_value, g = xent_regularizer(gamma_num, ll, cfg.xent_smooth)
        out.grad = out.grad + g
    return out


def compute_criterion(den: DenominatorGraph, sup: Supervision, ll, cfg: CriterionConfig,
                      gamma_num: np.ndarray | None = None) -> CriterionOutput:
    if cfg.kind == "smbr":
        return compute_smbr(den, sup, ll, cfg, gamma_num)
    return compute_mmi(den, sup, ll, cfg, gamma_num)
