"""Scaled forward-backward over denominator graphs and supervisions.

Recursions run in probability space.  Every alpha row is renormalized to sum
to one and the normalizer is accumulated in ``log_scales``; beta rows use the
same normalizers so that ``alpha[t] @ beta[t] == 1`` for every ``t``.

The leaky HMM is applied algorithmically: after the arcs of frame ``t`` (and
once at ``t = 0``) every state receives ``lambda * initial(s) * sum(alpha)``.
The backward pass applies the transpose of that rank-one update.  Leak moves
mass between states without consuming a frame, so it never contributes to
emission occupancies or to path accuracy.

Log-likelihoods are shifted by their per-frame maximum before
exponentiation; the shift is folded back into ``log_scales``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import DenominatorGraph, Supervision


@dataclass
class AlphaBeta:
    alpha: np.ndarray          # (T + 1, S), rows sum to 1
    log_scales: np.ndarray     # (T + 1,)
    total_logprob: float
    scales: np.ndarray         # (T + 1,) normalizers without the likelihood shift
    lik: np.ndarray            # (T, J) shifted (and boosted) likelihoods
    beta: np.ndarray | None = None


@dataclass
class SmbrQuantities:
    alpha_mbr: np.ndarray              # (T + 1, S) expected accuracy so far given the state
    alpha_acc: np.ndarray              # alpha_mbr * alpha, scaled like alpha
    total_avg_accuracy: float
    beta_mbr: np.ndarray | None = None  # (T + 1, S) expected accuracy still to come
    beta_acc: np.ndarray | None = None
    gamma: np.ndarray | None = None     # (T, J) denominator occupancies
    weighted: np.ndarray | None = None  # (T, J) gamma * conditional accuracy

    @property
    def cond_accuracy(self) -> np.ndarray:
        """Expected path accuracy given pdf j at frame t; zero where gamma is zero."""
        out = np.zeros_like(self.gamma)
        nz = self.gamma > 0
        out[nz] = self.weighted[nz] / self.gamma[nz]
        return out


class _Arcs:
    """Per-frame arc arrays for either graph kind."""

    def __init__(self, g, num_frames: int, num_pdfs: int):
        if isinstance(g, Supervision):
            if g.num_frames != num_frames:
                raise ValueError(f"supervision has {g.num_frames} frames, log-likelihoods have {num_frames}")
            self.S = g.num_states
            self.initial = np.zeros(self.S)
            self.initial[g.initial] = 1.0
            self.final = np.zeros(self.S)
            self.final[g.final] = 1.0
            self.lam = 0.0
            self.frames = [(s, d, j, np.exp(w)) for s, d, j, w in g.frames]
            top = max((int(j.max()) for _, _, j, _ in g.frames if len(j)), default=-1)
            if top >= num_pdfs:
                raise ValueError(f"supervision uses pdf {top} but log-likelihoods have {num_pdfs} columns")
        else:
            if g.num_pdfs != num_pdfs:
                raise ValueError(f"graph has {g.num_pdfs} pdfs, log-likelihoods have {num_pdfs} columns")
            self.S = g.num_states
            self.initial = g.initial
            self.final = g.final
            self.lam = g.leaky_coeff
            arcs = (g.src, g.dst, g.pdf, g.weight)
            self.frames = [arcs] * num_frames

    def leak(self, v: np.ndarray) -> np.ndarray:
        if self.lam == 0.0:
            return v
        return v + self.lam * self.initial * v.sum()

    def leak_t(self, v: np.ndarray) -> np.ndarray:
        if self.lam == 0.0:
            return v
        return v + self.lam * (self.initial @ v)


def _likelihoods(ll: np.ndarray, boost: np.ndarray | None):
    x = np.asarray(ll, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("log-likelihoods must be a T x J matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("log-likelihoods must be finite")
    if boost is not None:
        if boost.shape != x.shape:
            raise ValueError(f"boost table shape {boost.shape} does not match {x.shape}")
        x = x + boost
    shift = x.max(axis=1)
    return np.exp(x - shift[:, None]), shift


def boost_table(gamma_num: np.ndarray, b: float) -> np.ndarray | None:
    """Log-multipliers ``-b * gamma_num`` applied to the denominator likelihoods."""
    if b == 0:
        return None
    return -b * np.asarray(gamma_num, dtype=np.float64)


def forward(graph, ll: np.ndarray, boost: np.ndarray | None = None) -> AlphaBeta:
    lik, shift = _likelihoods(ll, boost)
    T, J = lik.shape
    arcs = _Arcs(graph, T, J)
    S = arcs.S
    alpha = np.zeros((T + 1, S))
    scales = np.zeros(T + 1)
    a = arcs.leak(arcs.initial.astype(np.float64))
    scales[0] = a.sum()
    alpha[0] = a / scales[0]
    for t in range(1, T + 1):
        src, dst, pdf, w = arcs.frames[t - 1]
        delta = alpha[t - 1][src] * w * lik[t - 1][pdf]
        a = arcs.leak(np.bincount(dst, delta, minlength=S))
        c = a.sum()
        if not c > 0:
            raise FloatingPointError(f"forward mass underflowed to zero at frame {t}")
        scales[t] = c
        alpha[t] = a / c
    z = alpha[T] @ arcs.final
    if not z > 0:
        raise FloatingPointError(f"no forward mass reaches a final state after frame {T}")
    log_scales = np.log(scales)
    log_scales[1:] += shift
    total = float(log_scales.sum() + np.log(z))
    return AlphaBeta(alpha, log_scales, total, scales, lik)


def backward(graph, ll: np.ndarray, ab: AlphaBeta, boost: np.ndarray | None = None) -> AlphaBeta:
    """Fill ``ab.beta`` using the normalizers recorded by :func:`forward`.

    ``ll`` and ``boost`` must be the ones given to the forward pass; the
    cached likelihoods in ``ab`` are used for the arithmetic.
    """
    lik = ab.lik
    T, J = lik.shape
    if np.shape(ll) != lik.shape:
        raise ValueError("log-likelihoods differ in shape from the forward pass")
    arcs = _Arcs(graph, T, J)
    S = arcs.S
    beta = np.zeros((T + 1, S))
    beta[T] = arcs.final / (ab.alpha[T] @ arcs.final)
    for t in range(T, 0, -1):
        src, dst, pdf, w = arcs.frames[t - 1]
        b = arcs.leak_t(beta[t])
        beta[t - 1] = np.bincount(src, w * lik[t - 1][pdf] * b[dst], minlength=S) / ab.scales[t]
    ab.beta = beta
    return ab


def occupancies(graph, ll: np.ndarray, ab: AlphaBeta, boost: np.ndarray | None = None) -> np.ndarray:
    """Per-frame pdf posteriors (T x J) from a complete :class:`AlphaBeta`."""
    if ab.beta is None:
        raise ValueError("occupancies need a completed backward pass")
    lik = ab.lik
    T, J = lik.shape
    arcs = _Arcs(graph, T, J)
    gamma = np.zeros((T, J))
    for t in range(1, T + 1):
        src, dst, pdf, w = arcs.frames[t - 1]
        b = arcs.leak_t(ab.beta[t])
        occ = ab.alpha[t - 1][src] * w * lik[t - 1][pdf] * b[dst] / ab.scales[t]
        gamma[t - 1] = np.bincount(pdf, occ, minlength=J)
    return gamma


def forward_backward(graph, ll: np.ndarray, boost: np.ndarray | None = None):
    """Convenience wrapper returning ``(total_logprob, gamma, ab)``."""
    ab = forward(graph, ll, boost)
    backward(graph, ll, ab, boost)
    return ab.total_logprob, occupancies(graph, ll, ab, boost), ab


def smbr_forward(graph: DenominatorGraph, ll: np.ndarray, acc: np.ndarray,
                 boost: np.ndarray | None = None):
    """Forward sweep carrying mass and accuracy-weighted mass together.

    ``acc`` is the T x J per-frame accuracy table.  Returns the partial
    :class:`AlphaBeta` and :class:`SmbrQuantities`.
    """
    lik, shift = _likelihoods(ll, boost)
    T, J = lik.shape
    if acc.shape != (T, J):
        raise ValueError(f"accuracy table shape {acc.shape} does not match {(T, J)}")
    arcs = _Arcs(graph, T, J)
    S = arcs.S
    alpha = np.zeros((T + 1, S))
    alpha_acc = np.zeros((T + 1, S))
    scales = np.zeros(T + 1)
    a = arcs.leak(arcs.initial.astype(np.float64))
    scales[0] = a.sum()
    alpha[0] = a / scales[0]
    for t in range(1, T + 1):
        src, dst, pdf, w = arcs.frames[t - 1]
        e = w * lik[t - 1][pdf]
        delta = alpha[t - 1][src] * e
        a = np.bincount(dst, delta, minlength=S)
        aa = np.bincount(dst, alpha_acc[t - 1][src] * e + acc[t - 1][pdf] * delta, minlength=S)
        a = arcs.leak(a)
        aa = arcs.leak(aa)
        c = a.sum()
        if not c > 0:
            raise FloatingPointError(f"forward mass underflowed to zero at frame {t}")
        scales[t] = c
        alpha[t] = a / c
        alpha_acc[t] = aa / c
    z = alpha[T] @ arcs.final
    if not z > 0:
        raise FloatingPointError(f"no forward mass reaches a final state after frame {T}")
    log_scales = np.log(scales)
    log_scales[1:] += shift
    ab = AlphaBeta(alpha, log_scales, float(log_scales.sum() + np.log(z)), scales, lik)
    avg = float(alpha_acc[T] @ arcs.final / z)
    return ab, SmbrQuantities(_ratio(alpha_acc, alpha), alpha_acc, avg)


def smbr_backward(graph: DenominatorGraph, ll: np.ndarray, acc: np.ndarray, ab: AlphaBeta,
                  fwd: SmbrQuantities, boost: np.ndarray | None = None):
    """Single backward sweep producing beta, accuracy-to-go and the gradient inputs.

    Fills ``ab.beta`` and the backward fields of ``fwd``; the per-(t, j)
    quantities ``gamma`` and ``weighted`` are accumulated in the same sweep.
    """
    lik = ab.lik
    T, J = lik.shape
    arcs = _Arcs(graph, T, J)
    S = arcs.S
    beta = np.zeros((T + 1, S))
    beta_acc = np.zeros((T + 1, S))
    gamma = np.zeros((T, J))
    weighted = np.zeros((T, J))
    beta[T] = arcs.final / (ab.alpha[T] @ arcs.final)
    for t in range(T, 0, -1):
        src, dst, pdf, w = arcs.frames[t - 1]
        b = arcs.leak_t(beta[t])
        ba = arcs.leak_t(beta_acc[t])
        c = ab.scales[t]
        e = w * lik[t - 1][pdf] / c
        a_t = acc[t - 1][pdf]
        eb = e * b[dst]
        beta[t - 1] = np.bincount(src, eb, minlength=S)
        beta_acc[t - 1] = np.bincount(src, a_t * eb + e * ba[dst], minlength=S)
        al = ab.alpha[t - 1][src]
        occ = al * eb
        gamma[t - 1] = np.bincount(pdf, occ, minlength=J)
        through = fwd.alpha_acc[t - 1][src] * eb + a_t * occ + al * e * ba[dst]
        weighted[t - 1] = np.bincount(pdf, through, minlength=J)
    ab.beta = beta
    fwd.beta_acc = beta_acc
    fwd.beta_mbr = _ratio(beta_acc, beta)
    fwd.gamma = gamma
    fwd.weighted = weighted
    return ab, fwd


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def read_matrix(path) -> np.ndarray:
    """Read a ``MAT <rows> <cols>`` text matrix."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "MAT":
            raise ValueError(f"{path}:line 1: expected 'MAT <rows> <cols>' header")
        rows, cols = int(header[1]), int(header[2])
        data = []
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != cols:
                raise ValueError(f"{path}:line {lineno}: expected {cols} values, got {len(vals)}")
            data.append([float(v) for v in vals])
    if len(data) != rows:
        raise ValueError(f"{path}: expected {rows} rows, got {len(data)}")
    return np.array(data, dtype=np.float64).reshape(rows, cols)


def write_matrix(m: np.ndarray, path) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    lines = [f"MAT {m.shape[0]} {m.shape[1]}"]
    lines += [" ".join("%.17g" % v for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")
