"""Brute-force references: explicit path enumeration and dense-matrix recursions.

Nothing here shares code with :mod:`lfdisc.forward_backward`; it exists to
check that module (and :mod:`lfdisc.criteria`) by definition.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .criteria import CriterionConfig, CriterionOutput
from .graphs import DenominatorGraph, Supervision

DEFAULT_CAP = 200_000
FD_STEP = 1e-5


class EnumerationCapExceeded(RuntimeError):
    pass


@dataclass
class PathEnumeration:
    """Every complete path of a fixed length.

    ``arcs[n, t]`` is the arc taken at frame ``t``; ``log_weight`` holds all
    non-emission factors (initial, transitions, leak, final).  For leaky
    graphs, paths that differ only in their leak jumps share an arc sequence
    and their weights are summed into a single row.
    """

    src: np.ndarray          # (N, T)
    dst: np.ndarray          # (N, T)
    pdfs: np.ndarray         # (N, T)
    log_weight: np.ndarray   # (N,)

    @property
    def num_paths(self) -> int:
        return len(self.log_weight)

    def emission(self, ll: np.ndarray) -> np.ndarray:
        T = self.pdfs.shape[1]
        return ll[np.arange(T)[None, :], self.pdfs].sum(axis=1)

    def accuracy(self, acc: np.ndarray) -> np.ndarray:
        return self.emission(acc)

    def scores(self, ll: np.ndarray, boost: np.ndarray | None = None) -> np.ndarray:
        s = self.log_weight + self.emission(ll)
        if boost is not None:
            s = s + self.emission(boost)
        return s

    def occupancy_masks(self, num_pdfs: int) -> np.ndarray:
        """(T, J, N) boolean: path n emits pdf j at frame t."""
        T = self.pdfs.shape[1]
        return self.pdfs.T[:, None, :] == np.arange(num_pdfs)[None, :, None]


def _extend(paths, frame_arcs, between, cap):
    """paths: (src_list, dst_list, pdf_list, logw) arrays; append one frame."""
    src, dst, pdf, logw = paths
    a_src, a_dst, a_pdf, a_lw = frame_arcs
    n, a = len(logw), len(a_src)
    fac = between(dst[:, -1][:, None], a_src[None, :])  # (n, a)
    keep = fac > 0
    if keep.sum() > cap:
        raise EnumerationCapExceeded(f"more than {cap} paths")
    pi, ai = np.nonzero(keep)
    with np.errstate(divide="ignore"):
        lw = logw[pi] + np.log(fac[pi, ai]) + a_lw[ai]
    return (np.column_stack([src[pi], a_src[ai]]), np.column_stack([dst[pi], a_dst[ai]]),
            np.column_stack([pdf[pi], a_pdf[ai]]), lw)


def _run(frames, init_w, between, end_w, cap) -> PathEnumeration:
    a_src, a_dst, a_pdf, a_lw = frames[0]
    w0 = init_w(a_src)
    keep = w0 > 0
    if keep.sum() > cap:
        raise EnumerationCapExceeded(f"more than {cap} paths")
    paths = (a_src[keep, None], a_dst[keep, None], a_pdf[keep, None], np.log(w0[keep]) + a_lw[keep])
    for fr in frames[1:]:
        paths = _extend(paths, fr, between, cap)
    src, dst, pdf, lw = paths
    we = end_w(dst[:, -1])
    keep = we > 0
    return PathEnumeration(src[keep], dst[keep], pdf[keep], lw[keep] + np.log(we[keep]))


def enumerate_paths(graph: DenominatorGraph, num_frames: int, cap: int = DEFAULT_CAP) -> PathEnumeration:
    """All complete paths of ``num_frames`` arcs, with the leak expanded explicitly.

    Between consecutive frames (and before the first, and after the last)
    the path either stays put or makes one leak jump ``a -> b`` with
    probability ``lambda * initial(b)``.
    """
    if num_frames < 1:
        raise ValueError("need at least one frame")
    lam = graph.leaky_coeff
    P0 = graph.initial
    f = graph.final
    S = graph.num_states

    def leak_step(a, b):
        # sum over the explicit choices "no jump" and "jump to b"
        return (a == b).astype(float) + lam * P0[b]

    def init_w(s):
        start = np.zeros(S)
        for a in range(S):
            for b in range(S):
                start[b] += P0[a] * leak_step(np.array(a), np.array(b))
        return start[s]

    def end_w(d):
        out = np.zeros(S)
        for a in range(S):
            for b in range(S):
                out[a] += leak_step(np.array(a), np.array(b)) * f[b]
        return out[d]

    arcs = (graph.src, graph.dst, graph.pdf, graph.log_prob)
    return _run([arcs] * num_frames, init_w, leak_step, end_w, cap)


def enumerate_supervision(sup: Supervision, cap: int = DEFAULT_CAP) -> PathEnumeration:
    K = sup.num_states
    init = np.zeros(K)
    init[sup.initial] = 1.0
    fin = np.zeros(K)
    fin[sup.final] = 1.0
    return _run(list(sup.frames), lambda s: init[s], lambda a, b: (a == b).astype(float),
                lambda d: fin[d], cap)


# ---------------------------------------------------------------------------
# Dense-matrix recursions (textbook form)
# ---------------------------------------------------------------------------


def dense_matrices(graph: DenominatorGraph, ll: np.ndarray, boost: np.ndarray | None = None):
    """Per-frame S x S transition-times-emission matrices and the leak matrix."""
    S, J = graph.num_states, graph.num_pdfs
    W = np.zeros((J, S, S))
    for a, b, j, lp in zip(graph.src, graph.dst, graph.pdf, graph.log_prob):
        W[j, a, b] += np.exp(lp)
    x = ll if boost is None else ll + boost
    Ms = [np.tensordot(np.exp(x[t]), W, axes=1) for t in range(len(ll))]
    L = np.eye(S) + graph.leaky_coeff * np.outer(np.ones(S), graph.initial)
    return Ms, L


def dense_forward_backward(graph: DenominatorGraph, ll: np.ndarray, boost: np.ndarray | None = None):
    """Scaled forward/backward with dense matrices; returns (logprob, alpha, beta, scales)."""
    Ms, L = dense_matrices(graph, ll, boost)
    T = len(Ms)
    alpha = [graph.initial @ L]
    c = [alpha[0].sum()]
    alpha[0] = alpha[0] / c[0]
    for M in Ms:
        v = alpha[-1] @ M @ L
        c.append(v.sum())
        alpha.append(v / c[-1])
    z = alpha[-1] @ graph.final
    beta = [None] * (T + 1)
    beta[T] = graph.final / z
    for t in range(T, 0, -1):
        beta[t - 1] = Ms[t - 1] @ L @ beta[t] / c[t]
    return float(np.sum(np.log(c)) + np.log(z)), np.array(alpha), np.array(beta), np.array(c)


def dense_total_logprob(graph: DenominatorGraph, ll: np.ndarray, boost=None) -> float:
    """Unscaled product ``initial L M_1 L ... M_T L final`` in log space."""
    Ms, L = dense_matrices(graph, ll, boost)
    v = graph.initial @ L
    for M in Ms:
        v = v @ M @ L
    return float(np.log(v @ graph.final))


# ---------------------------------------------------------------------------
# Criteria by explicit summation
# ---------------------------------------------------------------------------


def path_posteriors(enum: PathEnumeration, ll: np.ndarray, num_pdfs: int, boost=None) -> np.ndarray:
    p = softmax(enum.scores(ll, boost))
    return np.einsum("tjn,n->tj", enum.occupancy_masks(num_pdfs), p)


def oracle_objective(den_enum: PathEnumeration, sup_enum: PathEnumeration, ll: np.ndarray,
                     cfg: CriterionConfig, gamma_num: np.ndarray) -> float:
    """Criterion value plus cross-entropy term, by explicit sums; ``gamma_num`` is held fixed."""
    J = ll.shape[1]
    xent = cfg.xent_smooth * float(np.sum(gamma_num * (ll - logsumexp(ll, axis=1, keepdims=True))))
    if cfg.kind == "smbr":
        a = np.array(gamma_num, dtype=float)
        for j in cfg.silence_pdfs:
            if j < J:
                a[:, j] *= cfg.silence_scale
        p = softmax(den_enum.scores(ll))
        return float(p @ den_enum.accuracy(a)) + xent
    num = logsumexp(sup_enum.scores(ll))
    den = logsumexp(den_enum.scores(ll) - cfg.b * den_enum.accuracy(gamma_num))
    return float(num - den) + xent


def oracle_criterion(den_enum: PathEnumeration, sup_enum: PathEnumeration, ll: np.ndarray,
                     cfg: CriterionConfig, step: float = FD_STEP) -> CriterionOutput:
    """Objective by explicit sums; gradient by central differences of that sum."""
    ll = np.asarray(ll, dtype=np.float64)
    T, J = ll.shape
    g_num = path_posteriors(sup_enum, ll, J)
    obj = oracle_objective(den_enum, sup_enum, ll, cfg, g_num)
    grad = np.zeros_like(ll)
    for t in range(T):
        for j in range(J):
            e = np.zeros_like(ll)
            e[t, j] = step
            hi = oracle_objective(den_enum, sup_enum, ll + e, cfg, g_num)
            lo = oracle_objective(den_enum, sup_enum, ll - e, cfg, g_num)
            grad[t, j] = (hi - lo) / (2 * step)
    num_lp = float(logsumexp(sup_enum.scores(ll)))
    den_lp = float(logsumexp(den_enum.scores(ll) - cfg.b * den_enum.accuracy(g_num)))
    return CriterionOutput(obj, grad, num_lp, den_lp,
                           avg_accuracy=obj if cfg.kind == "smbr" else None, gamma_num=g_num)


def brute_force_viterbi(enum: PathEnumeration, ll: np.ndarray):
    s = enum.scores(ll)
    n = int(np.argmax(s))
    return float(s[n]), enum.pdfs[n]


# ---------------------------------------------------------------------------
# Random instances and comparison helpers
# ---------------------------------------------------------------------------


def random_graph(rng: np.random.Generator, num_states: int, num_pdfs: int, leaky_coeff: float = 0.0,
                 extra_arcs: int | None = None) -> DenominatorGraph:
    """Random valid acceptor: a ring for connectivity plus random extra arcs."""
    S, J = num_states, num_pdfs
    src = list(range(S))
    dst = [(s + 1) % S for s in range(S)]
    n_extra = rng.integers(0, S + 1) if extra_arcs is None else extra_arcs
    src += list(rng.integers(0, S, n_extra))
    dst += list(rng.integers(0, S, n_extra))
    pdf = rng.integers(0, J, len(src))
    lp = np.log(rng.uniform(0.1, 1.0, len(src)))
    initial = np.zeros(S)
    support = rng.choice(S, size=rng.integers(1, S + 1), replace=False)
    initial[support] = rng.dirichlet(np.ones(len(support)))
    final = np.zeros(S)
    support = rng.choice(S, size=rng.integers(1, S + 1), replace=False)
    final[support] = rng.uniform(0.1, 1.0, len(support))
    g = DenominatorGraph(S, J, src, dst, pdf, lp, initial, final, leaky_coeff)
    g.validate()
    return g


def random_supervision(rng: np.random.Generator, num_frames: int, num_pdfs: int,
                       max_states: int = 3, weighted: bool = True) -> Supervision:
    """Random layered acceptor containing at least one complete path."""
    K = int(rng.integers(1, max_states + 1))
    spine = rng.integers(0, K, num_frames + 1)
    frames = []
    for t in range(num_frames):
        n = int(rng.integers(0, 3))
        s = np.concatenate([[spine[t]], rng.integers(0, K, n)])
        d = np.concatenate([[spine[t + 1]], rng.integers(0, K, n)])
        j = rng.integers(0, num_pdfs, n + 1)
        w = rng.uniform(-1.0, 0.0, n + 1) if weighted else np.zeros(n + 1)
        frames.append((s, d, j, w))
    finals = np.unique(np.concatenate([[spine[-1]], rng.integers(0, K, 1)]))
    sup = Supervision("rand", num_frames, K, frames, [spine[0]], finals)
    sup.validate(num_pdfs)
    return sup


def random_instance(rng: np.random.Generator, leaky_coeff: float, max_states: int = 6, max_pdfs: int = 5,
                    max_frames: int = 6, path_budget: int = 20_000):
    """(den, sup, ll) with S <= max_states, J <= max_pdfs, T <= max_frames.

    ``T`` is lowered until the arc-sequence count stays within ``path_budget``.
    """
    S = int(rng.integers(1, max_states + 1))
    J = int(rng.integers(1, max_pdfs + 1))
    T = int(rng.integers(1, max_frames + 1))
    while True:
        den = random_graph(rng, S, J, leaky_coeff)
        while T > 1 and den.num_arcs ** T > path_budget:
            T -= 1
        if _has_path(den, T):
            break
    sup = random_supervision(rng, T, J)
    ll = rng.uniform(-2.0, 2.0, (T, J))
    return den, sup, ll


def _has_path(g: DenominatorGraph, T: int) -> bool:
    live = g.initial > 0
    for _ in range(T):
        nxt = np.zeros_like(live)
        nxt[g.dst[live[g.src]]] = True
        live = nxt
    return bool(np.any(live & (g.final > 0)))


def rel_error(x, ref, floor: float = 1e-3) -> float:
    """Max absolute deviation relative to the largest reference magnitude (floored)."""
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    return float(np.max(np.abs(x - ref)) / max(float(np.max(np.abs(ref))), floor))


def objective_error(x: float, ref: float) -> float:
    return abs(x - ref) / max(abs(ref), 1.0)


def compare_with_oracle(den, sup, ll, cfg: CriterionConfig, cap: int = DEFAULT_CAP):
    """Return (objective error, gradient error) of the production criterion vs the oracle."""
    from .criteria import compute_criterion

    den = den.with_leaky_coeff(cfg.leaky_coeff)
    out = compute_criterion(den, sup, ll, cfg)
    ref = oracle_criterion(enumerate_paths(den, len(ll), cap), enumerate_supervision(sup, cap), ll, cfg)
    return objective_error(out.total_objective, ref.objective), rel_error(out.grad, ref.grad)
