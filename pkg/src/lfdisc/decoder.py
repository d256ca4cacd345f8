"""Viterbi decoding through the denominator graph and phone error scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import DenominatorGraph, HmmTopology


class _ArcTable:
    """Incoming arcs per destination, ascending arc index, padded with -1."""

    def __init__(self, g: DenominatorGraph):
        S = g.num_states
        counts = np.bincount(g.dst, minlength=S)
        width = max(int(counts.max()), 1) if g.num_arcs else 1
        table = np.full((S, width), -1, dtype=np.int64)
        fill = np.zeros(S, dtype=np.int64)
        for a in range(g.num_arcs):
            d = g.dst[a]
            table[d, fill[d]] = a
            fill[d] += 1
        self.table = table
        self.mask = table >= 0


def viterbi(graph: DenominatorGraph, ll: np.ndarray, topo: HmmTopology | None = None):
    """Best complete path ignoring the leak.

    Returns ``(pdf sequence, phone sequence, log score)``; the phone sequence
    is None when no topology is given.  Ties go to the smallest arc index
    (and the smallest final state).
    """
    ll = np.asarray(ll, dtype=np.float64)
    T = ll.shape[0]
    if ll.ndim != 2 or ll.shape[1] != graph.num_pdfs:
        raise ValueError(f"log-likelihoods must be T x {graph.num_pdfs}, got {ll.shape}")
    tab = _ArcTable(graph)
    S = graph.num_states
    rows = np.arange(S)
    with np.errstate(divide="ignore"):
        delta = np.log(graph.initial)
        log_final = np.log(graph.final)
    back = np.zeros((T, S), dtype=np.int64)
    for t in range(T):
        cand = delta[graph.src] + graph.log_prob + ll[t, graph.pdf]
        padded = np.where(tab.mask, cand[tab.table], -np.inf)
        k = np.argmax(padded, axis=1)
        back[t] = tab.table[rows, k]
        delta = padded[rows, k]
    total = delta + log_final
    s = int(np.argmax(total))
    if not np.isfinite(total[s]):
        raise ValueError(f"no complete path of {T} frames through the graph")
    arcs = np.zeros(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        arcs[t] = back[t, s]
        s = graph.src[arcs[t]]
    pdfs = graph.pdf[arcs]
    phones = collapse_to_phones(graph, arcs, topo) if topo is not None else None
    return pdfs, phones, float(total.max())


def collapse_to_phones(graph: DenominatorGraph, arcs: np.ndarray, topo: HmmTopology) -> list:
    """Phone sequence of an arc path: a new phone starts on every cross-phone arc.

    Cross-phone arcs run from a phone-final state to a phone-initial state.
    For one-state phones the self-loop and the re-entry arc share endpoints;
    the self-loop is the lower-indexed of the two, as laid out by
    :func:`~lfdisc.graphs.build_denominator_graph`.
    """
    table = topo.state_table()
    if len(table) != graph.num_states:
        raise ValueError("topology does not match the graph's state count")
    phone_of = np.array([p for p, _ in table])
    index_of = np.array([k for _, k in table])
    last_of = np.array([topo.num_states(p) - 1 for p, _ in table])
    self_loop = {}
    for a in range(graph.num_arcs):
        s = int(graph.src[a])
        if s == graph.dst[a] and s not in self_loop:
            self_loop[s] = a
    out = []
    for t, a in enumerate(arcs):
        s, d = int(graph.src[a]), int(graph.dst[a])
        entry = index_of[s] == last_of[s] and index_of[d] == 0 and self_loop.get(s) != a
        if t == 0 or entry:
            out.append(int(phone_of[d]))
    return out


def phone_edit_distance(hyp, ref):
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    Returns ``(substitutions, insertions, deletions)``.  The traceback
    prefers the diagonal move (match or substitution), then insertion, then
    deletion.
    """
    n, m = len(hyp), len(ref)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]):
            s += hyp[i - 1] != ref[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            ins += 1
            i -= 1
        else:
            dels += 1
            j -= 1
    return int(s), ins, dels


@dataclass
class ErrorCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_len: int = 0

    def add(self, hyp, ref) -> None:
        s, i, d = phone_edit_distance(hyp, ref)
        self.substitutions += s
        self.insertions += i
        self.deletions += d
        self.ref_len += len(ref)

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def per(self) -> float:
        return self.errors / self.ref_len if self.ref_len else 0.0

    def report(self) -> str:
        return (f"{'S':>6} {'I':>6} {'D':>6} {'N':>6} {'PER%':>8}\n"
                f"{self.substitutions:>6} {self.insertions:>6} {self.deletions:>6} "
                f"{self.ref_len:>6} {100 * self.per:>8.2f}\n")


def score(hyps: dict, refs: dict) -> ErrorCounts:
    """Accumulate errors over utterances; missing hypotheses count as empty."""
    counts = ErrorCounts()
    for uid in sorted(refs):
        counts.add(hyps.get(uid, []), refs[uid])
    return counts
