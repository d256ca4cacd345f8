"""Phone LM, HMM topology, denominator graph and numerator supervision.

All graph objects are plain containers of numpy arrays.  They are not
mutated after construction, so one instance can be shared freely between
workers.

Conventions used throughout the package:

* An arc ``src -> dst`` consumes exactly one frame and carries the pdf it
  emits.  Graphs produced by :func:`build_denominator_graph` label every arc
  with the pdf of its destination state.
* ``alpha(s, 0) = initial(s)`` is the state occupied *before* the first frame,
  a path of ``T`` frames takes ``T`` arcs, and the final weight of the last
  state closes the path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SILENCE = 0
START = "START"
END = "END"
_FMT = "%.17g"


class FormatError(ValueError):
    """Malformed or invariant-violating text file."""

    def __init__(self, msg: str, lineno: int | None = None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"line {lineno}: "
        elif where:
            where += " "
        super().__init__(where + msg)
        self.lineno = lineno


# ---------------------------------------------------------------------------
# Phone language model
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PhoneLm:
    """Interpolated phone bigram.

    ``probs`` has shape ``(V + 1, V + 1)``.  Rows ``0..V-1`` are phone
    histories and row ``V`` is the sentence-start history; columns ``0..V-1``
    are next phones and column ``V`` is end-of-sequence.
    """

    vocab_size: int
    probs: np.ndarray
    interpolation_weight: float
    order: int = 2

    @property
    def start_row(self) -> int:
        return self.vocab_size

    @property
    def end_col(self) -> int:
        return self.vocab_size

    def prob(self, hist, nxt) -> float:
        """P(nxt | hist); ``hist`` may be START and ``nxt`` may be END."""
        r = self.start_row if hist == START else int(hist)
        c = self.end_col if nxt == END else int(nxt)
        return float(self.probs[r, c])

    def validate(self) -> None:
        V = self.vocab_size
        if self.order != 2:
            raise ValueError(f"only bigram phone LMs are supported, got order {self.order}")
        if self.probs.shape != (V + 1, V + 1):
            raise ValueError(f"probability table has shape {self.probs.shape}, expected {(V + 1, V + 1)}")
        if not 0.0 <= self.interpolation_weight <= 1.0:
            raise ValueError("interpolation weight must lie in [0, 1]")
        if np.any(self.probs < 0) or not np.all(np.isfinite(self.probs)):
            raise ValueError("LM probabilities must be finite and non-negative")
        if self.interpolation_weight < 1.0 and np.any(self.probs <= 0):
            raise ValueError("LM probabilities must be positive when interpolated with a uniform floor")
        bad = np.flatnonzero(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9)
        if bad.size:
            raise ValueError(f"LM unnormalized for history row {int(bad[0])}")

    def equals(self, other: "PhoneLm") -> bool:
        return (
            self.vocab_size == other.vocab_size
            and self.order == other.order
            and self.interpolation_weight == other.interpolation_weight
            and np.array_equal(self.probs, other.probs)
        )


def estimate_phone_lm(phone_sequences, interpolation_weight: float, vocab_size: int | None = None) -> PhoneLm:
    """Estimate an interpolated bigram from phone-id sequences.

    Each history row is ``w * ML + (1 - w) * uniform`` where the uniform
    distribution covers all phones plus end-of-sequence.  Histories that are
    never observed fall back to the uniform row.
    """
    seqs = [list(map(int, s)) for s in phone_sequences]
    if not seqs:
        raise ValueError("cannot estimate a phone LM from an empty corpus")
    if not 0.0 <= interpolation_weight <= 1.0:
        raise ValueError("interpolation weight must lie in [0, 1]")
    max_id = max((max(s) for s in seqs if s), default=0)
    if vocab_size is None:
        vocab_size = max_id + 1
    V = vocab_size
    counts = np.zeros((V + 1, V + 1))
    for s in seqs:
        for p in s:
            if p < 0 or p >= V:
                raise ValueError(f"phone id {p} out of range for vocabulary of size {V}")
        hist = V
        for p in s:
            counts[hist, p] += 1
            hist = p
        counts[hist, V] += 1
    uniform = np.full(V + 1, 1.0 / (V + 1))
    probs = np.empty_like(counts)
    for h in range(V + 1):
        tot = counts[h].sum()
        ml = counts[h] / tot if tot > 0 else uniform
        row = interpolation_weight * ml + (1.0 - interpolation_weight) * uniform
        probs[h] = row / row.sum()
    lm = PhoneLm(V, probs, float(interpolation_weight))
    lm.validate()
    return lm


# ---------------------------------------------------------------------------
# HMM topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HmmTopology:
    """Left-to-right HMM per phone.

    ``self_loops[p][k]`` is the self-loop probability of state ``k`` of phone
    ``p``; the forward probability is its complement.  ``pdfs[p][k]`` is the
    emission label of that state.
    """

    self_loops: tuple
    pdfs: tuple

    def __post_init__(self):
        if len(self.self_loops) != len(self.pdfs):
            raise ValueError("self_loops and pdfs disagree on the number of phones")
        labels = []
        for p, (loops, pdfs) in enumerate(zip(self.self_loops, self.pdfs)):
            if len(loops) == 0 or len(loops) != len(pdfs):
                raise ValueError(f"phone {p}: inconsistent state count")
            for q in loops:
                if not 0.0 <= q < 1.0:
                    raise ValueError(f"phone {p}: self-loop probability {q} outside [0, 1)")
            labels.extend(pdfs)
        used = sorted(set(int(j) for j in labels))
        if used != list(range(len(used))):
            raise ValueError("pdf labels must be dense integers 0..J-1")

    @classmethod
    def standard(cls, num_phones: int, states_per_phone: int = 2, self_loop: float = 0.75) -> "HmmTopology":
        loops = tuple((self_loop,) * states_per_phone for _ in range(num_phones))
        pdfs = tuple(tuple(p * states_per_phone + k for k in range(states_per_phone)) for p in range(num_phones))
        return cls(loops, pdfs)

    @property
    def num_phones(self) -> int:
        return len(self.pdfs)

    @property
    def num_pdfs(self) -> int:
        return 1 + max(max(p) for p in self.pdfs)

    def num_states(self, phone: int) -> int:
        return len(self.pdfs[phone])

    def forward_prob(self, phone: int, state: int) -> float:
        return 1.0 - self.self_loops[phone][state]

    def offsets(self) -> np.ndarray:
        """Index of each phone's first state in the flattened state list."""
        sizes = [len(p) for p in self.pdfs]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    def state_table(self):
        """(phone, state index) for every flattened state."""
        return [(p, k) for p in range(self.num_phones) for k in range(self.num_states(p))]

    def silence_pdfs(self) -> frozenset:
        return frozenset(int(j) for j in self.pdfs[SILENCE])


def write_topology(topo: HmmTopology, path) -> None:
    lines = [f"TOPO {topo.num_phones}"]
    for p in range(topo.num_phones):
        for k in range(topo.num_states(p)):
            lines.append(f"S {p} {k} {_FMT % topo.self_loops[p][k]} {topo.pdfs[p][k]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_topology(path) -> HmmTopology:
    rows = {}
    n = None
    for lineno, fields in _records(path):
        try:
            if fields[0] == "TOPO":
                n = int(fields[1])
            elif fields[0] == "S":
                p, k = int(fields[1]), int(fields[2])
                rows.setdefault(p, {})[k] = (float(fields[3]), int(fields[4]))
            else:
                raise FormatError(f"unknown record {fields[0]!r}", lineno, path)
        except (IndexError, ValueError) as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"malformed line ({e})", lineno, path) from None
    if n is None:
        raise FormatError("missing TOPO header", None, path)
    if sorted(rows) != list(range(n)):
        raise FormatError("phones must be listed densely 0..N-1", None, path)
    loops, pdfs = [], []
    for p in range(n):
        ks = rows[p]
        if sorted(ks) != list(range(len(ks))):
            raise FormatError(f"phone {p}: states must be dense", None, path)
        loops.append(tuple(ks[k][0] for k in range(len(ks))))
        pdfs.append(tuple(ks[k][1] for k in range(len(ks))))
    return HmmTopology(tuple(loops), tuple(pdfs))


# ---------------------------------------------------------------------------
# Denominator graph
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DenominatorGraph:
    num_states: int
    num_pdfs: int
    src: np.ndarray
    dst: np.ndarray
    pdf: np.ndarray
    log_prob: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    leaky_coeff: float = 0.0
    _by_dst: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.pdf = np.asarray(self.pdf, dtype=np.int64)
        self.log_prob = np.asarray(self.log_prob, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.final = np.asarray(self.final, dtype=np.float64)
        self.leaky_coeff = float(self.leaky_coeff)

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    @property
    def weight(self) -> np.ndarray:
        return np.exp(self.log_prob)

    def arcs_by_dst(self) -> np.ndarray:
        """Arc indices sorted by destination state (stable)."""
        if self._by_dst is None:
            self._by_dst = np.argsort(self.dst, kind="stable")
        return self._by_dst

    def with_leaky_coeff(self, leaky_coeff: float) -> "DenominatorGraph":
        return DenominatorGraph(self.num_states, self.num_pdfs, self.src, self.dst, self.pdf,
                                self.log_prob, self.initial, self.final, leaky_coeff)

    def validate(self) -> None:
        S, J = self.num_states, self.num_pdfs
        n = self.num_arcs
        if S <= 0 or J <= 0:
            raise ValueError("graph needs at least one state and one pdf")
        if not (len(self.dst) == len(self.pdf) == len(self.log_prob) == n):
            raise ValueError("arc arrays have inconsistent lengths")
        if self.initial.shape != (S,) or self.final.shape != (S,):
            raise ValueError("initial/final vectors must have one entry per state")
        if self.leaky_coeff < 0 or not np.isfinite(self.leaky_coeff):
            raise ValueError("leaky coefficient must be a finite value >= 0")
        if n:
            if self.src.min() < 0 or self.src.max() >= S or self.dst.min() < 0 or self.dst.max() >= S:
                raise ValueError("arc state index out of range")
            if self.pdf.min() < 0 or self.pdf.max() >= J:
                raise ValueError("arc pdf label out of range")
            if not np.all(np.isfinite(self.log_prob)):
                raise ValueError("arc log-probabilities must be finite")
        if np.any(self.initial < 0) or not np.all(np.isfinite(self.initial)):
            raise ValueError("initial probabilities must be non-negative")
        if abs(self.initial.sum() - 1.0) > 1e-9:
            raise ValueError("initial probabilities unnormalized")
        if np.any(self.final < 0) or not np.all(np.isfinite(self.final)):
            raise ValueError("final probabilities must be non-negative")
        fwd = _reachable(self.initial > 0, self.src, self.dst)
        bwd = _reachable(self.final > 0, self.dst, self.src)
        if not np.any(fwd & bwd) or n == 0:
            raise ValueError("no path to final")
        if not fwd.all():
            raise ValueError(f"state {int(np.flatnonzero(~fwd)[0])} unreachable from the initial states")
        if not bwd.all():
            raise ValueError(f"state {int(np.flatnonzero(~bwd)[0])} cannot reach a final state")

    def equals(self, other: "DenominatorGraph") -> bool:
        return (
            self.num_states == other.num_states
            and self.num_pdfs == other.num_pdfs
            and self.leaky_coeff == other.leaky_coeff
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("src", "dst", "pdf", "log_prob", "initial", "final"))
        )


def _reachable(seed: np.ndarray, frm: np.ndarray, to: np.ndarray) -> np.ndarray:
    seen = seed.copy()
    while True:
        nxt = seen.copy()
        nxt[to[seen[frm]]] = True
        if np.array_equal(nxt, seen):
            return seen
        seen = nxt


def build_denominator_graph(lm: PhoneLm, topo: HmmTopology, leaky_coeff: float = 0.0) -> DenominatorGraph:
    """Expand a phone bigram through the HMM topology into a cyclic acceptor.

    Intra-phone arcs (self-loops first, then forward arcs) come before the
    cross-phone arcs in the arc list; the decoder relies on that order to
    tell a one-state phone's self-loop from its re-entry arc.
    """
    if lm.vocab_size != topo.num_phones:
        raise ValueError(f"vocabulary mismatch: LM has {lm.vocab_size} phones, topology has {topo.num_phones}")
    lm.validate()
    off = topo.offsets()
    S = int(off[-1])
    state_pdf = [topo.pdfs[p][k] for p, k in topo.state_table()]
    src, dst, pdf, lp = [], [], [], []

    def add(a, b, w):
        if w > 0:
            src.append(a)
            dst.append(b)
            pdf.append(state_pdf[b])
            lp.append(np.log(w))

    for p in range(topo.num_phones):
        for k in range(topo.num_states(p)):
            s = off[p] + k
            add(s, s, topo.self_loops[p][k])
            if k + 1 < topo.num_states(p):
                add(s, s + 1, topo.forward_prob(p, k))
    final = np.zeros(S)
    for p in range(topo.num_phones):
        last = off[p + 1] - 1
        fwd = topo.forward_prob(p, topo.num_states(p) - 1)
        for q in range(topo.num_phones):
            add(last, off[q], fwd * lm.prob(p, q))
        final[last] = fwd * lm.prob(p, END)
    initial = np.zeros(S)
    start = np.array([lm.prob(START, q) for q in range(topo.num_phones)])
    initial[off[:-1]] = start / start.sum()
    g = DenominatorGraph(S, topo.num_pdfs, src, dst, pdf, lp, initial, final, leaky_coeff)
    g.validate()
    return g


def write_denominator_graph(g: DenominatorGraph, path) -> None:
    lines = [f"DEN {g.num_states} {g.num_pdfs} {_FMT % g.leaky_coeff}"]
    lines += [f"I {s} {_FMT % g.initial[s]}" for s in np.flatnonzero(g.initial)]
    lines += [f"A {a} {b} {j} {_FMT % w}" for a, b, j, w in zip(g.src, g.dst, g.pdf, g.log_prob)]
    lines += [f"F {s} {_FMT % g.final[s]}" for s in np.flatnonzero(g.final)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_denominator_graph(path) -> DenominatorGraph:
    header = None
    init, fin, arcs = {}, {}, []
    for lineno, f in _records(path):
        try:
            tag = f[0]
            if tag == "DEN":
                if header is not None:
                    raise FormatError("duplicate DEN header", lineno, path)
                header = (int(f[1]), int(f[2]), float(f[3]))
                continue
            if header is None:
                raise FormatError("record before DEN header", lineno, path)
            S, J, _ = header
            if tag == "I":
                s = _state(f[1], S, lineno, path)
                init[s] = float(f[2])
            elif tag == "F":
                s = _state(f[1], S, lineno, path)
                fin[s] = float(f[2])
            elif tag == "A":
                a, b = _state(f[1], S, lineno, path), _state(f[2], S, lineno, path)
                j = int(f[3])
                if not 0 <= j < J:
                    raise FormatError(f"pdf {j} out of range", lineno, path)
                w = float(f[4])
                if not np.isfinite(w):
                    raise FormatError("arc log-probability not finite", lineno, path)
                arcs.append((a, b, j, w))
            else:
                raise FormatError(f"unknown record {tag!r}", lineno, path)
            if len(f) != {"I": 3, "F": 3, "A": 5}[tag]:
                raise FormatError(f"wrong field count for {tag} record", lineno, path)
        except (IndexError, ValueError) as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"malformed line ({e})", lineno, path) from None
    if header is None:
        raise FormatError("missing DEN header", None, path)
    S, J, lam = header
    initial = np.zeros(S)
    final = np.zeros(S)
    for s, v in init.items():
        initial[s] = v
    for s, v in fin.items():
        final[s] = v
    cols = list(zip(*arcs)) if arcs else [[], [], [], []]
    g = DenominatorGraph(S, J, cols[0], cols[1], cols[2], cols[3], initial, final, lam)
    try:
        g.validate()
    except ValueError as e:
        raise FormatError(str(e), None, path) from None
    return g


# ---------------------------------------------------------------------------
# Alignments and numerator supervision
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Alignment:
    utt_id: str
    phones: np.ndarray
    states: np.ndarray
    pdfs: np.ndarray

    def __post_init__(self):
        self.phones = np.asarray(self.phones, dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.int64)
        self.pdfs = np.asarray(self.pdfs, dtype=np.int64)

    @property
    def num_frames(self) -> int:
        return len(self.phones)

    def validate(self, topo: HmmTopology) -> None:
        T = self.num_frames
        if T == 0 or not (len(self.states) == len(self.pdfs) == T):
            raise ValueError(f"{self.utt_id}: alignment is empty or ragged")
        for t in range(T):
            p, k = int(self.phones[t]), int(self.states[t])
            if not 0 <= p < topo.num_phones or not 0 <= k < topo.num_states(p):
                raise ValueError(f"{self.utt_id}: frame {t} has invalid phone/state {p}:{k}")
            if topo.pdfs[p][k] != self.pdfs[t]:
                raise ValueError(f"{self.utt_id}: frame {t} pdf {self.pdfs[t]} disagrees with topology")
        for t in range(1, T):
            pp, pk = int(self.phones[t - 1]), int(self.states[t - 1])
            p, k = int(self.phones[t]), int(self.states[t])
            same = p == pp and k in (pk, pk + 1)
            restart = k == 0 and pk == topo.num_states(pp) - 1
            if not (same or restart):
                raise ValueError(f"{self.utt_id}: illegal state transition at frame {t}")
        if self.states[0] != 0 or self.states[-1] != topo.num_states(int(self.phones[-1])) - 1:
            raise ValueError(f"{self.utt_id}: alignment must start and end on phone boundaries")

    def phone_sequence(self, topo: HmmTopology) -> list:
        return [p for p, _, _ in phone_segments(self, topo)]

    def equals(self, other: "Alignment") -> bool:
        return self.utt_id == other.utt_id and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("phones", "states", "pdfs"))


def phone_segments(ali: Alignment, topo: HmmTopology):
    """(phone, first frame, last frame) runs, 0-based inclusive."""
    out = []
    start = 0
    T = ali.num_frames
    for t in range(1, T + 1):
        if t == T or (ali.states[t] == 0 and ali.states[t - 1] == topo.num_states(int(ali.phones[t - 1])) - 1):
            out.append((int(ali.phones[start]), start, t - 1))
            start = t
    return out


def state_segments(ali: Alignment, topo: HmmTopology):
    """(pdf, last frame) for each run of one HMM state, 0-based."""
    out = []
    T = ali.num_frames
    for t in range(T):
        # a repeated single-state phone is indistinguishable from one long run
        if t == T - 1 or ali.states[t + 1] != ali.states[t] or ali.phones[t + 1] != ali.phones[t]:
            out.append((int(ali.pdfs[t]), t))
    return out


def write_alignments(alis, path) -> None:
    lines = []
    for a in alis:
        toks = [f"{p}:{k}:{j}" for p, k, j in zip(a.phones, a.states, a.pdfs)]
        lines.append(" ".join([a.utt_id] + toks))
    Path(path).write_text("\n".join(lines) + "\n")


def read_alignments(path, topo: HmmTopology | None = None) -> list:
    out = []
    for lineno, f in _records(path):
        try:
            triples = [tuple(int(x) for x in tok.split(":")) for tok in f[1:]]
            if any(len(tr) != 3 for tr in triples):
                raise ValueError("expected phone:state:pdf tokens")
            if not triples:
                raise ValueError("utterance has no frames")
            ph, st, pd = zip(*triples)
            ali = Alignment(f[0], ph, st, pd)
            if topo is not None:
                ali.validate(topo)
        except ValueError as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(str(e), lineno, path) from None
        out.append(ali)
    return out


@dataclass(eq=False)
class Supervision:
    """Time-layered acceptor.

    ``frames[t]`` holds the arcs consuming frame ``t`` (0-based) as parallel
    arrays ``(src, dst, pdf, log_prob)``; sources live in layer ``t`` and
    destinations in layer ``t + 1``.  State ids are shared across layers.
    Weights are all zero (probability one) for alignment-derived supervision.
    """

    utt_id: str
    num_frames: int
    num_states: int
    frames: list
    initial: np.ndarray
    final: np.ndarray

    def __post_init__(self):
        self.initial = np.unique(np.asarray(self.initial, dtype=np.int64))
        self.final = np.unique(np.asarray(self.final, dtype=np.int64))
        self.frames = [tuple(np.asarray(x, dtype=dt) for x, dt in zip(fr, (np.int64, np.int64, np.int64, np.float64)))
                       for fr in self.frames]

    def validate(self, num_pdfs: int | None = None) -> None:
        if self.num_frames <= 0 or len(self.frames) != self.num_frames:
            raise ValueError(f"{self.utt_id}: supervision frame count mismatch")
        K = self.num_states
        for arr in (self.initial, self.final):
            if arr.size and (arr.min() < 0 or arr.max() >= K):
                raise ValueError(f"{self.utt_id}: state id out of range")
        for t, (s, d, j, w) in enumerate(self.frames):
            if not (len(s) == len(d) == len(j) == len(w)):
                raise ValueError(f"{self.utt_id}: frame {t} arc arrays ragged")
            if len(s) and (min(s.min(), d.min()) < 0 or max(s.max(), d.max()) >= K):
                raise ValueError(f"{self.utt_id}: frame {t} state id out of range")
            if num_pdfs is not None and len(j) and (j.min() < 0 or j.max() >= num_pdfs):
                raise ValueError(f"{self.utt_id}: frame {t} pdf out of range")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"{self.utt_id}: frame {t} has non-finite weights")
        live = np.zeros(K, dtype=bool)
        live[self.initial] = True
        for s, d, _, _ in self.frames:
            nxt = np.zeros(K, dtype=bool)
            nxt[d[live[s]]] = True
            live = nxt
        if not live[self.final].any():
            raise ValueError(f"{self.utt_id}: supervision accepts no complete path")

    def equals(self, other: "Supervision") -> bool:
        return (
            self.utt_id == other.utt_id
            and self.num_frames == other.num_frames
            and self.num_states == other.num_states
            and np.array_equal(self.initial, other.initial)
            and np.array_equal(self.final, other.final)
            and all(all(np.array_equal(x, y) for x, y in zip(a, b)) for a, b in zip(self.frames, other.frames))
        )


def trim_supervision(sup: Supervision) -> Supervision:
    """Drop arcs that lie on no complete initial-to-final path."""
    K, T = sup.num_states, sup.num_frames
    fwd = [np.zeros(K, dtype=bool) for _ in range(T + 1)]
    fwd[0][sup.initial] = True
    for t, (s, d, _, _) in enumerate(sup.frames):
        fwd[t + 1][d[fwd[t][s]]] = True
    bwd = np.zeros(K, dtype=bool)
    bwd[sup.final] = True
    frames = [None] * T
    for t in range(T - 1, -1, -1):
        s, d, j, w = sup.frames[t]
        keep = fwd[t][s] & bwd[d]
        frames[t] = (s[keep], d[keep], j[keep], w[keep])
        bwd = np.zeros(K, dtype=bool)
        bwd[s[keep]] = True
    initial = sup.initial[bwd[sup.initial]]
    final = sup.final[fwd[T][sup.final]]
    return Supervision(sup.utt_id, T, K, frames, initial, final)


def build_numerator_graph(ali: Alignment, tolerance: int, topo: HmmTopology) -> Supervision:
    """Supervision accepting the alignment with every state boundary shifted by up to ``tolerance`` frames.

    Phone boundaries are a subset of the state boundaries, so each phone's start
    and end move by at most ``tolerance``.  Boundaries are clamped so every
    state run keeps at least one frame (each phone keeps its minimum duration);
    ``tolerance == 0`` yields a single path.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    ali.validate(topo)
    segs = state_segments(ali, topo)
    T = ali.num_frames
    K = len(segs)
    # window[k] = allowed 1-based last frame of segment k (1..K-1)
    lo = np.zeros(K + 1, dtype=int)
    hi = np.zeros(K + 1, dtype=int)
    for k in range(1, K):
        end = segs[k - 1][1] + 1
        lo[k] = max(end - tolerance, k)
        hi[k] = min(end + tolerance, T - (K - k))
    frames = []
    for t in range(1, T + 1):
        s, d, j = [], [], []
        if t == 1:
            s.append(0), d.append(1), j.append(segs[0][0])
        else:
            for k in range(1, K + 1):
                s.append(k), d.append(k), j.append(segs[k - 1][0])
                if k < K and lo[k] <= t - 1 <= hi[k]:
                    s.append(k), d.append(k + 1), j.append(segs[k][0])
        frames.append((s, d, j, np.zeros(len(s))))
    sup = trim_supervision(Supervision(ali.utt_id, T, K + 1, frames, [0], [K]))
    sup.validate(topo.num_pdfs)
    return sup


def supervision_from_graph(g: DenominatorGraph, num_frames: int, utt_id: str = "unrolled") -> Supervision:
    """Unroll a denominator graph (without leak) into a weighted supervision over ``num_frames``.

    Initial and final weights are folded into the first and last frame's
    arcs, so every accepted path carries the same weight as in ``g``.
    """
    T = num_frames
    frames = []
    for t in range(T):
        s = g.src + 1
        d = g.dst + 1
        j = g.pdf
        w = g.log_prob.copy()
        keep = np.ones(len(s), dtype=bool)
        if t == 0:
            keep &= g.initial[g.src] > 0
            s = np.zeros_like(s)
            with np.errstate(divide="ignore"):
                w = w + np.log(g.initial[g.src])
        if t == T - 1:
            keep &= g.final[g.dst] > 0
            with np.errstate(divide="ignore"):
                w = w + np.log(g.final[g.dst])
        frames.append((s[keep], d[keep], j[keep], w[keep]))
    sup = Supervision(utt_id, T, g.num_states + 1, frames, [0], np.flatnonzero(g.final > 0) + 1)
    return trim_supervision(sup)


def write_supervision(sup: Supervision, path) -> None:
    weighted = any(np.any(w != 0) for _, _, _, w in sup.frames)
    lines = [f"SUP {sup.utt_id} {sup.num_frames}"]
    lines += [f"I {s}" for s in sup.initial]
    lines += [f"F {s}" for s in sup.final]
    for t, (s, d, j, w) in enumerate(sup.frames):
        lines.append(f"T {t}")
        for a, b, p, x in zip(s, d, j, w):
            lines.append(f"A {a} {b} {p} {_FMT % x}" if weighted else f"A {a} {b} {p}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_supervision(path, num_pdfs: int | None = None) -> Supervision:
    utt, T = None, None
    init, fin = [], []
    frames = None
    cur = None
    for lineno, f in _records(path):
        try:
            tag = f[0]
            if tag == "SUP":
                utt, T = f[1], int(f[2])
                frames = [([], [], [], []) for _ in range(T)]
                continue
            if frames is None:
                raise FormatError("record before SUP header", lineno, path)
            if tag == "I":
                init.append(int(f[1]))
            elif tag == "F":
                fin.append(int(f[1]))
            elif tag == "T":
                cur = int(f[1])
                if not 0 <= cur < T:
                    raise FormatError(f"frame {cur} out of range", lineno, path)
            elif tag == "A":
                if cur is None:
                    raise FormatError("arc before first T record", lineno, path)
                if len(f) not in (4, 5):
                    raise FormatError("wrong field count for A record", lineno, path)
                vals = (int(f[1]), int(f[2]), int(f[3]), float(f[4]) if len(f) == 5 else 0.0)
                if min(vals[:3]) < 0:
                    raise FormatError("negative id", lineno, path)
                for lst, v in zip(frames[cur], vals):
                    lst.append(v)
            else:
                raise FormatError(f"unknown record {tag!r}", lineno, path)
        except (IndexError, ValueError) as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"malformed line ({e})", lineno, path) from None
    if frames is None:
        raise FormatError("missing SUP header", None, path)
    ids = init + fin + [x for fr in frames for x in fr[0] + fr[1]]
    K = max(ids) + 1 if ids else 1
    sup = Supervision(utt, T, K, frames, init, fin)
    try:
        sup.validate(num_pdfs)
    except ValueError as e:
        raise FormatError(str(e), None, path) from None
    return sup


def write_phone_lm(lm: PhoneLm, path) -> None:
    V = lm.vocab_size
    lines = [f"LM {V} {lm.order} {_FMT % lm.interpolation_weight}"]
    for h in range(V + 1):
        hs = START if h == V else str(h)
        for n in range(V + 1):
            ns = END if n == V else str(n)
            lines.append(f"P {hs} {ns} {_FMT % lm.probs[h, n]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_phone_lm(path) -> PhoneLm:
    header = None
    probs = None
    for lineno, f in _records(path):
        try:
            if f[0] == "LM":
                header = (int(f[1]), int(f[2]), float(f[3]))
                probs = np.zeros((header[0] + 1, header[0] + 1))
            elif f[0] == "P":
                if probs is None:
                    raise FormatError("record before LM header", lineno, path)
                V = header[0]
                h = V if f[1] == START else int(f[1])
                n = V if f[2] == END else int(f[2])
                if not (0 <= h <= V and 0 <= n <= V):
                    raise FormatError("phone id out of range", lineno, path)
                probs[h, n] = float(f[3])
            else:
                raise FormatError(f"unknown record {f[0]!r}", lineno, path)
        except (IndexError, ValueError) as e:
            if isinstance(e, FormatError):
                raise
            raise FormatError(f"malformed line ({e})", lineno, path) from None
    if header is None:
        raise FormatError("missing LM header", None, path)
    lm = PhoneLm(header[0], probs, header[2], header[1])
    try:
        lm.validate()
    except ValueError as e:
        raise FormatError(str(e), None, path) from None
    return lm


def _state(tok, S, lineno, path) -> int:
    s = int(tok)
    if not 0 <= s < S:
        raise FormatError(f"state {s} out of range", lineno, path)
    return s


def _records(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            f = line.split()
            if f and not f[0].startswith("#"):
                yield lineno, f
