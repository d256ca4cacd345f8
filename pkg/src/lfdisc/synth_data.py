"""Synthetic phone-recognition corpus with exact ground-truth alignments."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward_backward import read_matrix, write_matrix
from .graphs import SILENCE, Alignment, HmmTopology, read_alignments, read_topology, write_alignments, write_topology


@dataclass(frozen=True)
class GenerativeSpec:
    num_phones: int = 5            # excluding silence
    states_per_phone: int = 2
    self_loop: float = 0.75        # geometric durations, mean 4 frames per state
    feat_dim: int = 10
    sigma: float = 1.0
    separation: float = 2.5        # absolute; 2.5 sigma at the default sigma = 1
    min_frames: int = 20
    max_frames: int = 60
    end_prob: float = 0.15
    sil_start_prob: float = 0.5
    sil_end_prob: float = 0.5
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.num_phones + 1

    def topology(self) -> HmmTopology:
        return HmmTopology.standard(self.vocab_size, self.states_per_phone, self.self_loop)


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    alignment: Alignment
    phones: list = field(default_factory=list)


@dataclass
class TrueModel:
    """Parameters the corpus is sampled from."""

    start: np.ndarray        # (P,) over non-silence phones 1..P
    bigram: np.ndarray       # (P, P) next-phone given phone, conditioned on continuing
    means: np.ndarray        # (J, D)


def true_model(spec: GenerativeSpec) -> TrueModel:
    if spec.num_phones < 1 or spec.feat_dim < 1 or spec.sigma < 0:
        raise ValueError("degenerate generative spec")
    if not 0 < spec.end_prob < 1 or not 0 <= spec.self_loop < 1:
        raise ValueError("end and self-loop probabilities must lie in (0, 1)")
    if spec.min_frames > spec.max_frames or spec.max_frames < 2 * spec.states_per_phone:
        raise ValueError("utterance length range admits no utterance")
    rng = np.random.default_rng([spec.seed, 0])
    P = spec.num_phones
    start = rng.dirichlet(np.ones(P))
    bigram = rng.dirichlet(np.ones(P), size=P)
    J = spec.vocab_size * spec.states_per_phone
    if J > 2 ** spec.feat_dim:
        raise ValueError("too many pdfs for distinct sign-pattern means")
    # distinct +-1 patterns: every pair differs by ``separation`` in some coordinate.
    # Means do not depend on sigma, so sigma -> 0 is the separable limit.
    codes = rng.permutation(2 ** spec.feat_dim)[:J]
    bits = (codes[:, None] >> np.arange(spec.feat_dim)[None, :]) & 1
    means = (2.0 * bits - 1.0) * 0.5 * spec.separation
    return TrueModel(start, bigram, means)


def sample_phones(rng: np.random.Generator, spec: GenerativeSpec, model: TrueModel) -> list:
    P = spec.num_phones
    seq = [SILENCE] if rng.random() < spec.sil_start_prob else []
    p = 1 + int(rng.choice(P, p=model.start))
    seq.append(p)
    while rng.random() >= spec.end_prob:
        p = 1 + int(rng.choice(P, p=model.bigram[p - 1]))
        seq.append(p)
    if rng.random() < spec.sil_end_prob:
        seq.append(SILENCE)
    return seq


def sample_alignment(rng: np.random.Generator, spec: GenerativeSpec, model: TrueModel, utt_id: str) -> Alignment:
    """Rejection-sample phones and durations until the length is in range."""
    topo = spec.topology()
    while True:
        seq = sample_phones(rng, spec, model)
        phones, states, pdfs = [], [], []
        for p in seq:
            for k in range(spec.states_per_phone):
                d = int(rng.geometric(1.0 - spec.self_loop))
                phones += [p] * d
                states += [k] * d
                pdfs += [topo.pdfs[p][k]] * d
        if spec.min_frames <= len(phones) <= spec.max_frames:
            return Alignment(utt_id, phones, states, pdfs)


def generate_corpus(spec: GenerativeSpec, n_utts: int, stream: int = 1, prefix: str = "utt") -> list:
    """Deterministic given ``spec.seed`` and ``stream``; means are shared across streams."""
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    model = true_model(spec)
    rng = np.random.default_rng([spec.seed, stream])
    out = []
    topo = spec.topology()
    for i in range(n_utts):
        uid = f"{prefix}{i:05d}"
        ali = sample_alignment(rng, spec, model, uid)
        feats = model.means[ali.pdfs] + spec.sigma * rng.standard_normal((ali.num_frames, spec.feat_dim))
        out.append(Utterance(uid, feats, ali, ali.phone_sequence(topo)))
    return out


def write_corpus(utts, out_dir, topo: HmmTopology) -> None:
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    for u in utts:
        write_matrix(u.features, out / "feats" / f"{u.utt_id}.mat")
    write_alignments([u.alignment for u in utts], out / "ali.txt")
    (out / "text.txt").write_text("".join(f"{u.utt_id} {' '.join(map(str, u.phones))}\n" for u in utts))
    write_topology(topo, out / "topo.txt")


def read_transcriptions(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        f = line.split()
        if f:
            out[f[0]] = [int(x) for x in f[1:]]
    return out


def load_corpus(data_dir) -> tuple[list, HmmTopology]:
    d = Path(data_dir)
    topo = read_topology(d / "topo.txt")
    alis = read_alignments(d / "ali.txt", topo)
    text = read_transcriptions(d / "text.txt")
    utts = []
    for a in alis:
        feats = read_matrix(d / "feats" / f"{a.utt_id}.mat")
        if len(feats) != a.num_frames:
            raise ValueError(f"{a.utt_id}: {len(feats)} feature rows but {a.num_frames} aligned frames")
        utts.append(Utterance(a.utt_id, feats, a, text.get(a.utt_id, a.phone_sequence(topo))))
    return utts, topo
