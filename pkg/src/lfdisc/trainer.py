"""From-scratch sequence-discriminative training of the toy acoustic model."""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .acoustic_model import LrSchedule, SgdState, ToyNet, global_norm, net_backward, net_forward, sgd_step, write_net
from .criteria import CriterionConfig, compute_criterion
from .decoder import ErrorCounts, viterbi
from .forward_backward import write_matrix
from .graphs import (
    DenominatorGraph,
    HmmTopology,
    build_denominator_graph,
    build_numerator_graph,
    estimate_phone_lm,
    read_denominator_graph,
)
from .synth_data import load_corpus

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "objective_per_frame", "num_logprob", "den_logprob", "grad_norm", "lr")

# criterion-dependent defaults, filled in where the config leaves a value unset
_PER_CRITERION = {
    "mmi": dict(b=0.0, mu=1.0, tolerance=5, epochs=4),
    "bmmi": dict(b=0.1, mu=1.0, tolerance=5, epochs=4),
    "smbr": dict(b=0.0, mu=0.013, tolerance=0, epochs=12),
}
# The silence scale mu that keeps sMBR stable is task dependent; 0.013 worked on
# the default synthetic corpus but is not tuned for anything else.


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    criterion: str = "mmi"
    b: float | None = None
    mu: float | None = None
    leaky: float = 0.1
    xent_smooth: float = 0.025
    tolerance: int | None = None
    epochs: int | None = None
    lr_initial: float = 0.001
    lr_final: float = 0.0001
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 8
    seed: int = 0
    hidden: tuple = (64, 64)
    lm_interp: float = 0.9
    data: str = ""
    test_data: str = ""
    den_graph: str = ""
    out: str = ""
    jobs: int = 1

    def __post_init__(self):
        crit = self.criterion.lower()
        if crit not in _PER_CRITERION:
            raise ValueError(f"unknown criterion {self.criterion!r}; expected one of {', '.join(_PER_CRITERION)}")
        object.__setattr__(self, "criterion", crit)
        for k, v in _PER_CRITERION[crit].items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        if self.epochs < 0 or self.batch_size < 1 or self.tolerance < 0:
            raise ValueError("epochs, batch_size and tolerance must be non-negative (batch_size >= 1)")
        if self.lr_initial < 0 or self.lr_final < 0 or self.clip_norm <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid optimizer settings")
        self.criterion_config(frozenset())

    def criterion_config(self, silence_pdfs) -> CriterionConfig:
        return CriterionConfig(self.criterion, b=self.b, silence_scale=self.mu, leaky_coeff=self.leaky,
                               xent_smooth=self.xent_smooth, silence_pdfs=silence_pdfs)


# config-file key -> dataclass field
CONFIG_KEYS = {
    "criterion": "criterion", "b": "b", "mu": "mu", "lambda": "leaky", "xent_smooth": "xent_smooth",
    "tolerance": "tolerance", "epochs": "epochs", "lr_initial": "lr_initial", "lr_final": "lr_final",
    "momentum": "momentum", "clip_norm": "clip_norm", "batch_size": "batch_size", "seed": "seed",
    "hidden": "hidden", "lm_interp": "lm_interp", "data": "data", "test_data": "test_data",
    "den_graph": "den_graph", "out": "out", "jobs": "jobs",
}


def _convert(name: str, value: str):
    types = {f.name: f.type for f in fields(TrainConfig)}
    t = types[name]
    if name == "hidden":
        return tuple(int(x) for x in str(value).replace(",", " ").split())
    if "float" in t:
        return float(value)
    if "int" in t:
        return int(value)
    return str(value)


def config_from_pairs(pairs: dict, base: TrainConfig | None = None) -> TrainConfig:
    """Build a config from ``key -> string`` pairs, rejecting unknown keys."""
    kw = {}
    for k, v in pairs.items():
        if k not in CONFIG_KEYS:
            raise ValueError(f"invalid config key {k!r}; valid keys: {', '.join(sorted(CONFIG_KEYS))}")
        try:
            kw[CONFIG_KEYS[k]] = _convert(CONFIG_KEYS[k], v)
        except ValueError:
            raise ValueError(f"bad value {v!r} for config key {k!r}") from None
    if base is None:
        return TrainConfig(**kw)
    # unset per-criterion values are re-derived when the criterion changes
    merged = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    if "criterion" in kw and kw["criterion"].lower() != base.criterion:
        for k in _PER_CRITERION[base.criterion]:
            merged[k] = None
    merged.update(kw)
    return TrainConfig(**merged)


def read_config(path) -> dict:
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


# ---------------------------------------------------------------------------
# Per-utterance work (runs in worker processes when jobs > 1)
# ---------------------------------------------------------------------------

_CTX = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _evaluate(net: ToyNet, i: int, keep: bool):
    """(ll, activations, output); output is None when the criterion is not finite."""
    ll, acts = net_forward(net, _CTX["feats"][i], keep=True)
    if not np.all(np.isfinite(ll)):
        return ll, acts, None
    try:
        out = compute_criterion(_CTX["den"], _CTX["sups"][i], ll, _CTX["ccfg"])
    except FloatingPointError:
        return ll, acts, None
    if not np.isfinite(out.objective) or not np.all(np.isfinite(out.grad)):
        return ll, acts, None
    return ll, acts if keep else None, out


def _utt_gradient(net: ToyNet, i: int):
    ll, acts, out = _evaluate(net, i, True)
    if out is None:
        return i, None, None, ll
    return i, net_backward(net, _CTX["feats"][i], out.grad, acts), out, ll


def _utt_objective(net: ToyNet, i: int):
    ll, _, out = _evaluate(net, i, False)
    return i, out, ll


class _Runner:
    def __init__(self, ctx, jobs: int):
        self.jobs = jobs
        self.pool = None
        _init_worker(ctx)
        if jobs > 1:
            self.pool = ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(ctx,))

    def map(self, fn, net, idx):
        if self.pool is None:
            return [fn(net, i) for i in idx]
        return list(self.pool.map(fn, [net] * len(idx), idx))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


@dataclass
class TrainResult:
    net: ToyNet
    log_rows: list
    epoch_objectives: list
    den: DenominatorGraph
    topo: HmmTopology


def prepare_graphs(cfg: TrainConfig, utts, topo: HmmTopology) -> DenominatorGraph:
    if cfg.den_graph:
        den = read_denominator_graph(cfg.den_graph)
        if den.num_pdfs != topo.num_pdfs:
            raise ValueError(f"denominator graph has {den.num_pdfs} pdfs, topology {topo.num_pdfs}")
        return den.with_leaky_coeff(cfg.leaky)
    lm = estimate_phone_lm([u.phones for u in utts], cfg.lm_interp, topo.num_phones)
    return build_denominator_graph(lm, topo, cfg.leaky)


def train(cfg: TrainConfig, utts=None, topo: HmmTopology | None = None) -> TrainResult:
    """Train from a random initialization for a fixed number of epochs.

    Epoch 0 in the returned objectives is a pass over the training data with
    the initial model; epochs 1..E average the minibatch objectives seen
    while training.  No early stopping.
    """
    if utts is None:
        utts, topo = load_corpus(cfg.data)
    den = prepare_graphs(cfg, utts, topo)
    sups = [build_numerator_graph(u.alignment, cfg.tolerance, topo) for u in utts]
    feats = [u.features for u in utts]
    ccfg = cfg.criterion_config(topo.silence_pdfs())
    net = ToyNet.init(feats[0].shape[1], topo.num_pdfs, cfg.hidden, seed=cfg.seed)
    n_batches = -(-len(utts) // cfg.batch_size)
    sched = LrSchedule(cfg.lr_initial, cfg.lr_final, max(cfg.epochs * n_batches - 1, 1))
    state = SgdState(net)
    out_dir = Path(cfg.out) if cfg.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    total_frames = sum(len(f) for f in feats)

    runner = _Runner(dict(den=den, sups=sups, feats=feats, ccfg=ccfg), cfg.jobs)
    rows, epoch_obj = [], []
    try:
        outs = runner.map(_utt_objective, net, range(len(utts)))
        for i, o, ll in outs:
            if o is None:
                _dump(out_dir, utts[i].utt_id, ll)
                raise TrainingError(f"non-finite objective on utterance {utts[i].utt_id} (initial model)")
        epoch_obj.append(sum(o.objective for _, o, _ in outs) / total_frames)
        log.info("epoch 0 objective/frame %.6f", epoch_obj[0])
        it = 0
        for epoch in range(1, cfg.epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(utts))
            ep_obj, ep_frames = 0.0, 0
            for start in range(0, len(order), cfg.batch_size):
                idx = [int(i) for i in order[start:start + cfg.batch_size]]
                results = runner.map(_utt_gradient, net, idx)
                grads = None
                obj = num = dn = 0.0
                frames = 0
                for i, g, o, ll in results:
                    if g is None:
                        _dump(out_dir, utts[i].utt_id, ll)
                        raise TrainingError(f"non-finite objective on utterance {utts[i].utt_id} "
                                            f"(iteration {it}, epoch {epoch})")
                    grads = g if grads is None else [a + b for a, b in zip(grads, g)]
                    obj += o.objective
                    num += o.num_logprob
                    dn += o.den_logprob
                    frames += len(ll)
                lr = sched(it)
                norm = global_norm(grads)
                sgd_step(net, grads, lr, cfg.momentum, cfg.clip_norm, state)
                rows.append((it, obj / frames, num, dn, norm, lr))
                ep_obj += obj
                ep_frames += frames
                it += 1
            epoch_obj.append(ep_obj / ep_frames)
            log.info("epoch %d objective/frame %.6f", epoch, epoch_obj[-1])
            if out_dir is not None:
                write_net(net, out_dir / f"model.{epoch}.net")
    finally:
        runner.close()

    if out_dir is not None:
        write_net(net, out_dir / "final.net")
        write_log(rows, out_dir / "train_log.csv")
        with open(out_dir / "epochs.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "objective_per_frame"))
            w.writerows((e, "%.17g" % v) for e, v in enumerate(epoch_obj))
    return TrainResult(net, rows, epoch_obj, den, topo)


def _dump(out_dir, utt_id, ll):
    if out_dir is not None and ll is not None:
        write_matrix(ll, out_dir / f"diverged.{utt_id}.mat")


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for it, *vals in rows:
            w.writerow([it] + ["%.17g" % v for v in vals])


def decode_corpus(net: ToyNet, utts, den: DenominatorGraph, topo: HmmTopology) -> dict:
    return {u.utt_id: viterbi(den, net_forward(net, u.features), topo)[1] for u in utts}


def evaluate(net: ToyNet, utts, den: DenominatorGraph, topo: HmmTopology):
    """Phone error rate of Viterbi decodes; returns ``(ErrorCounts, hypotheses)``."""
    hyps = decode_corpus(net, utts, den, topo)
    counts = ErrorCounts()
    for u in utts:
        counts.add(hyps[u.utt_id], u.phones)
    return counts, hyps


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1
