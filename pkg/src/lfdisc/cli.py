"""Command-line front end: ``lfdisc <subcommand> --help`` for details."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import graphs as G
from .acoustic_model import read_net
from .criteria import CriterionConfig
from .decoder import score
from .synth_data import GenerativeSpec, generate_corpus, load_corpus, read_transcriptions, write_corpus
from .trainer import CONFIG_KEYS, config_from_pairs, decode_corpus, default_jobs, read_config, train

FORMATS = """file formats:
  graph        DEN <S> <J> <lambda> / I <state> <prob> / A <src> <dst> <pdf> <logprob> / F <state> <prob>
  supervision  SUP <utt> <T> / I <state> / F <state> / T <t> then A <src> <dst> <pdf> [<logprob>]
  phone LM     LM <vocab> <order> <interp> / P <hist|START> <next|END> <prob>
  alignment    <utt> <phone:state:pdf> ...
  topology     TOPO <phones> / S <phone> <state> <self_loop> <pdf>
  matrix       MAT <rows> <cols> then one row per line
  model        NET <D> <J> <layers> / L <rows> <cols> <tanh|linear>, rows, bias line
"""


def _gen_data(a):
    spec = GenerativeSpec(num_phones=a.phones, feat_dim=a.dim, sigma=a.sigma, seed=a.seed)
    topo = spec.topology()
    out = Path(a.out)
    write_corpus(generate_corpus(spec, a.n_train, 1, "train"), out / "train", topo)
    write_corpus(generate_corpus(spec, a.n_test, 2, "test"), out / "test", topo)
    print(f"wrote {a.n_train} train and {a.n_test} test utterances to {out}")


def _estimate_lm(a):
    if a.data:
        utts, topo = load_corpus(a.data)
        seqs, vocab = [u.phones for u in utts], topo.num_phones
    else:
        seqs, vocab = list(read_transcriptions(a.text).values()), a.vocab
    lm = G.estimate_phone_lm(seqs, a.interp, vocab)
    G.write_phone_lm(lm, a.out)
    print(f"wrote bigram over {lm.vocab_size} phones to {a.out}")


def _build_graphs(a):
    topo = G.read_topology(a.topo)
    lm = G.read_phone_lm(a.lm)
    den = G.build_denominator_graph(lm, topo, a.leaky)
    G.write_denominator_graph(den, a.den_out)
    print(f"denominator graph: {den.num_states} states, {den.num_arcs} arcs -> {a.den_out}")
    if a.ali:
        out = Path(a.sup_dir)
        out.mkdir(parents=True, exist_ok=True)
        alis = G.read_alignments(a.ali, topo)
        for ali in alis:
            G.write_supervision(G.build_numerator_graph(ali, a.tolerance, topo), out / f"{ali.utt_id}.sup")
        print(f"wrote {len(alis)} supervisions (tolerance {a.tolerance}) to {out}")


def _train(a):
    pairs = read_config(a.config) if a.config else {}
    for key in CONFIG_KEYS:
        v = getattr(a, "cfg_" + key, None)
        if v is not None:
            pairs[key] = v
    if a.jobs is not None:
        pairs["jobs"] = str(a.jobs)
    else:
        pairs.setdefault("jobs", str(default_jobs()))
    cfg = config_from_pairs(pairs)
    if not cfg.data or not cfg.out:
        raise ValueError("training needs 'data' and 'out' (config keys or --data/--out)")
    t0 = time.time()
    res = train(cfg)
    G.write_denominator_graph(res.den, Path(cfg.out) / "den.fst")
    G.write_topology(res.topo, Path(cfg.out) / "topo.txt")
    objs = " ".join("%.4f" % v for v in res.epoch_objectives)
    print(f"{cfg.criterion}: objective/frame by epoch: {objs} ({time.time() - t0:.1f}s)")


def _decode(a):
    net = read_net(a.model)
    den = G.read_denominator_graph(a.den)
    topo = G.read_topology(a.topo)
    utts, _ = load_corpus(a.data)
    hyps = decode_corpus(net, utts, den, topo)
    Path(a.out).write_text("".join(f"{u} {' '.join(map(str, h))}\n" for u, h in hyps.items()))
    print(f"decoded {len(hyps)} utterances to {a.out}")


def _score(a):
    refs = read_transcriptions(a.ref)
    hyps = read_transcriptions(a.hyp)
    unknown = sorted(set(hyps) - set(refs))
    if unknown:
        raise ValueError(f"hypothesis for unknown utterance {unknown[0]}")
    report = score(hyps, refs).report()
    if a.out:
        Path(a.out).write_text(report)
    print(report, end="")


def _criterion_configs(a):
    out = []
    for kind in (a.criterion,) if a.criterion != "all" else ("mmi", "bmmi", "smbr"):
        b = a.b if kind == "bmmi" else 0.0
        mu = a.mu if kind == "smbr" else 1.0
        out.append(CriterionConfig(kind, b=b, silence_scale=mu, leaky_coeff=a.leaky,
                                   xent_smooth=a.xent_smooth, silence_pdfs={0}))
    return out


def _grad_check(a):
    from .gradcheck import criterion_grad_error, network_grad_error, random_net_instance

    rng = np.random.default_rng(a.seed)
    failed = False
    for cfg in _criterion_configs(a):
        worst = 0.0
        for _ in range(a.instances):
            net, feats, den, sup = random_net_instance(rng, cfg.leaky_coeff, a.dim, a.pdfs, a.frames)
            ll = rng.uniform(-2, 2, (sup.num_frames, den.num_pdfs))
            worst = max(worst, criterion_grad_error(den, sup, ll, cfg),
                        network_grad_error(net, feats, den, sup, cfg))
        ok = worst <= a.tol
        failed |= not ok
        print(f"{cfg.kind:5s} lambda={cfg.leaky_coeff:g} b={cfg.b:g} mu={cfg.silence_scale:g}: "
              f"max rel error {worst:.3e} {'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


def _oracle_check(a):
    from .oracle import compare_with_oracle, random_instance

    rng = np.random.default_rng(a.seed)
    instances = [random_instance(rng, (0.0, 0.1)[i % 2]) for i in range(a.instances)]
    failed = False
    for kind in ("mmi", "bmmi", "smbr"):
        eo = eg = 0.0
        for den, sup, ll in instances:
            cfg = CriterionConfig(kind, b=a.b if kind == "bmmi" else 0.0, silence_scale=a.mu if kind == "smbr" else 1.0,
                                  leaky_coeff=den.leaky_coeff, xent_smooth=0.0, silence_pdfs={0})
            o, g = compare_with_oracle(den, sup, ll, cfg)
            eo, eg = max(eo, o), max(eg, g)
        ok = eo <= a.obj_tol and eg <= a.grad_tol
        failed |= not ok
        print(f"{kind:5s} objective err {eo:.2e} gradient err {eg:.2e} {'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfdisc", description=__doc__, epilog=FORMATS,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def cmd(name, fn, help):
        s = sub.add_parser(name, help=help, description=help, epilog=FORMATS,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.set_defaults(fn=fn)
        s.add_argument("--jobs", type=int, default=None, help="worker processes (default: available CPUs)")
        return s

    s = cmd("gen-data", _gen_data, "generate a synthetic train/test corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=500)
    s.add_argument("--n-test", type=int, default=100)
    s.add_argument("--phones", type=int, default=5, help="non-silence phones")
    s.add_argument("--dim", type=int, default=10)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)

    s = cmd("estimate-lm", _estimate_lm, "estimate an interpolated phone bigram")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="corpus directory (uses its text.txt and topo.txt)")
    src.add_argument("--text", help="transcription file; needs --vocab")
    s.add_argument("--vocab", type=int, default=None)
    s.add_argument("--interp", type=float, default=0.9)
    s.add_argument("--out", required=True)

    s = cmd("build-graphs", _build_graphs, "build the denominator graph and numerator supervisions")
    s.add_argument("--lm", required=True)
    s.add_argument("--topo", required=True)
    s.add_argument("--lambda", dest="leaky", type=float, default=0.1)
    s.add_argument("--den-out", required=True)
    s.add_argument("--ali", help="alignment file; writes one supervision per utterance")
    s.add_argument("--tolerance", type=int, default=5)
    s.add_argument("--sup-dir", default="sup")

    s = cmd("train", _train, "train from scratch; flags override config-file keys")
    s.add_argument("--config")
    for key, name in CONFIG_KEYS.items():
        if key == "jobs":
            continue
        s.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, default=None,
                       help=f"config key '{key}'")

    s = cmd("grad-check", _grad_check, "finite-difference gradient suite on random small instances")
    s.add_argument("--criterion", choices=("mmi", "bmmi", "smbr", "all"), default="all")
    s.add_argument("--lambda", dest="leaky", type=float, default=0.1)
    s.add_argument("--b", type=float, default=0.1)
    s.add_argument("--mu", type=float, default=0.013)
    s.add_argument("--xent-smooth", type=float, default=0.0)
    s.add_argument("--instances", type=int, default=5)
    s.add_argument("--dim", type=int, default=3)
    s.add_argument("--pdfs", type=int, default=4)
    s.add_argument("--frames", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-5)

    s = cmd("oracle-check", _oracle_check, "compare criteria against brute-force enumeration")
    s.add_argument("--instances", type=int, default=100)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--b", type=float, default=0.2)
    s.add_argument("--mu", type=float, default=0.013)
    s.add_argument("--obj-tol", type=float, default=1e-9)
    s.add_argument("--grad-tol", type=float, default=1e-5)

    s = cmd("decode", _decode, "Viterbi-decode a corpus to phone hypotheses")
    s.add_argument("--model", required=True)
    s.add_argument("--den", required=True)
    s.add_argument("--topo", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = cmd("score", _score, "phone error rate of hypotheses against references")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args) or 0
    except (OSError, ValueError, RuntimeError) as e:
        print(f"lfdisc {args.cmd}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
