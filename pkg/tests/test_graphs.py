import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfdisc import graphs as G
from lfdisc.forward_backward import forward
from lfdisc.oracle import enumerate_paths, enumerate_supervision


def _one_state_topo(n, self_loop=0.5):
    return G.HmmTopology(tuple((self_loop,) for _ in range(n)), tuple((p,) for p in range(n)))


def _ali(utt, topo, runs):
    """runs: list of (phone, [frames per state])."""
    ph, stt, pd = [], [], []
    for p, durs in runs:
        for k, d in enumerate(durs):
            ph += [p] * d
            stt += [k] * d
            pd += [topo.pdfs[p][k]] * d
    return G.Alignment(utt, ph, stt, pd)


def _accepted(sup):
    return {tuple(r) for r in enumerate_supervision(sup).pdfs.tolist()}


# -- phone LM -----------------------------------------------------------------


def test_lm_single_continuation():
    lm = G.estimate_phone_lm([[1, 2], [1, 2]], 1.0, vocab_size=3)
    assert lm.prob(1, 2) == 1.0
    assert lm.prob(2, G.END) == 1.0
    assert lm.prob(G.START, 1) == 1.0


def _counting_bigram(seqs, vocab, w, hist, nxt):
    # independent estimate: counts over (history, next) pairs with START/END tokens
    pairs = Counter()
    for s in seqs:
        toks = ["<s>"] + list(s) + ["</s>"]
        pairs.update(zip(toks, toks[1:]))
    tot = sum(c for (h, _), c in pairs.items() if h == hist)
    ml = pairs[(hist, nxt)] / tot if tot else 1.0 / (vocab + 1)
    return w * ml + (1 - w) / (vocab + 1)


def test_lm_interpolation_hand_value():
    seqs = [[1], [2]]
    lm = G.estimate_phone_lm(seqs, 0.5, vocab_size=3)
    assert lm.prob(G.START, 1) == pytest.approx(0.375, abs=1e-15)
    for h, n in itertools.product([G.START, 0, 1, 2], [0, 1, 2, G.END]):
        ref = _counting_bigram(seqs, 3, 0.5, "<s>" if h == G.START else h, "</s>" if n == G.END else n)
        assert lm.prob(h, n) == pytest.approx(ref, abs=1e-15)


def test_lm_zero_weight_uniform():
    lm = G.estimate_phone_lm([[0, 1, 2, 2, 1]], 0.0, vocab_size=3)
    np.testing.assert_allclose(lm.probs, 0.25, atol=1e-15)


@given(st.lists(st.lists(st.integers(0, 4), min_size=1, max_size=8), min_size=1, max_size=6),
       st.floats(0.0, 0.999))
def test_lm_rows_normalized_and_positive(seqs, w):
    lm = G.estimate_phone_lm(seqs, w, vocab_size=5)
    np.testing.assert_allclose(lm.probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(lm.probs > 0)


def test_lm_errors():
    with pytest.raises(ValueError, match="empty"):
        G.estimate_phone_lm([], 0.5)
    with pytest.raises(ValueError, match="out of range"):
        G.estimate_phone_lm([[0, 3]], 0.5, vocab_size=3)


# -- denominator graph --------------------------------------------------------


def test_one_phone_one_state_graph():
    topo = _one_state_topo(1, 0.5)
    lm = G.estimate_phone_lm([[0, 0], [0]], 0.8, vocab_size=1)
    g = G.build_denominator_graph(lm, topo)
    assert g.num_states == 1
    w = dict(zip(range(g.num_arcs), g.weight))
    assert g.num_arcs == 2
    np.testing.assert_allclose(sorted(w.values()), sorted([0.5, 0.5 * lm.prob(0, 0)]), rtol=1e-15)
    assert g.final[0] == pytest.approx(0.5 * lm.prob(0, G.END), rel=1e-15)
    assert g.initial[0] == 1.0


def test_two_phone_graph_path_sums_equal_phone_sequence_probability():
    # zero self-loop: the state occupied before frame 1 emits nothing, every
    # other state emits once, so 2n - 1 frames spell one phone sequence of length n
    topo = G.HmmTopology.standard(2, 2, self_loop=0.0)
    lm = G.estimate_phone_lm([[0, 1, 1], [1, 0], [0]], 0.7, vocab_size=2)
    g = G.build_denominator_graph(lm, topo)
    assert g.num_states == 4
    p_end_start = lm.prob(G.START, G.END)
    for n in (1, 2, 3):
        enum = enumerate_paths(g, 2 * n - 1)
        mass = Counter()
        for s0, states, lw in zip(enum.src[:, 0].tolist(), enum.dst.tolist(), enum.log_weight):
            full = [s0] + states
            mass[tuple(s // 2 for s in full[0::2])] += np.exp(lw)
        seqs = list(itertools.product([0, 1], repeat=n))
        assert set(mass) == set(seqs)
        for seq in seqs:
            ref = lm.prob(G.START, seq[0]) / (1 - p_end_start)
            for a, b in zip(seq, seq[1:]):
                ref *= lm.prob(a, b)
            ref *= lm.prob(seq[-1], G.END)
            assert mass[seq] == pytest.approx(ref, rel=1e-12)


def test_leaky_coeff_does_not_change_structure():
    topo = G.HmmTopology.standard(3)
    lm = G.estimate_phone_lm([[0, 1, 2, 0]], 0.9, vocab_size=3)
    a = G.build_denominator_graph(lm, topo, 0.0)
    b = G.build_denominator_graph(lm, topo, 0.1)
    assert b.leaky_coeff == 0.1
    assert a.equals(b.with_leaky_coeff(0.0))


@pytest.mark.parametrize("phones,states,loop", [(2, 2, 0.75), (3, 2, 0.5), (2, 3, 0.3), (3, 1, 0.6)])
def test_generative_mass_bounded_and_converging(phones, states, loop):
    rng = np.random.default_rng(phones * 10 + states)
    topo = G.HmmTopology.standard(phones, states, loop)
    lm = G.estimate_phone_lm([list(rng.integers(0, phones, 4)) for _ in range(5)], 0.8, phones)
    g = G.build_denominator_graph(lm, topo)
    # a one-state first phone can be left before emitting, giving zero-frame paths
    cum = float(g.initial @ g.final)
    for T in range(1, 9):
        enum = enumerate_paths(g, T)
        m = float(np.exp(enum.log_weight).sum())
        ref = np.exp(forward(g, np.zeros((T, g.num_pdfs))).total_logprob) if m > 0 else 0.0
        assert m == pytest.approx(ref, rel=1e-12)
        cum += m
        assert cum <= 1 + 1e-12
    # longer horizons through the recursion: the cumulative mass tends to one
    masses = [float(g.initial @ g.final)]
    masses += [np.exp(forward(g, np.zeros((T, g.num_pdfs))).total_logprob) if T >= states - 1 else 0.0
               for T in range(1, 400)]
    assert np.all(np.cumsum(masses) <= 1 + 1e-9)
    assert np.sum(masses) > 0.999


def test_graph_validation_errors(tmp_path):
    g = G.build_denominator_graph(G.estimate_phone_lm([[0, 1]], 0.9, 2), G.HmmTopology.standard(2))
    path = tmp_path / "den.fst"
    G.write_denominator_graph(g, path)
    text = path.read_text().splitlines()
    bad = [l.replace(l.split()[2], "0.9") if l.startswith("I ") else l for l in text]
    (tmp_path / "bad.fst").write_text("\n".join(bad) + "\n")
    with pytest.raises(G.FormatError, match="initial probabilities unnormalized"):
        G.read_denominator_graph(tmp_path / "bad.fst")
    (tmp_path / "noarcs.fst").write_text("\n".join(l for l in text if not l.startswith("A ")) + "\n")
    with pytest.raises(G.FormatError, match="no path to final"):
        G.read_denominator_graph(tmp_path / "noarcs.fst")
    (tmp_path / "junk.fst").write_text(text[0] + "\nA 0 1\n")
    with pytest.raises(G.FormatError, match="line 2"):
        G.read_denominator_graph(tmp_path / "junk.fst")


def test_vocabulary_mismatch():
    lm = G.estimate_phone_lm([[0, 1]], 0.9, 2)
    with pytest.raises(ValueError, match="vocabulary mismatch"):
        G.build_denominator_graph(lm, G.HmmTopology.standard(3))


# -- numerator supervision ----------------------------------------------------


def test_zero_tolerance_single_path():
    topo = G.HmmTopology.standard(2)
    ali = _ali("u", topo, [(1, [2, 1])])
    sup = G.build_numerator_graph(ali, 0, topo)
    enum = enumerate_supervision(sup)
    assert enum.num_paths == 1
    assert enum.pdfs[0].tolist() == [2, 2, 3]


def test_tolerance_one_gives_three_strings():
    topo = _one_state_topo(2)
    ali = _ali("u", topo, [(0, [5]), (1, [5])])
    sup = G.build_numerator_graph(ali, 1, topo)
    got = _accepted(sup)
    ref = {tuple([0] * b + [1] * (10 - b)) for b in (4, 5, 6)}
    assert got == ref


def test_tolerance_clamps_to_minimum_duration():
    topo = G.HmmTopology.standard(3)
    ali = _ali("u", topo, [(1, [1, 1]), (2, [1, 2])])
    for tau in range(0, 6):
        for seq in _accepted(G.build_numerator_graph(ali, tau, topo)):
            # every state keeps at least one frame and the order is preserved
            runs = [k for k, _ in itertools.groupby(seq)]
            assert runs == [2, 3, 4, 5]


@st.composite
def alignments(draw):
    n_phones = draw(st.integers(1, 4))
    spp = draw(st.integers(1, 2))
    topo = G.HmmTopology.standard(n_phones, spp, 0.5)
    runs = [(draw(st.integers(0, n_phones - 1)), [draw(st.integers(1, 3)) for _ in range(spp)])
            for _ in range(draw(st.integers(1, 3)))]
    return topo, _ali("u", topo, runs)


@settings(max_examples=40, deadline=None)
@given(alignments(), st.integers(0, 3))
def test_tolerance_monotone(case, tau):
    topo, ali = case
    small = _accepted(G.build_numerator_graph(ali, tau, topo))
    big = _accepted(G.build_numerator_graph(ali, tau + 1, topo))
    assert tuple(ali.pdfs.tolist()) in small
    assert small <= big


def test_alignment_validation():
    topo = G.HmmTopology.standard(2)
    with pytest.raises(ValueError, match="illegal state transition"):
        G.Alignment("u", [0, 0, 1, 1], [0, 1, 1, 0], [0, 1, 3, 2]).validate(topo)
    with pytest.raises(ValueError, match="disagrees"):
        G.Alignment("u", [0, 0], [0, 1], [0, 0]).validate(topo)


# -- serialization ------------------------------------------------------------


def test_round_trips(tmp_path):
    topo = G.HmmTopology(((0.5, 0.25), (0.1,), (0.75, 0.75, 0.2)), ((0, 1), (2,), (3, 4, 5)))
    G.write_topology(topo, tmp_path / "topo")
    assert G.read_topology(tmp_path / "topo") == topo

    lm = G.estimate_phone_lm([[0, 1, 2], [2, 2, 1]], 0.9, 3)
    G.write_phone_lm(lm, tmp_path / "lm")
    assert G.read_phone_lm(tmp_path / "lm").equals(lm)

    g = G.build_denominator_graph(lm, topo, 0.1)
    G.write_denominator_graph(g, tmp_path / "den")
    assert G.read_denominator_graph(tmp_path / "den").equals(g)

    alis = [_ali("a", topo, [(0, [2, 1]), (1, [3])]), _ali("b", topo, [(2, [1, 1, 2])])]
    G.write_alignments(alis, tmp_path / "ali")
    back = G.read_alignments(tmp_path / "ali", topo)
    assert all(x.equals(y) for x, y in zip(alis, back))

    sup = G.build_numerator_graph(alis[0], 1, topo)
    G.write_supervision(sup, tmp_path / "sup")
    assert G.read_supervision(tmp_path / "sup", topo.num_pdfs).equals(sup)

    wsup = G.supervision_from_graph(g, 3)
    G.write_supervision(wsup, tmp_path / "wsup")
    assert G.read_supervision(tmp_path / "wsup").equals(wsup)


def test_supervision_reader_errors(tmp_path):
    p = tmp_path / "s"
    p.write_text("SUP u 2\nI 0\nF 2\nT 0\nA 0 1 0\nT 1\nA 0 2 0\n")
    with pytest.raises(G.FormatError, match="no complete path"):
        G.read_supervision(p)
    p.write_text("SUP u 1\nA 0 1 0\n")
    with pytest.raises(G.FormatError, match="line 2"):
        G.read_supervision(p)
