import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp, softmax

from lfdisc import graphs as G
from lfdisc.forward_backward import (
    backward,
    boost_table,
    forward,
    forward_backward,
    occupancies,
    read_matrix,
    smbr_backward,
    smbr_forward,
    write_matrix,
)
from lfdisc.oracle import (
    dense_forward_backward,
    dense_total_logprob,
    enumerate_paths,
    enumerate_supervision,
    path_posteriors,
    random_graph,
    random_instance,
)


def _smbr(g, ll, acc):
    ab, q = smbr_forward(g, ll, acc)
    smbr_backward(g, ll, acc, ab, q)
    return ab, q


def _single_state_graph(lam=0.0):
    return G.DenominatorGraph(1, 1, [0], [0], [0], [np.log(0.5)], [1.0], [0.5], lam)


def _chain_graph(pdfs, lam=0.0):
    """Linear chain emitting ``pdfs`` in order: exactly one path of len(pdfs) frames."""
    T = len(pdfs)
    init = np.zeros(T + 1)
    init[0] = 1
    fin = np.zeros(T + 1)
    fin[T] = 1
    return G.DenominatorGraph(T + 1, max(pdfs) + 1, range(T), range(1, T + 1), pdfs,
                              np.log(np.full(T, 0.9)), init, fin, lam)


def test_unit_likelihoods_total_mass():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 4, 3)
    for T in (1, 3, 5):
        enum = enumerate_paths(g, T)
        if enum.num_paths == 0:
            continue
        ab = forward(g, np.zeros((T, 3)))
        mass = ab.alpha[T] @ g.final * np.exp(ab.log_scales.sum())
        assert ab.total_logprob == pytest.approx(np.log(mass), rel=1e-12)
        assert ab.total_logprob == pytest.approx(logsumexp(enum.log_weight), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_matches_dense_oracle(lam):
    rng = np.random.default_rng(1)
    for _ in range(30):
        den, _, ll = random_instance(rng, lam)
        lp, gamma, ab = forward_backward(den, ll)
        ref_lp, alpha, beta, c = dense_forward_backward(den, ll)
        assert lp == pytest.approx(ref_lp, rel=1e-12, abs=1e-12)
        assert lp == pytest.approx(dense_total_logprob(den, ll), rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(ab.alpha, alpha, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(ab.beta, beta, rtol=1e-11, atol=1e-12)


def test_leaky_three_state_dense():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 3, 2, leaky_coeff=0.1, extra_arcs=3)
    ll = rng.normal(size=(4, 2))
    assert forward(g, ll).total_logprob == pytest.approx(dense_total_logprob(g, ll), rel=1e-12)
    # leak mass is visible: turning it off changes the answer
    assert forward(g.with_leaky_coeff(0.0), ll).total_logprob != pytest.approx(dense_total_logprob(g, ll))


@pytest.mark.parametrize("lam", [0.0, 0.1])
@pytest.mark.parametrize("boosted", [False, True])
def test_alpha_beta_product_constant(lam, boosted):
    rng = np.random.default_rng(2)
    for _ in range(50):
        den, _, ll = random_instance(rng, lam)
        boost = boost_table(rng.dirichlet(np.ones(ll.shape[1]), ll.shape[0]), 0.3) if boosted else None
        ab = forward(den, ll, boost)
        backward(den, ll, ab, boost)
        prod = np.einsum("ts,ts->t", ab.alpha, ab.beta)
        np.testing.assert_allclose(prod, prod[0], rtol=1e-10)
        np.testing.assert_allclose(ab.alpha.sum(axis=1), 1.0, atol=1e-12)


def test_occupancies_two_state_enumeration():
    g = G.DenominatorGraph(2, 2, [0, 0, 1, 1], [0, 1, 0, 1], [0, 1, 0, 1],
                           np.log([0.3, 0.7, 0.4, 0.6]), [0.5, 0.5], [0.2, 0.8])
    ll = np.array([[0.1, -0.3], [0.5, 0.2], [-1.0, 0.4]])
    _, gamma, _ = forward_backward(g, ll)
    ref = path_posteriors(enumerate_paths(g, 3), ll, 2)
    np.testing.assert_allclose(gamma, ref, atol=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_occupancies_random_enumeration(lam):
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = random_graph(rng, 4, 3, lam)
        ll = rng.uniform(-2, 2, (5, 3))
        enum = enumerate_paths(g, 5)
        if enum.num_paths == 0:
            continue
        _, gamma, _ = forward_backward(g, ll)
        np.testing.assert_allclose(gamma, path_posteriors(enum, ll, 3), atol=1e-10)


def test_single_path_supervision_one_hot():
    topo = G.HmmTopology.standard(2)
    ali = G.Alignment("u", [1, 1, 1, 0, 0], [0, 1, 1, 0, 1], [2, 3, 3, 0, 1])
    sup = G.build_numerator_graph(ali, 0, topo)
    ll = np.random.default_rng(0).normal(size=(5, 4))
    lp, gamma, _ = forward_backward(sup, ll)
    np.testing.assert_array_equal(gamma, np.eye(4)[ali.pdfs])
    assert lp == pytest.approx(ll[np.arange(5), ali.pdfs].sum(), rel=1e-12)


def test_posterior_rows_normalized():
    rng = np.random.default_rng(4)
    for i in range(100):
        den, sup, ll = random_instance(rng, (0.0, 0.1)[i % 2])
        for g in (den, sup):
            _, gamma, _ = forward_backward(g, ll)
            np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)
            assert gamma.min() >= 0 and gamma.max() <= 1 + 1e-12


def test_supervision_with_weights_matches_enumeration():
    rng = np.random.default_rng(6)
    for _ in range(20):
        _, sup, ll = random_instance(rng, 0.0)
        enum = enumerate_supervision(sup)
        lp, gamma, _ = forward_backward(sup, ll)
        assert lp == pytest.approx(logsumexp(enum.scores(ll)), rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(gamma, path_posteriors(enum, ll, ll.shape[1]), atol=1e-10)


def test_underflow_reports_frame():
    g = _chain_graph([0, 1, 0])
    ll = np.zeros((3, 2))
    ll[1, 1] = -1e6  # only allowed pdf at frame 2 has vanishing likelihood
    ll[1, 0] = 0.0
    with pytest.raises(FloatingPointError, match="frame 2"):
        forward(g, ll)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="pdfs"):
        forward(_single_state_graph(), np.zeros((3, 2)))


# -- sMBR recursions ----------------------------------------------------------


def test_smbr_single_state_graph():
    g = _single_state_graph()
    acc = np.array([[0.2], [0.5], [0.3]])
    ab, q = _smbr(g, np.zeros((3, 1)), acc)
    assert q.alpha_mbr[3, 0] == pytest.approx(1.0, rel=1e-15)
    assert q.total_avg_accuracy == pytest.approx(1.0, rel=1e-15)


def test_smbr_zero_accuracy():
    rng = np.random.default_rng(7)
    den, _, ll = random_instance(rng, 0.1)
    ab, q = _smbr(den, ll, np.zeros_like(ll))
    assert np.all(q.alpha_mbr == 0)
    assert q.total_avg_accuracy == 0


def _enum_smbr(enum, ll, acc):
    p = softmax(enum.scores(ll))
    A = enum.accuracy(acc)
    avg = p @ A
    T, J = acc.shape
    mask = enum.occupancy_masks(J)
    mass = mask @ p
    cond = np.divide(mask @ (p * A), mass, out=np.zeros_like(mass), where=mass > 0)
    return avg, cond, mass


def test_smbr_two_phone_one_hot_reference():
    topo = G.HmmTopology.standard(2)
    lm = G.estimate_phone_lm([[0, 1], [1, 1, 0]], 0.8, 2)
    g = G.build_denominator_graph(lm, topo)
    rng = np.random.default_rng(8)
    ll = rng.normal(size=(4, 4))
    acc = np.eye(4)[[0, 1, 2, 3]]
    _, q = _smbr(g, ll, acc)
    avg, cond, mass = _enum_smbr(enumerate_paths(g, 4), ll, acc)
    assert q.total_avg_accuracy == pytest.approx(avg, rel=1e-12)
    np.testing.assert_allclose(q.cond_accuracy[mass > 0], cond[mass > 0], rtol=1e-10)


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_smbr_matches_enumeration(lam):
    rng = np.random.default_rng(9)
    for _ in range(40):
        den, _, ll = random_instance(rng, lam)
        acc = rng.uniform(0, 1, ll.shape)
        ab, q = _smbr(den, ll, acc)
        avg, cond, mass = _enum_smbr(enumerate_paths(den, len(ll)), ll, acc)
        assert q.total_avg_accuracy == pytest.approx(avg, rel=1e-10, abs=1e-12)
        np.testing.assert_allclose(q.gamma, mass, atol=1e-10)
        np.testing.assert_allclose(q.cond_accuracy, cond, rtol=1e-10, atol=1e-10)
        # the sMBR sweep reproduces the plain recursion
        lp, gamma, _ = forward_backward(den, ll)
        assert ab.total_logprob == pytest.approx(lp, rel=1e-13, abs=1e-13)


@pytest.mark.parametrize("lam", [0.0, 0.1])
def test_smbr_invariants(lam):
    rng = np.random.default_rng(10)
    for _ in range(50):
        den, _, ll = random_instance(rng, lam)
        acc = rng.uniform(0, 1, ll.shape)
        ab, q = _smbr(den, ll, acc)
        assert np.all(q.alpha_mbr[0] == 0)
        # total accuracy recombined at every interior frame
        per_t = np.einsum("ts,ts->t", q.alpha_acc, ab.beta) + np.einsum("ts,ts->t", ab.alpha, q.beta_acc)
        np.testing.assert_allclose(per_t, q.total_avg_accuracy, atol=1e-8)
        # law of total expectation
        np.testing.assert_allclose((q.gamma * q.cond_accuracy).sum(axis=1), q.total_avg_accuracy, atol=1e-8)


def test_smbr_alpha_mbr_scale_free():
    # renormalizing alpha does not change alpha_mbr: compare against unscaled dense sums
    rng = np.random.default_rng(11)
    den, _, ll = random_instance(rng, 0.1)
    acc = rng.uniform(0, 1, ll.shape)
    _, q1 = _smbr(den, ll, acc)
    _, q2 = _smbr(den, ll + 50.0, acc)
    np.testing.assert_allclose(q1.alpha_mbr, q2.alpha_mbr, rtol=1e-12, atol=1e-14)


def test_smbr_single_path_conditional_equals_path_accuracy():
    pdfs = [0, 2, 1, 1]
    g = _chain_graph(pdfs)
    acc = np.random.default_rng(12).uniform(0, 1, (4, 3))
    ab, q = _smbr(g, np.zeros((4, 3)), acc)
    A = acc[np.arange(4), pdfs].sum()
    assert q.total_avg_accuracy == pytest.approx(A, rel=1e-14)
    np.testing.assert_allclose(q.cond_accuracy[q.gamma > 0], A, rtol=1e-14)


# -- matrix files -------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_matrix_round_trip(tmp_path_factory, r, c, seed):
    m = np.random.default_rng(seed).normal(size=(r, c)) * 1e3
    p = tmp_path_factory.mktemp("m") / "x.mat"
    write_matrix(m, p)
    np.testing.assert_array_equal(read_matrix(p), m)


def test_matrix_errors(tmp_path):
    p = tmp_path / "x.mat"
    p.write_text("MAT 2 2\n1 2\n3\n")
    with pytest.raises(ValueError, match="line 3"):
        read_matrix(p)
    p.write_text("2 2\n")
    with pytest.raises(ValueError, match="header"):
        read_matrix(p)
