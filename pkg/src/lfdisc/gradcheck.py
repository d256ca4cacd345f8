"""Central finite-difference checks of the analytic gradients."""
from __future__ import annotations

import numpy as np

from .acoustic_model import ToyNet, net_backward, net_forward
from .criteria import CriterionConfig, compute_criterion
from .forward_backward import forward_backward
from .oracle import random_instance, rel_error


def numeric_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (``x`` is restored afterwards)."""
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        hi = f()
        x.flat[i] = orig - step
        lo = f()
        x.flat[i] = orig
        g.flat[i] = (hi - lo) / (2 * step)
    return g


def criterion_grad_error(den, sup, ll, cfg: CriterionConfig, step: float = 1e-5) -> float:
    """Analytic criterion gradient vs finite differences on the log-likelihoods."""
    ll = np.array(ll, dtype=np.float64)
    den = den.with_leaky_coeff(cfg.leaky_coeff)
    _, g_num, _ = forward_backward(sup, ll)
    out = compute_criterion(den, sup, ll, cfg)
    fd = numeric_gradient(lambda: compute_criterion(den, sup, ll, cfg, g_num).total_objective, ll, step)
    return rel_error(out.grad, fd)


def network_grad_error(net: ToyNet, feats: np.ndarray, den, sup, cfg: CriterionConfig,
                       step: float = 1e-5) -> float:
    """Parameter gradients through net -> criterion vs finite differences, over every parameter."""
    den = den.with_leaky_coeff(cfg.leaky_coeff)
    ll = net_forward(net, feats)
    _, g_num, _ = forward_backward(sup, ll)
    out = compute_criterion(den, sup, ll, cfg)
    analytic = net_backward(net, feats, out.grad)

    def objective():
        return compute_criterion(den, sup, net_forward(net, feats), cfg, g_num).total_objective

    fd = [numeric_gradient(objective, p, step) for p in net.params()]
    return rel_error(np.concatenate([a.ravel() for a in analytic]), np.concatenate([f.ravel() for f in fd]))


def random_net_instance(rng: np.random.Generator, leaky_coeff: float, feat_dim: int = 3, num_pdfs: int = 4,
                        num_frames: int = 5, hidden=(6,)):
    """(net, feats, den, sup) with the given sizes; the graph is small and random."""
    while True:
        den, sup, _ = random_instance(rng, leaky_coeff, max_states=4, max_pdfs=num_pdfs,
                                      max_frames=num_frames, path_budget=10 ** 9)
        if den.num_pdfs == num_pdfs and sup.num_frames == num_frames:
            break
    net = ToyNet.init(feat_dim, num_pdfs, hidden, seed=int(rng.integers(1 << 31)))
    feats = rng.standard_normal((num_frames, feat_dim))
    return net, feats, den, sup
