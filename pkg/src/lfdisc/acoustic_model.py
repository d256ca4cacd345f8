"""Small tanh feed-forward network producing pseudo log-likelihoods.

The network output is used directly as ``log p(o_t | j)``: no softmax and no
division by a prior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

_ACTS = ("tanh", "linear")


@dataclass
class Layer:
    weight: np.ndarray   # (fan_in, fan_out)
    bias: np.ndarray     # (fan_out,)
    activation: str = "tanh"


class ToyNet:
    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")
        for l in layers:
            if l.activation not in _ACTS:
                raise ValueError(f"unknown activation {l.activation!r}")
            if l.bias.shape != (l.weight.shape[1],):
                raise ValueError("bias length must equal the layer's output width")
        self.layers = layers

    @classmethod
    def init(cls, input_dim: int, output_dim: int, hidden=(64, 64), seed: int = 0) -> "ToyNet":
        """Uniform +-1/sqrt(fan_in) initialization from a fixed seed."""
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden, output_dim]
        layers = []
        for i, (fi, fo) in enumerate(zip(dims, dims[1:])):
            r = 1.0 / np.sqrt(fi)
            act = "linear" if i == len(dims) - 2 else "tanh"
            layers.append(Layer(rng.uniform(-r, r, (fi, fo)), rng.uniform(-r, r, fo), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def num_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.weight, l.bias]
        return out

    def copy(self) -> "ToyNet":
        return ToyNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def equals(self, other: "ToyNet") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.activation == b.activation and np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers))


def net_forward(net: ToyNet, features: np.ndarray, keep: bool = False):
    """T x D features -> T x J log-likelihoods.  With ``keep`` also return layer activations."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"features must be T x {net.input_dim}, got {x.shape}")
    acts = [x]
    for l in net.layers:
        x = x @ l.weight + l.bias
        if l.activation == "tanh":
            x = np.tanh(x)
        acts.append(x)
    return (x, acts) if keep else x


def net_backward(net: ToyNet, features: np.ndarray, grad_ll: np.ndarray, acts=None) -> list[np.ndarray]:
    """Gradients of ``sum(grad_ll * net_forward(features))`` for each parameter, in ``params()`` order."""
    if acts is None:
        out, acts = net_forward(net, features, keep=True)
    else:
        out = acts[-1]
    g = np.asarray(grad_ll, dtype=np.float64)
    if g.shape != out.shape:
        raise ValueError(f"output gradient shape {g.shape} does not match network output {out.shape}")
    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        if l.activation == "tanh":
            g = g * (1.0 - acts[i + 1] ** 2)
        grads.append(g.sum(axis=0))
        grads.append(acts[i].T @ g)
        g = g @ l.weight.T
    grads.reverse()
    return grads


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


class SgdState:
    """Momentum buffers, one per parameter."""

    def __init__(self, net: ToyNet):
        self.velocity = [np.zeros_like(p) for p in net.params()]


def sgd_step(net: ToyNet, grads, lr: float, momentum: float = 0.0, max_grad_norm: float | None = None,
             state: SgdState | None = None) -> bool:
    """Ascent step in place.  Returns False (and leaves ``net`` untouched) on non-finite gradients."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        log.warning("non-finite gradient norm; skipping update")
        return False
    scale = 1.0
    if max_grad_norm is not None and norm > max_grad_norm:
        scale = max_grad_norm / norm
    if state is None:
        state = SgdState(net)
    for p, g, v in zip(net.params(), grads, state.velocity):
        v *= momentum
        v += scale * g
        p += lr * v
    return True


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float
    final_lr: float
    total_updates: int

    def __call__(self, k: int) -> float:
        """Geometric interpolation from ``initial_lr`` to ``final_lr``."""
        if self.total_updates <= 0 or self.initial_lr == 0 or self.final_lr == 0:
            return self.initial_lr if k < self.total_updates else self.final_lr
        frac = min(max(k / self.total_updates, 0.0), 1.0)
        return float(self.initial_lr * (self.final_lr / self.initial_lr) ** frac)


def write_net(net: ToyNet, path) -> None:
    lines = [f"NET {net.input_dim} {net.output_dim} {len(net.layers)}"]
    for l in net.layers:
        r, c = l.weight.shape
        lines.append(f"L {r} {c} {l.activation}")
        lines += [" ".join("%.17g" % v for v in row) for row in l.weight]
        lines.append(" ".join("%.17g" % v for v in l.bias))
    Path(path).write_text("\n".join(lines) + "\n")


def read_net(path) -> ToyNet:
    rows = [(i, line.split()) for i, line in enumerate(Path(path).read_text().splitlines(), 1) if line.strip()]
    try:
        (ln, head), pos = rows[0], 1
        if head[0] != "NET" or len(head) != 4:
            raise ValueError("expected 'NET <D> <J> <n_layers>' header")
        D, J, n = map(int, head[1:])
        layers = []
        for _ in range(n):
            ln, f = rows[pos]
            if f[0] != "L":
                raise ValueError("expected layer record")
            r, c, act = int(f[1]), int(f[2]), f[3]
            w = np.array([[float(v) for v in rows[pos + 1 + i][1]] for i in range(r)])
            b = np.array([float(v) for v in rows[pos + 1 + r][1]])
            if w.shape != (r, c) or b.shape != (c,):
                raise ValueError(f"layer at line {ln} has malformed weights")
            layers.append(Layer(w, b, act))
            pos += r + 2
    except (IndexError, ValueError) as e:
        raise ValueError(f"{path}: {e}") from None
    net = ToyNet(layers)
    if net.input_dim != D or net.output_dim != J:
        raise ValueError(f"{path}: header dims disagree with layers")
    return net
