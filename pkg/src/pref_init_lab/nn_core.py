"""Small dense-network stack in float64: initializers, forward/backward, Adam, gradient check.

Weights follow the (out, in) convention; a batch ``X`` of shape ``(B, d_in)``
maps to ``X @ W.T + b``.  Hidden layers use ReLU.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

_version_counter = itertools.count()


class InitScheme(str, Enum):
    DATA_DRIVEN = "data-driven"
    KAIMING_UNIFORM = "kaiming-uniform"
    XAVIER_UNIFORM = "xavier-uniform"
    ORTHONORMAL = "orthonormal"
    ZEROS = "zeros"
    ONES = "ones"

    @classmethod
    def parse(cls, name: "str | InitScheme") -> "InitScheme":
        if isinstance(name, InitScheme):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for scheme in cls:
            if scheme.value == key:
                return scheme
        choices = ", ".join(s.value for s in cls)
        raise ValueError(f"unknown init scheme {name!r}; expected one of: {choices}")

    def __str__(self) -> str:
        return self.value


@dataclass
class DenseNet:
    dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "identity"
    version: int = field(default_factory=lambda: next(_version_counter), compare=False)

    def __post_init__(self):
        if self.output_activation not in ("identity", "tanh"):
            raise ValueError(f"unsupported output activation {self.output_activation!r}")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.dims) - 1:
            raise ValueError("need one weight matrix and bias per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[k + 1], self.dims[k]) or b.shape != (self.dims[k + 1],):
                raise ValueError(f"layer {k} has shapes {w.shape}, {b.shape}")

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def touch(self) -> None:
        """Mark parameters as modified so older caches are rejected."""
        self.version = next(_version_counter)

    def copy(self) -> "DenseNet":
        return DenseNet(
            list(self.dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )

    def load_from(self, other: "DenseNet") -> None:
        if other.dims != self.dims:
            raise ValueError(f"shape mismatch: {other.dims} vs {self.dims}")
        for dst, src in zip(self.params, other.params):
            dst[...] = src
        self.touch()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class Cache:
    net_id: int
    version: int
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations of each layer
    output: np.ndarray
    squeeze: bool


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def init_weights(
    scheme: InitScheme | str,
    dims: Sequence[int],
    rng: np.random.Generator,
    output_activation: str = "identity",
) -> DenseNet:
    """Fresh network with parameters drawn per ``scheme``.

    ``DATA_DRIVEN`` has no weight rule of its own and is rejected here; callers
    pick a base scheme and run the constant-reward fit afterwards.
    """
    scheme = InitScheme.parse(scheme)
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {dims}")
    if scheme is InitScheme.DATA_DRIVEN:
        raise ValueError("data-driven init needs a base weight scheme")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        shape = (fan_out, fan_in)
        if scheme is InitScheme.ZEROS:
            w, b = np.zeros(shape), np.zeros(fan_out)
        elif scheme is InitScheme.ONES:
            w, b = np.ones(shape), np.ones(fan_out)
        elif scheme is InitScheme.KAIMING_UNIFORM:
            bound = np.sqrt(6.0 / fan_in)
            w, b = rng.uniform(-bound, bound, size=shape), np.zeros(fan_out)
        elif scheme is InitScheme.XAVIER_UNIFORM:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w, b = rng.uniform(-bound, bound, size=shape), np.zeros(fan_out)
        else:
            w, b = orthonormal(shape, rng), np.zeros(fan_out)
        weights.append(w)
        biases.append(b)
    return DenseNet(dims, weights, biases, output_activation)


def orthonormal(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    # sign fix makes the distribution uniform over orthogonal matrices
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return q.T.copy() if rows < cols else q


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.dims[0]:
        raise ValueError(f"expected input width {net.dims[0]}, got shape {x.shape}")
    inputs, pre = [], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
        elif net.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    cache = Cache(id(net), net.version, inputs, pre, h, squeeze)
    return (h[0] if squeeze else h), cache


def backward(net: DenseNet, cache: Cache, grad_y: np.ndarray) -> Grads:
    """Parameter gradients of a loss whose gradient w.r.t. the output is ``grad_y``.

    For batched inputs the per-sample contributions are summed.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ValueError("cache does not belong to the current parameters of this network")
    g = np.asarray(grad_y, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ValueError(f"grad_y shape {g.shape} does not match output {cache.output.shape}")
    if net.output_activation == "tanh":
        g = g * (1.0 - cache.output**2)
    n_layers = len(net.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for k in range(n_layers - 1, -1, -1):
        gw[k] = g.T @ cache.inputs[k]
        gb[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ net.weights[k]) * (cache.pre[k - 1] > 0)
    return Grads(gw, gb)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in net.params],
            [np.zeros_like(p) for p in net.params],
            lr=lr,
            **kwargs,
        )


def adam_step(net: DenseNet, grads: Grads, state: AdamState) -> tuple[DenseNet, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(net.params, grads.params, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    net.touch()
    return net, state


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def grad_check(
    net: DenseNet, loss: LossFn, x: np.ndarray, h: float = 1e-5, abs_tol: float = 1e-6
) -> float:
    """Max error of ``backward`` against central differences over every parameter.

    ``loss`` maps the network output to ``(value, d value / d output)``.  The
    error is relative where either gradient exceeds ``abs_tol`` and absolute
    otherwise.
    """
    y, cache = forward(net, x)
    _, gy = loss(y)
    analytic = backward(net, cache, gy).params
    worst = 0.0
    for p, ga in zip(net.params, analytic):
        flat = p.reshape(-1)
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss(forward(net, x)[0])[0]
            flat[i] = orig - h
            lm = loss(forward(net, x)[0])[0]
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            scale = max(abs(num), abs(ga[i]))
            diff = abs(num - ga[i])
            worst = max(worst, diff / scale if scale > abs_tol else diff)
    net.touch()
    return worst


# Checkpoint format (text, one item per line):
#   dense-net 1
#   dims <d0> <d1> ... <dk>
#   activation <identity|tanh>
#   W<k> <row-major floats>     one line per layer
#   b<k> <floats>               one line per layer
# Floats use Python's shortest round-trip repr.


def save_checkpoint(net: DenseNet, path: str | Path) -> None:
    lines = ["dense-net 1", "dims " + " ".join(map(str, net.dims)), f"activation {net.output_activation}"]
    for k, w in enumerate(net.weights):
        lines.append(f"W{k} " + " ".join(repr(float(v)) for v in w.ravel()))
    for k, b in enumerate(net.biases):
        lines.append(f"b{k} " + " ".join(repr(float(v)) for v in b.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> DenseNet:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0].strip() != "dense-net 1":
        raise ValueError(f"{path}: not a dense-net checkpoint")
    fields = {}
    for row in rows[1:]:
        if row.strip():
            key, _, rest = row.partition(" ")
            fields[key] = rest.split()
    dims = [int(d) for d in fields["dims"]]
    weights, biases = [], []
    for k in range(len(dims) - 1):
        weights.append(np.array(fields[f"W{k}"], dtype=np.float64).reshape(dims[k + 1], dims[k]))
        biases.append(np.array(fields.get(f"b{k}", []), dtype=np.float64).reshape(dims[k + 1]))
    return DenseNet(dims, weights, biases, fields["activation"][0])
