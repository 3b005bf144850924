"""Neural layers on top of the tensor engine.

Layouts: dense inputs are (batch, features); sequence inputs are
channels-last, (batch, time, channels). Weight matrices are stored as
(in, out) so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

import warnings
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class ShapeError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


_ACTIVATIONS = {
    "linear": lambda x: x,
    "leaky_relu": T.leaky_relu,
    "relu": T.relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
}


def activate(x: Tensor, name: str) -> Tensor:
    try:
        return _ACTIVATIONS[name](x)
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


class Layer:
    """Base class: parameters, persistent buffers and a train/eval flag."""

    training = True

    def children(self) -> Iterator[tuple[str, Layer]]:
        for key, val in vars(self).items():
            if isinstance(val, Layer):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Layer):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must survive a checkpoint round trip."""
        return {}

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in self.buffers().items():
            yield prefix + key, val
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def set_buffer(self, path: str, value: np.ndarray) -> None:
        head, _, rest = path.partition(".")
        for key, child in self.children():
            if path.startswith(key + "."):
                child.set_buffer(path[len(key) + 1:], value)
                return
        self.load_buffer(path, value)

    def train(self, mode: bool = True) -> Layer:
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Layer:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def expected_input(self) -> str:
        return "any"

    def check_input(self, shape: tuple[int, ...]) -> None:
        pass

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng=None, name: str = "dense"):
        if n_in < 1 or n_out < 1:
            raise ValueError("Dense extents must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.weight = Parameter(glorot_uniform(rng, n_in, n_out, (n_in, n_out)), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), name=f"{name}.bias")

    def __repr__(self) -> str:
        return f"Dense({self.n_in}, {self.n_out}, {self.activation})"

    def check_input(self, shape):
        if len(shape) < 1 or shape[-1] != self.n_in:
            raise ShapeError(f"{self!r}: expected input (..., {self.n_in}), got {shape}")

    def forward(self, x: Tensor, weight: Tensor | None = None) -> Tensor:
        self.check_input(x.shape)
        w = self.weight if weight is None else weight
        return activate(T.add(T.matmul(x, w), self.bias), self.activation)


class Conv1D(Layer):
    """1-D convolution over (batch, time, channels) via an unfold + matmul.

    The kernel is stored pre-flattened as a (kernel * in_channels, out_channels)
    matrix, which is also the 2-D view spectral normalization acts on.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 padding: int = 0, activation: str = "linear", rng=None, name: str = "conv"):
        if min(in_channels, out_channels, kernel, stride) < 1 or padding < 0:
            raise ValueError("Conv1D extents must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding, self.activation = kernel, stride, padding, activation
        fan_in, fan_out = kernel * in_channels, kernel * out_channels
        self.weight = Parameter(glorot_uniform(rng, fan_in, fan_out, (kernel * in_channels, out_channels)),
                                name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_channels), name=f"{name}.bias")

    def __repr__(self) -> str:
        return (f"Conv1D({self.in_channels}, {self.out_channels}, kernel={self.kernel}, "
                f"stride={self.stride}, padding={self.padding})")

    def out_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.kernel) // self.stride + 1

    def check_input(self, shape):
        if len(shape) != 3 or shape[2] != self.in_channels:
            raise ShapeError(f"{self!r}: expected input (batch, time, {self.in_channels}), got {shape}")
        if self.out_length(shape[1]) < 1:
            raise ShapeError(f"{self!r}: sequence of length {shape[1]} is shorter than the kernel")

    def forward(self, x: Tensor, weight: Tensor | None = None) -> Tensor:
        self.check_input(x.shape)
        batch, length, _ = x.shape
        if self.padding:
            pad = T.zeros((batch, self.padding, self.in_channels))
            x = T.concat([pad, x, pad], axis=1)
            length += 2 * self.padding
        n_out = (length - self.kernel) // self.stride + 1
        cols = T.unfold1d(x, self.kernel, self.stride)  # (batch, n_out, kernel, channels)
        cols = T.reshape(cols, (batch, n_out, self.kernel * self.in_channels))
        w = self.weight if weight is None else weight
        return activate(T.add(T.matmul(cols, w), self.bias), self.activation)


class Embedding(Layer):
    def __init__(self, vocab: int, dim: int, rng=None, name: str = "embedding"):
        if vocab < 1 or dim < 1:
            raise ValueError("Embedding extents must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab, self.dim = vocab, dim
        self.weight = Parameter(rng.standard_normal((vocab, dim)), name=f"{name}.weight")

    def __repr__(self) -> str:
        return f"Embedding({self.vocab}, {self.dim})"

    def forward(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab):
            raise ShapeError(f"{self!r}: id out of range [0, {self.vocab}) in {ids.min()}..{ids.max()}")
        return T.take(self.weight, ids, axis=0)


class BatchNorm(Layer):
    """Batch statistics while training, running statistics in eval mode.

    ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, features: int, eps: float = 1e-5, momentum: float = 0.9, name: str = "batchnorm"):
        if features < 1:
            raise ValueError("BatchNorm features must be positive")
        self.features, self.eps, self.momentum = features, eps, momentum
        self.gamma = Parameter(np.ones(features), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(features), name=f"{name}.beta")
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def __repr__(self) -> str:
        return f"BatchNorm({self.features})"

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_buffer(self, name, value):
        if name not in ("running_mean", "running_var"):
            raise KeyError(name)
        setattr(self, name, np.array(value, dtype=np.float64))

    def check_input(self, shape):
        if len(shape) != 2 or shape[1] != self.features:
            raise ShapeError(f"{self!r}: expected input (batch, {self.features}), got {shape}")

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x.shape)
        if self.training:
            mu = T.mean(x, axis=0, keepdims=True)
            centered = T.sub(x, mu)
            var = T.mean(T.square(centered), axis=0, keepdims=True)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu.data[0]
            self.running_var = m * self.running_var + (1 - m) * var.data[0]
            xhat = T.div(centered, T.power(T.add(var, self.eps), 0.5))
        else:
            xhat = T.div(T.sub(x, self.running_mean), np.sqrt(self.running_var + self.eps))
        return T.add(T.mul(xhat, self.gamma), self.beta)


def dropout_mask(shape, rate: float, rng: np.random.Generator, training: bool = True) -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(1 - rate) scaled by 1 / (1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


class Dropout(Layer):
    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __repr__(self) -> str:
        return f"Dropout({self.rate})"

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        return T.mul(x, dropout_mask(x.shape, self.rate, self.rng))


def recurrent_cell_step(h: Tensor, c: Tensor, x: Tensor, weight: Tensor, bias: Tensor):
    """One LSTM step. Gate order in the fused weight: input, forget, output, candidate.

    ``weight`` is (in + hidden, 4 * hidden) acting on ``[x, h]``.
    Returns ``(h_new, c_new)``; the cell output is ``h_new``.
    """
    hidden = h.shape[-1]
    z = T.add(T.matmul(T.concat([x, h], axis=-1), weight), bias)
    gates = T.sigmoid(z[:, :3 * hidden])
    i = gates[:, :hidden]
    f = gates[:, hidden:2 * hidden]
    o = gates[:, 2 * hidden:]
    g = T.tanh(z[:, 3 * hidden:])
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


class LSTM(Layer):
    """Unrolled LSTM over (batch, time, features); returns the last hidden state."""

    def __init__(self, n_in: int, hidden: int, rng=None, name: str = "lstm"):
        if n_in < 1 or hidden < 1:
            raise ValueError("LSTM extents must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        w = glorot_uniform(rng, n_in + hidden, 4 * hidden, (n_in + hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate
        self.weight = Parameter(w, name=f"{name}.weight")
        self.bias = Parameter(b, name=f"{name}.bias")

    def __repr__(self) -> str:
        return f"LSTM({self.n_in}, {self.hidden})"

    def check_input(self, shape):
        if len(shape) != 3 or shape[2] != self.n_in:
            raise ShapeError(f"{self!r}: expected input (batch, time, {self.n_in}), got {shape}")

    def forward(self, x: Tensor, return_sequence: bool = False):
        self.check_input(x.shape)
        batch, steps, _ = x.shape
        h = T.zeros((batch, self.hidden))
        c = T.zeros((batch, self.hidden))
        outs = []
        for t in range(steps):
            h, c = recurrent_cell_step(h, c, x[:, t, :], self.weight, self.bias)
            if return_sequence:
                outs.append(h)
        return T.stack(outs, axis=1) if return_sequence else h


def power_iteration(w: np.ndarray, u: np.ndarray, iterations: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Refine the leading left/right singular vectors of ``w``; returns (u, v, sigma)."""
    v = None
    for _ in range(iterations):
        v = w.T @ u
        v = v / max(np.linalg.norm(v), 1e-12)
        u = w @ v
        u = u / max(np.linalg.norm(u), 1e-12)
    return u, v, float(u @ w @ v)


def spectral_normalize(weight: Tensor, iterations: int, state: dict) -> Tensor:
    """Return ``weight / sigma`` with sigma the power-iteration spectral norm estimate.

    ``state["u"]`` carries the left singular vector between calls; it is
    created from ``state["rng"]`` (or a fixed seed) on first use.
    """
    if weight.ndim != 2:
        raise ShapeError(f"spectral_normalize expects a 2-D matrix, got {weight.shape}")
    if iterations < 1:
        raise ValueError("power iterations must be >= 1")
    w = weight.data
    u = state.get("u")
    if u is None:
        rng = state.get("rng") or np.random.default_rng(0)
        u = rng.standard_normal(w.shape[0])
        u = u / np.linalg.norm(u)
    u, v, _ = power_iteration(w, u, iterations)
    state["u"], state["v"] = u, v
    sigma = T.matmul(T.matmul(Tensor(u[None, :]), weight), Tensor(v[:, None]))
    if sigma.data.item() < 1e-12:
        warnings.warn("spectral_normalize: near-zero matrix, spectral norm clamped to 1e-12", RuntimeWarning)
        state["degenerate"] = True
        sigma = Tensor(np.full((1, 1), 1e-12))
    state["sigma"] = float(sigma.data.item())
    return T.div(weight, T.reshape(sigma, ()))


class SpectralNorm(Layer):
    """Wraps a Dense or Conv1D layer and normalizes its weight on every call."""

    def __init__(self, layer: Layer, iterations: int = 1, rng=None, warmup: int = 200):
        if iterations < 1:
            raise ValueError("power iterations must be >= 1")
        self.layer = layer
        self.iterations = iterations
        rng = rng if rng is not None else np.random.default_rng(0)
        w = layer.weight.data
        u = rng.standard_normal(w.shape[0])
        u = u / np.linalg.norm(u)
        if warmup:
            u, _, _ = power_iteration(w, u, warmup)
        self._state = {"u": u}

    def __repr__(self) -> str:
        return f"SpectralNorm({self.layer!r}, iterations={self.iterations})"

    @property
    def weight(self) -> Parameter:
        return self.layer.weight

    def buffers(self):
        return {"u": self._state["u"]}

    def load_buffer(self, name, value):
        if name != "u":
            raise KeyError(name)
        self._state["u"] = np.array(value, dtype=np.float64)

    def check_input(self, shape):
        self.layer.check_input(shape)

    def normalized_weight(self) -> Tensor:
        return spectral_normalize(self.layer.weight, self.iterations, self._state)

    def sigma_estimate(self) -> float:
        return self._state.get("sigma", float("nan"))

    def forward(self, x: Tensor) -> Tensor:
        self.layer.check_input(x.shape)
        return self.layer.forward(x, weight=self.normalized_weight())


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def __repr__(self) -> str:
        return "Sequential(" + ", ".join(repr(l) for l in self.layers) + ")"

    def forward(self, x: Tensor) -> Tensor:
        return forward(x, self.layers)


class Activation(Layer):
    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return f"Activation({self.name})"

    def forward(self, x):
        return activate(x, self.name)


class Flatten(Layer):
    def __repr__(self) -> str:
        return "Flatten()"

    def forward(self, x):
        return T.reshape(x, (x.shape[0], -1))


def forward(x, program: Sequence[Layer]) -> Tensor:
    """Run ``x`` through ``program`` in order, checking shapes at every layer."""
    out = T.as_tensor(x) if not isinstance(x, np.ndarray) or x.dtype.kind == "f" else x
    for layer in program:
        if isinstance(out, Tensor):
            layer.check_input(out.shape)
        out = layer(out)
    return out
