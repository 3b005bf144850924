"""Conditional generator and critic networks.

Generator: (sensor id, W x V history, noise) -> next-step vector of width V.
The id goes through an embedding, the history through an LSTM stack and the
noise through a dense layer; the three summaries are concatenated and passed
through a dense head.

Critic: (sensor id, (W + 1) x V sequence) -> unbounded score. The id
embedding is repeated along time and concatenated to every step, followed by
strided Conv1D blocks and a dense head, all spectrally normalized.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..numcore import tensor as T
from ..numcore.layers import (
    LSTM,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Embedding,
    Layer,
    ShapeError,
    SpectralNorm,
    activate,
)
from ..numcore.tensor import Tensor


@dataclass
class GeneratorSpec:
    n_sensors: int = 3
    n_vars: int = 2
    window: int = 24
    noise_dim: int = 8
    embedding_dim: int = 8
    recurrent_hidden: tuple[int, ...] = (64,)
    noise_hidden: int = 32
    dense_sizes: tuple[int, ...] = (64,)
    output_activation: str = "linear"
    batch_norm: bool = True
    dropout: float = 0.2

    def __post_init__(self):
        self.recurrent_hidden = tuple(int(h) for h in self.recurrent_hidden)
        self.dense_sizes = tuple(int(h) for h in self.dense_sizes)
        if min(self.noise_dim, self.embedding_dim, self.n_vars, self.window, self.n_sensors) < 1:
            raise ValueError("generator dimensions must be positive")
        if not self.recurrent_hidden or min(self.recurrent_hidden) < 1:
            raise ValueError("generator needs at least one recurrent layer with positive width")
        if self.output_activation not in ("linear", "tanh"):
            raise ValueError(f"output_activation must be 'linear' or 'tanh', got {self.output_activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recurrent_hidden"] = list(self.recurrent_hidden)
        d["dense_sizes"] = list(self.dense_sizes)
        return d


@dataclass
class CriticSpec:
    n_sensors: int = 3
    n_vars: int = 2
    window: int = 24
    embedding_dim: int = 8
    channels: tuple[int, ...] = (32, 64)
    kernel: int = 5
    stride: int = 2
    padding: int = 2
    dense_sizes: tuple[int, ...] = (224,)
    skip_connection: bool = False
    spectral_norm: bool = True
    sn_iterations: int = 1

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.dense_sizes = tuple(int(h) for h in self.dense_sizes)
        if min(self.embedding_dim, self.n_vars, self.window, self.n_sensors, self.kernel, self.stride) < 1:
            raise ValueError("critic dimensions must be positive")
        if not self.channels or min(self.channels) < 1 or not self.dense_sizes or min(self.dense_sizes) < 1:
            raise ValueError("critic needs at least one conv block and one dense layer")
        if self.sn_iterations < 1:
            raise ValueError("sn_iterations must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["dense_sizes"] = list(self.dense_sizes)
        return d


def _name_parameters(layer: Layer, prefix: str) -> None:
    for name, p in layer.named_parameters():
        p.name = f"{prefix}.{name}"


class Generator(Layer):
    def __init__(self, spec: GeneratorSpec, seed=0, dropout_rng: np.random.Generator | None = None):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.embedding = Embedding(spec.n_sensors, spec.embedding_dim, rng=rng)
        self.recurrent = []
        n_in = spec.n_vars
        for h in spec.recurrent_hidden:
            self.recurrent.append(LSTM(n_in, h, rng=rng))
            n_in = h
        self.noise_dense = Dense(spec.noise_dim, spec.noise_hidden, activation="leaky_relu", rng=rng)
        width = spec.embedding_dim + n_in + spec.noise_hidden
        self.head = []
        for size in spec.dense_sizes:
            self.head.append(Dense(width, size, activation="leaky_relu", rng=rng))
            if spec.batch_norm:
                self.head.append(BatchNorm(size))
            if spec.dropout > 0:
                self.head.append(Dropout(spec.dropout, rng=dropout_rng))
            width = size
        self.out = Dense(width, spec.n_vars, activation="linear", rng=rng)
        _name_parameters(self, "gen")

    def set_dropout_rng(self, rng: np.random.Generator) -> None:
        for layer in self.head:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def forward(self, history, sensor_ids, noise) -> Tensor:
        spec = self.spec
        history = T.as_tensor(history)
        noise = T.as_tensor(noise)
        batch = history.shape[0]
        if history.shape[1:] != (spec.window, spec.n_vars):
            raise ShapeError(f"Generator: history must be (batch, {spec.window}, {spec.n_vars}), got {history.shape}")
        if noise.shape != (batch, spec.noise_dim):
            raise ShapeError(f"Generator: noise must be ({batch}, {spec.noise_dim}), got {noise.shape}")
        e = self.embedding(sensor_ids)
        h = history
        for i, lstm in enumerate(self.recurrent):
            h = lstm(h, return_sequence=i < len(self.recurrent) - 1)
        zf = self.noise_dense(noise)
        x = T.concat([e, h, zf], axis=1)
        for layer in self.head:
            x = layer(x)
        return activate(self.out(x), spec.output_activation)


class Critic(Layer):
    def __init__(self, spec: CriticSpec, seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)

        def wrap(layer):
            if spec.spectral_norm:
                return SpectralNorm(layer, spec.sn_iterations, rng=rng)
            return layer

        self.embedding = Embedding(spec.n_sensors, spec.embedding_dim, rng=rng)
        self.convs = []
        ch = spec.n_vars + spec.embedding_dim
        length = spec.window + 1
        for out_ch in spec.channels:
            conv = Conv1D(ch, out_ch, spec.kernel, spec.stride, spec.padding, activation="leaky_relu", rng=rng)
            length = conv.out_length(length)
            if length < 1:
                raise ValueError("critic conv stack shrinks the sequence to nothing")
            self.convs.append(wrap(conv))
            ch = out_ch
        width = ch * length
        self.dense = []
        for i, size in enumerate(spec.dense_sizes):
            # the last hidden layer is left linear so the skip branch can join before the activation
            self.dense.append(wrap(Dense(width, size, activation="linear", rng=rng)))
            width = size
        self.skip = wrap(Dense(spec.n_vars, width, rng=rng)) if spec.skip_connection else None
        self.out = wrap(Dense(width, 1, rng=rng))
        _name_parameters(self, "critic")

    def spectral_layers(self) -> list[SpectralNorm]:
        layers = [*self.convs, *self.dense, self.out]
        if self.skip is not None:
            layers.append(self.skip)
        return [l for l in layers if isinstance(l, SpectralNorm)]

    def forward(self, sequence, sensor_ids) -> Tensor:
        spec = self.spec
        x = T.as_tensor(sequence)
        if x.ndim != 3 or x.shape[1:] != (spec.window + 1, spec.n_vars):
            raise ShapeError(
                f"Critic: sequence must be (batch, {spec.window + 1}, {spec.n_vars}), got {x.shape}")
        batch, length, _ = x.shape
        e = T.reshape(self.embedding(sensor_ids), (batch, 1, spec.embedding_dim))
        e = T.broadcast_to(e, (batch, length, spec.embedding_dim))
        h = T.concat([x, e], axis=2)
        for conv in self.convs:
            h = conv(h)
        h = T.reshape(h, (batch, -1))
        for i, layer in enumerate(self.dense):
            h = layer(h)
            if i == len(self.dense) - 1 and self.skip is not None:
                h = T.add(h, self.skip(T.mean(x, axis=1)))
            h = T.leaky_relu(h)
        return self.out(h)


def build_generator(spec: GeneratorSpec, seed=0) -> Generator:
    return Generator(spec, seed)


def build_critic(spec: CriticSpec, seed=0) -> Critic:
    return Critic(spec, seed)
