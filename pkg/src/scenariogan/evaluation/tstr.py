"""Train-on-synthetic / test-on-real harness.

A small feedforward next-step predictor (flattened W x V window -> V) is
trained on one of three corpora and always tested on the real test split:

    TSTR   synthetic windows only
    TSRTR  synthetic windows followed by the real training windows
    TRTR   real training windows only

Repeat r of every mode uses the same predictor seed, so modes are compared
under matched initialisation and batch order.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..datapipe import VARIABLES, DataError, ScalerParams, WindowSet
from ..numcore import tensor as T
from ..numcore.layers import Dense, Embedding, Layer
from ..numcore.optim import Optimizer
from ..numcore.tensor import Tensor, no_grad
from . import metrics

MODES = ("TSTR", "TSRTR", "TRTR")


class IsolationError(AssertionError):
    pass


@dataclass
class PredictorSpec:
    window: int = 24
    n_vars: int = 2
    hidden: tuple[int, ...] = (256, 32)
    activation: str = "leaky_relu"
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 5
    batch_size: int = 128
    repeats: int = 5
    seed: int = 0
    include_sensor_id: bool = False
    n_sensors: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.n_vars != len(VARIABLES):
            raise ValueError(f"predictor output width must be {len(VARIABLES)}")
        if min(self.window, self.epochs, self.batch_size, self.repeats) < 1:
            raise ValueError("window, epochs, batch_size and repeats must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class Predictor(Layer):
    def __init__(self, spec: PredictorSpec, seed):
        self.spec = spec
        rng = np.random.default_rng(seed)
        width = spec.window * spec.n_vars
        self.embedding = None
        if spec.include_sensor_id:
            self.embedding = Embedding(spec.n_sensors, 4, rng=rng, name="pred.embedding")
            width += 4
        self.layers = []
        for i, h in enumerate(spec.hidden):
            self.layers.append(Dense(width, h, activation=spec.activation, rng=rng, name=f"pred.hidden{i}"))
            width = h
        self.out = Dense(width, spec.n_vars, rng=rng, name="pred.out")

    def forward(self, inputs, sensor_ids=None) -> Tensor:
        x = T.as_tensor(np.asarray(inputs, dtype=np.float64).reshape(len(inputs), -1))
        if self.embedding is not None:
            x = T.concat([x, self.embedding(sensor_ids)], axis=1)
        for layer in self.layers:
            x = layer(x)
        return self.out(x)

    def predict(self, windows: WindowSet, chunk: int = 8192) -> np.ndarray:
        outs = []
        with no_grad():
            for a in range(0, len(windows), chunk):
                outs.append(self(windows.inputs[a:a + chunk], windows.sensor_ids[a:a + chunk]).data)
        return np.concatenate(outs) if outs else np.zeros((0, self.spec.n_vars))


def train_predictor(spec: PredictorSpec, windows: WindowSet, seed) -> Predictor:
    """Mini-batch MSE training on scaled windows; deterministic in ``seed``."""
    if len(windows) == 0:
        raise DataError("empty training corpus")
    if windows.inputs.shape[1:] != (spec.window, spec.n_vars):
        raise DataError(f"windows are {windows.inputs.shape[1:]}, predictor expects ({spec.window}, {spec.n_vars})")
    if isinstance(seed, np.random.SeedSequence):
        # spawn() advances the sequence's child counter; copy so repeated calls see the same children
        seed = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    init_seed, order_seed = np.random.SeedSequence(seed).spawn(2) if not isinstance(seed, np.random.SeedSequence) \
        else seed.spawn(2)
    model = Predictor(spec, init_seed)
    rng = np.random.default_rng(order_seed)
    opt = Optimizer(model.parameters(), spec.optimizer, spec.lr)
    for _ in range(spec.epochs):
        order = rng.permutation(len(windows))
        for a in range(0, len(order), spec.batch_size):
            idx = order[a:a + spec.batch_size]
            loss = T.mse_loss(model(windows.inputs[idx], windows.sensor_ids[idx]), windows.targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


# ---------------------------------------------------------------- isolation


def window_hashes(windows: WindowSet) -> set[bytes]:
    seqs = np.ascontiguousarray(windows.sequences())
    return {hashlib.sha256(row.tobytes()).digest() for row in seqs}


def assert_isolated(test: WindowSet, corpora: dict[str, WindowSet]) -> None:
    """Raise :class:`IsolationError` if any test window occurs in a training corpus.

    Windows are matched by (sensor, start) position and by the bytes of the
    full input + target block.
    """
    test_keys = test.keys()
    test_hashes = window_hashes(test)
    for name, corpus in corpora.items():
        real = corpus.starts >= 0
        shared = test_keys & corpus.subset(real).keys()
        if shared:
            raise IsolationError(f"{name}: {len(shared)} test window positions appear in training data")
        if test_hashes & window_hashes(corpus):
            raise IsolationError(f"{name}: a test window's values appear verbatim in training data")


# ---------------------------------------------------------------- study


def column_name(mode: str, fraction: float) -> str:
    if mode == "TRTR" or fraction == 0:
        return mode
    return f"{mode} ({100 * fraction:g}% anomalies)"


def columns_for(fractions) -> list[tuple[str, str, float]]:
    """(column, mode, anomaly fraction) in table order: TSTR..., TSRTR..., TRTR."""
    fractions = list(dict.fromkeys(float(f) for f in fractions))
    cols = [(column_name(m, f), m, f) for m in ("TSTR", "TSRTR") for f in fractions]
    return cols + [("TRTR", "TRTR", 0.0)]


@dataclass
class ColumnResult:
    mode: str
    anomaly_fraction: float
    mse_scaled: np.ndarray  # (R, V)
    mse_physical: np.ndarray  # (R, V)

    def summary(self, domain: str = "scaled", confidence: float = 0.95) -> list[tuple[float, float]]:
        vals = self.mse_scaled if domain == "scaled" else self.mse_physical
        return [metrics.t_interval(vals[:, v], confidence) for v in range(vals.shape[1])]


@dataclass
class TstrTable:
    columns: dict[str, ColumnResult]
    spec: PredictorSpec
    sizes: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"predictor": self.spec.to_dict(), "corpus_sizes": self.sizes, "columns": {}}
        for name, col in self.columns.items():
            out["columns"][name] = {
                "mode": col.mode,
                "anomaly_fraction": col.anomaly_fraction,
                **{domain: {var: {"mean": m, "half_width": h, "repeats": vals[:, i].tolist()}
                            for i, (var, (m, h)) in enumerate(zip(VARIABLES, col.summary(domain)))}
                   for domain, vals in (("scaled", col.mse_scaled), ("physical", col.mse_physical))},
            }
        return out

    def to_text(self, domain: str = "scaled") -> str:
        names = list(self.columns)
        width = max(16, *(len(n) + 2 for n in names))
        lines = [f"MSE ({domain} units), mean +- 95% t half-width over {self.spec.repeats} repeats",
                 " " * 16 + "".join(n.rjust(width) for n in names)]
        for v, var in enumerate(VARIABLES):
            cells = []
            for n in names:
                m, h = self.columns[n].summary(domain)[v]
                cells.append(f"{m:.4g} +- {h:.2g}".rjust(width))
            lines.append(f"MSE {var:<12}" + "".join(cells))
        return "\n".join(lines)


CorpusFactory = Callable[[float, int], WindowSet]


def run_study(real_train: WindowSet, real_test: WindowSet, synthetic: WindowSet | CorpusFactory,
              spec: PredictorSpec, fractions=(0.0,), scaler: ScalerParams | None = None,
              progress: Callable[[str], None] | None = None) -> TstrTable:
    """Fill a TSTR/TSRTR/TRTR table; windows are in the scaled domain.

    ``synthetic`` is either a fixed corpus or a factory called as
    ``factory(anomaly_fraction, repeat)``, so synthetic data can be
    regenerated for every repeat.
    """
    if len(real_test) == 0:
        raise DataError("empty real test split")
    factory = synthetic if callable(synthetic) else (lambda f, r: synthetic)
    results: dict[str, ColumnResult] = {}
    sizes: dict[str, int] = {}
    cols = columns_for(fractions)
    for name, mode, frac in cols:
        results[name] = ColumnResult(mode, frac, np.zeros((spec.repeats, spec.n_vars)),
                                     np.zeros((spec.repeats, spec.n_vars)))
    for r in range(spec.repeats):
        seed = np.random.SeedSequence(spec.seed, spawn_key=(r,))
        corpora: dict[float, WindowSet] = {}
        for name, mode, frac in cols:
            if mode == "TRTR":
                train_set = real_train
            else:
                if frac not in corpora:
                    corpora[frac] = factory(frac, r)
                    if len(corpora[frac]) == 0:
                        raise DataError("synthetic corpus is empty")
                syn = corpora[frac]
                train_set = syn if mode == "TSTR" else WindowSet.concatenate([syn, _strip(real_train)])
            assert_isolated(real_test, {name: train_set})
            sizes[name] = len(train_set)
            model = train_predictor(spec, train_set, seed)
            pred = model.predict(real_test)
            results[name].mse_scaled[r] = metrics.mse(pred, real_test.targets)
            if scaler is not None:
                results[name].mse_physical[r] = metrics.mse(scaler.inverse(pred), scaler.inverse(real_test.targets))
            else:
                results[name].mse_physical[r] = np.nan
            if progress is not None:
                progress(f"repeat {r + 1}/{spec.repeats} {name}: mse {results[name].mse_scaled[r].tolist()}")
    return TstrTable(results, spec, sizes)


def _strip(ws: WindowSet) -> WindowSet:
    return WindowSet(ws.inputs, ws.targets, ws.sensor_ids, ws.starts, ws.sensors)
