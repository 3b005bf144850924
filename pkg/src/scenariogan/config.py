"""Flat ``key = value`` run configuration.

Precedence, lowest first: built-in defaults, a named profile, a config file,
``--override`` pairs. Every key must be registered here; anything else is
rejected. The effective configuration is rendered back in the same format
so it can be echoed next to every output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .datapipe import SyntheticConfig
from .evaluation.tstr import PredictorSpec
from .gan.models import CriticSpec, GeneratorSpec
from .gan.training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("none", "") else int(text)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    section: str
    help: str


_syn = SyntheticConfig()
_gen = GeneratorSpec()
_crit = CriticSpec()
_train = TrainConfig()
_pred = PredictorSpec()

KEYS: dict[str, Key] = {k.name: k for k in [
    # data
    Key("sensors", int, _syn.sensors, "data", "number of synthetic sensors"),
    Key("steps", int, _syn.steps, "data", "records per synthetic sensor (10-minute cadence)"),
    Key("cold_base", float, _syn.cold_base, "data", "mean cold-aisle temperature [C]"),
    Key("hot_base", float, _syn.hot_base, "data", "mean hot-aisle temperature [C]"),
    Key("base_jitter", float, _syn.base_jitter, "data", "std of per-sensor base temperature [C]"),
    Key("diurnal_amplitude", float, _syn.diurnal_amplitude, "data", "daily temperature swing amplitude [C]"),
    Key("diurnal_period", int, _syn.diurnal_period, "data", "daily period in steps"),
    Key("ar_coef", float, _syn.ar_coef, "data", "AR(1) coefficient of temperature noise"),
    Key("ar_scale", float, _syn.ar_scale, "data", "AR(1) innovation std of temperature noise [C]"),
    Key("humidity_slope", float, _syn.humidity_slope, "data", "humidity change per degree (<= 0)"),
    Key("humidity_intercept", float, _syn.humidity_intercept, "data", "humidity at 0 C [%]"),
    Key("humidity_offset_std", float, _syn.humidity_offset_std, "data", "std of per-sensor humidity offset [%]"),
    Key("humidity_noise_ar", float, _syn.humidity_noise_ar, "data", "AR(1) coefficient of humidity noise"),
    Key("humidity_noise_scale", float, _syn.humidity_noise_scale, "data", "AR(1) innovation std of humidity noise"),
    Key("start", str, _syn.start, "data", "first synthetic timestamp (ISO-8601 UTC)"),
    Key("seed", int, 0, "data", "master seed for data, split, training and generation"),
    Key("window", int, 24, "data", "conditioning window length W in steps"),
    Key("split_train", float, 0.75, "data", "training fraction of windows"),
    Key("split_val", float, 0.10, "data", "validation fraction of windows"),
    Key("split_test", float, 0.15, "data", "test fraction of windows"),
    Key("split_mode", str, "random", "data", "random (per window) or block (contiguous, embargoed)"),
    # generator
    Key("noise_dim", int, _gen.noise_dim, "generator", "latent noise dimension"),
    Key("embedding_dim", int, _gen.embedding_dim, "generator", "sensor embedding dimension (both networks)"),
    Key("recurrent_hidden", _ints, _gen.recurrent_hidden, "generator", "LSTM hidden sizes, comma separated"),
    Key("noise_hidden", int, _gen.noise_hidden, "generator", "width of the noise dense pathway"),
    Key("gen_dense", _ints, _gen.dense_sizes, "generator", "generator head sizes, comma separated"),
    Key("output_activation", str, _gen.output_activation, "generator", "linear or tanh"),
    Key("batch_norm", _bool, _gen.batch_norm, "generator", "batch normalization in the generator head"),
    Key("dropout", float, _gen.dropout, "generator", "generator head dropout rate (0 disables)"),
    # critic
    Key("critic_channels", _ints, _crit.channels, "critic", "Conv1D channels, comma separated"),
    Key("critic_kernel", int, _crit.kernel, "critic", "Conv1D kernel size"),
    Key("critic_stride", int, _crit.stride, "critic", "Conv1D stride"),
    Key("critic_padding", int, _crit.padding, "critic", "Conv1D zero padding"),
    Key("critic_dense", _ints, _crit.dense_sizes, "critic", "critic dense sizes, comma separated"),
    Key("skip_connection", _bool, _crit.skip_connection, "critic", "add a pooled input projection before the head"),
    Key("spectral_norm", _bool, _crit.spectral_norm, "critic", "spectrally normalize every critic weight"),
    Key("sn_iterations", int, _crit.sn_iterations, "critic", "power iterations per critic call"),
    # training
    Key("batch_size", int, _train.batch_size, "train", "minibatch size"),
    Key("gp_lambda", float, _train.gp_lambda, "train", "gradient penalty coefficient"),
    Key("n_critic", int, _train.n_critic, "train", "critic updates per generator update"),
    Key("lr_critic", float, _train.lr_critic, "train", "critic learning rate (with TTUR)"),
    Key("lr_generator", float, _train.lr_generator, "train", "generator learning rate (both nets without TTUR)"),
    Key("ttur", _bool, _train.ttur, "train", "two time-scale update rule"),
    Key("optimizer", str, _train.optimizer, "train", "adam or adabelief"),
    Key("beta1", float, _train.beta1, "train", "optimizer beta1"),
    Key("beta2", float, _train.beta2, "train", "optimizer beta2"),
    Key("iterations", int, _train.iterations, "train", "generator iterations"),
    Key("checkpoint_every", int, _train.checkpoint_every, "train", "checkpoint cadence in iterations (0: end only)"),
    Key("progress_every", int, 100, "train", "progress line cadence in iterations"),
    # generation
    Key("scenarios", int, 6, "generate", "scenarios per conditioning window"),
    Key("length", int, 24, "generate", "rollout length in steps"),
    Key("anomaly_step", _opt_int, None, "generate", "rollout step of the anomaly (none: normal)"),
    Key("anomaly_sigma", float, 1.0, "generate", "latent noise std at the anomaly step"),
    Key("samples", int, 0, "generate", "conditioning windows for bulk export (0: one window)"),
    Key("generate_split", str, "test", "generate", "split the conditioning window is taken from"),
    Key("window_index", int, 0, "generate", "index of the conditioning window within that split"),
    Key("anomaly_fraction", _floats, (0.0,), "generate", "share(s) of bulk scenarios given an anomaly"),
    # evaluation
    Key("bins", int, 32, "eval", "histogram bins per variable for KL"),
    Key("smoothing", float, 1e-6, "eval", "additive probability mass per histogram bin"),
    Key("eval_split", str, "val", "eval", "split scored by evaluate/grid"),
    Key("eval_windows", _opt_int, 1000, "eval", "max windows scored (none: all)"),
    Key("grid_iterations", _opt_int, None, "eval", "generator iterations per grid row (none: iterations)"),
    # predictor harness
    Key("tstr_samples", int, 1500, "tstr", "conditioning windows in each synthetic corpus"),
    Key("tstr_scenarios", int, 10, "tstr", "scenarios per conditioning window"),
    Key("predictor_hidden", _ints, _pred.hidden, "tstr", "predictor hidden sizes"),
    Key("predictor_epochs", int, _pred.epochs, "tstr", "predictor training epochs"),
    Key("predictor_batch", int, _pred.batch_size, "tstr", "predictor minibatch size"),
    Key("predictor_lr", float, _pred.lr, "tstr", "predictor Adam learning rate"),
    Key("repeats", int, _pred.repeats, "tstr", "independent repeats per column"),
    Key("include_sensor_id", _bool, _pred.include_sensor_id, "tstr", "feed a sensor embedding to the predictor"),
    Key("tstr_anomaly_sigma", float, 8.0, "tstr", "anomaly noise std in anomaly-augmented corpora"),
]}

PROFILES: dict[str, dict[str, Any]] = {
    "desk": {"sensors": 3, "steps": 5000, "iterations": 2000, "tstr_samples": 1500, "tstr_scenarios": 10},
    "paper": {"sensors": 35, "steps": 5000, "iterations": 2000, "tstr_samples": 15000, "tstr_scenarios": 10},
}


def parse_value(key: str, text: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key].parse(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def parse_pairs(pairs, origin: str = "--override") -> dict[str, Any]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"{origin}: expected key=value, got {pair!r}")
        key, _, text = pair.partition("=")
        key = key.strip()
        out[key] = parse_value(key, text.strip())
    return out


def read_file(path) -> dict[str, Any]:
    pairs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        pairs.append(line)
    return parse_pairs(pairs, origin=str(path))


def resolve(profile: str | None = None, path=None, overrides=()) -> dict[str, Any]:
    cfg = {k.name: k.default for k in KEYS.values()}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        cfg.update(PROFILES[profile])
    if path is not None:
        cfg.update(read_file(path))
    cfg.update(parse_pairs(overrides))
    return cfg


def render(cfg: dict[str, Any]) -> str:
    lines = []
    section = None
    for key in KEYS.values():
        if key.section != section:
            section = key.section
            lines.append(f"# {section}")
        lines.append(f"{key.name} = {_render(cfg[key.name])}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    lines = ["config keys (key = default: description):"]
    section = None
    for key in KEYS.values():
        if key.section != section:
            section = key.section
            lines.append(f"  [{section}]")
        lines.append(f"    {key.name:<{width}} = {_render(key.default)}: {key.help}")
    lines.append("profiles: " + "; ".join(f"{n}: " + ", ".join(f"{k}={_render(v)}" for k, v in p.items())
                                         for n, p in PROFILES.items()))
    return "\n".join(lines)


# ---------------------------------------------------------------- typed views


def synthetic_config(cfg) -> SyntheticConfig:
    return SyntheticConfig(**{f: cfg[f] for f in SyntheticConfig.keys()})


def fractions(cfg) -> tuple[float, float, float]:
    return cfg["split_train"], cfg["split_val"], cfg["split_test"]


def generator_spec(cfg, n_sensors: int) -> GeneratorSpec:
    return GeneratorSpec(n_sensors=n_sensors, window=cfg["window"], noise_dim=cfg["noise_dim"],
                         embedding_dim=cfg["embedding_dim"], recurrent_hidden=cfg["recurrent_hidden"],
                         noise_hidden=cfg["noise_hidden"], dense_sizes=cfg["gen_dense"],
                         output_activation=cfg["output_activation"], batch_norm=cfg["batch_norm"],
                         dropout=cfg["dropout"])


def critic_spec(cfg, n_sensors: int) -> CriticSpec:
    return CriticSpec(n_sensors=n_sensors, window=cfg["window"], embedding_dim=cfg["embedding_dim"],
                      channels=cfg["critic_channels"], kernel=cfg["critic_kernel"], stride=cfg["critic_stride"],
                      padding=cfg["critic_padding"], dense_sizes=cfg["critic_dense"],
                      skip_connection=cfg["skip_connection"], spectral_norm=cfg["spectral_norm"],
                      sn_iterations=cfg["sn_iterations"])


def train_config(cfg, iterations: int | None = None) -> TrainConfig:
    return TrainConfig(batch_size=cfg["batch_size"], gp_lambda=cfg["gp_lambda"], n_critic=cfg["n_critic"],
                       lr_critic=cfg["lr_critic"], lr_generator=cfg["lr_generator"], ttur=cfg["ttur"],
                       optimizer=cfg["optimizer"], beta1=cfg["beta1"], beta2=cfg["beta2"],
                       iterations=cfg["iterations"] if iterations is None else iterations,
                       seed=cfg["seed"], checkpoint_every=cfg["checkpoint_every"])


def predictor_spec(cfg, n_sensors: int = 1) -> PredictorSpec:
    return PredictorSpec(window=cfg["window"], hidden=cfg["predictor_hidden"], lr=cfg["predictor_lr"],
                         epochs=cfg["predictor_epochs"], batch_size=cfg["predictor_batch"], repeats=cfg["repeats"],
                         seed=cfg["seed"], include_sensor_id=cfg["include_sensor_id"], n_sensors=n_sensors)
