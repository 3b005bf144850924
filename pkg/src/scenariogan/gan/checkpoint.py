"""GanModel persistence on top of the numcore container.

Everything needed to resume bit-identically is stored: parameters, layer
buffers (batch-norm running statistics, spectral-norm vectors), optimizer
moments and step counters, the training RNG state and the loss history.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from ..datapipe import ScalerParams
from ..numcore import serialize
from ..numcore.serialize import CheckpointError
from .models import CriticSpec, GeneratorSpec
from .training import HISTORY_KEYS, GanModel, TrainConfig, build_model

FORMAT = "scenariogan-model/1"


def _records(model: GanModel) -> list[tuple[str, np.ndarray]]:
    recs = []
    for net in (model.generator, model.critic):
        for p in net.parameters():
            recs.append((p.name, p.data))
    for prefix, net in (("gen", model.generator), ("critic", model.critic)):
        for name, buf in net.named_buffers():
            recs.append((f"buffer:{prefix}.{name}", buf))
    for tag, opt in (("opt_g", model.opt_g), ("opt_c", model.opt_c)):
        for p in opt.params:
            if p.name in opt.state.m:
                recs.append((f"{tag}.m:{p.name}", opt.state.m[p.name]))
                recs.append((f"{tag}.v:{p.name}", opt.state.v[p.name]))
    return recs


def _meta(model: GanModel) -> dict:
    return {
        "format": FORMAT,
        "generator_spec": model.gen_spec.to_dict(),
        "critic_spec": model.critic_spec.to_dict(),
        "train_config": model.config.to_dict(),
        "iteration": model.iteration,
        "seed": model.config.seed,
        "sensors": list(model.sensors),
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
        "optimizer_steps": {"opt_g": model.opt_g.state.t, "opt_c": model.opt_c.state.t},
        "learning_rates": {"opt_g": model.opt_g.state.lr, "opt_c": model.opt_c.state.lr},
        "rng_state": model.rng.bit_generator.state,
        "history": {k: list(model.history[k]) for k in HISTORY_KEYS},
    }


def dumps(model: GanModel) -> str:
    return serialize.dumps(_records(model), _meta(model))


def save(model: GanModel, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(model))
    tmp.replace(path)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def loads(text: str) -> GanModel:
    records, meta = serialize.loads(text)
    if meta is None or meta.get("format") != FORMAT:
        found = None if meta is None else meta.get("format")
        raise CheckpointError(f"model format {found!r} does not match {FORMAT!r}")
    gen_spec = GeneratorSpec(**meta["generator_spec"])
    critic_spec = CriticSpec(**meta["critic_spec"])
    config = TrainConfig(**meta["train_config"])
    scaler = None if meta["scaler"] is None else ScalerParams.from_dict(meta["scaler"])
    model = build_model(gen_spec, critic_spec, config, meta["sensors"], scaler)
    params = {p.name: p for net in (model.generator, model.critic) for p in net.parameters()}
    opts = {"opt_g": model.opt_g, "opt_c": model.opt_c}
    seen = set()
    for name, arr in records:
        if name.startswith("buffer:"):
            prefix, _, path = name[len("buffer:"):].partition(".")
            net = model.generator if prefix == "gen" else model.critic
            net.set_buffer(path, arr)
        elif name.startswith(("opt_g.", "opt_c.")):
            head, _, pname = name.partition(":")
            tag, kind = head.split(".")
            getattr(opts[tag].state, kind)[pname] = arr.copy()
        else:
            if name not in params:
                raise CheckpointError(f"unknown parameter {name!r} in checkpoint")
            if params[name].shape != arr.shape:
                raise CheckpointError(f"parameter {name!r}: shape {arr.shape} != expected {params[name].shape}")
            params[name].data = arr.copy()
            seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    for tag, opt in opts.items():
        opt.state.t = int(meta["optimizer_steps"][tag])
        opt.state.lr = float(meta["learning_rates"][tag])
    model.rng.bit_generator.state = meta["rng_state"]
    model.iteration = int(meta["iteration"])
    model.history = {k: [float(v) for v in meta["history"][k]] for k in HISTORY_KEYS}
    model.generator.eval()
    return model


def load(path) -> GanModel:
    return loads(Path(path).read_text())
