"""Command-line entry point.

Exit codes: 0 success, 2 usage, config or input error, 3 numeric failure.
Every subcommand writes into ``--out`` (a directory) and echoes the
effective configuration there as ``config.txt``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import figures
from .datapipe import (
    HEADER,
    VARIABLES,
    DataError,
    TimeSeriesDataset,
    export_csv,
    fit_scaler_on_split,
    future_truth,
    ingest_csv,
    rolling_windows,
    split,
    synthesize_dataset,
)
from .evaluation import metrics
from .evaluation.protocol import score_scenarios
from .evaluation.report import EvalReport
from .evaluation.tstr import run_study
from .gan import checkpoint, grid
from .gan.training import HISTORY_KEYS, TrainingDiverged, build_model, train
from .numcore.serialize import CheckpointError
from .scenario import (
    SCENARIO_HEADER,
    AnomalySpec,
    bulk_generate,
    corpus_from_batch,
    generate_scenarios,
    read_csv,
    sidecar_path,
    write_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
LOSS_COLUMNS = ("iteration", *HISTORY_KEYS)


class UsageError(Exception):
    pass


def _say(msg: str) -> None:
    print(msg, flush=True)


def _outdir(args, cfg) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(C.render(cfg))
    return out


def _load_dataset(path) -> TimeSeriesDataset:
    if path is None:
        raise UsageError("--data is required")
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return ingest_csv(path)


def _load_model(path):
    if path is None:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return checkpoint.load(path)


def _windows(ds: TimeSeriesDataset, cfg):
    ws = rolling_windows(ds, cfg["window"])
    return split(ws, C.fractions(cfg), seed=cfg["seed"], mode=cfg["split_mode"])


def _sequences(ds: TimeSeriesDataset):
    return [s.values for s in ds.series.values()]


# ---------------------------------------------------------------- subcommands


def cmd_synth_data(args, cfg) -> int:
    out = _outdir(args, cfg)
    ds = synthesize_dataset(C.synthetic_config(cfg))
    path = out / "data.csv"
    export_csv(ds, path)
    pooled = ds.pooled_values()
    r = metrics.pearson(pooled)
    d = metrics.derivative_stats(_sequences(ds))
    summary = {"sensors": len(ds.series), "records": ds.n_records, "pearson": r,
               "derivatives": d.to_dict(list(VARIABLES))}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _say(f"wrote {path} ({len(ds.series)} sensors, {ds.n_records} records)")
    _say(f"pearson r(temperature, humidity) = {r:.4f}")
    _say("one-step change sigma: " + ", ".join(f"{v} {s:.4g}" for v, s in zip(VARIABLES, d.sigma)))
    return EXIT_OK


def cmd_ingest(args, cfg) -> int:
    ds = _load_dataset(args.data)
    out = _outdir(args, cfg)
    ws = _windows(ds, cfg)
    export_csv(ds, out / "data.csv")
    with open(out / "gaps.csv", "w") as fh:
        fh.write("sensor_id,index,seconds\n")
        for g in ds.gaps:
            fh.write(f"{g.sensor_id},{g.index},{g.seconds}\n")
    counts = ws.counts()
    summary = {"sensors": ds.sensors, "records": ds.n_records, "gaps": len(ds.gaps), "windows": counts}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _say(f"{len(ds.series)} sensors, {ds.n_records} records, {len(ds.gaps)} gaps")
    _say("windows: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return EXIT_OK


def _write_losses(path: Path, history: dict) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(LOSS_COLUMNS) + "\n")
        for i in range(len(history[HISTORY_KEYS[0]])):
            fh.write(f"{i + 1}," + ",".join(format(history[k][i], ".17g") for k in HISTORY_KEYS) + "\n")


def cmd_train(args, cfg) -> int:
    ds = _load_dataset(args.data)
    ws = _windows(ds, cfg)
    if args.resume:
        model = _load_model(args.resume)
        if model.sensors != ds.sensors:
            raise UsageError("checkpoint sensors do not match the dataset")
        scaler = model.scaler
    else:
        scaler = fit_scaler_on_split(ws)
        n = len(ds.sensors)
        model = build_model(C.generator_spec(cfg, n), C.critic_spec(cfg, n), C.train_config(cfg), ds.sensors, scaler)
    out = _outdir(args, cfg)
    ckpt = out / "model.ckpt"
    counts = model.parameter_counts()
    _say(f"parameters: generator {counts['generator']}, critic {counts['critic']}, ratio {counts['ratio']:.2f}")

    def progress(it, stats):
        _say(f"iter {it} " + " ".join(f"{k}={stats[k]:.6g}" for k in HISTORY_KEYS))

    try:
        train(model, ws.select("train").scaled(scaler), cfg["iterations"], checkpoint_path=ckpt,
              progress=progress, progress_every=max(1, cfg["progress_every"]))
    except TrainingDiverged as exc:
        diag = out / "diverged.json"
        diag.write_text(json.dumps({"iteration": exc.iteration, "losses": exc.snapshot,
                                    "history_tail": {k: model.history[k][-10:] for k in HISTORY_KEYS}},
                                   indent=1, sort_keys=True, default=str) + "\n")
        print(f"error: {exc}; diagnostic written to {diag}", file=sys.stderr)
        return EXIT_NUMERIC
    checkpoint.save(model, ckpt)
    _write_losses(out / "losses.csv", model.history)
    if model.history[HISTORY_KEYS[0]]:
        figures.plot_losses(model.history, out / "losses.png")
    _say(f"wrote {ckpt} at iteration {model.iteration}")
    return EXIT_OK


def _anomaly(cfg) -> AnomalySpec:
    return AnomalySpec(cfg["anomaly_step"], cfg["anomaly_sigma"])


def cmd_generate(args, cfg) -> int:
    model = _load_model(args.checkpoint)
    ds = _load_dataset(args.data)
    ws = _windows(ds, cfg)
    out = _outdir(args, cfg)
    digest = checkpoint.file_digest(args.checkpoint)
    meta = {"checkpoint_sha256": digest, "window": cfg["window"]}
    thresholds = _train_thresholds(ds, ws)
    if cfg["samples"] > 0:
        corpus = bulk_generate(model, ws.select("train").scaled(model.scaler), cfg["samples"], cfg["scenarios"],
                               cfg["length"], seed=cfg["seed"], anomaly_fraction=cfg["anomaly_fraction"][0],
                               anomaly_sigma=cfg["anomaly_sigma"])
        write_csv(corpus, out / "scenarios.csv", meta)
        _say(f"wrote {out / 'scenarios.csv'}: {corpus.shape[0]} samples x {corpus.shape[1]} scenarios "
             f"x {corpus.shape[2]} steps")
        return EXIT_OK
    part = ws.select(cfg["generate_split"])
    if not 0 <= cfg["window_index"] < len(part):
        raise UsageError(f"window_index {cfg['window_index']} outside 0..{len(part) - 1}")
    i = cfg["window_index"]
    history = model.scaler.scale(part.inputs[i])
    anomaly = _anomaly(cfg)
    batch = generate_scenarios(model, history, int(part.sensor_ids[i]), cfg["scenarios"], cfg["length"],
                               anomaly, seed=cfg["seed"])
    corpus = corpus_from_batch(batch, model.sensors, int(part.starts[i]))
    write_csv(corpus, out / "scenarios.csv", {**meta, "anomaly": anomaly.to_dict()})
    phys = batch.physical()
    counts = metrics.detect_anomalies(phys, part.inputs[i][-1], thresholds)
    (out / "anomalies.json").write_text(json.dumps({
        "thresholds": dict(zip(VARIABLES, map(float, thresholds))),
        "counts_per_step": {v: counts[:, k].tolist() for k, v in enumerate(VARIABLES)},
        "scenarios": len(phys)}, indent=1, sort_keys=True) + "\n")
    _, truth = _truth_for(ds, part, i, cfg["length"])
    figures.plot_scenarios(batch.physical_history(), phys, out / "scenarios.png",
                           title=f"{batch.sensor_id}: {len(phys)} scenarios", anomaly_step=anomaly.step,
                           truth=truth)
    _say(f"wrote {out / 'scenarios.csv'}: {phys.shape[0]} scenarios x {phys.shape[1]} steps x {phys.shape[2]} "
         f"variables (anomaly step {anomaly.step}, sigma {anomaly.sigma:g})")
    return EXIT_OK


def _train_thresholds(ds: TimeSeriesDataset, ws) -> np.ndarray:
    """5-sigma thresholds of one-step changes within training windows."""
    seqs = ws.select("train").sequences()
    return metrics.derivative_stats(list(seqs)).thresholds if len(seqs) else \
        metrics.derivative_stats(_sequences(ds)).thresholds


def _truth_for(ds, part, i, length):
    keep, truth = future_truth(ds, part.subset([i]), length)
    return (True, truth[0]) if keep[0] else (False, None)


def _read_header(path) -> list[str]:
    with open(path) as fh:
        return [h.strip() for h in fh.readline().strip().split(",")]


def _synthetic_arrays(ds: TimeSeriesDataset, path, window: int):
    """(generated, real, last_values, paired) from a dataset- or scenario-schema CSV."""
    header = _read_header(path)
    if header == HEADER:
        syn = ingest_csv(path)
        missing = set(syn.sensors) - set(ds.sensors)
        if missing:
            raise UsageError(f"schema mismatch: synthetic sensors {sorted(missing)} absent from real data")
        same = syn.sensors == ds.sensors and all(
            len(syn.series[s]) == len(ds.series[s]) and np.array_equal(syn.series[s].timestamps, ds.series[s].timestamps)
            for s in ds.sensors)
        if same and len({len(ds.series[s]) for s in ds.sensors}) == 1:
            gen = np.stack([syn.series[s].values for s in ds.sensors])
            real = np.stack([ds.series[s].values for s in ds.sensors])
            return gen, real, None, True
        return syn.pooled_values()[None], ds.pooled_values()[None], None, False
    if header == SCENARIO_HEADER:
        table = read_csv(path)
        cube = table.cube()
        meta_file = sidecar_path(path)
        meta = json.loads(meta_file.read_text()) if meta_file.is_file() else {}
        if set(table.sensor_id.tolist()) - set(ds.sensors):
            raise UsageError("schema mismatch: scenario sensors absent from real data")
        n, s, length, v = cube.shape
        starts = meta.get("sample_starts")
        sensors = meta.get("sample_sensors")
        w = meta.get("window", window)
        if starts is not None and sensors is not None and all(st >= 0 for st in starts):
            truth, last = [], []
            for sid, st in zip(sensors, starts):
                vals = ds.series[sid].values
                first = st + w
                if first + length > len(vals):
                    break
                truth.append(vals[first:first + length])
                last.append(vals[first - 1])
            else:
                real = np.repeat(np.stack(truth), s, axis=0)
                gen = cube.reshape(n * s, length, v)
                return gen, real, np.repeat(np.stack(last), s, axis=0), True
        return cube.reshape(n * s, length, v), ds.pooled_values()[None], None, False
    raise UsageError(f"schema mismatch: {path} header {header} matches neither {HEADER} nor {SCENARIO_HEADER}")


def cmd_evaluate(args, cfg) -> int:
    ds = _load_dataset(args.data)
    if _read_header(args.data) != HEADER:
        raise UsageError(f"schema mismatch: real data header must be {HEADER}")
    seqs = _sequences(ds)
    if args.synthetic is not None:
        if not Path(args.synthetic).is_file():
            raise UsageError(f"synthetic file not found: {args.synthetic}")
        gen, real, last, paired = _synthetic_arrays(ds, args.synthetic, cfg["window"])
        report = EvalReport.build(gen, real, last, seqs, cfg["bins"], cfg["smoothing"], paired, cfg)
    else:
        model = _load_model(args.checkpoint)
        ws = _windows(ds, cfg)
        score = score_scenarios(model, ds, ws, cfg["eval_split"], cfg["length"], cfg["eval_windows"],
                                seed=cfg["seed"], bins=cfg["bins"], smoothing=cfg["smoothing"])
        seqs = list(ws.select("train").sequences())
        report = EvalReport.build(score.generated, score.truth, score.last_values, seqs, cfg["bins"],
                                  cfg["smoothing"], True, cfg)
    out = _outdir(args, cfg)
    report.write(out)
    hg, hr = report.histograms
    figures.plot_joint_histograms(hg, hr, out / "joint_histogram.png")
    real_diffs = metrics.one_step_differences(seqs)
    figures.plot_derivative_histograms(real_diffs, report.derivatives.thresholds, out / "derivatives.png",
                                       report.generated_differences)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_grid(args, cfg) -> int:
    ds = _load_dataset(args.data)
    ws = _windows(ds, cfg)
    out = _outdir(args, cfg)
    n = len(ds.sensors)
    iters = cfg["grid_iterations"] if cfg["grid_iterations"] is not None else cfg["iterations"]
    rows = grid.STANDARD_GRID
    results = grid.run_grid(ds, ws, C.generator_spec(cfg, n), C.critic_spec(cfg, n), C.train_config(cfg, iters),
                            rows, cfg["length"], cfg["eval_windows"], dropout_rate=cfg["dropout"] or 0.2,
                            progress=_say)
    (out / "grid.txt").write_text(grid.to_text(results))
    (out / "grid.json").write_text(grid.to_json(results))
    figures.plot_grid(results, out / "grid.png")
    sys.stdout.write(grid.to_text(results))
    return EXIT_OK


def cmd_tstr(args, cfg) -> int:
    model = _load_model(args.checkpoint)
    ds = _load_dataset(args.data)
    ws = _windows(ds, cfg)
    out = _outdir(args, cfg)
    scaler = model.scaler
    real_train = ws.select("train").scaled(scaler)
    real_test = ws.select("test").scaled(scaler)
    fracs = cfg["anomaly_fraction"]

    def factory(fraction: float, repeat: int):
        seed = int(np.random.SeedSequence(cfg["seed"], spawn_key=(5, repeat)).generate_state(1)[0])
        corpus = bulk_generate(model, real_train, cfg["tstr_samples"], cfg["tstr_scenarios"], cfg["length"],
                               seed=seed, anomaly_fraction=fraction, anomaly_sigma=cfg["tstr_anomaly_sigma"])
        return corpus.to_windows()

    spec = C.predictor_spec(cfg, len(model.sensors))
    table = run_study(real_train, real_test, factory, spec, fracs, scaler, progress=_say)
    (out / "tstr.json").write_text(json.dumps({"schema": "scenariogan-tstr/1", **table.to_dict()},
                                              indent=1, sort_keys=True) + "\n")
    text = table.to_text("scaled") + "\n\n" + table.to_text("physical") + "\n"
    (out / "tstr.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "synth-data": (cmd_synth_data, "write a synthetic sensor dataset"),
    "ingest": (cmd_ingest, "validate a sensor CSV and report gaps and window counts"),
    "train": (cmd_train, "train the conditional WGAN-GP"),
    "generate": (cmd_generate, "generate scenarios (optionally with an anomaly)"),
    "evaluate": (cmd_evaluate, "score synthetic data against real data"),
    "grid": (cmd_grid, "train and score the 12-row hyperparameter grid"),
    "tstr": (cmd_tstr, "train-on-synthetic / test-on-real predictor study"),
}


def build_parser() -> argparse.ArgumentParser:
    epilog = C.describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="scenariogan", description=__doc__.split("\n")[0],
                                     epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=epilog, formatter_class=fmt)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--profile", choices=sorted(C.PROFILES), help="named preset applied before the config file")
        p.add_argument("--override", nargs="+", action="extend", default=[], metavar="KEY=VALUE",
                       help="config overrides (highest precedence)")
        p.add_argument("--out", default=".", help="output directory")
        if name != "synth-data":
            p.add_argument("--data", help="sensor CSV (timestamp,sensor_id,temperature,humidity)")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue training from")
        if name in ("generate", "evaluate", "tstr"):
            p.add_argument("--checkpoint", help="trained model checkpoint")
        if name == "evaluate":
            p.add_argument("--synthetic", help="synthetic CSV (dataset or scenario schema)")
        if name == "generate":
            p.add_argument("--scenarios", type=int, help="scenarios per window (key scenarios)")
            p.add_argument("--length", type=int, help="rollout length (key length)")
            p.add_argument("--anomaly-step", type=int, help="anomaly step (key anomaly_step)")
            p.add_argument("--anomaly-sigma", type=float, help="anomaly noise std (key anomaly_sigma)")
            p.add_argument("--samples", type=int, help="bulk export windows (key samples)")
        if name == "tstr":
            p.add_argument("--anomaly-fraction", type=float, nargs="+",
                           help="anomaly share(s) of synthetic corpora (key anomaly_fraction)")
    return parser


_FLAG_KEYS = ("scenarios", "length", "anomaly_step", "anomaly_sigma", "samples")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = C.resolve(args.profile, args.config, args.override)
        for key in _FLAG_KEYS:
            if getattr(args, key, None) is not None:
                cfg[key] = getattr(args, key)
        if getattr(args, "anomaly_fraction", None) is not None:
            cfg["anomaly_fraction"] = tuple(args.anomaly_fraction)
        return COMMANDS[args.command][0](args, cfg)
    except (C.ConfigError, UsageError, DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, TrainingDiverged) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
