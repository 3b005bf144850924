"""Small-scale CLI runs shared by the CLI and acceptance tests."""

from pathlib import Path

from scenariogan.cli import main

# a narrow network and a short run, so a full pipeline takes seconds
TINY = ["sensors=2", "steps=300", "recurrent_hidden=8", "noise_hidden=8", "gen_dense=8", "embedding_dim=3",
        "critic_channels=4,6", "critic_dense=8", "batch_size=16", "n_critic=2", "iterations=3",
        "eval_windows=20", "progress_every=1"]


def run(*argv, overrides=()) -> int:
    argv = list(argv)
    extra = [*TINY, *overrides]
    return main(argv + ["--override", *extra])


def pipeline(root: Path, overrides=()) -> Path:
    """synth-data -> train -> generate -> evaluate into ``root``; returns root."""
    data, model = root / "data", root / "model"
    assert run("synth-data", "--out", str(data), overrides=overrides) == 0
    csv = str(data / "data.csv")
    assert run("train", "--data", csv, "--out", str(model), overrides=overrides) == 0
    ckpt = str(model / "model.ckpt")
    assert run("generate", "--data", csv, "--checkpoint", ckpt, "--out", str(root / "gen"),
               overrides=overrides) == 0
    assert run("evaluate", "--data", csv, "--checkpoint", ckpt, "--out", str(root / "eval"),
               overrides=overrides) == 0
    return root


def artifacts(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
