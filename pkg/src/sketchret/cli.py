"""Command-line entry points for the full pipeline.

Subcommands: synth, train, eval, index, serve, gradcheck.  Success exits 0;
usage problems exit 2 with click's usage text; runtime failures exit 1
with a single ``error: <Type>: <message>`` line on stderr.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .errors import CheckpointError, ContractViolation, DatasetError


def _fail(exc: Exception) -> None:
    click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    sys.exit(1)


@click.group()
@click.version_option(package_name="sketchret", prog_name="sketchret")
def main() -> None:
    """Style-agnostic sketch-based image retrieval pipeline."""


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Output dataset directory.")
@click.option("--seed", default=0, show_default=True)
@click.option("--categories", default=8, show_default=True)
@click.option("--instances", default=8, show_default=True)
@click.option("--styles", default=3, show_default=True, help="Training styles.")
@click.option("--heldout-styles", default=2, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--mode", default="finegrained", show_default=True,
              type=click.Choice(["finegrained", "category"]))
def synth(out, seed, categories, instances, styles, heldout_styles, size, mode) -> None:
    """Generate a synthetic style-diverse sketch/photo dataset."""
    from .synth import SynthSpec, generate_dataset

    try:
        manifest = generate_dataset(
            SynthSpec(
                num_categories=categories,
                instances_per_category=instances,
                styles_train=styles,
                styles_heldout=heldout_styles,
                size=size,
                seed=seed,
                mode=mode,
            ),
            out,
        )
    except (ContractViolation, DatasetError) as e:
        _fail(e)
    click.echo(json.dumps({"out": str(out), "counts": manifest["counts"]}, sort_keys=True))


def _load_config(config_path, overrides: dict):
    from .config import TrainConfig

    data = json.loads(Path(config_path).read_text()) if config_path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(data)


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON config mirroring TrainConfig fields.")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--warmup-epochs", type=int, default=None)
@click.option("--meta-batch", type=int, default=None)
@click.option("--d", type=int, default=None)
@click.option("--image-size", type=int, default=None)
@click.option("--no-ft", is_flag=True, default=False, help="Ablation: drop FT layers.")
@click.option("--no-regd", is_flag=True, default=False, help="Ablation: freeze psi at 0.")
@click.option("--fixed-ft", is_flag=True, default=False, help="Ablation: fixed FT spreads.")
@click.option("--no-meta", is_flag=True, default=False, help="Ablation: no episodic phase.")
@click.option("--quiet", is_flag=True, default=False)
def train(data, out, config_path, seed, epochs, warmup_epochs, meta_batch, d,
          image_size, no_ft, no_regd, fixed_ft, no_meta, quiet) -> None:
    """Run warm-up plus meta-training; writes checkpoints, a log, and figures."""
    from .report import write_train_report
    from .trainer import train as run_train

    overrides = {
        "seed": seed, "epochs": epochs, "warmup_epochs": warmup_epochs,
        "meta_batch": meta_batch, "d": d, "image_size": image_size,
        "no_ft": no_ft or None, "no_regd": no_regd or None,
        "fixed_ft": fixed_ft or None, "no_meta": no_meta or None,
    }
    try:
        cfg = _load_config(config_path, overrides)
    except (ContractViolation, json.JSONDecodeError) as e:
        _fail(e)
    if not quiet:
        click.echo(f"training for {cfg.epochs} epochs "
                   f"({cfg.warmup_epochs} warm-up) into {out}", err=True)
    try:
        ckpt_path = run_train(cfg, data, out)
        figures = write_train_report(Path(out) / "train_log.jsonl", Path(out) / "report")
    except (ContractViolation, DatasetError, CheckpointError) as e:
        _fail(e)
    click.echo(json.dumps(
        {"checkpoint": str(ckpt_path), "report": [str(p) for p in figures]},
        sort_keys=True,
    ))


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["test", "meta_val", "meta_train", "all"]))
@click.option("--gallery", default="full", show_default=True,
              type=click.Choice(["full", "split"]))
@click.option("--report-dir", type=click.Path(), default=None,
              help="Also write figures and CSV reports here.")
def eval_cmd(ckpt, data, split, gallery, report_dir) -> None:
    """Evaluate a checkpoint; prints the metrics JSON on standard output."""
    from .checkpoint import load_model
    from .dataset import load_dataset, split_dataset
    from .evaluation import evaluate_detailed

    try:
        model, checkpoint = load_model(ckpt)
        dataset = load_dataset(data)
        if split == "all":
            target = dataset
        else:
            parts = split_dataset(dataset, seed=checkpoint.config.seed)
            target = dict(zip(("meta_train", "meta_val", "test"), parts))[split]
        metrics, details = evaluate_detailed(model, target, gallery=gallery)
        metrics["checkpoint_hash"] = checkpoint.model_version
        if report_dir:
            from .report import write_eval_report

            write_eval_report(metrics, details, report_dir)
    except (ContractViolation, DatasetError, CheckpointError) as e:
        _fail(e)
    click.echo(json.dumps(metrics, sort_keys=True))


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
def index(ckpt, data, out) -> None:
    """Embed the photo gallery and write a binary index file."""
    from .checkpoint import load_model
    from .dataset import load_dataset
    from .evaluation import build_gallery_index
    from .retrieval import save_index

    try:
        model, _ = load_model(ckpt)
        dataset = load_dataset(data)
        idx = build_gallery_index(model, dataset, gallery="full")
        save_index(idx, out)
    except (ContractViolation, DatasetError, CheckpointError) as e:
        _fail(e)
    click.echo(json.dumps({"index": str(out), "size": len(idx), "d": idx.d},
                          sort_keys=True))


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--index", "index_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True,
              help="Listen port; the SMUP_PORT environment variable wins if set.")
@click.option("--static", "static_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Optional directory of UI assets to serve at /.")
def serve(ckpt, index_path, data, host, port, static_dir) -> None:
    """Start the HTTP retrieval service."""
    import uvicorn

    from .service import build_state, create_app

    env_port = os.environ.get("SMUP_PORT")
    if env_port is not None:
        try:
            port = int(env_port)
        except ValueError:
            _fail(ContractViolation(f"SMUP_PORT must be an integer, got {env_port!r}"))
    try:
        state = build_state(ckpt, index_path, data)
    except (ContractViolation, DatasetError, CheckpointError) as e:
        _fail(e)
    app = create_app(state, static_dir=static_dir)
    click.echo(f"serving {len(state.index)} photos on {host}:{port}", err=True)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
def gradcheck() -> None:
    """Run all finite-difference and bilevel gradient oracles."""
    from .gradcheck import run_all

    report = run_all(verbose=True)
    if not report["ok"]:
        click.echo("error: GradcheckFailure: at least one gradient check failed", err=True)
        sys.exit(1)
    click.echo("all gradient checks passed")


if __name__ == "__main__":
    main()
