"""Figure and CSV rendering for training logs and evaluation results.

Reports land next to each other in one directory: delimited files for
machines, PNG figures for eyes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path, written: list[Path]) -> None:
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    written.append(path)


def write_train_report(log_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Loss curves and per-epoch CSV from a JSONL training log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = [json.loads(line) for line in Path(log_path).read_text().splitlines() if line]
    if not records:
        raise ValueError(f"empty training log: {log_path}")
    written: list[Path] = []

    fields = ["epoch", "phase", "loss", "rec", "kl", "tri_inv", "tri_f", "lambda1"]
    with open(out / "training_curve.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(fields + ["meta_val_acc1"])
        for r in records:
            row = [r.get(k, "") for k in fields]
            row.append(r.get("eval", {}).get("acc@1", ""))
            wr.writerow(row)
    written.append(out / "training_curve.csv")

    epochs = [r["epoch"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in (("loss", "total"), ("rec", "reconstruction"), ("kl", "KL"),
                       ("tri_inv", "triplet z_inv"), ("tri_f", "triplet z_f")):
        ys = [r.get(key) for r in records]
        if any(y is not None for y in ys):
            ax.plot(epochs, ys, label=label, linewidth=1.4)
    boundary = next((r["epoch"] for r in records if r.get("phase") == "meta"), None)
    if boundary is not None and boundary > 0:
        ax.axvline(boundary - 0.5, color="gray", linestyle=":", linewidth=1,
                   label="warm-up end")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title("training losses")
    _save(fig, out / "loss_curves.png", written)

    evals = [(r["epoch"], r["eval"]) for r in records if "eval" in r]
    if evals:
        fig, ax = plt.subplots(figsize=(7, 4))
        xs = [e for e, _ in evals]
        for key in ("acc@1", "acc@5", "acc@10"):
            ys = [m.get(key) for _, m in evals]
            if any(y is not None for y in ys):
                ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.2, label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=8)
        ax.set_title("meta-validation retrieval accuracy")
        _save(fig, out / "val_accuracy.png", written)
    return written


def write_eval_report(metrics: dict, details: list[dict], out_dir: str | Path) -> list[Path]:
    """Metric CSV, per-query CSV, rank histogram, and per-style accuracy."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    with open(out / "metrics.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["metric", "value"])
        for k in sorted(metrics):
            if not isinstance(metrics[k], dict):
                wr.writerow([k, metrics[k]])
    written.append(out / "metrics.csv")

    if details:
        keys = sorted({k for d in details for k in d})
        with open(out / "queries.csv", "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=keys)
            wr.writeheader()
            wr.writerows(details)
        written.append(out / "queries.csv")

    ranks = [d["true_rank"] for d in details if "true_rank" in d]
    if ranks:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.hist(ranks, bins=range(1, max(ranks) + 2), color="#4878a8", edgecolor="white")
        ax.set_xlabel("true-match rank")
        ax.set_ylabel("queries")
        ax.set_title(f"rank distribution ({metrics.get('split', '?')} split)")
        _save(fig, out / "rank_histogram.png", written)

        by_style: dict[str, list[int]] = {}
        for d in details:
            if "true_rank" in d:
                by_style.setdefault(d["style_id"], []).append(d["true_rank"])
        if len(by_style) > 1:
            styles = sorted(by_style)
            acc1 = [sum(r == 1 for r in by_style[s]) / len(by_style[s]) for s in styles]
            fig, ax = plt.subplots(figsize=(6, 3.5))
            ax.bar(styles, acc1, color="#6aa84f")
            ax.set_ylabel("acc@1")
            ax.set_ylim(0, 1.02)
            ax.set_title("per-style top-1 accuracy")
            ax.tick_params(axis="x", rotation=45)
            _save(fig, out / "style_accuracy.png", written)
    return written
