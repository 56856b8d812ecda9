"""On-disk dataset loading and split management.

Layout: ``root/manifest.json``, ``root/photos/<category>/<instance>.png``,
``root/sketches/<category>/<instance>__<style>.png``.  Anything arranged
this way loads, not just the synthetic generator's output.

A task is a photo instance in fine-grained mode and a category otherwise.
Splits are per-category over instances (or pairs), with held-out styles
confined to the test split when the manifest declares any.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ContractViolation, DatasetError

_SUPPORTED_SCHEMA = {1}


@lru_cache(maxsize=None)
def _load_image_cached(path: str) -> torch.Tensor:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32)
    return torch.from_numpy(arr / 127.5 - 1.0).unsqueeze(0)


def load_image(path: str | Path, image_size: int | None = None) -> torch.Tensor:
    """Decode a grayscale PNG to a (1, H, W) float tensor in [-1, 1]."""
    p = Path(path)
    if not p.is_file():
        raise DatasetError(f"missing image file: {p}")
    t = _load_image_cached(str(p))
    if image_size is not None and t.shape[-1] != image_size:
        raise DatasetError(f"{p} is {t.shape[-2]}x{t.shape[-1]}, expected {image_size}")
    return t


@dataclass(frozen=True)
class DataPoint:
    """One sketch-photo pair; images decode lazily on access."""

    sketch_path: str
    photo_path: str
    category_id: str
    instance_id: str
    style_id: str

    def sketch(self) -> torch.Tensor:
        return load_image(self.sketch_path)

    def photo(self) -> torch.Tensor:
        return load_image(self.photo_path)


@dataclass(frozen=True)
class Dataset:
    """Immutable point index over one split (or the whole directory)."""

    root: str
    mode: str
    image_size: int
    points: tuple[DataPoint, ...]
    photo_paths: dict[str, str]  # full gallery: instance_id -> path, all splits
    styles_train: tuple[str, ...]
    styles_heldout: tuple[str, ...]
    split_name: str = "all"

    def __len__(self) -> int:
        return len(self.points)

    def task_of(self, point: DataPoint) -> str:
        return point.instance_id if self.mode == "finegrained" else point.category_id

    def tasks(self) -> list[str]:
        return sorted({self.task_of(p) for p in self.points})

    def task_points(self, task_id: str) -> list[DataPoint]:
        pts = [p for p in self.points if self.task_of(p) == task_id]
        if not pts:
            raise ContractViolation(f"unknown task {task_id!r} in split {self.split_name!r}")
        return pts

    def styles(self) -> set[str]:
        return {p.style_id for p in self.points}

    def gallery(self) -> tuple[list[str], torch.Tensor]:
        """All photo instances in the directory, sorted by id, stacked."""
        ids = sorted(self.photo_paths)
        tensors = [load_image(self.photo_paths[i], self.image_size) for i in ids]
        return ids, torch.stack(tensors)


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError(f"malformed dataset: missing {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed manifest.json: {e}") from e
    for key in ("schema_version", "mode", "counts", "image_size", "styles"):
        if key not in manifest:
            raise DatasetError(f"manifest missing field {key!r}")
    if manifest["schema_version"] not in _SUPPORTED_SCHEMA:
        raise DatasetError(f"unsupported schema_version {manifest['schema_version']}")

    photo_paths: dict[str, str] = {}
    categories: dict[str, str] = {}
    for photo in sorted((root / "photos").glob("*/*.png")):
        inst = photo.stem
        if inst in photo_paths:
            raise DatasetError(
                f"instance {inst!r} has two photos: {photo_paths[inst]} and {photo}"
            )
        photo_paths[inst] = str(photo)
        categories[inst] = photo.parent.name

    points = []
    for sketch in sorted((root / "sketches").glob("*/*.png")):
        name = sketch.stem
        if "__" not in name:
            raise DatasetError(f"sketch filename lacks '__<style>' suffix: {sketch}")
        inst, style = name.rsplit("__", 1)
        if inst not in photo_paths:
            raise DatasetError(f"sketch {sketch} has no paired photo for instance {inst!r}")
        points.append(
            DataPoint(
                sketch_path=str(sketch),
                photo_path=photo_paths[inst],
                category_id=sketch.parent.name,
                instance_id=inst,
                style_id=style,
            )
        )
    if not points:
        raise DatasetError(f"no sketches found under {root}")

    counts = manifest["counts"]
    if counts.get("photos") not in (None, len(photo_paths)):
        raise DatasetError(
            f"manifest declares {counts['photos']} photos, found {len(photo_paths)}"
        )
    if counts.get("sketches") not in (None, len(points)):
        raise DatasetError(
            f"manifest declares {counts['sketches']} sketches, found {len(points)}"
        )

    ds = Dataset(
        root=str(root),
        mode=manifest["mode"],
        image_size=int(manifest["image_size"]),
        points=tuple(points),
        photo_paths=photo_paths,
        styles_train=tuple(manifest["styles"].get("train", [])),
        styles_heldout=tuple(manifest["styles"].get("heldout", [])),
    )
    load_image(points[0].photo_path, ds.image_size)  # fail fast on size mismatch
    return ds


def _largest_remainder(n: int, ratios: tuple[float, float, float]) -> list[int]:
    raw = [n * r for r in ratios]
    alloc = [int(x) for x in raw]
    for _ in range(n - sum(alloc)):
        fracs = [x - a for x, a in zip(raw, alloc)]
        alloc[fracs.index(max(fracs))] += 1
    return alloc


def split_dataset(
    dataset: Dataset,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Per-category stratified split into (meta_train, meta_val, test).

    Units are instances in fine-grained mode and pairs otherwise.  When the
    manifest declares held-out styles, test keeps only those and the other
    two splits keep only training styles.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractViolation(f"ratios must sum to 1, got {ratios}")
    import random as _random

    unit_split: dict[str, int] = {}  # unit key -> 0 train / 1 val / 2 test
    by_cat: dict[str, list[str]] = {}
    if dataset.mode == "finegrained":
        for inst, path in dataset.photo_paths.items():
            by_cat.setdefault(Path(path).parent.name, []).append(inst)
    else:
        for i, p in enumerate(dataset.points):
            by_cat.setdefault(p.category_id, []).append(f"{i}")

    for cat in sorted(by_cat):
        units = sorted(by_cat[cat])
        alloc = _largest_remainder(len(units), ratios)
        bad = [i for i, (a, r) in enumerate(zip(alloc, ratios)) if r > 0 and a == 0]
        if bad:
            names = ["meta_train", "meta_val", "test"]
            raise DatasetError(
                f"category {cat!r} has {len(units)} units, too few for non-empty "
                f"{', '.join(names[i] for i in bad)}"
            )
        _random.Random(f"{seed}:{cat}").shuffle(units)
        idx = 0
        for part, count in enumerate(alloc):
            for u in units[idx: idx + count]:
                unit_split[u] = part
            idx += count

    heldout = set(dataset.styles_heldout)

    def keep(point: DataPoint, i: int, part: int) -> bool:
        key = point.instance_id if dataset.mode == "finegrained" else f"{i}"
        if unit_split[key] != part:
            return False
        if not heldout:
            return True
        return (point.style_id in heldout) == (part == 2)

    names = ("meta_train", "meta_val", "test")
    out = []
    for part, name in enumerate(names):
        pts = tuple(p for i, p in enumerate(dataset.points) if keep(p, i, part))
        out.append(replace(dataset, points=pts, split_name=name))
    return tuple(out)
