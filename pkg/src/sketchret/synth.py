"""Procedural sketch/photo dataset generation.

Each category owns a template of 2-5 closed shapes (ellipses, star
polygons, pie wedges); instances perturb the template so photos within a
category look related but remain individually identifiable.  A photo is
the filled silhouette; a sketch is the outline drawn under a style vector
(stroke width, vertex jitter, corner rounding, slant, segment dropout)
that stands in for one user's hand.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ContractViolation, DatasetError

_SS = 4  # supersampling factor for anti-aliasing
SCHEMA_VERSION = 1


@dataclass
class StyleParams:
    """One synthetic drawing style, fixed per simulated user."""

    stroke_width: float  # px at target size
    jitter_amplitude: float  # px at target size
    corner_rounding: float  # [0, 1]
    slant: float  # degrees
    dropout_rate: float  # [0, 0.5] fraction of segments omitted

    def validate(self) -> "StyleParams":
        if self.stroke_width <= 0:
            raise ContractViolation(f"stroke_width must be > 0, got {self.stroke_width}")
        if self.jitter_amplitude < 0:
            raise ContractViolation("jitter_amplitude must be >= 0")
        if not 0.0 <= self.corner_rounding <= 1.0:
            raise ContractViolation("corner_rounding must be in [0, 1]")
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise ContractViolation("dropout_rate must be in [0, 0.5]")
        return self


@dataclass
class SynthSpec:
    num_categories: int
    instances_per_category: int
    styles_train: int
    styles_heldout: int
    size: int = 64
    seed: int = 0
    mode: str = "finegrained"

    def validate(self) -> "SynthSpec":
        if self.styles_train < 3:
            raise ContractViolation("need at least 3 training styles")
        if self.num_categories < 1 or self.instances_per_category < 1:
            raise ContractViolation("need at least one category and instance")
        if self.styles_heldout < 1:
            raise ContractViolation("need at least one held-out style")
        if self.mode not in ("category", "finegrained"):
            raise ContractViolation(f"unknown mode {self.mode!r}")
        return self


# -- geometry -----------------------------------------------------------------


def _ellipse_points(center, axes, rotation, n=40):
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    pts = np.stack([axes[0] * np.cos(t), axes[1] * np.sin(t)], axis=1)
    c, s = math.cos(rotation), math.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T + np.asarray(center)


def _polygon_points(center, radii, rotation):
    k = len(radii)
    t = rotation + np.linspace(0.0, 2.0 * math.pi, k, endpoint=False)
    return np.stack([radii * np.cos(t), radii * np.sin(t)], axis=1) + np.asarray(center)


def _pie_points(center, radius, start, span, n=24):
    t = np.linspace(start, start + span, n)
    arc = np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1) + np.asarray(center)
    return np.concatenate([arc, np.asarray(center)[None, :]], axis=0)


def shape_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def sample_category_template(rng: np.random.Generator) -> list[dict]:
    """Base shape parameters shared by all instances of one category."""
    n_shapes = int(rng.integers(2, 6))
    template = []
    for _ in range(n_shapes):
        kind = ["ellipse", "polygon", "pie"][int(rng.integers(0, 3))]
        entry = {
            "kind": kind,
            "center": rng.uniform(0.3, 0.7, size=2),
            "size": float(rng.uniform(0.10, 0.24)),
            "rotation": float(rng.uniform(0.0, 2.0 * math.pi)),
        }
        if kind == "ellipse":
            entry["aspect"] = float(rng.uniform(0.4, 1.0))
        elif kind == "polygon":
            k = int(rng.integers(3, 8))
            entry["radii_profile"] = rng.uniform(0.55, 1.0, size=k)
        else:
            entry["span"] = float(rng.uniform(0.7 * math.pi, 1.7 * math.pi))
        template.append(entry)
    return template


def instance_geometry(template: list[dict], rng: np.random.Generator) -> list[np.ndarray]:
    """Perturb a category template into one instance's closed outlines."""
    shapes = []
    for entry in template:
        center = entry["center"] + rng.uniform(-0.09, 0.09, size=2)
        size = entry["size"] * float(rng.uniform(0.7, 1.3))
        rotation = entry["rotation"] + float(rng.uniform(-0.45, 0.45))
        if entry["kind"] == "ellipse":
            pts = _ellipse_points(center, (size, size * entry["aspect"]), rotation)
        elif entry["kind"] == "polygon":
            radii = size * entry["radii_profile"] * rng.uniform(0.8, 1.2,
                                                                size=len(entry["radii_profile"]))
            pts = _polygon_points(center, radii, rotation)
        else:
            pts = _pie_points(center, size, rotation, entry["span"])
        shapes.append(np.clip(pts, 0.03, 0.97))
    return shapes


def _check_geometry(geometry: list[np.ndarray]) -> None:
    if not geometry:
        raise ContractViolation("geometry must contain at least one shape")
    for i, pts in enumerate(geometry):
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ContractViolation(f"shape {i} is not a closed outline of >= 3 points")
        if shape_area(pts) < 1e-4:
            raise ContractViolation(f"shape {i} is degenerate (area < 1e-4)")


def _to_unit_range(img: Image.Image, size: int) -> np.ndarray:
    small = img.resize((size, size), Image.LANCZOS)
    arr = np.asarray(small, dtype=np.float32)
    return arr / 127.5 - 1.0


def render_photo(geometry: list[np.ndarray], size: int) -> np.ndarray:
    """Filled anti-aliased silhouette, float array (size, size) in [-1, 1]."""
    _check_geometry(geometry)
    canvas = Image.new("L", (size * _SS, size * _SS), 0)
    draw = ImageDraw.Draw(canvas)
    for pts in geometry:
        px = [(float(x) * size * _SS, float(y) * size * _SS) for x, y in pts]
        draw.polygon(px, fill=255)
    return np.clip(_to_unit_range(canvas, size), -1.0, 1.0)


def _chaikin(points: np.ndarray, iterations: int) -> np.ndarray:
    pts = points
    for _ in range(iterations):
        nxt = np.roll(pts, -1, axis=0)
        q = 0.75 * pts + 0.25 * nxt
        r = 0.25 * pts + 0.75 * nxt
        pts = np.empty((2 * len(pts), 2))
        pts[0::2], pts[1::2] = q, r
    return pts


def render_sketch(
    geometry: list[np.ndarray],
    style: StyleParams,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Outline drawing under a style, float array (size, size) in [-1, 1]."""
    _check_geometry(geometry)
    style.validate()
    canvas = Image.new("L", (size * _SS, size * _SS), 0)
    draw = ImageDraw.Draw(canvas)
    shear = math.tan(math.radians(style.slant))
    width = max(1, round(style.stroke_width * _SS))
    for pts in geometry:
        pts = _chaikin(pts, round(style.corner_rounding * 3))
        if style.jitter_amplitude > 0:
            pts = pts + rng.normal(0.0, style.jitter_amplitude / size, size=pts.shape)
        pts = pts.copy()
        pts[:, 0] = pts[:, 0] + shear * (pts[:, 1] - 0.5)
        pts = np.clip(pts, 0.01, 0.99)
        n_seg = len(pts)
        keep = np.ones(n_seg, dtype=bool)
        n_drop = round(style.dropout_rate * n_seg)
        if n_drop > 0:
            keep[rng.choice(n_seg, size=n_drop, replace=False)] = False
        px = pts * (size * _SS)
        for i in range(n_seg):
            if not keep[i]:
                continue
            a, b = px[i], px[(i + 1) % n_seg]
            draw.line([tuple(a), tuple(b)], fill=255, width=width)
            r = width / 2
            for p in (a, b):
                draw.ellipse([p[0] - r, p[1] - r, p[0] + r, p[1] + r], fill=255)
    return np.clip(_to_unit_range(canvas, size), -1.0, 1.0)


# -- style pools --------------------------------------------------------------

_TRAIN_RANGES = {
    "stroke_width": (1.5, 3.0),
    "jitter_amplitude": (0.0, 1.2),
    "corner_rounding": (0.0, 0.6),
    "slant": (-12.0, 12.0),
    "dropout_rate": (0.0, 0.12),
}
# Deliberately outside the training envelope (thinner strokes, heavier
# jitter, rounder corners, more dropout) so held-out styles exercise real
# style shift rather than interpolation between seen styles.
_HELDOUT_RANGES = {
    "stroke_width": (1.15, 1.7),
    "jitter_amplitude": (1.1, 1.8),
    "corner_rounding": (0.5, 0.8),
    "slant": (-18.0, 18.0),
    "dropout_rate": (0.1, 0.18),
}


def sample_style(rng: np.random.Generator, heldout: bool) -> StyleParams:
    ranges = _HELDOUT_RANGES if heldout else _TRAIN_RANGES
    return StyleParams(
        **{k: float(rng.uniform(lo, hi)) for k, (lo, hi) in ranges.items()}
    ).validate()


# -- dataset generation -------------------------------------------------------


def _save_png(arr: np.ndarray, path: Path) -> None:
    u8 = np.clip((arr + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def generate_dataset(spec: SynthSpec, out_dir: str | Path) -> dict:
    """Write the on-disk layout and return the manifest dict."""
    spec.validate()
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise DatasetError(f"refusing to write into non-empty directory {out}")
    (out / "photos").mkdir(parents=True, exist_ok=True)
    (out / "sketches").mkdir(parents=True, exist_ok=True)

    n_styles = spec.styles_train + spec.styles_heldout
    styles, style_params = [], {}
    for s in range(n_styles):
        heldout = s >= spec.styles_train
        sid = f"style{s:02d}"
        styles.append(sid)
        rng = np.random.default_rng([spec.seed, 10_000 + s])
        style_params[sid] = sample_style(rng, heldout)

    n_photos = 0
    n_sketches = 0
    for c in range(spec.num_categories):
        cat = f"cat{c:02d}"
        (out / "photos" / cat).mkdir()
        (out / "sketches" / cat).mkdir()
        template = sample_category_template(np.random.default_rng([spec.seed, c]))
        for i in range(spec.instances_per_category):
            inst = f"{cat}_i{i:02d}"
            geometry = instance_geometry(
                template, np.random.default_rng([spec.seed, c, 1 + i])
            )
            _save_png(render_photo(geometry, spec.size), out / "photos" / cat / f"{inst}.png")
            n_photos += 1
            for s, sid in enumerate(styles):
                sketch = render_sketch(
                    geometry,
                    style_params[sid],
                    spec.size,
                    np.random.default_rng([spec.seed, c, 1 + i, 100 + s]),
                )
                _save_png(sketch, out / "sketches" / cat / f"{inst}__{sid}.png")
                n_sketches += 1

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "mode": spec.mode,
        "counts": {
            "categories": spec.num_categories,
            "instances": spec.num_categories * spec.instances_per_category,
            "photos": n_photos,
            "sketches": n_sketches,
        },
        "image_size": spec.size,
        "styles": {
            "train": styles[: spec.styles_train],
            "heldout": styles[spec.styles_train:],
        },
        "style_params": {sid: asdict(p) for sid, p in style_params.items()},
        "seed": spec.seed,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
