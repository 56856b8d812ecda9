"""Episodic task sampling and batch assembly.

An episode is one task (photo instance in fine-grained mode, category
otherwise) with disjoint train/validation pair splits and one cross-task
negative photo per pair.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import torch

from .dataset import DataPoint, Dataset, load_image
from .errors import ContractViolation, DatasetError
from .losses import EpisodeBatch

_MAX_RESAMPLES = 100


@dataclass(frozen=True)
class Episode:
    """One sampled task with its pair splits and per-pair negatives.

    Negatives are photo instance ids from other tasks, aligned index-wise
    with the corresponding pair list.  ``seed`` keys the episode's noise
    streams (FT draws, reparameterization, cross-style choice).
    """

    task_id: str
    trn_pairs: tuple[DataPoint, ...]
    val_pairs: tuple[DataPoint, ...]
    trn_negatives: tuple[str, ...]
    val_negatives: tuple[str, ...]
    seed: int = 0

    def validate(self, dataset: Dataset) -> "Episode":
        trn = {p.sketch_path for p in self.trn_pairs}
        val = {p.sketch_path for p in self.val_pairs}
        if trn & val:
            raise ContractViolation("trn and val pairs must be disjoint")
        if len(self.trn_negatives) != len(self.trn_pairs):
            raise ContractViolation("one negative per trn pair required")
        if len(self.val_negatives) != len(self.val_pairs):
            raise ContractViolation("one negative per val pair required")
        for nid in (*self.trn_negatives, *self.val_negatives):
            task = nid if dataset.mode == "finegrained" else _category_of(dataset, nid)
            if task == self.task_id:
                raise ContractViolation(f"negative {nid!r} belongs to the episode's own task")
        return self


def _category_of(dataset: Dataset, instance_id: str) -> str:
    from pathlib import Path

    return Path(dataset.photo_paths[instance_id]).parent.name


def _negative_instances(dataset: Dataset, task_id: str) -> list[str]:
    # Only instances visible in this split's points: training negatives must
    # not touch photos reserved for other splits.
    seen: dict[str, str] = {}
    for p in dataset.points:
        seen[p.instance_id] = p.instance_id if dataset.mode == "finegrained" else p.category_id
    return sorted(inst for inst, task in seen.items() if task != task_id)


def sample_task(
    dataset: Dataset,
    rng: random.Random,
    val_ratio: float = 0.2,
    hard_negatives: dict[str, list[str]] | None = None,
    seed: int = 0,
) -> Episode:
    """Uniformly pick a task and carve out its episode.

    ``hard_negatives`` maps each pair's instance id to candidate negative
    instance ids ranked hardest-first; without it negatives are uniform
    over other-task instances.  Tasks with fewer than 2 pairs are resampled
    a bounded number of times.
    """
    tasks = dataset.tasks()
    if len(tasks) < 2:
        raise ContractViolation("need at least 2 tasks to sample episodes with negatives")
    for _ in range(_MAX_RESAMPLES):
        task_id = tasks[rng.randrange(len(tasks))]
        pairs = dataset.task_points(task_id)
        if len(pairs) >= 2:
            break
    else:
        raise DatasetError(f"no task with >= 2 pairs found after {_MAX_RESAMPLES} resamples")

    pairs = sorted(pairs, key=lambda p: p.sketch_path)
    rng.shuffle(pairs)
    r_i = max(1, math.ceil(val_ratio * len(pairs)))
    r_i = min(r_i, len(pairs) - 1)
    val_pairs = tuple(pairs[:r_i])
    trn_pairs = tuple(pairs[r_i:])

    pool = _negative_instances(dataset, task_id)
    if not pool:
        raise DatasetError(f"no negative candidates outside task {task_id!r}")

    allowed = set(pool)

    def pick_negative(point: DataPoint) -> str:
        if hard_negatives:
            ranked = [n for n in hard_negatives.get(point.instance_id, []) if n in allowed]
            if ranked:
                return ranked[rng.randrange(min(3, len(ranked)))]
        return pool[rng.randrange(len(pool))]

    return Episode(
        task_id=task_id,
        trn_pairs=trn_pairs,
        val_pairs=val_pairs,
        trn_negatives=tuple(pick_negative(p) for p in trn_pairs),
        val_negatives=tuple(pick_negative(p) for p in val_pairs),
        seed=seed,
    ).validate(dataset)


def build_batch(
    pairs: tuple[DataPoint, ...],
    negative_ids: tuple[str, ...],
    dataset: Dataset,
    rng: random.Random,
    cross_enabled: bool = True,
) -> EpisodeBatch:
    """Stack one pair list into aligned tensors with cross-style indices."""
    if len(pairs) != len(negative_ids):
        raise ContractViolation("pairs and negatives must align")
    sketches = torch.stack([p.sketch() for p in pairs])
    photos = torch.stack([p.photo() for p in pairs])
    negatives = torch.stack(
        [load_image(dataset.photo_paths[nid], dataset.image_size) for nid in negative_ids]
    )
    cross = []
    for j, p in enumerate(pairs):
        if not cross_enabled:
            cross.append(-1)
            continue
        candidates = [
            k for k, q in enumerate(pairs)
            if k != j and q.instance_id == p.instance_id and q.style_id != p.style_id
        ]
        cross.append(candidates[rng.randrange(len(candidates))] if candidates else -1)
    return EpisodeBatch(
        sketches=sketches,
        photos=photos,
        negatives=negatives,
        cross_idx=torch.tensor(cross, dtype=torch.long),
        cross_enabled=cross_enabled,
    )
