"""Checkpoint evaluation over a dataset split.

Queries are the split's sketches; the gallery is either every photo in the
dataset directory ("full", the default, so chance level stays fixed across
splits) or only the split's own instances ("split").  Relevance is the
paired instance in fine-grained mode and the whole category otherwise.
"""

from __future__ import annotations

from pathlib import Path

import torch

from .dataset import Dataset, load_image
from .errors import ContractViolation
from .metrics import accuracy_at_q, mean_average_precision, precision_at_k, rank_stats
from .retrieval import RetrievalIndex, embed_gallery, embed_images, full_ranking


def build_gallery_index(model, split: Dataset, gallery: str = "full") -> RetrievalIndex:
    if gallery == "full":
        ids, tensors = split.gallery()
    elif gallery == "split":
        ids = sorted({p.instance_id for p in split.points})
        tensors = torch.stack(
            [load_image(split.photo_paths[i], split.image_size) for i in ids]
        )
    else:
        raise ContractViolation(f"gallery must be 'full' or 'split', got {gallery!r}")
    meta = [{"category": Path(split.photo_paths[i]).parent.name} for i in ids]
    return embed_gallery(model, tensors, ids, meta)


def evaluate_detailed(
    model,
    split: Dataset,
    gallery: str = "full",
    p_at_k_cap: int = 200,
) -> tuple[dict, list[dict]]:
    """All retrieval metrics plus one detail record per query sketch."""
    if len(split.points) == 0:
        raise ContractViolation(f"split {split.split_name!r} has no query sketches")
    index = build_gallery_index(model, split, gallery)
    points = sorted(split.points, key=lambda p: p.sketch_path)
    sketches = torch.stack([p.sketch() for p in points])
    embs = embed_images(model, sketches)

    id_cat = {i: m.get("category") for i, m in zip(index.photo_ids, index.metadata)}
    relevances, true_ranks, details = [], [], []
    ranks_by_photo: dict[str, list[int]] = {}
    for point, emb in zip(points, embs):
        ranked = full_ranking(index, emb)
        if split.mode == "finegrained":
            rel = [pid == point.instance_id for pid, _ in ranked]
        else:
            rel = [id_cat.get(pid) == point.category_id for pid, _ in ranked]
        relevances.append(rel)
        detail = {
            "sketch": point.sketch_path,
            "instance_id": point.instance_id,
            "category_id": point.category_id,
            "style_id": point.style_id,
            "top_id": ranked[0][0],
            "top_distance": ranked[0][1],
        }
        if point.instance_id in index.photo_ids:
            rank = 1 + [pid for pid, _ in ranked].index(point.instance_id)
            true_ranks.append(rank)
            ranks_by_photo.setdefault(point.instance_id, []).append(rank)
            detail["true_rank"] = rank
        details.append(detail)

    n = len(index)
    k = min(200, p_at_k_cap, n)
    counters: dict[str, int] = {}
    result = {
        "split": split.split_name,
        "mode": split.mode,
        "gallery": gallery,
        "gallery_size": n,
        "n_queries": len(points),
        "map": mean_average_precision(relevances, counters),
        "p_at_k": precision_at_k(relevances, k),
        "k": k,
    }
    if true_ranks:
        for q in (1, 5, 10):
            result[f"acc@{q}"] = accuracy_at_q(true_ranks, min(q, n))
        r_avg, v_avg = rank_stats(ranks_by_photo, counters)
        result["r_avg"] = r_avg
        result["v_avg"] = v_avg
    result["counters"] = counters
    return result, details


def evaluate(
    model,
    split: Dataset,
    gallery: str = "full",
    p_at_k_cap: int = 200,
) -> dict:
    """All retrieval metrics for one split; pure and deterministic."""
    return evaluate_detailed(model, split, gallery, p_at_k_cap)[0]
