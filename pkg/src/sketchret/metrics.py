"""Retrieval evaluation metrics.

All functions are pure numpy on pre-ranked inputs.  Optional ``counters``
dicts collect warning counts (queries without relevant items, photos with
too few styles for a variance) without changing return types.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def _as_bool_rows(relevances) -> list[np.ndarray]:
    rows = [np.asarray(r, dtype=bool) for r in relevances]
    if not rows:
        raise ContractViolation("need at least one query")
    return rows


def average_precision(relevance) -> float:
    """AP over a full ranking: mean of precision at each relevant rank."""
    rel = np.asarray(relevance, dtype=bool)
    if not rel.any():
        raise ContractViolation("average_precision needs at least one relevant item")
    ranks = np.flatnonzero(rel) + 1
    hits = np.arange(1, len(ranks) + 1)
    return float(np.mean(hits / ranks))


def mean_average_precision(relevances, counters: dict | None = None) -> float:
    """mAP over full rankings; queries with no relevant item are excluded."""
    rows = _as_bool_rows(relevances)
    aps, excluded = [], 0
    for rel in rows:
        if rel.any():
            aps.append(average_precision(rel))
        else:
            excluded += 1
    if counters is not None:
        counters["queries_without_relevant"] = counters.get("queries_without_relevant", 0) + excluded
    if not aps:
        raise ContractViolation("every query had zero relevant items")
    return float(np.mean(aps))


def precision_at_k(relevances, k: int) -> float:
    """Mean over queries of the fraction of relevant items in the top k."""
    rows = _as_bool_rows(relevances)
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    for rel in rows:
        if k > len(rel):
            raise ContractViolation(f"k={k} exceeds gallery size {len(rel)}")
    return float(np.mean([rel[:k].sum() / k for rel in rows]))


def accuracy_at_q(true_match_ranks, q: int) -> float:
    """Fraction of queries whose single true match ranks within the top q."""
    ranks = np.asarray(true_match_ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ContractViolation("need at least one query rank")
    if (ranks < 1).any():
        raise ContractViolation("ranks are 1-based and must be >= 1")
    if q < 1:
        raise ContractViolation(f"q must be >= 1, got {q}")
    return float(np.mean(ranks <= q))


def rank_stats(ranks_by_photo: dict, counters: dict | None = None) -> tuple[float, float]:
    """Mean retrieval rank and mean per-photo rank variance across styles.

    R_avg averages each photo's mean style rank; V_avg averages population
    variances, skipping photos with fewer than 2 style ranks (counted in
    ``counters['photos_without_variance']``).
    """
    if not ranks_by_photo:
        raise ContractViolation("need at least one photo with ranks")
    means, variances, skipped = [], [], 0
    for photo in sorted(ranks_by_photo):
        ranks = np.asarray(ranks_by_photo[photo], dtype=np.float64)
        if ranks.size == 0:
            raise ContractViolation(f"photo {photo!r} has no ranks")
        means.append(float(ranks.mean()))
        if ranks.size >= 2:
            variances.append(float(ranks.var()))  # population variance
        else:
            skipped += 1
    if counters is not None:
        counters["photos_without_variance"] = counters.get("photos_without_variance", 0) + skipped
    r_avg = float(np.mean(means))
    v_avg = float(np.mean(variances)) if variances else 0.0
    return r_avg, v_avg
