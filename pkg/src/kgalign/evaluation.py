"""Hits@k and MRR over candidate-restricted distance tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass
class RankingReport:
    hits: dict[int, float]  # k -> percentage
    mrr: float
    ranks: np.ndarray
    task: str = "entity"
    variant: str = "full"
    missing: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def hits1(self) -> float:
        return self.hits.get(1, float("nan"))

    @property
    def hits10(self) -> float:
        return self.hits.get(10, float("nan"))

    def summary(self) -> str:
        hits = " ".join(f"Hits@{k}={v:.1f}" for k, v in sorted(self.hits.items()))
        return f"[{self.task}/{self.variant}] {hits} MRR={self.mrr:.3f} (n={len(self.ranks)})"


def hits_and_mrr(ranks: np.ndarray, ks=(1, 10)) -> tuple[dict[int, float], float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        raise EvaluationError("no queries to score")
    hits = {int(k): float(100.0 * np.mean(ranks <= k)) for k in ks}
    return hits, float(np.mean(1.0 / ranks))


def rank_and_score(
    ids: np.ndarray,
    dist: np.ndarray,
    truth: np.ndarray,
    ks=(1, 10),
    task: str = "entity",
    variant: str = "full",
    exclude_rows: np.ndarray | None = None,
) -> RankingReport:
    """Rank of the true target within each query row.

    ``ids``/``dist`` are candidate tables (row = source id). Rows are ordered by
    ascending distance, ties by lower target id. A target outside the candidate
    list gets rank ``len(candidates) + 1``. Rows flagged in ``exclude_rows``
    (training seeds) are never scored.
    """
    truth = np.asarray(truth, dtype=np.int64).reshape(-1, 2)
    if exclude_rows is not None and len(truth):
        keep = ~exclude_rows[truth[:, 0]]
        if not keep.all():
            logger.info("skipping %d pinned seed rows among %d queries", int((~keep).sum()), len(truth))
        truth = truth[keep]
    if len(truth) == 0:
        raise EvaluationError("empty ground truth")
    row_ids = ids[truth[:, 0]]
    row_d = dist[truth[:, 0]]
    target_d = np.full(len(truth), np.inf)
    hit = row_ids == truth[:, 1:2]
    found = hit.any(axis=1)
    target_d[found] = row_d[hit]
    # rank = 1 + candidates strictly closer, or equally close with a lower id
    better = (row_d < target_d[:, None]) | ((row_d == target_d[:, None]) & (row_ids < truth[:, 1:2]))
    ranks = 1 + better.sum(axis=1)
    missing = int((~found).sum())
    ranks[~found] = ids.shape[1] + 1
    if missing:
        logger.info("%s: %d of %d true targets fall outside the candidate lists", task, missing, len(truth))
    hits, mrr = hits_and_mrr(ranks, ks)
    return RankingReport(hits, mrr, ranks, task, variant, missing)


def fold_relation_truth(truth: np.ndarray, base1: int, base2: int, fold: bool = True) -> np.ndarray:
    """Forward relation truth, or forward plus mirrored reverse pairs when ``fold`` is off."""
    truth = np.asarray(truth, dtype=np.int64).reshape(-1, 2)
    if fold:
        return truth
    return np.concatenate([truth, truth + np.array([base1, base2])])
