"""Ablation variants and seed-ratio sweeps at desk scale."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .config import VARIANTS, ConfigError, RunConfig
from .evaluation import RankingReport
from .io import Dataset
from .pipeline import Prepared, align, final_reports, prepare, run_pipeline, train_embeddings, with_seed_ratio

logger = logging.getLogger(__name__)


def run_ablation(variant: str, dataset: Dataset, cfg: RunConfig, prep: Prepared | None = None,
                 embeddings=None) -> tuple[RankingReport, RankingReport | None]:
    """Entity and relation reports for one variant.

    Variants only change the matching stage, so trained ``embeddings`` may be shared.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    prep = prep or prepare(dataset, cfg)
    emb, _ = embeddings if embeddings is not None else train_embeddings(prep, cfg)
    result = align(prep, emb, cfg, variant)
    return final_reports(prep, result, cfg, variant)


@dataclass
class SweepRow:
    ratio: float
    entity: RankingReport
    relation: RankingReport | None


def seed_ratio_sweep(ratios, dataset: Dataset, cfg: RunConfig) -> list[SweepRow]:
    """Retrain and evaluate at each seed ratio; splits share ``cfg.seed``."""
    rows = []
    for ratio in ratios:
        if not 0 < ratio < 1:
            raise ConfigError(f"seed ratio must lie in (0, 1), got {ratio}")
        data = with_seed_ratio(dataset, ratio, cfg.seed)
        res = run_pipeline(data, cfg)
        logger.info("ratio %.2f: %s", ratio, res.entity_report.summary())
        rows.append(SweepRow(ratio, res.entity_report, res.relation_report))
    return rows


REPORT_HEADER = "task\tvariant\tdataset\tratio\thits@1\thits@10\tmrr"


def report_line(report: RankingReport, dataset: str, ratio: float) -> str:
    return (f"{report.task}\t{report.variant}\t{dataset}\t{ratio:.2f}\t"
            f"{report.hits1:.1f}\t{report.hits10:.1f}\t{report.mrr:.3f}")
