"""End-to-end run: augment, train, iterate, score."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .encoder import EmbeddingState
from .evaluation import RankingReport, fold_relation_truth, rank_and_score
from .graph import GraphPair, PairIndexes, build_pair_indexes
from .io import Dataset, SeedAlignments, split_pairs
from .iterate import IterationResult, run_iterations
from .training import EpochRecord, Trainer

logger = logging.getLogger(__name__)


def variant_config(cfg: RunConfig, variant: str | None = None) -> RunConfig:
    """Config with the ablation switches for ``variant`` applied."""
    variant = variant or cfg.variant
    updates = {"variant": variant}
    if variant == "-AP":
        updates["use_probability"] = False
    elif variant == "-IS":
        updates["max_iters"] = 1
    elif variant == "-RM":
        updates["use_relations"] = False
    return cfg.with_updates(updates)


@dataclass
class Prepared:
    """An augmented pair with its indexes, features and id-space bookkeeping."""

    dataset: Dataset
    pair: GraphPair
    indexes: PairIndexes
    features: np.ndarray

    @property
    def seeds(self) -> SeedAlignments:
        return self.dataset.seeds

    def global_positives(self) -> np.ndarray:
        return self.seeds.train + np.array([0, self.pair.entity_offset])

    def relation_truth(self, fold: bool = True) -> np.ndarray | None:
        truth = self.dataset.relation_truth
        if truth is None:
            return None
        return fold_relation_truth(truth, self.pair.g1.base_relations, self.pair.g2.base_relations, fold)


def prepare(dataset: Dataset, cfg: RunConfig) -> Prepared:
    pair = dataset.pair.augmented()
    dataset.seeds.check_against(pair)
    features = dataset.features
    if features is None:
        logger.warning("no entity features supplied; using N(0, 1/dim) random features")
        rng = np.random.default_rng(cfg.seed)
        features = rng.normal(0.0, 1.0 / np.sqrt(cfg.encoder.dim), size=(pair.num_entities, cfg.encoder.dim))
    if features.shape != (pair.num_entities, cfg.encoder.dim):
        raise ValueError(
            f"feature matrix {features.shape} does not match ({pair.num_entities}, {cfg.encoder.dim})")
    return Prepared(dataset, pair, build_pair_indexes(pair), np.asarray(features, dtype=np.float64))


def train_embeddings(prep: Prepared, cfg: RunConfig) -> tuple[EmbeddingState, list[EpochRecord]]:
    trainer = Trainer(prep.pair, prep.features, prep.global_positives(), cfg.train, cfg.encoder, cfg.seed)
    trainer.run()
    return trainer.embeddings(), trainer.log


def align(prep: Prepared, emb: EmbeddingState, cfg: RunConfig, variant: str | None = None,
          on_iteration=None) -> IterationResult:
    vcfg = variant_config(cfg, variant)
    return run_iterations(
        emb,
        prep.seeds.train,
        prep.indexes,
        vcfg.match,
        vcfg.iterate,
        entity_truth=prep.seeds.test,
        relation_truth=prep.relation_truth(cfg.fold_reverse),
        ks=cfg.ks,
        variant=vcfg.variant,
        on_iteration=on_iteration,
    )


@dataclass
class RunResult:
    config: RunConfig
    embeddings: EmbeddingState
    train_log: list[EpochRecord]
    result: IterationResult
    entity_report: RankingReport
    relation_report: RankingReport | None


def final_reports(prep: Prepared, result: IterationResult, cfg: RunConfig, variant: str):
    st = result.state
    ent = rank_and_score(st.entities.ids, st.entities.dist, prep.seeds.test, cfg.ks, "entity", variant,
                         exclude_rows=st.entities.pinned)
    rel = None
    truth = prep.relation_truth(cfg.fold_reverse)
    if truth is not None and len(truth):
        rel = rank_and_score(st.relations.ids, st.relations.dist, truth, cfg.ks, "relation", variant)
    return ent, rel


def run_pipeline(dataset: Dataset, cfg: RunConfig, prep: Prepared | None = None,
                 embeddings: tuple[EmbeddingState, list[EpochRecord]] | None = None) -> RunResult:
    cfg = cfg.validate()
    prep = prep or prepare(dataset, cfg)
    emb, log = embeddings if embeddings is not None else train_embeddings(prep, cfg)
    result = align(prep, emb, cfg)
    ent, rel = final_reports(prep, result, cfg, cfg.variant)
    return RunResult(cfg, emb, log, result, ent, rel)


def with_seed_ratio(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Re-split the dataset's full ground truth at ``ratio`` under ``seed``."""
    return dataclasses.replace(dataset, seeds=split_pairs(dataset.seeds.all, ratio, seed))
