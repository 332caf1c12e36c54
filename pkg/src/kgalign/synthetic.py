"""Synthetic bilingual KG pairs with known entity and relation correspondences.

A base graph is sampled once; each view keeps every triple independently with
probability ``1 - dropout``. View 2 gets fresh entity and relation numbering.
Features are a shared N(0, 1/dim) vector per base entity plus per-view noise
N(0, noise^2/dim), so ``noise`` is the expected noise-to-signal norm ratio.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .config import ConfigError, format_kv, read_kv_file
from .graph import GraphPair, KnowledgeGraph
from .io import Dataset, SeedAlignments

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    entities: int = 1000
    relations: int = 20
    degree: float = 6.0
    one_to_one: float = 0.5
    fanout_min: int = 2
    fanout_max: int = 5
    dropout: float = 0.1
    dim: int = 300
    noise: float = 0.1
    seed_ratio: float = 0.3
    seed: int = 42

    def __post_init__(self):
        if self.entities < 2 or self.relations < 1 or self.dim < 1:
            raise ConfigError("entities >= 2, relations >= 1 and dim >= 1 required")
        if self.degree <= 0:
            raise ConfigError("degree must be > 0")
        for name in ("one_to_one", "dropout"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0 < self.seed_ratio < 1:
            raise ConfigError("seed_ratio must lie in (0, 1)")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not 1 <= self.fanout_min <= self.fanout_max:
            raise ConfigError("need 1 <= fanout_min <= fanout_max")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> SynthSpec:
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown synth key {key!r}")
            try:
                kwargs[key] = int(raw) if known[key] == "int" else float(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> SynthSpec:
        return cls.from_mapping(read_kv_file(path))

    def to_text(self) -> str:
        return format_kv(asdict(self))


@dataclass(frozen=True)
class SyntheticPair:
    dataset: Dataset
    entity_truth: np.ndarray  # (n, 2) full bijection, local ids
    relation_truth: np.ndarray  # forward relations present in both views
    base_triples: np.ndarray


def _one_to_one(rng, n, budget):
    budget = min(budget, n)
    heads = rng.choice(n, size=budget, replace=False)
    tails = rng.choice(n, size=budget, replace=False)
    keep = heads != tails
    return np.stack([heads[keep], tails[keep]], axis=1)


def _one_to_many(rng, n, budget, lo, hi):
    # every tail has exactly one head under this relation
    tails = rng.permutation(n).tolist()
    hubs = rng.permutation(n).tolist()
    rows = []
    cursor = 0
    for hub in hubs:
        if len(rows) >= budget or cursor >= n:
            break
        fan = min(int(rng.integers(lo, hi + 1)), budget - len(rows))
        taken = 0
        while taken < fan and cursor < n:
            t = tails[cursor]
            cursor += 1
            if t == hub:
                continue
            rows.append((hub, t))
            taken += 1
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def sample_base_graph(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n, nr = spec.entities, spec.relations
    total = int(round(spec.entities * spec.degree))
    budgets = np.full(nr, total // nr)
    budgets[: total % nr] += 1
    n_one = int(round(spec.one_to_one * nr))
    parts = []
    for r in range(nr):
        if r < n_one:
            ht = _one_to_one(rng, n, int(budgets[r]))
        else:
            ht = _one_to_many(rng, n, int(budgets[r]), spec.fanout_min, spec.fanout_max)
        parts.append(np.column_stack([ht[:, 0], np.full(len(ht), r), ht[:, 1]]))
    return np.concatenate(parts).astype(np.int64)


def _view(base, keep, n, ent_perm, rel_names_prefix, ent_names_prefix, rng_rel_perm):
    """Build one view. Returns (kg, local relation id for each base relation or -1)."""
    triples = base[keep]
    present = np.unique(triples[:, 1])
    base_rel_count = int(base[:, 1].max()) + 1 if len(base) else 0
    rel_local = np.full(base_rel_count, -1, dtype=np.int64)
    order = present if rng_rel_perm is None else present[rng_rel_perm(len(present))]
    rel_local[order] = np.arange(len(order))
    mapped = np.column_stack([ent_perm[triples[:, 0]], rel_local[triples[:, 1]], ent_perm[triples[:, 2]]])
    ent_names = [""] * n
    for e in range(n):
        ent_names[ent_perm[e]] = f"{ent_names_prefix}:e{e}"
    rel_names = tuple(f"{rel_names_prefix}:r{r}" for r in order.tolist())
    kg = KnowledgeGraph(n, len(order), mapped, entity_names=tuple(ent_names), relation_names=rel_names)
    return kg, rel_local


def generate_synthetic_pair(spec: SynthSpec) -> SyntheticPair:
    rng = np.random.default_rng(spec.seed)
    n = spec.entities
    base = sample_base_graph(spec, rng)

    keep1 = rng.random(len(base)) >= spec.dropout
    keep2 = rng.random(len(base)) >= spec.dropout
    perm2 = rng.permutation(n)
    rel_perm_seed = rng.integers(2**32)

    ident = np.arange(n)
    g1, rel1 = _view(base, keep1, n, ident, "kg1", "kg1", None)
    rel_rng = np.random.default_rng(rel_perm_seed)
    g2, rel2 = _view(base, keep2, n, perm2, "kg2", "kg2", rel_rng.permutation)

    for side, kg in ((1, g1), (2, g2)):
        isolated = n - len(np.unique(kg.triples[:, [0, 2]]))
        if isolated:
            logger.info("view %d: %d entities have no triples", side, isolated)

    both = (rel1 >= 0) & (rel2 >= 0)
    relation_truth = np.column_stack([rel1[both], rel2[both]])
    entity_truth = np.column_stack([ident, perm2])

    shared = rng.normal(0.0, 1.0 / np.sqrt(spec.dim), size=(n, spec.dim))
    scale = spec.noise / np.sqrt(spec.dim)
    f1 = shared + rng.normal(0.0, scale, size=shared.shape) if spec.noise > 0 else shared.copy()
    f2_base = shared + rng.normal(0.0, scale, size=shared.shape) if spec.noise > 0 else shared.copy()
    f2 = np.empty_like(f2_base)
    f2[perm2] = f2_base

    order = rng.permutation(n)
    n_train = int(round(spec.seed_ratio * n))
    seeds = SeedAlignments(entity_truth[order[:n_train]], entity_truth[order[n_train:]])

    dataset = Dataset(
        pair=GraphPair(g1, g2),
        seeds=seeds,
        features=np.concatenate([f1, f2]),
        entity_raw=(np.arange(n), np.arange(n, 2 * n)),
        relation_raw=(np.arange(g1.num_relations), np.arange(g1.num_relations, g1.num_relations + g2.num_relations)),
        relation_truth=relation_truth,
        name=f"synth-{spec.seed}",
    )
    return SyntheticPair(dataset, entity_truth, relation_truth, base)
