"""Iterative refinement: thresholded one-to-one alignment sets alternate with
matching-based distance updates until the sets stop changing.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import IterConfig, MatchConfig
from .encoder import EmbeddingState
from .evaluation import RankingReport, rank_and_score
from .graph import PairIndexes
from .matching import AlignmentSets, candidate_pairs, entity_match_scores, relation_match_scores

logger = logging.getLogger(__name__)

STATE_VERSION = 1


class StateFormatError(ValueError):
    pass


@dataclass
class CandidateTable:
    """Sparse distance matrix: per source row, candidate target ids and distances.

    ``base`` holds embedding distances, ``dist`` the current (possibly matched) ones.
    Rows are kept sorted by ``(dist, id)``.
    """

    ids: np.ndarray
    base: np.ndarray
    dist: np.ndarray
    pinned: np.ndarray

    def sort(self):
        order = np.lexsort((self.ids, self.dist), axis=-1)
        self.ids = np.take_along_axis(self.ids, order, axis=1)
        self.base = np.take_along_axis(self.base, order, axis=1)
        self.dist = np.take_along_axis(self.dist, order, axis=1)
        return self

    def copy(self) -> CandidateTable:
        return CandidateTable(self.ids.copy(), self.base.copy(), self.dist.copy(), self.pinned.copy())

    def lookup(self, src: int, tgt: int) -> float:
        hit = np.flatnonzero(self.ids[src] == tgt)
        return float(self.dist[src, hit[0]]) if len(hit) else float("inf")


@dataclass
class DistanceState:
    entities: CandidateTable
    relations: CandidateTable

    def copy(self) -> DistanceState:
        return DistanceState(self.entities.copy(), self.relations.copy())


def init_distances(emb: EmbeddingState, seeds: np.ndarray, match: MatchConfig | None = None) -> DistanceState:
    """Candidate tables from raw L1 embedding distances, seed rows pinned.

    A seed row holds 0 for its partner and +inf for every other candidate.
    Relation rows are never pinned.
    """
    match = match or MatchConfig()
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
    x1, x2 = emb.entities1(), emb.entities2()
    ids, base = candidate_pairs(x1, x2, match.entity_candidates)
    pinned = np.zeros(len(x1), dtype=bool)
    dist = base.copy()
    for s, t in seeds.tolist():
        pinned[s] = True
        row = ids[s]
        if not (row == t).any():
            row[-1] = t
            base[s, -1] = float(np.abs(x1[s] - x2[t]).sum())
        dist[s] = np.where(row == t, 0.0, np.inf)
    ents = CandidateTable(ids, base, dist, pinned).sort()
    rids, rbase = candidate_pairs(emb.relations1(), emb.relations2(), match.relation_candidates)
    rels = CandidateTable(rids, rbase, rbase.copy(), np.zeros(len(rids), dtype=bool)).sort()
    return DistanceState(ents, rels)


def select_one_to_one(table: CandidateTable, threshold: float) -> dict[int, int]:
    """Take each row's nearest candidate if closer than ``threshold``; resolve
    targets claimed twice by keeping the smaller distance (ties: lower source id).

    Pinned rows always win their target.
    """
    if table.ids.shape[1] == 0:
        return {}
    src = np.arange(table.ids.shape[0])
    tgt = table.ids[:, 0]
    d = table.dist[:, 0]
    ok = (d < threshold) | table.pinned
    src, tgt, d, pri = src[ok], tgt[ok], d[ok], table.pinned[ok]
    order = np.lexsort((src, d, ~pri, tgt))
    tgt_sorted = tgt[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = tgt_sorted[1:] != tgt_sorted[:-1]
    win = order[first]
    return dict(zip(src[win].tolist(), tgt[win].tolist()))


def update_alignment_sets(state: DistanceState, cfg: IterConfig | None = None) -> AlignmentSets:
    cfg = cfg or IterConfig()
    return AlignmentSets(
        select_one_to_one(state.entities, cfg.entity_threshold),
        select_one_to_one(state.relations, cfg.relation_threshold),
    )


def update_entity_distances(table: CandidateTable, sets: AlignmentSets, idx: PairIndexes, match: MatchConfig):
    free = np.flatnonzero(~table.pinned)
    k = table.ids.shape[1]
    rows = np.repeat(free, k)
    cols = table.ids[free].reshape(-1)
    scores = entity_match_scores(rows, cols, sets, idx, match.use_probability, match.use_relations)
    table.dist[free] = table.base[free] - match.entity_weight * scores.reshape(len(free), k)
    return table.sort()


def update_relation_distances(table: CandidateTable, sets: AlignmentSets, idx: PairIndexes, match: MatchConfig):
    k = table.ids.shape[1]
    rows = np.repeat(np.arange(table.ids.shape[0]), k)
    scores = relation_match_scores(rows, table.ids.reshape(-1), sets, idx)
    table.dist = table.base - match.relation_weight * scores.reshape(table.ids.shape)
    return table.sort()


@dataclass
class IterationRecord:
    iteration: int
    entity_pairs: int
    relation_pairs: int
    entity_report: RankingReport | None = None
    relation_report: RankingReport | None = None


@dataclass
class IterationResult:
    state: DistanceState
    sets: AlignmentSets
    history: list[IterationRecord] = field(default_factory=list)
    converged: bool = False


def run_iterations(
    emb: EmbeddingState,
    seeds: np.ndarray,
    idx: PairIndexes,
    match: MatchConfig | None = None,
    cfg: IterConfig | None = None,
    entity_truth: np.ndarray | None = None,
    relation_truth: np.ndarray | None = None,
    ks=(1, 10),
    variant: str = "full",
    state: DistanceState | None = None,
    on_iteration=None,
) -> IterationResult:
    """Alternate alignment-set selection and distance updates for up to ``max_iters`` rounds.

    Stops early once an iteration reproduces the previous alignment sets, since the
    distances it would produce are then identical too. ``on_iteration(record, state,
    sets)`` is called after every completed round.
    """
    match = match or MatchConfig()
    cfg = cfg or IterConfig()
    state = state if state is not None else init_distances(emb, seeds, match)
    prev: AlignmentSets | None = None
    history = []
    sets = AlignmentSets()
    converged = False
    for it in range(1, cfg.max_iters + 1):
        sets = update_alignment_sets(state, cfg)
        if cfg.stop_on_fixed_point and prev is not None and sets == prev:
            converged = True
            logger.info("alignment sets unchanged at iteration %d; stopping", it)
            break
        update_entity_distances(state.entities, sets, idx, match)
        update_relation_distances(state.relations, sets, idx, match)
        rec = IterationRecord(it, len(sets.entities), len(sets.relations))
        if entity_truth is not None and len(entity_truth):
            rec.entity_report = rank_and_score(
                state.entities.ids, state.entities.dist, entity_truth, ks, "entity", variant,
                exclude_rows=state.entities.pinned)
        if relation_truth is not None and len(relation_truth):
            rec.relation_report = rank_and_score(
                state.relations.ids, state.relations.dist, relation_truth, ks, "relation", variant)
        history.append(rec)
        if on_iteration is not None:
            on_iteration(rec, state, sets)
        logger.info("iteration %d: |L_e|=%d |L_r|=%d%s", it, rec.entity_pairs, rec.relation_pairs,
                    f" {rec.entity_report.summary()}" if rec.entity_report else "")
        prev = sets
    return IterationResult(state, sets, history, converged)


# -- state dump -----------------------------------------------------------------------


def save_state(path: str | Path, state: DistanceState, sets: AlignmentSets, iteration: int,
               entity_raw=None, relation_raw=None, extra: dict | None = None):
    arrays = {}
    for name, table in (("ent", state.entities), ("rel", state.relations)):
        arrays[f"{name}/ids"] = table.ids
        arrays[f"{name}/base"] = table.base
        arrays[f"{name}/dist"] = table.dist
        arrays[f"{name}/pinned"] = table.pinned
    arrays["sets/entities"] = np.array(sorted(sets.entities.items()), dtype=np.int64).reshape(-1, 2)
    arrays["sets/relations"] = np.array(sorted(sets.relations.items()), dtype=np.int64).reshape(-1, 2)
    if entity_raw is not None:
        arrays["raw/ent1"], arrays["raw/ent2"] = (np.asarray(a) for a in entity_raw)
    if relation_raw is not None:
        arrays["raw/rel1"], arrays["raw/rel2"] = (np.asarray(a) for a in relation_raw)
    meta = {"version": STATE_VERSION, "iteration": iteration, **(extra or {})}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


@dataclass
class LoadedState:
    state: DistanceState
    sets: AlignmentSets
    meta: dict
    raw: dict[str, np.ndarray]


def load_state(path: str | Path) -> LoadedState:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != STATE_VERSION:
            raise StateFormatError(f"state dump version {meta.get('version')} != {STATE_VERSION}")
        tables = {
            name: CandidateTable(data[f"{name}/ids"], data[f"{name}/base"], data[f"{name}/dist"],
                                 data[f"{name}/pinned"])
            for name in ("ent", "rel")
        }
        sets = AlignmentSets.from_pairs(data["sets/entities"].tolist(), data["sets/relations"].tolist())
        raw = {k[4:]: data[k] for k in data.files if k.startswith("raw/")}
    return LoadedState(DistanceState(tables["ent"], tables["rel"]), sets, meta, raw)
