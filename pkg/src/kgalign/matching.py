"""Relation-aware neighbourhood matching for entity pairs and entity-aware
matching for relation pairs.

Scalar functions score one pair directly from the indexes; the ``*_scores``
functions score many candidate pairs at once with sparse row products and are
what the iteration loop uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .graph import NeighborIndex, PairIndexes


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentSets:
    """Current one-to-one entity and relation correspondences (KG1 id -> KG2 id)."""

    entities: dict[int, int] = field(default_factory=dict)
    relations: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("entities", "relations"):
            m = getattr(self, name)
            if len(set(m.values())) != len(m):
                raise MatchingError(f"{name} alignment is not injective")

    @classmethod
    def from_pairs(cls, entities=(), relations=()) -> AlignmentSets:
        return cls({int(a): int(b) for a, b in entities}, {int(a): int(b) for a, b in relations})

    def entity_pairs(self) -> set[tuple[int, int]]:
        return set(self.entities.items())

    def relation_pairs(self) -> set[tuple[int, int]]:
        return set(self.relations.items())

    def entity_array(self, n: int) -> np.ndarray:
        return _dict_array(self.entities, n)

    def relation_array(self, n: int) -> np.ndarray:
        return _dict_array(self.relations, n)


def _dict_array(m: dict[int, int], n: int) -> np.ndarray:
    out = np.full(n, -1, dtype=np.int64)
    if m:
        keys = np.fromiter(m.keys(), dtype=np.int64, count=len(m))
        vals = np.fromiter(m.values(), dtype=np.int64, count=len(m))
        out[keys] = vals
    return out


# -- scalar forms -------------------------------------------------------------------


def mapping_probability(r: int, n: int, index: NeighborIndex) -> float:
    """``1 / |{e : (e, r, n) in T}|``."""
    count = index.head_count(r, n)
    if count == 0:
        raise MatchingError(f"(relation {r}, entity {n}) never occurs as (., r, n)")
    return 1.0 / count


def alignment_probability(r1: int, r2: int, n1: int, n2: int, idx1: NeighborIndex, idx2: NeighborIndex) -> float:
    return mapping_probability(r1, n1, idx1) * mapping_probability(r2, n2, idx2)


def neighborhood_match_score(
    ei: int,
    ej: int,
    sets: AlignmentSets,
    idx: PairIndexes,
    use_probability: bool = True,
    use_relations: bool = True,
) -> float:
    """Sum of alignment probabilities over matched (neighbour, relation) tuples,
    divided by ``|N_ei| + |N_ej|``.

    ``use_relations=False`` matches neighbours alone (each matched neighbour pair
    counts 1); ``use_probability=False`` counts every matched tuple as 1.
    """
    denom = len(idx.n1.neighbors(ei)) + len(idx.n2.neighbors(ej))
    if denom == 0:
        return 0.0
    if not use_relations:
        nb2 = set(idx.n2.neighbors(ej).tolist())
        hits = sum(1 for n1 in idx.n1.neighbors(ei).tolist() if sets.entities.get(n1, -1) in nb2)
        return hits / denom
    total = 0.0
    inc2 = set(idx.n2.incidence(ej))
    for r1, n1 in idx.n1.incidence(ei):
        n2 = sets.entities.get(n1)
        r2 = sets.relations.get(r1)
        if n2 is None or r2 is None or (r2, n2) not in inc2:
            continue
        total += alignment_probability(r1, r2, n1, n2, idx.n1, idx.n2) if use_probability else 1.0
    return total / denom


def relation_match_score(ri: int, rj: int, entity_map: dict[int, int], idx: PairIndexes) -> float:
    """``|M^r| / (|S_ri| + |S_rj|)`` with ``M^r`` the pairs whose heads and tails are both aligned."""
    s1 = idx.s1.pairs(ri)
    s2 = idx.s2.pairs(rj)
    denom = len(s1) + len(s2)
    if denom == 0:
        return 0.0
    hits = 0
    for h1, t1 in s1:
        h2, t2 = entity_map.get(h1), entity_map.get(t1)
        if h2 is not None and t2 is not None and (h2, t2) in s2:
            hits += 1
    return hits / denom


def update_entity_distance(embedding_distance, score, weight: float):
    return embedding_distance - weight * score


def update_relation_distance(embedding_distance, score, weight: float):
    return embedding_distance - weight * score


# -- candidates -----------------------------------------------------------------------


def candidate_pairs(src: np.ndarray, tgt: np.ndarray, count: int, chunk: int = 2048):
    """Nearest ``count`` target rows per source row by L1 distance.

    Returns ``(ids, dists)``, each ``(n_src, min(count, n_tgt))``, ascending with
    ties broken by the lower target id.
    """
    k = min(count, tgt.shape[0])
    ids = np.empty((src.shape[0], k), dtype=np.int64)
    dists = np.empty((src.shape[0], k))
    for lo in range(0, src.shape[0], chunk):
        d = cdist(src[lo:lo + chunk], tgt, metric="cityblock")
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        ids[lo:lo + chunk] = order
        dists[lo:lo + chunk] = np.take_along_axis(d, order, axis=1)
    return ids, dists


# -- batched scoring ------------------------------------------------------------------------


def _rowwise_dot(a: sp.csr_matrix, b: sp.csr_matrix, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if len(rows) == 0:
        return np.zeros(0)
    prod = a[rows].multiply(b[cols])
    return np.asarray(prod.sum(axis=1)).ravel()


def _keyed_matrices(rows1, keys1, w1, n_rows1, rows2, keys2, w2, n_rows2):
    cols = np.unique(keys2)
    pos = np.searchsorted(cols, keys1)
    pos_c = np.minimum(pos, max(len(cols) - 1, 0))
    keep = cols[pos_c] == keys1 if len(cols) else np.zeros(len(keys1), dtype=bool)
    a = sp.csr_matrix((w1[keep], (rows1[keep], pos_c[keep])), shape=(n_rows1, len(cols)))
    b = sp.csr_matrix((w2, (rows2, np.searchsorted(cols, keys2))), shape=(n_rows2, len(cols)))
    return a, b


def entity_match_scores(
    rows: np.ndarray,
    cols: np.ndarray,
    sets: AlignmentSets,
    idx: PairIndexes,
    use_probability: bool = True,
    use_relations: bool = True,
) -> np.ndarray:
    """``neighborhood_match_score`` for every pair ``(rows[i], cols[i])``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n1, n2 = idx.n1, idx.n2
    emap = sets.entity_array(n1.num_entities)
    N2 = max(n2.num_entities, 1)
    if use_relations:
        rmap = sets.relation_array(n1.num_relations)
        h1 = n1.incidence_heads()
        t1 = emap[n1.inc_nbr]
        q1 = rmap[n1.inc_rel]
        ok = (t1 >= 0) & (q1 >= 0)
        keys1 = q1[ok] * N2 + t1[ok]
        w1 = (1.0 / n1.head_counts(n1.inc_rel[ok], n1.inc_nbr[ok]) if use_probability
              else np.ones(ok.sum()))
        h2 = n2.incidence_heads()
        keys2 = n2.inc_rel * N2 + n2.inc_nbr
        w2 = 1.0 / n2.head_counts(n2.inc_rel, n2.inc_nbr) if use_probability else np.ones(len(keys2))
        a, b = _keyed_matrices(h1[ok], keys1, w1, n1.num_entities, h2, keys2, w2, n2.num_entities)
    else:
        e1 = np.repeat(np.arange(n1.num_entities), n1.degree())
        t1 = emap[n1.nbr_ids]
        ok = t1 >= 0
        e2 = np.repeat(np.arange(n2.num_entities), n2.degree())
        a, b = _keyed_matrices(e1[ok], t1[ok], np.ones(ok.sum()), n1.num_entities,
                               e2, n2.nbr_ids, np.ones(len(e2)), n2.num_entities)
    num = _rowwise_dot(a, b, rows, cols)
    denom = n1.degree()[rows] + n2.degree()[cols]
    out = np.zeros(len(rows))
    nz = denom > 0
    out[nz] = num[nz] / denom[nz]
    return out


def relation_match_scores(rows: np.ndarray, cols: np.ndarray, sets: AlignmentSets, idx: PairIndexes) -> np.ndarray:
    """``relation_match_score`` for every pair ``(rows[i], cols[i])``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    s1, s2 = idx.s1, idx.s2
    emap = sets.entity_array(idx.n1.num_entities)
    N2 = max(idx.n2.num_entities, 1)
    h, t = emap[s1.heads], emap[s1.tails]
    ok = (h >= 0) & (t >= 0)
    r1 = s1.relation_of_entries()
    keys1 = h[ok] * N2 + t[ok]
    keys2 = s2.heads * N2 + s2.tails
    a, b = _keyed_matrices(r1[ok], keys1, np.ones(ok.sum()), s1.num_relations,
                           s2.relation_of_entries(), keys2, np.ones(len(keys2)), s2.num_relations)
    num = _rowwise_dot(a, b, rows, cols)
    denom = s1.sizes()[rows] + s2.sizes()[cols]
    out = np.zeros(len(rows))
    nz = denom > 0
    out[nz] = num[nz] / denom[nz]
    return out

