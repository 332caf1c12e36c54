"""Knowledge graph domain model: id spaces, triples, reverse relations and indexes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


def _as_triples(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GraphError(f"triples must have shape (m, 3), got {arr.shape}")
    return arr


def unique_triples(triples: np.ndarray) -> tuple[np.ndarray, int]:
    """Drop duplicate rows, keeping first-occurrence order. Returns (triples, n_dropped)."""
    triples = _as_triples(triples)
    if len(triples) == 0:
        return triples, 0
    _, first = np.unique(triples, axis=0, return_index=True)
    first.sort()
    return triples[first], len(triples) - len(first)


@dataclass(frozen=True)
class KnowledgeGraph:
    """A single KG with dense ids ``0..num_entities`` and ``0..num_relations``.

    ``base_relations`` is set once reverse relations were added; relation ``r`` is
    a reverse relation iff ``r >= base_relations``, and ``rev(r) = r +/- base_relations``.
    """

    num_entities: int
    num_relations: int
    triples: np.ndarray
    base_relations: int | None = None
    entity_names: tuple[str, ...] | None = None
    relation_names: tuple[str, ...] | None = None

    def __post_init__(self):
        triples = _as_triples(self.triples)
        object.__setattr__(self, "triples", triples)
        triples.setflags(write=False)
        if self.num_entities < 0 or self.num_relations < 0:
            raise GraphError("id space sizes must be non-negative")
        if len(triples):
            ents = triples[:, [0, 2]]
            if ents.min() < 0 or ents.max() >= self.num_entities:
                raise GraphError("triple references an unregistered entity id")
            if triples[:, 1].min() < 0 or triples[:, 1].max() >= self.num_relations:
                raise GraphError("triple references an unregistered relation id")
            if len(np.unique(triples, axis=0)) != len(triples):
                raise GraphError("duplicate triples")
        if self.base_relations is not None and self.num_relations != 2 * self.base_relations:
            raise GraphError("augmented graph must have exactly twice its base relations")
        if self.entity_names is not None and len(self.entity_names) != self.num_entities:
            raise GraphError("entity name table does not match the entity id space")
        if self.relation_names is not None and len(self.relation_names) != self.num_relations:
            raise GraphError("relation name table does not match the relation id space")

    @property
    def augmented(self) -> bool:
        return self.base_relations is not None

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def is_reverse(self, r: int) -> bool:
        return self.base_relations is not None and r >= self.base_relations

    def reverse(self, r: int) -> int:
        if self.base_relations is None:
            raise GraphError("graph has no reverse relations")
        b = self.base_relations
        return r - b if r >= b else r + b

    def forward_relations(self) -> np.ndarray:
        n = self.base_relations if self.base_relations is not None else self.num_relations
        return np.arange(n)

    def triple_set(self) -> set[tuple[int, int, int]]:
        return set(map(tuple, self.triples.tolist()))


def add_reverse_relations(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Return a copy of ``kg`` where every ``(h, r, t)`` also has ``(t, r + |R|, h)``."""
    if kg.augmented:
        raise GraphError("graph already carries reverse relations")
    nr = kg.num_relations
    t = kg.triples
    rev = np.stack([t[:, 2], t[:, 1] + nr, t[:, 0]], axis=1) if len(t) else t
    names = None
    if kg.relation_names is not None:
        names = kg.relation_names + tuple(f"{n}^-1" for n in kg.relation_names)
    return KnowledgeGraph(
        num_entities=kg.num_entities,
        num_relations=2 * nr,
        triples=np.concatenate([t, rev]),
        base_relations=nr,
        entity_names=kg.entity_names,
        relation_names=names,
    )


@dataclass(frozen=True)
class GraphPair:
    """Two KGs laid out in one global id space: KG2 ids are shifted past KG1's."""

    g1: KnowledgeGraph
    g2: KnowledgeGraph

    @property
    def entity_offset(self) -> int:
        return self.g1.num_entities

    @property
    def relation_offset(self) -> int:
        return self.g1.num_relations

    @property
    def num_entities(self) -> int:
        return self.g1.num_entities + self.g2.num_entities

    @property
    def num_relations(self) -> int:
        return self.g1.num_relations + self.g2.num_relations

    def global_triples(self) -> np.ndarray:
        t2 = self.g2.triples + np.array([self.entity_offset, self.relation_offset, self.entity_offset])
        return np.concatenate([self.g1.triples, t2]).astype(np.int64)

    def augmented(self) -> GraphPair:
        return GraphPair(add_reverse_relations(self.g1), add_reverse_relations(self.g2))


def _csr_groups(keys: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(keys, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=ptr[1:])
    return order, ptr


@dataclass(frozen=True)
class NeighborIndex:
    """Per-entity neighbour sets, ``(relation, neighbour)`` incidence, head counts.

    ``head_count(r, n) = |{e : (e, r, n) in T}|``.
    """

    num_entities: int
    inc_ptr: np.ndarray
    inc_rel: np.ndarray
    inc_nbr: np.ndarray
    nbr_ptr: np.ndarray
    nbr_ids: np.ndarray
    hc_keys: np.ndarray = field(repr=False)
    hc_counts: np.ndarray = field(repr=False)
    num_relations: int = 0

    @classmethod
    def build(cls, kg: KnowledgeGraph) -> NeighborIndex:
        t = kg.triples
        n = kg.num_entities
        order, ptr = _csr_groups(t[:, 0], n)
        inc_rel = t[order, 1]
        inc_nbr = t[order, 2]
        # distinct neighbours per entity, sorted
        pair_keys = t[:, 0] * max(n, 1) + t[:, 2]
        uniq = np.unique(pair_keys)
        heads = uniq // max(n, 1)
        nbr_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(heads, minlength=n), out=nbr_ptr[1:])
        nbr_ids = uniq % max(n, 1)
        rn = t[:, 1] * max(n, 1) + t[:, 2]
        hc_keys, hc_counts = np.unique(rn, return_counts=True)
        return cls(
            num_entities=n,
            inc_ptr=ptr,
            inc_rel=inc_rel,
            inc_nbr=inc_nbr,
            nbr_ptr=nbr_ptr,
            nbr_ids=nbr_ids,
            hc_keys=hc_keys,
            hc_counts=hc_counts,
            num_relations=kg.num_relations,
        )

    def neighbors(self, e: int) -> np.ndarray:
        return self.nbr_ids[self.nbr_ptr[e]:self.nbr_ptr[e + 1]]

    def degree(self) -> np.ndarray:
        """``|N_e|`` for every entity."""
        return np.diff(self.nbr_ptr)

    def incidence(self, e: int) -> list[tuple[int, int]]:
        lo, hi = self.inc_ptr[e], self.inc_ptr[e + 1]
        return list(zip(self.inc_rel[lo:hi].tolist(), self.inc_nbr[lo:hi].tolist()))

    def incidence_heads(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_entities), np.diff(self.inc_ptr))

    def head_count(self, r: int, n: int) -> int:
        key = r * max(self.num_entities, 1) + n
        pos = np.searchsorted(self.hc_keys, key)
        if pos < len(self.hc_keys) and self.hc_keys[pos] == key:
            return int(self.hc_counts[pos])
        return 0

    def head_counts(self, rels: np.ndarray, nbrs: np.ndarray) -> np.ndarray:
        """Vectorised ``head_count``; pairs that never occur get 0."""
        keys = np.asarray(rels, dtype=np.int64) * max(self.num_entities, 1) + np.asarray(nbrs)
        pos = np.searchsorted(self.hc_keys, keys)
        pos = np.minimum(pos, max(len(self.hc_keys) - 1, 0))
        if len(self.hc_keys) == 0:
            return np.zeros(len(keys), dtype=np.int64)
        hit = self.hc_keys[pos] == keys
        return np.where(hit, self.hc_counts[pos], 0)


@dataclass(frozen=True)
class RelationPairIndex:
    """``S_r = {(h, t) | (h, r, t) in T}`` grouped by relation."""

    num_relations: int
    ptr: np.ndarray
    heads: np.ndarray
    tails: np.ndarray

    @classmethod
    def build(cls, kg: KnowledgeGraph) -> RelationPairIndex:
        t = kg.triples
        order, ptr = _csr_groups(t[:, 1], kg.num_relations)
        return cls(kg.num_relations, ptr, t[order, 0], t[order, 2])

    def pairs(self, r: int) -> set[tuple[int, int]]:
        lo, hi = self.ptr[r], self.ptr[r + 1]
        return set(zip(self.heads[lo:hi].tolist(), self.tails[lo:hi].tolist()))

    def sizes(self) -> np.ndarray:
        return np.diff(self.ptr)

    def relation_of_entries(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_relations), np.diff(self.ptr))


def build_indexes(kg: KnowledgeGraph) -> tuple[NeighborIndex, RelationPairIndex]:
    if not kg.augmented:
        logger.warning("building indexes on a graph without reverse relations")
    return NeighborIndex.build(kg), RelationPairIndex.build(kg)


@dataclass(frozen=True)
class PairIndexes:
    n1: NeighborIndex
    n2: NeighborIndex
    s1: RelationPairIndex
    s2: RelationPairIndex


def build_pair_indexes(pair: GraphPair) -> PairIndexes:
    n1, s1 = build_indexes(pair.g1)
    n2, s2 = build_indexes(pair.g2)
    return PairIndexes(n1, n2, s1, s2)
