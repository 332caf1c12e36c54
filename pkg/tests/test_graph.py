import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgalign.graph import (
    GraphError,
    GraphPair,
    KnowledgeGraph,
    NeighborIndex,
    RelationPairIndex,
    add_reverse_relations,
    build_indexes,
    unique_triples,
)

import oracles


triple_lists = st.integers(2, 12).flatmap(
    lambda n: st.integers(1, 4).flatmap(
        lambda r: st.tuples(
            st.just(n),
            st.just(r),
            st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, r - 1), st.integers(0, n - 1)),
                     unique=True, max_size=30),
        )
    )
)


def test_reverse_of_single_triple():
    kg = KnowledgeGraph(2, 1, [(0, 0, 1)], entity_names=("Tokyo", "Japan"), relation_names=("CapitalOf",))
    aug = add_reverse_relations(kg)
    assert aug.triple_set() == {(0, 0, 1), (1, 1, 0)}
    assert aug.relation_names == ("CapitalOf", "CapitalOf^-1")
    assert aug.is_reverse(1) and not aug.is_reverse(0)


def test_reverse_of_empty_graph():
    aug = add_reverse_relations(KnowledgeGraph(0, 0, []))
    assert aug.num_relations == 0 and aug.num_triples == 0


def test_reverse_counts_double():
    kg = KnowledgeGraph(4, 2, [(0, 0, 1), (1, 1, 2), (2, 0, 3)])
    aug = add_reverse_relations(kg)
    assert (aug.num_triples, aug.num_relations) == (6, 4)


def test_double_augmentation_rejected():
    aug = add_reverse_relations(KnowledgeGraph(2, 1, [(0, 0, 1)]))
    with pytest.raises(GraphError):
        add_reverse_relations(aug)


@pytest.mark.parametrize("triples, n, r", [
    ([(0, 0, 5)], 2, 1),
    ([(0, 3, 1)], 2, 1),
    ([(0, 0, 1), (0, 0, 1)], 2, 1),
    ([(-1, 0, 1)], 2, 1),
])
def test_invalid_graphs_rejected(triples, n, r):
    with pytest.raises(GraphError):
        KnowledgeGraph(n, r, triples)


def test_unique_triples_keeps_first_order():
    t, dropped = unique_triples(np.array([[2, 0, 1], [0, 0, 1], [2, 0, 1]]))
    assert dropped == 1
    assert t.tolist() == [[2, 0, 1], [0, 0, 1]]


@given(triple_lists)
def test_augmentation_properties(data):
    n, r, triples = data
    kg = KnowledgeGraph(n, r, triples)
    aug = add_reverse_relations(kg)
    assert aug.num_triples == 2 * kg.num_triples
    assert aug.num_relations == 2 * kg.num_relations
    ts = aug.triple_set()
    for h, rel, t in triples:
        assert (h, rel, t) in ts
        assert (t, aug.reverse(rel), h) in ts
    for rel in range(aug.num_relations):
        assert aug.reverse(aug.reverse(rel)) == rel


def test_single_triple_indexes():
    aug = add_reverse_relations(KnowledgeGraph(2, 1, [(0, 0, 1)]))
    nbr, pairs = build_indexes(aug)
    assert nbr.neighbors(0).tolist() == [1]
    assert nbr.neighbors(1).tolist() == [0]
    assert pairs.pairs(0) == {(0, 1)}


def test_head_count_two_heads():
    kg = KnowledgeGraph(3, 1, [(0, 0, 2), (1, 0, 2)])
    nbr = NeighborIndex.build(kg)
    assert nbr.head_count(0, 2) == 2
    assert nbr.head_count(0, 0) == 0


@given(triple_lists)
@settings(max_examples=60)
def test_index_matches_triple_scan(data):
    n, r, triples = data
    aug = add_reverse_relations(KnowledgeGraph(n, r, triples))
    nbr, pairs = build_indexes(aug)
    t = oracles.triples_of(aug)
    for e in range(n):
        assert set(nbr.neighbors(e).tolist()) == oracles.neighbours(t, e)
        for m in nbr.neighbors(e).tolist():
            assert e in set(nbr.neighbors(m).tolist())
        assert sorted(nbr.incidence(e)) == sorted((rr, tt) for h, rr, tt in t if h == e)
    total = 0
    for rel in range(aug.num_relations):
        assert pairs.pairs(rel) == {(h, tt) for h, rr, tt in t if rr == rel}
        for m in range(n):
            c = nbr.head_count(rel, m)
            assert c == oracles.head_count(t, rel, m)
            total += c
    assert total == aug.num_triples
    assert nbr.head_counts(aug.triples[:, 1], aug.triples[:, 2]).min(initial=1) >= 1


@given(triple_lists, st.randoms(use_true_random=False))
@settings(max_examples=30)
def test_index_order_independent(data, rnd):
    n, r, triples = data
    shuffled = list(triples)
    rnd.shuffle(shuffled)
    a = add_reverse_relations(KnowledgeGraph(n, r, triples))
    b = add_reverse_relations(KnowledgeGraph(n, r, shuffled))
    na, nb = NeighborIndex.build(a), NeighborIndex.build(b)
    for e in range(n):
        assert na.neighbors(e).tolist() == nb.neighbors(e).tolist()
        assert sorted(na.incidence(e)) == sorted(nb.incidence(e))
    assert np.array_equal(na.hc_keys, nb.hc_keys) and np.array_equal(na.hc_counts, nb.hc_counts)
    pa, pb = RelationPairIndex.build(a), RelationPairIndex.build(b)
    assert all(pa.pairs(x) == pb.pairs(x) for x in range(a.num_relations))


def test_pair_offsets_are_disjoint():
    g1 = KnowledgeGraph(3, 2, [(0, 0, 1), (1, 1, 2)])
    g2 = KnowledgeGraph(2, 1, [(0, 0, 1)])
    pair = GraphPair(g1, g2)
    gt = pair.global_triples()
    assert gt[2].tolist() == [3, 2, 4]
    kg1 = gt[:, [0, 2]] < pair.entity_offset
    assert np.all(kg1[:, 0] == kg1[:, 1])  # no cross-KG edges
