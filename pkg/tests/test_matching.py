import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgalign.graph import GraphPair, KnowledgeGraph, NeighborIndex, PairIndexes, RelationPairIndex, build_pair_indexes
from kgalign.matching import (
    AlignmentSets,
    MatchingError,
    alignment_probability,
    candidate_pairs,
    entity_match_scores,
    mapping_probability,
    neighborhood_match_score,
    relation_match_score,
    relation_match_scores,
    update_entity_distance,
    update_relation_distance,
)
from kgalign.synthetic import SynthSpec, generate_synthetic_pair

import oracles
from conftest import random_pair, random_sets


def raw_indexes(g1: KnowledgeGraph, g2: KnowledgeGraph) -> PairIndexes:
    return PairIndexes(NeighborIndex.build(g1), NeighborIndex.build(g2),
                       RelationPairIndex.build(g1), RelationPairIndex.build(g2))


# -- probabilities --------------------------------------------------------------------


def test_mapping_probability_examples():
    idx = NeighborIndex.build(KnowledgeGraph(5, 2, [(0, 0, 1), (2, 1, 4), (3, 1, 4), (1, 1, 4)]))
    assert mapping_probability(0, 1, idx) == 1.0
    assert mapping_probability(1, 4, idx) == pytest.approx(1 / 3)
    two = NeighborIndex.build(KnowledgeGraph(3, 1, [(0, 0, 2), (1, 0, 2)]))
    assert mapping_probability(0, 2, two) == 0.5
    with pytest.raises(MatchingError):
        mapping_probability(0, 0, idx)


def test_alignment_probability_products():
    one = NeighborIndex.build(KnowledgeGraph(2, 1, [(0, 0, 1)]))
    two = NeighborIndex.build(KnowledgeGraph(3, 1, [(0, 0, 2), (1, 0, 2)]))
    three = NeighborIndex.build(KnowledgeGraph(4, 1, [(0, 0, 3), (1, 0, 3), (2, 0, 3)]))
    four = NeighborIndex.build(KnowledgeGraph(5, 1, [(i, 0, 4) for i in range(4)]))
    assert alignment_probability(0, 0, 1, 1, one, one) == 1.0
    assert alignment_probability(0, 0, 2, 1, two, one) == 0.5
    assert alignment_probability(0, 0, 3, 4, three, four) == pytest.approx(1 / 12)


# -- entity scores --------------------------------------------------------------------


def hand_example():
    # KG1: e(0) -ra-> a(1), e -rb-> b(2); KG2: e'(0) -ra'-> a'(1), x(3) -ra'-> a', e' -rb'-> b'(2)
    g1 = KnowledgeGraph(3, 2, [(0, 0, 1), (0, 1, 2)])
    g2 = KnowledgeGraph(4, 2, [(0, 0, 1), (3, 0, 1), (0, 1, 2)])
    return raw_indexes(g1, g2)


def test_empty_sets_score_zero():
    assert neighborhood_match_score(0, 0, AlignmentSets(), hand_example()) == 0.0


def test_hand_enumerated_score():
    idx = hand_example()
    sets = AlignmentSets({1: 1}, {0: 0})
    assert neighborhood_match_score(0, 0, sets, idx) == 0.125
    t1 = [(0, 0, 1), (0, 1, 2)]
    t2 = [(0, 0, 1), (3, 0, 1), (0, 1, 2)]
    assert oracles.neighborhood_score(0, 0, t1, t2, {(1, 1)}, {(0, 0)}) == 0.125
    assert entity_match_scores([0], [0], sets, idx).tolist() == [0.125]
    assert update_entity_distance(2.0, 0.125, 10.0) == 0.75


def italy_toy():
    # KG1: Italy(0) -capital-> Rome(1), Florence(2) -locatedIn-> Italy
    # KG2: Italy'(0) -capital-> Rome'(1), DavidStatue'(2) -locatedIn-> Rome'
    g1 = KnowledgeGraph(3, 2, [(0, 0, 1), (2, 1, 0)])
    g2 = KnowledgeGraph(3, 2, [(0, 0, 1), (2, 1, 1)])
    return GraphPair(g1, g2).augmented()


def test_relation_mismatch_separates_shared_neighbour():
    pair = italy_toy()
    idx = build_pair_indexes(pair)
    sets = AlignmentSets({1: 1}, {0: 0})
    italy = neighborhood_match_score(0, 0, sets, idx)
    statue = neighborhood_match_score(0, 2, sets, idx)
    assert italy == pytest.approx(1 / 3)  # one matched tuple over |N| = 2 plus |N'| = 1
    assert statue == 0.0
    # neighbour-only matching cannot tell the two apart
    assert neighborhood_match_score(0, 2, sets, idx, use_relations=False) == pytest.approx(1 / 3)


def test_probability_ablation_counts_tuples():
    idx = hand_example()
    sets = AlignmentSets({1: 1}, {0: 0})
    assert neighborhood_match_score(0, 0, sets, idx, use_probability=False) == 0.25


def all_pairs(pair):
    n1, n2 = pair.g1.num_entities, pair.g2.num_entities
    return np.repeat(np.arange(n1), n2), np.tile(np.arange(n2), n1)


@given(st.integers(0, 10_000), st.sampled_from([(True, True), (False, True), (True, False)]))
@settings(max_examples=40, deadline=None)
def test_entity_scores_match_oracle(seed, flags):
    rng = np.random.default_rng(seed)
    pair = random_pair(rng, 8, 3)
    idx = build_pair_indexes(pair)
    sets = random_sets(rng, pair)
    use_p, use_r = flags
    t1, t2 = oracles.triples_of(pair.g1), oracles.triples_of(pair.g2)
    le, lr = sets.entity_pairs(), sets.relation_pairs()
    rows, cols = all_pairs(pair)
    batched = entity_match_scores(rows, cols, sets, idx, use_p, use_r)
    for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        ref = oracles.neighborhood_score(i, j, t1, t2, le, lr, use_p, use_r)
        assert abs(batched[k] - ref) <= 1e-12
        assert abs(neighborhood_match_score(i, j, sets, idx, use_p, use_r) - ref) <= 1e-12


def test_matched_tuples_are_candidates(rng):
    for _ in range(30):
        pair = random_pair(rng, 6, 2)
        idx = build_pair_indexes(pair)
        sets = random_sets(rng, pair)
        for i in range(pair.g1.num_entities):
            for j in range(pair.g2.num_entities):
                cand = {(n1, n2, r1, r2) for r1, n1 in idx.n1.incidence(i) for r2, n2 in idx.n2.incidence(j)}
                matched = {c for c in cand if (c[0], c[1]) in sets.entity_pairs() and (c[2], c[3]) in sets.relation_pairs()}
                assert matched <= cand
                assert (neighborhood_match_score(i, j, sets, idx) > 0) == bool(matched)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_scores_monotone_in_alignment_sets(seed):
    rng = np.random.default_rng(seed)
    pair = random_pair(rng, 8, 3)
    idx = build_pair_indexes(pair)
    big = random_sets(rng, pair, fraction=0.8)
    keep_e = dict(list(big.entities.items())[: len(big.entities) // 2])
    keep_r = dict(list(big.relations.items())[: len(big.relations) // 2])
    small = AlignmentSets(keep_e, keep_r)
    rows, cols = all_pairs(pair)
    for use_p, use_r in ((True, True), (False, True), (True, False)):
        assert np.all(entity_match_scores(rows, cols, small, idx, use_p, use_r)
                      <= entity_match_scores(rows, cols, big, idx, use_p, use_r) + 1e-15)
    nr1, nr2 = pair.g1.num_relations, pair.g2.num_relations
    rr, rc = np.repeat(np.arange(nr1), nr2), np.tile(np.arange(nr2), nr1)
    assert np.all(relation_match_scores(rr, rc, small, idx) <= relation_match_scores(rr, rc, big, idx))


# -- relation scores ------------------------------------------------------------------


def test_relation_score_hand_example():
    g1 = KnowledgeGraph(4, 1, [(0, 0, 1), (2, 0, 3)])
    g2 = KnowledgeGraph(2, 1, [(0, 0, 1)])
    idx = raw_indexes(g1, g2)
    assert relation_match_score(0, 0, {}, idx) == 0.0
    emap = {0: 0, 1: 1}
    assert relation_match_score(0, 0, emap, idx) == pytest.approx(1 / 3)
    assert oracles.relation_score(0, 0, g1.triples.tolist(), g2.triples.tolist(), {(0, 0), (1, 1)}) == pytest.approx(1 / 3)
    assert update_relation_distance(70.0, 1 / 3, 200.0) == pytest.approx(3.3333333333, abs=1e-9)


def test_relation_score_on_isomorphic_pair():
    s = generate_synthetic_pair(SynthSpec(entities=120, relations=6, dropout=0.0, noise=0.0, dim=4))
    pair = s.dataset.pair.augmented()
    idx = build_pair_indexes(pair)
    b1, b2 = pair.g1.base_relations, pair.g2.base_relations
    rel = dict(s.relation_truth.tolist())
    rel.update({a + b1: b + b2 for a, b in s.relation_truth.tolist()})
    ent = dict(s.entity_truth.tolist())
    for r1, r2 in rel.items():
        assert relation_match_score(r1, r2, ent, idx) == 0.5
        other = (r2 + 1) % pair.g2.num_relations
        assert relation_match_score(r1, other, ent, idx) < 0.5


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_relation_scores_match_oracle(seed):
    rng = np.random.default_rng(seed)
    pair = random_pair(rng, 8, 3)
    idx = build_pair_indexes(pair)
    sets = random_sets(rng, pair)
    t1, t2 = oracles.triples_of(pair.g1), oracles.triples_of(pair.g2)
    nr1, nr2 = pair.g1.num_relations, pair.g2.num_relations
    rows, cols = np.repeat(np.arange(nr1), nr2), np.tile(np.arange(nr2), nr1)
    batched = relation_match_scores(rows, cols, sets, idx)
    for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        ref = oracles.relation_score(i, j, t1, t2, sets.entity_pairs())
        assert abs(batched[k] - ref) <= 1e-12
        assert abs(relation_match_score(i, j, sets.entities, idx) - ref) <= 1e-12


# -- distance updates and candidates --------------------------------------------------


@given(st.floats(0, 100), st.floats(0, 1), st.floats(0, 1000))
def test_updated_distance_never_exceeds_embedding_distance(d, score, weight):
    assert update_entity_distance(d, score, weight) <= d
    assert update_relation_distance(d, score, weight) <= d
    assert update_entity_distance(d, 0.0, weight) == d


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 1), st.floats(0, 100))
def test_equal_scores_keep_their_order(d1, d2, score, weight):
    a, b = update_entity_distance(d1, score, weight), update_entity_distance(d2, score, weight)
    assert (d1 < d2) <= (a <= b)


def test_zero_weight_keeps_embedding_ranking(rng):
    base = rng.uniform(0, 10, size=(5, 7))
    scores = rng.uniform(0, 1, size=(5, 7))
    updated = update_entity_distance(base, scores, 0.0)
    assert np.array_equal(np.argsort(updated, axis=1, kind="stable"), np.argsort(base, axis=1, kind="stable"))


def test_candidates_clamp_to_pool(rng):
    ids, d = candidate_pairs(rng.normal(size=(4, 3)), rng.normal(size=(3, 3)), 100)
    assert ids.shape == (4, 3)
    assert all(sorted(row) == [0, 1, 2] for row in ids.tolist())


def test_candidates_match_exhaustive_scan(rng):
    src = rng.integers(0, 3, size=(50, 4)).astype(float)  # many ties
    tgt = rng.integers(0, 3, size=(50, 4)).astype(float)
    ids, d = candidate_pairs(src, tgt, 10, chunk=7)
    assert np.all(np.diff(d, axis=1) >= 0)
    for i in range(50):
        full = [(float(np.abs(src[i] - tgt[j]).sum()), j) for j in range(50)]
        full.sort()
        assert ids[i].tolist() == [j for _, j in full[:10]]
        assert d[i].tolist() == [v for v, _ in full[:10]]


def test_alignment_sets_must_be_injective():
    with pytest.raises(MatchingError):
        AlignmentSets({0: 1, 2: 1})
