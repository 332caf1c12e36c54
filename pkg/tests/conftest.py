from __future__ import annotations

import numpy as np
import pytest

import oracles

from kgalign.encoder import EncoderParams
from kgalign.graph import GraphPair, KnowledgeGraph
from kgalign.matching import AlignmentSets
from kgalign.training import Objective, sample_negatives

ACCEPTANCE_LINES: list[str] = []


def random_kg(rng: np.random.Generator, n_ent: int, n_rel: int, n_triples: int,
              cover_relations: bool = False) -> KnowledgeGraph:
    rows = set()
    if cover_relations:
        for r in range(n_rel):
            rows.add((int(rng.integers(n_ent)), r, int(rng.integers(n_ent))))
    for _ in range(n_triples):
        rows.add((int(rng.integers(n_ent)), int(rng.integers(n_rel)), int(rng.integers(n_ent))))
    return KnowledgeGraph(n_ent, n_rel, sorted(rows))


def random_pair(rng, max_entities=20, max_relations=4, cover_relations=False) -> GraphPair:
    def one():
        n = int(rng.integers(2, max_entities + 1))
        r = int(rng.integers(1, max_relations + 1))
        m = int(rng.integers(1, 3 * n))
        return random_kg(rng, n, r, m, cover_relations)

    return GraphPair(one(), one()).augmented()


def random_injection(rng, n_left, n_right, fraction) -> dict[int, int]:
    size = int(min(n_left, n_right) * fraction)
    left = rng.choice(n_left, size=size, replace=False)
    right = rng.choice(n_right, size=size, replace=False)
    return dict(zip(left.tolist(), right.tolist()))


def random_sets(rng, pair: GraphPair, fraction=None) -> AlignmentSets:
    f_e = rng.uniform(0.2, 1.0) if fraction is None else fraction
    f_r = rng.uniform(0.2, 1.0) if fraction is None else fraction
    return AlignmentSets(
        random_injection(rng, pair.g1.num_entities, pair.g2.num_entities, f_e),
        random_injection(rng, pair.g1.num_relations, pair.g2.num_relations, f_r),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def gradient_instance(seed: int = 7, dim: int = 5, highway_all_layers: bool = True):
    """A 20-entity pair (10 + 10) with every relation used, random params and negatives."""
    rng = np.random.default_rng(seed)
    g1 = random_kg(rng, 10, 3, 14, cover_relations=True)
    g2 = random_kg(rng, 10, 3, 14, cover_relations=True)
    pair = GraphPair(g1, g2).augmented()
    features = rng.normal(size=(20, dim))
    params = EncoderParams.init(dim, 2, rng, highway_all_layers=highway_all_layers)
    for b in params.gate_biases:
        b[:] = rng.normal(size=dim)
    positives = np.array([[i, 10 + i] for i in range(4)])
    obj = Objective(pair, features)
    negatives = sample_negatives(positives, obj.encode(params), 6, 10, rng, pool=8)
    return obj, params, positives, negatives


def gradient_errors(obj, params, pos, neg, margin, weight, regularize=True):
    _, _, _, grads = obj(params, pos, neg, margin, weight, regularize=regularize)

    def loss():
        return obj(params, pos, neg, margin, weight, with_grad=False, regularize=regularize)[2]

    errors = {}
    for name, arr in params.named().items():
        errors[name] = oracles.relative_error(grads[name], oracles.central_difference(loss, arr))
    errors["F"] = oracles.relative_error(grads["F"], oracles.central_difference(loss, obj.features))
    return errors
