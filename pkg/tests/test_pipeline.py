import numpy as np
import pytest

from kgalign.config import ConfigError, RunConfig
from kgalign.experiments import REPORT_HEADER, report_line, run_ablation, seed_ratio_sweep
from kgalign.pipeline import align, final_reports, prepare, run_pipeline, train_embeddings, variant_config
from kgalign.synthetic import SynthSpec, generate_synthetic_pair

SMALL = {
    "dim": 16, "pretrain_epochs": 4, "joint_epochs": 2, "negatives": 8, "neg_pool": 20,
    "entity_candidates": 30, "relation_candidates": 8,
}


def small_config(**extra):
    return RunConfig().with_updates({**SMALL, **extra})


@pytest.fixture(scope="module")
def trained():
    data = generate_synthetic_pair(SynthSpec(entities=150, relations=8, dim=16, noise=1.0, seed=3)).dataset
    cfg = small_config()
    prep = prepare(data, cfg)
    return data, cfg, prep, train_embeddings(prep, cfg)


@pytest.mark.parametrize("variant, key, value", [
    ("full", "max_iters", 4),
    ("-AP", "use_probability", False),
    ("-IS", "max_iters", 1),
    ("-RM", "use_relations", False),
])
def test_variant_switches(variant, key, value):
    flat = variant_config(RunConfig(), variant).flat()
    assert flat[key] == value and flat["variant"] == variant
    untouched = {k: v for k, v in RunConfig().flat().items() if k not in (key, "variant")}
    assert all(flat[k] == v for k, v in untouched.items())


def test_unknown_variant_rejected(trained):
    data, cfg, prep, emb = trained
    with pytest.raises(ConfigError):
        run_ablation("-XX", data, cfg, prep, emb)
    with pytest.raises(ConfigError):
        RunConfig().with_updates({"variant": "-XX"})


def test_single_pass_variant_equals_first_iteration(trained):
    data, cfg, prep, (emb, _) = trained
    full = align(prep, emb, cfg)
    ent, rel = run_ablation("-IS", data, cfg, prep, (emb, []))
    first = full.history[0]
    assert ent.ranks.tolist() == first.entity_report.ranks.tolist()
    assert ent.mrr == first.entity_report.mrr
    assert rel.hits1 == first.relation_report.hits1


def test_reports_agree_with_history(trained):
    data, cfg, prep, (emb, _) = trained
    res = align(prep, emb, cfg)
    ent, rel = final_reports(prep, res, cfg, "full")
    assert ent.ranks.tolist() == res.history[-1].entity_report.ranks.tolist()
    assert 0 <= ent.hits1 <= ent.hits10 <= 100 and ent.mrr >= ent.hits1 / 100


def test_without_probability_no_change_on_one_to_one_graphs():
    data = generate_synthetic_pair(
        SynthSpec(entities=150, relations=6, one_to_one=1.0, dim=16, noise=1.0, seed=4)).dataset
    cfg = small_config()
    prep = prepare(data, cfg)
    emb = train_embeddings(prep, cfg)
    full = run_ablation("full", data, cfg, prep, emb)
    plain = run_ablation("-AP", data, cfg, prep, emb)
    for a, b in zip(full, plain):
        assert a.ranks.tolist() == b.ranks.tolist()


def test_pipeline_is_deterministic():
    data = generate_synthetic_pair(SynthSpec(entities=80, relations=5, dim=16, seed=9)).dataset
    cfg = small_config()
    a, b = run_pipeline(data, cfg), run_pipeline(data, cfg)
    assert np.array_equal(a.embeddings.entities, b.embeddings.entities)
    assert a.result.sets == b.result.sets
    assert a.entity_report.ranks.tolist() == b.entity_report.ranks.tolist()


def test_sweep_rejects_degenerate_ratio(trained):
    data, cfg, _, _ = trained
    with pytest.raises(ConfigError):
        seed_ratio_sweep([1.0], data, cfg)


def test_sweep_resplits_seeds():
    data = generate_synthetic_pair(SynthSpec(entities=60, relations=4, dim=16, seed=2)).dataset
    rows = seed_ratio_sweep([0.2, 0.4], data, small_config())
    assert [r.ratio for r in rows] == [0.2, 0.4]
    assert len(rows[0].entity.ranks) > len(rows[1].entity.ranks)


def test_report_line_format(trained):
    data, cfg, prep, emb = trained
    ent, _ = run_ablation("-RM", data, cfg, prep, emb)
    line = report_line(ent, "synth", 0.3)
    fields = line.split("\t")
    assert len(fields) == len(REPORT_HEADER.split("\t"))
    assert fields[:4] == ["entity", "-RM", "synth", "0.30"]
    assert float(fields[4]) == round(ent.hits1, 1)
