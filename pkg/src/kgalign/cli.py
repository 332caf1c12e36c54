"""Command-line entry point: ``synth``, ``run`` and ``eval``.

Every run writes into one directory::

    manifest.json          resolved configuration and input description
    config.txt             the same configuration as key=value lines
    train_log.csv          epoch,L_E,Omega_R,L
    checkpoint.npz         final encoder parameters and optimiser state
    iterations.tsv         per-iteration alignment-set sizes and metrics
    state_iter{k}.npz      distance state after iteration k
    state.npz              final distance state
    entity_alignments.tsv  id1<TAB>id2<TAB>distance (raw ids)
    relation_alignments.tsv
    report.tsv             one row per task
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, RunConfig, read_kv_file
from .evaluation import RankingReport, rank_and_score
from .experiments import REPORT_HEADER, report_line
from .io import Dataset, load_dbp15k, read_pair_file, write_dataset
from .iterate import load_state, save_state, update_alignment_sets
from .pipeline import Prepared, align, final_reports, prepare, variant_config
from .synthetic import SynthSpec, generate_synthetic_pair
from .training import Trainer

logger = logging.getLogger("kgalign")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INGEST = 3
EXIT_TRAIN = 4
EXIT_ITERATE = 5
EXIT_EVAL = 6
EXIT_OUTPUT = 7


class StageFailure(Exception):
    def __init__(self, stage: str, code: int, cause: BaseException):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage
        self.code = code


@contextlib.contextmanager
def stage(name: str, code: int):
    try:
        yield
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(name, code, exc) from exc


# -- argument parsing ---------------------------------------------------------------


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser):
    defaults = RunConfig().flat()
    group = p.add_argument_group("configuration (defaults shown; override a config file)")
    for key, value in defaults.items():
        if isinstance(value, tuple):
            value = ",".join(map(str, value))
        names = [_flag(key)]
        if key == "max_iters":
            names.append("--iters")
        group.add_argument(*names, dest=f"cfg_{key}", default=None, metavar=type(value).__name__.upper(),
                           help=f"default: {value}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgalign", description="Relation-aware KG alignment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic KG pair in DBP15K layout")
    p.add_argument("--spec", type=Path, help="key=value synthetic spec file (defaults if omitted)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a spec key")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("run", help="train, iterate and evaluate")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="dataset directory in DBP15K layout")
    src.add_argument("--synth", type=Path, help="synthetic spec file generated in memory")
    p.add_argument("--features", type=Path, help="feature file (default: <data>/features if present)")
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="re-score a state dump against a truth file")
    p.add_argument("--state", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True, help="raw id pairs, one per line")
    p.add_argument("--task", choices=("entity", "relation"), default="entity")
    p.add_argument("--k", default="1,10", help="comma-separated cutoffs")
    p.add_argument("--variant", default=None, help="label for the report (default: from the dump)")
    p.add_argument("--include-seeds", action="store_true", help="also score pinned seed rows")
    return parser


def resolve_config(args) -> RunConfig:
    values: dict[str, str] = {}
    if args.config is not None:
        values.update(read_kv_file(args.config))
    for key in RunConfig().flat():
        given = getattr(args, f"cfg_{key}")
        if given is not None:
            values[key] = given
    return RunConfig().with_updates(values)


# -- subcommands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    with stage("config", EXIT_USAGE):
        values = read_kv_file(args.spec) if args.spec else {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"expected KEY=VALUE, got {item!r}")
            values[key.strip()] = value.strip()
        spec = SynthSpec.from_mapping(values)
    with stage("generate", EXIT_INGEST):
        synth = generate_synthetic_pair(spec)
    with stage("write", EXIT_OUTPUT):
        write_dataset(args.out, synth.dataset)
        (args.out / "synth_spec").write_text(spec.to_text(), encoding="utf-8")
    g1, g2 = synth.dataset.pair.g1, synth.dataset.pair.g2
    print(f"wrote {args.out}: {g1.num_triples} / {g2.num_triples} triples, "
          f"{len(synth.dataset.seeds.train)} train / {len(synth.dataset.seeds.test)} test pairs")
    return EXIT_OK


def _load_input(args, cfg: RunConfig) -> tuple[Dataset, dict]:
    if args.synth is not None:
        spec = SynthSpec.from_file(args.synth)
        data = generate_synthetic_pair(spec).dataset
        return data, {"synth": str(args.synth), "synth_spec": dataclasses.asdict(spec)}
    data = load_dbp15k(args.data, cfg.seed_ratio, cfg.seed, feature_path=args.features, fill=cfg.feature_fill)
    return data, {"data": str(args.data), "features": str(args.features) if args.features else None}


def _manifest(cfg: RunConfig, source: dict, data: Dataset) -> dict:
    flat = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.flat().items()}
    return {
        "version": __version__,
        "input": source,
        "dataset": data.name,
        "config": flat,
        "entities": [data.pair.g1.num_entities, data.pair.g2.num_entities],
        "triples": [data.pair.g1.num_triples, data.pair.g2.num_triples],
        "train_pairs": len(data.seeds.train),
        "test_pairs": len(data.seeds.test),
    }


def _metric_cells(report: RankingReport | None, ks) -> list[str]:
    if report is None:
        return ["" for _ in ks] + [""]
    return [f"{report.hits[k]:.2f}" for k in ks] + [f"{report.mrr:.4f}"]


def _write_alignments(path: Path, pairs: dict[int, int], table, raw1, raw2):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, t in sorted(pairs.items()):
            d = table.lookup(s, t)
            fh.write(f"{raw1[s]}\t{raw2[t]}\t{d:.6f}\n")


def _relation_raw(raw: np.ndarray, base: int):
    # reverse relations have no file id; label them by their forward id
    return [str(raw[r]) if r < base else f"{raw[r - base]}^-1" for r in range(2 * base)]


def cmd_run(args) -> int:
    with stage("config", EXIT_USAGE):
        cfg = variant_config(resolve_config(args))
    out: Path = args.out
    with stage("ingest", EXIT_INGEST):
        data, source = _load_input(args, cfg)
        prep: Prepared = prepare(data, cfg)
    with stage("write", EXIT_OUTPUT):
        out.mkdir(parents=True, exist_ok=True)
        manifest = _manifest(cfg, source, data)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "config.txt").write_text(
            "".join(f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}\n" for k, v in cfg.flat().items()),
            encoding="utf-8")

    with stage("train", EXIT_TRAIN):
        trainer = Trainer(prep.pair, prep.features, prep.global_positives(), cfg.train, cfg.encoder, cfg.seed)
        trainer.run()
        emb = trainer.embeddings()
    with stage("write", EXIT_OUTPUT):
        with open(out / "train_log.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,L_E,Omega_R,L\n")
            for rec in trainer.log:
                fh.write(rec.line() + "\n")
        trainer.save(out / "checkpoint.npz")

    ks = cfg.ks
    ent_raw = data.entity_raw
    rel_raw = (_relation_raw(data.relation_raw[0], prep.pair.g1.base_relations),
               _relation_raw(data.relation_raw[1], prep.pair.g2.base_relations))
    raw_for_dump = dict(entity_raw=ent_raw, relation_raw=data.relation_raw)
    header = ["iteration", "entity_pairs", "relation_pairs"]
    header += [f"entity_hits@{k}" for k in ks] + ["entity_mrr"]
    header += [f"relation_hits@{k}" for k in ks] + ["relation_mrr"]
    rows = ["\t".join(header)]

    def on_iteration(rec, state, sets):
        with stage("write", EXIT_OUTPUT):
            cells = [str(rec.iteration), str(rec.entity_pairs), str(rec.relation_pairs)]
            cells += _metric_cells(rec.entity_report, ks) + _metric_cells(rec.relation_report, ks)
            rows.append("\t".join(cells))
            save_state(out / f"state_iter{rec.iteration}.npz", state, sets, rec.iteration,
                       extra={"variant": cfg.variant}, **raw_for_dump)

    with stage("iterate", EXIT_ITERATE):
        result = align(prep, emb, cfg, on_iteration=on_iteration)
    with stage("evaluate", EXIT_EVAL):
        ent_report, rel_report = final_reports(prep, result, cfg, cfg.variant)
        final_sets = update_alignment_sets(result.state, cfg.iterate)

    with stage("write", EXIT_OUTPUT):
        (out / "iterations.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        last = result.history[-1].iteration if result.history else 0
        save_state(out / "state.npz", result.state, final_sets, last,
                   extra={"variant": cfg.variant, "converged": result.converged}, **raw_for_dump)
        _write_alignments(out / "entity_alignments.tsv", final_sets.entities, result.state.entities, *ent_raw)
        _write_alignments(out / "relation_alignments.tsv", final_sets.relations, result.state.relations, *rel_raw)
        lines = [REPORT_HEADER, report_line(ent_report, data.name, data.seeds.ratio)]
        if rel_report is not None:
            lines.append(report_line(rel_report, data.name, data.seeds.ratio))
        (out / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(ent_report.summary())
    if rel_report is not None:
        print(rel_report.summary())
    return EXIT_OK


def evaluate_dump(state_path: Path, truth_path: Path, task: str = "entity", ks=(1, 10),
                  variant: str | None = None, include_seeds: bool = False) -> RankingReport:
    """Score a saved distance state against raw-id truth pairs without recomputing anything."""
    loaded = load_state(state_path)
    raw = loaded.raw
    prefix = "ent" if task == "entity" else "rel"
    if f"{prefix}1" not in raw:
        raise ValueError(f"{state_path}: dump carries no raw {task} ids")
    left = {int(v): i for i, v in enumerate(raw[f"{prefix}1"].tolist())}
    right = {int(v): i for i, v in enumerate(raw[f"{prefix}2"].tolist())}
    truth = read_pair_file(truth_path, left, right, what=task)
    table = loaded.state.entities if task == "entity" else loaded.state.relations
    exclude = None if include_seeds or task != "entity" else table.pinned
    variant = variant or loaded.meta.get("variant", "full")
    return rank_and_score(table.ids, table.dist, truth, ks, task, variant, exclude_rows=exclude)


def cmd_eval(args) -> int:
    with stage("config", EXIT_USAGE):
        try:
            ks = tuple(int(k) for k in args.k.split(",") if k.strip())
        except ValueError:
            raise ConfigError(f"bad --k value {args.k!r}") from None
        if not ks or min(ks) < 1:
            raise ConfigError("--k needs positive integers")
    with stage("evaluate", EXIT_EVAL):
        report = evaluate_dump(args.state, args.truth, args.task, ks, args.variant, args.include_seeds)
    print(report.summary())
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "cfg_threads", None)
    try:
        with threadpool_limits(limits=int(threads) if threads else 1):
            return COMMANDS[args.command](args)
    except StageFailure as exc:
        print(f"kgalign {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"kgalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
