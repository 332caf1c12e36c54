"""Reading and writing DBP15K-style datasets and entity feature files.

Directory layout (public dump convention)::

    ent_ids_1, ent_ids_2    id<TAB>name
    rel_ids_1, rel_ids_2    id<TAB>name          (optional, else taken from triples)
    triples_1, triples_2    h<TAB>r<TAB>t
    ref_ent_ids             id1<TAB>id2          (test pairs, or all pairs without sup_ent_ids)
    sup_ent_ids             id1<TAB>id2          (optional training pairs)
    ref_rel_ids             id1<TAB>id2          (optional relation ground truth)
    features                id v1 ... vd         (optional)

Raw ids in files are mapped to dense ids in file order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import GraphPair, KnowledgeGraph, unique_triples

logger = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SeedAlignments:
    """Entity pairs ``(e1 in KG1, e2 in KG2)`` in local dense ids, split train/test."""

    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            object.__setattr__(self, name, arr)
        both = self.all
        if len(np.unique(both[:, 0])) != len(both) or len(np.unique(both[:, 1])) != len(both):
            raise DataFormatError("seed alignments are not one-to-one")

    @property
    def all(self) -> np.ndarray:
        return np.concatenate([self.train, self.test])

    @property
    def ratio(self) -> float:
        n = len(self.train) + len(self.test)
        return len(self.train) / n if n else 0.0

    def check_against(self, pair: GraphPair):
        both = self.all
        if len(both) and (
            both[:, 0].min() < 0 or both[:, 0].max() >= pair.g1.num_entities
            or both[:, 1].min() < 0 or both[:, 1].max() >= pair.g2.num_entities
        ):
            raise DataFormatError("seed alignment references an unknown entity")


def split_pairs(pairs: np.ndarray, ratio: float, seed: int) -> SeedAlignments:
    """Shuffle under ``seed`` and take the first ``round(ratio * n)`` pairs for training."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if not 0 < ratio < 1:
        raise ValueError(f"seed ratio must lie in (0, 1), got {ratio}")
    n_train = int(round(ratio * len(pairs)))
    if n_train == 0:
        raise ValueError(f"seed ratio {ratio} leaves no training pairs out of {len(pairs)}")
    if n_train == len(pairs):
        raise ValueError(f"seed ratio {ratio} leaves no test pairs out of {len(pairs)}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    return SeedAlignments(pairs[order[:n_train]], pairs[order[n_train:]])


@dataclass(frozen=True)
class Dataset:
    """A loaded or generated alignment problem.

    ``entity_raw``/``relation_raw`` hold the file ids of each KG in dense order.
    ``relation_truth`` uses local forward relation ids.
    """

    pair: GraphPair
    seeds: SeedAlignments
    features: np.ndarray | None
    entity_raw: tuple[np.ndarray, np.ndarray]
    relation_raw: tuple[np.ndarray, np.ndarray]
    relation_truth: np.ndarray | None = None
    name: str = "dataset"


# -- low-level readers --------------------------------------------------------


def _lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def read_id_file(path: Path) -> tuple[list[int], list[str]]:
    ids, names = [], []
    seen = set()
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 'id<TAB>name', got {len(parts)} columns")
        try:
            i = int(parts[0])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: id {parts[0]!r} is not an integer") from None
        if i in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate id {i}")
        seen.add(i)
        ids.append(i)
        names.append(parts[1])
    return ids, names


def read_int_rows(path: Path, ncols: int) -> tuple[np.ndarray, list[int]]:
    """Integer TSV rows plus the line number of each row."""
    rows, linenos = [], []
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != ncols:
            raise DataFormatError(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
        try:
            rows.append([int(p) for p in parts])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-integer field in {line!r}") from None
        linenos.append(lineno)
    return np.asarray(rows, dtype=np.int64).reshape(-1, ncols), linenos


def _map_ids(values: np.ndarray, table: dict[int, int], path: Path, linenos: list[int], what: str):
    flat = np.ascontiguousarray(values).reshape(-1)
    width = values.shape[1] if values.ndim == 2 else 1
    out = np.fromiter((table.get(v, -1) for v in flat.tolist()), dtype=np.int64, count=len(flat))
    bad = np.flatnonzero(out < 0)
    if len(bad):
        k = int(bad[0])
        raise DataFormatError(f"{path}:{linenos[k // width]}: unknown {what} id {flat[k]}")
    return out.reshape(values.shape)


def _load_kg(root: Path, side: int) -> tuple[KnowledgeGraph, dict[int, int], dict[int, int], list[int], list[int]]:
    ent_ids, ent_names = read_id_file(root / f"ent_ids_{side}")
    ent_map = {raw: k for k, raw in enumerate(ent_ids)}
    tpath = root / f"triples_{side}"
    raw_triples, linenos = read_int_rows(tpath, 3)
    rel_file = root / f"rel_ids_{side}"
    if rel_file.exists():
        rel_ids, rel_names = read_id_file(rel_file)
    else:
        rel_ids = sorted(set(raw_triples[:, 1].tolist()))
        rel_names = [str(r) for r in rel_ids]
    rel_map = {raw: k for k, raw in enumerate(rel_ids)}
    triples = np.empty_like(raw_triples)
    if len(raw_triples):
        triples[:, [0, 2]] = _map_ids(raw_triples[:, [0, 2]], ent_map, tpath, linenos, "entity")
        triples[:, 1] = _map_ids(raw_triples[:, 1], rel_map, tpath, linenos, "relation")
    triples, dropped = unique_triples(triples)
    if dropped:
        logger.warning("%s: dropped %d duplicate triples", tpath, dropped)
    kg = KnowledgeGraph(
        num_entities=len(ent_ids),
        num_relations=len(rel_ids),
        triples=triples,
        entity_names=tuple(ent_names),
        relation_names=tuple(rel_names),
    )
    return kg, ent_map, rel_map, ent_ids, rel_ids


def read_pair_file(path: Path, left: dict[int, int], right: dict[int, int], what: str = "entity") -> np.ndarray:
    """Read ``id1<TAB>id2`` pairs, map to dense ids, enforce one-to-one."""
    raw, linenos = read_int_rows(path, 2)
    out = np.empty_like(raw)
    seen_l: dict[int, int] = {}
    seen_r: dict[int, int] = {}
    for k, (a, b) in enumerate(raw.tolist()):
        ln = linenos[k]
        if a not in left:
            raise DataFormatError(f"{path}:{ln}: unknown left {what} id {a}")
        if b not in right:
            raise DataFormatError(f"{path}:{ln}: unknown right {what} id {b}")
        if a in seen_l:
            raise DataFormatError(f"{path}:{ln}: left {what} {a} already paired on line {seen_l[a]}")
        if b in seen_r:
            raise DataFormatError(f"{path}:{ln}: right {what} {b} already paired on line {seen_r[b]}")
        seen_l[a], seen_r[b] = ln, ln
        out[k] = (left[a], right[b])
    return out


def load_features(path: str | Path, dim: int) -> dict[int, np.ndarray]:
    """Read ``id v1 ... vd`` records keyed by raw entity id."""
    path = Path(path)
    table: dict[int, np.ndarray] = {}
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != dim + 1:
            raise DataFormatError(f"{path}:{lineno}: expected id plus {dim} values, got {len(parts) - 1} values")
        try:
            key = int(parts[0])
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed feature record") from None
        if key in table:
            raise DataFormatError(f"{path}:{lineno}: duplicate feature record for id {key}")
        table[key] = vec
    return table


def assemble_features(
    table: dict[int, np.ndarray],
    raw_ids: list[int] | np.ndarray,
    dim: int,
    fill: str = "zeros",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Stack feature rows for ``raw_ids``; absent entities are zero or N(0, 1/dim)."""
    out = np.zeros((len(raw_ids), dim))
    missing = []
    for k, raw in enumerate(np.asarray(raw_ids).tolist()):
        vec = table.get(raw)
        if vec is None:
            missing.append(k)
        else:
            if len(vec) != dim:
                raise DataFormatError(f"feature for id {raw} has {len(vec)} values, expected {dim}")
            out[k] = vec
    if missing:
        logger.info("%d entities have no feature record; filling with %s", len(missing), fill)
        if fill == "normal":
            rng = rng if rng is not None else np.random.default_rng(0)
            out[missing] = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(len(missing), dim))
        elif fill != "zeros":
            raise ValueError(f"unknown fill mode {fill!r}")
    return out


def load_dbp15k(
    root: str | Path,
    seed_ratio: float = 0.3,
    seed: int = 0,
    feature_dim: int | None = None,
    feature_path: str | Path | None = None,
    fill: str = "zeros",
) -> Dataset:
    root = Path(root)
    g1, e1, r1, raw_e1, raw_r1 = _load_kg(root, 1)
    g2, e2, r2, raw_e2, raw_r2 = _load_kg(root, 2)
    pair = GraphPair(g1, g2)

    ref = read_pair_file(root / "ref_ent_ids", e1, e2)
    sup_path = root / "sup_ent_ids"
    if sup_path.exists():
        seeds = SeedAlignments(read_pair_file(sup_path, e1, e2), ref)
    else:
        seeds = split_pairs(ref, seed_ratio, seed)

    rel_truth = None
    if (root / "ref_rel_ids").exists():
        rel_truth = read_pair_file(root / "ref_rel_ids", r1, r2, what="relation")

    features = None
    fpath = Path(feature_path) if feature_path is not None else root / "features"
    if fpath.exists():
        if feature_dim is None:
            feature_dim = _sniff_dim(fpath)
        table = load_features(fpath, feature_dim)
        rng = np.random.default_rng(seed)
        features = np.concatenate([
            assemble_features(table, raw_e1, feature_dim, fill, rng),
            assemble_features(table, raw_e2, feature_dim, fill, rng),
        ])
    elif feature_path is not None:
        raise FileNotFoundError(fpath)

    return Dataset(
        pair=pair,
        seeds=seeds,
        features=features,
        entity_raw=(np.asarray(raw_e1), np.asarray(raw_e2)),
        relation_raw=(np.asarray(raw_r1), np.asarray(raw_r2)),
        relation_truth=rel_truth,
        name=root.name,
    )


def _sniff_dim(path: Path) -> int:
    for _, line in _lines(path):
        return len(line.split()) - 1
    raise DataFormatError(f"{path}: empty feature file")


# -- writers ------------------------------------------------------------------


def _write_lines(path: Path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def write_dataset(root: str | Path, data: Dataset, write_features: bool = True):
    """Write ``data`` in the layout read by :func:`load_dbp15k`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    kgs = (data.pair.g1, data.pair.g2)
    for side, kg in enumerate(kgs, 1):
        eraw = data.entity_raw[side - 1]
        rraw = data.relation_raw[side - 1]
        enames = kg.entity_names or tuple(str(i) for i in range(kg.num_entities))
        rnames = kg.relation_names or tuple(str(i) for i in range(kg.num_relations))
        _write_lines(root / f"ent_ids_{side}", (f"{eraw[i]}\t{enames[i]}" for i in range(kg.num_entities)))
        _write_lines(root / f"rel_ids_{side}", (f"{rraw[i]}\t{rnames[i]}" for i in range(kg.num_relations)))
        _write_lines(
            root / f"triples_{side}",
            (f"{eraw[h]}\t{rraw[r]}\t{eraw[t]}" for h, r, t in kg.triples.tolist()),
        )
    e1, e2 = data.entity_raw
    _write_lines(root / "sup_ent_ids", (f"{e1[a]}\t{e2[b]}" for a, b in data.seeds.train.tolist()))
    _write_lines(root / "ref_ent_ids", (f"{e1[a]}\t{e2[b]}" for a, b in data.seeds.test.tolist()))
    if data.relation_truth is not None:
        r1, r2 = data.relation_raw
        _write_lines(root / "ref_rel_ids", (f"{r1[a]}\t{r2[b]}" for a, b in data.relation_truth.tolist()))
    if write_features and data.features is not None:
        raw = np.concatenate([e1, e2])
        _write_lines(
            root / "features",
            (f"{raw[i]} " + " ".join(repr(float(v)) for v in row) for i, row in enumerate(data.features)),
        )
