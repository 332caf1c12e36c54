"""Margin-based alignment loss, translational regulariser, Adam and the training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .config import EncoderConfig, TrainConfig
from .encoder import (
    EmbeddingState,
    EncoderParams,
    RelationAverager,
    build_adjacency,
    gcn_backward,
    gcn_forward,
)
from .graph import GraphPair

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def entity_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L1 distance between two embedding vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def pair_distances(x: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.abs(x[pairs[:, 0]] - x[pairs[:, 1]]).sum(axis=1)


def _scatter(n: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Row-wise ``out[index[i]] += values[i]`` with a fixed summation order."""
    m = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index)))
    return np.asarray(m @ values)


# -- negative sampling ----------------------------------------------------------


@dataclass
class Negatives:
    pairs: np.ndarray  # (m, 2) global ids
    owner: np.ndarray  # (m,) index into the positive array


def _nearest_pool(x_query, x_cands, exclude_local, pool):
    """For each query row, the ``pool`` nearest candidate rows (local ids) minus its excluded id."""
    dist = cdist(x_query, x_cands, metric="cityblock")
    dist[np.arange(len(exclude_local)), exclude_local] = np.inf
    pool = min(pool, x_cands.shape[0] - 1)
    if pool <= 0:
        return np.zeros((len(x_query), 0), dtype=np.int64)
    part = np.argpartition(dist, pool - 1, axis=1)[:, :pool]
    order = np.argsort(np.take_along_axis(dist, part, axis=1), axis=1, kind="stable")
    return np.take_along_axis(part, order, axis=1)


def sample_negatives(
    positives: np.ndarray,
    x: np.ndarray,
    k: int,
    n1: int,
    rng: np.random.Generator,
    pool: int = 100,
    both_sides: bool = True,
) -> Negatives:
    """Nearest-neighbour corruptions for every positive ``(p, q)`` in global ids.

    With ``both_sides`` the budget is split ``ceil(k/2)`` for replacing ``q`` and
    ``floor(k/2)`` for replacing ``p``. Replacements come from the current nearest
    ``pool`` entities of the replaced one in its own KG, never the entity itself.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = np.asarray(positives, dtype=np.int64)
    k_right = (k + 1) // 2 if both_sides else k
    k_left = k - k_right
    parts, owners = [], []
    n = x.shape[0]
    for side, kk in ((1, k_right), (0, k_left)):
        if kk == 0:
            continue
        lo, hi = (n1, n) if side == 1 else (0, n1)
        ent = positives[:, side]
        cands = _nearest_pool(x[ent], x[lo:hi], ent - lo, pool)
        if cands.shape[1] == 0:
            raise TrainingError("no candidate entities available for negative sampling")
        replace = cands.shape[1] < kk
        if replace:
            logger.info("candidate pool (%d) smaller than %d negatives; sampling with replacement",
                        cands.shape[1], kk)
        if replace:
            pick = rng.integers(0, cands.shape[1], size=(len(ent), kk))
        else:
            pick = rng.permuted(np.tile(np.arange(cands.shape[1]), (len(ent), 1)), axis=1)[:, :kk]
        chosen = np.take_along_axis(cands, pick, axis=1) + lo
        neg = np.repeat(positives, kk, axis=0)
        neg[:, side] = chosen.reshape(-1)
        parts.append(neg)
        owners.append(np.repeat(np.arange(len(positives)), kk))
    return Negatives(np.concatenate(parts), np.concatenate(owners))


# -- losses -----------------------------------------------------------------------


def margin_loss(positives, negatives: Negatives, x: np.ndarray, margin: float, with_grad: bool = False):
    """Sum over positives and their own corruptions of ``max(0, d(p,q) - d(p',q') + margin)``."""
    positives = np.asarray(positives, dtype=np.int64)
    diff_pos = x[positives[:, 0]] - x[positives[:, 1]]
    d_pos = np.abs(diff_pos).sum(axis=1)
    diff_neg = x[negatives.pairs[:, 0]] - x[negatives.pairs[:, 1]]
    d_neg = np.abs(diff_neg).sum(axis=1)
    terms = d_pos[negatives.owner] - d_neg + margin
    active = terms > 0
    loss = float(terms[active].sum())
    if not with_grad:
        return loss
    n = x.shape[0]
    weight = np.bincount(negatives.owner[active], minlength=len(positives)).astype(np.float64)
    g_pos = np.sign(diff_pos) * weight[:, None]
    g_neg = -np.sign(diff_neg[active])
    idx = np.concatenate([positives[:, 0], positives[:, 1],
                          negatives.pairs[active, 0], negatives.pairs[active, 1]])
    vals = np.concatenate([g_pos, -g_pos, g_neg, -g_neg])
    return loss, _scatter(n, idx, vals)


def transe_regularizer(x, rel_table, relation_transform, triples, with_grad: bool = False):
    """``sum over triples of ||h + W_R r - t||_1``.

    With ``with_grad`` returns ``(value, d_x, d_rel_table, d_W_R)``.
    """
    triples = np.asarray(triples, dtype=np.int64)
    rel_proj = rel_table @ relation_transform.T
    v = x[triples[:, 0]] + rel_proj[triples[:, 1]] - x[triples[:, 2]]
    value = float(np.abs(v).sum())
    if not with_grad:
        return value
    s = np.sign(v)
    n = x.shape[0]
    d_x = _scatter(n, np.concatenate([triples[:, 0], triples[:, 2]]), np.concatenate([s, -s]))
    d_proj = _scatter(rel_table.shape[0], triples[:, 1], s)
    d_rel = d_proj @ relation_transform
    d_wr = d_proj.T @ rel_table
    return value, d_x, d_rel, d_wr


def joint_loss(entity_loss: float, regularizer: float, weight: float) -> float:
    if weight < 0:
        raise ValueError("trade-off weight must be >= 0")
    return entity_loss + weight * regularizer


# -- objective through the encoder ---------------------------------------------------


class Objective:
    """Loss and analytic gradients for the encoder on a fixed graph pair."""

    def __init__(self, pair: GraphPair, features: np.ndarray, adj=None):
        self.pair = pair
        self.features = features
        self.adj = adj if adj is not None else build_adjacency(pair)
        self.averager = RelationAverager.build(pair)
        self.triples = pair.global_triples()

    def encode(self, params: EncoderParams, features=None, cache=None) -> np.ndarray:
        return gcn_forward(self.adj, self.features if features is None else features, params, cache)

    def __call__(self, params, positives, negatives, margin, reg_weight, *,
                 features=None, with_grad=True, regularize=True):
        """Return ``(L_E, Omega_R, L, grads)``; ``grads`` also holds ``F`` for the features.

        With ``regularize=False`` the regulariser is still evaluated for reporting
        but contributes no gradient (pretraining phase).
        """
        cache = [] if with_grad else None
        x = self.encode(params, features, cache)
        rel = self.averager(x)
        if not with_grad:
            le = margin_loss(positives, negatives, x, margin)
            om = transe_regularizer(x, rel, params.relation_transform, self.triples)
            return le, om, joint_loss(le, om, reg_weight if regularize else 0.0), None
        le, d_x = margin_loss(positives, negatives, x, margin, with_grad=True)
        use_reg = regularize and reg_weight > 0
        if use_reg:
            om, dxr, drel, dwr = transe_regularizer(
                x, rel, params.relation_transform, self.triples, with_grad=True)
            d_x = d_x + reg_weight * (dxr + self.averager.backward(drel))
            d_wr = reg_weight * dwr
        else:
            om = transe_regularizer(x, rel, params.relation_transform, self.triples)
            d_wr = np.zeros_like(params.relation_transform)
        grads, d_feat = gcn_backward(self.adj, params, cache, d_x, need_input_grad=True)
        grads["WR"] = d_wr
        grads["F"] = d_feat
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}")
        total = joint_loss(le, om, reg_weight) if use_reg else le
        return le, om, total, grads


# -- Adam ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place bias-corrected Adam update of every array in ``params``."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# -- training loop --------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    entity_loss: float
    regularizer: float
    total: float

    def line(self) -> str:
        return f"{self.epoch},{self.entity_loss:.6f},{self.regularizer:.6f},{self.total:.6f}"


class Trainer:
    """Owns encoder parameters, Adam state, negatives and the RNG for one run."""

    def __init__(self, pair: GraphPair, features: np.ndarray, positives: np.ndarray,
                 cfg: TrainConfig, enc: EncoderConfig | None = None, seed: int = 0,
                 params: EncoderParams | None = None):
        enc = enc or EncoderConfig(dim=features.shape[1])
        self.cfg = cfg
        self.pair = pair
        self.objective = Objective(pair, np.array(features, dtype=np.float64))
        self.positives = np.asarray(positives, dtype=np.int64)
        self.rng = np.random.default_rng(seed)
        self.params = params if params is not None else EncoderParams.init(
            enc.dim, enc.layers, self.rng, enc.gate_bias_init, enc.highway_all_layers)
        self.adam = AdamState()
        self.epoch = 0
        self.negatives: Negatives | None = None
        self.log: list[EpochRecord] = []

    @property
    def total_epochs(self) -> int:
        return self.cfg.pretrain_epochs + self.cfg.joint_epochs

    def trainable(self) -> dict[str, np.ndarray]:
        out = dict(self.params.named())
        if self.cfg.train_features:
            out["F"] = self.objective.features
        return out

    def step(self) -> EpochRecord:
        cfg = self.cfg
        joint = self.epoch >= cfg.pretrain_epochs
        if self.negatives is None or self.epoch % cfg.resample_every == 0:
            x = self.objective.encode(self.params)
            self.negatives = sample_negatives(
                self.positives, x, cfg.negatives, self.pair.entity_offset, self.rng,
                pool=cfg.neg_pool, both_sides=cfg.corrupt_both)
        le, om, total, grads = self.objective(
            self.params, self.positives, self.negatives, cfg.margin, cfg.reg_weight, regularize=joint)
        if not np.isfinite(total):
            raise TrainingError(
                f"non-finite loss at epoch {self.epoch}: L_E={le}, Omega_R={om}, L={total}")
        adam_step(self.trainable(), grads, self.adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        rec = EpochRecord(self.epoch, le, om, total)
        self.log.append(rec)
        logger.debug("epoch %s", rec.line())
        self.epoch += 1
        return rec

    def run(self, until: int | None = None):
        until = self.total_epochs if until is None else until
        while self.epoch < until:
            self.step()
        return self

    def embeddings(self) -> EmbeddingState:
        x = self.objective.encode(self.params)
        return EmbeddingState(x, self.objective.averager(x), self.pair.entity_offset, self.pair.relation_offset)

    # checkpointing -------------------------------------------------------------

    def save(self, path: str | Path):
        arrays = {f"param/{k}": v for k, v in self.params.named().items()}
        if self.cfg.train_features:
            arrays["param/F"] = self.objective.features
        arrays.update({f"m/{k}": v for k, v in self.adam.m.items()})
        arrays.update({f"v/{k}": v for k, v in self.adam.v.items()})
        if self.negatives is not None:
            arrays["neg/pairs"] = self.negatives.pairs
            arrays["neg/owner"] = self.negatives.owner
        meta = {
            "version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "rng": self.rng.bit_generator.state,
            "highway": self.params.highway,
            "log": [[r.epoch, r.entity_loss, r.regularizer, r.total] for r in self.log],
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def load(self, path: str | Path):
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise TrainingError(f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
            for name, p in self.params.named().items():
                p[...] = data[f"param/{name}"]
            if "param/F" in data:
                self.objective.features[...] = data["param/F"]
            self.adam = AdamState(
                {k[2:]: data[k].copy() for k in data.files if k.startswith("m/")},
                {k[2:]: data[k].copy() for k in data.files if k.startswith("v/")},
                meta["adam_step"],
            )
            self.negatives = (Negatives(data["neg/pairs"].copy(), data["neg/owner"].copy())
                              if "neg/pairs" in data else None)
        self.epoch = meta["epoch"]
        self.rng.bit_generator.state = meta["rng"]
        self.log = [EpochRecord(int(e), a, b, c) for e, a, b, c in meta["log"]]
        return self


def train(pair: GraphPair, positives: np.ndarray, features: np.ndarray, cfg: TrainConfig,
          enc: EncoderConfig | None = None, seed: int = 0) -> tuple[EmbeddingState, list[EpochRecord]]:
    """Pretrain on the margin loss, then train the joint objective.

    ``pair`` must already carry reverse relations; ``positives`` are global id pairs.
    """
    trainer = Trainer(pair, features, positives, cfg, enc, seed).run()
    return trainer.embeddings(), trainer.log
