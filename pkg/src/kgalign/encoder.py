"""Highway GCN encoder over the union of both KGs, and relation composition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import GraphPair


class EncoderError(RuntimeError):
    pass


def build_adjacency(pair: GraphPair) -> sp.csr_matrix:
    """Symmetric-normalised adjacency ``D^-1/2 (A + I) D^-1/2`` over global entity ids.

    ``A`` is binary and undirected; relation types and triple direction are dropped.
    """
    n = pair.num_entities
    t = pair.global_triples()
    h, tl = t[:, 0], t[:, 2]
    off = h != tl
    rows = np.concatenate([h[off], tl[off]])
    cols = np.concatenate([tl[off], h[off]])
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.data[:] = 1.0  # collapse parallel edges
    a = a + sp.identity(n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(deg)
    d = sp.diags(inv)
    return (d @ a @ d).tocsr()


@dataclass
class EncoderParams:
    weights: list[np.ndarray]
    gate_weights: list[np.ndarray]
    gate_biases: list[np.ndarray]
    relation_transform: np.ndarray
    highway: list[bool] = field(default_factory=list)

    @classmethod
    def init(cls, dim: int, layers: int = 2, rng: np.random.Generator | None = None,
             gate_bias: float = -1.0, highway_all_layers: bool = True) -> EncoderParams:
        rng = rng if rng is not None else np.random.default_rng(0)

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        weights, gws, gbs = [], [], []
        for _ in range(layers):
            weights.append(glorot(dim, dim))
            gws.append(glorot(dim, dim))
            gbs.append(np.full(dim, gate_bias))
        wr = glorot(2 * dim, dim).T.copy()  # (dim, 2 dim)
        highway = [highway_all_layers or l == 0 for l in range(layers)]
        return cls(weights, gws, gbs, wr, highway)

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for l, (w, gw, gb) in enumerate(zip(self.weights, self.gate_weights, self.gate_biases)):
            out[f"W{l}"] = w
            if self.highway[l]:
                out[f"T{l}"] = gw
                out[f"b{l}"] = gb
        out["WR"] = self.relation_transform
        return out

    def copy(self) -> EncoderParams:
        return EncoderParams(
            [w.copy() for w in self.weights],
            [w.copy() for w in self.gate_weights],
            [b.copy() for b in self.gate_biases],
            self.relation_transform.copy(),
            list(self.highway),
        )

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LayerCache:
    h_in: np.ndarray
    agg: np.ndarray
    pre: np.ndarray
    act: np.ndarray
    gate: np.ndarray | None


def gcn_forward(adj, features: np.ndarray, params: EncoderParams, cache: list | None = None) -> np.ndarray:
    """Run every layer; if ``cache`` is a list, per-layer activations are appended to it.

    Layer: ``A = relu(adj @ H @ W)``; with highway ``G = sigmoid(H @ T + b)`` and the
    output is ``G * A + (1 - G) * H``.
    """
    h = features
    if h.shape[1] != params.dim:
        raise EncoderError(f"feature dim {h.shape[1]} does not match encoder dim {params.dim}")
    for l, w in enumerate(params.weights):
        agg = adj @ h
        pre = agg @ w
        act = np.maximum(pre, 0.0)
        if params.highway[l]:
            gate = _sigmoid(h @ params.gate_weights[l] + params.gate_biases[l])
            out = gate * act + (1.0 - gate) * h
        else:
            gate = None
            out = act
        if cache is not None:
            cache.append(LayerCache(h, agg, pre, act, gate))
        h = out
    if not np.all(np.isfinite(h)):
        raise EncoderError("non-finite activation in encoder output")
    return h


def gcn_backward(adj, params: EncoderParams, cache: list[LayerCache], grad_out: np.ndarray,
                 need_input_grad: bool = False):
    """Gradients of a scalar loss w.r.t. encoder weights given dLoss/dOutput.

    Returns ``(grads, grad_features)`` with ``grads`` keyed like ``params.named()``.
    ReLU derivative at 0 is taken as 0.
    """
    grads: dict[str, np.ndarray] = {}
    g = grad_out
    for l in reversed(range(len(params.weights))):
        c = cache[l]
        if params.highway[l]:
            d_act = g * c.gate
            d_gate = g * (c.act - c.h_in)
            d_h = g * (1.0 - c.gate)
            d_u = d_gate * c.gate * (1.0 - c.gate)
            grads[f"T{l}"] = c.h_in.T @ d_u
            grads[f"b{l}"] = d_u.sum(axis=0)
            d_h = d_h + d_u @ params.gate_weights[l].T
        else:
            d_act = g
            d_h = np.zeros_like(c.h_in)
        d_pre = d_act * (c.pre > 0)
        grads[f"W{l}"] = c.agg.T @ d_pre
        d_agg = d_pre @ params.weights[l].T
        d_h = d_h + adj.T @ d_agg
        g = d_h
    return grads, (g if need_input_grad else None)


@dataclass(frozen=True)
class RelationAverager:
    """Sparse operators mapping entity embeddings to mean distinct-head / -tail rows."""

    heads: sp.csr_matrix
    tails: sp.csr_matrix

    @classmethod
    def build(cls, pair: GraphPair) -> RelationAverager:
        t = pair.global_triples()
        nr, ne = pair.num_relations, pair.num_entities
        counts = np.bincount(t[:, 1], minlength=nr)
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0)[:5].tolist()
            raise EncoderError(f"relations without triples: {missing}")
        return cls(_mean_operator(t[:, 1], t[:, 0], nr, ne), _mean_operator(t[:, 1], t[:, 2], nr, ne))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([self.heads @ x, self.tails @ x], axis=1)

    def backward(self, grad_rel: np.ndarray) -> np.ndarray:
        d = grad_rel.shape[1] // 2
        return self.heads.T @ grad_rel[:, :d] + self.tails.T @ grad_rel[:, d:]


def _mean_operator(rels, ents, nr, ne):
    keys = np.unique(rels * ne + ents)
    r, e = keys // ne, keys % ne
    distinct = np.bincount(r, minlength=nr).astype(np.float64)
    vals = 1.0 / distinct[r]
    return sp.csr_matrix((vals, (r, e)), shape=(nr, ne))


def relation_embeddings(x: np.ndarray, pair: GraphPair) -> np.ndarray:
    """``concat[mean of distinct heads, mean of distinct tails]`` per global relation."""
    return RelationAverager.build(pair)(x)


@dataclass
class EmbeddingState:
    """Entity matrix over global ids plus the derived relation table."""

    entities: np.ndarray
    relations: np.ndarray
    entity_offset: int
    relation_offset: int

    @classmethod
    def from_entities(cls, x: np.ndarray, pair: GraphPair) -> EmbeddingState:
        return cls(x, relation_embeddings(x, pair), pair.entity_offset, pair.relation_offset)

    @property
    def dim(self) -> int:
        return self.entities.shape[1]

    def entities1(self) -> np.ndarray:
        return self.entities[: self.entity_offset]

    def entities2(self) -> np.ndarray:
        return self.entities[self.entity_offset:]

    def relations1(self) -> np.ndarray:
        return self.relations[: self.relation_offset]

    def relations2(self) -> np.ndarray:
        return self.relations[self.relation_offset:]
