"""Query-conditioned Graph Transformer encoder.

Entity ``i`` is encoded for a query relation ``r_q`` by attending over its
neighborhood messages ``LeakyReLU(W_f [e_i; r; e_j])``; attention logits
compare ``W_Q r_q`` against ``W_K r`` per head.  The aggregated heads are added
to ``e_i`` and passed through ``LN(FFN(LN(x)) + LN(x))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable

import numpy as np
import torch

from . import numerics as nx
from .kg import KnowledgeGraph, RelationSpace, sample_neighbor_mask


@dataclass
class EncoderConfig:
    dim: int = 200
    heads: int = 4
    layers: int = 1
    ffn_hidden: int | None = None
    leaky_slope: float = 0.01
    dropout: float = 0.1
    mask_fraction: float = 0.5
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1:
            raise ValueError("encoder needs at least one layer and one head")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ValueError("mask_fraction must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.dim // self.heads

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden or 2 * self.dim


def init_encoder_params(store: nx.ParamStore, config: EncoderConfig, num_entities: int,
                        relations: RelationSpace, rng: np.random.Generator) -> None:
    d, n, dh, f = config.dim, config.heads, config.d_head, config.ffn_width
    dt = store.dtype
    store.add("encoder.entity_table", nx.xavier_normal((num_entities, d), rng, dt))
    store.add("encoder.relation_table", nx.xavier_normal((relations.total, d), rng, dt))
    for l in range(config.layers):
        p = f"encoder.block{l}."
        store.add(p + "W_f", nx.xavier_normal((d, 3 * d), rng, dt))
        for name in ("W_Q", "W_K", "W_V"):
            store.add(p + name, nx.xavier_normal((n, dh, d), rng, dt, fan=(d, dh)))
        store.add(p + "ffn1.W", nx.xavier_normal((f, d), rng, dt))
        store.add(p + "ffn1.b", torch.zeros(f, dtype=dt))
        store.add(p + "ffn2.W", nx.xavier_normal((d, f), rng, dt))
        store.add(p + "ffn2.b", torch.zeros(d, dtype=dt))
        store.add(p + "ln1.gain", torch.ones(d, dtype=dt))
        store.add(p + "ln1.bias", torch.zeros(d, dtype=dt))
        store.add(p + "ln2.gain", torch.ones(d, dtype=dt))
        store.add(p + "ln2.bias", torch.zeros(d, dtype=dt))


def block_params(store: nx.ParamStore, layer: int) -> dict[str, torch.Tensor]:
    prefix = f"encoder.block{layer}."
    return {n[len(prefix):]: store[n] for n in store.names(prefix)}


# ------------------------------------------------------------------ block pieces

def message(e_i: torch.Tensor, r: torch.Tensor, e_j: torch.Tensor, W_f: torch.Tensor,
            slope: float = 0.01) -> torch.Tensor:
    """m_ijr = LeakyReLU(W_f [e_i; r; e_j]) for any matching leading dims."""
    d = W_f.shape[0]
    for v in (e_i, r, e_j):
        if v.shape[-1] != d:
            raise nx.DimensionError(f"message: input width {v.shape[-1]} vs W_f {tuple(W_f.shape)}")
    return nx.leaky_relu(nx.linear(nx.concat([e_i, r, e_j]), W_f), slope)


def attention_weights(query_rel: torch.Tensor, neighbor_rels: torch.Tensor, W_Q: torch.Tensor,
                      W_K: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Per-head softmax over neighbor slots.

    query_rel: (B, d); neighbor_rels: (B, K, d); W_Q/W_K: (N, d_head, d).
    Returns (B, N, K); an all-masked row yields zeros.
    """
    if neighbor_rels.shape[-1] != W_K.shape[-1] or query_rel.shape[-1] != W_Q.shape[-1]:
        raise nx.DimensionError(
            f"attention: shapes {tuple(query_rel.shape)}, {tuple(neighbor_rels.shape)} vs {tuple(W_K.shape)}")
    q = torch.einsum("nhd,bd->bnh", W_Q, query_rel)
    k = torch.einsum("nhd,bkd->bnkh", W_K, neighbor_rels)
    scores = torch.einsum("bnh,bnkh->bnk", q, k) / math.sqrt(W_Q.shape[1])
    if mask is None:
        mask = torch.ones(neighbor_rels.shape[:2], dtype=torch.bool)
    return nx.masked_softmax(scores, mask.unsqueeze(1).expand_as(scores))


def aggregate(e_i: torch.Tensor, messages: torch.Tensor, weights: torch.Tensor, W_V: torch.Tensor,
              drop=None) -> torch.Tensor:
    """e_i + concat_n sum_k alpha[n, k] * W_V[n] m_k.

    e_i: (B, d); messages: (B, K, d); weights: (B, N, K); W_V: (N, d_head, d).
    ``drop`` is applied to the aggregated branch before the residual add.
    """
    if weights.shape[1] != W_V.shape[0]:
        raise nx.DimensionError(f"aggregate: {weights.shape[1]} attention heads vs W_V {tuple(W_V.shape)}")
    v = torch.einsum("nhd,bkd->bnkh", W_V, messages)
    heads = torch.einsum("bnk,bnkh->bnh", weights, v)
    branch = heads.reshape(heads.shape[0], -1)
    if drop is not None:
        branch = drop(branch)
    return nx.add(e_i, branch)


def transformer_block(e_hat: torch.Tensor, params: dict, eps: float = 1e-5, drop=None) -> torch.Tensor:
    """g = LN2(FFN(LN1(e_hat)) + LN1(e_hat)) with FFN = W2 ReLU(W1 x + b1) + b2."""
    x = nx.layer_norm(e_hat, params["ln1.gain"], params["ln1.bias"], eps)
    hidden = nx.relu(nx.linear(x, params["ffn1.W"], params["ffn1.b"]))
    if drop is not None:
        hidden = drop(hidden)
    out = nx.linear(hidden, params["ffn2.W"], params["ffn2.b"])
    if drop is not None:
        out = drop(out)
    return nx.layer_norm(out + x, params["ln2.gain"], params["ln2.bias"], eps)


# ------------------------------------------------------------------ encoding over a graph

class GraphTransformer:
    def __init__(self, store: nx.ParamStore, config: EncoderConfig, relations: RelationSpace):
        self.store = store
        self.config = config
        self.relations = relations

    @property
    def entity_table(self) -> torch.Tensor:
        return self.store["encoder.entity_table"]

    @property
    def relation_table(self) -> torch.Tensor:
        return self.store["encoder.relation_table"]

    def inference_table(self, unseen, rng: np.random.Generator) -> torch.Tensor:
        """Entity table whose unseen rows are fresh Xavier-normal draws (no gradient)."""
        table = self.entity_table.detach().clone()
        ids = sorted(unseen)
        if ids:
            draws = nx.xavier_normal(tuple(table.shape), rng, table.dtype)
            table[ids] = draws[ids]
        return table

    def session(self, graph: KnowledgeGraph, train: bool = False, rng: np.random.Generator | None = None,
                base_table: torch.Tensor | None = None) -> "EncoderSession":
        return EncoderSession(self, graph, train, rng, base_table)


class EncoderSession:
    """Batch-scoped encoder evaluation.

    Encodings are memoised per key ``(entity, query_rel, hidden)``, where
    ``hidden`` is the query triple whose edges are removed from the episode
    graph (only kept in the key for the two endpoints it touches).  Neighbor
    masks and dropout draws are fixed for the lifetime of the session.
    """

    def __init__(self, encoder: GraphTransformer, graph: KnowledgeGraph, train: bool,
                 rng: np.random.Generator | None, base_table: torch.Tensor | None):
        if train and rng is None:
            raise ValueError("training-mode encoding needs an rng stream")
        self.enc = encoder
        self.cfg = encoder.config
        self.graph = graph
        self.train = train
        self.rng = rng
        self.gen = nx.torch_generator(rng) if train else None
        self.base_table = encoder.entity_table if base_table is None else base_table
        self.isolated: set = set()
        self._nbrs: dict = {}
        self._base: dict[int, torch.Tensor] = {}
        self._rel_table = None
        self._layers: list[dict] = [dict() for _ in range(self.cfg.layers + 1)]

    def drop(self, x: torch.Tensor) -> torch.Tensor:
        return nx.dropout(x, self.cfg.dropout, self.gen, self.train)

    def key(self, entity: int, query_rel: int, hidden: tuple | None = None) -> tuple:
        if hidden is not None and entity != hidden[0] and entity != hidden[2]:
            hidden = None
        return (entity, query_rel, hidden)

    # -- embeddings
    def relations(self, ids) -> torch.Tensor:
        if self._rel_table is None:
            self._rel_table = self.drop(self.enc.relation_table)
        return nx.embedding_gather(self._rel_table, ids)

    def base(self, entities) -> torch.Tensor:
        missing = sorted({e for e in entities if e not in self._base})
        if missing:
            rows = self.drop(nx.embedding_gather(self.base_table, missing))
            for e, row in zip(missing, rows):
                self._base[e] = row
        return torch.stack([self._base[e] for e in entities]) if entities else self.base_table[:0]

    def neighbors(self, key) -> list[tuple[int, int]]:
        if key in self._nbrs:
            return self._nbrs[key]
        entity, _, hidden = key
        edges = self.graph.adjacency[entity]
        if hidden is not None:
            h, r, t = hidden
            rs = self.graph.relations
            drop = set()
            if entity == h:
                drop.add((r, t))
            if entity == t:
                drop.add((rs.inverse(r), h))
            edges = [e for e in edges if e not in drop]
        if self.train and self.cfg.mask_fraction > 0 and edges:
            kept = set(sample_neighbor_mask([j for _, j in edges], self.cfg.mask_fraction, self.rng))
            edges = [e for e in edges if e[1] in kept]
        self._nbrs[key] = edges
        return edges

    # -- encodings
    def encode(self, keys: list[tuple]) -> torch.Tensor:
        """Final-layer encodings for ``keys`` as a (len(keys), d) tensor."""
        return self._layer(self.cfg.layers, keys)

    def encode_one(self, entity: int, query_rel: int, hidden=None) -> torch.Tensor:
        return self.encode([self.key(entity, query_rel, hidden)])[0]

    def _layer(self, layer: int, keys: list[tuple]) -> torch.Tensor:
        if layer == 0:
            return self.base([k[0] for k in keys])
        memo = self._layers[layer]
        todo = list(dict.fromkeys(k for k in keys if k not in memo))
        if todo:
            self._compute(layer, todo)
        return torch.stack([memo[k] for k in keys]) if keys else self.base_table[:0]

    def _compute(self, layer: int, keys: list[tuple]) -> None:
        d = self.cfg.dim
        nbr_lists = [self.neighbors(k) for k in keys]
        width = max((len(n) for n in nbr_lists), default=0)
        width = max(width, 1)
        nbr_keys, rel_ids, mask = [], [], []
        pad_key = keys[0]
        for k, nbrs in zip(keys, nbr_lists):
            ent, rq, hidden = k
            row_keys = [self.key(j, rq, hidden) for _, j in nbrs]
            if not nbrs:
                self.isolated.add(k)
            pad = width - len(nbrs)
            nbr_keys.extend(row_keys + [pad_key] * pad)
            rel_ids.extend([r for r, _ in nbrs] + [self.enc.relations.pad] * pad)
            mask.append([True] * len(nbrs) + [False] * pad)
        # inputs from the previous layer
        self_vec = self._layer(layer - 1, keys)
        nbr_vec = self._layer(layer - 1, nbr_keys).reshape(len(keys), width, d)
        rel_vec = self.relations(rel_ids).reshape(len(keys), width, d)
        q_vec = self.relations([k[1] for k in keys])
        mask_t = torch.tensor(mask, dtype=torch.bool)

        p = block_params(self.enc.store, layer - 1)
        e_i = self_vec.unsqueeze(1).expand(-1, width, -1)
        msgs = message(e_i, rel_vec, nbr_vec, p["W_f"], self.cfg.leaky_slope)
        alpha = attention_weights(q_vec, rel_vec, p["W_Q"], p["W_K"], mask_t)
        e_hat = aggregate(self_vec, msgs, alpha, p["W_V"], drop=self.drop)
        out = transformer_block(e_hat, p, self.cfg.ln_eps, drop=self.drop)
        memo = self._layers[layer]
        for k, row in zip(keys, out):
            memo[k] = row

    def attention(self, entity: int, query_rel: int, hidden=None, layer: int = 0) -> torch.Tensor:
        """Attention weights (N, K) of ``entity``'s neighborhood for inspection."""
        key = self.key(entity, query_rel, hidden)
        nbrs = self.neighbors(key)
        p = block_params(self.enc.store, layer)
        rel_vec = self.relations([r for r, _ in nbrs]).unsqueeze(0)
        q_vec = self.relations([query_rel])
        return attention_weights(q_vec, rel_vec, p["W_Q"], p["W_K"])[0]


def encode(entity: int, query_rel: int, graph: KnowledgeGraph, encoder: GraphTransformer,
           train: bool = False, rng: np.random.Generator | None = None, hidden=None,
           base_table: torch.Tensor | None = None) -> tuple[torch.Tensor, bool]:
    """Encode a single entity; returns (vector, isolated flag)."""
    sess = encoder.session(graph, train=train, rng=rng, base_table=base_table)
    vec = sess.encode_one(entity, query_rel, hidden)
    return vec, sess.key(entity, query_rel, hidden) in sess.isolated
