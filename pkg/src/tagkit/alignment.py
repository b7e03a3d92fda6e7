"""Multi-order text/graph views and their contrastive alignment.

For a node v and orders 0 <= l < k <= K:

* ``h[k]``     - provider embedding of v's k-order document (0-order: v's own text);
* ``b[k, l]``  - (k - l)-layer GNN over the l-order embeddings of the nodes
  within k - l hops of v, on their induced subgraph.

Losses, with cosine similarity ``rho`` and minibatch ``B``::

    positive = -1/(K|B|) sum_{v in B} sum_{k,l} rho(b[k,l](v), h[k](v))
    negative = +1/(K|B|) sum_{v != u in B} sum_{k,l} rho(b[k,l](v), h[k](u))
    total    = positive + negative

The negative sum runs over ordered pairs.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .config import NEGATIVE_NORMALIZATIONS, TrainConfig, ViewConfig
from .embeddings import Provider
from .gnn import GnnParameters, Operators, Tape, backward, init_params, propagate, subgraph_operators
from .graph import TextAttributedGraph, build_ego_graph
from .graph2text import DocumentText, graph_document, render
from .walks import walk_corpus

log = logging.getLogger(__name__)

__all__ = [
    "TofgTable",
    "ViewEmbeddingSet",
    "LossReport",
    "TrainingError",
    "Adam",
    "build_views",
    "positive_loss",
    "negative_loss",
    "total_loss",
    "loss_gradients",
    "batch_loss_and_grad",
    "train",
]


class TrainingError(RuntimeError):
    pass


class TofgTable:
    """Cache of text-of-graph documents and embeddings for one graph.

    Documents are deterministic, so entries are keyed by (node, order) under
    a fixed mode and walk seed. Safe for concurrent readers.
    """

    def __init__(self, graph: TextAttributedGraph, provider: Provider, view: ViewConfig | None = None):
        self.graph = graph
        self.provider = provider
        self.view = view or ViewConfig()
        self._emb: dict[tuple[int, int], np.ndarray] = {}
        self._balls: dict[tuple[int, int], tuple[list[int], Operators]] = {}
        self._lock = threading.Lock()

    @property
    def key(self) -> tuple:
        w = self.view.walk
        return (self.view.tofg_mode, w.seed, w.jump_probability, w.max_length, w.num_walks)

    def documents(self, v: int, k: int) -> list[DocumentText]:
        """Documents whose embeddings make up ``h[k](v)``."""
        if k == 0:
            return [DocumentText.of(self.graph.text(v))]
        ego = build_ego_graph(self.graph, v, k)
        doc = graph_document(self.graph, ego)
        if self.view.tofg_mode == "random_walk":
            return walk_corpus(ego, doc, self.view.walk)
        return [render(doc)]

    def prefetch(self, items: Iterable[tuple[int, int]]) -> None:
        """Embed every missing (node, order) entry in one provider call."""
        todo = [it for it in dict.fromkeys(items) if it not in self._emb]
        if not todo:
            return
        docs = [self.documents(v, k) for v, k in todo]
        flat = [d.content for group in docs for d in group]
        vecs = np.asarray(self.provider.embed(flat), dtype=np.float64)
        if vecs.shape != (len(flat), self.provider.dimension):
            raise ValueError(f"provider returned shape {vecs.shape}, expected ({len(flat)}, {self.provider.dimension})")
        i = 0
        with self._lock:
            for item, group in zip(todo, docs):
                self._emb[item] = vecs[i:i + len(group)].mean(axis=0)
                i += len(group)

    def embedding(self, v: int, k: int) -> np.ndarray:
        vec = self._emb.get((v, k))
        if vec is None:
            self.prefetch([(v, k)])
            vec = self._emb[(v, k)]
        return vec

    def ball(self, v: int, hops: int) -> tuple[list[int], Operators]:
        """Sorted members of v's ``hops``-ball and operators of its induced subgraph."""
        key = (v, hops)
        hit = self._balls.get(key)
        if hit is None:
            ego = build_ego_graph(self.graph, v, hops)
            ids = sorted(ego.members)
            index = {u: i for i, u in enumerate(ids)}
            edges = [(index[a], index[b]) for a, b in sorted(ego.induced_edges())]
            hit = (ids, subgraph_operators(len(ids), edges))
            with self._lock:
                self._balls[key] = hit
        return hit


@dataclass
class ViewEmbeddingSet:
    node: int
    h: dict[int, np.ndarray]
    b: dict[tuple[int, int], np.ndarray]
    tapes: dict[tuple[int, int], Tape] = field(default_factory=dict, repr=False)


@dataclass
class LossReport:
    positive: float
    negative: float
    total: float
    breakdown: dict[tuple[int, int], tuple[float, float]] = field(default_factory=dict)

    def record(self) -> dict:
        return {"positive": self.positive, "negative": self.negative, "total": self.total}


def build_views(
    graph: TextAttributedGraph,
    params: GnnParameters,
    node: int,
    cfg: ViewConfig,
    provider: Provider | None = None,
    cache: TofgTable | None = None,
    *,
    pairs: Sequence[tuple[int, int]] | None = None,
    keep: bool = False,
    activation: str = "tanh",
) -> ViewEmbeddingSet:
    if cache is None:
        if provider is None:
            raise ValueError("build_views needs a provider or a TofgTable")
        cache = TofgTable(graph, provider, cfg)
    graph._check(node)
    if params.hidden_dim != cache.provider.dimension:
        raise ValueError(
            f"GNN dimension {params.hidden_dim} does not match provider dimension {cache.provider.dimension}"
        )
    K = cfg.max_order
    if params.num_layers < K:
        raise ValueError(f"{K}-order views need {K} GNN layers, network has {params.num_layers}")
    pairs = cfg.pairs() if pairs is None else list(pairs)
    needed = {(node, k) for k in range(K + 1)}
    for k, l in pairs:
        ids, _ = cache.ball(node, k - l)
        needed.update((u, l) for u in ids)
    cache.prefetch(sorted(needed))
    h = {k: cache.embedding(node, k) for k in range(K + 1)}
    b = {}
    tapes = {}
    for k, l in pairs:
        m = ViewConfig.layers(k, l)
        ids, ops = cache.ball(node, m)
        x = np.stack([cache.embedding(u, l) for u in ids])
        out = propagate(params, x, ops, ids.index(node), layers=m, keep=keep, activation=activation)
        b[(k, l)] = out.vector
        if keep:
            tapes[(k, l)] = out.tape
    return ViewEmbeddingSet(node, h, b, tapes)


# -- losses ------------------------------------------------------------------

def _cos_matrix(bm: np.ndarray, hm: np.ndarray):
    bn = np.sqrt(np.einsum("ij,ij->i", bm, bm))
    hn = np.sqrt(np.einsum("ij,ij->i", hm, hm))
    denom = np.outer(bn, hn)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom == 0, 0.0, (bm @ hm.T) / np.where(denom == 0, 1.0, denom))
    return c, bn, hn


def _pairs_of(batch: Sequence[ViewEmbeddingSet], K: int, pairs) -> list[tuple[int, int]]:
    pairs = [(k, l) for k in range(1, K + 1) for l in range(k)] if pairs is None else list(pairs)
    for vs in batch:
        for k, l in pairs:
            if (k, l) not in vs.b or k not in vs.h:
                raise KeyError(f"node {vs.node} is missing view entry b[{k},{l}] or h[{k}]")
    return pairs


def _evaluate(batch, K, pairs, temperature, want_grad, negatives="batch"):
    if not batch:
        raise ValueError("empty batch")
    pairs = _pairs_of(batch, K, pairs)
    n = len(batch)
    scale = 1.0 / (K * n)
    if negatives not in NEGATIVE_NORMALIZATIONS:
        raise ValueError(f"negatives must be one of {NEGATIVE_NORMALIZATIONS}")
    # "pairs" averages each node's negatives over its n - 1 partners
    neg_scale = scale / max(n - 1, 1) if negatives == "pairs" else scale
    pos = neg = 0.0
    breakdown = {}
    grads = {}
    off = ~np.eye(n, dtype=bool)
    for k, l in pairs:
        bm = np.stack([np.asarray(vs.b[(k, l)], dtype=np.float64) for vs in batch])
        hm = np.stack([np.asarray(vs.h[k], dtype=np.float64) for vs in batch])
        c, bn, hn = _cos_matrix(bm, hm)
        c = c / temperature
        p = -scale * float(np.trace(c))
        q = neg_scale * float(c[off].sum())
        breakdown[(k, l)] = (p, q)
        pos += p
        neg += q
        if want_grad:
            # d cos(b, h)/db = h / (|b||h|) - cos(b, h) b / |b|^2
            w = np.where(off, neg_scale, -scale) / temperature
            safe_b = np.where(bn > 0, bn, 1.0)
            safe_h = np.where(hn > 0, hn, 1.0)
            valid = (bn[:, None] > 0) & (hn[None, :] > 0)
            w = np.where(valid, w, 0.0)
            term_h = (w / (safe_b[:, None] * safe_h[None, :])) @ hm
            cos_raw = c * temperature
            term_b = ((w * cos_raw).sum(axis=1) / safe_b ** 2)[:, None] * bm
            g = term_h - term_b
            for i in range(n):
                grads[(i, (k, l))] = g[i]
    report = LossReport(pos, neg, pos + neg, breakdown)
    return report, grads


def positive_loss(batch: Sequence[ViewEmbeddingSet], K: int, pairs=None, temperature: float = 1.0) -> float:
    return _evaluate(batch, K, pairs, temperature, False)[0].positive


def negative_loss(
    batch: Sequence[ViewEmbeddingSet], K: int, pairs=None, temperature: float = 1.0, negatives: str = "batch"
) -> float:
    return _evaluate(batch, K, pairs, temperature, False, negatives)[0].negative


def total_loss(
    batch: Sequence[ViewEmbeddingSet], K: int, pairs=None, temperature: float = 1.0, negatives: str = "batch"
) -> LossReport:
    return _evaluate(batch, K, pairs, temperature, False, negatives)[0]


def loss_gradients(batch, K: int, pairs=None, temperature: float = 1.0, negatives: str = "batch"):
    """Loss report plus d(total)/d(b[k,l]) keyed by (batch index, (k, l))."""
    return _evaluate(batch, K, pairs, temperature, True, negatives)


def batch_loss_and_grad(
    params: GnnParameters,
    batch: Sequence[ViewEmbeddingSet],
    K: int,
    pairs=None,
    temperature: float = 1.0,
    negatives: str = "batch",
) -> tuple[LossReport, GnnParameters]:
    """Total loss and its gradient w.r.t. every GNN parameter.

    ``batch`` entries must carry tapes (``build_views(..., keep=True)``).
    """
    report, gb = loss_gradients(batch, K, pairs, temperature, negatives)
    grads = params.zeros_like()
    for (i, pair), g in gb.items():
        backward(params, batch[i].tapes[pair], g.astype(params.dtype), grads)
    return report, grads


# -- optimizers -----------------------------------------------------------------

class Adam:
    def __init__(self, params: GnnParameters, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: GnnParameters, grads: GnnParameters, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


class SGD:
    def __init__(self, params: GnnParameters):
        pass

    def step(self, params: GnnParameters, grads: GnnParameters, lr: float) -> None:
        for p, g in zip(params.arrays(), grads.arrays()):
            p -= (lr * g).astype(p.dtype)


# -- training -------------------------------------------------------------------

def train(
    graph: TextAttributedGraph,
    view_cfg: ViewConfig,
    train_cfg: TrainConfig,
    provider: Provider,
    cache: TofgTable | None = None,
    *,
    threads: int = 1,
    callback: Callable[[dict], None] | None = None,
) -> Checkpoint:
    """Self-supervised alignment of GNN views to text-of-graph embeddings.

    ``callback`` receives one record per logged step with keys
    ``step, lr, positive, negative, total``. With ``threads=1`` the result
    is bit-reproducible for a given seed.
    """
    if cache is None:
        cache = TofgTable(graph, provider, view_cfg)
    K = view_cfg.max_order
    dtype = np.dtype(train_cfg.dtype)
    params = init_params(train_cfg.architecture, K, provider.dimension, train_cfg.seed, dtype)
    pairs = view_cfg.pairs(global_only=train_cfg.glo_goft_only)
    batch_size = min(train_cfg.batch_size, graph.num_nodes)
    if batch_size < 2:
        raise TrainingError("graph needs at least two nodes to form negative pairs")
    opt = (
        Adam(params, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
        if train_cfg.optimizer == "adam"
        else SGD(params)
    )
    rng = np.random.default_rng([train_cfg.seed, 1])
    pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def views_for(v):
        return build_views(graph, params, int(v), view_cfg, cache=cache, pairs=pairs, keep=True)

    try:
        for step in range(train_cfg.steps):
            nodes = rng.choice(graph.num_nodes, size=batch_size, replace=False)
            batch = list(pool.map(views_for, nodes)) if pool else [views_for(v) for v in nodes]
            report, grads = batch_loss_and_grad(
                params, batch, K, pairs, train_cfg.temperature, train_cfg.negative_normalization
            )
            if not math.isfinite(report.total):
                raise TrainingError(
                    f"non-finite loss at step {step + 1} (positive={report.positive}, negative={report.negative})"
                )
            lr = train_cfg.learning_rate_at(step)
            opt.step(params, grads, lr)
            if callback is not None and ((step + 1) % train_cfg.log_every == 0 or step + 1 == train_cfg.steps):
                callback({"step": step + 1, "lr": lr, **report.record()})
    finally:
        if pool:
            pool.shutdown()
    return Checkpoint(params, provider.descriptor, view_cfg, train_cfg, train_cfg.steps)
