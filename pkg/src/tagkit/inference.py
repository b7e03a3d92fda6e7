"""Zero-shot and few-shot node classification against label-text embeddings.

A node is assigned to label j with probability softmax_j(cos(z, e_j)), where
``z`` is the node embedding and ``e_j`` the provider embedding of label j.
Few-shot adaptation learns a residual map ``g(z) = z + W2 tanh(W1 z + b1) + b2``
on a labelled support set; ``W2`` and ``b2`` start at zero so ``g`` starts as
the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .alignment import TofgTable
from .checkpoint import Checkpoint
from .config import ViewConfig
from .embeddings import Provider
from .gnn import propagate
from .graph import TextAttributedGraph

__all__ = [
    "IncompatibleCheckpointError",
    "LabelEmbeddings",
    "Prediction",
    "FewShotAdapter",
    "AccuracyReport",
    "Split",
    "label_embeddings",
    "node_embedding",
    "node_embeddings",
    "zero_shot",
    "similarity_matrix",
    "few_shot_fit",
    "few_shot_split",
    "evaluate",
]


class IncompatibleCheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LabelEmbeddings:
    labels: tuple[str, ...]
    vectors: np.ndarray


@dataclass(frozen=True)
class Prediction:
    node: int
    probabilities: tuple[float, ...]
    predicted: int

    def record(self, labels: Sequence[str] | None = None) -> dict:
        row = {"node": self.node, "predicted": self.predicted, "probabilities": list(self.probabilities)}
        if labels:
            row["label"] = labels[self.predicted]
        return row


def label_embeddings(labels: Sequence[str], provider: Provider, template: str = "{}") -> LabelEmbeddings:
    if not labels:
        raise ValueError("empty label set")
    vecs = np.asarray(provider.embed([template.format(lab) for lab in labels]), dtype=np.float64)
    return LabelEmbeddings(tuple(labels), vecs)


# -- embeddings ------------------------------------------------------------------

def _parse_mode(mode: str, order: int | None, K: int) -> tuple[str, int]:
    m = mode.replace("_", "-")
    if m.startswith("tofg"):
        if m not in ("tofg", "tofg-k"):
            order = int(m.split("-", 1)[1])
        return "tofg", K if order is None else order
    if m in ("taga", "taga-rw", "glo-goft"):
        return m, K
    raise ValueError(f"unknown embedding mode {mode!r}")


def _check(checkpoint: Checkpoint, provider: Provider, kind: str) -> None:
    if checkpoint.params.hidden_dim != provider.dimension:
        raise IncompatibleCheckpointError(
            f"checkpoint dimension {checkpoint.params.hidden_dim} != provider dimension {provider.dimension}"
        )
    if kind == "glo-goft" and not checkpoint.train.glo_goft_only:
        raise IncompatibleCheckpointError("glo-goft mode needs a checkpoint trained with glo_goft_only")


def node_embeddings(
    checkpoint: Checkpoint,
    graph: TextAttributedGraph,
    provider: Provider,
    mode: str = "taga",
    order: int | None = None,
    nodes: Sequence[int] | None = None,
    table: TofgTable | None = None,
) -> np.ndarray:
    """Embeddings for ``nodes`` (default: all), one row per node.

    ``taga``/``taga-rw``/``glo-goft`` give the full-depth GNN view b[K, 0];
    ``tofg-k`` gives the provider embedding of the ``order``-order document.
    """
    K = checkpoint.view.max_order
    kind, k = _parse_mode(mode, order, K)
    _check(checkpoint, provider, kind)
    if table is None:
        view = checkpoint.view if kind != "tofg" else ViewConfig(max(K, 1), "full", checkpoint.view.walk)
        table = TofgTable(graph, provider, view)
    nodes = range(graph.num_nodes) if nodes is None else nodes
    if kind == "tofg":
        table.prefetch((v, k) for v in nodes)
        return np.stack([table.embedding(v, k) for v in nodes]) if len(nodes) else np.zeros((0, provider.dimension))
    rows = []
    for v in nodes:
        graph._check(v)
        ids, ops = table.ball(v, K)
        table.prefetch((u, 0) for u in ids)
        x = np.stack([table.embedding(u, 0) for u in ids])
        rows.append(propagate(checkpoint.params, x, ops, ids.index(v), layers=K).vector.astype(np.float64))
    return np.stack(rows) if rows else np.zeros((0, provider.dimension))


def node_embedding(checkpoint, graph, node: int, mode: str, provider: Provider, order: int | None = None, table=None):
    return node_embeddings(checkpoint, graph, provider, mode, order, [node], table)[0]


# -- zero-shot ---------------------------------------------------------------------

def similarity_matrix(embeddings: np.ndarray, label_emb: LabelEmbeddings) -> np.ndarray:
    z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    e = label_emb.vectors
    if z.shape[1] != e.shape[1]:
        raise ValueError(f"node embeddings have dimension {z.shape[1]}, labels {e.shape[1]}")
    z, e = _unit_rows(z), _unit_rows(e)
    return z @ e.T


def _unit_rows(m: np.ndarray) -> np.ndarray:
    """Rows scaled to unit length; zero rows stay zero. Pre-scaling by max |x| avoids underflow."""
    peak = np.max(np.abs(m), axis=1, keepdims=True)
    m = np.divide(m, peak, out=np.zeros_like(m, dtype=np.float64), where=peak > 0)
    norm = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norm, out=np.zeros_like(m), where=norm > 0)


def _softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=1, keepdims=True)
    p = np.exp(s)
    return p / p.sum(axis=1, keepdims=True)


def zero_shot(
    embeddings: np.ndarray,
    label_emb: LabelEmbeddings,
    nodes: Sequence[int] | None = None,
) -> list[Prediction]:
    if len(label_emb.labels) == 0:
        raise ValueError("empty label set")
    probs = _softmax(similarity_matrix(embeddings, label_emb))
    nodes = range(probs.shape[0]) if nodes is None else nodes
    # np.argmax returns the first maximum: lowest label index on ties
    return [Prediction(int(v), tuple(float(x) for x in p), int(np.argmax(p))) for v, p in zip(nodes, probs)]


# -- few-shot ----------------------------------------------------------------------

@dataclass
class FewShotAdapter:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    epochs: int = 0
    learning_rate: float = 0.0
    best_epoch: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def identity(cls, dim: int, seed: int = 0) -> "FewShotAdapter":
        rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / (2 * dim))
        return cls(rng.uniform(-bound, bound, (dim, dim)), np.zeros(dim), np.zeros((dim, dim)), np.zeros(dim))

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "FewShotAdapter":
        return FewShotAdapter(*(p.copy() for p in self.params()), self.epochs, self.learning_rate)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        return z + np.tanh(z @ self.w1.T + self.b1) @ self.w2.T + self.b2

    def predict(self, embeddings, label_emb: LabelEmbeddings, nodes=None) -> list[Prediction]:
        return zero_shot(self(embeddings), label_emb, nodes)


def _ce_and_grad(adapter: FewShotAdapter, z: np.ndarray, y: np.ndarray, e: np.ndarray):
    a = np.tanh(z @ adapter.w1.T + adapter.b1)
    out = z + a @ adapter.w2.T + adapter.b2
    on = np.linalg.norm(out, axis=1)
    en = np.linalg.norm(e, axis=1)
    safe_o = np.where(on > 0, on, 1.0)
    safe_e = np.where(en > 0, en, 1.0)
    valid = (on[:, None] > 0) & (en[None, :] > 0)
    cos = np.where(valid, (out @ e.T) / (safe_o[:, None] * safe_e[None, :]), 0.0)
    p = _softmax(cos)
    n = len(y)
    loss = float(-np.mean(np.log(p[np.arange(n), y])))
    dcos = p.copy()
    dcos[np.arange(n), y] -= 1.0
    dcos = np.where(valid, dcos / n, 0.0)
    # d cos(o, e)/do = e / (|o||e|) - cos o / |o|^2
    dout = (dcos / (safe_o[:, None] * safe_e[None, :])) @ e - ((dcos * cos).sum(axis=1) / safe_o ** 2)[:, None] * out
    gw2 = dout.T @ a
    gb2 = dout.sum(axis=0)
    da = (dout @ adapter.w2) * (1.0 - a * a)
    gw1 = da.T @ z
    gb1 = da.sum(axis=0)
    return loss, [gw1, gb1, gw2, gb2]


def few_shot_fit(
    embeddings: np.ndarray,
    support: Mapping[int, int],
    label_emb: LabelEmbeddings,
    epochs: int = 100,
    lr: float = 1e-2,
    seed: int = 0,
    validation: Mapping[int, int] | None = None,
) -> FewShotAdapter:
    """Fit the residual adapter by full-batch Adam on support cross-entropy.

    ``support`` and ``validation`` map row index to label index. The returned
    adapter is the best iterate: highest validation accuracy when a
    validation set is given (ties go to lower support loss), otherwise lowest
    support loss. Epoch 0 (the identity map) is always a candidate.
    """
    if not support:
        raise ValueError("few-shot support set is empty")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    idx = np.array(sorted(support))
    z = embeddings[idx]
    y = np.array([support[i] for i in idx])
    e = label_emb.vectors
    adapter = FewShotAdapter.identity(embeddings.shape[1], seed)
    adapter.epochs, adapter.learning_rate = epochs, lr
    m = [np.zeros_like(p) for p in adapter.params()]
    v = [np.zeros_like(p) for p in adapter.params()]
    if validation:
        vidx = np.array(sorted(validation))
        vz, vy = embeddings[vidx], np.array([validation[i] for i in vidx])

    def score(loss):
        if validation:
            pred = np.argmax(similarity_matrix(adapter(vz), label_emb), axis=1)
            return (-float(np.mean(pred == vy)), loss)
        return (loss,)

    best = None
    history = []
    for epoch in range(epochs + 1):
        loss, grads = _ce_and_grad(adapter, z, y, e)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite few-shot loss at epoch {epoch}")
        history.append(loss)
        s = score(loss)
        if best is None or s < best[0]:
            best = (s, adapter.copy(), epoch)
        if epoch == epochs:
            break
        t = epoch + 1
        for p, g, mi, vi in zip(adapter.params(), grads, m, v):
            mi *= 0.9
            mi += 0.1 * g
            vi *= 0.999
            vi += 0.001 * g * g
            p -= lr * (mi / (1 - 0.9 ** t)) / (np.sqrt(vi / (1 - 0.999 ** t)) + 1e-8)
    _, chosen, epoch = best
    chosen.epochs, chosen.learning_rate, chosen.best_epoch, chosen.history = epochs, lr, epoch, history
    return chosen


# -- splits and scoring --------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    support: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]

    def sizes(self) -> dict:
        return {"support": len(self.support), "validation": len(self.validation), "test": len(self.test)}


def few_shot_split(labels: Sequence[int | None], shots: int, seed: int) -> Split:
    """``shots`` nodes per class for support, the rest split 1:9 validation:test.

    Zero shots puts every labelled node in the test set.
    """
    labelled = [i for i, y in enumerate(labels) if y is not None]
    if shots == 0:
        return Split((), (), tuple(labelled))
    rng = np.random.default_rng(seed)
    support = []
    for c in sorted({labels[i] for i in labelled}):
        members = [i for i in labelled if labels[i] == c]
        take = min(shots, len(members))
        support += [members[j] for j in rng.choice(len(members), size=take, replace=False)]
    chosen = set(support)
    rest = np.array([i for i in labelled if i not in chosen])
    rest = rest[rng.permutation(len(rest))]
    n_val = len(rest) // 10
    return Split(tuple(sorted(support)), tuple(sorted(rest[:n_val].tolist())), tuple(sorted(rest[n_val:].tolist())))


@dataclass(frozen=True)
class AccuracyReport:
    accuracy: float
    correct: int
    total: int

    def record(self) -> dict:
        return {"accuracy": self.accuracy, "correct": self.correct, "total": self.total}


def evaluate(predictions: Sequence[Prediction], truth: Sequence[int | None], split: Sequence[int] | None = None) -> AccuracyReport:
    """Accuracy of ``predictions`` over the nodes in ``split`` (default: all predicted nodes)."""
    by_node = {p.node: p.predicted for p in predictions}
    nodes = sorted(by_node) if split is None else list(split)
    if not nodes:
        raise ValueError("nothing to evaluate")
    correct = 0
    for v in nodes:
        if v not in by_node:
            raise KeyError(f"no prediction for node {v}")
        if truth[v] is None:
            raise ValueError(f"node {v} has no ground-truth label")
        correct += int(by_node[v] == truth[v])
    return AccuracyReport(correct / len(nodes), correct, len(nodes))
