"""Message-passing networks (GCN, GraphSAGE, GIN) with hand-written gradients.

All layers map F -> F and use a column-vector convention: a node's
pre-activation is ``W @ s + b`` where ``s`` is its aggregated message.

* GCN:  s = sum_u Ahat[v, u] x_u,  Ahat = D^-1/2 (A + I) D^-1/2
* SAGE: s = [x_v ; mean_{u in N(v)} x_u]   (W is F x 2F; empty mean is 0)
* GIN:  s = (1 + eps) x_v + sum_{u in N(v)} x_u

Node rows are kept in ascending node-id order so every neighbor sum has a
fixed accumulation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "ARCHITECTURES",
    "GnnParameters",
    "GnnOutput",
    "Tape",
    "init_params",
    "forward",
    "backward",
    "propagate",
    "subgraph_operators",
    "default_num_layers",
]

ARCHITECTURES = ("gcn", "sage", "gin")
ACTIVATIONS = ("tanh", "identity")


def default_num_layers(num_nodes: int) -> int:
    """Three layers for graphs up to 20k nodes, two beyond."""
    return 3 if num_nodes <= 20_000 else 2


@dataclass
class GnnParameters:
    architecture: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    eps: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def hidden_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        """Every trainable array, in a fixed order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        if self.architecture == "gin":
            out.append(self.eps)
        return out

    def zeros_like(self) -> "GnnParameters":
        return GnnParameters(
            self.architecture,
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            np.zeros_like(self.eps),
            self.seed,
        )

    def copy(self) -> "GnnParameters":
        return GnnParameters(
            self.architecture,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.eps.copy(),
            self.seed,
        )

    def astype(self, dtype) -> "GnnParameters":
        return GnnParameters(
            self.architecture,
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.eps.astype(dtype),
            self.seed,
        )

    def truncated(self, layers: int) -> "GnnParameters":
        return GnnParameters(
            self.architecture, self.weights[:layers], self.biases[:layers], self.eps[:layers], self.seed
        )


def init_params(arch: str, num_layers: int, dim: int, seed: int, dtype=np.float64) -> GnnParameters:
    """Glorot-uniform weights in +-sqrt(6 / 2F), zero biases, zero GIN eps."""
    if num_layers < 1:
        raise ValueError("a GNN needs at least one layer")
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (2 * dim))
    cols = 2 * dim if arch == "sage" else dim
    weights = [rng.uniform(-bound, bound, size=(dim, cols)).astype(dtype) for _ in range(num_layers)]
    biases = [np.zeros(dim, dtype=dtype) for _ in range(num_layers)]
    return GnnParameters(arch, weights, biases, np.zeros(num_layers, dtype=dtype), seed)


# -- graph operators -----------------------------------------------------------

@dataclass(frozen=True)
class Operators:
    """Dense propagation matrices for one subgraph."""

    adjacency: np.ndarray
    gcn: np.ndarray
    mean: np.ndarray


def subgraph_operators(n: int, edges: Iterable[tuple[int, int]], dtype=np.float64) -> Operators:
    """Operators over local indices ``0..n-1`` from undirected local edges."""
    A = np.zeros((n, n), dtype=dtype)
    for i, j in edges:
        if i == j:
            continue
        A[i, j] = 1.0
        A[j, i] = 1.0
    deg = A.sum(axis=1)
    d_hat = 1.0 / np.sqrt(deg + 1.0)
    gcn = (A + np.eye(n, dtype=dtype)) * d_hat[:, None] * d_hat[None, :]
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    mean = A * inv[:, None]
    return Operators(A, gcn, mean)


# -- forward / backward ---------------------------------------------------------

@dataclass
class Tape:
    architecture: str
    activation: str
    ops: Operators
    target: int
    inputs: list[np.ndarray] = field(default_factory=list)
    messages: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


@dataclass
class GnnOutput:
    vector: np.ndarray
    nodes: np.ndarray
    tape: Tape | None = None


def _message(arch: str, ops: Operators, x: np.ndarray, eps) -> np.ndarray:
    if arch == "gcn":
        return ops.gcn @ x
    if arch == "sage":
        return np.concatenate([x, ops.mean @ x], axis=1)
    return (1.0 + eps) * x + ops.adjacency @ x


def propagate(
    params: GnnParameters,
    x: np.ndarray,
    ops: Operators,
    target: int,
    *,
    layers: int | None = None,
    activation: str = "tanh",
    keep: bool = False,
) -> GnnOutput:
    """Run ``layers`` rounds over local feature rows ``x`` and return row ``target``."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    layers = params.num_layers if layers is None else layers
    if not 1 <= layers <= params.num_layers:
        raise ValueError(f"cannot run {layers} layers of a {params.num_layers}-layer network")
    if x.ndim != 2 or x.shape[1] != params.hidden_dim:
        raise ValueError(f"features have dimension {x.shape[-1]}, network expects {params.hidden_dim}")
    if not 0 <= target < x.shape[0]:
        raise KeyError(f"target row {target} outside 0..{x.shape[0] - 1}")
    x = x.astype(params.dtype, copy=False)
    if ops.adjacency.dtype != params.dtype:
        ops = Operators(*(a.astype(params.dtype) for a in (ops.adjacency, ops.gcn, ops.mean)))
    tape =Tape(params.architecture, activation, ops, target) if keep else None
    for t in range(layers):
        s = _message(params.architecture, ops, x, params.eps[t])
        z = s @ params.weights[t].T + params.biases[t]
        h = np.tanh(z) if activation == "tanh" else z
        if tape is not None:
            tape.inputs.append(x)
            tape.messages.append(s)
            tape.outputs.append(h)
        x = h
    return GnnOutput(x[target].copy(), x, tape)


def forward(
    params: GnnParameters,
    features: Mapping[int, np.ndarray],
    edges: Iterable[tuple[int, int]],
    target: int,
    *,
    layers: int | None = None,
    activation: str = "tanh",
    keep: bool = False,
) -> GnnOutput:
    """Embed ``target`` from per-node ``features`` over the given subgraph.

    ``features`` keys are the subgraph's node ids; ``edges`` must stay inside
    them. Rows of the returned ``nodes`` array follow ascending node id.
    """
    ids = sorted(features)
    if target not in features:
        raise KeyError(f"unknown target node {target}")
    index = {v: i for i, v in enumerate(ids)}
    local = []
    for u, v in edges:
        if u not in index or v not in index:
            raise KeyError(f"edge ({u}, {v}) leaves the provided node set")
        local.append((index[u], index[v]))
    dim = params.hidden_dim
    rows = []
    for v in ids:
        f = np.asarray(features[v])
        if f.shape != (dim,):
            raise ValueError(f"feature of node {v} has shape {f.shape}, expected ({dim},)")
        rows.append(f)
    x = np.stack(rows).astype(params.dtype)
    ops = subgraph_operators(len(ids), local, params.dtype)
    return propagate(params, x, ops, index[target], layers=layers, activation=activation, keep=keep)


def backward(
    params: GnnParameters,
    tape: Tape | None,
    upstream: np.ndarray,
    grads: GnnParameters | None = None,
) -> GnnParameters:
    """Accumulate d(loss)/d(params) given d(loss)/d(target output).

    Gradients add into ``grads`` when it is given.
    """
    if tape is None or not tape.outputs:
        raise ValueError("backward needs a tape recorded with keep=True")
    if grads is None:
        grads = params.zeros_like()
    arch = params.architecture
    ops = tape.ops
    dim = params.hidden_dim
    g = np.zeros_like(tape.outputs[-1])
    g[tape.target] = upstream
    for t in range(len(tape.outputs) - 1, -1, -1):
        h = tape.outputs[t]
        dz = g * (1.0 - h * h) if tape.activation == "tanh" else g
        grads.weights[t] += dz.T @ tape.messages[t]
        grads.biases[t] += dz.sum(axis=0)
        if t == 0 and arch != "gin":
            break
        ds = dz @ params.weights[t]
        if arch == "gin":
            grads.eps[t] += np.sum(ds * tape.inputs[t])
        if t == 0:
            break
        if arch == "gcn":
            g = ops.gcn.T @ ds
        elif arch == "sage":
            g = ds[:, :dim] + ops.mean.T @ ds[:, dim:]
        else:
            g = (1.0 + params.eps[t]) * ds + ops.adjacency.T @ ds
    return grads
