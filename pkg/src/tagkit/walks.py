"""Structure-preserving random walks over an ego-graph's BFS tree.

A walk starts at the root and descends through tree children. At every step,
with probability ``p`` and if the current node has cross-edges, it jumps to a
cross-edge neighbor instead; descent then continues from that node's own tree
children. Walks stop at ``max_length`` nodes or at a node with no children.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import EgoGraph
from .graph2text import DocumentText, HierarchicalDocument, render

__all__ = ["WalkConfig", "WalkPath", "walk_rng", "sample_walk", "walk_subdocument", "walk_corpus"]


@dataclass(frozen=True)
class WalkConfig:
    """``max_length=None`` resolves to ``hops + 2`` for the ego being walked."""

    jump_probability: float = 0.3
    max_length: int | None = None
    num_walks: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.jump_probability <= 1.0:
            raise ValueError(f"jump probability must lie in [0, 1], got {self.jump_probability}")
        if self.max_length is not None and self.max_length < 1:
            raise ValueError("walk length must be at least 1")
        if self.num_walks < 1:
            raise ValueError("number of walks must be at least 1")

    def length_for(self, hops: int) -> int:
        return self.max_length if self.max_length is not None else hops + 2


@dataclass(frozen=True)
class WalkPath:
    nodes: tuple[int, ...]
    jump_positions: tuple[int, ...] = ()


def walk_rng(seed: int, root: int, walk_index: int) -> np.random.Generator:
    """Independent stream for one walk, fixed by (seed, root, walk index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), root, walk_index])))


def sample_walk(ego: EgoGraph, cfg: WalkConfig, rng: np.random.Generator) -> WalkPath:
    limit = cfg.length_for(ego.hops)
    v = ego.root
    path = [v]
    jumps = []
    while len(path) < limit and ego.children[v]:
        cross = ego.cross_neighbors(v)
        if rng.random() < cfg.jump_probability and cross:
            v = cross[rng.integers(len(cross))]
            jumps.append(len(path))
        else:
            kids = ego.children[v]
            v = kids[rng.integers(len(kids))]
        path.append(v)
    return WalkPath(tuple(path), tuple(jumps))


def walk_subdocument(doc: HierarchicalDocument, path: WalkPath) -> DocumentText:
    """Render only the sections visited by ``path``, in document order."""
    return render(doc.restrict(path.nodes))


def walk_corpus(ego: EgoGraph, doc: HierarchicalDocument, cfg: WalkConfig) -> list[DocumentText]:
    return [
        walk_subdocument(doc, sample_walk(ego, cfg, walk_rng(cfg.seed, ego.root, i)))
        for i in range(cfg.num_walks)
    ]
