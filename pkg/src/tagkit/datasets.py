"""Synthetic text-attributed graphs for tests, demos and benchmarks."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .graph import TextAttributedGraph, load_graph, save_graph

__all__ = [
    "CLASS_VOCAB",
    "SHARED_VOCAB",
    "planted_partition",
    "complete_tree",
    "erdos_renyi",
    "toy_dataset_dir",
    "load_toy",
]

CLASS_VOCAB = {
    "astronomy": (
        "astronomy star galaxy orbit telescope planet comet nebula cosmic lunar "
        "solar stellar quasar pulsar redshift eclipse asteroid meteor supernova cosmos"
    ).split(),
    "biology": (
        "biology cell gene protein enzyme tissue organism species mutation membrane "
        "neuron bacteria virus genome evolution receptor mitosis plasma ribosome chromosome"
    ).split(),
}

SHARED_VOCAB = (
    "study method result analysis data model approach paper evidence measurement "
    "theory experiment observe report sample effect novel propose review survey"
).split()


def planted_partition(
    n: int = 60,
    seed: int = 7,
    words: int = 12,
    shared_fraction: float = 0.2,
    p_in: float = 0.2,
    p_out: float = 0.02,
    classes: tuple[str, ...] = ("astronomy", "biology"),
) -> TextAttributedGraph:
    """Two-block stochastic graph whose node texts draw from per-class vocabularies.

    Nodes alternate between classes; each word of a node text comes from the
    shared vocabulary with probability ``shared_fraction``.
    """
    rng = np.random.default_rng(seed)
    labels = [i % len(classes) for i in range(n)]
    texts = []
    for lab in labels:
        vocab = CLASS_VOCAB[classes[lab]]
        toks = [
            SHARED_VOCAB[rng.integers(len(SHARED_VOCAB))] if rng.random() < shared_fraction
            else vocab[rng.integers(len(vocab))]
            for _ in range(words)
        ]
        texts.append(" ".join(toks))
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < (p_in if labels[u] == labels[v] else p_out):
                edges.append((u, v))
    return TextAttributedGraph.from_edges(texts, edges, labels, classes)


def complete_tree(branching: int = 3, depth: int = 5, words: int = 10) -> TextAttributedGraph:
    """Complete ``branching``-ary tree with root 0, BFS-numbered, ``words`` words per node."""
    n = (branching ** (depth + 1) - 1) // (branching - 1)
    edges = [((v - 1) // branching, v) for v in range(1, n)]
    texts = [" ".join(f"w{v}x{i}" for i in range(words)) for v in range(n)]
    return TextAttributedGraph.from_edges(texts, edges)


def erdos_renyi(n: int, p: float, rng: np.random.Generator, words: int = 3, vocab: int = 50) -> TextAttributedGraph:
    texts = [" ".join(f"t{rng.integers(vocab)}" for _ in range(words)) for _ in range(n)]
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return TextAttributedGraph.from_edges(texts, edges)


def toy_dataset_dir() -> Path:
    return Path(str(resources.files("tagkit") / "data" / "toy"))


def load_toy() -> TextAttributedGraph:
    d = toy_dataset_dir()
    return load_graph(d / "nodes.jsonl", d / "edges.txt", d / "labels.txt")


def write_toy(directory, **kwargs) -> TextAttributedGraph:
    g = planted_partition(**kwargs)
    save_graph(g, directory)
    return g
