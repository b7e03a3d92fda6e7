import math

import numpy as np
import pytest

from tagkit.graph import TextAttributedGraph

G0_EDGES = [(0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 5)]


@pytest.fixture
def g0():
    texts = [f"node {i} text" for i in range(6)]
    return TextAttributedGraph.from_edges(texts, G0_EDGES)


def distances(g: TextAttributedGraph):
    """All-pairs hop distances by Floyd-Warshall, independent of the BFS code."""
    n = g.num_nodes
    d = [[math.inf] * n for _ in range(n)]
    for i in range(n):
        d[i][i] = 0
    for u, v in g.edges:
        d[u][v] = d[v][u] = 1
    for m in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][m] + d[m][j] < d[i][j]:
                    d[i][j] = d[i][m] + d[m][j]
    return d


def brute_k_hop(g: TextAttributedGraph, v: int, k: int) -> set:
    d = distances(g)
    return {u for u in range(g.num_nodes) if 1 <= d[v][u] <= k}


def random_graph(rng: np.random.Generator, n: int, p: float, words: int = 3, vocab: int = 40):
    texts = [" ".join(f"w{rng.integers(vocab)}" for _ in range(words)) for _ in range(n)]
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return TextAttributedGraph.from_edges(texts, edges)


def brute_losses(batch, K, pairs=None):
    """Direct triple-loop evaluation of the positive/negative/total objective."""

    def cos(a, b):
        a = [float(x) for x in a]
        b = [float(x) for x in b]
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            return 0.0
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    if pairs is None:
        pairs = [(k, l) for k in range(1, K + 1) for l in range(0, k)]
    n = len(batch)
    pos = 0.0
    for vs in batch:
        for k, l in pairs:
            pos += cos(vs.b[(k, l)], vs.h[k])
    neg = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for k, l in pairs:
                neg += cos(batch[i].b[(k, l)], batch[j].h[k])
    pos = -pos / (K * n)
    neg = neg / (K * n)
    return pos, neg, pos + neg
