"""Corpus growth of full neighbourhood documents versus random-walk corpora."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import TextAttributedGraph, build_ego_graph
from .graph2text import graph_document, render
from .walks import WalkConfig, walk_corpus

__all__ = ["BenchRow", "BenchReport", "corpus_growth"]


@dataclass(frozen=True)
class BenchRow:
    hops: int
    full_words: float
    walk_words: float
    walk_total_words: float
    full_seconds: float
    walk_seconds: float
    walk_length: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    roots: list[int]
    average_degree: float
    dimension: int | None = None
    walk: dict = field(default_factory=dict)

    def ratios(self) -> list[tuple[int, float, float]]:
        """(k, full(k)/full(k-1), walk(k)/walk(k-1)) for k >= 1."""
        out = []
        for prev, row in zip(self.rows, self.rows[1:]):
            out.append((
                row.hops,
                row.full_words / prev.full_words if prev.full_words else float("inf"),
                row.walk_words / prev.walk_words if prev.walk_words else float("inf"),
            ))
        return out

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["hops", "full_words", "walk_words", "walk_total_words", "walk_length",
                    "full_seconds", "walk_seconds"])
        for r in self.rows:
            w.writerow([r.hops, f"{r.full_words:.2f}", f"{r.walk_words:.2f}", f"{r.walk_total_words:.2f}",
                        r.walk_length,
                        f"{r.full_seconds:.6f}", f"{r.walk_seconds:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "roots": self.roots,
            "average_degree": self.average_degree,
            "dimension": self.dimension,
            "walk": self.walk,
        }

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "bench_corpus.tsv").write_text(self.to_tsv(), encoding="utf-8")
        (directory / "bench_corpus.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def corpus_growth(
    graph: TextAttributedGraph,
    k_max: int,
    walk: WalkConfig | None = None,
    roots: Sequence[int] | None = None,
    num_roots: int = 20,
    seed: int = 0,
    length_offset: int = 1,
    dimension: int | None = None,
) -> BenchReport:
    """Mean node-text word counts per hop for full documents and walk corpora.

    ``walk_words`` is the mean size of one walk document (one encoder input);
    ``walk_total_words`` sums all ``num_walks`` documents of a root.

    Without an explicit ``walk.max_length`` the walk length at hop k is
    ``k + length_offset``. Word counts cover node text only; section numbers,
    titles and reference lines are layout, not corpus.
    """
    walk = walk or WalkConfig()
    if roots is None:
        rng = np.random.default_rng(seed)
        take = min(num_roots, graph.num_nodes)
        roots = sorted(rng.choice(graph.num_nodes, size=take, replace=False).tolist())
    roots = [int(r) for r in roots]
    rows = []
    for k in range(k_max + 1):
        length = walk.max_length if walk.max_length is not None else k + length_offset
        cfg = WalkConfig(walk.jump_probability, length, walk.num_walks, walk.seed)
        full, walked, walked_total = [], [], []
        t_full = t_walk = 0.0
        for r in roots:
            t0 = time.perf_counter()
            ego = build_ego_graph(graph, r, k)
            doc = graph_document(graph, ego)
            full.append(render(doc).corpus_words)
            t1 = time.perf_counter()
            docs = walk_corpus(ego, doc, cfg)
            walked_total.append(sum(d.corpus_words for d in docs))
            walked.append(walked_total[-1] / len(docs))
            t2 = time.perf_counter()
            t_full += t1 - t0
            t_walk += t2 - t1
        rows.append(BenchRow(k, float(np.mean(full)), float(np.mean(walked)), float(np.mean(walked_total)),
                             t_full, t_walk, length))
    degree = 2.0 * graph.num_edges / graph.num_nodes if graph.num_nodes else 0.0
    return BenchReport(rows, roots, degree, dimension, asdict(walk))
