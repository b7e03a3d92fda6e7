import json

import numpy as np
import pytest

from tagkit.bench import corpus_growth
from tagkit.datasets import complete_tree, load_toy
from tagkit.graph import build_ego_graph
from tagkit.walks import WalkConfig


def tree_words(k, branching=3, words=10):
    """Direct summation over tree levels: every node within k hops of the root contributes its words."""
    return sum(words * branching ** d for d in range(k + 1))


@pytest.fixture(scope="module")
def tree_report():
    return corpus_growth(complete_tree(3, 5, 10), 5, WalkConfig(0.3, None, 8, 0), roots=[0])


def test_tree_shape():
    g = complete_tree(3, 5, 10)
    assert g.num_nodes == (3 ** 6 - 1) // 2
    assert all(len(g.text(v).split()) == 10 for v in range(g.num_nodes))
    assert len(build_ego_graph(g, 0, 5).cross_edges) == 0


def test_full_counts_match_closed_form(tree_report):
    for row in tree_report.rows:
        k = row.hops
        assert row.full_words == tree_words(k) == 10 * (3 ** (k + 1) - 1) / 2


def test_walk_bound_and_ratios(tree_report):
    for row in tree_report.rows:
        assert row.walk_length == row.hops + 1
        assert row.walk_total_words <= 8 * 10 * (row.hops + 1)
        assert row.walk_words <= 10 * (row.hops + 1)
    for k, full_ratio, walk_ratio in tree_report.ratios():
        if k >= 2:
            assert full_ratio >= 2.5
            assert walk_ratio <= 1.5


def test_hop_zero_is_own_words(tree_report):
    row = tree_report.rows[0]
    assert row.full_words == row.walk_words == 10


def test_monotone_on_toy():
    report = corpus_growth(load_toy(), 4, num_roots=10)
    fulls = [r.full_words for r in report.rows]
    assert fulls == sorted(fulls)
    assert all(r.full_words >= 0 and r.walk_words >= 0 for r in report.rows)
    assert len(report.roots) == 10
    assert report.average_degree == pytest.approx(2 * 175 / 60)


def test_report_files(tmp_path, tree_report):
    tree_report.write(tmp_path)
    lines = (tmp_path / "bench_corpus.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:3] == ["hops", "full_words", "walk_words"]
    assert len(lines) == 7
    data = json.loads((tmp_path / "bench_corpus.json").read_text())
    assert [r["full_words"] for r in data["rows"]] == [r.full_words for r in tree_report.rows]
