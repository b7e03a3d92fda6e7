"""Text-attributed graph data model and ego-graph extraction.

Graphs are undirected and immutable. Node ids are dense integers ``0..N-1``.
An ego-graph is the subgraph induced by a node's k-hop ball, split into a BFS
spanning tree (the document backbone) and the remaining cross-edges.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "GraphFormatError",
    "NodeRecord",
    "TextAttributedGraph",
    "EgoGraph",
    "load_graph",
    "read_label_vocab",
    "k_hop_neighborhood",
    "build_ego_graph",
]

_EDGE_SPLIT = re.compile(r"[\s,]+")


class GraphFormatError(ValueError):
    """Raised when a node or edge source cannot be parsed."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.source = source


@dataclass(frozen=True)
class NodeRecord:
    id: int
    text: str = ""
    label_id: int | None = None


def _edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True, eq=False)
class TextAttributedGraph:
    """Undirected graph whose nodes carry text.

    ``edges`` holds each undirected edge once as ``(min, max)``. Neighbor
    lists are sorted ascending, which fixes every traversal order downstream.
    """

    nodes: tuple[NodeRecord, ...]
    edges: frozenset[tuple[int, int]]
    label_texts: tuple[str, ...] = ()
    _adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.nodes)
        for i, rec in enumerate(self.nodes):
            if rec.id != i:
                raise ValueError(f"node ids must be dense 0..{n - 1}; position {i} holds id {rec.id}")
            if rec.label_id is not None and self.label_texts and not 0 <= rec.label_id < len(self.label_texts):
                raise ValueError(f"node {i} has label id {rec.label_id} outside the label vocabulary")
        adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references an unknown node")
            if u > v:
                raise ValueError(f"edge ({u}, {v}) is not in canonical (min, max) form")
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def from_edges(
        cls,
        texts: Sequence[str],
        edges: Iterable[tuple[int, int]],
        labels: Sequence[int | None] | None = None,
        label_texts: Sequence[str] = (),
    ) -> "TextAttributedGraph":
        """Build a graph, symmetrizing edges and dropping self-loops and duplicates."""
        n = len(texts)
        canon = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references an unknown node")
            if u != v:
                canon.add(_edge(u, v))
        if labels is None:
            labels = [None] * n
        nodes = tuple(NodeRecord(i, t, lab) for i, (t, lab) in enumerate(zip(texts, labels)))
        return cls(nodes, frozenset(canon), tuple(label_texts))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, v: int) -> tuple[int, ...]:
        self._check(v)
        return self._adj[v]

    def degree(self, v: int) -> int:
        return len(self.neighbors(v))

    def text(self, v: int) -> str:
        self._check(v)
        return self.nodes[v].text

    @property
    def labels(self) -> list[int | None]:
        return [rec.label_id for rec in self.nodes]

    def has_edge(self, u: int, v: int) -> bool:
        return _edge(u, v) in self.edges

    def with_text(self, v: int, text: str) -> "TextAttributedGraph":
        """Copy of the graph with one node's text replaced."""
        self._check(v)
        nodes = list(self.nodes)
        nodes[v] = replace(nodes[v], text=text)
        return TextAttributedGraph(tuple(nodes), self.edges, self.label_texts)

    def _check(self, v: int) -> None:
        if not isinstance(v, (int,)) or isinstance(v, bool) or not 0 <= v < len(self.nodes):
            raise KeyError(f"unknown node id {v!r}")


@dataclass(frozen=True)
class EgoGraph:
    """k-hop ego-graph of ``root`` as BFS tree plus cross-edges.

    ``tree_edges`` are ``(parent, child)`` pairs; ``cross_edges`` are
    canonical ``(min, max)`` pairs. ``children`` lists each member's tree
    children in ascending id order.
    """

    root: int
    hops: int
    members: frozenset[int]
    tree_edges: tuple[tuple[int, int], ...]
    cross_edges: frozenset[tuple[int, int]]
    preorder: tuple[int, ...]
    children: dict[int, tuple[int, ...]] = field(compare=False, repr=False, hash=False)
    depth: dict[int, int] = field(compare=False, repr=False, hash=False)

    @classmethod
    def from_tree(
        cls,
        root: int,
        hops: int,
        tree_edges: Iterable[tuple[int, int]],
        cross_edges: Iterable[tuple[int, int]],
    ) -> "EgoGraph":
        tree_edges = tuple(sorted(tree_edges))
        children: dict[int, list[int]] = {root: []}
        for parent, child in tree_edges:
            children.setdefault(parent, []).append(child)
            children.setdefault(child, [])
        kids = {u: tuple(sorted(c)) for u, c in children.items()}
        depth = {root: 0}
        preorder = []
        stack = [root]
        while stack:
            u = stack.pop()
            preorder.append(u)
            for c in reversed(kids[u]):
                depth[c] = depth[u] + 1
                stack.append(c)
        if len(preorder) != len(kids):
            raise ValueError("tree edges do not form a tree rooted at the ego root")
        return cls(
            root=root,
            hops=hops,
            members=frozenset(kids),
            tree_edges=tree_edges,
            cross_edges=frozenset(_edge(u, w) for u, w in cross_edges),
            preorder=tuple(preorder),
            children=kids,
            depth=depth,
        )

    @property
    def parent(self) -> dict[int, int]:
        return {c: p for p, c in self.tree_edges}

    def cross_neighbors(self, v: int) -> tuple[int, ...]:
        """Members joined to ``v`` by a cross-edge, ascending."""
        out = [w if u == v else u for u, w in self.cross_edges if v in (u, w)]
        return tuple(sorted(out))

    def induced_edges(self) -> frozenset[tuple[int, int]]:
        return frozenset(_edge(p, c) for p, c in self.tree_edges) | self.cross_edges


def k_hop_neighborhood(g: TextAttributedGraph, v: int, k: int) -> set[int]:
    """Nodes at shortest-path distance 1..k from ``v``."""
    return set(_bfs_levels(g, v, k)[1]) - {v}


def _bfs_levels(g: TextAttributedGraph, v: int, k: int):
    # level-synchronous BFS; the smallest-id parent at the previous level wins
    g._check(v)
    if k < 0:
        raise ValueError(f"hop count must be non-negative, got {k}")
    parent = {v: None}
    depth = {v: 0}
    frontier = [v]
    for level in range(1, k + 1):
        nxt = []
        for u in frontier:
            for w in g.neighbors(u):
                if w not in parent:
                    parent[w] = u
                    depth[w] = level
                    nxt.append(w)
        if not nxt:
            break
        frontier = sorted(nxt)
    return parent, depth


def build_ego_graph(g: TextAttributedGraph, v: int, k: int) -> EgoGraph:
    parent, _ = _bfs_levels(g, v, k)
    members = set(parent)
    tree = [(p, c) for c, p in parent.items() if p is not None]
    tree_set = {_edge(p, c) for p, c in tree}
    cross = []
    for u in sorted(members):
        for w in g.neighbors(u):
            if w > u and w in members and (u, w) not in tree_set:
                cross.append((u, w))
    return EgoGraph.from_tree(v, k, tree, cross)


# -- loading -----------------------------------------------------------------

def _read_lines(source) -> tuple[list[str], str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        return path.read_text(encoding="utf-8").splitlines(), str(path)
    return [line.rstrip("\n") for line in source], getattr(source, "name", "<stream>")


def read_label_vocab(source) -> list[str]:
    lines, _ = _read_lines(source)
    return [line.strip() for line in lines if line.strip()]


def load_graph(nodes_source, edges_source, labels_source=None) -> TextAttributedGraph:
    """Load a graph from a JSON-lines node file and an edge list.

    Node records carry ``id``, ``text`` and an optional ``label`` string.
    Edges are ``src dst`` integer pairs (whitespace or comma separated) or
    JSON records with ``src``/``dst``. Without a label vocabulary file, labels
    are numbered in order of first appearance.
    """
    lines, name = _read_lines(nodes_source)
    vocab = read_label_vocab(labels_source) if labels_source is not None else None
    label_index = {lab: i for i, lab in enumerate(vocab)} if vocab is not None else {}
    records: dict[int, tuple[str, str | None]] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"invalid JSON ({exc.msg})", lineno, name) from None
        if not isinstance(rec, dict) or "id" not in rec:
            raise GraphFormatError("node record needs an 'id' field", lineno, name)
        nid = rec["id"]
        if not isinstance(nid, int) or isinstance(nid, bool) or nid < 0:
            raise GraphFormatError(f"node id must be a non-negative integer, got {nid!r}", lineno, name)
        text = rec.get("text", "")
        if text is None:
            text = ""
        if not isinstance(text, str):
            raise GraphFormatError("node 'text' must be a string", lineno, name)
        label = rec.get("label")
        if label is not None and not isinstance(label, str):
            label = str(label)
        if nid in records:
            raise GraphFormatError(f"duplicate node id {nid}", lineno, name)
        records[nid] = (text, label)
        if label is not None and label not in label_index:
            if vocab is not None:
                raise GraphFormatError(f"label {label!r} not in label vocabulary", lineno, name)
            label_index[label] = len(label_index)
    n = len(records)
    if set(records) != set(range(n)):
        missing = min(set(range(n)) - set(records))
        raise GraphFormatError(f"node ids must be dense 0..{n - 1}; id {missing} is missing", None, name)

    elines, ename = _read_lines(edges_source)
    pairs = []
    for lineno, line in enumerate(elines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            if s.startswith("{"):
                rec = json.loads(s)
                u, v = rec["src"], rec["dst"]
                if not all(isinstance(x, int) and not isinstance(x, bool) for x in (u, v)):
                    raise ValueError
            else:
                parts = [p for p in _EDGE_SPLIT.split(s) if p]
                if len(parts) != 2:
                    raise ValueError
                u, v = int(parts[0]), int(parts[1])
        except (ValueError, KeyError, TypeError, json.JSONDecodeError):
            raise GraphFormatError(f"malformed edge record {s!r}", lineno, ename) from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edge ({u}, {v}) references an unknown node id", lineno, ename)
        pairs.append((u, v))

    texts = [records[i][0] for i in range(n)]
    labels = [label_index[records[i][1]] if records[i][1] is not None else None for i in range(n)]
    label_texts = vocab if vocab is not None else list(label_index)
    return TextAttributedGraph.from_edges(texts, pairs, labels, label_texts)


def save_graph(g: TextAttributedGraph, directory) -> None:
    """Write ``nodes.jsonl``, ``edges.txt`` and ``labels.txt`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "nodes.jsonl", "w", encoding="utf-8") as fh:
        for rec in g.nodes:
            row = {"id": rec.id, "text": rec.text}
            if rec.label_id is not None and g.label_texts:
                row["label"] = g.label_texts[rec.label_id]
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    with open(directory / "edges.txt", "w", encoding="utf-8") as fh:
        for u, v in sorted(g.edges):
            fh.write(f"{u} {v}\n")
    if g.label_texts:
        (directory / "labels.txt").write_text("".join(t + "\n" for t in g.label_texts), encoding="utf-8")
