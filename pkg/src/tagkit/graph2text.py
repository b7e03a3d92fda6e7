"""Hierarchical document layout for ego-graphs.

Each member of an ego-graph becomes a numbered section. Sections follow the
pre-order of the BFS tree, so a section number extends its parent's number
(``1``, ``1.1``, ``1.1.1``, ``1.2`` ...). Every cross-edge becomes one
``See also`` reference placed at the later endpoint and pointing back to the
earlier one. :func:`parse` inverts :func:`render` on structure.

Rendered grammar, per section::

    <number>. <title>
    <body lines>
    See also section <number>.

Body lines that could be mistaken for a header or reference, or that start
with the escape marker, are prefixed with ``\\``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .graph import EgoGraph, TextAttributedGraph

__all__ = [
    "Section",
    "HierarchicalDocument",
    "DocumentText",
    "DocumentParseError",
    "layout",
    "render",
    "parse",
    "parse_document",
    "flat_edge_listing",
    "canonical_structure",
    "structurally_equal",
    "word_count",
    "TITLE_WORDS",
]

TITLE_WORDS = 8
ESCAPE = "\\"

_NUMBER = r"\d+(?:\.\d+)*"
HEADER_RE = re.compile(rf"^({_NUMBER})\. (.+)$")
REFERENCE_RE = re.compile(rf"^See also section ({_NUMBER})\.$")


class DocumentParseError(ValueError):
    pass


def word_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class Section:
    number: str
    node: int
    text: str
    references: tuple[str, ...] = ()

    @property
    def depth(self) -> int:
        return self.number.count(".")


@dataclass(frozen=True)
class HierarchicalDocument:
    root: int
    sections: tuple[Section, ...]
    by_node: dict[int, str] = field(compare=False, hash=False)

    def restrict(self, nodes: Iterable[int]) -> "HierarchicalDocument":
        """Sub-document over ``nodes``, keeping numbers and document order.

        A reference survives only when both of its endpoints are kept.
        """
        keep = set(nodes)
        missing = keep - set(self.by_node)
        if missing:
            raise KeyError(f"nodes {sorted(missing)} have no section in this document")
        kept_numbers = {self.by_node[v] for v in keep}
        sections = tuple(
            Section(s.number, s.node, s.text, tuple(r for r in s.references if r in kept_numbers))
            for s in self.sections
            if s.node in keep
        )
        return HierarchicalDocument(self.root, sections, {s.node: s.number for s in sections})


@dataclass(frozen=True)
class DocumentText:
    """Rendered text plus its whitespace-token count.

    ``corpus_words`` counts only words of node texts, leaving out section
    numbers, titles and reference lines.
    """

    content: str
    word_count: int
    corpus_words: int = 0

    @classmethod
    def of(cls, content: str, corpus_words: int | None = None) -> "DocumentText":
        wc = word_count(content)
        return cls(content, wc, wc if corpus_words is None else corpus_words)

    def __str__(self) -> str:
        return self.content


def layout(ego: EgoGraph) -> HierarchicalDocument:
    numbers = {ego.root: "1"}
    for u in ego.preorder:
        for i, c in enumerate(ego.children[u], 1):
            numbers[c] = f"{numbers[u]}.{i}"
    position = {v: i for i, v in enumerate(ego.preorder)}
    refs: dict[int, list[int]] = {v: [] for v in ego.preorder}
    for u, w in ego.cross_edges:
        later, earlier = (u, w) if position[u] > position[w] else (w, u)
        refs[later].append(earlier)
    sections = tuple(
        Section(numbers[v], v, "", tuple(numbers[w] for w in sorted(refs[v], key=position.__getitem__)))
        for v in ego.preorder
    )
    return HierarchicalDocument(ego.root, sections, numbers)


def attach_texts(doc: HierarchicalDocument, g: TextAttributedGraph) -> HierarchicalDocument:
    sections = tuple(Section(s.number, s.node, g.text(s.node), s.references) for s in doc.sections)
    return HierarchicalDocument(doc.root, sections, doc.by_node)


def graph_document(g: TextAttributedGraph, ego: EgoGraph) -> HierarchicalDocument:
    """Layout of ``ego`` with node texts taken from ``g``."""
    return attach_texts(layout(ego), g)


def _title(section: Section) -> str:
    words = section.text.split()
    if not words:
        return f"Node {section.node}"
    return " ".join(words[:TITLE_WORDS])


def _escape(line: str) -> str:
    if line.startswith(ESCAPE) or HEADER_RE.match(line) or REFERENCE_RE.match(line):
        return ESCAPE + line
    return line


def render(doc: HierarchicalDocument) -> DocumentText:
    out = []
    corpus = 0
    for s in doc.sections:
        out.append(f"{s.number}. {_title(s)}\n")
        if s.text:
            for line in s.text.split("\n"):
                out.append(_escape(line) + "\n")
            corpus += word_count(s.text)
        for target in s.references:
            out.append(f"See also section {target}.\n")
    return DocumentText.of("".join(out), corpus)


def parse_document(text: DocumentText | str) -> HierarchicalDocument:
    """Recover sections from rendered text.

    Nodes are relabelled by document position, so section ``i`` (0-based)
    belongs to node ``i``.
    """
    content = text.content if isinstance(text, DocumentText) else text
    if not content:
        raise DocumentParseError("empty document")
    if not content.endswith("\n"):
        raise DocumentParseError("document must end with a newline")
    lines = content[:-1].split("\n")
    raw: list[tuple[str, list[str], list[str]]] = []
    for lineno, line in enumerate(lines, 1):
        header = HEADER_RE.match(line)
        ref = REFERENCE_RE.match(line)
        if header:
            raw.append((header.group(1), [], []))
        elif not raw:
            raise DocumentParseError(f"line {lineno}: malformed header {line!r}")
        elif ref:
            raw[-1][2].append(ref.group(1))
        else:
            if raw[-1][2]:
                raise DocumentParseError(f"line {lineno}: body text after a reference line")
            raw[-1][1].append(line[1:] if line.startswith(ESCAPE) else line)

    seen: dict[str, int] = {}
    next_child: dict[str, int] = {}
    sections = []
    for idx, (number, body, refs) in enumerate(raw):
        if idx == 0:
            if number != "1":
                raise DocumentParseError(f"first section must be numbered 1, got {number}")
        else:
            parent, _, last = number.rpartition(".")
            if parent not in seen:
                raise DocumentParseError(f"section {number} has no parent section {parent or '(none)'}")
            expected = next_child.get(parent, 1)
            if int(last) != expected or last != str(expected):
                raise DocumentParseError(
                    f"non-contiguous child numbering: expected {parent}.{expected}, got {number}"
                )
            # children of a parent must follow its subtree contiguously (pre-order)
            prev = raw[idx - 1][0]
            if not (prev == parent or prev.startswith(parent + ".")):
                raise DocumentParseError(f"section {number} is out of pre-order position")
            next_child[parent] = expected + 1
        if number in seen:
            raise DocumentParseError(f"duplicate section number {number}")
        for target in refs:
            if target not in seen:
                raise DocumentParseError(f"section {number} references unknown or later section {target}")
        seen[number] = idx
        sections.append(Section(number, idx, "\n".join(body), tuple(refs)))
    return HierarchicalDocument(0, tuple(sections), {s.node: s.number for s in sections})


def parse(text: DocumentText | str) -> EgoGraph:
    """Rebuild the ego-graph structure of a rendered document."""
    doc = parse_document(text)
    index = {s.number: s.node for s in doc.sections}
    tree = []
    cross = []
    for s in doc.sections:
        parent, _, _ = s.number.rpartition(".")
        if parent:
            tree.append((index[parent], s.node))
        for target in s.references:
            pair = (index[target], s.node)
            cross.append(pair)
    if len(set(cross)) != len(cross):
        raise DocumentParseError("duplicate cross-reference")
    tree_pairs = {tuple(sorted(e)) for e in tree}
    if any(tuple(sorted(e)) in tree_pairs for e in cross):
        raise DocumentParseError("reference duplicates a tree edge")
    hops = max((s.depth for s in doc.sections), default=0)
    return EgoGraph.from_tree(0, hops, tree, cross)


def canonical_structure(ego: EgoGraph):
    """Ego structure relabelled by pre-order position.

    Two ego-graphs with equal canonical structures render identically up to
    node text.
    """
    pos = {v: i for i, v in enumerate(ego.preorder)}
    tree = tuple(sorted((pos[p], pos[c]) for p, c in ego.tree_edges))
    cross = tuple(sorted(tuple(sorted((pos[u], pos[w]))) for u, w in ego.cross_edges))
    return len(ego.members), tree, cross


def structurally_equal(a: EgoGraph, b: EgoGraph) -> bool:
    return canonical_structure(a) == canonical_structure(b)


def flat_edge_listing(ego: EgoGraph, g: TextAttributedGraph | None = None) -> DocumentText:
    """Baseline encoding that lists nodes and connections sentence by sentence."""
    pos = {v: i + 1 for i, v in enumerate(ego.preorder)}
    lines = []
    corpus = 0
    for v in ego.preorder:
        text = g.text(v) if g is not None else ""
        corpus += word_count(text)
        lines.append(f"Node {pos[v]}: {text}." if text else f"Node {pos[v]}.")
    pairs = sorted(tuple(sorted((pos[u], pos[w]))) for u, w in ego.induced_edges())
    for a, b in pairs:
        lines.append(f"Node {a} connects to node {b}.")
    return DocumentText.of("".join(line + "\n" for line in lines), corpus)
