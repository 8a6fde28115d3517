"""Neighbor-joining trees, patristic distances and Newick text."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .errors import NewickParseError, NumericalError
from .gendist import DistanceMatrix


@dataclass(eq=False)
class PhyloTree:
    """Unrooted weighted tree.

    Leaves are nodes ``0..n-1`` and carry ``labels[i]``; internal nodes are
    numbered from ``n``. ``edges`` holds ``(u, v, length)`` triples.
    """

    labels: tuple[str, ...]
    edges: list[tuple[int, int, float]]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        n_nodes = self.n_nodes
        for u, v, length in self.edges:
            if not (0 <= u < n_nodes and 0 <= v < n_nodes) or u == v:
                raise ValueError(f"bad edge ({u}, {v})")
            if not (math.isfinite(length) and length >= 0):
                raise ValueError(f"edge length {length} must be finite and >= 0")
        if len(self.edges) != n_nodes - 1:
            raise ValueError("a tree on k nodes needs k-1 edges")
        if n_nodes > 1 and len(self._reach(0)) != n_nodes:
            raise ValueError("tree is not connected")

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    @property
    def n_nodes(self) -> int:
        nodes = {self.n_leaves - 1} if self.labels else set()
        for u, v, _ in self.edges:
            nodes.update((u, v))
        return max(nodes) + 1 if nodes else 0

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = defaultdict(list)
        for u, v, length in self.edges:
            adj[u].append((v, length))
            adj[v].append((u, length))
        return adj

    def _reach(self, start: int) -> dict[int, float]:
        adj = self.adjacency()
        dist = {start: 0.0}
        stack = [start]
        while stack:
            u = stack.pop()
            for v, length in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + length
                    stack.append(v)
        return dist

    def total_length(self) -> float:
        return float(sum(length for _, _, length in self.edges))

    def splits(self, min_length: float = 0.0) -> set[frozenset[str]]:
        """Nontrivial bipartitions, each as the side without the smallest label.

        The representation does not depend on leaf order, so trees over the
        same labels compare directly.
        """
        out = set()
        n = self.n_leaves
        anchor = min(self.labels)
        adj = self.adjacency()
        for u, v, length in self.edges:
            if length < min_length:
                continue
            side = _side(adj, v, u)
            leaves = frozenset(self.labels[x] for x in side if x < n)
            if anchor in leaves:
                leaves = frozenset(self.labels) - leaves
            if 1 < len(leaves) < n - 1:
                out.add(leaves)
        return out


def _side(adj, start, blocked):
    seen = {start, blocked}
    stack = [start]
    out = [start]
    while stack:
        u = stack.pop()
        for v, _ in adj[u]:
            if v not in seen:
                seen.add(v)
                out.append(v)
                stack.append(v)
    return out


def neighbor_joining(dm: DistanceMatrix) -> PhyloTree:
    """Saitou-Nei neighbor joining.

    Pairs minimising ``(n-2) d(i,j) - r_i - r_j`` are joined; near-ties
    (relative 1e-12) go to the smallest index pair. A negative branch is
    set to zero and its sibling takes the whole ``d(i,j)``; each clamp is
    recorded in ``tree.warnings``.
    """
    n = len(dm)
    if n < 2:
        raise ValueError("neighbor joining needs at least two taxa")
    try:
        joins, final, raw_warnings = _backend.nj_joins(dm.values)
    except FloatingPointError as exc:
        raise NumericalError(str(exc)) from None
    edges = []
    for a, b, new, la, lb in joins:
        if not (math.isfinite(la) and math.isfinite(lb)):
            raise NumericalError("non-finite branch length")
        edges.append((a, new, float(la)))
        edges.append((b, new, float(lb)))
    a, b, length = final
    if not math.isfinite(length):
        raise NumericalError("non-finite branch length")
    edges.append((a, b, float(length)))
    names = _node_names(dm.labels, n + len(joins))
    warnings = [
        f"negative branch {names[node]} ({raw:.6g}) clamped to 0; "
        f"length moved to sibling {names[sib]}"
        for node, sib, raw in raw_warnings
    ]
    return PhyloTree(dm.labels, edges, warnings)


def _node_names(labels, n_nodes):
    return [labels[i] if i < len(labels) else f"#{i}" for i in range(n_nodes)]


def patristic_matrix(tree: PhyloTree) -> DistanceMatrix:
    n = tree.n_leaves
    out = np.zeros((n, n))
    for i in range(n):
        reach = tree._reach(i)
        for j in range(n):
            out[i, j] = reach[j]
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return DistanceMatrix(tree.labels, out, "PATRISTIC")


# --- Newick -----------------------------------------------------------------

_SPECIAL = set("(),:;[]'")


def _fmt_len(x: float, precision: int | None) -> str:
    if precision is None:
        return repr(float(x))
    return f"{x:.{precision}g}"


def _fmt_label(label: str) -> str:
    if any(ch in _SPECIAL or ch.isspace() for ch in label):
        return "'" + label.replace("'", "''") + "'"
    return label


def to_newick(tree: PhyloTree, precision: int | None = 6) -> str:
    """Serialize with the last-created internal node as the (arbitrary) root.

    ``precision`` is the number of significant digits; ``None`` writes
    full ``repr`` precision for lossless round trips.
    """
    n = tree.n_leaves
    if tree.n_nodes == 2:
        half = _fmt_len(tree.edges[0][2] / 2.0, precision)
        return f"({_fmt_label(tree.labels[0])}:{half},{_fmt_label(tree.labels[1])}:{half});"
    adj = tree.adjacency()
    root = tree.n_nodes - 1

    def render(u, parent):
        if u < n and parent is not None:
            return _fmt_label(tree.labels[u])
        parts = []
        for v, length in sorted(adj[u]):
            if v == parent:
                continue
            parts.append(f"{render(v, u)}:{_fmt_len(length, precision)}")
        return "(" + ",".join(parts) + ")"

    return render(root, None) + ";"


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg):
        raise NewickParseError(msg, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch.isspace():
                self.pos += 1
            elif ch == "[":  # comment
                end = self.text.find("]", self.pos)
                if end < 0:
                    self.error("unterminated comment")
                self.pos = end + 1
            else:
                break

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def label(self):
        self.skip_ws()
        if self.peek() == "'":
            self.pos += 1
            out = []
            while True:
                if self.pos >= len(self.text):
                    self.error("unterminated quoted label")
                ch = self.text[self.pos]
                if ch == "'":
                    if self.text[self.pos + 1:self.pos + 2] == "'":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    return "".join(out)
                out.append(ch)
                self.pos += 1
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in _SPECIAL \
                and not self.text[self.pos].isspace():
            self.pos += 1
        return self.text[start:self.pos]

    def length(self):
        if self.peek() != ":":
            return None
        self.pos += 1
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos] in "+-.eE" or self.text[self.pos].isdigit()):
            self.pos += 1
        try:
            return float(self.text[start:self.pos])
        except ValueError:
            self.pos = start
            self.error("bad branch length")

    def node(self):
        # returns (label, children[(subtree, length)])
        children = []
        if self.peek() == "(":
            self.pos += 1
            while True:
                child = self.node()
                length = self.length()
                children.append((child, length))
                ch = self.peek()
                if ch == ",":
                    self.pos += 1
                    continue
                if ch == ")":
                    self.pos += 1
                    break
                self.error("expected ',' or ')'")
        lab = self.label()
        if not children and not lab:
            self.error("empty leaf label")
        return (lab, children)


def parse_newick(text: str) -> PhyloTree:
    """Parse Newick text into an unrooted :class:`PhyloTree`.

    Internal labels are ignored, missing lengths read as 0, and degree-2
    nodes (a rooted binary root) are suppressed by merging their edges.
    """
    p = _Parser(text)
    root = p.node()
    p.length()
    if p.peek() != ";":
        p.error("expected ';'")
    p.pos += 1
    if p.peek() != "":
        p.error("trailing characters after ';'")

    leaves: list[str] = []
    ids: dict[int, int] = {}
    counter = [0]
    raw_edges = []

    def visit(node):
        key = counter[0]
        counter[0] += 1
        lab, children = node
        if not children:
            leaves.append(lab)
            ids[key] = ("L", len(leaves) - 1)
        else:
            ids[key] = ("I", key)
        for child, length in children:
            ck = visit(child)
            raw_edges.append((key, ck, 0.0 if length is None else length))
        return key

    visit(root)
    if len(set(leaves)) != len(leaves):
        raise NewickParseError("duplicate leaf label", p.pos)
    if len(leaves) < 2:
        raise NewickParseError("tree needs at least two leaves", p.pos)

    # number leaves first, then internal nodes
    n = len(leaves)
    mapping = {}
    nxt = n
    for key in sorted(ids):
        kind, val = ids[key]
        if kind == "L":
            mapping[key] = val
        else:
            mapping[key] = nxt
            nxt += 1
    adj: dict[int, dict[int, float]] = defaultdict(dict)
    for u, v, length in raw_edges:
        a, b = mapping[u], mapping[v]
        if length < 0:
            raise NewickParseError("negative branch length", p.pos)
        adj[a][b] = length
        adj[b][a] = length
    # suppress degree-2 internal nodes
    changed = True
    while changed:
        changed = False
        for u in list(adj):
            if u >= n and len(adj[u]) == 2:
                (a, la), (b, lb) = adj[u].items()
                del adj[a][u], adj[b][u]
                adj[a][b] = la + lb
                adj[b][a] = la + lb
                del adj[u]
                changed = True
                break
    # renumber internal nodes compactly
    internal = sorted(u for u in adj if u >= n)
    renum = {u: u for u in range(n)}
    renum.update({u: n + k for k, u in enumerate(internal)})
    edges = []
    for u in adj:
        for v, length in adj[u].items():
            if u < v:
                edges.append((renum[u], renum[v], float(length)))
    return PhyloTree(tuple(leaves), edges)


def read_newick(path) -> PhyloTree:
    with open(path) as fh:
        return parse_newick(fh.read())


def write_newick(tree: PhyloTree, path, precision: int | None = 6) -> None:
    with open(path, "w") as fh:
        fh.write(to_newick(tree, precision) + "\n")
