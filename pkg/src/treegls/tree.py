"""Rooted trees with branch lengths: Newick I/O, rerooting, restriction.

A :class:`PhyloTree` is immutable after construction.  Node ids are dense
integers ``0..n_nodes-1``; the *canonical tip order* is the left-to-right
depth-first order of the tips, and every matrix or vector produced elsewhere
in the package indexes tips in that order.

Branch lengths are nonnegative real time units.  The root carries no branch
length.  Tips must be labeled; internal nodes may optionally be labeled
(labels, where present, are unique).  Zero-length edges are legal here; trees
whose covariance is singular are rejected at covariance-build time, not at
parse time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import NewickError, TreeError

# Characters that cannot appear in a label: Newick metacharacters plus
# whitespace and quotes.  Everything else printable-ASCII is allowed.
_LABEL_FORBIDDEN = set("(),:;'\"")
_LABEL_BAD_RE = re.compile(r"[^!-~]|[(),:;'\"]")


def _valid_label(label: str) -> bool:
    return bool(label) and _LABEL_BAD_RE.search(label) is None


class PhyloTree:
    """Immutable rooted tree with branch lengths.

    Construct via :func:`parse_newick`, :meth:`from_arrays`, or the builders
    in :mod:`treegls.simlab`.
    """

    __slots__ = (
        "_parent",
        "_edge",
        "_children",
        "_names",
        "_root",
        "_tip_ids",
        "_tip_labels",
        "_label_to_tip",
        "_name_to_node",
        "_depths",
        "_postorder",
        "_tip_range",
        "_levels",
    )

    def __init__(self, parent, edge, names):
        parent = np.asarray(parent, dtype=np.int64)
        edge = np.asarray(edge, dtype=np.float64)
        n = parent.shape[0]
        if n == 0:
            raise TreeError("empty tree")
        if edge.shape != (n,) or len(names) != n:
            raise TreeError("parent, edge and names must have equal length")
        self._parent = parent
        self._edge = edge
        self._names = tuple(names)

        plist = parent.tolist()
        children: list[list[int]] = [[] for _ in range(n)]
        root = -1
        for i, p in enumerate(plist):
            if p < 0:
                if root >= 0:
                    raise TreeError("more than one root")
                root = i
            else:
                if p >= n:
                    raise TreeError(f"parent index {p} out of range")
                children[p].append(i)
        if root < 0:
            raise TreeError("no root")
        self._root = root
        self._children = tuple(tuple(c) for c in children)
        self._validate()

        # Canonical tip order: left-to-right depth-first.
        order = []
        tips = []
        stack = [root]
        while stack:
            u = stack.pop()
            order.append(u)
            ch = self._children[u]
            if ch:
                stack.extend(reversed(ch))
            else:
                tips.append(u)
        if len(order) != n:
            raise TreeError("tree is not connected")
        self._tip_ids = tuple(tips)
        self._tip_labels = tuple(self._names[i] for i in tips)
        self._label_to_tip = {self._names[i]: i for i in tips}
        self._name_to_node = {
            nm: i for i, nm in enumerate(self._names) if nm is not None
        }

        elist = edge.tolist()
        dlist = [0.0] * n
        for u in order:
            p = plist[u]
            if p >= 0:
                dlist[u] = dlist[p] + elist[u]
        depths = np.asarray(dlist)
        depths.setflags(write=False)
        self._depths = depths
        self._postorder = None
        self._tip_range = None
        self._levels = None
        self._parent.setflags(write=False)
        self._edge.setflags(write=False)

    def _validate(self):
        nonroot = np.ones(self.n_nodes, dtype=bool)
        nonroot[self._root] = False
        bad = ~np.isfinite(self._edge) | (self._edge < 0)
        bad &= nonroot
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise TreeError(
                f"negative or non-finite branch length {self._edge[i]} on node {i}"
            )
        seen = set()
        for i, nm in enumerate(self._names):
            if nm is None:
                if not self._children[i]:
                    raise TreeError(f"tip node {i} lacks a label")
            else:
                if not _valid_label(nm):
                    raise TreeError(f"invalid label {nm!r}")
                if nm in seen:
                    raise TreeError(f"duplicate label {nm!r}")
                seen.add(nm)

    # ----------------------------------------------------------------- #
    # basic accessors
    # ----------------------------------------------------------------- #

    @property
    def n_nodes(self) -> int:
        return self._parent.shape[0]

    @property
    def n_tips(self) -> int:
        return len(self._tip_ids)

    @property
    def root(self) -> int:
        return self._root

    @property
    def parent(self) -> np.ndarray:
        """Parent id per node (-1 for the root)."""
        return self._parent

    @property
    def edge_length(self) -> np.ndarray:
        """Branch length to the parent per node (0.0 stored for the root)."""
        return self._edge

    @property
    def children(self) -> tuple[tuple[int, ...], ...]:
        return self._children

    @property
    def names(self) -> tuple:
        return self._names

    @property
    def tip_ids(self) -> tuple[int, ...]:
        """Tip node ids in canonical (left-to-right depth-first) order."""
        return self._tip_ids

    @property
    def tip_labels(self) -> tuple[str, ...]:
        return self._tip_labels

    @property
    def depths(self) -> np.ndarray:
        """Distance from the root per node."""
        return self._depths

    @property
    def tip_heights(self) -> np.ndarray:
        return self._depths[list(self._tip_ids)]

    def is_tip(self, node: int) -> bool:
        return not self._children[node]

    def node_id(self, node) -> int:
        """Resolve a node reference (integer id or label) to an id."""
        if isinstance(node, (int, np.integer)):
            i = int(node)
            if not 0 <= i < self.n_nodes:
                raise TreeError(f"node id {i} out of range")
            return i
        if isinstance(node, str):
            try:
                return self._name_to_node[node]
            except KeyError:
                raise TreeError(f"no node labeled {node!r}") from None
        raise TreeError(f"cannot interpret node reference {node!r}")

    @property
    def postorder(self) -> np.ndarray:
        """Node ids in postorder (children before parents)."""
        if self._postorder is None:
            order = []
            stack = [self._root]
            while stack:
                u = stack.pop()
                order.append(u)
                stack.extend(self._children[u])
            po = np.array(order[::-1], dtype=np.int64)
            po.setflags(write=False)
            self._postorder = po
        return self._postorder

    @property
    def tip_range(self) -> np.ndarray:
        """Per node, the half-open range [lo, hi) of canonical tip indices below it.

        Tips of any subtree are contiguous in canonical order because that
        order is depth-first.
        """
        if self._tip_range is None:
            n = self.n_nodes
            lo = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
            hi = np.zeros(n, dtype=np.int64)
            for idx, t in enumerate(self._tip_ids):
                lo[t] = idx
                hi[t] = idx + 1
            for u in self.postorder:
                p = self._parent[u]
                if p >= 0:
                    lo[p] = min(lo[p], lo[u])
                    hi[p] = max(hi[p], hi[u])
            rng = np.column_stack([lo, hi])
            rng.setflags(write=False)
            self._tip_range = rng
        return self._tip_range

    @property
    def levels(self) -> np.ndarray:
        """Topological depth (edge count from the root) per node."""
        if self._levels is None:
            lv = np.zeros(self.n_nodes, dtype=np.int64)
            for u in self.postorder[::-1]:
                p = self._parent[u]
                if p >= 0:
                    lv[u] = lv[p] + 1
            lv.setflags(write=False)
            self._levels = lv
        return self._levels

    def tips_below(self, node: int) -> tuple[str, ...]:
        """Labels of the tips in the subtree rooted at ``node``, canonical order."""
        lo, hi = self.tip_range[node]
        return self._tip_labels[lo:hi]

    def mrca(self, labels) -> int:
        """Most recent common ancestor of a nonempty set of tip labels."""
        ids = [self._require_tip(lab) for lab in labels]
        if not ids:
            raise TreeError("mrca of an empty set")
        lv = self.levels
        cur = ids[0]
        for other in ids[1:]:
            a, b = cur, other
            while a != b:
                if lv[a] >= lv[b]:
                    a = int(self._parent[a])
                else:
                    b = int(self._parent[b])
            cur = a
        return cur

    def _require_tip(self, label: str) -> int:
        try:
            return self._label_to_tip[label]
        except KeyError:
            raise TreeError(f"unknown tip label {label!r}") from None

    def __repr__(self):
        return f"PhyloTree(n_tips={self.n_tips}, n_nodes={self.n_nodes})"

    @classmethod
    def from_arrays(cls, parent, edge, names) -> "PhyloTree":
        """Build a tree from parallel arrays (parent id or -1, edge length, label)."""
        return cls(parent, edge, names)


@dataclass(frozen=True)
class TreeStats:
    """Structural summary used by the bound formulas.

    ``height_mean`` is the arithmetic mean of root-to-tip distances and is the
    default tree height ``T``; ``height_max`` is the alternative policy for
    non-ultrametric trees.
    """

    n_tips: int
    total_length: float
    root_degree: int
    min_root_edge: float
    tip_heights: np.ndarray
    height_mean: float
    height_max: float
    is_ultrametric: bool

    def height(self, policy: str = "mean") -> float:
        if policy == "mean":
            return self.height_mean
        if policy == "max":
            return self.height_max
        raise TreeError(f"unknown height policy {policy!r}")


ULTRAMETRIC_RTOL = 1e-8


def tree_stats(tree: PhyloTree) -> TreeStats:
    """Compute tip heights, total length, root degree and the ultrametric flag."""
    heights = tree.tip_heights
    hmax = float(heights.max())
    hmin = float(heights.min())
    spread = hmax - hmin
    ultra = spread <= ULTRAMETRIC_RTOL * max(abs(hmax), 1.0)
    root_children = tree.children[tree.root]
    min_root_edge = (
        float(min(tree.edge_length[c] for c in root_children))
        if root_children
        else float("nan")
    )
    return TreeStats(
        n_tips=tree.n_tips,
        total_length=float(tree.edge_length.sum()),
        root_degree=len(root_children),
        min_root_edge=min_root_edge,
        tip_heights=heights,
        height_mean=float(heights.mean()),
        height_max=hmax,
        is_ultrametric=bool(ultra),
    )


# --------------------------------------------------------------------- #
# Newick parsing and writing
# --------------------------------------------------------------------- #


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message):
        raise NewickError(f"{message} (at position {self.pos})", location=self.pos)

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def read_label(self):
        start = self.pos
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch in _LABEL_FORBIDDEN or ch.isspace():
                break
            if not "!" <= ch <= "~":
                self.error(f"illegal character {ch!r} in label")
            self.pos += 1
        return self.text[start:self.pos]

    def read_number(self):
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in "+-.eE0123456789":
            self.pos += 1
        token = self.text[start:self.pos]
        if not token:
            self.error("expected a branch length")
        try:
            return float(token)
        except ValueError:
            self.error(f"bad branch length {token!r}")


def parse_newick(text: str) -> PhyloTree:
    """Parse a single rooted Newick expression.

    Branch lengths are mandatory on all non-root edges.  A branch length on
    the outermost element introduces a (possibly unary) root above it, so
    ``"A:1;"`` is the one-tip tree of height 1.
    """
    p = _Parser(text)
    parent: list[int] = []
    edge: list[float] = []
    names: list = []

    def new_node(par):
        parent.append(par)
        edge.append(0.0)
        names.append(None)
        return len(parent) - 1

    def parse_element(par, toplevel):
        p.skip_ws()
        if p.peek() == "(":
            node = new_node(par)
            p.pos += 1
            while True:
                parse_element(node, False)
                p.skip_ws()
                ch = p.peek()
                if ch == ",":
                    p.pos += 1
                    continue
                if ch == ")":
                    p.pos += 1
                    break
                p.error("expected ',' or ')'")
            p.skip_ws()
            label = p.read_label()
            if label:
                names[node] = label
        else:
            label = p.read_label()
            if not label:
                p.error("expected a tip label or '('")
            node = new_node(par)
            names[node] = label
        p.skip_ws()
        has_length = False
        if p.peek() == ":":
            p.pos += 1
            p.skip_ws()
            value = p.read_number()
            if value < 0:
                p.error(f"negative branch length {value}")
            edge[node] = value
            has_length = True
        if not toplevel and not has_length:
            p.error("missing branch length on a non-root edge")
        return node, has_length

    p.skip_ws()
    top, top_has_length = parse_element(-1, True)
    p.skip_ws()
    if p.peek() != ";":
        p.error("expected ';'")
    p.pos += 1
    p.skip_ws()
    if p.pos != len(p.text):
        p.error("trailing text after ';'")

    if top_has_length:
        # Promote: a real root sits above the outermost element.
        parent.append(-1)
        edge.append(0.0)
        names.append(None)
        parent[top] = len(parent) - 1

    try:
        return PhyloTree(parent, edge, names)
    except TreeError as exc:
        raise NewickError(str(exc)) from exc


def write_newick(tree: PhyloTree) -> str:
    """Serialize a tree; branch lengths use shortest round-trip formatting."""

    def fmt(x: float) -> str:
        return repr(float(x))

    out = []
    # Iterative pre/post emission to survive very deep trees.
    OPEN, CLOSE = 0, 1
    stack = [(OPEN, tree.root)]
    while stack:
        action, u = stack.pop()
        if action == OPEN:
            ch = tree.children[u]
            if ch:
                out.append("(")
                stack.append((CLOSE, u))
                for i, c in enumerate(reversed(ch)):
                    stack.append((OPEN, c))
                    if i < len(ch) - 1:
                        stack.append((-1, None))
            else:
                out.append(tree.names[u])
                if u != tree.root:
                    out.append(":" + fmt(tree.edge_length[u]))
        elif action == CLOSE:
            out.append(")")
            if tree.names[u] is not None:
                out.append(tree.names[u])
            if u != tree.root:
                out.append(":" + fmt(tree.edge_length[u]))
        else:
            out.append(",")
    out.append(";")
    return "".join(out)


# --------------------------------------------------------------------- #
# rerooting, restriction, extraction
# --------------------------------------------------------------------- #


def reroot(tree: PhyloTree, node) -> PhyloTree:
    """Reroot at an internal node, preserving all pairwise path lengths.

    Edges on the path from the new root to the old root are reversed; no node
    is added or removed, so the total length is preserved exactly.  Rerooting
    at a tip is rejected.  If the old root is unary and unlabeled it would be
    stranded as an unlabeled tip, which is also rejected.
    """
    nid = tree.node_id(node)
    if tree.is_tip(nid):
        raise TreeError("cannot reroot at a tip")
    if nid == tree.root:
        return tree
    if len(tree.children[tree.root]) == 1 and tree.names[tree.root] is None:
        raise TreeError(
            "rerooting would strand the unlabeled unary root as an unlabeled tip"
        )

    # Path from the new root up to (excluding) the old root; map each node on
    # the path above nid to the child edge that leads toward nid.
    path = [nid]
    while path[-1] != tree.root:
        path.append(int(tree.parent[path[-1]]))
    on_path_child = {path[i]: path[i - 1] for i in range(1, len(path))}

    new_parent: list[int] = []
    new_edge: list[float] = []
    new_names: list = []
    stack = [(nid, -1, 0.0)]
    while stack:
        u, par_new, elen = stack.pop()
        my_id = len(new_parent)
        new_parent.append(par_new)
        new_edge.append(elen)
        new_names.append(tree.names[u])
        entries = []
        drop = on_path_child.get(u)
        for c in tree.children[u]:
            if c != drop:
                entries.append((c, my_id, float(tree.edge_length[c])))
        p = int(tree.parent[u])
        if (u == nid or u in on_path_child) and p >= 0:
            # Reversed edge toward the old root keeps its length.
            entries.append((p, my_id, float(tree.edge_length[u])))
        stack.extend(reversed(entries))

    return PhyloTree(new_parent, new_edge, new_names)


def restrict_to_tips(tree: PhyloTree, keep) -> PhyloTree:
    """Restrict to a tip subset, suppressing unary nodes by summing edges.

    The original root is always retained (possibly with a single child) so
    that quantities referring to the root ancestor keep their meaning across
    subsamples.  Shared-ancestry times among the kept tips are unchanged.
    """
    keep = list(keep)
    if not keep:
        raise TreeError("keep must be a nonempty set of tip labels")
    keep_ids = {tree._require_tip(lab) for lab in keep}

    count = np.zeros(tree.n_nodes, dtype=np.int64)
    for t in keep_ids:
        count[t] = 1
    parent_arr = tree.parent
    for u in tree.postorder:
        p = parent_arr[u]
        if p >= 0:
            count[p] += count[u]

    new_parent: list[int] = []
    new_edge: list[float] = []
    new_names: list = []

    def add(old, par, elen):
        new_parent.append(par)
        new_edge.append(elen)
        new_names.append(tree.names[old])
        return len(new_parent) - 1

    root_new = add(tree.root, -1, 0.0)
    stack = []
    for c in reversed(tree.children[tree.root]):
        if count[c]:
            stack.append((c, root_new, 0.0))
    while stack:
        u, par_new, acc = stack.pop()
        acc += float(tree.edge_length[u])
        kept_children = [c for c in tree.children[u] if count[c]]
        if u in keep_ids or len(kept_children) >= 2:
            my_id = add(u, par_new, acc)
            for c in reversed(kept_children):
                stack.append((c, my_id, 0.0))
        else:
            # Unary pass-through: exactly one kept child, node itself unkept.
            stack.append((kept_children[0], par_new, acc))

    return PhyloTree(new_parent, new_edge, new_names)


def extract_subtree(tree: PhyloTree, node) -> PhyloTree:
    """The subtree rooted at ``node`` (its subtending edge excluded)."""
    nid = tree.node_id(node)
    if tree.is_tip(nid):
        raise TreeError("cannot extract a subtree rooted at a tip")
    new_parent: list[int] = []
    new_edge: list[float] = []
    new_names: list = []
    stack = [(nid, -1, 0.0)]
    while stack:
        u, par_new, elen = stack.pop()
        my_id = len(new_parent)
        new_parent.append(par_new)
        new_edge.append(elen)
        new_names.append(tree.names[u])
        for c in reversed(tree.children[u]):
            stack.append((c, my_id, float(tree.edge_length[c])))
    return PhyloTree(new_parent, new_edge, new_names)
