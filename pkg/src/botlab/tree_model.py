"""Rooted-tree structure and its combinatorial gadgets.

Complete d-ary builders and general edge-list ingestion (re-indexed BFS),
heights and layers, ancestor walks, sibling shells O(u;k), sub-depth sets
D_m(u), nearest common ancestors, antichain checks, degree-domination
checks, and the pivot-vertex descent.

Every vertex outside the bottom layer must have a child, so all leaves sit
in the same layer and height equals distance to the leaf layer.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import NoSuchAncestor, NotBelow, TooLarge, TooShallow
from .limits import check_states, state_cap


class RootedTree:
    """Immutable rooted tree with BFS vertex ids starting at the root = 0."""

    def __init__(self, parent, children, depth):
        self.n = len(parent)
        self.parent = tuple(parent)
        self.children = tuple(tuple(c) for c in children)
        self.depth = depth
        self.root = 0
        layer = [0] * self.n
        for v in range(1, self.n):
            layer[v] = layer[self.parent[v]] + 1
        self.layer = tuple(layer)
        self.height = tuple(depth - l for l in layer)
        self.leaves = tuple(v for v in range(self.n) if layer[v] == depth)
        self._validate()
        self._subtree_leaves = {}

    def _validate(self):
        if self.parent[0] is not None:
            raise ValueError("root must have no parent")
        for v in range(1, self.n):
            p = self.parent[v]
            if p is None or not 0 <= p < self.n or v not in self.children[p]:
                raise ValueError(f"inconsistent parent/children at vertex {v}")
        for v in range(self.n):
            if self.layer[v] != self.depth and not self.children[v]:
                raise ValueError(f"vertex {v} above the bottom layer has no child")
            if self.layer[v] == self.depth and self.children[v]:
                raise ValueError(f"vertex {v} in the bottom layer has children")

    def leaves_below(self, u: int) -> tuple:
        """Ascending ids of the leaves in the subtree of u."""
        cached = self._subtree_leaves.get(u)
        if cached is not None:
            return cached
        if self.layer[u] == self.depth:
            result = (u,)
        else:
            result = tuple(x for c in self.children[u] for x in self.leaves_below(c))
        self._subtree_leaves[u] = result
        return result

    def is_descendant(self, v: int, u: int) -> bool:
        """True when v lies in the subtree of u (reflexive)."""
        while v is not None and self.layer[v] >= self.layer[u]:
            if v == u:
                return True
            v = self.parent[v]
        return False


def build_dary(d: int, depth: int) -> RootedTree:
    """Complete d-ary tree of the given depth, ids breadth-first from 0."""
    if d < 1 or depth < 0:
        raise ValueError("need d >= 1 and depth >= 0")
    check_states(d ** depth, "leaf layer")
    n = depth + 1 if d == 1 else (d ** (depth + 1) - 1) // (d - 1)
    if n > state_cap():
        check_states(n, "vertex count")
    parent = [None] * n
    children = [[] for _ in range(n)]
    next_id = 1
    frontier = [0]
    for _ in range(depth):
        new_frontier = []
        for v in frontier:
            for _ in range(d):
                parent[next_id] = v
                children[v].append(next_id)
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return RootedTree(parent, children, depth)


def from_edges(n: int, edges, root: int) -> RootedTree:
    """Build a tree from (parent, child) pairs, re-indexed BFS from the root.

    Children are visited in ascending original id so the re-indexing is
    reproducible.
    """
    adjacency = [[] for _ in range(n)]
    seen = set()
    for p, c in edges:
        if not (0 <= p < n and 0 <= c < n) or (p, c) in seen:
            raise ValueError(f"bad edge ({p}, {c})")
        seen.add((p, c))
        adjacency[p].append(c)
    for kids in adjacency:
        kids.sort()
    order = [root]
    new_id = {root: 0}
    for v in order:
        for c in adjacency[v]:
            if c in new_id:
                raise ValueError("edge list contains a cycle")
            new_id[c] = len(order)
            order.append(c)
    if len(order) != n:
        raise ValueError("edge list does not form a single tree on n vertices")
    parent = [None] * n
    children = [[] for _ in range(n)]
    for v in order:
        for c in adjacency[v]:
            parent[new_id[c]] = new_id[v]
            children[new_id[v]].append(new_id[c])
    depth = 0
    layer = [0] * n
    for v in range(1, n):
        layer[v] = layer[parent[v]] + 1
        depth = max(depth, layer[v])
    return RootedTree(parent, children, depth)


def load_tree(source) -> RootedTree:
    """Read a tree from JSON: {"type":"dary",...} or {"type":"edges",...}."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    else:
        payload = source
    kind = payload.get("type")
    if kind == "dary":
        return build_dary(int(payload["d"]), int(payload["depth"]))
    if kind == "edges":
        return from_edges(int(payload["n"]), payload["edges"], int(payload["root"]))
    raise ValueError(f"unknown tree type {kind!r}")


def ancestor(tree: RootedTree, u: int, k: int) -> int:
    """anc(u, k): walk k steps toward the root; anc(u, 0) = u."""
    if k < 0:
        raise ValueError("k must be >= 0")
    v = u
    for _ in range(k):
        v = tree.parent[v]
        if v is None:
            raise NoSuchAncestor(f"vertex {u} has no ancestor {k} levels up")
    return v


def o_set(tree: RootedTree, u: int, k: int) -> tuple:
    """The sibling shell O(u;k), ascending ids.

    k = -1 gives the children of u; k >= 0 gives the children of
    anc(u, k+1) with anc(u, k) removed. Every member has height h(u) + k.
    """
    if k < -1:
        raise ValueError("k must be >= -1")
    if k == -1:
        return tuple(tree.children[u])
    above = ancestor(tree, u, k + 1)
    below = ancestor(tree, u, k)
    return tuple(v for v in tree.children[above] if v != below)


def o_range(tree: RootedTree, u: int, lo: int, hi: int) -> tuple:
    """Union of O(u;k) over lo <= k <= hi, ascending ids (empty when hi < lo)."""
    members = []
    for k in range(lo, hi + 1):
        members.extend(o_set(tree, u, k))
    return tuple(sorted(members))


def dm_set(tree: RootedTree, u: int, m: int) -> tuple:
    """Descendants of u exactly m levels down, ascending ids."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if tree.height[u] < m:
        raise TooShallow(f"vertex {u} has height {tree.height[u]} < {m}")
    frontier = [u]
    for _ in range(m):
        frontier = [c for v in frontier for c in tree.children[v]]
    return tuple(sorted(frontier))


def nearest_common_ancestor(tree: RootedTree, u: int, v: int) -> int:
    """The lowest vertex having both u and v in its subtree."""
    while tree.layer[u] > tree.layer[v]:
        u = tree.parent[u]
    while tree.layer[v] > tree.layer[u]:
        v = tree.parent[v]
    while u != v:
        u, v = tree.parent[u], tree.parent[v]
    return u


def is_antichain(tree: RootedTree, vertices) -> bool:
    """True when no member is an ancestor of another."""
    members = set(vertices)
    for v in members:
        walk = tree.parent[v]
        while walk is not None:
            if walk in members:
                return False
            walk = tree.parent[walk]
    return True


def check_degree_dominated(tree: RootedTree, d: int, R: float) -> bool:
    """True iff every vertex has at most R * d^k descendants k levels down."""
    counts = {}
    for v in range(tree.n):
        u, k = v, 0
        while u is not None:
            if k >= 1:
                counts[(u, k)] = counts.get((u, k), 0) + 1
            u = tree.parent[u]
            k += 1
    for (u, k), count in counts.items():
        if count > R * d ** k:
            return False
    return True


def pivot_vertex(tree: RootedTree, S, rho_prime: int, K: int) -> int:
    """Pointer descent: move to the unique child holding more than 2^K of S.

    Stops when no child exceeds the budget; a set of size <= 2^K never moves
    the pointer, so it resolves to rho_prime itself.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    members = set(S)
    if len(members) > 2 ** (K + 1):
        raise TooLarge(f"|S| = {len(members)} exceeds 2^(K+1) = {2 ** (K + 1)}")
    below = set(tree.leaves_below(rho_prime))
    if not members <= below:
        raise NotBelow("S is not contained in the leaves below rho_prime")
    budget = 2 ** K
    pointer = rho_prime
    while True:
        step = None
        for child in tree.children[pointer]:
            if len(members & set(tree.leaves_below(child))) > budget:
                step = child
                break
        if step is None:
            return pointer
        pointer = step
