"""Shared test helpers: exhaustive small-tree enumeration.

A shape is () for a single leaf, otherwise the sorted tuple of child
shapes; sorting makes the tuple a canonical isomorphism-class key, so the
enumeration yields every layered tree exactly once per class.
"""

import numpy as np

from botlab.tree_model import RootedTree, from_edges


def _multisets(shapes, sizes, budget, start=0):
    """Nonempty multisets (as nondecreasing index tuples) within a size budget."""
    for i in range(start, len(shapes)):
        if sizes[i] > budget:
            continue
        yield (shapes[i],)
        for rest in _multisets(shapes, sizes, budget - sizes[i], i):
            yield (shapes[i],) + rest


def shape_size(shape) -> int:
    return 1 + sum(shape_size(child) for child in shape)


def layered_shapes(max_vertices: int) -> list:
    """Every isomorphism class of layered trees up to the vertex budget."""
    result = [()]
    frontier = [()]
    while frontier:
        sizes = [shape_size(s) for s in frontier]
        grown = sorted(
            {tuple(sorted(ms)) for ms in _multisets(frontier, sizes, max_vertices - 1)}
        )
        result.extend(grown)
        frontier = grown
    return result


def shape_tree(shape) -> RootedTree:
    """Materialize a shape with breadth-first vertex ids."""
    edges = []
    queue = [(0, shape)]
    n = 1
    while queue:
        v, s = queue.pop(0)
        for child in s:
            edges.append((v, n))
            queue.append((n, child))
            n += 1
    return from_edges(n, edges, 0)


def random_positive_chain(rng: np.random.Generator, q: int):
    """A strictly positive (hence ergodic) random row-stochastic table."""
    table = rng.random((q, q)) + 0.1
    return table / table.sum(axis=1, keepdims=True)
