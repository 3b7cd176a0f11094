"""The broadcast measure on a rooted tree.

The root is drawn from the stationary law (or clamped), and every edge
applies the channel independently: P[X = x] = mu(x_root) * prod M[x_u, x_v]
over edges (u, v). This module provides seeded sampling, exact joint
probabilities, and exact marginals of any small vertex set via dynamic
programming over the tree.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chain_core import TransitionChain
from .errors import IncompleteLabeling, ZeroLikelihood
from .limits import check_states
from .tree_model import RootedTree

LOG_SPACE_DEPTH = 30
STATIONARY = "stationary"


@dataclass(frozen=True)
class Labeling:
    """States assigned to a declared vertex subset."""

    assignment: dict

    def __post_init__(self):
        for v, s in self.assignment.items():
            if s < 0:
                raise ValueError(f"negative state at vertex {v}")

    def state(self, v: int) -> int:
        return self.assignment[v]


def _root_law(chain: TransitionChain, root_init) -> np.ndarray:
    if root_init == STATIONARY or root_init is None:
        return chain.pi
    s = int(root_init)
    if not 0 <= s < chain.q:
        raise ValueError(f"root state {s} out of range")
    law = np.zeros(chain.q)
    law[s] = 1.0
    return law


def sample_labeling(
    tree: RootedTree,
    chain: TransitionChain,
    root_init=STATIONARY,
    seed: int = 0,
    sample_index: int = 0,
) -> Labeling:
    """One full-tree labeling from a counter-based stream.

    The stream is keyed by (seed, sample_index), so batches may be drawn in
    any order without changing individual samples.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed % 2 ** 64, sample_index % 2 ** 64]))
    uniforms = rng.random(tree.n)
    states = _walk_tree(tree, chain, _root_law(chain, root_init), uniforms)
    return Labeling({v: int(states[v]) for v in range(tree.n)})


def _walk_tree(tree, chain, root_law, uniforms):
    cum_root = np.cumsum(root_law)
    cum_rows = np.cumsum(chain.rows, axis=1)
    states = np.zeros(tree.n, dtype=np.int64)
    states[0] = np.searchsorted(cum_root, uniforms[0], side="right")
    for v in range(1, tree.n):
        states[v] = np.searchsorted(cum_rows[states[tree.parent[v]]], uniforms[v], side="right")
    return np.minimum(states, chain.q - 1)


def joint_probability(
    tree: RootedTree, chain: TransitionChain, x: Labeling, root_init=STATIONARY
) -> float:
    """Exact probability of a full labeling under the broadcast law."""
    missing = [v for v in range(tree.n) if v not in x.assignment]
    if missing:
        raise IncompleteLabeling(f"labeling misses vertices {missing[:5]}")
    law = _root_law(chain, root_init)
    factors = [law[x.state(0)]]
    factors += [
        chain.rows[x.state(tree.parent[v]), x.state(v)] for v in range(1, tree.n)
    ]
    if tree.depth <= LOG_SPACE_DEPTH:
        prob = 1.0
        for f in factors:
            prob *= f
        return prob
    if any(f == 0.0 for f in factors):
        return 0.0
    return math.exp(sum(math.log(f) for f in factors))


def steiner_marginal(
    tree: RootedTree,
    chain: TransitionChain,
    targets,
    condition=None,
) -> np.ndarray:
    """Exact joint law of X_targets, optionally conditioned on one vertex.

    Returns an array of shape (q,) * len(targets), axes in ascending vertex
    order (C-order flattening makes the last vertex fastest). The dynamic
    program eliminates non-target subtrees bottom-up, so only the Steiner
    tree of targets, the root, and the conditioning vertex carries state.
    """
    targets = tuple(sorted(set(targets)))
    q = chain.q
    check_states(q ** len(targets), "steiner marginal")
    wanted = targets if condition is None else tuple(sorted(set(targets) | {condition[0]}))
    check_states(q ** (len(wanted) + 1), "steiner marginal scratch")

    table = _joint_table(tree, chain, wanted)

    if condition is not None:
        vertex, state = condition
        axis = wanted.index(vertex)
        sliced = np.take(table, int(state), axis=axis)
        mass = sliced.sum()
        if mass <= 0.0:
            raise ZeroLikelihood(f"conditioning event X_{vertex} = {state} has probability 0")
        sliced = sliced / mass
        if vertex in targets:
            expanded = np.zeros((q,) * len(targets))
            index = [slice(None)] * len(targets)
            index[targets.index(vertex)] = int(state)
            expanded[tuple(index)] = sliced
            return expanded
        return sliced
    return table


def _joint_table(tree: RootedTree, chain: TransitionChain, targets: tuple) -> np.ndarray:
    """Joint law over `targets` (ascending), by bottom-up elimination."""
    q = chain.q
    target_set = set(targets)

    def visit(v):
        # Returns (vertex list, table over (x_v,) + those vertices).
        kept = []
        table = np.ones((q,))
        for c in tree.children[v]:
            sub_kept, sub = visit(c)
            if c in target_set:
                # Keep x_c as an explicit axis: P(x_c, rest | x_v).
                msg = np.einsum("ab,b...->ab...", chain.rows, sub)
                c_kept = [c] + sub_kept
            else:
                msg = np.tensordot(chain.rows, sub, axes=(1, 0))
                c_kept = sub_kept
            table = (table.reshape(table.shape + (1,) * (msg.ndim - 1))
                     * msg.reshape((q,) + (1,) * (table.ndim - 1) + msg.shape[1:]))
            kept = kept + c_kept
        return kept, table

    kept, table = visit(tree.root)
    if tree.root in target_set:
        vertices = [tree.root] + kept
        table = table * chain.pi.reshape((q,) + (1,) * (table.ndim - 1))
    else:
        vertices = kept
        table = np.tensordot(chain.pi, table, axes=(0, 0))
    # Reorder axes to ascending vertex ids.
    order = np.argsort(vertices, kind="stable")
    table = np.transpose(table, axes=order) if vertices else table
    return table


def load_observation(source) -> Labeling:
    """Read a leaf observation from JSON {"leaf_states": {"<id>": state}}."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    else:
        payload = source
    states = payload.get("leaf_states")
    if states is None:
        raise ValueError("observation file must contain 'leaf_states'")
    return Labeling({int(v): int(s) for v, s in states.items()})


def write_samples_csv(path, labelings) -> None:
    """Dump sampled labelings as rows `sample,vertex,state`."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample", "vertex", "state"])
        for index, labeling in enumerate(labelings):
            for v in sorted(labeling.assignment):
                writer.writerow([index, v, labeling.assignment[v]])
