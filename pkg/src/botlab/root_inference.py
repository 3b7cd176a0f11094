"""Root reconstruction from leaf observations.

Exact Bayes-optimal posteriors by one upward pass of normalized messages,
maximum-a-posteriori decisions, the degree-1 census statistic weighted by
the second right eigenvector of the channel, and seeded Monte-Carlo
estimation of the correlation between a leaf statistic and the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .broadcast_law import Labeling
from .chain_core import TransitionChain
from .errors import (
    ComplexEigenvector,
    DegenerateSpectrum,
    IncompleteObservation,
    ZeroLikelihood,
)
from .tree_model import RootedTree

EIGENVALUE_TOL = 1e-9
SIGN_TOL = 1e-12
TRIAL_BLOCK = 8192


@dataclass(frozen=True)
class RootPosterior:
    """Posterior law of the root given a full leaf observation."""

    probs: np.ndarray
    log_evidence: float

    def __post_init__(self):
        self.probs.setflags(write=False)


def _leaf_states(tree: RootedTree, chain: TransitionChain, leaf_obs: Labeling) -> np.ndarray:
    missing = [u for u in tree.leaves if u not in leaf_obs.assignment]
    if missing:
        raise IncompleteObservation(f"observation misses leaves {missing[:5]}")
    states = np.array([leaf_obs.state(u) for u in tree.leaves], dtype=np.int64)
    if np.any(states >= chain.q):
        raise ValueError("observed state out of range")
    return states


def bp_posterior(tree: RootedTree, chain: TransitionChain, leaf_obs: Labeling) -> RootPosterior:
    """Exact root posterior by one upward pass of normalized messages.

    Every vertex message is rescaled to unit sum with the log of the
    normalizer accumulated, so the posterior cannot underflow at depth and
    the total log evidence comes out alongside it.
    """
    states = _leaf_states(tree, chain, leaf_obs)
    q = chain.q
    messages = np.zeros((tree.n, q))
    log_norm = 0.0
    position = {u: i for i, u in enumerate(tree.leaves)}
    for v in reversed(range(tree.n)):
        if v in position:
            message = np.zeros(q)
            message[states[position[v]]] = 1.0
        else:
            message = np.ones(q)
            for c in tree.children[v]:
                message = message * (chain.rows @ messages[c])
        mass = float(message.sum())
        if mass <= 0.0:
            raise ZeroLikelihood(f"observation impossible below vertex {v}")
        messages[v] = message / mass
        log_norm += math.log(mass)
    evidence = float(chain.pi @ messages[tree.root])
    if evidence <= 0.0:
        raise ZeroLikelihood("observation impossible at the root")
    probs = chain.pi * messages[tree.root] / evidence
    return RootPosterior(probs=probs, log_evidence=math.log(evidence) + log_norm)


def map_root(posterior: RootPosterior) -> int:
    """Most probable root state; ties go to the lowest state index."""
    return int(np.argmax(posterior.probs))


def posterior_payload(posterior: RootPosterior) -> dict:
    """JSON-ready view of a posterior for report emission."""
    return {
        "posterior": [float(p) for p in posterior.probs],
        "map": map_root(posterior),
        "log_evidence": float(posterior.log_evidence),
    }


def census_weights(chain: TransitionChain) -> np.ndarray:
    """Per-state weights from the second right eigenvector of the channel.

    The weights have mean zero and unit second moment under the stationary
    law, with the first nonzero entry positive. Chains whose dominant
    non-principal eigenvalue is complex are rejected rather than silently
    projected onto a real statistic.
    """
    lam = chain.second_eigenvalue
    if lam == 0.0:
        raise DegenerateSpectrum("second eigenvalue is zero; no degree-1 statistic")
    values, vectors = np.linalg.eig(chain.rows)
    principal = int(np.argmin(np.abs(values - 1.0)))
    achieving = [
        i for i in range(chain.q)
        if i != principal and abs(abs(values[i]) - lam) <= EIGENVALUE_TOL
    ]
    real = [i for i in achieving if abs(values[i].imag) <= EIGENVALUE_TOL]
    if not real:
        raise ComplexEigenvector(
            f"dominant non-principal eigenvalue {values[achieving[0]]:.6f} is complex"
        )
    pick = max(real, key=lambda i: (values[i].real, -i))
    vector = np.real(vectors[:, pick])
    vector = vector - float(chain.pi @ vector)
    norm = math.sqrt(float(chain.pi @ vector ** 2))
    vector = vector / norm
    leading = vector[np.abs(vector) > SIGN_TOL][0]
    return vector if leading > 0 else -vector


def census_estimator(tree: RootedTree, chain: TransitionChain, leaf_obs: Labeling) -> float:
    """Sum of the per-state weights over the observed leaf states."""
    states = _leaf_states(tree, chain, leaf_obs)
    return float(census_weights(chain)[states].sum())


def _sample_block(tree: RootedTree, chain: TransitionChain, seed: int,
                  start: int, count: int) -> np.ndarray:
    """States of `count` full-tree samples, one row per counter stream.

    Row i reproduces sample_labeling(tree, chain, seed=seed,
    sample_index=start + i) exactly; only the tree walk is batched.
    """
    uniforms = np.empty((count, tree.n))
    for i in range(count):
        rng = np.random.Generator(
            np.random.Philox(key=[seed % 2 ** 64, (start + i) % 2 ** 64]))
        uniforms[i] = rng.random(tree.n)
    cum_root = np.cumsum(chain.pi)
    cum_rows = np.cumsum(chain.rows, axis=1)
    states = np.zeros((count, tree.n), dtype=np.int64)
    states[:, 0] = np.searchsorted(cum_root, uniforms[:, 0], side="right")
    for v in range(1, tree.n):
        rows = cum_rows[states[:, tree.parent[v]]]
        states[:, v] = (rows <= uniforms[:, v, None]).sum(axis=1)
    return np.minimum(states, chain.q - 1)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    scale = math.sqrt(float(a @ a) * float(b @ b))
    if scale == 0.0:
        return 0.0
    return float(a @ b) / scale


def mc_correlation(tree: RootedTree, chain: TransitionChain, estimator,
                   trials: int, seed: int = 0) -> tuple:
    """Monte-Carlo correlation of a leaf statistic with the root weight.

    The estimator is called as estimator(tree, chain, labeling); passing
    census_estimator itself takes a vectorized path over the same sample
    streams. Trials are keyed (seed, index), so the result is reproducible
    per seed and independent of batching. The returned error term is the
    large-sample standard error (1 - r^2) / sqrt(N - 3) of a correlation
    coefficient, with a zero-variance statistic reported as correlation 0.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    weights = census_weights(chain)
    leaf_values = np.empty(trials)
    root_values = np.empty(trials)
    columns = np.array(tree.leaves)
    for begin in range(0, trials, TRIAL_BLOCK):
        count = min(TRIAL_BLOCK, trials - begin)
        states = _sample_block(tree, chain, seed, begin, count)
        root_values[begin:begin + count] = weights[states[:, tree.root]]
        if estimator is census_estimator:
            leaf_values[begin:begin + count] = weights[states[:, columns]].sum(axis=1)
        else:
            for i in range(count):
                labeling = Labeling({v: int(states[i, v]) for v in range(tree.n)})
                leaf_values[begin + i] = estimator(tree, chain, labeling)
    r = _pearson(leaf_values, root_values)
    stderr = (1.0 - r * r) / math.sqrt(trials - 3) if trials > 3 else math.inf
    return r, stderr
