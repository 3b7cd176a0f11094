"""End-to-end acceptance checks at pinned tolerances and time budgets.

Each test is one advertised guarantee, checked against an oracle that never
reuses the code path under test: dense-joint enumeration for inference and
moments, closed-form thresholds for the sweeps, and batched random-restart
ascent for the contraction peaks.
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import layered_shapes, random_positive_chain, shape_tree
from botlab.broadcast_law import Labeling
from botlab.chain_core import bsc, validate_chain
from botlab.experiment_cli import run_ks_sweep
from botlab.function_spaces import EsPolynomial, LocalFunction, to_dense
from botlab.lemma_verifier import run_all
from botlab.operator_lab import (
    decay_probe,
    decompose_f,
    decomposition_membership,
    var_ratio,
)
from botlab.root_inference import bp_posterior, census_weights
from botlab.tree_model import build_dary

SHAPES = layered_shapes(12)


def root_leaf_margin(tree, chain) -> np.ndarray:
    """Oracle law P(root, leaves) by dense products over every edge.

    Internal vertices are summed out; the result is (q, q ** #leaves) with
    leaf axes flattened in vertex-id order.
    """
    q = chain.q
    if tree.n == 1:
        return np.diag(chain.pi)
    table = chain.pi.reshape((q,) + (1,) * (tree.n - 1)).copy()
    for v in range(1, tree.n):
        table = table * chain.rows.reshape(
            [q if j in (tree.parent[v], v) else 1 for j in range(tree.n)]
        )
    internal = tuple(v for v in range(1, tree.n) if v not in set(tree.leaves))
    return table.sum(axis=internal).reshape(q, -1)


def census_poly(tree, chain) -> EsPolynomial:
    weights = census_weights(chain)
    return EsPolynomial(tuple(LocalFunction((u,), weights) for u in tree.leaves))


def test_exact_posterior_matches_enumeration_on_all_small_trees():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    chains = [
        validate_chain(random_positive_chain(rng, 2 + (i % 2))) for i in range(50)
    ]
    worst = 0.0
    for index, shape in enumerate(SHAPES):
        tree = shape_tree(shape)
        chain = chains[index % len(chains)]
        q, leaves = chain.q, tree.leaves
        margin = root_leaf_margin(tree, chain)
        if q ** len(leaves) <= 200:
            observations = itertools.product(range(q), repeat=len(leaves))
        else:
            observations = (
                tuple(int(s) for s in rng.integers(q, size=len(leaves)))
                for _ in range(200)
            )
        for states in observations:
            flat = int(np.ravel_multi_index(states, (q,) * len(leaves)))
            vec = margin[:, flat]
            expected = vec / vec.sum()
            posterior = bp_posterior(tree, chain, Labeling(dict(zip(leaves, states))))
            worst = max(worst, 0.5 * float(np.abs(posterior.probs - expected).sum()))
    elapsed = time.monotonic() - start
    assert worst <= 1e-12
    assert elapsed <= 30.0


def binary_shapes(depth: int) -> list:
    """Layered shapes of exact depth whose vertices have at most two children."""
    if depth == 0:
        return [()]
    below = binary_shapes(depth - 1)
    single = [(s,) for s in below]
    double = [
        tuple(sorted((a, b)))
        for i, a in enumerate(below)
        for b in below[i:]
    ]
    return single + double


def enum_var_ratio(tree, chain, f) -> float:
    """Oracle variance ratio from the dense root-and-leaves law."""
    q = chain.q
    joint = root_leaf_margin(tree, chain)
    dense = to_dense(f, tree.leaves, q).values
    pi = joint.sum(axis=1)
    conditional = (joint @ dense) / pi
    mean = float(pi @ conditional)
    numerator = float(pi @ (conditional - mean) ** 2)
    weights = joint.sum(axis=0)
    denominator = float(weights @ (dense - mean) ** 2)
    return numerator / denominator


def test_variance_ratio_matches_enumeration_on_binary_trees():
    start = time.monotonic()
    rng = np.random.default_rng(7)
    shapes = [s for depth in range(4) for s in binary_shapes(depth)]
    chains = [validate_chain(random_positive_chain(rng, 2)) for _ in range(20)]
    worst = 0.0
    for shape in shapes:
        tree = shape_tree(shape)
        for chain in chains:
            functions = [census_poly(tree, chain)]
            for _ in range(2):
                size = int(rng.integers(1, min(2, len(tree.leaves)) + 1))
                picked = rng.choice(len(tree.leaves), size=size, replace=False)
                support = tuple(sorted(int(tree.leaves[i]) for i in picked))
                functions.append(EsPolynomial((
                    LocalFunction(support, rng.standard_normal(2 ** size)),
                )))
            for f in functions:
                gap = abs(var_ratio(tree, chain, f) - enum_var_ratio(tree, chain, f))
                worst = max(worst, gap)
    elapsed = time.monotonic() - start
    assert worst <= 1e-10
    assert elapsed <= 20.0


def test_census_ratio_decays_at_the_branching_rate_below_threshold():
    start = time.monotonic()
    chain = bsc(0.3)
    ratios = [
        var_ratio(build_dary(2, level), chain, census_poly(build_dary(2, level), chain))
        for level in range(1, 11)
    ]
    successive = [after / before for before, after in zip(ratios, ratios[1:])]
    elapsed = time.monotonic() - start
    for earlier, later in zip(ratios, ratios[1:]):
        assert later < earlier
    for value in successive[4:]:
        assert abs(value / 0.32 - 1.0) <= 0.05
    assert elapsed <= 10.0


def test_census_ratio_stays_bounded_above_threshold():
    chain = bsc(0.1)
    for level in range(1, 11):
        tree = build_dary(2, level)
        assert var_ratio(tree, chain, census_poly(tree, chain)) >= 0.1


def test_noise_sweep_brackets_the_reconstruction_threshold():
    grid = [round(0.05 * k, 2) for k in range(1, 10)]
    rows = run_ks_sweep(grid, 2, 8)
    ks_by_delta = [rows[2 * i].ks_param for i in range(len(grid))]
    crossings = [
        i for i in range(len(grid) - 1)
        if ks_by_delta[i] > 1.0 > ks_by_delta[i + 1]
    ]
    assert len(crossings) == 1
    star = (1.0 - 1.0 / math.sqrt(2.0)) / 2.0
    assert grid[crossings[0]] < star < grid[crossings[0] + 1]


def test_property_check_suite_is_green_at_default_trials():
    start = time.monotonic()
    reports = run_all(0)
    elapsed = time.monotonic() - start
    assert all(report.passed for report in reports)
    assert elapsed <= 60.0


def restart_peak(tree, chain, vertex, restarts: int, seed: int) -> float:
    """Contraction peak by batched alternating ascent from random starts.

    Rebuilds the degree-one space, the subtree law, and the difference form
    from scratch, then runs simultaneous power ascent in the law-weighted
    inner product, one column per restart.
    """
    q = chain.q
    order = []
    stack = [vertex]
    while stack:
        v = stack.pop(0)
        order.append(v)
        stack.extend(tree.children[v])
    position = {v: i for i, v in enumerate(order)}
    table = np.ones((q,) * len(order))
    for v in order[1:]:
        axes = [q if j in (position[tree.parent[v]], position[v]) else 1
                for j in range(len(order))]
        table = table * chain.rows.reshape(axes)
    internal = tuple(position[v] for v in order[1:] if tree.children[v])
    conditional = table.sum(axis=internal).reshape(q, -1)
    law = chain.pi @ conditional
    leaf_count = len([v for v in order if not tree.children[v]])
    shape = (q,) * leaf_count
    columns = [np.ones(law.size)]
    for axis in range(leaf_count):
        for s in range(1, q):
            grid = np.zeros(shape)
            index = [slice(None)] * leaf_count
            index[axis] = s
            grid[tuple(index)] = 1.0
            columns.append(grid.reshape(-1))
    basis = np.column_stack(columns)
    gram = basis.T @ (law[:, None] * basis)
    peak = 0.0
    rng = np.random.default_rng(seed)
    for theta in range(q):
        form = basis.T @ ((conditional[theta] - law)[:, None] * basis)
        block = rng.standard_normal((gram.shape[0], restarts))
        for _ in range(80):
            block = np.linalg.solve(gram, form @ block)
            norms = np.sqrt(np.abs(np.einsum("ij,ij->j", block, gram @ block)))
            block = block / np.maximum(norms, 1e-300)
        values = np.abs(np.einsum("ij,ij->j", block, form @ block))
        peak = max(peak, float(values.max()))
    return peak


def test_difference_contraction_profile_matches_restart_search():
    tree, chain = build_dary(2, 4), bsc(0.3)
    report = decay_probe(tree, chain, 0, [1, 2, 3, 4])
    deltas = [value for _, value in report.per_height]
    for earlier, later in zip(deltas, deltas[1:]):
        assert later < earlier
    assert report.fitted_rate < 0
    for h in (1, 2):
        vertex = next(v for v in range(tree.n) if tree.height[v] == h)
        searched = restart_peak(tree, chain, vertex, restarts=10 ** 4, seed=h)
        assert abs(deltas[h - 1] / searched - 1.0) <= 0.01


def test_low_degree_decomposition_round_trips():
    tree, chain = build_dary(2, 4), bsc(0.3)
    rng = np.random.default_rng(11)
    worst_reconstruction = 0.0
    worst_membership = 0.0
    for _ in range(100):
        terms = []
        for _ in range(6):
            picked = rng.choice(16, size=2, replace=False)
            support = tuple(sorted(int(tree.leaves[i]) for i in picked))
            terms.append(LocalFunction(support, rng.standard_normal(4)))
        for _ in range(2):
            leaf = int(tree.leaves[rng.integers(16)])
            terms.append(LocalFunction((leaf,), rng.standard_normal(2)))
        result = decompose_f(tree, chain, 0, 0, EsPolynomial(tuple(terms)), 0)
        worst_reconstruction = max(worst_reconstruction, result.residual)
        members = decomposition_membership(result)
        worst_membership = max(worst_membership, max(members.values()))
    assert worst_reconstruction <= 1e-9
    assert worst_membership <= 1e-9


def test_figure_sidecar_round_trips_csv(tmp_path):
    decay_plots = pytest.importorskip("decay_plots")
    import json

    from botlab.experiment_cli import load_config, rows_to_csv, run_decay_sweep

    chain_path = tmp_path / "chain.json"
    chain_path.write_text('{"q": 2, "rows": [[0.7, 0.3], [0.3, 0.7]]}')
    config = load_config({
        "chain": str(chain_path),
        "d": 2,
        "depth_range": [1, 6],
        "family": {"kind": "census"},
    })
    decay_csv = tmp_path / "decay.csv"
    decay_csv.write_text(rows_to_csv(run_decay_sweep(config)))
    ks_csv = tmp_path / "ks.csv"
    ks_csv.write_text(rows_to_csv(run_ks_sweep([0.1, 0.15, 0.2], 2, 5)))
    for kind, source in (("decay", decay_csv), ("ks", ks_csv)):
        image = tmp_path / f"{kind}.png"
        spec = decay_plots.FigureSpec(str(source), kind, True, str(image))
        decay_plots.render_figure(spec)
        echoed = json.loads(image.with_suffix(".json").read_text())
        raw_lines = source.read_text().splitlines()
        header = raw_lines[0].split(",")
        assert echoed["series"]
        for column, series in echoed["series"].items():
            at = header.index(column)
            assert series == [line.split(",")[at] for line in raw_lines[1:]]
    bad = tmp_path / "bad.csv"
    bad.write_text("depth,degree,var_ratio,ks_param,eps,wrong\n1,1,0.5,0.3,0.1,0.9\n")
    with pytest.raises(decay_plots.SchemaMismatch):
        decay_plots.render_figure(
            decay_plots.FigureSpec(str(bad), "decay", True, str(tmp_path / "bad.png")))
