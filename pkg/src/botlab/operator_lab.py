"""Conditional-expectation calculus on broadcast trees.

Per-vertex conditioning operators and their antichain tensorizations, the
three seminorms (max, single-process, two-process), low-degree projections
in weak and strong (pointwise) form, recursively projected residual
subspaces, the layer-by-layer decomposition of a bounded-degree polynomial
into components attached to vertices, spectral decay probes, exact
conditional-variance ratios, and pairwise component reports.

Everything here is an explicit matrix or dense table; seminorm Gram
matrices are handled by eigendecomposition with directions below a relative
cutoff treated as radical (zero-mass configurations make the forms genuinely
degenerate, so pseudo-inverses are the construction, not a fallback).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import weakref
from dataclasses import dataclass
from functools import reduce
from pathlib import Path

import numpy as np

from .broadcast_law import steiner_marginal
from .chain_core import TransitionChain
from .errors import (
    DegreeTooHigh,
    DomainMismatch,
    NotAntichain,
    NotBelow,
    OverlappingDomains,
    SizeLimit,
    TooShallow,
    ZeroVariance,
)
from .function_spaces import (
    DenseFunction,
    EsPolynomial,
    SubspaceBasis,
    _gram_rank,
    es_degree,
    tensor_identify,
    tk_basis,
    to_dense,
)
from .limits import check_states
from .tree_model import (
    RootedTree,
    ancestor,
    dm_set,
    is_antichain,
    nearest_common_ancestor,
    o_set,
    pivot_vertex,
)

EIG_CUTOFF = 1e-10
DECOMPOSE_STATE_CAP = 2 ** 16

_KIND_ALIASES = {
    "cond": "cond",
    "Ê": "cond",
    "Ehat": "cond",
    "hat": "cond",
    "mean": "mean",
    "E": "mean",
    "diff": "diff",
    "D": "diff",
}


@dataclass(frozen=True)
class LinearMapMatrix:
    """A linear map between dense function spaces over explicit variable sets."""

    input_domain: tuple
    output_domain: tuple
    q: int
    entries: np.ndarray

    def __post_init__(self):
        input_domain = tuple(int(v) for v in self.input_domain)
        output_domain = tuple(int(v) for v in self.output_domain)
        entries = np.array(self.entries, dtype=float)
        shape = (self.q ** len(output_domain), self.q ** len(input_domain))
        if entries.shape != shape:
            raise DomainMismatch(f"entries shape {entries.shape} does not match {shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "input_domain", input_domain)
        object.__setattr__(self, "output_domain", output_domain)
        object.__setattr__(self, "entries", entries)

    def apply(self, f: DenseFunction) -> DenseFunction:
        if f.domain != self.input_domain or f.q != self.q:
            raise DomainMismatch(
                f"function on {f.domain} fed to a map expecting {self.input_domain}"
            )
        return DenseFunction(self.output_domain, self.q, self.entries @ f.values)


@dataclass(frozen=True)
class DecompositionResult:
    """A polynomial split into per-vertex components summing back to it.

    layer_index maps each component vertex to its height above the probe
    level; the base vertex always carries the top layer.
    """

    tree: RootedTree
    chain: TransitionChain
    base_vertex: int
    K: int
    h_probe: int
    components: dict
    layer_index: dict
    residual: float


@dataclass(frozen=True)
class DecayProbeReport:
    """Measured contraction of the difference operator by vertex height."""

    chain_summary: dict
    K: int
    per_height: tuple
    fitted_rate: float
    h_K_empirical: object


@dataclass(frozen=True)
class PairwiseReport:
    """Pair tables of expectations and difference-operator peaks for components."""

    base_vertex: int
    vertices: tuple
    e_table: dict
    d_table: dict
    meta: dict
    norms: dict
    cauchy_schwarz_slack: float


def _khatri_rao_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product: row i of the result is kron(a[i], b[i])."""
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


def cond_expect_op(tree: RootedTree, chain: TransitionChain, u: int, kind: str = "cond",
                   lower=None) -> LinearMapMatrix:
    """Conditional expectation given the value at u, as an explicit matrix.

    Maps functions of the variables on `lower` (default: the leaves below u)
    to functions of the variable at u.  kind "cond" returns the conditional
    rows, "mean" the stationary average of those rows (a 1-row functional),
    and "diff" their difference.  Built by an upward message-passing DP with
    row-wise Kronecker merges, so each row is the conditional law of the
    lower variables given the value at u.
    """
    resolved = _KIND_ALIASES.get(kind)
    if resolved is None:
        raise ValueError(f"unknown operator kind {kind!r}")
    if lower is None:
        lower = tree.leaves_below(u)
    lower = tuple(sorted(set(int(v) for v in lower)))
    for v in lower:
        if not tree.is_descendant(v, u):
            raise NotBelow(f"vertex {v} is not below {u}")
    if not is_antichain(tree, lower):
        raise NotAntichain(f"conditioning set {lower} is not an antichain")
    q = chain.q
    check_states(q ** (len(lower) + 1), "conditional-expectation table")
    inside = set(lower)

    def message(v: int) -> np.ndarray:
        if v in inside:
            return np.eye(q)
        if not tree.children[v]:
            return np.ones((q, 1))
        parts = [chain.rows @ message(c) for c in tree.children[v]]
        return reduce(_khatri_rao_rows, parts)

    def encounter(v: int) -> tuple:
        if v in inside:
            return (v,)
        return tuple(x for c in tree.children[v] for x in encounter(c))

    rows = message(u)
    # Mixed-depth cuts are met in subtree order, not id order; relabel.
    order = encounter(u)
    if order != lower:
        tensor = rows.reshape((q,) + (q,) * len(lower))
        axes = (0,) + tuple(1 + order.index(v) for v in lower)
        rows = tensor.transpose(axes).reshape(q, q ** len(lower))
    if resolved == "cond":
        return LinearMapMatrix(lower, (u,), q, rows)
    mean = chain.pi @ rows
    if resolved == "mean":
        return LinearMapMatrix(lower, (), q, mean.reshape(1, -1))
    return LinearMapMatrix(lower, (u,), q, rows - mean)


def _assemble_kron(blocks, q: int) -> LinearMapMatrix:
    """Kronecker-assemble (out_domain, in_domain, matrix) blocks, then permute
    both sides to globally ascending variable order."""
    out_concat = tuple(v for block in blocks for v in block[0])
    in_concat = tuple(v for block in blocks for v in block[1])
    if len(set(out_concat)) != len(out_concat) or len(set(in_concat)) != len(in_concat):
        raise OverlappingDomains("tensor factors share variables")
    check_states(q ** len(in_concat), "tensorized input")
    check_states(q ** len(out_concat), "tensorized output")
    entries = blocks[0][2]
    for block in blocks[1:]:
        entries = np.kron(entries, block[2])
    out_perm = np.argsort(out_concat, kind="stable")
    in_perm = np.argsort(in_concat, kind="stable")
    tensor = entries.reshape((q,) * len(out_concat) + (q,) * len(in_concat))
    tensor = tensor.transpose(tuple(out_perm) + tuple(len(out_concat) + i for i in in_perm))
    return LinearMapMatrix(
        tuple(in_concat[i] for i in in_perm),
        tuple(out_concat[i] for i in out_perm),
        q,
        tensor.reshape(q ** len(out_concat), q ** len(in_concat)),
    )


def antichain_tensor(tree: RootedTree, chain: TransitionChain, ops: dict, A=None,
                     lower=None) -> LinearMapMatrix:
    """Tensorize per-vertex operators over an antichain.

    ops maps each vertex of A to one of "E" (stationary average), "Ê"/"cond"
    (conditional rows), "D" (their difference) or "I" (identity on the lower
    variables).  Factors are assembled in ascending vertex order and the
    stored domains are re-sorted globally, so mixed-height antichains whose
    leaf blocks interleave still come out with ascending domains.
    """
    if A is None:
        A = tuple(sorted(ops))
    A = tuple(sorted(int(v) for v in A))
    if set(A) != set(ops):
        raise ValueError("A and the keys of ops disagree")
    if not is_antichain(tree, A):
        raise NotAntichain(f"{A} is not an antichain")
    q = chain.q
    blocks = []
    for u in A:
        low = None if lower is None else lower.get(u)
        if ops[u] == "I":
            dom = tree.leaves_below(u) if low is None else tuple(sorted(set(low)))
            check_states(q ** len(dom), "identity factor")
            blocks.append((dom, dom, np.eye(q ** len(dom))))
        else:
            op = cond_expect_op(tree, chain, u, kind=ops[u], lower=low)
            blocks.append((op.output_domain, op.input_domain, op.entries))
    return _assemble_kron(blocks, q)


def norm_eval(kind: str, f: DenseFunction, tree: RootedTree = None,
              chain: TransitionChain = None, u: int = None, m: int = None,
              antichain=None) -> float:
    """Evaluate one of the three seminorms of a dense function.

    "max" is the plain maximum absolute value over every configuration,
    occupied or not.  "U" is the square root of the expected square under
    independent broadcast processes rooted at the antichain vertices, each
    integrating the variables below it; with no antichain the single global
    process over f's variables is used.  "T" is the same under the two-stage
    product process rooted at u: one broadcast down to the depth-m
    descendants, then fresh independent broadcasts below each of them; f
    must live on exactly those descendants plus the leaves.
    """
    if kind == "max":
        return float(np.max(np.abs(f.values)))
    if kind == "U":
        if chain is None or tree is None:
            raise DomainMismatch("U-norm needs the tree and chain")
        if chain.q != f.q:
            raise DomainMismatch("alphabet size differs from the chain")
        if not f.domain:
            return float(abs(f.values[0]))
        if antichain is None:
            weights = steiner_marginal(tree, chain, f.domain).reshape(-1)
            return math.sqrt(float(max(weights @ f.values ** 2, 0.0)))
        A = tuple(sorted(int(v) for v in antichain))
        if not is_antichain(tree, A):
            raise NotAntichain(f"{A} is not an antichain")
        parts = []
        covered = 0
        for v in A:
            block = tuple(x for x in f.domain if tree.is_descendant(x, v))
            covered += len(block)
            if block:
                parts.append(DenseFunction(
                    block, chain.q, steiner_marginal(tree, chain, block).reshape(-1)))
        if covered != len(f.domain):
            raise DomainMismatch(f"domain {f.domain} not covered by antichain {A}")
        weights = tensor_identify(parts).values
        return math.sqrt(float(max(weights @ f.values ** 2, 0.0)))
    if kind == "T":
        if None in (tree, chain, u, m):
            raise DomainMismatch("T-norm needs tree, chain, u and m")
        if chain.q != f.q:
            raise DomainMismatch("alphabet size differs from the chain")
        middle = dm_set(tree, u, m)
        parts = [DenseFunction(middle, chain.q,
                               steiner_marginal(tree, chain, middle).reshape(-1))]
        for v in middle:
            block = tree.leaves_below(v)
            if block == (v,):
                continue
            parts.append(DenseFunction(block, chain.q,
                                       steiner_marginal(tree, chain, block).reshape(-1)))
        weights = tensor_identify(parts)
        if weights.domain != f.domain:
            raise DomainMismatch(
                f"T-norm at ({u}, {m}) expects domain {weights.domain}, got {f.domain}"
            )
        return math.sqrt(float(max(weights.values @ f.values ** 2, 0.0)))
    raise ValueError(f"unknown norm kind {kind!r}")


_OP_CACHE = weakref.WeakKeyDictionary()


def _cache_slot(tree: RootedTree, chain: TransitionChain) -> dict:
    per_tree = _OP_CACHE.get(tree)
    if per_tree is None:
        per_tree = weakref.WeakKeyDictionary()
        _OP_CACHE[tree] = per_tree
    slot = per_tree.get(chain)
    if slot is None:
        slot = {}
        per_tree[chain] = slot
    return slot


def _cached_tk(tree: RootedTree, chain: TransitionChain, u: int, K: int) -> SubspaceBasis:
    slot = _cache_slot(tree, chain)
    key = ("tk", u, K)
    if key not in slot:
        slot[key] = tk_basis(tree, chain, u, K)
    return slot[key]


def _psd_eig(gram: np.ndarray):
    """Eigen-split of a PSD Gram matrix into kept and radical directions."""
    vals, vecs = np.linalg.eigh(gram)
    cutoff = EIG_CUTOFF * max(1.0, float(vals.max(initial=0.0)))
    keep = vals > cutoff
    return vals, vecs, keep


def projection_pi(tree: RootedTree, chain: TransitionChain, u: int, K: int) -> LinearMapMatrix:
    """Weak projection onto the low-degree space below u.

    The minimal-norm solution B G^+ B^T W over the low-degree basis B, with
    W the joint law of the leaf variables and G the Gram matrix of B under
    it.  Matching against the basis is exact: the ranges of G and B^T W
    coincide, so E[(Pf)g] = E[fg] for every low-degree g, and Pf = 0 as soon
    as f is E-orthogonal to all of them.
    """
    slot = _cache_slot(tree, chain)
    key = ("pi", u, K)
    if key in slot:
        return slot[key]
    leaves = tree.leaves_below(u)
    check_states(chain.q ** (2 * len(leaves)), "projection matrix")
    B, pseudo, weights = _pi_factors(tree, chain, u, K)
    entries = B @ (pseudo @ (B.T * weights[None, :]))
    result = LinearMapMatrix(leaves, leaves, chain.q, entries)
    slot[key] = result
    return result


def _pi_factors(tree: RootedTree, chain: TransitionChain, u: int, K: int):
    """Cached (basis, Gram pseudo-inverse, leaf law) triple of the weak
    projection, for applying it without materializing the square matrix."""
    slot = _cache_slot(tree, chain)
    key = ("pi-factors", u, K)
    if key in slot:
        return slot[key]
    B = _cached_tk(tree, chain, u, K).matrix()
    weights = steiner_marginal(tree, chain, tree.leaves_below(u)).reshape(-1)
    gram = B.T @ (weights[:, None] * B)
    vals, vecs, keep = _psd_eig(gram)
    inverted = np.zeros_like(vals)
    inverted[keep] = 1.0 / vals[keep]
    pseudo = (vecs * inverted) @ vecs.T
    slot[key] = (B, pseudo, weights)
    return slot[key]


def strong_projection_pt(tree: RootedTree, chain: TransitionChain, u: int,
                         K: int) -> LinearMapMatrix:
    """Strong projection onto the low-degree space, pointwise in the value at u.

    For each value theta at u the conditional law of the leaves induces its
    own semi-definite form; the theta-block is the pseudo-inverse projection
    under that form plus an add-back of the form's radical inside the
    low-degree span, which restores exact identity on low-degree inputs
    without disturbing orthogonality (the add-back has zero theta-seminorm).
    The output is a function of the value at u and the leaf variables
    jointly.
    """
    slot = _cache_slot(tree, chain)
    key = ("pt", u, K)
    if key in slot:
        return slot[key]
    basis = _cached_tk(tree, chain, u, K)
    B = basis.matrix()
    leaves = tree.leaves_below(u)
    q = chain.q
    check_states(q ** (2 * len(leaves) + 1), "strong projection table")
    conditional = cond_expect_op(tree, chain, u).entries
    B_plus = np.linalg.pinv(B)
    theta_blocks = []
    for theta in range(q):
        weights = conditional[theta]
        gram = B.T @ (weights[:, None] * B)
        vals, vecs, keep = _psd_eig(gram)
        inverted = np.zeros_like(vals)
        inverted[keep] = 1.0 / vals[keep]
        pseudo = (vecs * inverted) @ vecs.T
        radical = vecs[:, ~keep] @ vecs[:, ~keep].T
        gamma = B @ (pseudo @ (B.T * weights[None, :])) + B @ (radical @ B_plus)
        theta_blocks.append(gamma)
    entries = np.vstack(theta_blocks)
    result = LinearMapMatrix(leaves, (u,) + leaves, q, entries)
    slot[key] = result
    return result


def p_dm_operator(tree: RootedTree, chain: TransitionChain, u: int, m: int,
                  K: int) -> LinearMapMatrix:
    """Tensor product of strong projections over the depth-m descendants of u.

    Maps functions of the leaves below u to functions of the depth-m layer
    and the leaves jointly; on inputs of degree at most twice the per-block
    threshold the image has degree at most one in the layer variables.
    """
    middle = dm_set(tree, u, m)
    blocks = []
    for v in middle:
        op = strong_projection_pt(tree, chain, v, K)
        blocks.append((op.output_domain, op.input_domain, op.entries))
    return _assemble_kron(blocks, chain.q)


def _reduce_span(vectors, tol: float = 1e-10):
    """Keep a maximal linearly independent subset, greedily in given order."""
    kept = []
    ortho = []
    for vec in vectors:
        residual = vec.astype(float, copy=True)
        for base in ortho:
            residual -= (base @ residual) * base
        norm = float(np.linalg.norm(residual))
        if norm > tol * max(1.0, float(np.linalg.norm(vec))):
            kept.append(vec)
            ortho.append(residual / norm)
    return kept


def _tt_spanning(tree: RootedTree, chain: TransitionChain, u: int, j: int, K: int):
    """Spanning products for the low-degree tensor space over the shell O(u;j)."""
    shell = o_set(tree, u, j)
    if not shell:
        return [DenseFunction((), chain.q, np.ones(1))]
    factor_lists = [_cached_tk(tree, chain, v, K).vectors for v in shell]
    count = 1
    for factors in factor_lists:
        count *= len(factors)
        check_states(count, "shell tensor spanning set")
    return [tensor_identify(combo) for combo in itertools.product(*factor_lists)]


def _apply_block_complement(tree: RootedTree, chain: TransitionChain, a: int, K: int,
                            domain: tuple, values: np.ndarray) -> np.ndarray:
    """Apply (I - P) at vertex a to a table over `domain`, acting only on the
    contiguous slice of axes carrying the leaves below a."""
    block = tree.leaves_below(a)
    start = domain.index(block[0])
    assert domain[start:start + len(block)] == block
    q = chain.q
    B, pseudo, weights = _pi_factors(tree, chain, a, K)
    shaped = values.reshape(q ** start, q ** len(block), -1)
    moments = np.einsum("xr,axb->arb", B * weights[:, None], shaped)
    coeffs = np.einsum("rs,asb->arb", pseudo, moments)
    projected = np.einsum("xr,arb->axb", B, coeffs)
    return (shaped - projected).reshape(-1)


def r_space_basis(tree: RootedTree, chain: TransitionChain, u: int, W: SubspaceBasis,
                  k: int, K: int) -> SubspaceBasis:
    """Recursively projected residual space, climbing k levels above u.

    Level 0 removes the low-degree projection at u from every vector of W;
    level j tensors the previous level with the low-degree spans over the
    sibling shell O(u;j-1) and removes the projection at anc(u,j).  Every
    returned vector is therefore E-orthogonal to the whole low-degree space
    of the final ancestor, not just to the seed W.
    """
    top = ancestor(tree, u, k)
    if W.domain != tree.leaves_below(u):
        raise DomainMismatch(
            f"seed basis lives on {W.domain}, expected the leaves below {u}"
        )
    if W.q != chain.q:
        raise DomainMismatch("alphabet size differs from the chain")
    domain = tree.leaves_below(u)
    current = [
        _apply_block_complement(tree, chain, u, K, domain, vec.values)
        for vec in W.vectors
    ]
    current = _reduce_span(current)
    for j in range(1, k + 1):
        level = ancestor(tree, u, j)
        domain_above = tree.leaves_below(level)
        shell = _tt_spanning(tree, chain, u, j - 1, K)
        products = []
        for vec in current:
            lower = DenseFunction(domain, chain.q, vec)
            for t in shell:
                glued = tensor_identify([lower, t])
                if glued.domain != domain_above:
                    raise DomainMismatch(
                        f"shell product lives on {glued.domain}, expected {domain_above}"
                    )
                products.append(
                    _apply_block_complement(tree, chain, level, K, domain_above, glued.values)
                )
        current = _reduce_span(products)
        domain = domain_above
    vectors = tuple(DenseFunction(domain, chain.q, vec) for vec in current)
    if vectors:
        weights = steiner_marginal(tree, chain, domain).reshape(-1)
        matrix = np.column_stack([v.values for v in vectors])
        gram = matrix.T @ (weights[:, None] * matrix)
        rank = _gram_rank(gram)
    else:
        rank = 0
    return SubspaceBasis(domain, chain.q, vectors, rank)


def decompose_f(tree: RootedTree, chain: TransitionChain, rho_prime: int, K: int,
                f: EsPolynomial, h_probe: int) -> DecompositionResult:
    """Split a bounded-degree polynomial into per-vertex components.

    Terms are grouped by their pivot vertex (the deepest vertex whose subtree
    still holds more than 2^K of the term's variables); groups pivoting at or
    below the probe height enter at their height-h_probe ancestor, higher
    groups enter at the pivot itself.  Each layer's accumulated table is then
    pushed through the chain of low-degree complements up to the base vertex,
    and the deficit left behind joins the parent's layer.  All components are
    stored dense over the leaves below the base vertex and sum back to f.
    """
    if es_degree(f) > 2 ** (K + 1):
        raise DegreeTooHigh(
            f"degree {es_degree(f)} exceeds the threshold {2 ** (K + 1)}"
        )
    k_top = tree.height[rho_prime] - h_probe
    if h_probe < 0 or k_top < 0:
        raise TooShallow(
            f"probe height {h_probe} does not fit below vertex {rho_prime}"
        )
    q = chain.q
    leaves = tree.leaves_below(rho_prime)
    if q ** len(leaves) > DECOMPOSE_STATE_CAP:
        raise SizeLimit(
            f"decomposition over {len(leaves)} leaves exceeds {DECOMPOSE_STATE_CAP} states"
        )
    check_states(q ** len(leaves), "decomposition table")
    dense_f = to_dense(f, leaves, q)
    if k_top == 0:
        return DecompositionResult(
            tree, chain, rho_prime, K, h_probe,
            {rho_prime: dense_f}, {rho_prime: 0}, 0.0,
        )
    groups = {}
    for term in f.terms:
        piv = pivot_vertex(tree, term.support, rho_prime, K)
        lift = max(h_probe - tree.height[piv], 0)
        entry = ancestor(tree, piv, lift)
        groups.setdefault(entry, []).append(term)
    accumulated = {
        entry: to_dense(EsPolynomial(tuple(terms)), leaves, q).values
        for entry, terms in groups.items()
    }
    components = {}
    layers = {}
    for t in range(k_top):
        level = [
            v for v in sorted(accumulated)
            if tree.height[v] == h_probe + t
        ]
        for v in level:
            table = accumulated.pop(v)
            if not np.any(table):
                continue
            pushed = table
            for j in range(k_top - t + 1):
                pushed = _apply_block_complement(
                    tree, chain, ancestor(tree, v, j), K, leaves, pushed
                )
            components[v] = DenseFunction(leaves, q, pushed)
            layers[v] = t
            parent = ancestor(tree, v, 1)
            accumulated[parent] = accumulated.get(parent, np.zeros(q ** len(leaves))) \
                + (table - pushed)
    top_table = accumulated.pop(rho_prime, np.zeros(q ** len(leaves)))
    assert not accumulated
    components[rho_prime] = DenseFunction(leaves, q, top_table)
    layers[rho_prime] = k_top
    total = sum(c.values for c in components.values())
    residual = float(np.max(np.abs(total - dense_f.values)))
    return DecompositionResult(
        tree, chain, rho_prime, K, h_probe, components, layers, residual
    )


def _membership_basis(tree: RootedTree, chain: TransitionChain, u: int, K: int,
                      k_u: int, k_top: int, base: int):
    """Orthonormal columns spanning one component's certified subspace.

    The span depends on the geometry only, never on the decomposed
    polynomial, so it is cached per (tree, chain); None marks an empty span.
    """
    slot = _cache_slot(tree, chain)
    key = ("member", u, K, k_u, k_top)
    if key in slot:
        return slot[key]
    if u == base:
        if k_top == 0:
            span = list(_cached_tk(tree, chain, base, K + 1).vectors)
        else:
            span = _tt_spanning(tree, chain, base, -1, K)
        matrix = np.column_stack([v.values for v in span])
    else:
        if k_u == 0:
            seed = _cached_tk(tree, chain, u, K + 1)
        else:
            vectors = _tt_spanning(tree, chain, u, -1, K)
            reduced = _reduce_span([v.values for v in vectors])
            seed = SubspaceBasis(
                tree.leaves_below(u), chain.q,
                tuple(DenseFunction(tree.leaves_below(u), chain.q, v)
                      for v in reduced),
                len(reduced),
            )
        basis = r_space_basis(tree, chain, u, seed, k_top - k_u, K)
        if not basis.vectors:
            slot[key] = None
            return None
        matrix = basis.matrix()
    left, singulars, _ = np.linalg.svd(matrix, full_matrices=False)
    cutoff = max(matrix.shape) * np.finfo(float).eps * float(
        singulars[0] if singulars.size else 0.0)
    slot[key] = np.ascontiguousarray(left[:, singulars > cutoff])
    return slot[key]


def decomposition_membership(result: DecompositionResult) -> dict:
    """Least-squares distance of each component from its certified subspace.

    Bottom-layer components are checked against the recursively projected
    residual space seeded by the degree-2^{K+1} space of their vertex,
    intermediate layers against the one seeded by the children tensor space,
    and the top component against the children tensor space of the base
    vertex itself (the degree-2^{K+1} space when the base is its own bottom
    layer).  Residuals are relative to the component size.
    """
    tree, chain, K = result.tree, result.chain, result.K
    base = result.base_vertex
    k_top = result.layer_index[base]
    out = {}
    for u, component in result.components.items():
        ortho = _membership_basis(
            tree, chain, u, K, result.layer_index[u], k_top, base)
        size = max(1.0, float(np.linalg.norm(component.values)))
        if ortho is None:
            out[u] = float(np.linalg.norm(component.values)) / size
            continue
        gap = component.values - ortho @ (ortho.T @ component.values)
        out[u] = float(np.linalg.norm(gap)) / size
    return out


def _shape_key(tree: RootedTree, u: int):
    """Canonical subtree-shape key; equal keys give identical probe values."""
    return tuple(sorted(_shape_key(tree, c) for c in tree.children[u]))


def _delta_at(tree: RootedTree, chain: TransitionChain, u: int, K: int) -> float:
    """Worst-case peak of D_u(fg) over unit-norm low-degree f and g."""
    basis = _cached_tk(tree, chain, u, K)
    B = basis.matrix()
    leaves = tree.leaves_below(u)
    weights = steiner_marginal(tree, chain, leaves).reshape(-1)
    gram = B.T @ (weights[:, None] * B)
    vals, vecs, keep = _psd_eig(gram)
    coords = B @ (vecs[:, keep] / np.sqrt(vals[keep]))
    difference = cond_expect_op(tree, chain, u, kind="diff").entries
    worst = 0.0
    for theta in range(chain.q):
        form = (coords * difference[theta][:, None]).T @ coords
        if form.size:
            worst = max(worst, float(np.max(np.abs(np.linalg.eigvalsh(form)))))
    return worst


def decay_probe(tree: RootedTree, chain: TransitionChain, K: int,
                heights) -> DecayProbeReport:
    """Measure the sharp contraction of the difference operator per height.

    delta(h) is the exact operator peak over the distinct subtree shapes at
    height h that fit the size cap; the fitted rate is the least-squares
    slope of log delta against h over the positive values, and
    h_K_empirical is the smallest probed height with delta(h) <= 1 (None
    when no probed height qualifies).
    """
    per_height = []
    for h in sorted(set(int(h) for h in heights)):
        vertices = [v for v in range(tree.n) if tree.height[v] == h]
        if not vertices:
            raise TooShallow(f"tree has no vertex at height {h}")
        seen = set()
        worst = None
        for v in vertices:
            key = _shape_key(tree, v)
            if key in seen:
                continue
            seen.add(key)
            try:
                measured = _delta_at(tree, chain, v, K)
            except SizeLimit:
                continue
            worst = measured if worst is None else max(worst, measured)
        if worst is None:
            raise SizeLimit(f"every subtree at height {h} exceeds the size cap")
        per_height.append((h, worst))
    positive = [(h, math.log(d)) for h, d in per_height if d > 0.0]
    if len(positive) >= 2:
        xs = np.array([p[0] for p in positive], dtype=float)
        ys = np.array([p[1] for p in positive], dtype=float)
        fitted = float(np.polyfit(xs, ys, 1)[0])
    else:
        fitted = float("nan")
    qualifying = [h for h, d in per_height if d <= 1.0]
    return DecayProbeReport(
        {"q": chain.q, "second_eigenvalue": chain.second_eigenvalue},
        K,
        tuple(per_height),
        fitted,
        min(qualifying) if qualifying else None,
    )


def _pulled_sums(tree: RootedTree, chain: TransitionChain, tables: dict):
    """Conditional sums s_v(x) = E[sum of leaf terms below v | X_v = x] and the
    total second moment, accumulated bottom-up in one pass."""
    q = chain.q
    sums = {}
    second_moment = 0.0
    for v in range(tree.n - 1, -1, -1):
        if not tree.children[v]:
            vec = tables.get(v)
            sums[v] = np.zeros(q) if vec is None else vec
            if vec is not None:
                second_moment += float(chain.pi @ vec ** 2)
        else:
            pulled = [chain.rows @ sums[c] for c in tree.children[v]]
            total = sum(pulled)
            sums[v] = total
            cross = float(chain.pi @ total ** 2) - sum(
                float(chain.pi @ p ** 2) for p in pulled
            )
            second_moment += cross
    return sums[0], second_moment


def var_ratio(tree: RootedTree, chain: TransitionChain, f: EsPolynomial) -> float:
    """Share of the polynomial's variance explained by the root value.

    Exact ratio Var[E[f | X_root]] / Var[f].  Polynomials whose terms all
    touch at most one leaf use a closed-form one-pass accumulation; general
    terms fall back to pairwise covariances through Steiner-tree marginals.
    """
    q = chain.q
    terms = [t for t in f.terms if t.support]
    leaves = set(tree.leaves)
    if all(len(t.support) == 1 and t.support[0] in leaves for t in terms):
        tables = {}
        for term in terms:
            vertex = term.support[0]
            centered = term.table - float(chain.pi @ term.table)
            tables[vertex] = tables.get(vertex, np.zeros(q)) + centered
        root_sum, variance = _pulled_sums(tree, chain, tables)
        conditional = float(chain.pi @ root_sum ** 2)
        scale = sum(float(chain.pi @ vec ** 2) for vec in tables.values())
    else:
        root = tree.root
        centered = []
        for term in terms:
            joint = steiner_marginal(tree, chain, term.support).reshape(-1)
            dense = to_dense(EsPolynomial((term,)), term.support, q).values
            centered.append((term, float(joint @ dense)))
        conditional_sum = np.zeros(q)
        for term, mean in centered:
            domain = tuple(sorted(set(term.support) | {root}))
            joint = steiner_marginal(tree, chain, domain)
            dense = to_dense(EsPolynomial((term,)), domain, q).values
            axis = domain.index(root)
            table = joint.reshape(-1) * dense
            shaped = table.reshape((q,) * len(domain))
            summed = shaped.sum(axis=tuple(i for i in range(len(domain)) if i != axis))
            conditional_sum += summed / chain.pi - mean
        conditional = float(chain.pi @ conditional_sum ** 2)
        variance = 0.0
        scale = 0.0
        for (term_a, mean_a) in centered:
            for (term_b, mean_b) in centered:
                union = tuple(sorted(set(term_a.support) | set(term_b.support)))
                joint = steiner_marginal(tree, chain, union).reshape(-1)
                product = to_dense(
                    EsPolynomial((term_a,)), union, q
                ).values * to_dense(EsPolynomial((term_b,)), union, q).values
                variance += float(joint @ product) - mean_a * mean_b
        for term, mean in centered:
            joint = steiner_marginal(tree, chain, term.support).reshape(-1)
            dense = to_dense(EsPolynomial((term,)), term.support, q).values
            scale += float(joint @ dense ** 2)
    if variance <= 1e-12 * max(scale, 1e-300):
        raise ZeroVariance("the polynomial has no variance to explain")
    return conditional / variance


def pairwise_report(decomposition: DecompositionResult) -> PairwiseReport:
    """Pair tables of component interactions at the base vertex.

    For each pair the absolute plain expectation of the product and the peak
    of the difference operator applied to it, together with the relative
    heights of the pair and of their nearest common ancestor.  The recorded
    Cauchy-Schwarz slack is the worst excess of any expectation entry over
    the product of the component norms (at most rounding error).
    """
    tree, chain = decomposition.tree, decomposition.chain
    base = decomposition.base_vertex
    leaves = tree.leaves_below(base)
    weights = steiner_marginal(tree, chain, leaves).reshape(-1)
    difference = cond_expect_op(tree, chain, base, kind="diff").entries
    vertices = tuple(sorted(decomposition.components))
    norms = {
        u: math.sqrt(float(max(weights @ decomposition.components[u].values ** 2, 0.0)))
        for u in vertices
    }
    e_table = {}
    d_table = {}
    meta = {}
    slack = 0.0
    for u in vertices:
        for v in vertices:
            product = decomposition.components[u].values * decomposition.components[v].values
            e_table[(u, v)] = abs(float(weights @ product))
            d_table[(u, v)] = float(np.max(np.abs(difference @ product)))
            w = nearest_common_ancestor(tree, u, v)
            meta[(u, v)] = (
                decomposition.layer_index[u],
                decomposition.layer_index[v],
                tree.height[w] - decomposition.h_probe,
            )
            slack = max(slack, e_table[(u, v)] - norms[u] * norms[v])
    return PairwiseReport(base, vertices, e_table, d_table, meta, norms, slack)


def save_operator(op: LinearMapMatrix, csv_path, meta_path=None) -> None:
    """Dump a linear map as a row,col,value CSV plus a JSON domain descriptor.

    Only nonzero entries are written; the sidecar records the full shape,
    the domains, and the value format so the dump is self-describing.
    """
    csv_path = Path(csv_path)
    if meta_path is None:
        meta_path = csv_path.with_suffix(".json")
    with open(csv_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["row", "col", "value"])
        for r in range(op.entries.shape[0]):
            for c in np.nonzero(op.entries[r])[0]:
                writer.writerow([r, int(c), format(op.entries[r, c], ".17g")])
    descriptor = {
        "rows": op.entries.shape[0],
        "cols": op.entries.shape[1],
        "q": op.q,
        "input_domain": list(op.input_domain),
        "output_domain": list(op.output_domain),
        "value_format": ".17g",
        "omitted_entries": "zero",
        "row_order": "C-order over the output domain",
        "col_order": "C-order over the input domain",
    }
    with open(meta_path, "w", encoding="utf-8") as handle:
        json.dump(descriptor, handle, indent=2, sort_keys=True)
        handle.write("\n")
