"""Functions of leaf variables in three interchangeable shapes.

Sparse sums of local terms (each term a table over a small set of
vertices), dense tables over an explicit variable set, and spanning
bases for the low-degree subspaces attached to a subtree. The product
embedding glues dense functions on disjoint variable sets into one
function on the union; it is the identification used throughout the
operator layer, and it refuses overlapping variable sets, where such a
gluing is no longer injective.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .broadcast_law import steiner_marginal
from .chain_core import TransitionChain
from .errors import DomainMismatch, OverlappingDomains, SupportMismatch
from .limits import check_states
from .tree_model import RootedTree

INDEPENDENCE_TOL = 1e-10


def _alphabet_size(support: tuple, length: int):
    """Alphabet size q with q**|support| = length, or None for constants."""
    k = len(support)
    if k == 0:
        if length != 1:
            raise SupportMismatch("constant term must have a single table entry")
        return None
    q = round(length ** (1.0 / k))
    for candidate in (q - 1, q, q + 1):
        if candidate >= 1 and candidate**k == length:
            return candidate
    raise SupportMismatch(f"table of length {length} is not a power of any alphabet size")


def _check_ascending(vertices: tuple, what: str) -> None:
    if any(a >= b for a, b in zip(vertices, vertices[1:])):
        raise SupportMismatch(f"{what} must be strictly ascending")


@dataclass(frozen=True)
class LocalFunction:
    """One term: a real table over the states of a small vertex set.

    The table is indexed lexicographically in vertex order with the last
    vertex fastest, matching C-order flattening of a (q,)*k array.
    """

    support: tuple
    table: np.ndarray

    def __post_init__(self):
        support = tuple(int(v) for v in self.support)
        _check_ascending(support, "support")
        table = np.array(self.table, dtype=float).reshape(-1)
        _alphabet_size(support, table.size)
        table.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "table", table)

    def alphabet_size(self):
        """Alphabet size implied by the table, None for constant terms."""
        return _alphabet_size(self.support, self.table.size)


@dataclass(frozen=True)
class EsPolynomial:
    """Finite sum of local terms; degree is the largest support size."""

    terms: tuple
    declared_degree: int = field(init=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        if not all(isinstance(t, LocalFunction) for t in terms):
            raise SupportMismatch("terms must be LocalFunction instances")
        degree = max((len(t.support) for t in terms), default=0)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "declared_degree", degree)

    def __add__(self, other: "EsPolynomial") -> "EsPolynomial":
        return EsPolynomial(self.terms + other.terms)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            scaled = tuple(LocalFunction(t.support, t.table * other) for t in self.terms)
            return EsPolynomial(scaled)
        products = tuple(
            _term_product(a, b) for a in self.terms for b in other.terms
        )
        return EsPolynomial(products)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DenseFunction:
    """A real table over every configuration of an explicit variable set."""

    domain: tuple
    q: int
    values: np.ndarray

    def __post_init__(self):
        domain = tuple(int(v) for v in self.domain)
        _check_ascending(domain, "domain")
        q = int(self.q)
        if q < 1:
            raise DomainMismatch("alphabet size must be at least 1")
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != q ** len(domain):
            raise DomainMismatch(
                f"expected {q ** len(domain)} values over {len(domain)} variables, got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "values", values)

    def _check_same(self, other: "DenseFunction") -> None:
        if self.domain != other.domain or self.q != other.q:
            raise DomainMismatch("operands live on different variable sets")

    def __add__(self, other: "DenseFunction") -> "DenseFunction":
        self._check_same(other)
        return DenseFunction(self.domain, self.q, self.values + other.values)

    def __sub__(self, other: "DenseFunction") -> "DenseFunction":
        self._check_same(other)
        return DenseFunction(self.domain, self.q, self.values - other.values)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return DenseFunction(self.domain, self.q, self.values * other)
        self._check_same(other)
        return DenseFunction(self.domain, self.q, self.values * other.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SubspaceBasis:
    """Linearly independent dense functions spanning one subspace.

    gram_rank is the rank of the Gram matrix under the bilinear form the
    basis was built with; it can fall below len(vectors) when the law
    puts zero mass on part of the configuration space.
    """

    domain: tuple
    q: int
    vectors: tuple
    gram_rank: int

    def __post_init__(self):
        vectors = tuple(self.vectors)
        for v in vectors:
            if v.domain != self.domain or v.q != self.q:
                raise DomainMismatch("basis vector on a different variable set")
        object.__setattr__(self, "domain", tuple(int(v) for v in self.domain))
        object.__setattr__(self, "vectors", vectors)

    def matrix(self) -> np.ndarray:
        """Basis vectors as columns, rows in C-order over the domain."""
        if not self.vectors:
            return np.zeros((self.q ** len(self.domain), 0))
        return np.column_stack([v.values for v in self.vectors])


def _lift(table: np.ndarray, support: tuple, domain: tuple, q: int) -> np.ndarray:
    """Expand a table on support to the full (q,)*|domain| array."""
    if table.size != q ** len(support):
        raise SupportMismatch(
            f"table of length {table.size} does not match alphabet size {q} on {len(support)} variables"
        )
    inside = set(support)
    shape = tuple(q if v in inside else 1 for v in domain)
    return np.broadcast_to(table.reshape(shape), (q,) * len(domain))


def _term_product(a: LocalFunction, b: LocalFunction) -> LocalFunction:
    qa, qb = a.alphabet_size(), b.alphabet_size()
    if qa is not None and qb is not None and qa != qb:
        raise DomainMismatch(f"cannot multiply terms over alphabets {qa} and {qb}")
    q = qa if qa is not None else qb
    if q is None:
        return LocalFunction((), a.table * b.table)
    union = tuple(sorted(set(a.support) | set(b.support)))
    product = _lift(a.table, a.support, union, q) * _lift(b.table, b.support, union, q)
    return LocalFunction(union, product.reshape(-1))


def es_degree(f: EsPolynomial) -> int:
    """Largest support size among the terms; 0 for constants."""
    return f.declared_degree


def to_dense(f: EsPolynomial, domain, q: int) -> DenseFunction:
    """Evaluate the sparse sum as one dense table over domain."""
    domain = tuple(sorted(set(int(v) for v in domain)))
    check_states(q ** len(domain), "dense table")
    inside = set(domain)
    total = np.zeros((q,) * len(domain))
    for term in f.terms:
        if not set(term.support) <= inside:
            raise SupportMismatch(f"term support {term.support} not inside domain {domain}")
        total = total + _lift(term.table, term.support, domain, q)
    return DenseFunction(domain, q, total.reshape(-1))


def tensor_identify(parts) -> DenseFunction:
    """Glue dense functions on disjoint variable sets into their product.

    The result on the sorted union agrees with each factor after lifting;
    the gluing is injective precisely because the variable sets do not
    overlap, so overlap is rejected rather than silently merged.
    """
    parts = list(parts)
    if not parts:
        raise DomainMismatch("need at least one factor")
    q = parts[0].q
    if any(p.q != q for p in parts):
        raise DomainMismatch("factors use different alphabet sizes")
    counted = list(itertools.chain.from_iterable(p.domain for p in parts))
    union = tuple(sorted(set(counted)))
    if len(counted) != len(union):
        raise OverlappingDomains("factor variable sets overlap; rename variables first")
    check_states(q ** len(union), "product table")
    total = np.ones((q,) * len(union))
    for p in parts:
        total = total * _lift(p.values, p.domain, union, q)
    return DenseFunction(union, q, total.reshape(-1))


def tk_basis(tree: RootedTree, chain: TransitionChain, u: int, K: int) -> SubspaceBasis:
    """Basis of the degree <= 2**K functions of the leaves below u.

    Spanning set: every indicator of a fixed realization on a vertex set
    S inside the leaves with |S| <= 2**K, lifted to the full leaf table.
    Enumeration is by support size, then support, then realization, all
    lexicographic; a greedy sweep keeps the lifts that enlarge the span.
    """
    leaves = tree.leaves_below(u)
    q = chain.q
    n = len(leaves)
    check_states(q**n, "subspace basis domain")
    limit = min(2**K, n)

    kept = []
    ortho = []
    for size in range(limit + 1):
        for subset in itertools.combinations(range(n), size):
            for realization in itertools.product(range(q), repeat=size):
                lift = np.zeros((q,) * n)
                index = [slice(None)] * n
                for axis, state in zip(subset, realization):
                    index[axis] = state
                lift[tuple(index)] = 1.0
                vec = lift.reshape(-1)
                residual = vec.copy()
                for basis_vec in ortho:
                    residual -= (basis_vec @ residual) * basis_vec
                norm = np.linalg.norm(residual)
                if norm > INDEPENDENCE_TOL * max(1.0, np.linalg.norm(vec)):
                    kept.append(vec)
                    ortho.append(residual / norm)

    vectors = tuple(DenseFunction(leaves, q, v) for v in kept)
    weights = steiner_marginal(tree, chain, leaves).reshape(-1)
    matrix = np.column_stack(kept) if kept else np.zeros((q**n, 0))
    gram = matrix.T @ (weights[:, None] * matrix)
    return SubspaceBasis(leaves, q, vectors, _gram_rank(gram))


def _gram_rank(gram: np.ndarray) -> int:
    if gram.size == 0:
        return 0
    eigenvalues = np.linalg.eigvalsh(gram)
    cutoff = INDEPENDENCE_TOL * max(1.0, float(eigenvalues.max(initial=0.0)))
    return int(np.count_nonzero(eigenvalues > cutoff))


def load_function(source) -> EsPolynomial:
    """Read {"terms": [{"support": [...], "table": [...]}, ...]} JSON."""
    if hasattr(source, "read"):
        payload = json.load(source)
    else:
        with open(source) as handle:
            payload = json.load(handle)
    if not isinstance(payload, dict) or "terms" not in payload:
        raise SupportMismatch("function file must be an object with a terms list")
    terms = []
    for entry in payload["terms"]:
        if not isinstance(entry, dict) or "support" not in entry or "table" not in entry:
            raise SupportMismatch("each term needs a support and a table")
        terms.append(LocalFunction(tuple(entry["support"]), np.asarray(entry["table"])))
    return EsPolynomial(tuple(terms))
