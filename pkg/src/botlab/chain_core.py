"""Channel analytics for ergodic finite-state chains.

Validation, stationary distribution, second-eigenvalue modulus, the
threshold parameter d*lambda^2, the epsilon-family of decay parameters,
and an exact probe of k-step mean-zero contraction in max-norm.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AboveThreshold, DegenerateSpectrum, NonStochastic, NotErgodic

STOCHASTIC_TOL = 1e-9
STATIONARY_TOL = 1e-10
SPECTRUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TransitionChain:
    """An ergodic q-state channel with stationary law and spectral data.

    `second_eigenvalue` is the maximum modulus over non-principal
    eigenvalues of the row-stochastic table `rows`.
    """

    q: int
    rows: np.ndarray
    pi: np.ndarray
    second_eigenvalue: float
    ergodic: bool

    def __post_init__(self):
        self.rows.setflags(write=False)
        self.pi.setflags(write=False)


@dataclass(frozen=True)
class DecayParameters:
    """The epsilon-family of decay rates derived from a chain and arity.

    eps solves exp(-1.2 eps) = sqrt(max(d lambda^2, lambda)); lambda_eps and
    lambda_tilde_eps solve the analogous equations at rates 1.1 and 1.15;
    kappa sits at the equality (1+kappa)^6 lambda_tilde_eps = lambda_eps;
    h_diamond and m are the integer height offsets built from the cr knob.
    """

    eps: float
    lambda_eps: float
    lambda_tilde_eps: float
    kappa: float
    h_diamond: int
    m: int
    cr: float


def validate_chain(rows) -> TransitionChain:
    """Validate a q x q transition table and compute its invariants.

    Raises NonStochastic for negative entries or row sums off by more than
    1e-9, NotErgodic when no power of the table up to the Wielandt exponent
    q^2 - 2q + 2 is strictly positive.
    """
    table = np.array(rows, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise NonStochastic(f"expected a square table, got shape {table.shape}")
    q = table.shape[0]
    if q < 2:
        raise NonStochastic("need at least two states")
    if not np.all(np.isfinite(table)):
        raise NonStochastic("entries must be finite")
    if np.any(table < 0.0):
        raise NonStochastic("negative transition probability")
    row_sums = table.sum(axis=1)
    if np.max(np.abs(row_sums - 1.0)) > STOCHASTIC_TOL:
        raise NonStochastic(f"row sums deviate from 1 by {np.max(np.abs(row_sums - 1.0)):.3e}")

    if not _is_primitive(table > 0.0, q):
        raise NotErgodic("chain is reducible or periodic")

    pi = _stationary(table)
    lam = _second_eigenvalue(table)
    return TransitionChain(q=q, rows=table, pi=pi, second_eigenvalue=lam, ergodic=True)


def _is_primitive(positive: np.ndarray, q: int) -> bool:
    """Strict positivity of some power up to the Wielandt exponent."""
    bound = q * q - 2 * q + 2
    power = np.eye(q, dtype=bool)
    for _ in range(bound):
        power = (power @ positive) > 0
        if power.all():
            return True
    return False


def _stationary(table: np.ndarray) -> np.ndarray:
    """Left fixed point of the table, solved as an overdetermined system."""
    q = table.shape[0]
    system = np.vstack([table.T - np.eye(q), np.ones((1, q))])
    rhs = np.zeros(q + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    residual = np.max(np.abs(pi @ table - pi))
    if residual > STATIONARY_TOL or np.any(pi <= 0.0):
        raise NotErgodic(f"no strictly positive stationary law (residual {residual:.3e})")
    return pi / pi.sum()


def _second_eigenvalue(table: np.ndarray) -> float:
    """Max modulus over non-principal eigenvalues of the full spectrum."""
    spectrum = np.linalg.eigvals(table)
    principal = int(np.argmin(np.abs(spectrum - 1.0)))
    rest = np.delete(spectrum, principal)
    if rest.size == 0:
        return 0.0
    lam = float(np.max(np.abs(rest)))
    return 0.0 if lam < SPECTRUM_TOL else lam


def ks_parameter(chain: TransitionChain, d: int) -> float:
    """The threshold parameter d * lambda^2; the critical value is 1."""
    return d * chain.second_eigenvalue ** 2


def _solve_branch(target: float, d: int) -> float:
    """Unique x in (0, 1) with sqrt(max(d x^2, x)) = target.

    max(d x^2, x) switches branch at x = 1/d, so x = target^2 on the linear
    branch (target^2 <= 1/d) and x = target/sqrt(d) on the quadratic one.
    """
    squared = target * target
    if squared <= 1.0 / d:
        return squared
    return target / math.sqrt(d)


def decay_parameters(chain: TransitionChain, d: int, R: float = 1.0, cr: float = 1.0) -> DecayParameters:
    """Solve the epsilon-family in closed form for a chain strictly below threshold."""
    lam = chain.second_eigenvalue
    base = max(d * lam * lam, lam)
    if d * lam * lam >= 1.0:
        raise AboveThreshold(f"d*lambda^2 = {d * lam * lam:.6f} >= 1")
    if lam == 0.0:
        raise DegenerateSpectrum("second eigenvalue is zero; the decay family is undefined")

    eps = -0.5 * math.log(base) / 1.2
    lambda_eps = _solve_branch(math.exp(-1.1 * eps), d)
    lambda_tilde_eps = _solve_branch(math.exp(-1.15 * eps), d)
    kappa = (lambda_eps / lambda_tilde_eps) ** (1.0 / 6.0) - 1.0
    scale = cr * (math.log(R) + 1.0)
    h_diamond = math.ceil(scale + (eps / (10.0 * d)) * scale)
    m = math.floor((eps / (10.0 * d)) * scale)
    return DecayParameters(
        eps=eps,
        lambda_eps=lambda_eps,
        lambda_tilde_eps=lambda_tilde_eps,
        kappa=kappa,
        h_diamond=h_diamond,
        m=m,
        cr=cr,
    )


def markov_decay_probe(chain: TransitionChain, k: int) -> float:
    """Exact max-norm operator norm of the k-step map on mean-zero functions.

    For each row r of rows^k the extremal mean-zero f with ||f||_inf <= 1
    gives |r.f| = min_c ||r - c pi||_1, attained at a pi-weighted median c
    of the ratios r_i / pi_i (LP duality; no solver needed).
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    power = np.linalg.matrix_power(chain.rows, k)
    best = 0.0
    for row in power:
        best = max(best, _row_norm_mean_zero(row, chain.pi))
    return best


def _row_norm_mean_zero(row: np.ndarray, pi: np.ndarray) -> float:
    ratios = row / pi
    order = np.argsort(ratios, kind="stable")
    cumulative = np.cumsum(pi[order])
    crossing = int(np.searchsorted(cumulative, 0.5))
    median = ratios[order[crossing]]
    return float(np.abs(row - median * pi).sum())


def load_chain(source) -> TransitionChain:
    """Read a chain from a JSON file {"q": int, "rows": [[...], ...]} or a dict."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    else:
        payload = source
    if not isinstance(payload, dict) or "q" not in payload or "rows" not in payload:
        raise NonStochastic("chain file must contain keys 'q' and 'rows'")
    rows = payload["rows"]
    if len(rows) != payload["q"]:
        raise NonStochastic("declared q does not match the table")
    return validate_chain(rows)


def bsc(delta: float) -> TransitionChain:
    """The symmetric two-state channel [[1-delta, delta], [delta, 1-delta]]."""
    return validate_chain([[1.0 - delta, delta], [delta, 1.0 - delta]])
