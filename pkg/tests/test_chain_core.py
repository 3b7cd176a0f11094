"""Chain analytics: validation, spectra, decay-parameter family, decay probe.

Oracle strategy: the epsilon-family is re-solved independently with scipy's
brentq on the raw defining equations and the resulting values are frozen
below; the mean-zero max-norm probe is checked against brute-force
maximization over sign vectors.
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from botlab.chain_core import (
    TransitionChain,
    bsc,
    decay_parameters,
    ks_parameter,
    load_chain,
    markov_decay_probe,
    validate_chain,
)
from botlab.errors import (
    AboveThreshold,
    DegenerateSpectrum,
    NonStochastic,
    NotErgodic,
)

# Frozen oracle values for the symmetric channel with flip probability 0.3,
# arity 2 (independent brentq solve of the defining equations, xtol 1e-15).
EPS_03 = 0.3817878049475646
LAMBDA_EPS_03 = 0.4317393752255105
LAMBDA_TILDE_EPS_03 = 0.4155667817453701
KAPPA_03 = 0.0063834178029902


def random_stochastic(rng, q):
    rows = rng.random((q, q)) + 0.05
    return rows / rows.sum(axis=1, keepdims=True)


class TestValidateChain:
    def test_symmetric_two_state(self):
        chain = validate_chain([[0.7, 0.3], [0.3, 0.7]])
        assert chain.q == 2
        assert chain.ergodic
        np.testing.assert_allclose(chain.pi, [0.5, 0.5], atol=1e-12)
        assert chain.second_eigenvalue == pytest.approx(0.4, abs=1e-12)

    def test_identity_not_ergodic(self):
        with pytest.raises(NotErgodic):
            validate_chain([[1.0, 0.0], [0.0, 1.0]])

    def test_period_two_not_ergodic(self):
        with pytest.raises(NotErgodic):
            validate_chain([[0.0, 1.0], [1.0, 0.0]])

    def test_non_stochastic_rows(self):
        with pytest.raises(NonStochastic):
            validate_chain([[0.8, 0.3], [0.3, 0.7]])
        with pytest.raises(NonStochastic):
            validate_chain([[1.2, -0.2], [0.3, 0.7]])

    def test_zero_entry_ergodic(self):
        chain = validate_chain([[0.5, 0.5], [1.0, 0.0]])
        assert chain.ergodic
        np.testing.assert_allclose(chain.pi @ chain.rows, chain.pi, atol=1e-12)

    def test_stationary_residual_random(self):
        rng = np.random.default_rng(7)
        for q in (2, 3, 5, 8):
            for _ in range(10):
                chain = validate_chain(random_stochastic(rng, q))
                assert np.max(np.abs(chain.pi @ chain.rows - chain.pi)) <= 1e-10
                assert chain.pi.sum() == pytest.approx(1.0, abs=1e-12)
                assert np.all(chain.pi > 0)

    def test_second_eigenvalue_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            rows = random_stochastic(rng, 4)
            chain = validate_chain(rows)
            spectrum = sorted(np.abs(np.linalg.eigvals(rows)))
            assert chain.second_eigenvalue == pytest.approx(spectrum[-2], abs=1e-10)


class TestKsParameter:
    def test_examples(self):
        assert ks_parameter(bsc(0.3), 2) == pytest.approx(0.32, abs=1e-12)
        assert ks_parameter(bsc(0.1), 2) == pytest.approx(1.28, abs=1e-12)
        chain = bsc(0.2)
        assert ks_parameter(chain, 1) == pytest.approx(chain.second_eigenvalue ** 2, abs=1e-15)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(3)
        for q in (2, 3, 4):
            rows = random_stochastic(rng, q)
            perm = rng.permutation(q)
            permuted = rows[np.ix_(perm, perm)]
            assert ks_parameter(validate_chain(rows), 3) == pytest.approx(
                ks_parameter(validate_chain(permuted), 3), abs=1e-10
            )


class TestDecayParameters:
    def test_frozen_oracle_values(self):
        params = decay_parameters(bsc(0.3), d=2, R=1.0, cr=1.0)
        assert params.eps == pytest.approx(EPS_03, abs=1e-12)
        assert params.lambda_eps == pytest.approx(LAMBDA_EPS_03, abs=1e-12)
        assert params.lambda_tilde_eps == pytest.approx(LAMBDA_TILDE_EPS_03, abs=1e-12)
        assert params.kappa == pytest.approx(KAPPA_03, abs=1e-12)
        assert params.h_diamond == 2
        assert params.m == 0
        assert params.cr == 1.0

    def test_defining_equations(self):
        rng = np.random.default_rng(5)
        cases = [(bsc(0.3), 2), (bsc(0.35), 2), (bsc(0.4), 3)]
        for _ in range(10):
            chain = validate_chain(random_stochastic(rng, 3))
            if ks_parameter(chain, 2) < 1.0 and chain.second_eigenvalue > 0:
                cases.append((chain, 2))
        for chain, d in cases:
            params = decay_parameters(chain, d)
            lam = chain.second_eigenvalue
            assert math.exp(-1.2 * params.eps) == pytest.approx(
                math.sqrt(max(d * lam * lam, lam)), abs=1e-12
            )
            assert math.sqrt(max(d * params.lambda_eps ** 2, params.lambda_eps)) == pytest.approx(
                math.exp(-1.1 * params.eps), abs=1e-12
            )
            assert math.sqrt(
                max(d * params.lambda_tilde_eps ** 2, params.lambda_tilde_eps)
            ) == pytest.approx(math.exp(-1.15 * params.eps), abs=1e-12)
            assert lam < params.lambda_tilde_eps < params.lambda_eps
            assert (1.0 + params.kappa) ** 6 * params.lambda_tilde_eps == pytest.approx(
                params.lambda_eps, abs=1e-12
            )

    def test_brentq_oracle_live(self):
        brentq = pytest.importorskip("scipy.optimize").brentq
        chain, d = bsc(0.25), 2
        params = decay_parameters(chain, d)
        lam = chain.second_eigenvalue
        eps = -0.5 * math.log(max(d * lam * lam, lam)) / 1.2
        for rate, got in ((1.1, params.lambda_eps), (1.15, params.lambda_tilde_eps)):
            target = math.exp(-rate * eps)
            root = brentq(
                lambda x: math.sqrt(max(d * x * x, x)) - target, 1e-12, 1 - 1e-12, xtol=1e-15
            )
            assert got == pytest.approx(root, abs=1e-12)

    def test_height_offsets(self):
        params = decay_parameters(bsc(0.3), d=2, R=4.0, cr=2.0)
        scale = 2.0 * (math.log(4.0) + 1.0)
        assert params.h_diamond == math.ceil(scale + params.eps / 20.0 * scale)
        assert params.m == math.floor(params.eps / 20.0 * scale)

    def test_above_threshold(self):
        with pytest.raises(AboveThreshold):
            decay_parameters(bsc(0.1), d=2)

    def test_degenerate_spectrum(self):
        chain = validate_chain([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(DegenerateSpectrum):
            decay_parameters(chain, d=2)


class TestMarkovDecayProbe:
    def test_examples(self):
        chain = bsc(0.3)
        assert markov_decay_probe(chain, 0) == pytest.approx(1.0, abs=1e-12)
        assert markov_decay_probe(chain, 1) == pytest.approx(0.4, abs=1e-12)
        assert markov_decay_probe(chain, 3) == pytest.approx(0.064, abs=1e-12)

    def test_brute_force_oracle(self):
        # Extremal mean-zero f in max-norm is +-1 except on one coordinate
        # forced by the mean constraint; enumerate all sign patterns of the
        # free coordinates with every choice of the adjusted coordinate.
        rng = np.random.default_rng(13)
        for q in (2, 3, 4):
            chain = validate_chain(random_stochastic(rng, q))
            for k in (0, 1, 2):
                power = np.linalg.matrix_power(chain.rows, k)
                best = 0.0
                for adjusted in range(q):
                    free = [i for i in range(q) if i != adjusted]
                    for signs in itertools.product((-1.0, 1.0), repeat=q - 1):
                        f = np.zeros(q)
                        f[free] = signs
                        f[adjusted] = -(chain.pi[free] @ f[free]) / chain.pi[adjusted]
                        if np.abs(f[adjusted]) <= 1.0 + 1e-12:
                            best = max(best, np.max(np.abs(power @ f)))
                assert markov_decay_probe(chain, k) == pytest.approx(best, abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(min_value=2, max_value=5),
        st.integers(min_value=0, max_value=6),
        st.integers(min_value=0, max_value=2 ** 31),
    )
    def test_monotone_in_steps(self, q, k, seed):
        chain = validate_chain(random_stochastic(np.random.default_rng(seed), q))
        assert markov_decay_probe(chain, k + 1) <= markov_decay_probe(chain, k) + 1e-12


class TestLoadChain:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "chain.json"
        path.write_text('{"q": 2, "rows": [[0.7, 0.3], [0.3, 0.7]]}')
        chain = load_chain(path)
        assert isinstance(chain, TransitionChain)
        assert chain.second_eigenvalue == pytest.approx(0.4, abs=1e-12)

    def test_mismatched_q(self, tmp_path):
        path = tmp_path / "chain.json"
        path.write_text('{"q": 3, "rows": [[0.7, 0.3], [0.3, 0.7]]}')
        with pytest.raises(NonStochastic):
            load_chain(path)
