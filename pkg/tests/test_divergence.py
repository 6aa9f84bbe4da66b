import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcil.divergence import (
    RewardWitness,
    constructive_witness,
    d_cont_estimate,
    exact_pair_loss_gradient,
    inner_objective,
    sandwich_check,
    table_encoder_gap,
    taylor_check,
    tv_distance,
)


def random_pair(rng, n):
    return rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))


class TestTvDistance:
    def test_identical(self):
        p = np.array([0.25, 0.75])
        assert tv_distance(p, p) == 0.0

    def test_disjoint(self):
        assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_hand_value(self):
        assert tv_distance([0.7, 0.3], [0.5, 0.5]) == pytest.approx(0.2, abs=1e-15)

    def test_mismatched_support_rejected(self):
        with pytest.raises(ValueError, match="mismatched"):
            tv_distance([1.0], [0.5, 0.5])

    def test_invalid_distribution_rejected(self):
        with pytest.raises(ValueError, match="sums to"):
            tv_distance([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(ValueError, match="non-negative"):
            tv_distance([1.5, -0.5], [0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=10**6))
    def test_range_and_symmetry(self, n, seed):
        rng = np.random.default_rng(seed)
        p, q = random_pair(rng, n)
        tv = tv_distance(p, q)
        assert 0.0 <= tv <= 1.0
        assert tv == pytest.approx(tv_distance(q, p), abs=1e-15)


class TestInnerObjective:
    def test_zero_g(self):
        assert inner_objective([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_hand_value(self):
        assert inner_objective([1.0, -1.0], [1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0)

    def test_sign_flip_negates(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p, q = random_pair(rng, 4)
            g = rng.uniform(-1, 1, size=4)
            assert inner_objective(-g, p, q) == pytest.approx(-inner_objective(g, p, q), abs=1e-12)

    def test_outside_box_rejected(self):
        with pytest.raises(ValueError, match="box"):
            inner_objective([1.5, 0.0], [1.0, 0.0], [0.0, 1.0])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=10**6))
    def test_never_exceeds_twice_tv(self, n, seed):
        rng = np.random.default_rng(seed)
        p, q = random_pair(rng, n)
        g = rng.uniform(-1, 1, size=n)
        assert inner_objective(g, p, q) <= 2.0 * tv_distance(p, q) + 1e-12


class TestConstructiveWitness:
    def test_hand_case(self):
        w = constructive_witness([1.0, 0.0], [0.0, 1.0], beta=0.5)
        np.testing.assert_array_equal(w.g, [1.0, -0.5])
        assert w.alpha == pytest.approx(1.0)
        assert w.value == pytest.approx(1.5)

    def test_equal_distributions_vacuous(self):
        p = np.array([0.3, 0.7])
        w = constructive_witness(p, p)
        assert w.value == pytest.approx(0.0, abs=1e-15)

    def test_alpha_consistent_with_g(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p, q = random_pair(rng, int(rng.integers(2, 9)))
            w = constructive_witness(p, q)
            assert w.alpha == pytest.approx(abs(w.g @ p), abs=1e-12)

    def test_lower_bound_500_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            n = int(rng.integers(2, 9))
            p, q = random_pair(rng, n)
            w = constructive_witness(p, q, beta=0.5)
            assert w.value >= 0.25 * tv_distance(p, q) - 1e-12

    def test_case_two_branch(self):
        # most expert mass sits where the agent dominates, forcing the
        # +beta / -1 form of the witness
        p = np.array([0.9, 0.1])
        q = np.array([0.95, 0.05])
        w = constructive_witness(p, q, beta=0.5)
        np.testing.assert_array_equal(w.g, [-1.0, 0.5])
        assert w.value >= 0.25 * tv_distance(p, q) - 1e-12

    def test_invalid_beta_rejected(self):
        with pytest.raises(ValueError, match="beta"):
            constructive_witness([1.0, 0.0], [0.0, 1.0], beta=0.8)


class TestDContEstimate:
    def test_tight_upper_case(self):
        est = d_cont_estimate([1.0, 0.0], [0.0, 1.0], restarts=4)
        assert est == pytest.approx(2.0, abs=1e-9)

    def test_equal_distributions(self):
        p = [0.4, 0.6]
        assert d_cont_estimate(p, p, restarts=4) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_in_restarts(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p, q = random_pair(rng, 5)
            lo = d_cont_estimate(p, q, restarts=2, seed=9)
            hi = d_cont_estimate(p, q, restarts=16, seed=9)
            assert hi >= lo - 1e-15

    def test_dominates_witness(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            p, q = random_pair(rng, int(rng.integers(2, 9)))
            est = d_cont_estimate(p, q, restarts=4)
            assert est >= constructive_witness(p, q, 0.5).value - 1e-12

    def test_restarts_validated(self):
        with pytest.raises(ValueError, match="restarts"):
            d_cont_estimate([1.0, 0.0], [0.0, 1.0], restarts=0)


class TestSandwich:
    def test_thousand_random_pairs(self):
        rng = np.random.default_rng(5)
        half_count = 0
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            p, q = random_pair(rng, n)
            rep = sandwich_check(p, q, restarts=8)
            assert rep.lower_ok and rep.upper_ok
            half_count += rep.stronger_half_lower
        # the stronger 0.5*TV lower bound is reported, not asserted
        print(f"estimate cleared 0.5*TV on {half_count}/1000 pairs")

    def test_tight_case(self):
        rep = sandwich_check([1.0, 0.0], [0.0, 1.0], restarts=4)
        assert rep.tv == pytest.approx(1.0)
        assert rep.d_cont_est == pytest.approx(2.0, abs=1e-9)
        assert rep.lower_ok and rep.upper_ok

    def test_vacuous_case(self):
        p = [0.5, 0.5]
        rep = sandwich_check(p, p, restarts=2)
        assert rep.tv == 0.0 and rep.d_cont_est == pytest.approx(0.0, abs=1e-12)
        assert rep.lower_ok and rep.upper_ok


class TestTableEncoderGap:
    def test_gap_never_exceeds_estimate(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            n = int(rng.integers(2, 7))
            p, q = random_pair(rng, n)
            dim = int(rng.integers(2, 6))
            emb = rng.normal(size=(n, dim))
            emb /= np.linalg.norm(emb, axis=1, keepdims=True)
            gap = table_encoder_gap(emb, p, q)
            assert gap <= d_cont_estimate(p, q, restarts=8) + 1e-6

    def test_renormalized_reference_breaks_the_bound(self):
        # two-point counterexample: with a renormalised mean reference the gap
        # reaches 2*TV = 1.6 while the box maximum is only 1.28
        p = np.array([0.9, 0.1])
        q = np.array([0.1, 0.9])
        emb = np.array([[1.0, 0.0], [-1.0, 0.0]])
        est = d_cont_estimate(p, q, restarts=16)
        assert est == pytest.approx(1.28, abs=1e-9)
        raw_gap = table_encoder_gap(emb, p, q)
        assert raw_gap <= est + 1e-9
        mean = emb.T @ p
        renorm_gap = float((emb @ (mean / np.linalg.norm(mean))) @ (p - q))
        assert renorm_gap == pytest.approx(1.6, abs=1e-12)
        assert renorm_gap > est + 0.3

    def test_non_unit_embeddings_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            table_encoder_gap(np.array([[2.0, 0.0], [0.0, 1.0]]), [0.5, 0.5], [0.5, 0.5])


class TestTaylorCheck:
    @pytest.mark.parametrize("tau", [0.07, 0.5, 1.0])
    def test_equal_similarity_gradients_coincide(self, tau):
        assert taylor_check(tau, trials=100) < 1e-9

    def test_away_from_equality_deviation_nonzero(self):
        tau = 0.5
        grad = exact_pair_loss_gradient(0.8, -0.2, tau)
        surrogate = np.array([-1.0, 1.0]) / (2.0 * tau)
        assert np.max(np.abs(grad - surrogate)) > 1e-3

    def test_closed_form_matches_tape(self):
        tau = 0.07
        grad = exact_pair_loss_gradient(0.3, 0.3, tau)
        np.testing.assert_allclose(grad, np.array([-1.0, 1.0]) / (2 * tau), atol=1e-12)

    def test_invalid_tau(self):
        with pytest.raises(ValueError, match="tau"):
            taylor_check(0.0, trials=1)
