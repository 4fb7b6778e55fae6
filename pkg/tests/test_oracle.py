"""Tests for the enumeration oracle and the closed-form risk predictions."""

import itertools

import numpy as np
import pytest

from slate_ope import (
    AdditiveEstimatorParams,
    DegenerateSlotError,
    DivergenceSummary,
    ElementwiseAdditiveModel,
    ModelDrawConfig,
    PairwiseAdditiveModel,
    Slate,
    SlateSpec,
    compute_divergences,
    draw_elementwise_model,
    estimate_additive,
    exact_bias,
    exact_variance,
    generate_dataset,
    make_deterministic_policy,
    make_uniform_policy,
    pi_params,
    predicted_improvement,
    spawn_rng,
)


def uniform_det_pair(cards):
    spec = SlateSpec(cardinalities=tuple(cards))
    return spec, make_uniform_policy(spec), make_deterministic_policy(
        spec, Slate(actions=(0,) * len(cards))
    )


def zero_sum_params(slot_count, weights):
    return AdditiveEstimatorParams(
        constant=1.0 - slot_count, g_weights=(1.0,) * slot_count, f_weights=tuple(weights)
    )


class TestExactVariance:
    def test_constant_rate_on_policy_is_bernoulli_variance(self):
        # With target == logging, G is identically 1, so the estimator is the
        # sample mean of Bernoulli(c) rewards and its variance is c(1-c).
        spec = SlateSpec(cardinalities=(2, 2))
        mu = make_uniform_policy(spec)
        c = 0.3
        model = ElementwiseAdditiveModel(
            spec=spec, phis=(np.full(2, c / 2), np.full(2, c / 2))
        )
        var = exact_variance(model, mu, mu, pi_params(2))
        assert var == pytest.approx(c - c * c, abs=1e-15)

    def test_zero_rates_leave_only_control_variate_term(self):
        # p = 0 kills every reward term, so Var(T) = E[F^2] = sum w_k^2 alpha_k.
        spec, mu, pi = uniform_det_pair((3, 5))
        model = ElementwiseAdditiveModel(spec=spec, phis=(np.zeros(3), np.zeros(5)))
        rng = np.random.default_rng(0)
        w = rng.normal(size=2)
        w -= w.mean()
        divs = compute_divergences(pi, mu)
        var = exact_variance(model, mu, pi, zero_sum_params(2, w))
        closed_form = float(np.sum(w**2 * np.asarray(divs.alphas)))
        assert var == pytest.approx(closed_form, rel=1e-12)

    def test_matches_empirical_variance_of_replicated_estimates(self):
        # Explicit 2x2 rate table (as a single pairwise term) cross-checked
        # against the spread of estimates over many generated datasets.
        spec, mu, pi = uniform_det_pair((2, 2))
        model = PairwiseAdditiveModel(
            spec=spec, phi_pairs=(np.array([[0.45, 0.15], [0.25, 0.35]]),)
        )
        params = pi_params(2)
        n, reps = 4000, 1200
        estimates = np.empty(reps)
        for rep in range(reps):
            data = generate_dataset(model, mu, n, spawn_rng(123, rep))
            estimates[rep] = estimate_additive(data, pi, params)
        empirical = float(np.var(estimates))
        expected = exact_variance(model, mu, pi, params) / n
        se = empirical * np.sqrt(2.0 / (reps - 1))
        assert abs(empirical - expected) <= 4 * se

    def test_capacity_cap_enforced(self):
        from slate_ope import CapacityError

        spec, mu, pi = uniform_det_pair((101, 101, 101))
        model = ElementwiseAdditiveModel(
            spec=spec, phis=tuple(np.zeros(101) for _ in range(3))
        )
        with pytest.raises(CapacityError):
            exact_variance(model, mu, pi, pi_params(3))

    def test_invariant_under_action_relabeling_fixing_target(self):
        # Permuting non-target actions within a slot (and the model with it)
        # permutes enumeration terms only.
        spec, mu, pi = uniform_det_pair((3, 4))
        rng = np.random.default_rng(1)
        model = draw_elementwise_model(spec, ModelDrawConfig(prior_mean=0.25), rng)
        perm = np.array([0, 3, 1, 2])  # fixes action 0 in slot 1
        permuted = ElementwiseAdditiveModel(
            spec=spec, phis=(model.phis[0], model.phis[1][perm])
        )
        base = exact_variance(model, mu, pi, pi_params(2))
        relabeled = exact_variance(permuted, mu, pi, pi_params(2))
        assert relabeled == pytest.approx(base, rel=1e-12)


class TestExactBias:
    def test_pi_unbiased_for_elementwise_rewards(self):
        spec, mu, pi = uniform_det_pair((3, 4))
        for seed in range(5):
            model = draw_elementwise_model(
                spec, ModelDrawConfig(prior_mean=0.25), np.random.default_rng(seed)
            )
            assert abs(exact_bias(model, mu, pi, pi_params(2))) <= 1e-12

    def test_on_policy_pi_params_unbiased(self):
        spec = SlateSpec(cardinalities=(2, 3))
        mu = make_uniform_policy(spec)
        model = draw_elementwise_model(
            spec, ModelDrawConfig(prior_mean=0.4), np.random.default_rng(6)
        )
        assert abs(exact_bias(model, mu, mu, pi_params(2))) <= 1e-12

    def test_pairwise_bias_matches_independent_enumeration(self):
        # Independent oracle: plain python loops straight from the estimator
        # definition, sharing nothing with the implementation under test.
        spec, mu, pi = uniform_det_pair((2, 2))
        table = np.array([[0.41, 0.13], [0.27, 0.33]])
        model = PairwiseAdditiveModel(spec=spec, phi_pairs=(table,))
        got = exact_bias(model, mu, pi, pi_params(2))

        expected_estimate = 0.0
        for a, b in itertools.product(range(2), range(2)):
            mu_prob = 0.25
            y0 = (1.0 if a == 0 else 0.0) / 0.5
            y1 = (1.0 if b == 0 else 0.0) / 0.5
            g = -1.0 + y0 + y1
            expected_estimate += mu_prob * table[a][b] * g
        v_pi = table[0][0]
        assert got == pytest.approx(expected_estimate - v_pi, abs=1e-12)
        assert abs(got) > 1e-6  # pairwise rewards break PI's unbiasedness here


class TestPredictedImprovement:
    def test_hand_evaluated_two_slots(self):
        divs = DivergenceSummary.from_alphas([1.0, 3.0])
        pred = predicted_improvement(divs, 0.5, 0.5)
        assert pred.improvement_per_sample == pytest.approx(0.25, abs=1e-15)

    def test_equal_divergences_give_zero(self):
        divs = DivergenceSummary.from_alphas([5.0, 5.0, 5.0])
        assert predicted_improvement(divs, 0.3, 0.7).improvement_per_sample == 0.0

    def test_boundary_at_twice_true_prior(self):
        divs = DivergenceSummary.from_alphas([1.0, 9.0])
        assert predicted_improvement(divs, 0.25, 0.5).improvement_per_sample == 0.0
        assert predicted_improvement(divs, 0.25, 0.7).improvement_per_sample < 0.0
        assert predicted_improvement(divs, 0.25, 0.25).improvement_per_sample > 0.0

    def test_single_slot_is_exactly_zero(self):
        divs = DivergenceSummary.from_alphas([17.0])
        assert predicted_improvement(divs, 0.25, 0.4).improvement_per_sample == 0.0

    def test_matched_prior_specialization(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            k = int(rng.integers(2, 8))
            divs = DivergenceSummary.from_alphas(rng.uniform(0.01, 100.0, size=k))
            p = float(rng.uniform(0.05, 0.95))
            pred = predicted_improvement(divs, p, p)
            gap = divs.arithmetic_mean - divs.harmonic_mean
            assert pred.improvement_per_sample == pytest.approx(p * p * k * gap, rel=1e-12)
            assert pred.improvement_per_sample >= 0.0

    def test_degenerate_divergence_rejected(self):
        divs = DivergenceSummary.from_alphas([0.0, 2.0])
        with pytest.raises(DegenerateSlotError):
            predicted_improvement(divs, 0.25, 0.25)

    def test_prior_bounds_checked(self):
        divs = DivergenceSummary.from_alphas([1.0, 2.0])
        with pytest.raises(ValueError):
            predicted_improvement(divs, 0.0, 0.25)
        with pytest.raises(ValueError):
            predicted_improvement(divs, 0.25, 1.0)


class TestRiskIdentity:
    def test_variance_difference_matches_prior_averaged_objective(self):
        # Adding a zero-sum control variate changes the exact variance by
        # E[F^2] - 2 E[PGF]; averaged over model draws that is
        # sum w_k^2 alpha_k - 2 p_bar sum w_k alpha_k.
        spec, mu, pi = uniform_det_pair((2, 4))
        divs = compute_divergences(pi, mu)
        alphas = np.asarray(divs.alphas)
        rng = np.random.default_rng(8)
        w = rng.normal(scale=0.2, size=2)
        w -= w.mean()
        p_bar = 0.25
        cfg = ModelDrawConfig(prior_mean=p_bar, relative_sd=0.1)
        diffs = []
        for seed in range(250):
            model = draw_elementwise_model(spec, cfg, np.random.default_rng(1000 + seed))
            with_cv = exact_variance(model, mu, pi, zero_sum_params(2, w))
            without = exact_variance(model, mu, pi, pi_params(2))
            diffs.append(with_cv - without)
        diffs = np.asarray(diffs)
        closed_form = float(np.sum(w**2 * alphas) - 2 * p_bar * np.sum(w * alphas))
        se = float(np.std(diffs)) / np.sqrt(diffs.shape[0])
        assert abs(float(np.mean(diffs)) - closed_form) <= 4 * se
