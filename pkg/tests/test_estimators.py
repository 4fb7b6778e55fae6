"""Tests for the IPS, additive-family, PI, and PI++ estimators."""

from fractions import Fraction

import numpy as np
import pytest

from slate_ope import (
    AdditiveEstimatorParams,
    DegenerateSlotError,
    DivergenceSummary,
    FactoredPolicy,
    LoggedDataset,
    LoggedSample,
    Slate,
    SlateSpec,
    compute_divergences,
    estimate_additive,
    estimate_ips,
    estimate_pi,
    estimate_pi_plus_plus,
    make_deterministic_policy,
    make_uniform_policy,
    optimal_cv_weights,
    pi_params,
    sample_slates,
    slot_weight_vectors,
)


def uniform_det_pair(cards):
    spec = SlateSpec(cardinalities=tuple(cards))
    return spec, make_uniform_policy(spec), make_deterministic_policy(
        spec, Slate(actions=(0,) * len(cards))
    )


def dataset(spec, logging, slates, rewards):
    return LoggedDataset(
        spec=spec,
        slates=np.asarray(slates, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=np.int8),
        logging_policy=logging,
    )


def random_logging(spec, rng):
    dists = []
    for d in spec.cardinalities:
        v = rng.random(d) + 0.1
        v /= v.sum()
        v[-1] = 1.0 - float(v[:-1].sum())
        dists.append(v)
    return FactoredPolicy(spec=spec, slot_dists=tuple(dists))


class TestLoggedData:
    def test_sample_reward_validation(self):
        with pytest.raises(ValueError):
            LoggedSample(slate=Slate(actions=(0,)), reward=2)

    def test_dataset_rejects_out_of_range_slate(self):
        spec, mu, _ = uniform_det_pair((2, 2))
        with pytest.raises(ValueError):
            dataset(spec, mu, [[0, 2]], [0])

    def test_dataset_rejects_non_binary_reward(self):
        spec, mu, _ = uniform_det_pair((2, 2))
        with pytest.raises(ValueError):
            dataset(spec, mu, [[0, 0]], [3])

    def test_from_samples_round_trip(self):
        spec, mu, _ = uniform_det_pair((2, 3))
        samples = [
            LoggedSample(slate=Slate(actions=(0, 2)), reward=1),
            LoggedSample(slate=Slate(actions=(1, 0)), reward=0),
        ]
        ds = LoggedDataset.from_samples(spec, samples, mu)
        assert len(ds) == 2
        assert list(ds.samples) == samples


class TestEstimateIps:
    def test_single_matching_sample(self):
        spec, mu, pi = uniform_det_pair((2, 2))
        ds = dataset(spec, mu, [[0, 0]], [1])
        assert estimate_ips(ds, pi) == 4.0

    def test_single_missed_sample(self):
        spec, mu, pi = uniform_det_pair((2, 2))
        ds = dataset(spec, mu, [[1, 1]], [1])
        assert estimate_ips(ds, pi) == 0.0

    def test_on_policy_reduces_to_mean_reward(self):
        spec = SlateSpec(cardinalities=(3, 4))
        mu = random_logging(spec, np.random.default_rng(0))
        slates = sample_slates(mu, 500, np.random.default_rng(1))
        rewards = np.random.default_rng(2).integers(0, 2, size=500)
        ds = LoggedDataset(spec=spec, slates=slates, rewards=rewards, logging_policy=mu)
        assert estimate_ips(ds, mu) == float(np.mean(rewards))

    def test_empty_dataset_rejected(self):
        spec, mu, pi = uniform_det_pair((2, 2))
        ds = dataset(spec, mu, np.empty((0, 2), dtype=np.int64), [])
        with pytest.raises(ValueError):
            estimate_ips(ds, pi)


class TestEstimateAdditive:
    def test_pi_contribution_matching_slate(self):
        # lambda = 1 - K = -1; Y = [2, 2]; r = 1 -> -1 + 2 + 2 = 3.
        spec, mu, pi = uniform_det_pair((2, 2))
        ds = dataset(spec, mu, [[0, 0]], [1])
        assert estimate_additive(ds, pi, pi_params(2)) == 3.0

    def test_pi_contribution_missed_slate(self):
        spec, mu, pi = uniform_det_pair((2, 2))
        ds = dataset(spec, mu, [[1, 1]], [1])
        assert estimate_additive(ds, pi, pi_params(2)) == -1.0

    def test_zero_sum_weights_on_equal_slot_weights(self):
        spec, mu, pi = uniform_det_pair((2, 2))
        params = AdditiveEstimatorParams(
            constant=-1.0, g_weights=(1.0, 1.0), f_weights=(-0.25, 0.25)
        )
        ds = dataset(spec, mu, [[0, 0]], [0])
        assert estimate_additive(ds, pi, params) == 0.0

    def test_nonzero_f_sum_rejected_by_constructor(self):
        with pytest.raises(ValueError, match="sum to zero"):
            AdditiveEstimatorParams(constant=0.0, g_weights=(1.0, 1.0), f_weights=(0.1, 0.0))

    def test_mismatched_weight_lengths(self):
        spec, mu, pi = uniform_det_pair((2, 2))
        ds = dataset(spec, mu, [[0, 0]], [1])
        with pytest.raises(ValueError):
            estimate_additive(ds, pi, pi_params(3))


class TestEstimatePi:
    def test_single_slot_equals_ips(self):
        spec, mu, pi = uniform_det_pair((5,))
        slates = sample_slates(mu, 400, np.random.default_rng(3))
        rewards = np.random.default_rng(4).integers(0, 2, size=400)
        ds = LoggedDataset(spec=spec, slates=slates, rewards=rewards, logging_policy=mu)
        assert estimate_pi(ds, pi) == estimate_ips(ds, pi)

    def test_on_policy_reduces_to_mean_reward(self):
        spec = SlateSpec(cardinalities=(2, 6))
        mu = random_logging(spec, np.random.default_rng(5))
        slates = sample_slates(mu, 300, np.random.default_rng(6))
        rewards = np.random.default_rng(7).integers(0, 2, size=300)
        ds = LoggedDataset(spec=spec, slates=slates, rewards=rewards, logging_policy=mu)
        assert estimate_pi(ds, mu) == float(np.mean(rewards))

    def test_two_sample_hand_value(self):
        spec, mu, pi = uniform_det_pair((2, 2))
        ds = dataset(spec, mu, [[0, 0], [1, 1]], [1, 0])
        assert estimate_pi(ds, pi) == (3.0 + 0.0) / 2

    def test_matches_general_family_bit_for_bit(self):
        spec, mu, pi = uniform_det_pair((3, 7, 4))
        slates = sample_slates(mu, 5000, np.random.default_rng(8))
        rewards = np.random.default_rng(9).integers(0, 2, size=5000)
        ds = LoggedDataset(spec=spec, slates=slates, rewards=rewards, logging_policy=mu)
        assert estimate_pi(ds, pi) == estimate_additive(ds, pi, pi_params(3))


class TestOptimalCvWeights:
    def test_hand_evaluated_two_slots(self):
        divs = DivergenceSummary.from_alphas([1.0, 3.0])
        cv = optimal_cv_weights(divs, 0.5)
        assert cv.weights == (-0.25, 0.25)

    def test_equal_divergences_give_zero_weights(self):
        divs = DivergenceSummary.from_alphas([4.0, 4.0, 4.0])
        cv = optimal_cv_weights(divs, 0.3)
        assert cv.weights == (0.0, 0.0, 0.0)

    def test_exact_fraction_oracle_for_large_spread(self):
        # D = [3, 50, 800] under uniform logging and a deterministic target.
        alphas = [2, 49, 799]
        h = Fraction(3) / sum(Fraction(1, a) for a in alphas)
        expected = [Fraction(1, 4) * (1 - h / a) for a in alphas]
        divs = DivergenceSummary.from_alphas([float(a) for a in alphas])
        cv = optimal_cv_weights(divs, 0.25)
        for got, want in zip(cv.weights, expected):
            assert got == pytest.approx(float(want), abs=1e-15)
        assert abs(sum(cv.weights)) <= 1e-12

    def test_zero_sum_over_random_settings(self):
        rng = np.random.default_rng(10)
        for _ in range(300):
            k = int(rng.integers(1, 11))
            alphas = rng.uniform(1e-6, 1000.0, size=k)
            prior = float(rng.uniform(1e-6, 1.0 - 1e-6))
            cv = optimal_cv_weights(DivergenceSummary.from_alphas(alphas), prior)
            assert abs(sum(cv.weights)) <= 1e-12

    def test_degenerate_divergence_rejected(self):
        divs = DivergenceSummary.from_alphas([0.0, 3.0])
        with pytest.raises(DegenerateSlotError):
            optimal_cv_weights(divs, 0.25)

    def test_prior_mean_bounds(self):
        divs = DivergenceSummary.from_alphas([1.0, 2.0])
        with pytest.raises(ValueError):
            optimal_cv_weights(divs, 0.0)

    def test_quadratic_objective_minimal_at_solution(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            k = int(rng.integers(2, 8))
            alphas = rng.uniform(0.05, 50.0, size=k)
            prior = float(rng.uniform(0.05, 0.95))
            cv = optimal_cv_weights(DivergenceSummary.from_alphas(alphas), prior)
            w = np.asarray(cv.weights)

            def objective(weights):
                return np.sum(weights**2 * alphas, axis=-1) - 2 * prior * np.sum(
                    weights * alphas, axis=-1
                )

            eps = rng.normal(scale=0.1, size=(200, k))
            eps -= eps.mean(axis=1, keepdims=True)  # stay on the zero-sum plane
            assert np.all(objective(w) <= objective(w + eps) + 1e-12)


class TestEstimatePiPlusPlus:
    def test_equal_cardinalities_match_pi_exactly(self):
        spec, mu, pi = uniform_det_pair((6, 6, 6))
        slates = sample_slates(mu, 4000, np.random.default_rng(12))
        rewards = np.random.default_rng(13).integers(0, 2, size=4000)
        ds = LoggedDataset(spec=spec, slates=slates, rewards=rewards, logging_policy=mu)
        assert estimate_pi_plus_plus(ds, pi, 0.5) == estimate_pi(ds, pi)

    def test_single_sample_hand_value(self):
        # Y = [2, 4]: PI part -1 + 2 + 4 = 5; control variate
        # -0.25 * 2 + 0.25 * 4 = 0.5; total 4.5.
        spec, mu, pi = uniform_det_pair((2, 4))
        ds = dataset(spec, mu, [[0, 0]], [1])
        assert estimate_pi_plus_plus(ds, pi, 0.5) == 4.5

    def test_on_policy_degenerate(self):
        spec = SlateSpec(cardinalities=(3, 3))
        mu = make_uniform_policy(spec)
        ds = dataset(spec, mu, [[0, 0]], [1])
        with pytest.raises(DegenerateSlotError):
            estimate_pi_plus_plus(ds, mu, 0.25)

    def test_equals_pi_minus_mean_control_variate(self):
        spec, mu, pi = uniform_det_pair((2, 5, 9))
        slates = sample_slates(mu, 3000, np.random.default_rng(14))
        rewards = np.random.default_rng(15).integers(0, 2, size=3000)
        ds = LoggedDataset(spec=spec, slates=slates, rewards=rewards, logging_policy=mu)
        prior = 0.3
        cv = optimal_cv_weights(compute_divergences(pi, mu), prior)
        tables = slot_weight_vectors(pi, mu)
        f_values = np.zeros(len(ds))
        for k, w in enumerate(cv.weights):
            f_values += w * tables[k][ds.slates[:, k]]
        expected = estimate_pi(ds, pi) - float(np.mean(f_values))
        assert estimate_pi_plus_plus(ds, pi, prior) == pytest.approx(expected, abs=1e-12)


class TestClosedFormMoments:
    def test_lemma_style_moments_match_monte_carlo(self):
        # E[F^2] = sum w_k^2 alpha_k and E[G F] = sum w_k alpha_k for
        # zero-sum weights under a factored logging policy.
        rng = np.random.default_rng(16)
        spec = SlateSpec(cardinalities=(3, 6))
        mu = random_logging(spec, rng)
        pi = make_deterministic_policy(spec, Slate(actions=(0, 0)))
        divs = compute_divergences(pi, mu)
        alphas = np.asarray(divs.alphas)
        tables = slot_weight_vectors(pi, mu)
        w = rng.normal(size=2)
        w -= w.mean()
        n = 200_000
        draws = sample_slates(mu, n, np.random.default_rng(17))
        ys = np.stack([tables[k][draws[:, k]] for k in range(2)], axis=1)
        f = ys @ w
        g = -1.0 + ys.sum(axis=1)
        f2 = f**2
        gf = g * f
        se_f2 = float(np.std(f2)) / np.sqrt(n)
        se_gf = float(np.std(gf)) / np.sqrt(n)
        assert abs(float(np.mean(f2)) - float(np.sum(w**2 * alphas))) <= 4 * se_f2
        assert abs(float(np.mean(gf)) - float(np.sum(w * alphas))) <= 4 * se_gf


class TestPartitionMerge:
    def test_partial_folds_merge_to_full_estimate(self):
        spec, mu, pi = uniform_det_pair((2, 4))
        slates = sample_slates(mu, 2000, np.random.default_rng(18))
        rewards = np.random.default_rng(19).integers(0, 2, size=2000)
        full = LoggedDataset(spec=spec, slates=slates, rewards=rewards, logging_policy=mu)
        left = LoggedDataset(
            spec=spec, slates=slates[:700], rewards=rewards[:700], logging_policy=mu
        )
        right = LoggedDataset(
            spec=spec, slates=slates[700:], rewards=rewards[700:], logging_policy=mu
        )
        merged = (estimate_pi(left, pi) * 700 + estimate_pi(right, pi) * 1300) / 2000
        assert estimate_pi(full, pi) == pytest.approx(merged, abs=1e-12)
