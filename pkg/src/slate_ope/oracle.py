"""Enumeration-based variance/bias oracle and closed-form risk predictions.

The enumeration oracle is for desk-scale verification; production-size
predictions go through the closed forms, which only need the slot divergences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import AdditiveEstimatorParams
from .rewards import RewardModel, enumerate_all_slates, slate_rates, true_policy_value
from .slates import DivergenceSummary, FactoredPolicy, slot_weight_vectors


@dataclass(frozen=True)
class RiskPrediction:
    """Predicted per-sample risk improvement of PI++ over PI.

    Positive means PI++ has the lower risk. With a correctly specified prior
    mean the value is ``p_bar^2 * K * (M - H)`` and can never be negative.
    """

    improvement_per_sample: float
    divergences: DivergenceSummary
    true_prior_mean: float
    assumed_prior_mean: float


def predicted_improvement(
    divs: DivergenceSummary, true_prior_mean: float, assumed_prior_mean: float
) -> RiskPrediction:
    """Closed-form risk improvement, allowing a misspecified prior mean.

    The improvement is ``-p' (p' - 2 p_bar) K (M - H)``: zero at p' = 2 p_bar,
    maximal at p' = p_bar, and negative beyond twice the true prior mean.
    """
    for name, value in (("true", true_prior_mean), ("assumed", assumed_prior_mean)):
        if not 0.0 < value < 1.0:
            raise ValueError(f"{name} prior mean must lie in (0, 1), got {value}")
    gap = divs.mean_gap()  # raises DegenerateSlotError on any zero divergence
    improvement = (
        -assumed_prior_mean
        * (assumed_prior_mean - 2.0 * true_prior_mean)
        * divs.slot_count
        * gap
    )
    return RiskPrediction(
        improvement_per_sample=improvement,
        divergences=divs,
        true_prior_mean=true_prior_mean,
        assumed_prior_mean=assumed_prior_mean,
    )


def _enumerated_terms(model, logging, target, params):
    """Per-slate logging probability, rate, and the g/f values, fully enumerated."""
    if model.spec.cardinalities != logging.spec.cardinalities:
        raise ValueError("model and logging policy must share a slate spec")
    if params.slot_count != logging.spec.slot_count:
        raise ValueError("estimator params do not match the slate spec")
    slates = enumerate_all_slates(logging.spec)
    mu = np.ones(slates.shape[0])
    for k, dist in enumerate(logging.slot_dists):
        mu *= dist[slates[:, k]]
    tables = slot_weight_vectors(target, logging)
    g = np.full(slates.shape[0], params.constant)
    f = np.zeros(slates.shape[0])
    for k, table in enumerate(tables):
        y = table[slates[:, k]]
        if params.g_weights[k] != 0.0:
            g += params.g_weights[k] * y
        if params.f_weights[k] != 0.0:
            f += params.f_weights[k] * y
    rates = slate_rates(model, slates)
    return mu, rates, g, f


def exact_variance(
    model: RewardModel,
    logging: FactoredPolicy,
    target: FactoredPolicy,
    params: AdditiveEstimatorParams,
) -> float:
    """Exact per-sample variance of the additive estimator, by enumeration.

    Returns the variance of a single-sample contribution; the variance of the
    estimator on a dataset of n samples is this value divided by n. Requires
    the control-variate weights to sum to zero (their mean is then exactly
    zero, which the decomposition below relies on); the params type already
    enforces that.
    """
    mu, rates, g, f = _enumerated_terms(model, logging, target, params)
    pg = mu * rates * g
    e_pg2 = float(np.dot(pg, g))
    e_pg = float(np.sum(pg))
    e_f2 = float(np.dot(mu, f * f))
    e_pgf = float(np.dot(pg, f))
    return e_pg2 - e_pg**2 + e_f2 - 2.0 * e_pgf


def exact_bias(
    model: RewardModel,
    logging: FactoredPolicy,
    target: FactoredPolicy,
    params: AdditiveEstimatorParams,
) -> float:
    """Exact bias of the additive estimator against the true policy value."""
    mu, rates, g, f = _enumerated_terms(model, logging, target, params)
    expected = float(np.dot(mu, rates * g - f))
    return expected - true_policy_value(model, target)
