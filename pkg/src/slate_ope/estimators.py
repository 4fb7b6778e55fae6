"""Slate off-policy estimators: IPS, the additive family, PI, and PI++.

Estimation is a single pass over the samples in fixed-size chunks, so memory
stays constant in the dataset size and partial sums merge associatively if a
dataset is ever partitioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DegenerateSlotError
from .slates import (
    DivergenceSummary,
    FactoredPolicy,
    Slate,
    SlateSpec,
    compute_divergences,
    slot_weight_vectors,
)

# Sum of control-variate weights must vanish for the estimator to stay
# unbiased; these are the acceptance bands for the two construction routes.
F_WEIGHT_SUM_TOL = 1e-9
CV_WEIGHT_SUM_TOL = 1e-12

_FOLD_CHUNK = 1 << 16


@dataclass(frozen=True)
class LoggedSample:
    """One logged interaction: the slate shown and its binary reward."""

    slate: Slate
    reward: int

    def __post_init__(self):
        if self.reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.reward}")


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """Slates and rewards drawn under a known factored logging policy.

    ``slates`` is an (n, K) integer array, ``rewards`` an (n,) array of 0/1.
    """

    spec: SlateSpec
    slates: np.ndarray
    rewards: np.ndarray
    logging_policy: FactoredPolicy

    def __post_init__(self):
        slates = np.ascontiguousarray(self.slates, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=np.int8)
        if slates.ndim != 2 or slates.shape[1] != self.spec.slot_count:
            raise ValueError(f"slates must have shape (n, {self.spec.slot_count})")
        if rewards.shape != (slates.shape[0],):
            raise ValueError("rewards must be one per slate")
        cards = np.asarray(self.spec.cardinalities, dtype=np.int64)
        if slates.size and (slates.min() < 0 or np.any(slates >= cards[None, :])):
            raise ValueError("slate actions out of range for the spec")
        if rewards.size and not np.all((rewards == 0) | (rewards == 1)):
            raise ValueError("rewards must be 0 or 1")
        if self.logging_policy.spec.cardinalities != self.spec.cardinalities:
            raise ValueError("logging policy does not match the dataset spec")
        slates.flags.writeable = False
        rewards.flags.writeable = False
        object.__setattr__(self, "slates", slates)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self) -> int:
        return self.slates.shape[0]

    @property
    def samples(self) -> Iterator[LoggedSample]:
        for row, r in zip(self.slates, self.rewards):
            yield LoggedSample(slate=Slate(actions=tuple(int(a) for a in row)), reward=int(r))

    @classmethod
    def from_samples(cls, spec, samples, logging_policy) -> "LoggedDataset":
        samples = list(samples)
        slates = np.asarray([s.slate.actions for s in samples], dtype=np.int64).reshape(
            len(samples), spec.slot_count
        )
        rewards = np.asarray([s.reward for s in samples], dtype=np.int8)
        return cls(spec=spec, slates=slates, rewards=rewards, logging_policy=logging_policy)


@dataclass(frozen=True)
class AdditiveEstimatorParams:
    """Free parameters of the additive estimator family.

    Per sample the estimator contributes ``r * (constant + sum_k g_weights[k] * Y_k)
    - sum_k f_weights[k] * Y_k`` where Y_k is the slot importance weight. The
    f-part is a control variate; its weights must sum to zero so it adds no
    bias, and the constructor rejects anything else.
    """

    constant: float
    g_weights: tuple[float, ...]
    f_weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "g_weights", tuple(float(w) for w in self.g_weights))
        object.__setattr__(self, "f_weights", tuple(float(w) for w in self.f_weights))
        if len(self.g_weights) != len(self.f_weights):
            raise ValueError("g_weights and f_weights must have equal length")
        total = sum(self.f_weights)
        if abs(total) > F_WEIGHT_SUM_TOL:
            raise ValueError(
                f"f_weights must sum to zero (got {total!r}); nonzero sums add bias"
            )

    @property
    def slot_count(self) -> int:
        return len(self.g_weights)


def pi_params(slot_count: int) -> AdditiveEstimatorParams:
    """The PI point of the family: constant 1-K, unit g weights, no control variate."""
    return AdditiveEstimatorParams(
        constant=1.0 - slot_count,
        g_weights=(1.0,) * slot_count,
        f_weights=(0.0,) * slot_count,
    )


@dataclass(frozen=True)
class ControlVariateWeights:
    """Risk-optimal control-variate weights with their provenance."""

    weights: tuple[float, ...]
    prior_mean: float
    divergences: DivergenceSummary

    def __post_init__(self):
        total = sum(self.weights)
        if abs(total) > CV_WEIGHT_SUM_TOL:
            raise ValueError(f"control-variate weights must sum to zero, got {total!r}")


def optimal_cv_weights(
    divs: DivergenceSummary, assumed_prior_mean: float
) -> ControlVariateWeights:
    """Weights minimizing the prior-averaged variance subject to zero bias.

    The closed form is ``w_k = prior_mean * (1 - H / alpha_k)`` with H the
    harmonic mean of the slot divergences; the weights sum to zero by
    construction. Any zero divergence makes the problem singular.
    """
    if not 0.0 < assumed_prior_mean < 1.0:
        raise ValueError(f"assumed prior mean must lie in (0, 1), got {assumed_prior_mean}")
    if divs.harmonic_mean is None or any(a <= 0.0 for a in divs.alphas):
        raise DegenerateSlotError(
            "control-variate weights need every slot divergence positive; "
            "drop degenerate slots from the spec"
        )
    h = divs.harmonic_mean
    weights = tuple(assumed_prior_mean * (1.0 - h / a) for a in divs.alphas)
    return ControlVariateWeights(
        weights=weights, prior_mean=assumed_prior_mean, divergences=divs
    )


def _check_estimable(data: LoggedDataset, target: FactoredPolicy) -> None:
    if len(data) == 0:
        raise ValueError("cannot estimate from an empty dataset")
    if target.spec.cardinalities != data.spec.cardinalities:
        raise ValueError("target policy does not match the dataset spec")


def estimate_ips(data: LoggedDataset, target: FactoredPolicy) -> float:
    """Inverse propensity scoring: rewards weighted by the full slate ratio."""
    _check_estimable(data, target)
    tables = slot_weight_vectors(target, data.logging_policy)
    total = 0.0
    n = len(data)
    for start in range(0, n, _FOLD_CHUNK):
        block = data.slates[start : start + _FOLD_CHUNK]
        ys = [tables[k][block[:, k]] for k in range(len(tables))]
        rewards = data.rewards[start : start + _FOLD_CHUNK].astype(np.float64)
        total += ips_block_sum(ys, rewards)
    return total / n


def ips_block_sum(ys, rewards: np.ndarray) -> float:
    """Sum of reward times the product of slot weights over one block."""
    w = ys[0].copy()
    for k in range(1, len(ys)):
        w *= ys[k]
    return float(np.dot(rewards, w))


def estimate_additive(
    data: LoggedDataset, target: FactoredPolicy, params: AdditiveEstimatorParams
) -> float:
    """Evaluate one member of the additive estimator family on a dataset."""
    _check_estimable(data, target)
    if params.slot_count != data.spec.slot_count:
        raise ValueError(
            f"params cover {params.slot_count} slots, dataset has {data.spec.slot_count}"
        )
    tables = slot_weight_vectors(target, data.logging_policy)
    sum_rg, sum_f = fold_additive_sums(data.slates, data.rewards, tables, params)
    return (sum_rg - sum_f) / len(data)


def fold_additive_sums(
    slates: np.ndarray,
    rewards: np.ndarray,
    tables,
    params: AdditiveEstimatorParams,
) -> tuple[float, float]:
    """Chunked accumulation of sum(r * g) and sum(f); merges associatively."""
    sum_rg = 0.0
    sum_f = 0.0
    n = slates.shape[0]
    for start in range(0, n, _FOLD_CHUNK):
        block = slates[start : start + _FOLD_CHUNK]
        ys = [tables[k][block[:, k]] for k in range(len(tables))]
        r = rewards[start : start + _FOLD_CHUNK].astype(np.float64)
        rg, f = additive_block_sums(ys, r, params)
        sum_rg += rg
        sum_f += f
    return sum_rg, sum_f


def additive_block_sums(ys, rewards: np.ndarray, params: AdditiveEstimatorParams):
    """sum(r * g) and sum(f) over one block of pre-gathered slot weights."""
    use_f = any(w != 0.0 for w in params.f_weights)
    g = np.full(rewards.shape[0], params.constant)
    f = np.zeros(rewards.shape[0]) if use_f else None
    for k, y in enumerate(ys):
        gw = params.g_weights[k]
        if gw == 1.0:
            g += y
        elif gw != 0.0:
            g += gw * y
        if use_f and params.f_weights[k] != 0.0:
            f += params.f_weights[k] * y
    sum_rg = float(np.dot(rewards, g))
    sum_f = float(f.sum()) if use_f else 0.0
    return sum_rg, sum_f


def estimate_pi(data: LoggedDataset, target: FactoredPolicy) -> float:
    """The pseudoinverse estimator under a factored logging policy."""
    return estimate_additive(data, target, pi_params(data.spec.slot_count))


def estimate_pi_plus_plus(
    data: LoggedDataset, target: FactoredPolicy, assumed_prior_mean: float
) -> float:
    """PI minus the risk-optimal zero-mean control variate.

    Requires every slot divergence between target and logging policy to be
    positive; the assumed prior mean must be supplied explicitly because the
    achievable risk depends on how well it matches the true one.
    """
    _check_estimable(data, target)
    divs = compute_divergences(target, data.logging_policy)
    cv = optimal_cv_weights(divs, assumed_prior_mean)
    params = AdditiveEstimatorParams(
        constant=1.0 - data.spec.slot_count,
        g_weights=(1.0,) * data.spec.slot_count,
        f_weights=cv.weights,
    )
    return estimate_additive(data, target, params)
