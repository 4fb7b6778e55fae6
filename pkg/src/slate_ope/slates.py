"""Slate geometry, factored policies, sampling, and slot-level divergences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AbsoluteContinuityError, DegenerateSlotError, InvalidSlateError

# Tolerance for accepting a probability vector as normalized. Vectors outside
# this band are rejected outright; we never renormalize silently.
PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SlateSpec:
    """Slate geometry: one entry per slot giving the number of actions there."""

    cardinalities: tuple[int, ...]

    def __post_init__(self):
        cards = tuple(int(d) for d in self.cardinalities)
        object.__setattr__(self, "cardinalities", cards)
        if len(cards) < 1:
            raise ValueError("a slate spec needs at least one slot")
        for k, d in enumerate(cards):
            if d < 1:
                raise ValueError(f"slot {k} must offer at least one action, got {d}")

    @property
    def slot_count(self) -> int:
        return len(self.cardinalities)

    @property
    def total_slates(self) -> int:
        # Exact python int; callers enforce their own enumeration caps.
        return math.prod(self.cardinalities)

    def validate_slate(self, slate: Slate) -> None:
        if len(slate.actions) != self.slot_count:
            raise InvalidSlateError(
                f"slate has {len(slate.actions)} actions, spec has {self.slot_count} slots"
            )
        for k, (a, d) in enumerate(zip(slate.actions, self.cardinalities)):
            if not 0 <= a < d:
                raise InvalidSlateError(f"action {a} out of range [0, {d}) in slot {k}")


@dataclass(frozen=True)
class Slate:
    """One compound action: an action index per slot."""

    actions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))


@dataclass(frozen=True, eq=False)
class FactoredPolicy:
    """A policy that factorizes over slots: one categorical per slot.

    ``slot_dists[k]`` is a probability vector of length ``spec.cardinalities[k]``.
    Instances are immutable after construction and safe to share across threads.
    """

    spec: SlateSpec
    slot_dists: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.slot_dists) != self.spec.slot_count:
            raise ValueError(
                f"policy has {len(self.slot_dists)} slot distributions, "
                f"spec has {self.spec.slot_count} slots"
            )
        frozen = []
        for k, dist in enumerate(self.slot_dists):
            vec = np.asarray(dist, dtype=np.float64).copy()
            if vec.ndim != 1 or vec.shape[0] != self.spec.cardinalities[k]:
                raise ValueError(
                    f"slot {k} distribution has length {vec.shape[0] if vec.ndim == 1 else vec.shape}, "
                    f"expected {self.spec.cardinalities[k]}"
                )
            if np.any(vec < 0.0):
                raise ValueError(f"slot {k} distribution has negative entries")
            total = float(vec.sum())
            if abs(total - 1.0) > PROB_SUM_TOL:
                raise ValueError(
                    f"slot {k} distribution sums to {total!r}; refusing to renormalize"
                )
            vec.flags.writeable = False
            frozen.append(vec)
        object.__setattr__(self, "slot_dists", tuple(frozen))


@dataclass(frozen=True)
class DivergenceSummary:
    """Per-slot chi-square divergences between a target and a logging policy.

    ``harmonic_mean`` is None whenever any divergence is zero; downstream
    consumers that divide by it must treat that as an error, not as zero.
    """

    alphas: tuple[float, ...]
    arithmetic_mean: float
    harmonic_mean: float | None

    @classmethod
    def from_alphas(cls, alphas) -> "DivergenceSummary":
        vals = tuple(float(a) for a in alphas)
        if len(vals) < 1:
            raise ValueError("need at least one slot divergence")
        if any(a < 0.0 for a in vals):
            raise ValueError(f"divergences must be non-negative, got {vals}")
        arithmetic = float(np.mean(vals))
        if any(a == 0.0 for a in vals):
            harmonic = None
        elif all(a == vals[0] for a in vals):
            # Identical values: the harmonic mean is that value, exactly.
            harmonic = vals[0]
            arithmetic = vals[0]
        else:
            harmonic = len(vals) / float(np.sum(1.0 / np.asarray(vals)))
        return cls(alphas=vals, arithmetic_mean=arithmetic, harmonic_mean=harmonic)

    @property
    def slot_count(self) -> int:
        return len(self.alphas)

    def mean_gap(self) -> float:
        """Arithmetic-minus-harmonic gap; raises if the harmonic mean is undefined."""
        if self.harmonic_mean is None:
            raise DegenerateSlotError(
                "harmonic mean undefined: at least one slot divergence is zero"
            )
        return self.arithmetic_mean - self.harmonic_mean


def make_uniform_policy(spec: SlateSpec) -> FactoredPolicy:
    """Uniform categorical in every slot."""
    dists = tuple(np.full(d, 1.0 / d) for d in spec.cardinalities)
    return FactoredPolicy(spec=spec, slot_dists=dists)


def make_deterministic_policy(spec: SlateSpec, slate: Slate) -> FactoredPolicy:
    """Point mass on one slate: each slot distribution is one-hot."""
    spec.validate_slate(slate)
    dists = []
    for d, a in zip(spec.cardinalities, slate.actions):
        vec = np.zeros(d)
        vec[a] = 1.0
        dists.append(vec)
    return FactoredPolicy(spec=spec, slot_dists=tuple(dists))


def _is_uniform(dist: np.ndarray) -> bool:
    return bool(np.all(dist == 1.0 / dist.shape[0]))


def sample_slot_columns(
    policy: FactoredPolicy, n: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Draw ``n`` slates as one contiguous index column per slot.

    Slots are sampled independently, in slot order, so the stream consumption
    is deterministic for a given rng. The column layout keeps the hot
    simulation path free of strided access.
    """
    if n < 0:
        raise ValueError(f"sample count must be non-negative, got {n}")
    columns = []
    for dist in policy.slot_dists:
        d = dist.shape[0]
        if _is_uniform(dist):
            columns.append(rng.integers(0, d, size=n))
        else:
            cum = np.cumsum(dist)
            cum[-1] = 1.0  # guard the top edge against rounding
            columns.append(np.searchsorted(cum, rng.random(n), side="right"))
    return columns


def sample_slates(policy: FactoredPolicy, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` slates i.i.d. from a factored policy, as an ``(n, K)`` array."""
    columns = sample_slot_columns(policy, n, rng)
    if n == 0:
        return np.empty((0, policy.spec.slot_count), dtype=np.int64)
    return np.stack(columns, axis=1).astype(np.int64, copy=False)


def sample_slate(policy: FactoredPolicy, rng: np.random.Generator) -> Slate:
    """Draw a single slate from a factored policy."""
    return Slate(actions=tuple(int(a) for a in sample_slates(policy, 1, rng)[0]))


def slate_probability(policy: FactoredPolicy, slate: Slate) -> float:
    """Probability of a slate: product of its per-slot action probabilities."""
    policy.spec.validate_slate(slate)
    p = 1.0
    for dist, a in zip(policy.slot_dists, slate.actions):
        p *= float(dist[a])
    return p


def slot_weight_vectors(
    target: FactoredPolicy, logging: FactoredPolicy
) -> tuple[np.ndarray, ...]:
    """Per-slot importance-weight lookup tables, target over logging.

    Entry ``a`` of table ``k`` is ``target_k(a) / logging_k(a)``, with the
    convention that actions carrying zero mass under both policies weigh 0.
    Raises AbsoluteContinuityError if the target puts mass on an action the
    logging policy never plays.

    Two fast paths keep closed-form identities exact in binary floating
    point: bitwise-identical slot distributions yield unit weights, and a
    uniform logging slot divides by multiplying with the cardinality (the
    stored ``1/d`` is rounded, so a literal division would drift off ``d``).
    """
    if target.spec.cardinalities != logging.spec.cardinalities:
        raise ValueError("target and logging policies must share a slate spec")
    tables = []
    for k, (pi, mu) in enumerate(zip(target.slot_dists, logging.slot_dists)):
        uncovered = (pi > 0.0) & (mu == 0.0)
        if np.any(uncovered):
            a = int(np.flatnonzero(uncovered)[0])
            raise AbsoluteContinuityError(
                f"target plays action {a} in slot {k} but the logging policy never does"
            )
        if np.array_equal(pi, mu):
            # Unit weight on the support; zero-mass actions still weigh 0.
            ratio = (pi > 0.0).astype(np.float64)
        elif _is_uniform(mu):
            ratio = pi * mu.shape[0]
        else:
            ratio = np.divide(pi, mu, out=np.zeros_like(pi), where=mu > 0.0)
        ratio.flags.writeable = False
        tables.append(ratio)
    return tuple(tables)


def slot_importance_weight(
    target: FactoredPolicy, logging: FactoredPolicy, slate: Slate, slot: int
) -> float:
    """Realized importance weight of one slot of a slate."""
    target.spec.validate_slate(slate)
    if not 0 <= slot < target.spec.slot_count:
        raise ValueError(f"slot {slot} out of range for {target.spec.slot_count} slots")
    tables = slot_weight_vectors(target, logging)
    return float(tables[slot][slate.actions[slot]])


def compute_divergences(
    target: FactoredPolicy, logging: FactoredPolicy
) -> DivergenceSummary:
    """Slot-level chi-square divergences of the target from the logging policy.

    Each slot's divergence is the variance of its importance weight under the
    logging policy, computed by exact summation over that slot's actions
    (slot cardinalities are always small enough to enumerate). Tiny negative
    rounding residues are clamped to zero.
    """
    tables = slot_weight_vectors(target, logging)
    alphas = []
    for pi, mu, ratio in zip(target.slot_dists, logging.slot_dists, tables):
        if np.array_equal(pi, mu):
            alphas.append(0.0)
            continue
        alphas.append(max(0.0, float(np.dot(pi, ratio)) - 1.0))
    return DivergenceSummary.from_alphas(alphas)
