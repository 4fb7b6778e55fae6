"""Additive Bernoulli-rate models over slates, model draws, and true policy values."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import CapacityError
from .slates import FactoredPolicy, Slate, SlateSpec

# Brute-force paths refuse to enumerate more slates than this.
ENUMERATION_CAP = 10**6

ELEMENTWISE = "elementwise"
PAIRWISE = "pairwise"


class ClampTally:
    """Running count of rate evaluations that landed outside [0, 1].

    Models are immutable, but they carry one of these so a harness can warn
    when clamping starts to distort the prior mean of the rates.
    """

    __slots__ = ("clamped", "evaluated")

    def __init__(self):
        self.clamped = 0
        self.evaluated = 0

    def add(self, clamped: int, evaluated: int) -> None:
        self.clamped += int(clamped)
        self.evaluated += int(evaluated)

    @property
    def fraction(self) -> float:
        return self.clamped / self.evaluated if self.evaluated else 0.0


@dataclass(frozen=True)
class ModelDrawConfig:
    """Distribution parameters for drawing a random rate model.

    Each additive term is Gaussian with mean ``prior_mean / n_terms`` and
    standard deviation ``relative_sd`` times that mean, so slate-level rates
    average ``prior_mean`` for both model kinds.
    """

    prior_mean: float
    relative_sd: float = 0.1
    model_kind: str = ELEMENTWISE

    def __post_init__(self):
        if not 0.0 < self.prior_mean < 1.0:
            raise ValueError(f"prior_mean must lie in (0, 1), got {self.prior_mean}")
        if self.relative_sd < 0.0:
            raise ValueError(f"relative_sd must be non-negative, got {self.relative_sd}")
        if self.model_kind not in (ELEMENTWISE, PAIRWISE):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")


@dataclass(frozen=True, eq=False)
class ElementwiseAdditiveModel:
    """Bernoulli rates as a sum of one term per slot: p(a) = sum_k phi_k(a_k)."""

    spec: SlateSpec
    phis: tuple[np.ndarray, ...]
    clamp_tally: ClampTally = field(default_factory=ClampTally, repr=False, compare=False)

    def __post_init__(self):
        if len(self.phis) != self.spec.slot_count:
            raise ValueError("one phi vector per slot required")
        frozen = []
        for k, phi in enumerate(self.phis):
            vec = np.asarray(phi, dtype=np.float64).copy()
            if vec.ndim != 1 or vec.shape[0] != self.spec.cardinalities[k]:
                raise ValueError(f"phi vector {k} does not match slot cardinality")
            vec.flags.writeable = False
            frozen.append(vec)
        object.__setattr__(self, "phis", tuple(frozen))


@dataclass(frozen=True, eq=False)
class PairwiseAdditiveModel:
    """Bernoulli rates as a sum over slot pairs: p(a) = sum_{k<j} phi_kj(a_k, a_j).

    ``phi_pairs`` holds one matrix per slot pair in lexicographic (k, j) order.
    """

    spec: SlateSpec
    phi_pairs: tuple[np.ndarray, ...]
    clamp_tally: ClampTally = field(default_factory=ClampTally, repr=False, compare=False)

    def __post_init__(self):
        pairs = list(combinations(range(self.spec.slot_count), 2))
        if not pairs:
            raise ValueError("pairwise models need at least two slots")
        if len(self.phi_pairs) != len(pairs):
            raise ValueError(f"expected {len(pairs)} pair matrices, got {len(self.phi_pairs)}")
        frozen = []
        for (k, j), phi in zip(pairs, self.phi_pairs):
            mat = np.asarray(phi, dtype=np.float64).copy()
            want = (self.spec.cardinalities[k], self.spec.cardinalities[j])
            if mat.shape != want:
                raise ValueError(f"pair matrix for slots ({k}, {j}) has shape {mat.shape}, expected {want}")
            mat.flags.writeable = False
            frozen.append(mat)
        object.__setattr__(self, "phi_pairs", tuple(frozen))

    def pairs(self):
        return zip(combinations(range(self.spec.slot_count), 2), self.phi_pairs)


RewardModel = ElementwiseAdditiveModel | PairwiseAdditiveModel


def draw_elementwise_model(
    spec: SlateSpec, cfg: ModelDrawConfig, rng: np.random.Generator
) -> ElementwiseAdditiveModel:
    """Draw per-slot phi vectors with i.i.d. Gaussian entries."""
    if cfg.model_kind != ELEMENTWISE:
        raise ValueError(f"config is for {cfg.model_kind!r}, not {ELEMENTWISE!r}")
    k_slots = spec.slot_count
    mean = cfg.prior_mean / k_slots
    sd = cfg.relative_sd * mean
    phis = tuple(rng.normal(mean, sd, size=d) for d in spec.cardinalities)
    return ElementwiseAdditiveModel(spec=spec, phis=phis)


def draw_pairwise_model(
    spec: SlateSpec, cfg: ModelDrawConfig, rng: np.random.Generator
) -> PairwiseAdditiveModel:
    """Draw per-pair phi matrices with i.i.d. Gaussian entries.

    The per-term mean is the prior mean divided by the number of slot pairs,
    so slate rates still average the prior mean.
    """
    if cfg.model_kind != PAIRWISE:
        raise ValueError(f"config is for {cfg.model_kind!r}, not {PAIRWISE!r}")
    k_slots = spec.slot_count
    if k_slots < 2:
        raise ValueError("pairwise models need at least two slots")
    n_pairs = k_slots * (k_slots - 1) // 2
    mean = cfg.prior_mean / n_pairs
    sd = cfg.relative_sd * mean
    phi_pairs = tuple(
        rng.normal(mean, sd, size=(spec.cardinalities[k], spec.cardinalities[j]))
        for k, j in combinations(range(k_slots), 2)
    )
    return PairwiseAdditiveModel(spec=spec, phi_pairs=phi_pairs)


def _raw_rates_from_columns(model: RewardModel, columns) -> np.ndarray:
    """Unclamped additive sums for slates given as per-slot index columns."""
    if isinstance(model, ElementwiseAdditiveModel):
        raw = model.phis[0][columns[0]].copy()
        for k in range(1, model.spec.slot_count):
            raw += model.phis[k][columns[k]]
        return raw
    raw = np.zeros(columns[0].shape[0])
    for (k, j), phi in model.pairs():
        raw += phi[columns[k], columns[j]]
    return raw


def _clamp(model: RewardModel, raw: np.ndarray) -> np.ndarray:
    out_of_range = int(np.count_nonzero((raw < 0.0) | (raw > 1.0)))
    model.clamp_tally.add(out_of_range, raw.shape[0])
    return np.clip(raw, 0.0, 1.0)


def slate_rates_from_columns(model: RewardModel, columns) -> np.ndarray:
    """Clamped Bernoulli rates for slates given as per-slot index columns."""
    return _clamp(model, _raw_rates_from_columns(model, columns))


def slate_rates(model: RewardModel, slates: np.ndarray) -> np.ndarray:
    """Clamped Bernoulli rates for an (n, K) array of slates."""
    columns = [slates[:, k] for k in range(model.spec.slot_count)]
    return slate_rates_from_columns(model, columns)


def bernoulli_rate(model: RewardModel, slate: Slate) -> float:
    """Rate of one slate: the additive sum, clamped into [0, 1]."""
    model.spec.validate_slate(slate)
    arr = np.asarray([slate.actions], dtype=np.int64)
    return float(slate_rates(model, arr)[0])


def enumerate_all_slates(spec: SlateSpec) -> np.ndarray:
    """All slates of a spec as an (n, K) array; refuses overly large specs."""
    total = spec.total_slates
    if total > ENUMERATION_CAP:
        raise CapacityError(
            f"spec has {total} slates, above the enumeration cap of {ENUMERATION_CAP}"
        )
    grid = np.indices(spec.cardinalities)
    return grid.reshape(spec.slot_count, total).T.astype(np.int64, copy=False)


def enumerate_policy_value(model: RewardModel, target: FactoredPolicy) -> float:
    """Brute-force E_target[rate] by summing over every slate."""
    slates = enumerate_all_slates(target.spec)
    probs = np.ones(slates.shape[0])
    for k, dist in enumerate(target.slot_dists):
        probs *= dist[slates[:, k]]
    return float(np.dot(probs, slate_rates(model, slates)))


def _is_deterministic(policy: FactoredPolicy) -> Slate | None:
    actions = []
    for dist in policy.slot_dists:
        hot = np.flatnonzero(dist == 1.0)
        if hot.shape[0] != 1 or np.count_nonzero(dist) != 1:
            return None
        actions.append(int(hot[0]))
    return Slate(actions=tuple(actions))


def true_policy_value(model: RewardModel, target: FactoredPolicy) -> float:
    """Exact expected reward of the target policy under the model.

    Deterministic targets read the rate of their slate directly. General
    targets are enumerated exactly while the slate count stays under the
    cap; above it, the additive structure is exploited instead (exact as
    long as no slate in the target's support clamps).
    """
    if model.spec.cardinalities != target.spec.cardinalities:
        raise ValueError("model and policy must share a slate spec")
    point = _is_deterministic(target)
    if point is not None:
        return bernoulli_rate(model, point)
    if target.spec.total_slates <= ENUMERATION_CAP:
        return enumerate_policy_value(model, target)
    if isinstance(model, ElementwiseAdditiveModel):
        return float(sum(np.dot(dist, phi) for dist, phi in zip(target.slot_dists, model.phis)))
    total = 0.0
    for (k, j), phi in model.pairs():
        total += float(target.slot_dists[k] @ phi @ target.slot_dists[j])
    return total


def model_to_dict(model: RewardModel) -> dict:
    """Plain-dict form of a model, suitable for JSON round-tripping."""
    if isinstance(model, ElementwiseAdditiveModel):
        return {
            "kind": ELEMENTWISE,
            "cardinalities": list(model.spec.cardinalities),
            "phis": [phi.tolist() for phi in model.phis],
        }
    return {
        "kind": PAIRWISE,
        "cardinalities": list(model.spec.cardinalities),
        "phi_pairs": [phi.tolist() for phi in model.phi_pairs],
    }


def model_from_dict(payload: dict) -> RewardModel:
    spec = SlateSpec(cardinalities=tuple(payload["cardinalities"]))
    kind = payload.get("kind")
    if kind == ELEMENTWISE:
        return ElementwiseAdditiveModel(
            spec=spec, phis=tuple(np.asarray(p, dtype=np.float64) for p in payload["phis"])
        )
    if kind == PAIRWISE:
        return PairwiseAdditiveModel(
            spec=spec,
            phi_pairs=tuple(np.asarray(p, dtype=np.float64) for p in payload["phi_pairs"]),
        )
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model: RewardModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> RewardModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
