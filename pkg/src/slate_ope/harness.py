"""Replication harness: dataset generation, per-tensor loops, and experiments.

RNG discipline: one root seed; every consumer derives an independent stream
from a (purpose, indices...) path via SeedSequence spawn keys. Results are
therefore reproducible bit-for-bit regardless of scheduling, and tensors can
run in parallel worker processes with results merged by index.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateSlotError
from .estimators import (
    AdditiveEstimatorParams,
    LoggedDataset,
    additive_block_sums,
    ips_block_sum,
    optimal_cv_weights,
)
from .oracle import predicted_improvement
from .rewards import (
    ELEMENTWISE,
    PAIRWISE,
    ModelDrawConfig,
    RewardModel,
    draw_elementwise_model,
    draw_pairwise_model,
    slate_rates_from_columns,
    true_policy_value,
)
from .slates import (
    DivergenceSummary,
    FactoredPolicy,
    Slate,
    SlateSpec,
    compute_divergences,
    make_deterministic_policy,
    make_uniform_policy,
    sample_slot_columns,
    slot_weight_vectors,
)

IPS_NAME = "ips"
PI_NAME = "pi"
PIPP_NAME = "pi_plus_plus"

EVEN_DIVISION = "even_division"
UNIFORM_RANDOM = "uniform_random"

# Purposes for deriving named RNG streams from the root seed.
_RNG_CARDS = 0
_RNG_MODEL = 1
_RNG_DATA = 2

# Simulation block size; matches the estimator fold chunk so streamed
# estimates are bit-identical to estimating a materialized dataset.
_SIM_CHUNK = 1 << 16

CLAMP_WARN_FRACTION = 0.01


def spawn_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a (purpose, indices...) path under one seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulated instance: slate geometry, sizes, priors, and the seed.

    The slate geometry is either a fixed cardinality tuple or a generation
    rule (`even_division` or `uniform_random`) paired with a slot count.
    """

    sample_size: int
    tensor_count: int
    replications_per_tensor: int
    true_prior_mean: float
    assumed_prior_mean: float
    reward_kind: str
    seed: int
    cardinalities: tuple[int, ...] | None = None
    cardinality_rule: str | None = None
    slot_count: int | None = None
    relative_sd: float = 0.1

    def __post_init__(self):
        for name in ("sample_size", "tensor_count", "replications_per_tensor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("true_prior_mean", "assumed_prior_mean"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.reward_kind not in (ELEMENTWISE, PAIRWISE):
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.relative_sd < 0.0:
            raise ValueError("relative_sd must be non-negative")
        if self.cardinalities is not None:
            if self.cardinality_rule is not None:
                raise ValueError("give either fixed cardinalities or a rule, not both")
            object.__setattr__(self, "cardinalities", tuple(int(d) for d in self.cardinalities))
            if any(d < 1 for d in self.cardinalities):
                raise ValueError("cardinalities must be positive")
        else:
            if self.cardinality_rule not in (EVEN_DIVISION, UNIFORM_RANDOM):
                raise ValueError(
                    f"cardinality_rule must be {EVEN_DIVISION!r} or {UNIFORM_RANDOM!r}, "
                    f"got {self.cardinality_rule!r}"
                )
            if self.slot_count is None or self.slot_count < 2:
                raise ValueError("cardinality rules need a slot_count of at least 2")


@dataclass(frozen=True)
class EstimatorSummary:
    """Replication-level moments of one estimator on one reward tensor."""

    estimator_name: str
    mean_estimate: float
    bias: float
    variance: float
    mse: float
    nmse: float


@dataclass(frozen=True)
class TensorResult:
    """Everything measured for one drawn reward tensor."""

    tensor_index: int
    cardinalities: tuple[int, ...]
    sample_size: int
    divergences: DivergenceSummary
    v_pi: float
    summaries: tuple[EstimatorSummary, ...]
    delta_nmse: float
    predicted_improvement: float
    clamp_fraction: float

    def summary(self, estimator_name: str) -> EstimatorSummary:
        for s in self.summaries:
            if s.estimator_name == estimator_name:
                return s
        raise KeyError(estimator_name)

    @property
    def percent_improvement(self) -> float:
        """delta_nmse relative to PI's nmse, in percent."""
        pi_nmse = self.summary(PI_NAME).nmse
        if pi_nmse == 0.0:
            return 0.0
        return 100.0 * self.delta_nmse / pi_nmse


def even_division_cardinalities(slot_count: int) -> tuple[int, ...]:
    """Deterministic cardinalities spanning 2..100: first slot 2, then k*100/(K-1)."""
    if slot_count < 2:
        raise ValueError("the even-division rule needs at least 2 slots")
    return (2,) + tuple(k * 100 // (slot_count - 1) for k in range(1, slot_count))


def _resolve_cardinalities(
    cfg: ExperimentConfig, tensor_index: int, prefix: tuple[int, ...]
) -> tuple[int, ...]:
    if cfg.cardinalities is not None:
        return cfg.cardinalities
    if cfg.cardinality_rule == EVEN_DIVISION:
        return even_division_cardinalities(cfg.slot_count)
    rng = spawn_rng(cfg.seed, *prefix, _RNG_CARDS, tensor_index)
    return tuple(int(d) for d in rng.integers(2, 101, size=cfg.slot_count))


def _draw_model(cfg: ExperimentConfig, spec: SlateSpec, rng) -> RewardModel:
    draw_cfg = ModelDrawConfig(
        prior_mean=cfg.true_prior_mean,
        relative_sd=cfg.relative_sd,
        model_kind=cfg.reward_kind,
    )
    if cfg.reward_kind == ELEMENTWISE:
        return draw_elementwise_model(spec, draw_cfg, rng)
    return draw_pairwise_model(spec, draw_cfg, rng)


def _draw_blocks(model, logging: FactoredPolicy, n: int, rng):
    """Yield (slot index columns, rewards) blocks of the simulation chunk size."""
    remaining = n
    while remaining > 0:
        block = min(remaining, _SIM_CHUNK)
        columns = sample_slot_columns(logging, block, rng)
        rates = slate_rates_from_columns(model, columns)
        rewards = rng.random(block) < rates
        yield columns, rewards
        remaining -= block


def generate_dataset(
    model: RewardModel, logging: FactoredPolicy, n: int, rng: np.random.Generator
) -> LoggedDataset:
    """n i.i.d. logged samples: slates from the logging policy, Bernoulli rewards."""
    if n < 1:
        raise ValueError(f"dataset size must be at least 1, got {n}")
    slate_blocks = []
    reward_blocks = []
    for columns, rewards in _draw_blocks(model, logging, n, rng):
        slate_blocks.append(np.stack(columns, axis=1))
        reward_blocks.append(rewards.astype(np.int8))
    return LoggedDataset(
        spec=logging.spec,
        slates=np.concatenate(slate_blocks),
        rewards=np.concatenate(reward_blocks),
        logging_policy=logging,
    )


def _replicate(model, logging, tables, params: AdditiveEstimatorParams, n: int, rng):
    """Generate one dataset of size n block-wise and fold the three estimators.

    Returns (ips, pi, pi++) estimates. Never materializes the dataset: blocks
    are drawn, folded, and dropped, so memory stays constant in n. Matches the
    public estimators bit-for-bit on an equal-seed materialized dataset
    because the block size, gather order, and accumulation order coincide.
    """
    sum_ips = 0.0
    sum_rg = 0.0
    sum_f = 0.0
    for columns, rewards in _draw_blocks(model, logging, n, rng):
        ys = [tables[k][columns[k]] for k in range(len(tables))]
        r = rewards.astype(np.float64)
        sum_ips += ips_block_sum(ys, r)
        rg, f = additive_block_sums(ys, r, params)
        sum_rg += rg
        sum_f += f
    return sum_ips / n, sum_rg / n, (sum_rg - sum_f) / n


def _summarize(name: str, estimates: np.ndarray, v_pi: float, n: int) -> EstimatorSummary:
    mean = float(np.mean(estimates))
    bias = mean - v_pi
    variance = float(np.mean((estimates - mean) ** 2))
    mse = float(np.mean((estimates - v_pi) ** 2))
    return EstimatorSummary(
        estimator_name=name,
        mean_estimate=mean,
        bias=bias,
        variance=variance,
        mse=mse,
        nmse=n * mse,
    )


def run_tensor(
    cfg: ExperimentConfig, tensor_index: int, stream_prefix: tuple[int, ...] = ()
) -> TensorResult:
    """Draw one reward tensor and measure all estimators over fresh datasets.

    Each replication generates its own dataset of `sample_size` slates from
    the uniform logging policy and evaluates the deterministic target that
    always plays action 0 in every slot. Replication counts this small make
    the moments degenerate: with a single replication the variance reads 0
    and mse collapses to the squared bias.
    """
    cards = _resolve_cardinalities(cfg, tensor_index, stream_prefix)
    if any(d < 2 for d in cards):
        raise DegenerateSlotError(
            f"slot with a single action in {cards}: divergence is zero under a "
            "deterministic target"
        )
    spec = SlateSpec(cardinalities=cards)
    logging = make_uniform_policy(spec)
    target = make_deterministic_policy(spec, Slate(actions=(0,) * spec.slot_count))

    model = _draw_model(cfg, spec, spawn_rng(cfg.seed, *stream_prefix, _RNG_MODEL, tensor_index))
    v_pi = true_policy_value(model, target)
    divs = compute_divergences(target, logging)
    cv = optimal_cv_weights(divs, cfg.assumed_prior_mean)
    params = AdditiveEstimatorParams(
        constant=1.0 - spec.slot_count,
        g_weights=(1.0,) * spec.slot_count,
        f_weights=cv.weights,
    )
    tables = slot_weight_vectors(target, logging)

    reps = cfg.replications_per_tensor
    estimates = np.empty((reps, 3))
    for rep in range(reps):
        rng = spawn_rng(cfg.seed, *stream_prefix, _RNG_DATA, tensor_index, rep)
        estimates[rep] = _replicate(model, logging, tables, params, cfg.sample_size, rng)

    clamp_fraction = model.clamp_tally.fraction
    if clamp_fraction > CLAMP_WARN_FRACTION:
        warnings.warn(
            f"tensor {tensor_index}: {clamp_fraction:.2%} of rate evaluations were "
            "clamped into [0, 1]; the prior-mean assumption is degrading",
            RuntimeWarning,
            stacklevel=2,
        )

    summaries = (
        _summarize(IPS_NAME, estimates[:, 0], v_pi, cfg.sample_size),
        _summarize(PI_NAME, estimates[:, 1], v_pi, cfg.sample_size),
        _summarize(PIPP_NAME, estimates[:, 2], v_pi, cfg.sample_size),
    )
    delta_nmse = summaries[1].nmse - summaries[2].nmse
    prediction = predicted_improvement(divs, cfg.true_prior_mean, cfg.assumed_prior_mean)
    return TensorResult(
        tensor_index=tensor_index,
        cardinalities=cards,
        sample_size=cfg.sample_size,
        divergences=divs,
        v_pi=v_pi,
        summaries=summaries,
        delta_nmse=delta_nmse,
        predicted_improvement=prediction.improvement_per_sample,
        clamp_fraction=clamp_fraction,
    )


def _run_tensor_job(args) -> TensorResult:
    cfg, tensor_index, stream_prefix = args
    return run_tensor(cfg, tensor_index, stream_prefix)


def run_tensors(
    cfg: ExperimentConfig,
    workers: int = 1,
    stream_prefix: tuple[int, ...] = (),
) -> list[TensorResult]:
    """All tensors of a config, optionally across worker processes.

    Results are merged by tensor index, so the output is identical whatever
    the worker count or completion order.
    """
    indices = range(cfg.tensor_count)
    if workers <= 1:
        return [run_tensor(cfg, i, stream_prefix) for i in indices]
    jobs = [(cfg, i, stream_prefix) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_tensor_job, jobs))
    return results


@dataclass(frozen=True)
class PriorGridCell:
    """Tensor results for one (true prior, assumed prior) grid cell."""

    p_bar: float
    p_prime: float
    tensor_results: tuple[TensorResult, ...]

    def mean_delta_nmse(self) -> float:
        return float(np.mean([t.delta_nmse for t in self.tensor_results]))

    def mean_predicted_improvement(self) -> float:
        return float(np.mean([t.predicted_improvement for t in self.tensor_results]))


def experiment_prior_grid(
    cfg: ExperimentConfig,
    true_prior_grid,
    assumed_prior_grid,
    workers: int = 1,
    progress=None,
) -> list[PriorGridCell]:
    """Sweep the true and assumed prior means over a grid of cells."""
    true_grid = [float(p) for p in true_prior_grid]
    assumed_grid = [float(p) for p in assumed_prior_grid]
    if not true_grid or not assumed_grid:
        raise ValueError("prior grids must be non-empty")
    for p in true_grid + assumed_grid:
        if not 0.0 < p < 1.0:
            raise ValueError(f"grid prior {p} outside (0, 1)")
    cells = []
    for i, p_bar in enumerate(true_grid):
        for j, p_prime in enumerate(assumed_grid):
            cell_cfg = replace(cfg, true_prior_mean=p_bar, assumed_prior_mean=p_prime)
            results = run_tensors(cell_cfg, workers, stream_prefix=(i, j))
            cell = PriorGridCell(p_bar=p_bar, p_prime=p_prime, tensor_results=tuple(results))
            cells.append(cell)
            if progress is not None:
                progress(f"prior cell p_bar={p_bar:g} p_prime={p_prime:g} "
                         f"mean_delta_nmse={cell.mean_delta_nmse():.6g}")
    return cells


@dataclass(frozen=True)
class CardinalityGridCell:
    """Tensor results for one (d1, d2) cardinality pair."""

    pair: tuple[int, int]
    tensor_results: tuple[TensorResult, ...]

    def mean_percent_improvement(self) -> float:
        return float(np.mean([t.percent_improvement for t in self.tensor_results]))

    def mean_delta_nmse(self) -> float:
        return float(np.mean([t.delta_nmse for t in self.tensor_results]))


def experiment_cardinality_grid(
    cfg: ExperimentConfig,
    cardinality_choices,
    workers: int = 1,
    progress=None,
) -> list[CardinalityGridCell]:
    """Two-slot slates over every ordered pair of the given action counts."""
    choices = [int(d) for d in cardinality_choices]
    if any(d < 2 for d in choices):
        raise ValueError("cardinality choices must offer at least 2 actions")
    cells = []
    for i, d_first in enumerate(choices):
        for j, d_second in enumerate(choices):
            cell_cfg = replace(
                cfg, cardinalities=(d_first, d_second), cardinality_rule=None, slot_count=None
            )
            results = run_tensors(cell_cfg, workers, stream_prefix=(i, j))
            cell = CardinalityGridCell(
                pair=(d_first, d_second), tensor_results=tuple(results)
            )
            cells.append(cell)
            if progress is not None:
                progress(f"cardinality cell {d_first}x{d_second} "
                         f"mean_percent_improvement={cell.mean_percent_improvement():.4g}%")
    return cells


@dataclass(frozen=True)
class SlotSweepGroup:
    """Tensor results for one slot count in a sweep."""

    slot_count: int
    tensor_results: tuple[TensorResult, ...]

    def mean_delta_nmse(self) -> float:
        return float(np.mean([t.delta_nmse for t in self.tensor_results]))

    def mean_predicted_improvement(self) -> float:
        return float(np.mean([t.predicted_improvement for t in self.tensor_results]))


def experiment_slot_sweep(
    cfg: ExperimentConfig,
    k_values,
    cardinality_rule: str = EVEN_DIVISION,
    workers: int = 1,
    progress=None,
) -> list[SlotSweepGroup]:
    """Sweep the number of slots, with cardinalities set by the given rule."""
    ks = [int(k) for k in k_values]
    if any(k < 2 for k in ks):
        raise ValueError("slot sweeps need at least 2 slots per slate")
    groups = []
    for k in ks:
        k_cfg = replace(
            cfg, cardinalities=None, cardinality_rule=cardinality_rule, slot_count=k
        )
        results = run_tensors(k_cfg, workers, stream_prefix=(k,))
        group = SlotSweepGroup(slot_count=k, tensor_results=tuple(results))
        groups.append(group)
        if progress is not None:
            progress(f"slot sweep K={k} mean_delta_nmse={group.mean_delta_nmse():.6g}")
    return groups


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def ols_fit(x, y) -> RegressionFit:
    """Ordinary least squares of y on x with the coefficient of determination."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ValueError("need two equal-length 1-D arrays with at least 2 points")
    mx = float(np.mean(x))
    my = float(np.mean(y))
    sxx = float(np.sum((x - mx) ** 2))
    if sxx == 0.0:
        # Constant regressor: fall back to the mean-only model.
        ss_tot = float(np.sum((y - my) ** 2))
        return RegressionFit(
            slope=0.0,
            intercept=my,
            r_squared=1.0 if ss_tot == 0.0 else 0.0,
            n_points=x.shape[0],
        )
    slope = float(np.sum((x - mx) * (y - my))) / sxx
    intercept = my - slope * mx
    residuals = y - (intercept + slope * x)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((y - my) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionFit(
        slope=slope, intercept=intercept, r_squared=r_squared, n_points=x.shape[0]
    )


def fit_improvement_regression(results) -> dict[int, RegressionFit]:
    """Per slot count, regress observed delta_nmse on the predicted improvement."""
    by_k: dict[int, list[TensorResult]] = {}
    for result in results:
        by_k.setdefault(len(result.cardinalities), []).append(result)
    fits = {}
    for k, group in sorted(by_k.items()):
        if len(group) < 3:
            raise ValueError(f"need at least 3 tensors for K={k}, got {len(group)}")
        x = [t.predicted_improvement for t in group]
        y = [t.delta_nmse for t in group]
        fits[k] = ols_fit(x, y)
    return fits
