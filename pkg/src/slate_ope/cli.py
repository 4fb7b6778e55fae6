"""Command-line entry point: config parsing, experiment dispatch, CSV output."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, SlateOpeError
from .estimators import optimal_cv_weights, pi_params
from .harness import (
    EVEN_DIVISION,
    PI_NAME,
    PIPP_NAME,
    UNIFORM_RANDOM,
    AdditiveEstimatorParams,
    ExperimentConfig,
    TensorResult,
    _RNG_MODEL,
    _draw_model,
    experiment_cardinality_grid,
    experiment_prior_grid,
    experiment_slot_sweep,
    fit_improvement_regression,
    run_tensor,
    spawn_rng,
)
from .oracle import exact_bias, exact_variance
from .slates import (
    Slate,
    SlateSpec,
    compute_divergences,
    make_deterministic_policy,
    make_uniform_policy,
)

EXPERIMENTS = ("prior_grid", "cardinality_grid", "slot_sweep", "regression", "oracle_check")

CSV_HEADER = (
    "experiment,K,cardinalities,tensor_index,estimator,n,bias,variance,mse,nmse,"
    "delta_nmse,am,hm,predicted_improvement,p_bar,p_prime,seed"
)

_DEFAULT_PRIOR_GRID = tuple(round(0.05 * i, 2) for i in range(1, 11))  # 0.05 .. 0.5
_DEFAULT_CHOICES = (2, 10, 100, 1000)
_DEFAULT_K_VALUES = (2, 3, 4, 5)


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run: which experiment, its template config, and I/O."""

    experiment: str
    base: ExperimentConfig
    out_dir: str
    threads: int
    deterministic_reduce: bool
    p_bar_grid: tuple[float, ...]
    p_prime_grid: tuple[float, ...]
    cardinality_choices: tuple[int, ...]
    k_values: tuple[int, ...]


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce a run, echoed next to its outputs."""

    artifact_version: str
    created_utc: str
    config: dict
    outputs: dict
    regression_fits: dict | None = None

    def to_dict(self) -> dict:
        payload = {
            "artifact_version": self.artifact_version,
            "created_utc": self.created_utc,
            "config": self.config,
            "outputs": self.outputs,
        }
        if self.regression_fits is not None:
            payload["regression_fits"] = self.regression_fits
        return payload


def _parse_int(key: str, raw: str) -> int:
    try:
        value = float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {raw!r} is not an integer") from exc
    if value != int(value):
        raise ConfigError(f"config key {key!r}: {raw!r} is not an integer")
    return int(value)


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {raw!r} is not a number") from exc


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: {raw!r} is not a boolean")


def _parse_cardinalities(key: str, raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split("-"))
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: expected dash-joined integers, got {raw!r}") from exc


def _parse_float_list(key: str, raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: expected comma-separated numbers, got {raw!r}") from exc


def _parse_int_list(key: str, raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: expected comma-separated integers, got {raw!r}") from exc


_KNOWN_KEYS = {
    "experiment", "seed", "n", "t", "s", "d", "k", "p_bar", "p_prime", "reward_kind",
    "relative_sd", "cardinality_rule", "k_values", "p_bar_grid", "p_prime_grid",
    "cardinality_choices", "out_dir", "threads", "deterministic_reduce",
}


def read_config_file(path) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment; unknown keys are rejected."""
    items: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip().lower()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        items[key] = raw.strip()
    return items


def _normalize_experiment(name: str) -> str:
    canonical = name.strip().lower().replace("-", "_")
    if canonical not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {name!r}; choose one of {', '.join(EXPERIMENTS)}"
        )
    return canonical


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Resolve a run configuration from an optional file plus flag overrides.

    Flags win over file values. Every field has a documented desk-scale
    default except the experiment name, which must come from somewhere.
    """
    items: dict[str, str] = {}
    if path is not None:
        items.update(read_config_file(path))
    if overrides:
        for key, raw in overrides.items():
            if raw is None:
                continue
            if key not in _KNOWN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            items[key] = str(raw)

    if "experiment" not in items:
        raise ConfigError("missing required config key 'experiment'")
    experiment = _normalize_experiment(items["experiment"])

    seed = _parse_int("seed", items.get("seed", "0"))
    n = _parse_int("n", items.get("n", "100000"))
    t = _parse_int("t", items.get("t", "50"))
    s = _parse_int("s", items.get("s", "500"))
    p_bar = _parse_float("p_bar", items.get("p_bar", "0.25"))
    p_prime = _parse_float("p_prime", items["p_prime"]) if "p_prime" in items else p_bar
    reward_kind = items.get("reward_kind", "elementwise").strip().lower()
    relative_sd = _parse_float("relative_sd", items.get("relative_sd", "0.1"))
    threads = _parse_int("threads", items.get("threads", "1"))
    deterministic_reduce = _parse_bool(
        "deterministic_reduce", items.get("deterministic_reduce", "false")
    )
    out_dir = items.get("out_dir", "results")

    for key, value in (("p_bar", p_bar), ("p_prime", p_prime)):
        if not 0.0 < value < 1.0:
            raise ConfigError(f"config key {key!r}: {value} outside the open interval (0, 1)")
    for key, value in (("n", n), ("t", t), ("s", s)):
        if value < 1:
            raise ConfigError(f"config key {key!r}: must be at least 1, got {value}")
    if threads < 1:
        raise ConfigError(f"config key 'threads': must be at least 1, got {threads}")

    d = _parse_cardinalities("d", items["d"]) if "d" in items else None
    k = _parse_int("k", items["k"]) if "k" in items else None
    if d is not None and k is not None and len(d) != k:
        raise ConfigError(f"config keys 'd' and 'k' disagree: {len(d)} cardinalities for k={k}")

    k_values = _parse_int_list("k_values", items["k_values"]) if "k_values" in items else None
    if k_values is None:
        k_values = (k,) if k is not None else _DEFAULT_K_VALUES
    p_bar_grid = (
        _parse_float_list("p_bar_grid", items["p_bar_grid"])
        if "p_bar_grid" in items
        else _DEFAULT_PRIOR_GRID
    )
    p_prime_grid = (
        _parse_float_list("p_prime_grid", items["p_prime_grid"])
        if "p_prime_grid" in items
        else _DEFAULT_PRIOR_GRID
    )
    choices = (
        _parse_int_list("cardinality_choices", items["cardinality_choices"])
        if "cardinality_choices" in items
        else _DEFAULT_CHOICES
    )

    rule = items.get("cardinality_rule")
    if rule is not None:
        rule = rule.strip().lower()
        if rule not in (EVEN_DIVISION, UNIFORM_RANDOM):
            raise ConfigError(
                f"config key 'cardinality_rule': {rule!r} is not "
                f"{EVEN_DIVISION!r} or {UNIFORM_RANDOM!r}"
            )

    # Slate geometry for the template config. Sweeps override it per group and
    # grid experiments per cell, so only the fixed-D experiments consult it.
    if experiment in ("slot_sweep", "regression"):
        if d is not None:
            raise ConfigError(
                f"{experiment} generates cardinalities from a rule; drop 'd' "
                "or pick a fixed-geometry experiment"
            )
        base_geometry = {
            "cardinalities": None,
            "cardinality_rule": rule
            or (EVEN_DIVISION if experiment == "slot_sweep" else UNIFORM_RANDOM),
            "slot_count": k_values[0],
        }
    elif d is not None:
        base_geometry = {"cardinalities": d, "cardinality_rule": None, "slot_count": None}
    elif experiment == "prior_grid":
        base_geometry = {"cardinalities": (3, 50, 800), "cardinality_rule": None, "slot_count": None}
    elif experiment == "oracle_check":
        base_geometry = {"cardinalities": (2, 3), "cardinality_rule": None, "slot_count": None}
    else:  # cardinality_grid: cells supply their own pair
        base_geometry = {
            "cardinalities": (choices[0], choices[0]),
            "cardinality_rule": None,
            "slot_count": None,
        }
    if rule is not None and experiment not in ("slot_sweep", "regression"):
        raise ConfigError(
            f"config key 'cardinality_rule' only applies to sweeps, not {experiment!r}"
        )

    try:
        base = ExperimentConfig(
            sample_size=n,
            tensor_count=t,
            replications_per_tensor=s,
            true_prior_mean=p_bar,
            assumed_prior_mean=p_prime,
            reward_kind=reward_kind,
            seed=seed,
            relative_sd=relative_sd,
            **base_geometry,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(
        experiment=experiment,
        base=base,
        out_dir=out_dir,
        threads=threads,
        deterministic_reduce=deterministic_reduce,
        p_bar_grid=p_bar_grid,
        p_prime_grid=p_prime_grid,
        cardinality_choices=choices,
        k_values=k_values,
    )


def run_config_items(rc: RunConfig) -> dict[str, str]:
    """Canonical flat key-value echo of a run config; parse_config inverts it."""
    base = rc.base
    items = {
        "experiment": rc.experiment,
        "seed": repr(base.seed),
        "n": repr(base.sample_size),
        "t": repr(base.tensor_count),
        "s": repr(base.replications_per_tensor),
        "p_bar": repr(base.true_prior_mean),
        "p_prime": repr(base.assumed_prior_mean),
        "reward_kind": base.reward_kind,
        "relative_sd": repr(base.relative_sd),
        "out_dir": rc.out_dir,
        "threads": repr(rc.threads),
        "deterministic_reduce": "true" if rc.deterministic_reduce else "false",
        "p_bar_grid": ",".join(repr(p) for p in rc.p_bar_grid),
        "p_prime_grid": ",".join(repr(p) for p in rc.p_prime_grid),
        "cardinality_choices": ",".join(str(d) for d in rc.cardinality_choices),
        "k_values": ",".join(str(k) for k in rc.k_values),
    }
    if base.cardinalities is not None:
        items["d"] = "-".join(str(d) for d in base.cardinalities)
    if base.cardinality_rule is not None:
        items["cardinality_rule"] = base.cardinality_rule
        items["k"] = repr(base.slot_count)
    return items


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_for_tensor(
    experiment: str, result: TensorResult, p_bar: float, p_prime: float, seed: int
) -> list[dict]:
    """One CSV row per estimator for a tensor result."""
    shared = {
        "experiment": experiment,
        "K": len(result.cardinalities),
        "cardinalities": "-".join(str(d) for d in result.cardinalities),
        "tensor_index": result.tensor_index,
        "n": result.sample_size,
        "delta_nmse": result.delta_nmse,
        "am": result.divergences.arithmetic_mean,
        "hm": result.divergences.harmonic_mean,
        "predicted_improvement": result.predicted_improvement,
        "p_bar": p_bar,
        "p_prime": p_prime,
        "seed": seed,
    }
    rows = []
    for summary in result.summaries:
        row = dict(shared)
        row.update(
            {
                "estimator": summary.estimator_name,
                "bias": summary.bias,
                "variance": summary.variance,
                "mse": summary.mse,
                "nmse": summary.nmse,
            }
        )
        rows.append(row)
    return rows


def write_results(rows: list[dict], manifest: RunManifest, out_dir) -> dict[str, str]:
    """Write the shared-schema results CSV and the run manifest.

    Returns the paths written. The CSV is byte-stable for a given row list:
    floats are rendered with shortest round-trip repr and rows are written in
    the order given.
    """
    if not rows:
        raise ValueError("no results to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    columns = CSV_HEADER.split(",")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])
    manifest_path = out / "manifest.json"
    manifest = RunManifest(
        artifact_version=manifest.artifact_version,
        created_utc=manifest.created_utc,
        config=manifest.config,
        outputs={"results_csv": str(csv_path), "manifest": str(manifest_path)},
        regression_fits=manifest.regression_fits,
    )
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest.outputs


def _run_oracle_check(rc: RunConfig, progress) -> tuple[list[dict], bool]:
    """Cross-validate the enumeration oracle against replicated estimates."""
    cfg = replace(rc.base, tensor_count=1)
    spec = SlateSpec(cardinalities=cfg.cardinalities)
    logging = make_uniform_policy(spec)
    target = make_deterministic_policy(spec, Slate(actions=(0,) * spec.slot_count))
    model = _draw_model(cfg, spec, spawn_rng(cfg.seed, _RNG_MODEL, 0))
    divs = compute_divergences(target, logging)
    cv = optimal_cv_weights(divs, cfg.assumed_prior_mean)
    params_by_name = {
        PI_NAME: pi_params(spec.slot_count),
        PIPP_NAME: AdditiveEstimatorParams(
            constant=1.0 - spec.slot_count,
            g_weights=(1.0,) * spec.slot_count,
            f_weights=cv.weights,
        ),
    }

    result = run_tensor(cfg, 0)
    reps = cfg.replications_per_tensor
    ok = True
    for name, params in params_by_name.items():
        summary = result.summary(name)
        expected_var = exact_variance(model, logging, target, params) / cfg.sample_size
        var_se = summary.variance * np.sqrt(2.0 / max(reps - 1, 1))
        var_ok = abs(summary.variance - expected_var) <= 4.0 * var_se
        expected_bias = exact_bias(model, logging, target, params)
        bias_se = np.sqrt(summary.variance / reps)
        bias_ok = abs(summary.bias - expected_bias) <= 4.0 * bias_se
        ok = ok and var_ok and bias_ok
        progress(
            f"oracle_check {name}: variance {summary.variance:.6g} vs exact "
            f"{expected_var:.6g} [{'ok' if var_ok else 'FAIL'}], bias "
            f"{summary.bias:.3g} vs exact {expected_bias:.3g} [{'ok' if bias_ok else 'FAIL'}]"
        )
    rows = rows_for_tensor(
        "oracle_check", result, cfg.true_prior_mean, cfg.assumed_prior_mean, cfg.seed
    )
    return rows, ok


def run_experiment(rc: RunConfig, progress=lambda line: print(line, flush=True)) -> int:
    """Dispatch one experiment and write its outputs; returns an exit code."""
    base = rc.base
    workers = rc.threads
    rows: list[dict] = []
    fits_payload = None
    ok = True

    if rc.experiment == "prior_grid":
        cells = experiment_prior_grid(
            base, rc.p_bar_grid, rc.p_prime_grid, workers=workers, progress=progress
        )
        for cell in cells:
            for result in cell.tensor_results:
                rows.extend(
                    rows_for_tensor("prior_grid", result, cell.p_bar, cell.p_prime, base.seed)
                )
    elif rc.experiment == "cardinality_grid":
        cells = experiment_cardinality_grid(
            base, rc.cardinality_choices, workers=workers, progress=progress
        )
        for cell in cells:
            for result in cell.tensor_results:
                rows.extend(
                    rows_for_tensor(
                        "cardinality_grid",
                        result,
                        base.true_prior_mean,
                        base.assumed_prior_mean,
                        base.seed,
                    )
                )
    elif rc.experiment in ("slot_sweep", "regression"):
        rule = base.cardinality_rule or (
            EVEN_DIVISION if rc.experiment == "slot_sweep" else UNIFORM_RANDOM
        )
        groups = experiment_slot_sweep(
            base, rc.k_values, cardinality_rule=rule, workers=workers, progress=progress
        )
        all_results = [r for g in groups for r in g.tensor_results]
        for result in all_results:
            rows.extend(
                rows_for_tensor(
                    rc.experiment,
                    result,
                    base.true_prior_mean,
                    base.assumed_prior_mean,
                    base.seed,
                )
            )
        if rc.experiment == "regression":
            fits = fit_improvement_regression(all_results)
            fits_payload = {
                str(k): {
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "r_squared": fit.r_squared,
                    "n_points": fit.n_points,
                }
                for k, fit in fits.items()
            }
            for k, fit in sorted(fits.items()):
                progress(
                    f"regression K={k}: slope={fit.slope:.4g} intercept={fit.intercept:.4g} "
                    f"r_squared={fit.r_squared:.4f}"
                )
    elif rc.experiment == "oracle_check":
        rows, ok = _run_oracle_check(rc, progress)
    else:  # unreachable: parse_config validates
        raise ConfigError(f"unknown experiment {rc.experiment!r}")

    manifest = RunManifest(
        artifact_version=__version__,
        created_utc=datetime.now(timezone.utc).isoformat(),
        config=run_config_items(rc),
        outputs={},
        regression_fits=fits_payload,
    )
    outputs = write_results(rows, manifest, rc.out_dir)
    progress(f"wrote {outputs['results_csv']} and {outputs['manifest']}")
    return 0 if ok else 1


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slate-ope",
        description="Off-policy evaluation experiments for slate policies.",
    )
    parser.add_argument(
        "experiment_name",
        nargs="?",
        default=None,
        metavar="experiment",
        help="one of: " + ", ".join(e.replace("_", "-") for e in EXPERIMENTS),
    )
    parser.add_argument("--experiment", default=None, help="experiment name (alternative to the positional)")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--out-dir", default=None, help="output directory (default: results)")
    parser.add_argument("--seed", default=None, help="root seed (default: 0)")
    parser.add_argument("--n", default=None, help="samples per dataset (default: 1e5)")
    parser.add_argument("--t", default=None, help="reward tensors per setting (default: 50)")
    parser.add_argument("--s", default=None, help="replications per tensor (default: 500)")
    parser.add_argument("--k", default=None, help="number of slots")
    parser.add_argument("--d", default=None, help="dash-joined slot cardinalities, e.g. 3-50-800")
    parser.add_argument("--p-bar", default=None, help="true prior mean rate (default: 0.25)")
    parser.add_argument("--p-prime", default=None, help="assumed prior mean rate (default: p_bar)")
    parser.add_argument("--reward-kind", default=None, help="elementwise or pairwise")
    parser.add_argument("--relative-sd", default=None, help="relative sd of model draws (default: 0.1)")
    parser.add_argument("--cardinality-rule", default=None, help="even_division or uniform_random")
    parser.add_argument("--k-values", default=None, help="comma-separated slot counts for sweeps")
    parser.add_argument("--p-bar-grid", default=None, help="comma-separated true prior grid")
    parser.add_argument("--p-prime-grid", default=None, help="comma-separated assumed prior grid")
    parser.add_argument("--cardinality-choices", default=None, help="comma-separated action counts")
    parser.add_argument("--threads", default=None, help="worker processes (default: 1)")
    parser.add_argument(
        "--deterministic-reduce",
        action="store_true",
        default=None,
        help="force the deterministic reduction order (always on in this implementation)",
    )
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    overrides = {
        "experiment": args.experiment_name or args.experiment,
        "out_dir": args.out_dir,
        "seed": args.seed,
        "n": args.n,
        "t": args.t,
        "s": args.s,
        "k": args.k,
        "d": args.d,
        "p_bar": args.p_bar,
        "p_prime": args.p_prime,
        "reward_kind": args.reward_kind,
        "relative_sd": args.relative_sd,
        "cardinality_rule": args.cardinality_rule,
        "k_values": args.k_values,
        "p_bar_grid": args.p_bar_grid,
        "p_prime_grid": args.p_prime_grid,
        "cardinality_choices": args.cardinality_choices,
        "threads": args.threads,
        "deterministic_reduce": "true" if args.deterministic_reduce else None,
    }
    try:
        rc = parse_config(args.config, overrides)
        return run_experiment(rc)
    except (SlateOpeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
