"""Command line front end: experiment sweeps, oracle checks, coefficient fits.

Configuration is a flat JSON object.  Keys:

    n               sensors per trial (int)
    m               agents (int)
    x_max           half-width of the target range (positive int)
    seed            root seed for every derived stream (int)
    taus            fault counts to sweep (list of ints, each 0..n-2)
    lambdas         objective weights for linear fusers (list of floats in [0, 1])
    algorithms      fusers to run: "marzullo", "bi", "gbi_oneopt",
                    "linear" (one instance per entry of lambdas),
                    "linear@<v>", "constant@<v>"
    trials          Monte Carlo trials per (algorithm, tau) cell (int >= 100)
    moment_samples  samples for moment estimation and coefficient fitting
                    (int >= 10000, default 100000)
    output_path     where sweep results go
    format          "csv" (default) or "json"

The environment variables INTERVALFUSION_SEED and INTERVALFUSION_TRIALS
override the config file; the --seed/--trials/--out flags override both.
Identical effective configuration produces byte-identical output files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fusion import GbiWeights, fuse_gbi, gbi_bayes_weights
from .metrics import AlgorithmSpec, combine_objective, evaluate
from .optimal import LinearSelection, select_linear_coefficients
from .oracle import posterior_mean_exact
from .scenario import Interval, ScenarioParams, make_trial

__all__ = ["ConfigError", "RunConfig", "load_config", "run_sweep", "run_oracle_check", "run_fit_linear", "main"]

ENV_SEED = "INTERVALFUSION_SEED"
ENV_TRIALS = "INTERVALFUSION_TRIALS"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    n: int
    m: int
    x_max: int
    seed: int
    taus: tuple[int, ...]
    lambdas: tuple[float, ...]
    algorithms: tuple[str, ...]
    trials: int
    moment_samples: int
    output_path: str
    format: str

    def scenario(self, tau: int) -> ScenarioParams:
        return ScenarioParams(n=self.n, m=self.m, tau=tau, x_max=self.x_max, seed=self.seed)


_REQUIRED = ("n", "m", "x_max", "seed", "taus", "algorithms", "trials", "output_path")
_DEFAULTS = {"lambdas": (), "moment_samples": 100_000, "format": "csv"}
_ALL_KEYS = set(_REQUIRED) | set(_DEFAULTS)


def _require_int(raw: object, field: str, minimum: int | None = None) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(f"field {field!r} must be an integer, got {raw!r}")
    if minimum is not None and raw < minimum:
        raise ConfigError(f"field {field!r} must be >= {minimum}, got {raw}")
    return raw


def load_config(path: str, seed_override: int | None = None, trials_override: int | None = None,
                out_override: str | None = None) -> RunConfig:
    """Read, validate, and resolve a configuration file.

    Precedence per field: command line flag, then environment variable
    (seed/trials only), then the file.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path!r} must hold a JSON object of key/value pairs")

    unknown = sorted(set(raw) - _ALL_KEYS)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    missing = [key for key in _REQUIRED if key not in raw]
    if missing:
        raise ConfigError(f"missing config field(s): {', '.join(missing)}")

    n = _require_int(raw["n"], "n", minimum=1)
    m = _require_int(raw["m"], "m", minimum=1)
    x_max = _require_int(raw["x_max"], "x_max", minimum=1)

    seed = raw["seed"]
    if ENV_SEED in os.environ:
        try:
            seed = int(os.environ[ENV_SEED])
        except ValueError as exc:
            raise ConfigError(f"environment variable {ENV_SEED} must be an integer, "
                              f"got {os.environ[ENV_SEED]!r}") from exc
    if seed_override is not None:
        seed = seed_override
    seed = _require_int(seed, "seed")

    taus_raw = raw["taus"]
    if not isinstance(taus_raw, list) or not taus_raw:
        raise ConfigError("field 'taus' must be a non-empty list of integers")
    taus = tuple(_require_int(t, "taus", minimum=0) for t in taus_raw)
    for t in taus:
        if t > n - 2:
            raise ConfigError(f"field 'taus' entry {t} exceeds n-2 = {n - 2}")

    lambdas_raw = raw.get("lambdas", list(_DEFAULTS["lambdas"]))
    if not isinstance(lambdas_raw, list):
        raise ConfigError("field 'lambdas' must be a list of numbers")
    lambdas = []
    for v in lambdas_raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"field 'lambdas' entry {v!r} is not a number")
        if not 0.0 <= float(v) <= 1.0:
            raise ConfigError(f"field 'lambdas' entry {v} lies outside [0, 1]")
        lambdas.append(float(v))

    algorithms_raw = raw["algorithms"]
    if not isinstance(algorithms_raw, list) or not all(isinstance(a, str) for a in algorithms_raw):
        raise ConfigError("field 'algorithms' must be a list of strings")

    trials = raw["trials"]
    if ENV_TRIALS in os.environ:
        try:
            trials = int(os.environ[ENV_TRIALS])
        except ValueError as exc:
            raise ConfigError(f"environment variable {ENV_TRIALS} must be an integer, "
                              f"got {os.environ[ENV_TRIALS]!r}") from exc
    if trials_override is not None:
        trials = trials_override
    trials = _require_int(trials, "trials", minimum=100)

    moment_samples = _require_int(raw.get("moment_samples", _DEFAULTS["moment_samples"]),
                                  "moment_samples", minimum=10_000)

    output_path = out_override if out_override is not None else raw["output_path"]
    if not isinstance(output_path, str) or not output_path:
        raise ConfigError("field 'output_path' must be a non-empty string")

    fmt = raw.get("format", _DEFAULTS["format"])
    if fmt not in ("csv", "json"):
        raise ConfigError(f"field 'format' must be 'csv' or 'json', got {fmt!r}")

    config = RunConfig(
        n=n, m=m, x_max=x_max, seed=seed, taus=taus, lambdas=tuple(lambdas),
        algorithms=tuple(algorithms_raw), trials=trials, moment_samples=moment_samples,
        output_path=output_path, format=fmt,
    )
    _parse_algorithms(config)  # validate selectors eagerly
    return config


@dataclass(frozen=True)
class _AlgorithmPlan:
    label: str
    kind: str
    lam: float | None = None
    constant_value: float | None = None


def _parse_algorithms(config: RunConfig) -> list[_AlgorithmPlan]:
    plans: list[_AlgorithmPlan] = []
    for selector in config.algorithms:
        if selector in ("marzullo", "bi", "gbi_oneopt"):
            plans.append(_AlgorithmPlan(label=selector, kind=selector))
        elif selector == "linear":
            if not config.lambdas:
                raise ConfigError("algorithm 'linear' needs a non-empty 'lambdas' field")
            for lam in config.lambdas:
                plans.append(_AlgorithmPlan(label=f"linear@{lam:g}", kind="linear", lam=lam))
        elif selector.startswith("linear@"):
            try:
                lam = float(selector.split("@", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"bad algorithm selector {selector!r}") from exc
            if not 0.0 <= lam <= 1.0:
                raise ConfigError(f"algorithm selector {selector!r} has lambda outside [0, 1]")
            plans.append(_AlgorithmPlan(label=f"linear@{lam:g}", kind="linear", lam=lam))
        elif selector.startswith("constant@"):
            try:
                value = float(selector.split("@", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"bad algorithm selector {selector!r}") from exc
            plans.append(_AlgorithmPlan(label=selector, kind="constant", constant_value=value))
        else:
            raise ConfigError(f"unknown algorithm selector {selector!r} in field 'algorithms'")
    labels = [p.label for p in plans]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate algorithm instances in field 'algorithms': {labels}")
    return plans


def _fit_rng(seed: int, tau: int, lam: float) -> np.random.Generator:
    # fitting stream disjoint from the per-trial evaluation streams
    return np.random.default_rng(np.random.SeedSequence((seed & (2**64 - 1), 0xF17, tau, int(round(lam * 10**9)))))


def _float_cell(value: float | None) -> str:
    return "" if value is None else format(value, ".15g")


def run_sweep(config: RunConfig) -> list[dict]:
    """Evaluate every configured algorithm at every tau; return one row per cell.

    Linear fusers are fitted per (tau, lambda) via the cross-validated
    selection; when the closed-form recipe was rejected the row's flags field
    records fit_substituted.  All algorithms at one tau share bit-identical
    trials.
    """
    plans = _parse_algorithms(config)
    if config.m < 2 and any(p.kind == "linear" for p in plans):
        raise ConfigError("linear fusers require m >= 2 (field 'm')")
    rows: list[dict] = []
    for tau in config.taus:
        params = config.scenario(tau)
        selections: dict[float, LinearSelection] = {}
        for plan in plans:
            if plan.kind == "linear" and plan.lam not in selections:
                selections[plan.lam] = select_linear_coefficients(
                    params, plan.lam, config.moment_samples, _fit_rng(config.seed, tau, plan.lam)
                )
        specs = []
        for plan in plans:
            if plan.kind == "linear":
                specs.append(AlgorithmSpec.linear(selections[plan.lam].coeffs, label=plan.label))
            elif plan.kind == "constant":
                specs.append(AlgorithmSpec.constant(plan.constant_value, label=plan.label))
            else:
                specs.append(AlgorithmSpec(kind=plan.kind))
        if not specs:
            continue
        reports = evaluate(specs, params, None, config.trials, keep_per_trial=True)
        for plan, report in zip(plans, reports):
            objective = None
            if plan.lam is not None:
                objective, _ = combine_objective(report, plan.lam)
            flags = []
            if report.degenerate_count:
                flags.append(f"degenerate={report.degenerate_count}")
            if plan.kind == "linear" and not selections[plan.lam].closed_form_used:
                flags.append("fit_substituted")
            row: dict = {"algorithm": plan.label, "tau": tau, "lambda": plan.lam}
            for j in range(config.m):
                row[f"mse_agent_{j + 1}"] = float(report.mse[j])
                row[f"mse_stderr_{j + 1}"] = float(report.mse_stderr[j])
            for p, (j, k) in enumerate(report.pairs):
                row[f"cns_pair_{j + 1}_{k + 1}"] = float(report.cns[p])
                row[f"cns_stderr_{j + 1}_{k + 1}"] = float(report.cns_stderr[p])
            row["objective"] = objective
            row["trials"] = config.trials
            row["seed"] = config.seed
            row["flags"] = ";".join(flags)
            rows.append(row)
    return rows


def _sweep_header(config: RunConfig) -> list[str]:
    header = ["algorithm", "tau", "lambda"]
    for j in range(config.m):
        header += [f"mse_agent_{j + 1}", f"mse_stderr_{j + 1}"]
    for j in range(config.m):
        for k in range(j + 1, config.m):
            header += [f"cns_pair_{j + 1}_{k + 1}", f"cns_stderr_{j + 1}_{k + 1}"]
    header += ["objective", "trials", "seed", "flags"]
    return header


def write_rows(rows: list[dict], config: RunConfig) -> None:
    header = _sweep_header(config)
    try:
        if config.format == "json":
            with open(config.output_path, "w", encoding="utf-8") as fh:
                json.dump(rows, fh, indent=2)
                fh.write("\n")
            return
        with open(config.output_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                cells = []
                for key in header:
                    value = row.get(key)
                    if key in ("algorithm", "flags"):
                        cells.append("" if value is None else str(value))
                    elif key in ("tau", "trials", "seed"):
                        cells.append(str(value))
                    else:
                        cells.append(_float_cell(value))
                writer.writerow(cells)
    except OSError as exc:
        raise ConfigError(f"cannot write output_path {config.output_path!r}: {exc}") from exc


def run_oracle_check(
    config: RunConfig,
    weight_fn: Callable[[Sequence[Interval], int], GbiWeights] = gbi_bayes_weights,
) -> tuple[float, list[tuple[int, int, int, float]]]:
    """Compare the weighted fuser against the exact posterior mean trial by trial.

    Returns the largest absolute deviation and the list of
    (tau, trial, agent, deviation) entries exceeding 1e-9.  weight_fn exists
    as a fault-injection hook for tests.
    """
    if config.n > 8:
        raise ConfigError(f"oracle check enumerates fault patterns; need n <= 8, got n={config.n}")
    worst = 0.0
    failures: list[tuple[int, int, int, float]] = []
    for tau in config.taus:
        params = config.scenario(tau)
        for t in range(config.trials):
            trial = make_trial(params, t)
            for j in range(config.m):
                readings = [trial.readings[i][j] for i in range(config.n)]
                fused = fuse_gbi(weight_fn(readings, tau))
                exact = posterior_mean_exact(readings, params)
                dev = abs(fused - exact)
                worst = max(worst, dev)
                if dev > 1e-9:
                    failures.append((tau, t, j, dev))
    return worst, failures


def run_fit_linear(config: RunConfig, lam: float) -> list[dict]:
    """Fit linear fuser coefficients at weight lam for every configured tau."""
    if config.m != 2:
        raise ConfigError(f"fit-linear requires m=2 agents (field 'm'), got m={config.m}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"--lambda must lie in [0, 1], got {lam}")
    results = []
    for tau in config.taus:
        params = config.scenario(tau)
        selection = select_linear_coefficients(params, lam, config.moment_samples,
                                               _fit_rng(config.seed, tau, lam))
        results.append(
            {
                "tau": tau,
                "lambda": lam,
                "eps": [np.asarray(c.eps).tolist() for c in selection.coeffs],
                "delta": [np.asarray(c.delta).tolist() for c in selection.coeffs],
                "gamma": [c.gamma for c in selection.coeffs],
                "closed_form_used": selection.closed_form_used,
                "closed_form_objective": selection.closed_form_objective,
                "empirical_objective": selection.empirical_objective,
                "closed_form_error": selection.closed_form_error,
            }
        )
    return results


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intervalfusion",
        description="Fault-tolerant interval fusion experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="run the configured algorithms over every tau")
    check = sub.add_parser("oracle-check", help="verify the weighted fuser equals the exact posterior mean")
    fit = sub.add_parser("fit-linear", help="fit linear fuser coefficients for one lambda")
    for p in (sweep, check, fit):
        p.add_argument("--config", required=True, help="path to the JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--trials", type=int, default=None, help="override the config trial count")
    sweep.add_argument("--out", default=None, help="override the config output_path")
    fit.add_argument("--out", default=None, help="write fitted coefficients to this file instead of stdout")
    fit.add_argument("--lambda", dest="lam", type=float, required=True, help="objective weight in [0, 1]")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed, trials_override=args.trials,
                             out_override=getattr(args, "out", None))
        if args.command == "sweep":
            rows = run_sweep(config)
            write_rows(rows, config)
            print(f"wrote {len(rows)} rows to {config.output_path}")
            return 0
        if args.command == "oracle-check":
            worst, failures = run_oracle_check(config)
            if failures:
                for tau, trial, agent, dev in failures[:20]:
                    print(f"FAIL seed={config.seed} tau={tau} trial={trial} agent={agent} "
                          f"deviation={dev:.3e}", file=sys.stderr)
                print(f"oracle check failed on {len(failures)} trial(s); "
                      f"max deviation {worst:.3e}", file=sys.stderr)
                return 1
            total = config.trials * len(config.taus) * config.m
            print(f"oracle check passed: {total} comparisons, max deviation {worst:.3e}")
            return 0
        results = run_fit_linear(config, args.lam)
        payload = json.dumps(results, indent=2)
        if getattr(args, "out", None):
            try:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(payload + "\n")
            except OSError as exc:
                raise ConfigError(f"cannot write --out {args.out!r}: {exc}") from exc
            print(f"wrote coefficients for {len(results)} tau value(s) to {args.out}")
        else:
            print(payload)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
