"""Command-line front end: ``simulate``, ``fit`` and ``mi`` subcommands.

Configuration comes from an optional flat key=value file plus flags (flags
win); the environment variable MIBMA_SEED is the seed fallback.  Every run
writes a manifest with the fully resolved configuration so results can be
reproduced exactly.  Exit codes: 0 success, 1 runtime failure, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np
import scipy

from . import __version__, kernels
from .design_variance import DesignInfo, fit_with_variance
from .errors import MibmaError
from .glm_pseudo_mle import BINOMIAL, GAUSSIAN, Dataset
from .imputation_engine import MIConfig, MIOutput, run_mi_bma, run_mi_single_model
from .model_space import ModelId, enumerate_models
from .sim_harness import (
    ALL_METHODS,
    ScenarioConfig,
    run_monte_carlo,
    write_metrics_csv,
)

SELECTION_RULE = "median-probability (inclusion frequency >= 0.5 across draws)"


class UsageError(Exception):
    """Bad invocation, config or input file; maps to exit code 2."""


def _fmt(v: float) -> str:
    return f"{v:.17g}"


# --------------------------------------------------------------------------- #
# config file and seed resolution
# --------------------------------------------------------------------------- #


def read_config_file(path: str) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def _resolve_seed(flag_seed, file_cfg: dict[str, str]) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get("MIBMA_SEED")
    if env is not None:
        return int(env)
    return 0


def _pick(args_value, file_cfg: dict[str, str], key: str, cast, default):
    """Flag wins over config file wins over default."""
    if args_value is not None:
        return args_value
    if key in file_cfg:
        try:
            return cast(file_cfg[key])
        except ValueError as exc:
            raise UsageError(f"config key {key}: {exc}") from None
    return default


def _pair(text: str) -> tuple[float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


# --------------------------------------------------------------------------- #
# dataset CSV
# --------------------------------------------------------------------------- #


def read_dataset_csv(path: str, family: str) -> Dataset:
    """Read the ``y, delta, pi, x1..xp`` schema; empty/nan y cells allowed
    where delta = 0."""
    if not os.path.exists(path):
        raise UsageError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    for required in ("y", "delta", "pi"):
        if required not in header:
            raise UsageError(f"{path}: missing required column '{required}'")
    x_names = [h for h in header if h.startswith("x")]
    expected = [f"x{i}" for i in range(1, len(x_names) + 1)]
    if x_names != expected:
        raise UsageError(f"{path}: covariate columns must be x1..xp in order")
    if not x_names:
        raise UsageError(f"{path}: need at least one covariate column x1")
    col = {name: header.index(name) for name in header}
    n = len(rows)
    if n == 0:
        raise UsageError(f"{path}: no data rows")

    def cell(row, name):
        try:
            return row[col[name]].strip()
        except IndexError:
            raise UsageError(f"{path}: short row {row!r}") from None

    y = np.empty(n)
    delta = np.empty(n, dtype=np.int8)
    pi = np.empty(n)
    x = np.ones((n, len(x_names) + 1))
    try:
        for i, row in enumerate(rows):
            d = cell(row, "delta")
            delta[i] = int(float(d))
            raw_y = cell(row, "y")
            y[i] = np.nan if raw_y in ("", "nan", "NaN", "NA") else float(raw_y)
            pi[i] = float(cell(row, "pi"))
            for j, name in enumerate(x_names):
                x[i, j + 1] = float(cell(row, name))
    except (ValueError, UsageError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"{path}: malformed row {i + 1}: {exc}") from None
    try:
        return Dataset(x, y, delta, pi, family)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def write_dataset_csv(data: Dataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["y", "delta", "pi"] + [f"x{j}" for j in range(1, data.p_design)]
        )
        for i in range(data.n):
            y = "" if np.isnan(data.y[i]) else _fmt(data.y[i])
            writer.writerow(
                [y, int(data.delta[i]), _fmt(data.pi[i])]
                + [_fmt(v) for v in data.x[i, 1:]]
            )


def _param_names(p_free: int, dispersion: bool) -> list[str]:
    names = [f"beta{j}" for j in range(p_free + 1)]
    if dispersion:
        names.append("log_sigma2")
    return names


def write_fit_csv(fit, path: str) -> None:
    se = np.sqrt(np.clip(np.diag(fit.v_hat), 0.0, None))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "estimate", "std_error"])
        for name, est, s in zip(
            _param_names(fit.kappa.p_free, fit.kappa.dispersion), fit.theta_hat, se
        ):
            writer.writerow([name, _fmt(est), _fmt(s)])


def write_mi_csv(out: MIOutput, path: str) -> None:
    kappa = out.draws[0].kappa
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "estimate", "variance"])
        for name, est, v in zip(
            _param_names(kappa.p_free, kappa.dispersion),
            out.theta_mi,
            np.diag(out.v_mi),
        ):
            writer.writerow([name, _fmt(est), _fmt(v)])


def write_models_csv(out: MIOutput, path: str) -> None:
    freq = out.inclusion_frequency()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "inclusion_frequency"])
        for j, f in enumerate(freq, start=1):
            writer.writerow([f"x{j}", _fmt(f)])


def write_draws_csv(out: MIOutput, path: str) -> None:
    """One row per draw (model mask plus parameter components) and a pooled
    summary row."""
    kappa = out.draws[0].kappa
    names = _param_names(kappa.p_free, kappa.dispersion)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "mask"] + names)
        for d in out.draws:
            writer.writerow(["draw", d.kappa.mask_hex] + [_fmt(v) for v in d.theta])
        writer.writerow(["pooled", ""] + [_fmt(v) for v in out.theta_mi])


def _write_manifest(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions() -> dict:
    return {
        "mibma": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "kernel_backend": kernels.BACKEND,
    }


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #


def cmd_simulate(args) -> int:
    file_cfg = read_config_file(args.config) if args.config else {}
    scenario = _pick(args.scenario, file_cfg, "scenario", str, None)
    if scenario not in ("I", "II"):
        raise UsageError("scenario must be 'I' or 'II' (flag or config file)")
    seed = _resolve_seed(args.seed, file_cfg)

    n_population = _pick(args.n_population, file_cfg, "n_population", int, 5000)
    p_free = _pick(args.p_free, file_cfg, "p_free", int, 6)
    reps = _pick(args.reps, file_cfg, "reps", int, 200)
    m_draws = _pick(args.m_draws, file_cfg, "m_draws", int, 50)
    burn_in = _pick(args.burn_in, file_cfg, "burn_in", int, 200)
    thin = _pick(args.thin, file_cfg, "thin", int, 10)
    threads = _pick(args.threads, file_cfg, "threads", int, os.cpu_count() or 1)
    methods = _pick(
        args.methods, file_cfg, "methods", str, ",".join(ALL_METHODS)
    )
    methods = tuple(m.strip() for m in methods.split(",") if m.strip())
    for value, name in ((n_population, "n_population"), (p_free, "p_free"),
                        (reps, "reps"), (m_draws, "m_draws"), (thin, "thin"),
                        (threads, "threads")):
        if value <= 0:
            raise UsageError(f"{name} must be positive")
    if burn_in < 0:
        raise UsageError("burn_in must be nonnegative")

    kwargs = dict(n_population=n_population, p_free=p_free, seed=seed)
    for key, cast in (
        ("x_mean", float), ("x_var", float), ("sigma2", float),
        ("psi_coef", _pair), ("pi_coef", _pair),
    ):
        if key in file_cfg:
            if key == "sigma2" and scenario == "II":
                raise UsageError("sigma2 applies to scenario I only")
            try:
                kwargs[key] = cast(file_cfg[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from None
    cfg = (
        ScenarioConfig.scenario_i(**kwargs)
        if scenario == "I"
        else ScenarioConfig.scenario_ii(**kwargs)
    )

    os.makedirs(args.out, exist_ok=True)
    mi_config = MIConfig(m_draws=m_draws, burn_in=burn_in, thin=thin, seed=seed)
    rows = run_monte_carlo(
        cfg, methods, reps, mi_config, n_jobs=threads,
        draws_dir=args.out if args.save_draws else None,
    )
    write_metrics_csv(rows, os.path.join(args.out, "metrics.csv"))
    _write_manifest(
        os.path.join(args.out, "run_manifest.json"),
        {
            "command": "simulate",
            "scenario_config": asdict(cfg),
            "run": {
                "replications": reps,
                "m_draws": m_draws,
                "burn_in": burn_in,
                "thin": thin,
                "seed": seed,
                "threads": threads,
                "methods": list(methods),
                "selection_rule": SELECTION_RULE,
            },
            "versions": _versions(),
        },
    )
    return 0


def _parse_mask(text: str, p_free: int, dispersion: bool) -> ModelId:
    try:
        return ModelId.from_hex(text, p_free, dispersion)
    except ValueError as exc:
        raise UsageError(f"bad model mask {text!r}: {exc}") from None


def cmd_fit(args) -> int:
    family = args.family
    data = read_dataset_csv(args.data, family)
    complete = data.complete_cases() if np.any(data.delta == 0) else data
    kappa = (
        _parse_mask(args.mask, data.p_free, data.has_dispersion)
        if args.mask is not None
        else data.full_model()
    )
    fit = fit_with_variance(complete, kappa, DesignInfo.poisson())
    if not fit.converged:
        raise MibmaError("fit did not converge")
    os.makedirs(args.out, exist_ok=True)
    write_fit_csv(fit, os.path.join(args.out, "fit.csv"))
    _write_manifest(
        os.path.join(args.out, "run_manifest.json"),
        {
            "command": "fit",
            "data": os.path.abspath(args.data),
            "family": family,
            "mask": kappa.mask_hex,
            "versions": _versions(),
        },
    )
    return 0


def cmd_mi(args) -> int:
    family = args.family
    data = read_dataset_csv(args.data, family)
    seed = _resolve_seed(args.seed, {})
    config = MIConfig(
        m_draws=args.m_draws, burn_in=args.burn_in, thin=args.thin, seed=seed
    )
    if args.mode == "single":
        if args.mask is None:
            raise UsageError("mode=single requires --mask")
        kappa = _parse_mask(args.mask, data.p_free, data.has_dispersion)
        out = run_mi_single_model(data, kappa, config=config)
    elif args.mode == "bma":
        models = enumerate_models(data.p_free, data.has_dispersion)
        out = run_mi_bma(data, models, config=config)
    else:
        raise UsageError(f"unknown mode {args.mode!r}")
    os.makedirs(args.out, exist_ok=True)
    write_mi_csv(out, os.path.join(args.out, "mi.csv"))
    write_models_csv(out, os.path.join(args.out, "models.csv"))
    if args.save_draws:
        write_draws_csv(out, os.path.join(args.out, "draws.csv"))
    _write_manifest(
        os.path.join(args.out, "run_manifest.json"),
        {
            "command": "mi",
            "data": os.path.abspath(args.data),
            "family": family,
            "mode": args.mode,
            "mask": args.mask,
            "m_draws": args.m_draws,
            "burn_in": args.burn_in,
            "thin": args.thin,
            "seed": seed,
            "versions": _versions(),
        },
    )
    return 0


# --------------------------------------------------------------------------- #
# parser and entry point
# --------------------------------------------------------------------------- #


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mibma",
        description="Model-averaged multiple imputation for survey data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the Monte Carlo simulation study")
    sim.add_argument("--scenario", choices=["I", "II"], default=None)
    sim.add_argument("--config", default=None, help="key=value config file")
    sim.add_argument("--out", default=".", help="output directory")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--n-population", dest="n_population", type=int, default=None)
    sim.add_argument("--p-free", dest="p_free", type=int, default=None)
    sim.add_argument("--m-draws", dest="m_draws", type=int, default=None)
    sim.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    sim.add_argument("--thin", type=int, default=None)
    sim.add_argument("--threads", type=int, default=None)
    sim.add_argument(
        "--methods", default=None, help="comma list among MI_TRUE,MI_FULL,MI_BMA"
    )
    sim.add_argument("--save-draws", dest="save_draws", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="weighted pseudo-MLE fit on a CSV dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--family", choices=[GAUSSIAN, BINOMIAL], default=GAUSSIAN)
    fit.add_argument("--mask", default=None, help="hex bitmask; default full model")
    fit.add_argument("--out", default=".")
    fit.set_defaults(func=cmd_fit)

    mi = sub.add_parser("mi", help="multiple imputation on a CSV dataset")
    mi.add_argument("--data", required=True)
    mi.add_argument("--family", choices=[GAUSSIAN, BINOMIAL], default=GAUSSIAN)
    mi.add_argument("--mode", choices=["bma", "single"], default="bma")
    mi.add_argument("--mask", default=None)
    mi.add_argument("--m-draws", dest="m_draws", type=int, default=50)
    mi.add_argument("--burn-in", dest="burn_in", type=int, default=200)
    mi.add_argument("--thin", type=int, default=10)
    mi.add_argument("--seed", type=int, default=None)
    mi.add_argument("--out", default=".")
    mi.add_argument("--save-draws", dest="save_draws", action="store_true")
    mi.set_defaults(func=cmd_mi)
    return parser


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MibmaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
