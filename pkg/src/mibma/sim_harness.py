"""Finite-population simulation study: population generation, informative
Poisson sampling with item nonresponse, Monte Carlo replication over the
estimation arms, and summary metrics.

Responses follow a linear model with iid normal covariates (continuous
scenario "I") or a logistic model (binary scenario "II").  Response
indicators depend only on x1 (missingness at random at the population level)
while inclusion probabilities depend on y, so the design is informative.
Replications are independent and seeded by (base seed, replication), which
makes results invariant to execution order and safe to parallelize.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .core_stats import RngStream
from .design_variance import DesignInfo
from .errors import EmptySample, MibmaError
from .glm_pseudo_mle import BINOMIAL, GAUSSIAN, Dataset
from .imputation_engine import MIConfig, MIOutput, run_mi_bma, run_mi_single_model
from .model_space import ModelId, enumerate_models

MI_TRUE = "MI_TRUE"
MI_FULL = "MI_FULL"
MI_BMA = "MI_BMA"
ALL_METHODS = (MI_TRUE, MI_FULL, MI_BMA)

TARGETS = ("beta0", "beta1")
Z_95 = 1.96

# Selection rule for reporting: a variable counts as selected when its
# inclusion frequency over the imputation draws reaches one half
# (median-probability rule).
SELECTION_THRESHOLD = 0.5


@dataclass(frozen=True)
class ScenarioConfig:
    """Superpopulation, response and sampling models for one scenario.

    ``psi_coef`` gives logit(psi_i) = a + b * x_i1 for the response indicator;
    ``pi_coef`` gives logit(1 - pi_i) = a + b * y_i for the sampling model.
    """

    scenario: str
    n_population: int
    p_free: int
    beta: tuple[float, ...]
    sigma2: Optional[float]
    x_mean: float
    x_var: float
    psi_coef: tuple[float, float]
    pi_coef: tuple[float, float]
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("I", "II"):
            raise ValueError("scenario must be 'I' or 'II'")
        if self.p_free < 1:
            raise ValueError("need at least one selectable covariate")
        if len(self.beta) != self.p_free + 1:
            raise ValueError("beta must have length p_free + 1 (intercept first)")
        if self.scenario == "I" and (self.sigma2 is None or self.sigma2 < 0):
            raise ValueError("scenario I needs sigma2 >= 0")

    @property
    def family(self) -> str:
        return GAUSSIAN if self.scenario == "I" else BINOMIAL

    @property
    def has_dispersion(self) -> bool:
        return self.scenario == "I"

    def true_model(self) -> ModelId:
        mask = 0
        for j in range(self.p_free):
            if self.beta[j + 1] != 0.0:
                mask |= 1 << j
        return ModelId(mask, self.p_free, self.has_dispersion)

    def theta_true(self) -> np.ndarray:
        theta = list(self.beta)
        if self.has_dispersion:
            theta.append(float(np.log(self.sigma2)) if self.sigma2 > 0 else -np.inf)
        return np.asarray(theta)

    @classmethod
    def scenario_i(
        cls,
        n_population: int = 30000,
        p_free: int = 12,
        beta: Optional[Sequence[float]] = None,
        sigma2: float = 1.0,
        x_mean: float = 2.0,
        x_var: float = 2.0,
        psi_coef: tuple[float, float] = (0.2, 0.1),
        pi_coef: tuple[float, float] = (4.5, -0.2),
        seed: int = 0,
    ) -> "ScenarioConfig":
        if beta is None:
            beta = (-0.5, 1.0) + (0.0,) * (p_free - 1)
        return cls(
            "I", n_population, p_free, tuple(beta), sigma2, x_mean, x_var,
            tuple(psi_coef), tuple(pi_coef), seed,
        )

    @classmethod
    def scenario_ii(
        cls,
        n_population: int = 30000,
        p_free: int = 12,
        beta: Optional[Sequence[float]] = None,
        x_mean: float = 1.0,
        x_var: float = 2.0,
        psi_coef: tuple[float, float] = (0.2, 0.2),
        pi_coef: tuple[float, float] = (4.4, -0.3),
        seed: int = 0,
    ) -> "ScenarioConfig":
        if beta is None:
            beta = (-0.5, 1.0) + (0.0,) * (p_free - 1)
        return cls(
            "II", n_population, p_free, tuple(beta), None, x_mean, x_var,
            tuple(psi_coef), tuple(pi_coef), seed,
        )


@dataclass(frozen=True)
class Population:
    x: np.ndarray
    y: np.ndarray


def generate_population(cfg: ScenarioConfig, rng: RngStream) -> Population:
    """Draw a finite population from the scenario's superpopulation model."""
    g = rng.generator
    n = cfg.n_population
    x = np.empty((n, cfg.p_free + 1))
    x[:, 0] = 1.0
    x[:, 1:] = g.normal(cfg.x_mean, np.sqrt(cfg.x_var), size=(n, cfg.p_free))
    eta = x @ np.asarray(cfg.beta)
    if cfg.scenario == "I":
        y = eta + np.sqrt(cfg.sigma2) * g.standard_normal(n)
    else:
        y = (g.random(n) < expit(eta)).astype(np.float64)
    return Population(x, y)


def draw_sample(population: Population, cfg: ScenarioConfig, rng: RngStream) -> Dataset:
    """Attach response indicators, then Poisson-sample the population.

    The response indicator depends only on x1, so missingness is at random at
    the population level; the inclusion probability depends on y, so the
    design is informative.  An empty draw is retried once before EmptySample.
    """
    g = rng.generator
    x, y = population.x, population.y
    psi = expit(cfg.psi_coef[0] + cfg.psi_coef[1] * x[:, 1])
    delta = (g.random(x.shape[0]) < psi).astype(np.int8)
    pi = 1.0 - expit(cfg.pi_coef[0] + cfg.pi_coef[1] * y)
    for _ in range(2):
        sel = g.random(x.shape[0]) < pi
        if np.any(sel):
            return Dataset(x[sel], y[sel], delta[sel], pi[sel], cfg.family)
    raise EmptySample("Poisson sampling selected no units in two attempts")


# --------------------------------------------------------------------------- #
# Monte Carlo driver
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class TargetMetrics:
    cp: float
    var: float
    bias: float
    mse: float


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    method: str
    targets: dict[str, TargetMetrics]
    tpr: float
    tnr: float
    replications: int
    failures: int


def _mask_missing(sample: Dataset) -> Dataset:
    """Replace unobserved responses with NaN so nothing downstream can peek."""
    y = sample.y.copy()
    y[sample.delta == 0] = np.nan
    return sample.with_y(y)


def _write_rep_draws(path, outputs: dict[str, MIOutput]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "kind", "mask", "theta"])
        for method, res in outputs.items():
            for d in res.draws:
                writer.writerow(
                    [method, "draw", d.kappa.mask_hex]
                    + [f"{v:.17g}" for v in d.theta]
                )
            writer.writerow(
                [method, "pooled", ""] + [f"{v:.17g}" for v in res.theta_mi]
            )


def _run_one_replication(
    cfg: ScenarioConfig,
    methods: Sequence[str],
    mi_config: MIConfig,
    r: int,
    draws_dir=None,
) -> dict:
    base = RngStream(cfg.seed)
    pop = generate_population(cfg, base.substream(r, 0))
    try:
        sample = _mask_missing(draw_sample(pop, cfg, base.substream(r, 1)))
    except (MibmaError, ValueError) as exc:
        return {"ok": False, "failed": list(methods), "error": str(exc)}

    design = DesignInfo.poisson()
    out: dict = {"ok": True, "failed": [], "results": {}}
    outputs: dict[str, MIOutput] = {}
    for idx, method in enumerate(methods):
        seed_m = base.substream(r, 2 + idx).stream_id
        config = replace(mi_config, seed=seed_m)
        try:
            if method == MI_TRUE:
                res = run_mi_single_model(sample, cfg.true_model(), config=config, design=design)
            elif method == MI_FULL:
                res = run_mi_single_model(
                    sample, ModelId.full(cfg.p_free, cfg.has_dispersion),
                    config=config, design=design,
                )
            elif method == MI_BMA:
                res = run_mi_bma(
                    sample, enumerate_models(cfg.p_free, cfg.has_dispersion),
                    config=config, design=design,
                )
            else:
                raise ValueError(f"unknown method {method!r}")
        except (MibmaError, ValueError) as exc:
            out["ok"] = False
            out["failed"].append(method)
            out["error"] = str(exc)
            return out
        outputs[method] = res
        est = res.theta_mi[:2].copy()
        se = np.sqrt(np.array([res.v_mi[0, 0], res.v_mi[1, 1]]))
        rec = {"est": est, "se": se}
        if method == MI_BMA:
            rec["selected"] = res.selected_set(SELECTION_THRESHOLD)
        out["results"][method] = rec
    if draws_dir is not None:
        _write_rep_draws(os.path.join(draws_dir, f"draws_{r}.csv"), outputs)
    return out


def run_monte_carlo(
    cfg: ScenarioConfig,
    methods: Sequence[str],
    r_replications: int,
    mi_config: MIConfig,
    n_jobs: Optional[int] = None,
    draws_dir=None,
) -> list[MetricsRow]:
    """Run ``r_replications`` independent replications of the simulation study
    and summarize each method.

    Chain seeds derive from (cfg.seed, replication, method), so results do not
    depend on execution order or on ``n_jobs`` (``mi_config.seed`` is
    ignored).  A replication in which any arm fails is dropped from every
    method's summary; the failing arm's ``failures`` count records it.  With
    ``draws_dir`` set, each replication writes its per-draw records to
    ``draws_<r>.csv`` there.
    """
    if r_replications < 2:
        raise ValueError("need at least 2 replications")
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}")
    if draws_dir is not None:
        os.makedirs(draws_dir, exist_ok=True)

    runner = Parallel(n_jobs=n_jobs or 1, prefer="processes")
    reps = runner(
        delayed(_run_one_replication)(cfg, tuple(methods), mi_config, r, draws_dir)
        for r in range(r_replications)
    )

    failures = {m: 0 for m in methods}
    kept = []
    for rep in reps:
        if rep["ok"]:
            kept.append(rep["results"])
        else:
            for m in rep["failed"]:
                failures[m] += 1
    if len(kept) < 2:
        raise MibmaError(
            f"only {len(kept)} of {r_replications} replications succeeded"
        )

    truth = np.asarray(cfg.beta[:2])
    relevant = np.array(
        [cfg.beta[j + 1] != 0.0 for j in range(cfg.p_free)], dtype=bool
    )
    rows = []
    for method in methods:
        est = np.array([rep[method]["est"] for rep in kept])
        se = np.array([rep[method]["se"] for rep in kept])
        targets = {}
        for j, name in enumerate(TARGETS):
            err = est[:, j] - truth[j]
            cover = np.abs(err) <= Z_95 * se[:, j]
            targets[name] = TargetMetrics(
                cp=float(np.mean(cover)),
                var=float(np.var(est[:, j], ddof=1)),
                bias=float(np.mean(err)),
                mse=float(np.mean(err**2)),
            )
        if method == MI_TRUE:
            tpr, tnr = 1.0, 1.0
        elif method == MI_FULL:
            tpr, tnr = 1.0, 0.0
        else:
            tprs, tnrs = [], []
            for rep in kept:
                selected = rep[method]["selected"]
                tprs.append(float(np.mean(selected[relevant])) if relevant.any() else 1.0)
                if (~relevant).any():
                    tnrs.append(float(np.mean(~selected[~relevant])))
                else:
                    tnrs.append(1.0)
            tpr, tnr = float(np.mean(tprs)), float(np.mean(tnrs))
        rows.append(
            MetricsRow(
                scenario=cfg.scenario,
                method=method,
                targets=targets,
                tpr=tpr,
                tnr=tnr,
                replications=len(kept),
                failures=failures[method],
            )
        )
    return rows


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    """One CSV line per (method, target); floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario", "method", "target", "cp", "var", "bias", "mse",
             "tpr", "tnr", "replications", "failures"]
        )
        for row in rows:
            for target, tm in row.targets.items():
                writer.writerow(
                    [row.scenario, row.method, target]
                    + [f"{v:.17g}" for v in (tm.cp, tm.var, tm.bias, tm.mse, row.tpr, row.tnr)]
                    + [row.replications, row.failures]
                )
