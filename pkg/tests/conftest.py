"""Shared fixtures and dataset builders for the test suite."""

import numpy as np
import pytest
from scipy.special import expit

from mibma import Dataset, RngStream, ScenarioConfig, draw_sample, generate_population


def make_gaussian_data(
    n=60, p_free=3, beta=None, sigma=1.0, seed=0, pi_range=(0.3, 0.9), x_mean=1.0
):
    """Small synthetic Gaussian dataset with fully observed responses."""
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(x_mean, 1.2, (n, p_free))])
    if beta is None:
        beta = np.r_[[-0.5, 1.0], np.zeros(p_free - 1)]
    y = x @ beta + sigma * rng.standard_normal(n)
    pi = rng.uniform(*pi_range, n)
    return Dataset(x, y, np.ones(n), pi, "gaussian")


def make_binomial_data(n=200, p_free=3, beta=None, seed=0, pi_range=(0.3, 0.9)):
    """Small synthetic logistic dataset with fully observed responses."""
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.normal(0.5, 1.2, (n, p_free))])
    if beta is None:
        beta = np.r_[[-0.5, 1.0], np.zeros(p_free - 1)]
    y = (rng.random(n) < expit(x @ beta)).astype(float)
    pi = rng.uniform(*pi_range, n)
    return Dataset(x, y, np.ones(n), pi, "binomial")


def with_missing(data: Dataset, rate=0.4, seed=0) -> Dataset:
    """Mark a random subset of responses missing and NaN them out."""
    rng = np.random.default_rng(seed)
    delta = (rng.random(data.n) >= rate).astype(np.int8)
    y = data.y.copy()
    y[delta == 0] = np.nan
    return Dataset(data.x, y, delta, data.pi, data.family)


def scenario_sample_for_n(
    scenario: str, n_target: int, p_free: int, seed: int, complete: bool = True
) -> Dataset:
    """A scenario sample sized to roughly ``n_target`` units.

    Keeps the informative Poisson design (pi depends on y) but raises the
    sampling-model intercept so large n does not require a multi-million
    population; ``complete=True`` forces delta == 1 through the scenario's
    own response model.
    """
    psi = (800.0, 0.0) if complete else None
    if scenario == "I":
        frac = 0.29
        kw = dict(pi_coef=(1.2, -0.2))
    else:
        frac = 0.41
        kw = dict(pi_coef=(0.5, -0.3))
    if psi is not None:
        kw["psi_coef"] = psi
    n_pop = max(int(n_target / frac), 50)
    make = ScenarioConfig.scenario_i if scenario == "I" else ScenarioConfig.scenario_ii
    cfg = make(n_population=n_pop, p_free=p_free, seed=seed, **kw)
    rng = RngStream(seed)
    pop = generate_population(cfg, rng.substream(0))
    return draw_sample(pop, cfg, rng.substream(1))


@pytest.fixture
def gaussian_data():
    return make_gaussian_data()


@pytest.fixture
def binomial_data():
    return make_binomial_data()
