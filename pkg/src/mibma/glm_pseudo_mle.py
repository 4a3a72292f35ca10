"""Survey-weighted (pseudo) maximum likelihood fitting of Gaussian linear and
Bernoulli-logistic models, with or without a candidate model's zero
restrictions, plus per-unit score and Hessian contributions.

The Gaussian fit is the weighted-least-squares closed form with the weighted
residual variance returned on the log scale; the logistic fit is
Newton-Raphson with step-halving.  Estimates come back padded to the full
parameter dimension, restricted slots holding their constraint constants.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from . import kernels
from .errors import SingularDesign, SingularDispersion
from .model_space import ModelId

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"

LOG2PI = float(np.log(2.0 * np.pi))

# Residual-variance floor: an exact-fit Gaussian dataset has no usable
# dispersion estimate and poisons every downstream density.
DISPERSION_TOL = 1e-12

# Logistic coefficients beyond this magnitude are treated as separation.
SEPARATION_BOUND = 30.0

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 30


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """A sampled dataset: design matrix (intercept in column 0), response,
    response indicators, inclusion probabilities and weights w = 1/pi.

    Missing responses (delta == 0) may hold NaN; fitting functions refuse NaN
    responses, so callers either subset to complete cases or impute first.
    """

    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    pi: np.ndarray
    family: str
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        delta = np.ascontiguousarray(self.delta, dtype=np.int8)
        pi = np.ascontiguousarray(self.pi, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("x must be a 2-d design matrix")
        n, p = x.shape
        if n < p:
            raise ValueError(f"need at least as many rows as columns, got {n} < {p}")
        if not (y.shape == delta.shape == pi.shape == (n,)):
            raise ValueError("y, delta and pi must be length-n vectors")
        if not np.all(x[:, 0] == 1.0):
            raise ValueError("column 0 of x must be the intercept (all ones)")
        if not np.all((delta == 0) | (delta == 1)):
            raise ValueError("delta entries must be 0 or 1")
        if np.any(pi <= 0.0) or np.any(pi > 1.0):
            raise ValueError("inclusion probabilities must lie in (0, 1]")
        if self.family not in (GAUSSIAN, BINOMIAL):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == BINOMIAL:
            obs = y[delta == 1]
            if not np.all((obs == 0.0) | (obs == 1.0)):
                raise ValueError("binomial responses must be 0/1 where observed")
        w = self.w
        if w is None:
            w = 1.0 / pi
        else:
            w = np.ascontiguousarray(w, dtype=np.float64)
            if w.shape != (n,) or np.max(np.abs(w * pi - 1.0)) > 1e-12:
                raise ValueError("w must equal 1/pi within 1e-12")
        for name, arr in (("x", x), ("y", y), ("pi", pi), ("w", w)):
            arr.setflags(write=False)
        delta.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "w", w)

    # -- shape helpers ------------------------------------------------------ #

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p_design(self) -> int:
        return self.x.shape[1]

    @property
    def p_free(self) -> int:
        return self.p_design - 1

    @property
    def has_dispersion(self) -> bool:
        return self.family == GAUSSIAN

    @property
    def p_full(self) -> int:
        return self.p_design + (1 if self.has_dispersion else 0)

    @property
    def n_observed(self) -> int:
        return int(np.sum(self.delta))

    def full_model(self) -> ModelId:
        return ModelId.full(self.p_free, self.has_dispersion)

    def complete_cases(self) -> "Dataset":
        keep = self.delta == 1
        return Dataset(
            self.x[keep], self.y[keep], self.delta[keep], self.pi[keep], self.family
        )

    def with_y(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.x, y, self.delta, self.pi, self.family)


@dataclass(frozen=True)
class FitResult:
    """A (possibly constrained) pseudo-MLE fit, padded to the full parameter
    dimension; restricted slots of ``theta_hat`` hold their constraint
    constants and restricted rows/columns of ``v_hat`` are zero."""

    theta_hat: np.ndarray
    kappa: ModelId
    loglik: float
    converged: bool
    iterations: int
    v_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "theta_hat", _readonly(self.theta_hat))
        if self.v_hat is not None:
            object.__setattr__(self, "v_hat", _readonly(self.v_hat))

    @property
    def theta_active(self) -> np.ndarray:
        return self.theta_hat[self.kappa.active_indices()]

    def v_active(self) -> np.ndarray:
        if self.v_hat is None:
            raise ValueError("v_hat has not been attached to this fit")
        idx = self.kappa.active_indices()
        return self.v_hat[np.ix_(idx, idx)]

    def with_v_hat(self, v_hat: np.ndarray) -> "FitResult":
        return replace(self, v_hat=v_hat)


def _check_model(data: Dataset, kappa: ModelId) -> None:
    if kappa.p_free != data.p_free or kappa.dispersion != data.has_dispersion:
        raise ValueError(
            f"model (p_free={kappa.p_free}, dispersion={kappa.dispersion}) does "
            f"not match data (p_free={data.p_free}, family={data.family})"
        )


def _beta_columns(kappa: ModelId) -> tuple[np.ndarray, np.ndarray]:
    """Active and restricted design-column index arrays (beta part only)."""
    act = kappa.active_indices()
    return act[act <= kappa.p_free], kappa.restricted_indices()


def fit_pseudo_mle(data: Dataset, kappa: ModelId) -> FitResult:
    """Maximize the weighted pseudo log-likelihood over the active slots of
    ``kappa``; restricted coefficients stay pinned at their constants.

    Raises SingularDesign when the active-column weighted Gram matrix is not
    positive definite, and SingularDispersion when a Gaussian fit is exact.
    A logistic fit that hits the iteration cap or the separation bound is
    returned with ``converged=False`` rather than raised.
    """
    _check_model(data, kappa)
    if np.any(np.isnan(data.y)):
        raise ValueError(
            "response contains NaN; subset to complete cases or impute first"
        )
    b_act, b_res = _beta_columns(kappa)
    x_a = np.ascontiguousarray(data.x[:, b_act])
    theta0_res = kappa.restricted_values()
    offset = data.x[:, b_res] @ theta0_res if b_res.size else np.zeros(data.n)

    theta = kappa.theta0_full()
    if data.family == GAUSSIAN:
        gram = (x_a * data.w[:, None]).T @ x_a
        try:
            L = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            raise SingularDesign("active-column weighted Gram matrix not PD") from None
        if np.any(L.diagonal() ** 2 <= kernels.PIVOT_TOL):
            raise SingularDesign("active-column weighted Gram matrix not PD")
        rhs = x_a.T @ (data.w * (data.y - offset))
        beta = solve_triangular(L.T, solve_triangular(L, rhs, lower=True), lower=False)
        resid = data.y - offset - x_a @ beta
        wsum = float(np.sum(data.w))
        s2 = float(np.sum(data.w * resid**2)) / wsum
        if s2 < DISPERSION_TOL:
            raise SingularDispersion(f"weighted residual variance {s2:g} below 1e-12")
        loglik = -0.5 * wsum * (LOG2PI + np.log(s2)) - 0.5 * float(
            np.sum(data.w * resid**2)
        ) / s2
        theta[b_act] = beta
        theta[data.p_design] = np.log(s2)
        return FitResult(theta, kappa, float(loglik), True, 1)

    beta0 = np.zeros(b_act.size)
    beta, loglik, iters, status = kernels.logistic_newton(
        x_a,
        data.y,
        data.w,
        np.ascontiguousarray(offset),
        beta0,
        NEWTON_TOL,
        NEWTON_MAX_ITER,
        NEWTON_MAX_HALVINGS,
    )
    if status == 2:
        raise SingularDesign("weighted logistic information matrix not PD")
    converged = status == 0 and bool(np.max(np.abs(beta)) <= SEPARATION_BOUND)
    theta[b_act] = beta
    return FitResult(theta, kappa, float(loglik), converged, int(iters))


def score_hessian(
    data: Dataset, theta: np.ndarray, kappa: ModelId
) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit gradient and Hessian of log f(y_i | x_i; theta_kappa) with
    respect to the active slots, at an arbitrary active value.

    Returns ``(scores, hessians)`` of shapes (n, k) and (n, k, k), rows
    ordered by ascending active index (so log sigma^2 is last for Gaussian).
    """
    _check_model(data, kappa)
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size != data.p_full:
        raise ValueError(f"theta must have length {data.p_full}")
    r_idx = kappa.restricted_indices()
    if r_idx.size and np.max(np.abs(theta[r_idx] - kappa.restricted_values())) > 1e-9:
        raise ValueError("restricted slots of theta must equal their constants")

    b_act, _ = _beta_columns(kappa)
    x_a = data.x[:, b_act]
    kb = b_act.size
    eta = data.x @ theta[: data.p_design]

    if data.family == GAUSSIAN:
        k = kb + 1
        s2 = float(np.exp(theta[data.p_design]))
        resid = data.y - eta
        scores = np.empty((data.n, k))
        scores[:, :kb] = x_a * (resid / s2)[:, None]
        scores[:, kb] = -0.5 + resid**2 / (2.0 * s2)
        hess = np.empty((data.n, k, k))
        hess[:, :kb, :kb] = -(x_a[:, :, None] * x_a[:, None, :]) / s2
        cross = -(x_a * resid[:, None]) / s2
        hess[:, :kb, kb] = cross
        hess[:, kb, :kb] = cross
        hess[:, kb, kb] = -resid**2 / (2.0 * s2)
        return scores, hess

    mu = expit(eta)
    scores = (data.y - mu)[:, None] * x_a
    hess = -(mu * (1.0 - mu))[:, None, None] * (x_a[:, :, None] * x_a[:, None, :])
    return scores, hess
