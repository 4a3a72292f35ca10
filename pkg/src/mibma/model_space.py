"""Candidate models, the exhaustively enumerated model set, and priors.

Parameter layout, fixed package-wide:

* index 0                intercept (always active)
* indices 1..p_free      selectable regression coefficients, slot j of the
                         bitmask controls index j+1
* index p_free+1         log sigma^2, present and always active for the
                         Gaussian family only

A candidate model restricts the inactive selectable coefficients to constants
(zero unless the model carries explicit constraint values).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ModelSpaceTooLarge

MAX_P_FREE = 20


@dataclass(frozen=True)
class ModelId:
    """One candidate model: a bitmask over the selectable coefficient slots.

    ``theta0`` optionally gives, per selectable slot, the constant the
    coefficient is pinned to when the slot is inactive (all zeros when None).
    """

    active_mask: int
    p_free: int
    dispersion: bool
    theta0: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not 0 <= self.p_free <= MAX_P_FREE:
            raise ValueError(f"p_free must be in [0, {MAX_P_FREE}]")
        if not 0 <= self.active_mask < (1 << self.p_free):
            raise ValueError("active_mask has bits outside the selectable slots")
        if self.theta0 is not None and len(self.theta0) != self.p_free:
            raise ValueError("theta0 must have one entry per selectable slot")

    # -- sizes ------------------------------------------------------------- #

    @property
    def p_full(self) -> int:
        return 1 + self.p_free + (1 if self.dispersion else 0)

    @property
    def n_active(self) -> int:
        return bin(self.active_mask).count("1") + 1 + (1 if self.dispersion else 0)

    @property
    def n_restricted(self) -> int:
        return self.p_free - bin(self.active_mask).count("1")

    # -- index sets -------------------------------------------------------- #

    @property
    def forced_active(self) -> tuple[int, ...]:
        return (0, self.p_free + 1) if self.dispersion else (0,)

    def active_indices(self) -> np.ndarray:
        idx = [0]
        idx += [j + 1 for j in range(self.p_free) if self.active_mask >> j & 1]
        if self.dispersion:
            idx.append(self.p_free + 1)
        return np.asarray(idx, dtype=np.intp)

    def restricted_indices(self) -> np.ndarray:
        idx = [j + 1 for j in range(self.p_free) if not self.active_mask >> j & 1]
        return np.asarray(idx, dtype=np.intp)

    def restricted_values(self) -> np.ndarray:
        """Constraint constants for the restricted slots, in index order."""
        if self.theta0 is None:
            return np.zeros(self.n_restricted)
        return np.asarray(
            [self.theta0[j] for j in range(self.p_free) if not self.active_mask >> j & 1]
        )

    def active_bool(self) -> np.ndarray:
        """Boolean activity over the full parameter vector."""
        out = np.zeros(self.p_full, dtype=bool)
        out[self.active_indices()] = True
        return out

    def theta0_full(self) -> np.ndarray:
        """Full-length vector holding the constraint constants on restricted
        slots and zero elsewhere."""
        out = np.zeros(self.p_full)
        out[self.restricted_indices()] = self.restricted_values()
        return out

    # -- relations and serialization ---------------------------------------- #

    def contains(self, other: "ModelId") -> bool:
        """True when every slot active in ``other`` is active here (nesting)."""
        return (other.active_mask & ~self.active_mask) == 0

    @property
    def mask_hex(self) -> str:
        return format(self.active_mask, "#x")

    @classmethod
    def from_hex(
        cls, mask_hex: str, p_free: int, dispersion: bool
    ) -> "ModelId":
        return cls(int(mask_hex, 16), p_free, dispersion)

    @classmethod
    def full(cls, p_free: int, dispersion: bool) -> "ModelId":
        return cls((1 << p_free) - 1, p_free, dispersion)

    @classmethod
    def null(cls, p_free: int, dispersion: bool) -> "ModelId":
        return cls(0, p_free, dispersion)


def enumerate_models(p_free: int, dispersion: bool) -> list[ModelId]:
    """All 2**p_free candidate models (intercept and, for the Gaussian family,
    log sigma^2 are active in every one)."""
    if p_free < 0:
        raise ValueError("p_free must be nonnegative")
    if p_free > MAX_P_FREE:
        raise ModelSpaceTooLarge(
            f"2**{p_free} models exceed the exhaustive-enumeration cap 2**{MAX_P_FREE}"
        )
    return [ModelId(m, p_free, dispersion) for m in range(1 << p_free)]


def partition_indices(kappa: ModelId) -> tuple[np.ndarray, np.ndarray]:
    """(active, restricted) global parameter indices, each ascending."""
    return kappa.active_indices(), kappa.restricted_indices()


# --------------------------------------------------------------------------- #
# priors
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class NormalPrior:
    """Independent N(mean, variance) prior on every active slot.

    Defaults are the deliberately vague N(0, 1e5) used throughout the
    simulation study (applied to coefficients and to log sigma^2 alike).
    """

    mean: float = 0.0
    variance: float = 1e5

    def logpdf(self, theta_active: np.ndarray, kappa: ModelId) -> float:
        dev = np.asarray(theta_active, dtype=np.float64) - self.mean
        k = dev.size
        return float(
            -0.5 * k * (np.log(2.0 * np.pi) + np.log(self.variance))
            - 0.5 * float(dev @ dev) / self.variance
        )


@dataclass(frozen=True)
class UniformBoxPrior:
    """Uniform prior on an axis-aligned box over the full parameter indices.

    Only the entries at a model's active indices participate; the log-density
    is -sum(log(hi - lo)) inside the box and -inf outside.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have equal length")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("box must have positive width in every coordinate")

    def logpdf(self, theta_active: np.ndarray, kappa: ModelId) -> float:
        idx = kappa.active_indices()
        lo = np.asarray(self.lo)[idx]
        hi = np.asarray(self.hi)[idx]
        t = np.asarray(theta_active, dtype=np.float64)
        if np.any(t < lo) or np.any(t > hi):
            return -np.inf
        return float(-np.sum(np.log(hi - lo)))


def prior_logdensity(theta_active, kappa: ModelId, prior) -> float:
    """Log prior density of an active-parameter vector under model ``kappa``."""
    theta_active = np.asarray(theta_active, dtype=np.float64).ravel()
    if theta_active.size != kappa.n_active:
        raise ValueError(
            f"theta_active has length {theta_active.size}, model has "
            f"{kappa.n_active} active slots"
        )
    return prior.logpdf(theta_active, kappa)


class ModelPrior:
    """Prior weights over candidate models; uniform by default."""

    def __init__(self, weights: Optional[dict[int, float]] = None):
        if weights is not None:
            total = float(sum(weights.values()))
            if total <= 0 or any(w < 0 for w in weights.values()):
                raise ValueError("model prior weights must be nonnegative, sum > 0")
            weights = {m: w / total for m, w in weights.items()}
        self.weights = weights

    @classmethod
    def uniform(cls) -> "ModelPrior":
        return cls(None)

    def log_weight(self, kappa: ModelId) -> float:
        if self.weights is None:
            return 0.0
        w = self.weights.get(kappa.active_mask, 0.0)
        return float(np.log(w)) if w > 0 else -np.inf
