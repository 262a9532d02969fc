"""Domain types for the square-root Poisson small-area model with noisy covariates.

Every area i carries a transformed response Z_i (= sqrt(Y_i)), a surrogate
covariate mean X_hat_i averaged over t_i secondary-survey draws, and the known
covariance Sigma_i of a single draw. The sampling variance of Z_i is fixed at
1/4 by the square-root transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Hashable, Optional, Sequence

import numpy as np

SAMPLING_VAR = 0.25

_SYM_TOL = 1e-12
_PSD_TOL = 1e-12


class Provenance(str, Enum):
    TRUE = "true"
    ESTIMATED_PR = "estimated_pr"
    ESTIMATED_YL = "estimated_yl"


class PredictorKind(str, Enum):
    BAYES = "bayes"
    DIRECT = "direct"
    PROPOSED = "proposed"
    B_SUBSTITUTE = "b_substitute"
    OPTIMAL = "optimal"
    CUSTOM_WEIGHT = "custom_weight"


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def check_sigma(sigma: np.ndarray, p: int) -> None:
    """Raise ValueError unless ``sigma`` is a valid p x p single-draw covariance.

    The intercept row and column must be exactly zero.
    """
    if sigma.shape != (p, p):
        raise ValueError(f"sigma must be {p}x{p}, got {sigma.shape}")
    scale = max(1.0, float(np.max(np.abs(sigma))))
    if np.max(np.abs(sigma - sigma.T)) > _SYM_TOL * scale:
        raise ValueError("sigma is not symmetric")
    if np.any(sigma[0, :] != 0.0) or np.any(sigma[:, 0] != 0.0):
        raise ValueError("sigma must have a zero intercept row and column")
    if p > 1 and np.min(np.linalg.eigvalsh(sigma)) < -_PSD_TOL * scale:
        raise ValueError("sigma is not positive semidefinite")


@dataclass(frozen=True)
class AreaObservation:
    """Observed data for one small area.

    Either ``y`` (a raw count) or ``z`` must be given; when both are present
    they have to agree, ``z == sqrt(y)``.
    """

    area_id: Hashable
    t: int
    x_hat: np.ndarray
    sigma: np.ndarray
    y: Optional[int] = None
    z: Optional[float] = None

    def __post_init__(self):
        if self.y is None and self.z is None:
            raise ValueError(f"area {self.area_id!r}: one of y or z is required")
        if self.y is not None:
            if int(self.y) != self.y or self.y < 0:
                raise ValueError(f"area {self.area_id!r}: y must be a nonnegative integer")
            root = math.sqrt(self.y)
            if self.z is None:
                object.__setattr__(self, "z", root)
            elif not math.isclose(self.z, root, rel_tol=1e-12, abs_tol=1e-300):
                raise ValueError(
                    f"area {self.area_id!r}: z={self.z} disagrees with sqrt(y)={root}"
                )
        z = float(self.z)
        if not math.isfinite(z):
            raise ValueError(f"area {self.area_id!r}: z must be finite")
        object.__setattr__(self, "z", z)

        if int(self.t) != self.t or self.t < 1:
            raise ValueError(f"area {self.area_id!r}: t must be a positive integer")
        object.__setattr__(self, "t", int(self.t))

        x_hat = _frozen_array(self.x_hat, 1, "x_hat")
        if x_hat[0] != 1.0:
            raise ValueError(f"area {self.area_id!r}: first entry of x_hat must be the intercept 1")
        sigma = _frozen_array(self.sigma, 2, "sigma")
        check_sigma(sigma, x_hat.shape[0])
        object.__setattr__(self, "x_hat", x_hat)
        object.__setattr__(self, "sigma", sigma)

    @property
    def p(self) -> int:
        return self.x_hat.shape[0]


@dataclass(frozen=True)
class ModelParameters:
    """Random-effect variance ``a`` and regression coefficients ``beta``.

    ``used_pinv`` marks estimates that needed the Moore-Penrose fallback.
    """

    a: float
    beta: np.ndarray
    provenance: Provenance = Provenance.TRUE
    used_pinv: bool = False

    def __post_init__(self):
        a = float(self.a)
        if not (a >= 0.0 and math.isfinite(a)):
            raise ValueError(f"a must be a finite nonnegative number, got {self.a}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", _frozen_array(self.beta, 1, "beta"))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def big_b(self) -> float:
        return SAMPLING_VAR / (SAMPLING_VAR + self.a)


@dataclass(frozen=True)
class ShrinkageProfile:
    """Per-area shrinkage scalars.

    ``gamma``, ``gamma_a`` and ``gamma_b`` split the total variance
    ``a + 1/4 + b/t`` into its sampling, random-effect and
    measurement-error shares.
    """

    a: float
    b: float
    b_over_t: float
    big_b: float
    gamma: float
    gamma_a: float
    gamma_b: float
    gamma_x: Optional[float] = None

    @property
    def total_var(self) -> float:
        return self.a + SAMPLING_VAR + self.b_over_t


def shrinkage_profile(a: float, b: float, t: float, xbeta: Optional[float] = None) -> ShrinkageProfile:
    """Build a profile directly from the scalars (a, b_i, t_i)."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    if b < 0:
        raise ValueError("b must be nonnegative")
    q = b / t
    total = a + SAMPLING_VAR + q
    return ShrinkageProfile(
        a=float(a),
        b=float(b),
        b_over_t=float(q),
        big_b=SAMPLING_VAR / (SAMPLING_VAR + a),
        gamma=SAMPLING_VAR / total,
        gamma_a=a / total,
        gamma_b=q / total,
        gamma_x=None if xbeta is None else float(xbeta) ** 2 / total,
    )


def derive_profile(
    params: ModelParameters,
    obs: AreaObservation,
    xbeta_surrogate: Optional[float] = None,
) -> ShrinkageProfile:
    """Shrinkage profile of one area under the given parameters.

    ``gamma_x`` is filled only when ``xbeta_surrogate`` is supplied; empirical
    pipelines pass ``X_hat_i @ beta_hat`` here.
    """
    if params.p != obs.p:
        raise ValueError(f"beta has length {params.p} but x_hat has length {obs.p}")
    b = float(params.beta @ obs.sigma @ params.beta)
    # PSD sigma can still round to a tiny negative quadratic form
    b = max(b, 0.0)
    return shrinkage_profile(params.a, b, obs.t, xbeta_surrogate)


@dataclass(frozen=True)
class PredictorReport:
    area_id: Any
    predictor_kind: PredictorKind
    weight: float
    correction: float
    value: float
    value_truncated: float = field(default=float("nan"))
    theoretical_bias: Optional[float] = None
    theoretical_mspe: Optional[float] = None
    xbeta_is_surrogate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "predictor_kind", PredictorKind(self.predictor_kind))
        object.__setattr__(self, "value_truncated", max(0.0, float(self.value)))

    def with_updates(self, **changes) -> "PredictorReport":
        return replace(self, **changes)


@dataclass(frozen=True)
class SimulationSummary:
    """Monte Carlo summary of one predictor within one t stratum."""

    predictor_kind: str
    m: int
    stratum: int
    empirical_bias: float
    empirical_mspe: float
    mc_standard_error: float
    bias_standard_error: float
    trials: int
    theoretical_bias: Optional[float] = None
    theoretical_mspe: Optional[float] = None


def stack_observations(areas: Sequence[AreaObservation]):
    """Column arrays (z, x_hat, t, sigma) for a list of areas."""
    if not areas:
        raise ValueError("no areas given")
    p = areas[0].p
    if any(obs.p != p for obs in areas):
        raise ValueError("areas disagree on the number of covariates")
    z = np.array([obs.z for obs in areas])
    x_hat = np.vstack([obs.x_hat for obs in areas])
    t = np.array([obs.t for obs in areas], dtype=float)
    sigma = np.stack([obs.sigma for obs in areas])
    return z, x_hat, t, sigma
