"""Seeded Monte Carlo study of the predictors under the synthetic design.

Substream 0 of the seed generates the fixed design; trial ``k`` draws from
substream ``k + 1``. Per-trial results are written into preallocated slots and
reduced in trial order, so summaries do not depend on the number of worker
threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np

from .estimation import pr_arrays, yl_arrays
from .model import SAMPLING_VAR, AreaObservation, SimulationSummary
from .numerics import RandomStream, seeded_stream
from .predictors import (
    mspe_value,
    negative_probabilities,
    optimal_weights,
    squared_bias,
)

PREDICTORS = (
    "bp",
    "direct",
    "proposed",
    "proposed_pr",
    "proposed_yl",
    "b_substitute",
    "b_substitute_pr",
    "b_substitute_yl",
    "optimal",
    "optimal_pr",
    "optimal_yl",
)
KNOWN_PARAMETER_PREDICTORS = ("bp", "direct", "proposed", "b_substitute", "optimal")
_IDX = {name: k for k, name in enumerate(PREDICTORS)}

SIGMA_POISSON = "poisson10_over_10_diagonal"
RESPONSE_MODES = ("normal_approx", "exact_poisson")
X_REDRAW_MODES = ("fixed_across_trials", "redrawn_per_trial")
# how the YL variance step scales sigma: single draw, or divided by t
YL_SIGMA_MODES = ("per_draw", "averaged")
DEFAULT_BETA = (1.0, 0.5, 1.5, 1.0, 0.3, 2.0)


@dataclass(frozen=True)
class ScenarioConfig:
    m: int
    trials: int
    seed: int
    a_true: float = 0.2
    beta_true: tuple = DEFAULT_BETA
    t_pattern: tuple = ((10, 0.5), (100, 0.5))
    x_mean: float = 4.0
    x_sd: float = 1.0
    sigma_gen: Union[str, np.ndarray] = SIGMA_POISSON
    response_mode: str = "normal_approx"
    x_redraw: str = "fixed_across_trials"
    yl_sigma: str = "per_draw"

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be a positive integer")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "trials", int(self.trials))
        object.__setattr__(self, "seed", int(self.seed))
        if not (self.a_true >= 0 and math.isfinite(self.a_true)):
            raise ValueError("a_true must be finite and nonnegative")
        beta = tuple(float(b) for b in self.beta_true)
        if len(beta) < 2:
            raise ValueError("beta_true needs an intercept and at least one covariate")
        object.__setattr__(self, "beta_true", beta)
        pattern = tuple((int(t), float(f)) for t, f in self.t_pattern)
        if not pattern or any(t < 1 or f < 0 for t, f in pattern):
            raise ValueError("t_pattern entries must be (t >= 1, fraction >= 0)")
        if abs(sum(f for _, f in pattern) - 1.0) > 1e-9:
            raise ValueError("t_pattern fractions must sum to 1")
        if len({t for t, _ in pattern}) != len(pattern):
            raise ValueError("t_pattern values must be distinct")
        object.__setattr__(self, "t_pattern", pattern)
        if self.x_sd < 0:
            raise ValueError("x_sd must be nonnegative")
        if isinstance(self.sigma_gen, str):
            if self.sigma_gen != SIGMA_POISSON:
                raise ValueError(f"unknown sigma_gen {self.sigma_gen!r}")
        else:
            object.__setattr__(self, "sigma_gen", _full_sigma(self.sigma_gen, len(beta)))
        if self.response_mode not in RESPONSE_MODES:
            raise ValueError(f"response_mode must be one of {RESPONSE_MODES}")
        if self.x_redraw not in X_REDRAW_MODES:
            raise ValueError(f"x_redraw must be one of {X_REDRAW_MODES}")
        if self.yl_sigma not in YL_SIGMA_MODES:
            raise ValueError(f"yl_sigma must be one of {YL_SIGMA_MODES}")

    @property
    def p(self) -> int:
        return len(self.beta_true)

    def t_values(self) -> np.ndarray:
        """Blockwise t assignment: the first block gets the first t value."""
        counts = [int(round(f * self.m)) for _, f in self.t_pattern]
        counts[-1] = self.m - sum(counts[:-1])
        if counts[-1] < 0:
            raise ValueError("t_pattern does not fit m")
        return np.repeat([float(t) for t, _ in self.t_pattern], counts)

    def strata(self) -> list[int]:
        present = set(self.t_values())
        return [t for t, _ in self.t_pattern if t in present]


def _full_sigma(matrix, p: int) -> np.ndarray:
    """Accept a k x k covariate block or a full p x p matrix with zero intercept."""
    s = np.array(matrix, dtype=float)
    if s.ndim == 0:
        s = np.full((p - 1, p - 1), float(s)) if s == 0 else None
        if s is None:
            raise ValueError("a scalar sigma_gen must be 0")
    if s.shape == (p - 1, p - 1):
        full = np.zeros((p, p))
        full[1:, 1:] = s
        s = full
    if s.shape != (p, p):
        raise ValueError(f"fixed sigma must be {p - 1}x{p - 1} or {p}x{p}")
    if np.any(s[0] != 0) or np.any(s[:, 0] != 0):
        raise ValueError("fixed sigma must have a zero intercept row and column")
    if not np.allclose(s, s.T) or np.min(np.linalg.eigvalsh(s)) < -1e-12:
        raise ValueError("fixed sigma must be symmetric positive semidefinite")
    s.setflags(write=False)
    return s


def _psd_factor(sigma: np.ndarray) -> np.ndarray:
    """L with L @ L.T == sigma; works for singular PSD matrices."""
    vals, vecs = np.linalg.eigh(sigma)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class Design:
    """True covariates and measurement-error structure shared by trials."""

    x: np.ndarray  # (m, p) including the intercept column
    sigma: np.ndarray  # (p, p) single-draw covariance, same for every area
    t: np.ndarray  # (m,)
    sigma_factor: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.sigma_factor is None:
            object.__setattr__(self, "sigma_factor", _psd_factor(self.sigma))


def _draw_design(config: ScenarioConfig, stream: RandomStream) -> Design:
    m, p = config.m, config.p
    x = np.ones((m, p))
    x[:, 1:] = stream.normal((m, p - 1), loc=config.x_mean, scale=config.x_sd)
    if isinstance(config.sigma_gen, str):
        sigma = np.zeros((p, p))
        sigma[1:, 1:] = np.diag(stream.poisson(10.0, p - 1) / 10.0)
    else:
        sigma = np.array(config.sigma_gen)
    return Design(x=x, sigma=sigma, t=config.t_values())


def generate_scenario(config: ScenarioConfig) -> Design:
    """The fixed design drawn from substream 0 of the seed."""
    return _draw_design(config, seeded_stream(config.seed, 0))


@dataclass(frozen=True)
class TrialData:
    design: Design
    theta: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    x_hat: np.ndarray
    y: Optional[np.ndarray] = None

    def observations(self) -> list[AreaObservation]:
        return [
            AreaObservation(
                area_id=i + 1,
                t=int(self.design.t[i]),
                x_hat=self.x_hat[i],
                sigma=self.design.sigma,
                y=None if self.y is None else int(self.y[i]),
                z=float(self.z[i]),
            )
            for i in range(self.z.shape[0])
        ]


def run_trial(design: Optional[Design], config: ScenarioConfig, trial_index: int) -> TrialData:
    """Draw one replicate of (lambda, observed data).

    With ``x_redraw='redrawn_per_trial'`` the design is drawn from the trial's
    own stream and ``design`` is ignored.
    """
    stream = seeded_stream(config.seed, trial_index + 1)
    if config.x_redraw == "redrawn_per_trial" or design is None:
        design = _draw_design(config, stream)
    m, p = design.x.shape
    beta = np.asarray(config.beta_true)
    v = stream.normal(m, scale=math.sqrt(config.a_true))
    e = stream.normal(m, scale=math.sqrt(SAMPLING_VAR))
    std = stream.normal((m, p))
    delta = (std @ design.sigma_factor.T) / np.sqrt(design.t)[:, None]
    delta[:, 0] = 0.0
    theta = design.x @ beta + v
    lam = theta * theta
    x_hat = design.x + delta
    y = None
    if config.response_mode == "exact_poisson":
        y = stream.poisson(lam)
        z = np.sqrt(y)
    else:
        z = theta + e
    return TrialData(design=design, theta=theta, lam=lam, z=z, x_hat=x_hat, y=y)


def _corrected(w, z, xb, a, q):
    return (w * z + (1.0 - w) * xb) ** 2 - squared_bias(w, a, q)


@dataclass
class TrialOutcome:
    """Per-area arrays for one trial, rows indexed like ``PREDICTORS``."""

    values: np.ndarray
    weights: np.ndarray
    theo_bias: np.ndarray
    theo_mspe: np.ndarray
    xbeta: np.ndarray
    neg_prob_max: float
    fallbacks: tuple


def evaluate_trial(trial: TrialData, config: ScenarioConfig) -> TrialOutcome:
    """All eleven predictors for every area of one trial."""
    d = trial.design
    m = d.x.shape[0]
    a = config.a_true
    beta = np.asarray(config.beta_true)
    z, x_hat, t = trial.z, trial.x_hat, d.t
    k = len(PREDICTORS)
    values = np.empty((k, m))
    weights = np.empty((k, m))
    theo_bias = np.full((k, m), np.nan)
    theo_mspe = np.full((k, m), np.nan)

    mu = d.x @ beta
    mu_hat = x_hat @ beta
    q = float(beta @ d.sigma @ beta) / t
    big_b = SAMPLING_VAR / (SAMPLING_VAR + a)
    gamma = SAMPLING_VAR / (SAMPLING_VAR + a + q)

    i = _IDX["bp"]
    values[i] = ((1.0 - big_b) * z + big_b * mu) ** 2 + (1.0 - big_b) * SAMPLING_VAR
    weights[i] = 1.0 - big_b
    theo_bias[i] = 0.0
    theo_mspe[i] = mspe_value(1.0 - big_b, mu, a, 0.0)

    i = _IDX["direct"]
    values[i] = z * z - SAMPLING_VAR
    weights[i] = 1.0
    theo_bias[i] = 0.0
    theo_mspe[i] = mspe_value(1.0, mu, a, q)

    i = _IDX["proposed"]
    w = 1.0 - gamma
    values[i] = _corrected(w, z, mu_hat, a, q)
    weights[i] = w
    theo_bias[i] = 0.0
    theo_mspe[i] = mspe_value(w, mu, a, q)

    i = _IDX["b_substitute"]
    values[i] = ((1.0 - big_b) * z + big_b * mu_hat) ** 2 + (1.0 - big_b) * SAMPLING_VAR
    weights[i] = 1.0 - big_b
    theo_bias[i] = big_b * big_b * q
    theo_mspe[i] = mspe_value(1.0 - big_b, mu, a, q) + theo_bias[i] ** 2

    i = _IDX["optimal"]
    w0, mspe0 = optimal_weights(mu, a, q)
    values[i] = _corrected(w0, z, mu_hat, a, q)
    weights[i] = w0
    theo_bias[i] = 0.0
    theo_mspe[i] = mspe0

    neg = max(
        float(np.max(negative_probabilities(1.0, mu, a, q))),
        float(np.max(negative_probabilities(1.0 - gamma, mu, a, q))),
        float(np.max(negative_probabilities(w0, mu, a, q))),
    )

    sigma_stack = np.broadcast_to(d.sigma, (m,) + d.sigma.shape)
    fits = {
        "pr": pr_arrays(z, x_hat),
        "yl": yl_arrays(z, x_hat, t, sigma_stack, sigma_per_draw=config.yl_sigma == "per_draw"),
    }
    for method, (a_hat, beta_hat, _, _) in fits.items():
        mu_e = x_hat @ beta_hat
        q_e = max(float(beta_hat @ d.sigma @ beta_hat), 0.0) / t
        b_e = SAMPLING_VAR / (SAMPLING_VAR + a_hat)
        gamma_e = SAMPLING_VAR / (SAMPLING_VAR + a_hat + q_e)

        i = _IDX["proposed_" + method]
        w = 1.0 - gamma_e
        values[i] = _corrected(w, z, mu_e, a_hat, q_e)
        weights[i] = w

        i = _IDX["b_substitute_" + method]
        values[i] = ((1.0 - b_e) * z + b_e * mu_e) ** 2 + (1.0 - b_e) * SAMPLING_VAR
        weights[i] = 1.0 - b_e

        i = _IDX["optimal_" + method]
        w0e, _ = optimal_weights(mu_e, a_hat, q_e)
        values[i] = _corrected(w0e, z, mu_e, a_hat, q_e)
        weights[i] = w0e

    return TrialOutcome(
        values=values,
        weights=weights,
        theo_bias=theo_bias,
        theo_mspe=theo_mspe,
        xbeta=mu,
        neg_prob_max=neg,
        fallbacks=(fits["pr"][3], fits["yl"][3]),
    )


@dataclass
class StudyResult:
    config: ScenarioConfig
    summaries: list
    detail: list
    negative_counts: dict
    fallback_counts: dict
    max_negative_probability: float
    design: Design

    def summary(self, predictor: str, stratum: int) -> SimulationSummary:
        for s in self.summaries:
            if s.predictor_kind == predictor and s.stratum == stratum:
                return s
        raise KeyError((predictor, stratum))


class _Accumulator:
    """Per-trial slots; each worker writes only its own trial indices."""

    def __init__(self, config: ScenarioConfig, designated: Sequence[int]):
        n, k = config.trials, len(PREDICTORS)
        t = config.t_values()
        self.strata = config.strata()
        self.masks = [t == s for s in self.strata]
        self.designated = list(designated)
        ns, nd = len(self.strata), len(self.designated)
        self.err_sum = np.zeros((n, k, ns))
        self.sq_sum = np.zeros((n, k, ns))
        self.theo_bias = np.zeros((n, k, ns))
        self.theo_mspe = np.zeros((n, k, ns))
        self.d_err = np.zeros((n, k, nd))
        self.d_weight = np.zeros((n, k, nd))
        self.d_theo_bias = np.zeros((n, k, nd))
        self.d_theo_mspe = np.zeros((n, k, nd))
        self.d_xbeta = np.zeros((n, nd))
        self.negatives = np.zeros((n, k), dtype=np.int64)
        self.fallbacks = np.zeros((n, 2), dtype=bool)
        self.neg_prob = np.zeros(n)

    def record(self, j: int, trial: TrialData, out: TrialOutcome) -> None:
        err = out.values - trial.lam
        for s, mask in enumerate(self.masks):
            self.err_sum[j, :, s] = err[:, mask].sum(axis=1)
            self.sq_sum[j, :, s] = (err[:, mask] ** 2).sum(axis=1)
            self.theo_bias[j, :, s] = out.theo_bias[:, mask].sum(axis=1)
            self.theo_mspe[j, :, s] = out.theo_mspe[:, mask].sum(axis=1)
        dd = self.designated
        self.d_err[j] = err[:, dd]
        self.d_weight[j] = out.weights[:, dd]
        self.d_theo_bias[j] = out.theo_bias[:, dd]
        self.d_theo_mspe[j] = out.theo_mspe[:, dd]
        self.d_xbeta[j] = out.xbeta[dd]
        self.negatives[j] = (out.values < 0).sum(axis=1)
        self.fallbacks[j] = out.fallbacks
        self.neg_prob[j] = out.neg_prob_max


def _batch_se(per_trial: np.ndarray, batches: int = 100) -> np.ndarray:
    """Standard error of the trial mean from contiguous batch means (axis 0)."""
    n = per_trial.shape[0]
    nb = min(batches, n)
    if nb < 2:
        return np.zeros(per_trial.shape[1:])
    means = np.stack([chunk.mean(axis=0) for chunk in np.array_split(per_trial, nb)])
    return means.std(axis=0, ddof=1) / math.sqrt(nb)


def _run_range(design, config, acc, start, stop):
    for j in range(start, stop):
        trial = run_trial(design, config, j)
        acc.record(j, trial, evaluate_trial(trial, config))


def run_study(config: ScenarioConfig, threads: int = 1, designated: Optional[Sequence[int]] = None) -> StudyResult:
    """Run all trials and summarize by predictor and t stratum.

    ``designated`` lists 0-based areas that get per-area detail; by default
    the first and the last area.
    """
    design = generate_scenario(config)
    if designated is None:
        designated = sorted({0, config.m - 1})
    acc = _Accumulator(config, designated)
    n = config.trials
    threads = max(1, int(threads))
    if threads == 1:
        _run_range(design, config, acc, 0, n)
    else:
        bounds = np.linspace(0, n, min(n, threads * 4) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_range, design, config, acc, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futures:
                f.result()
    return _summarize(config, design, acc)


def _summarize(config: ScenarioConfig, design: Design, acc: _Accumulator) -> StudyResult:
    counts = np.array([mask.sum() for mask in acc.masks], dtype=float)
    bias_t = acc.err_sum / counts  # (n, k, s) per-trial stratum means
    mspe_t = acc.sq_sum / counts
    bias = bias_t.mean(axis=0)
    mspe = mspe_t.mean(axis=0)
    bias_se = _batch_se(bias_t)
    mspe_se = _batch_se(mspe_t)
    theo_bias = (acc.theo_bias / counts).mean(axis=0)
    theo_mspe = (acc.theo_mspe / counts).mean(axis=0)

    summaries = []
    for k, name in enumerate(PREDICTORS):
        known = name in KNOWN_PARAMETER_PREDICTORS
        for s, stratum in enumerate(acc.strata):
            summaries.append(
                SimulationSummary(
                    predictor_kind=name,
                    m=config.m,
                    stratum=int(stratum),
                    empirical_bias=float(bias[k, s]),
                    empirical_mspe=float(mspe[k, s]),
                    mc_standard_error=float(mspe_se[k, s]),
                    bias_standard_error=float(bias_se[k, s]),
                    trials=config.trials,
                    theoretical_bias=float(theo_bias[k, s]) if known else None,
                    theoretical_mspe=float(theo_mspe[k, s]) if known else None,
                )
            )

    detail = []
    d_sq = acc.d_err ** 2
    d_bias_se = _batch_se(acc.d_err)
    d_mspe_se = _batch_se(d_sq)
    t = config.t_values()
    for col, area in enumerate(acc.designated):
        for k, name in enumerate(PREDICTORS):
            known = name in KNOWN_PARAMETER_PREDICTORS
            detail.append(
                {
                    "area": area + 1,
                    "t": int(t[area]),
                    "xbeta": float(acc.d_xbeta[:, col].mean()),
                    "predictor": name,
                    "theoretical_bias": float(acc.d_theo_bias[:, k, col].mean()) if known else None,
                    "empirical_bias": float(acc.d_err[:, k, col].mean()),
                    "bias_se": float(d_bias_se[k, col]),
                    "theoretical_mspe": float(acc.d_theo_mspe[:, k, col].mean()) if known else None,
                    "empirical_mspe": float(d_sq[:, k, col].mean()),
                    "mspe_se": float(d_mspe_se[k, col]),
                    "weight": float(acc.d_weight[:, k, col].mean()),
                }
            )

    negatives = {name: int(acc.negatives[:, k].sum()) for k, name in enumerate(PREDICTORS)}
    fallbacks = {"pr": int(acc.fallbacks[:, 0].sum()), "yl": int(acc.fallbacks[:, 1].sum())}
    return StudyResult(
        config=config,
        summaries=summaries,
        detail=detail,
        negative_counts=negatives,
        fallback_counts=fallbacks,
        max_negative_probability=float(acc.neg_prob.max()),
        design=design,
    )


def config_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    """Build a config from JSON-like data; unknown keys are rejected."""
    allowed = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    if "sigma_gen" in kwargs and isinstance(kwargs["sigma_gen"], dict):
        given = kwargs["sigma_gen"]
        if set(given) != {"fixed"}:
            raise ValueError("sigma_gen object must have the single key 'fixed'")
        kwargs["sigma_gen"] = np.array(given["fixed"], dtype=float)
    if "t_pattern" in kwargs:
        kwargs["t_pattern"] = tuple(tuple(entry) for entry in kwargs["t_pattern"])
    if "beta_true" in kwargs:
        kwargs["beta_true"] = tuple(kwargs["beta_true"])
    return ScenarioConfig(**kwargs)
