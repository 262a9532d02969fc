"""Numeric kernels: real cubic roots, normal CDF, least squares, random streams."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

# Reciprocal condition number below which a matrix is treated as singular.
RCOND_THRESHOLD = 1e-12

_NEWTON_STEPS = 3


class CubicCoefficients(NamedTuple):
    """c3*w**3 + c2*w**2 + c1*w + c0"""

    c3: float
    c2: float
    c1: float
    c0: float

    def __call__(self, w):
        return ((self.c3 * w + self.c2) * w + self.c1) * w + self.c0

    @property
    def scale(self) -> float:
        return max(1.0, abs(self.c3) + abs(self.c2) + abs(self.c1) + abs(self.c0))


def _polish(roots, c3, c2, c1, c0):
    """A few guarded Newton steps; a step is kept only if it lowers |f|."""
    for _ in range(_NEWTON_STEPS):
        f = ((c3 * roots + c2) * roots + c1) * roots + c0
        df = (3.0 * c3 * roots + 2.0 * c2) * roots + c1
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = roots - f / df
        fc = ((c3 * cand + c2) * cand + c1) * cand + c0
        better = np.isfinite(cand) & (np.abs(fc) < np.abs(f))
        roots = np.where(better, cand, roots)
    return roots


def _scaled_cubic_roots(c3, c2, c1, c0):
    """Real roots of a cubic with nonzero c3; NaN marks no root.

    The variable is rescaled ``w = s*y`` so the monic cubic in ``y`` has
    coefficients of order one. ``s`` is a power of two picked from the
    coefficient exponents, so extreme coefficient ratios neither overflow nor
    underflow. A root past the float range comes back as inf.
    """
    logs = [np.log2(np.abs(c)) for c in (c3, c2, c1, c0)]
    ls = np.maximum.reduce([(logs[i] - logs[0]) / i for i in (1, 2, 3)])
    # power-of-two scale keeps the rescaling exact
    k = np.where(np.isfinite(ls), np.ceil(ls), 0.0).astype(int)
    m3, e3 = np.frexp(c3)
    scaled = [np.ldexp(c / m3, -e3 - i * k) for i, c in ((1, c2), (2, c1), (3, c0))]
    y, three = _balanced_cubic_roots(*scaled)
    out = np.ldexp(y, k[:, None])
    if np.any(three):
        out[three] = _deflate_small_roots(out[three], c3[three], c1[three], c0[three])
    return out


def _balanced_cubic_roots(p2, p1, p0):
    """Cardano / trigonometric roots; also returns the three-root mask."""
    n = p2.shape[0]
    out = np.full((n, 3), np.nan)
    shift = p2 / 3.0
    # depressed cubic y^3 + p y + q with w = y - shift
    p = p1 - p2 * shift
    q = (2.0 * shift * shift - p1) * shift + p0
    half_q = q / 2.0
    third_p = p / 3.0
    disc = half_q * half_q + third_p * third_p * third_p
    # a discriminant lost in rounding means a double root, not a complex pair
    one = disc > 1e-14 * (half_q * half_q + np.abs(third_p) ** 3)

    if np.any(one):
        hq, d, tp = half_q[one], disc[one], third_p[one]
        # pick the sign that avoids cancellation
        u = np.cbrt(-hq - np.copysign(np.sqrt(d), hq))
        v = np.where(u != 0.0, -tp / u, 0.0)
        out[one, 0] = u + v - shift[one]

    three = ~one
    if np.any(three):
        tp, hq = third_p[three], half_q[three]
        r = np.sqrt(np.maximum(-tp, 0.0))
        cos3 = np.where(r > 0.0, -hq / (r * r * r), 0.0)
        theta = np.arccos(np.clip(cos3, -1.0, 1.0)) / 3.0
        for k in range(3):
            out[three, k] = 2.0 * r * np.cos(theta - 2.0 * math.pi * k / 3.0) - shift[three]
    return out, three


def _deflate_small_roots(trig, c3, c1, c0):
    """Recompute the two smaller roots from the largest one by Vieta.

    The trigonometric roots carry absolute error of order eps*|shift|, which
    swamps small roots when the roots differ greatly in magnitude.
    """
    idx = np.argmax(np.abs(trig), axis=1)
    big = trig[np.arange(trig.shape[0]), idx]
    ok = big != 0.0
    lead = c3 * big
    c = np.where(ok, -c0 / lead, 0.0)
    b = np.where(ok, c / big - c1 / lead, 0.0)
    # solve w^2 + b w + c in w = m*y so nothing overflows
    m = np.maximum.reduce([np.ones_like(b), np.abs(b), np.sqrt(np.abs(c))])
    bs, cs = b / m, c / m / m
    d = bs * bs - 4.0 * cs
    # slightly negative d is a rounded double root
    complex_pair = ok & (d < -1e-10 * (bs * bs + 4.0 * np.abs(cs)))
    sq = np.sqrt(np.maximum(d, 0.0))
    half = -0.5 * (bs + np.copysign(sq, bs)) * m
    s2 = np.where(half != 0.0, c / half, 0.0)
    out = trig.copy()
    rows = np.nonzero(ok)[0]
    out[rows] = np.stack([big[rows], half[rows], s2[rows]], axis=1)
    out[complex_pair, 1:] = np.nan
    return out


def cubic_roots(c3, c2, c1, c0) -> np.ndarray:
    """Real roots of many cubics at once.

    Returns an ``(n, 3)`` array; unused slots hold NaN. Degenerate leading
    coefficients fall back to the quadratic or linear formula.
    """
    c3, c2, c1, c0 = (np.atleast_1d(np.asarray(c, dtype=float)) for c in (c3, c2, c1, c0))
    c3, c2, c1, c0 = np.broadcast_arrays(c3, c2, c1, c0)
    if not all(np.all(np.isfinite(c)) for c in (c3, c2, c1, c0)):
        raise ValueError("cubic coefficients must be finite")
    # overflow in intermediate steps only ever yields discarded candidates
    with np.errstate(all="ignore"):
        return _cubic_roots(c3, c2, c1, c0)


def _cubic_roots(c3, c2, c1, c0):
    out = np.full((c3.shape[0], 3), np.nan)
    cubic = c3 != 0.0
    if np.any(cubic):
        out[cubic] = _scaled_cubic_roots(c3[cubic], c2[cubic], c1[cubic], c0[cubic])
        # a root past the float range: drop the cubic term and keep the rest
        cubic &= ~np.any(np.isinf(out), axis=1)
        out[~cubic] = np.nan

    quad = ~cubic & (c2 != 0.0)
    if np.any(quad):
        norm = np.maximum.reduce([np.abs(c2[quad]), np.abs(c1[quad]), np.abs(c0[quad])])
        a, b, c = c2[quad] / norm, c1[quad] / norm, c0[quad] / norm
        d = b * b - 4.0 * a * c
        real = d >= 0
        sq = np.sqrt(np.where(real, d, 0.0))
        big = -0.5 * (b + np.copysign(sq, b))
        r1 = np.where(big != 0.0, big / a, 0.0)
        r2 = np.where(big != 0.0, c / big, 0.0)
        block = np.full((a.shape[0], 3), np.nan)
        block[real, 0] = r1[real]
        block[real, 1] = r2[real]
        out[quad] = block

    lin = ~cubic & ~quad & (c1 != 0.0)
    if np.any(lin):
        out[lin, 0] = -c0[lin] / c1[lin]

    return _polish(out, c3[:, None], c2[:, None], c1[:, None], c0[:, None])


def solve_cubic_real(c: CubicCoefficients) -> list[float]:
    """Distinct real roots of a cubic, ascending.

    A constant polynomial has no isolated roots and returns an empty list.
    """
    c = CubicCoefficients(*(float(x) for x in c))
    roots = cubic_roots(*c)[0]
    roots = np.sort(roots[np.isfinite(roots)])
    distinct: list[float] = []
    for r in roots:
        if distinct and abs(r - distinct[-1]) <= 1e-7 * max(1.0, abs(r)):
            # keep whichever copy has the smaller residual
            if abs(c(r)) < abs(c(distinct[-1])):
                distinct[-1] = float(r)
            continue
        distinct.append(float(r))
    return distinct


def normal_cdf(x):
    """Standard normal CDF via erfc, accurate in both tails."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))
    from scipy.special import erfc

    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def reciprocal_condition(matrix) -> float:
    """1/cond_2(matrix); 0 for a singular or all-zero matrix."""
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def pseudo_solve(matrix, rhs) -> np.ndarray:
    """``M^+ @ rhs`` for square M; plain solve when M is well conditioned.

    ``rhs`` may be a vector or a matrix of right-hand sides.
    """
    m = np.asarray(matrix, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(rhs))):
        raise ValueError("non-finite entries")
    if reciprocal_condition(m) >= RCOND_THRESHOLD:
        return np.linalg.solve(m, rhs)
    return np.linalg.pinv(m, rcond=RCOND_THRESHOLD) @ rhs


def least_squares_solve(design, response) -> np.ndarray:
    """Coefficients minimizing ||design @ beta - response||^2.

    If the normal-equations matrix is numerically singular the minimum-norm
    solution is returned.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes {x.shape} and {y.shape}")
    if x.shape[0] < x.shape[1] or x.shape[1] == 0:
        raise ValueError("design needs at least as many rows as columns")
    if reciprocal_condition(x.T @ x) >= RCOND_THRESHOLD:
        return np.linalg.lstsq(x, y, rcond=None)[0]
    # rcond(X'X) = rcond(X)^2, so cut singular values of X at the square root
    return np.linalg.pinv(x, rcond=math.sqrt(RCOND_THRESHOLD)) @ y


def is_singular(matrix) -> bool:
    return reciprocal_condition(matrix) < RCOND_THRESHOLD


class RandomStream:
    """Deterministic sampler bound to a (seed, substream) pair.

    Streams are PCG64 generators keyed by a ``SeedSequence`` whose spawn key
    is the substream, so distinct substreams are independent and no stream
    depends on which others were created before it.
    """

    def __init__(self, seed: int, substream: int = 0):
        self.seed = int(seed)
        self.substream = int(substream)
        ss = np.random.SeedSequence(entropy=self.seed % 2**64, spawn_key=(self.substream % 2**64,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        return self._gen.normal(loc, scale, size)

    def poisson(self, lam, size=None):
        return self._gen.poisson(lam, size)


def seeded_stream(seed: int, substream: int) -> RandomStream:
    return RandomStream(seed, substream)
