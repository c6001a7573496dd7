"""Closed-form activation model: rectified Gaussian (ID) vs epsilon-skew-normal (OOD).

ID pre-activations are ``N(mu, sigma_in^2)``, OOD pre-activations follow the
two-piece ``ESN(mu, sigma_out^2, eps)`` density

    q(x) = phi((x - mu) / (sigma (1 + eps))) / sigma   for x < mu
    q(x) = phi((x - mu) / (sigma (1 - eps))) / sigma   for x >= mu

so ``P(X < mu) = (1 + eps) / 2`` and ``eps < 0`` skews mass to the right.
Activations are ``z = max(x, 0)`` and ReAct gives ``zbar = min(z, c)``.

The term-by-term OOD expressions assume ``mu >= 0`` (mean before clipping) and
``c >= mu`` (after clipping / reduction) and are used directly in that
regime; outside it the same quantities come from the general partial
expectation ``E[(X - t)^+]``, obtained by splitting the integral at the mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_pdf(x):
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def norm_cdf(x):
    # erfc keeps relative accuracy in the lower tail, unlike 1 + erf
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / SQRT2)


def _phi(x: float) -> float:
    return float(norm_pdf(x))


def _cdf(x: float) -> float:
    return float(norm_cdf(x))


def _k_cdf(k: float, z: float) -> float:
    """``k * Phi(z / k)``; tends to 0 as the branch scale k -> 0."""
    return k * _cdf(z / k) if k > 0 else 0.0


def _k2_pdf(k: float, z: float) -> float:
    """``k**2 * phi(z / k)``."""
    return k * k * _phi(z / k) if k > 0 else 0.0


@dataclass(frozen=True)
class EsnParams:
    mu: float
    sigma: float
    eps: float = 0.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not -1.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [-1, 1], got {self.eps}")

    @property
    def left_scale(self) -> float:
        return self.sigma * (1.0 + self.eps)

    @property
    def right_scale(self) -> float:
        return self.sigma * (1.0 - self.eps)


@dataclass(frozen=True)
class ReductionSurface:
    """``values[i, j]`` is the OOD mean reduction at ``eps_grid[i]``, ``sigma_grid[j]``."""

    eps_grid: np.ndarray
    sigma_grid: np.ndarray
    values: np.ndarray
    mu: float
    c: float

    def to_csv(self) -> str:
        lines = ["eps,sigma,reduction"]
        for i, eps in enumerate(self.eps_grid):
            for j, sigma in enumerate(self.sigma_grid):
                lines.append(f"{float(eps)!r},{float(sigma)!r},{float(self.values[i, j])!r}")
        return "\n".join(lines) + "\n"


def _check_c(c: float) -> None:
    if math.isnan(c) or c <= 0:
        raise ValueError(f"clip threshold must be positive, got {c}")


# --- density, sampling, interval probabilities ---------------------------------


def esn_pdf(x, p: EsnParams):
    x = np.asarray(x, dtype=np.float64)
    d = x - p.mu
    with np.errstate(divide="ignore", invalid="ignore"):
        left = norm_pdf(d / p.left_scale) / p.sigma if p.left_scale > 0 else np.zeros_like(d)
        right = norm_pdf(d / p.right_scale) / p.sigma if p.right_scale > 0 else np.zeros_like(d)
    out = np.where(d < 0, left, right)
    return float(out) if out.ndim == 0 else out


def esn_cdf(x, p: EsnParams):
    x = np.asarray(x, dtype=np.float64)
    d = x - p.mu
    k_lo, k_hi = 1.0 + p.eps, 1.0 - p.eps
    with np.errstate(divide="ignore", invalid="ignore"):
        below = k_lo * norm_cdf(d / p.left_scale) if k_lo > 0 else np.zeros_like(d)
        above = 1.0 - k_hi * norm_cdf(-d / p.right_scale) if k_hi > 0 else np.ones_like(d)
    out = np.where(d < 0, below, above)
    return float(out) if out.ndim == 0 else out


def esn_sample(p: EsnParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw from the left half-normal with prob. (1+eps)/2, else the right one."""
    if n < 1:
        raise ValueError("sample size must be >= 1")
    half = np.abs(rng.standard_normal(n))
    left = rng.random(n) < (1.0 + p.eps) / 2.0
    return p.mu + np.where(left, -p.left_scale * half, p.right_scale * half)


def lemma1_prob(p: EsnParams, a: float, b: float) -> float:
    """``P(a <= X <= b)`` for zero-mode ESN on an interval not straddling 0."""
    if p.mu != 0:
        raise ValueError("lemma1_prob expects a zero-mode ESN (mu == 0)")
    if a > b:
        raise ValueError(f"need a <= b, got [{a}, {b}]")
    if b <= 0:
        k = 1.0 + p.eps
        return _k_cdf(k, b / p.sigma) - _k_cdf(k, a / p.sigma)
    if a >= 0:
        k = 1.0 - p.eps
        return _k_cdf(k, b / p.sigma) - _k_cdf(k, a / p.sigma)
    raise ValueError(f"interval [{a}, {b}] straddles 0; split it at the mode")


def excess_mean(t: float, sigma: float, eps: float) -> float:
    """``E[(Y - t)^+]`` for ``Y ~ ESN(0, sigma^2, eps)``."""
    k_lo, k_hi = 1.0 + eps, 1.0 - eps
    if math.isinf(t):
        if t > 0:
            return 0.0
        raise ValueError("excess_mean is unbounded at t = -inf")
    z = t / sigma
    if z >= 0:
        return sigma * (_k2_pdf(k_hi, z) - z * (k_hi - _k_cdf(k_hi, z)))
    phi0 = INV_SQRT_2PI
    right = k_hi * k_hi * phi0 - z * k_hi / 2.0
    left = _k2_pdf(k_lo, z) - k_lo * k_lo * phi0 - z * (k_lo / 2.0 - _k_cdf(k_lo, z))
    return sigma * (right + left)


# --- ID (rectified Gaussian) ------------------------------------------------------


def id_mean_pre(mu: float, sigma_in: float) -> float:
    """``E[max(x, 0)]`` for ``x ~ N(mu, sigma_in^2)``."""
    a = -mu / sigma_in
    return (1.0 - _cdf(a)) * mu + _phi(a) * sigma_in


def id_mean_post(mu: float, sigma_in: float, c: float) -> float:
    """``E[min(max(x, 0), c)]``."""
    _check_c(c)
    if math.isinf(c):
        return id_mean_pre(mu, sigma_in)
    a = -mu / sigma_in
    b = (c - mu) / sigma_in
    return (_cdf(b) - _cdf(a)) * mu + (1.0 - _cdf(b)) * c + (_phi(a) - _phi(b)) * sigma_in


def id_reduction(mu: float, sigma_in: float, c: float) -> float:
    _check_c(c)
    if math.isinf(c):
        return 0.0
    b = (c - mu) / sigma_in
    return _phi(b) * sigma_in - (1.0 - _cdf(b)) * (c - mu)


# --- OOD (epsilon-skew-normal) -----------------------------------------------------


def ood_mean_pre(p: EsnParams) -> float:
    """``E[max(x, 0)]`` for ``x ~ ESN(mu, sigma^2, eps)``."""
    mu, sigma, eps = p.mu, p.sigma, p.eps
    if mu < 0:
        return excess_mean(-mu, sigma, eps)
    k = 1.0 + eps
    z = -mu / sigma
    return (
        mu
        - _k_cdf(k, z) * mu
        + _k2_pdf(k, z) * sigma
        - 4.0 * eps * INV_SQRT_2PI * sigma
    )


def ood_mean_post(p: EsnParams, c: float) -> float:
    """``E[min(max(x, 0), c)]`` for ESN pre-activations."""
    _check_c(c)
    if math.isinf(c):
        return ood_mean_pre(p)
    mu, sigma, eps = p.mu, p.sigma, p.eps
    if mu < 0 or c < mu:
        return ood_mean_pre(p) - excess_mean(c - mu, sigma, eps)
    k_lo, k_hi = 1.0 + eps, 1.0 - eps
    a = -mu / sigma
    b = (c - mu) / sigma
    return (
        mu
        - _k_cdf(k_lo, a) * mu
        + (k_hi - _k_cdf(k_hi, b)) * (c - mu)
        + (_k2_pdf(k_lo, a) - _k2_pdf(k_hi, b) - 4.0 * eps * INV_SQRT_2PI) * sigma
    )


def ood_reduction(p: EsnParams, c: float) -> float:
    """``E[z - min(z, c)]``; recovers the ID reduction at eps = 0."""
    _check_c(c)
    if math.isinf(c):
        return 0.0
    mu, sigma, eps = p.mu, p.sigma, p.eps
    if c < mu:
        return excess_mean(c - mu, sigma, eps)
    k = 1.0 - eps
    b = (c - mu) / sigma
    return _k2_pdf(k, b) * sigma - (k - _k_cdf(k, b)) * (c - mu)


def reduction_surface(mu: float, c: float, eps_grid, sigma_grid) -> ReductionSurface:
    eps_grid = np.asarray(eps_grid, dtype=np.float64)
    sigma_grid = np.asarray(sigma_grid, dtype=np.float64)
    for name, grid in (("eps", eps_grid), ("sigma", sigma_grid)):
        if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) < 0):
            raise ValueError(f"{name} grid must be a non-empty ascending sequence")
    values = np.array(
        [[ood_reduction(EsnParams(mu, s, e), c) for s in sigma_grid] for e in eps_grid]
    )
    return ReductionSurface(eps_grid, sigma_grid, values, mu, c)


# --- Monte Carlo ----------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float

    def within(self, value: float, n_se: float = 3.0) -> bool:
        return abs(value - self.mean) <= n_se * self.stderr


def mc_moments(samples: np.ndarray, c: float) -> dict[str, MonteCarloEstimate]:
    """Sample means (and standard errors) of z, min(z, c) and z - min(z, c)."""
    z = np.maximum(samples, 0.0)
    zbar = np.minimum(z, c)
    out = {}
    for key, arr in (("pre", z), ("post", zbar), ("reduction", z - zbar)):
        out[key] = MonteCarloEstimate(
            float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))
        )
    return out
