"""Normal and half-normal primitives plus 1-D quadrature helpers.

All heterogeneity quantities live on the log risk-ratio scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError

Z975 = float(special.ndtri(0.975))  # 1.959963984540054


def norm_ppf(p):
    """Standard normal quantile."""
    return special.ndtri(p)


def norm_cdf(x):
    return special.ndtr(x)


def norm_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


@dataclass(frozen=True)
class HalfNormal:
    """Half-normal distribution on [0, inf) with the given scale."""

    scale: float

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DomainError(f"half-normal scale must be positive and finite, got {self.scale!r}")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        dens = 2.0 / (self.scale * math.sqrt(2 * math.pi)) * np.exp(-0.5 * (x / self.scale) ** 2)
        return np.where(x >= 0, dens, 0.0)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        out = math.log(2.0 / (self.scale * math.sqrt(2 * math.pi))) - 0.5 * (x / self.scale) ** 2
        return np.where(x >= 0, out, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, special.erf(np.maximum(x, 0) / (self.scale * math.sqrt(2))), 0.0)

    def quantile(self, p):
        return half_normal_quantile(self, p)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.abs(rng.normal(0.0, self.scale, size))

    def upper_bound(self, tail: float = 1e-8) -> float:
        """Quantile at ``1 - tail``; the default integration limit for tau."""
        return float(half_normal_quantile(self, 1.0 - tail))

    def __str__(self):
        return f"HN({self.scale:g})"


def half_normal_quantile(prior: HalfNormal, p):
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0) & (p_arr < 1))):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    q = prior.scale * norm_ppf((1.0 + p_arr) / 2.0)
    return float(q) if np.ndim(q) == 0 else q


def heterogeneity_ratio(tau: float) -> float:
    """RR_97.5% / RR_50% for log-scale trial parameters spread with sd ``tau``."""
    if not tau >= 0:
        raise DomainError(f"tau must be non-negative, got {tau!r}")
    return math.exp(Z975 * tau)


def prior_marginal_ratio(prior: HalfNormal, n_draws: int = 10**6, seed: int = 314) -> float:
    """Monte Carlo RR_97.5% / RR_50% when tau itself is drawn from ``prior``.

    theta | tau ~ N(0, tau^2), tau ~ prior; the median of theta is 0 by symmetry,
    so the ratio is exp of the 97.5% quantile of the theta draws.
    """
    if n_draws < 1:
        raise DomainError("n_draws must be positive")
    rng = np.random.default_rng(seed)
    tau = prior.sample(rng, n_draws)
    theta = rng.normal(0.0, 1.0, n_draws) * tau
    return float(np.exp(np.quantile(theta, 0.975)))


def prior_marginal_ratio_se(prior: HalfNormal, n_draws: int) -> float:
    """Asymptotic Monte Carlo standard error of :func:`prior_marginal_ratio`."""
    q = math.log(prior_marginal_ratio_exact(prior))
    dens = adaptive_simpson(
        lambda t: float(prior.pdf(t)) * math.exp(-0.5 * (q / t) ** 2) / (t * math.sqrt(2 * math.pi)) if t > 0 else 0.0,
        0.0, prior.upper_bound(),
    )
    return math.exp(q) * math.sqrt(0.975 * 0.025 / n_draws) / dens


def prior_marginal_ratio_exact(prior: HalfNormal) -> float:
    """Same quantity as :func:`prior_marginal_ratio` by integrating the scale-mixture CDF."""
    upper = prior.upper_bound()

    def cdf(q):
        # P(theta <= q) = int Phi(q / t) hn(t) dt
        f = lambda t: float(prior.pdf(t)) * (float(norm_cdf(q / t)) if t > 0 else 1.0)
        return adaptive_simpson(f, 0.0, upper, rtol=1e-10)

    lo, hi = 0.0, Z975 * upper
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < 0.975:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return math.exp(0.5 * (lo + hi))


@dataclass(frozen=True)
class QuadratureGrid:
    """Composite Simpson nodes and weights on [0, upper_bound]."""

    nodes: np.ndarray
    weights: np.ndarray
    upper_bound: float

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape or self.nodes.size < 3:
            raise DomainError("grid needs at least 3 nodes with matching weights")
        if self.nodes[0] < 0 or np.any(np.diff(self.nodes) <= 0):
            raise DomainError("grid nodes must be non-negative and strictly increasing")

    def __len__(self):
        return self.nodes.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def refined(self) -> "QuadratureGrid":
        """Grid with the step halved (old nodes are kept)."""
        return simpson_grid(self.upper_bound, 2 * len(self) - 1, lower=float(self.nodes[0]))


def simpson_grid(upper: float, n_nodes: int = 401, lower: float = 0.0) -> QuadratureGrid:
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise DomainError("Simpson's rule needs an odd node count >= 3")
    if not upper > lower:
        raise DomainError("upper bound must exceed lower bound")
    nodes = np.linspace(lower, upper, n_nodes)
    h = (upper - lower) / (n_nodes - 1)
    w = np.full(n_nodes, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return QuadratureGrid(nodes, w * h / 3.0, float(upper))


def adaptive_simpson(
    f: Callable[[float], float], a: float, b: float, rtol: float = 1e-8, max_depth: int = 50
) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = simpson(fa, fm, fb, a, b)
    # coarse pre-split so narrow features are not stepped over
    pieces = 16
    edges = np.linspace(a, b, pieces + 1)
    total = 0.0
    scale = abs(whole) if whole != 0 else 1.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        flo, fhi, fmid = f(lo), f(hi), f(0.5 * (lo + hi))
        total += _asr(f, lo, hi, flo, fmid, fhi, simpson(flo, fmid, fhi, lo, hi),
                      rtol * scale / pieces, max_depth, simpson)
    return total


def _asr(f, a, b, fa, fm, fb, whole, tol, depth, simpson):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = simpson(fa, flm, fm, a, m)
    right = simpson(fm, frm, fb, m, b)
    delta = left + right - whole
    if abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    if depth <= 0:
        raise NumericalError(f"adaptive Simpson did not converge on [{a}, {b}]")
    return (_asr(f, a, m, fa, flm, fm, left, tol / 2, depth - 1, simpson)
            + _asr(f, m, b, fm, frm, fb, right, tol / 2, depth - 1, simpson))
