"""Finite mixtures of normal distributions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DomainError


def _bisect_quantile(cdf, probs: np.ndarray, lo: float, hi: float, atol: float) -> np.ndarray:
    lo = np.full(probs.shape, lo)
    hi = np.full(probs.shape, hi)
    n_iter = int(np.ceil(np.log2(max(hi.max() - lo.min(), atol) / atol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < probs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class NormalMixture:
    """sum_k weights[k] * N(means[k], variances[k]); weights sum to one."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0):
            raise DomainError("mixture weights must be a non-empty, non-negative vector")
        if np.any(np.asarray(self.variances) <= 0):
            raise DomainError("mixture component variances must be positive")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))

    @property
    def sds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.means)

    @property
    def var(self) -> float:
        m = self.mean
        return float(self.weights @ (self.variances + (self.means - m) ** 2))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        z = (x - self.means) / self.sds
        return (np.exp(-0.5 * z**2) / (self.sds * np.sqrt(2 * np.pi))) @ self.weights

    def cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return special.ndtr((x - self.means) / self.sds) @ self.weights

    def sf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return special.ndtr((self.means - x) / self.sds) @ self.weights

    def quantile(self, p, atol: float = 1e-9):
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any(~((p_arr > 0) & (p_arr < 1))):
            raise DomainError(f"probabilities must lie in (0, 1), got {p!r}")
        lo = float(np.min(self.means - 40 * self.sds))
        hi = float(np.max(self.means + 40 * self.sds))
        q = _bisect_quantile(self.cdf, p_arr, lo, hi, atol)
        return float(q[0]) if np.ndim(p) == 0 else q

    def interval(self, level: float = 0.95, kind: str = "central") -> tuple[float, float]:
        if kind == "central":
            lo, hi = self.quantile([(1 - level) / 2, (1 + level) / 2])
            return float(lo), float(hi)
        if kind == "shortest":
            # equal density at both ends; g(a) = f(L(a)) - f(U(a)) increases in a for unimodal f
            eps = 1e-12
            def ends(a):
                return self.quantile(np.array([a, a + level]))

            def g(a):
                lo, hi = ends(a)
                return float(self.pdf(lo) - self.pdf(hi))

            a_lo, a_hi = eps, 1 - level - eps
            g_lo, g_hi = g(a_lo), g(a_hi)
            if g_lo >= 0:
                a = a_lo
            elif g_hi <= 0:
                a = a_hi
            else:
                a = optimize.brentq(g, a_lo, a_hi, xtol=1e-14)
            lo, hi = ends(a)
            return float(lo), float(hi)
        raise DomainError(f"unknown interval kind {kind!r}")

    def update(self, y: float, s: float) -> "NormalMixture":
        """Conjugate posterior after observing y ~ N(theta, s^2)."""
        if not s > 0:
            raise DomainError("standard error must be positive")
        pred_var = self.variances + s**2
        logw = np.log(self.weights, where=self.weights > 0, out=np.full(self.weights.shape, -np.inf))
        logw = logw - 0.5 * np.log(pred_var) - 0.5 * (y - self.means) ** 2 / pred_var
        logw -= logw.max()
        post_var = 1.0 / (1.0 / self.variances + 1.0 / s**2)
        post_mean = post_var * (self.means / self.variances + y / s**2)
        return NormalMixture(np.exp(logw), post_mean, post_var)
