"""Normal-normal hierarchical model with tau marginalised by quadrature.

Data model Y_j ~ N(theta_j, s_j^2), theta_j ~ N(mu, tau^2), flat prior on mu,
half-normal prior on tau. Everything conditional on tau is closed form; the
tau posterior is evaluated on a Simpson grid, so every marginal of mu, theta_j
and the predictive theta_star is a finite normal mixture.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .distributions import HalfNormal, QuadratureGrid, simpson_grid
from .errors import DataError, DomainError, NumericalError
from .evidence import Evidence
from .mixture import NormalMixture

DEFAULT_NODES = 401
TARGETS = ("mu", "theta_star", "tau")


@dataclass(frozen=True)
class ConditionalPosterior:
    tau: float
    weights: np.ndarray
    w_plus: float
    shrinkage: np.ndarray
    mu_mean: float
    mu_var: float
    theta_means: np.ndarray
    theta_vars: np.ndarray
    pred_mean: float
    pred_var: float


def _evidence_arrays(evidence: Sequence[Evidence]) -> tuple[np.ndarray, np.ndarray]:
    if len(evidence) == 0:
        raise DataError("at least one evidence item is required")
    y = np.array([e.y for e in evidence], dtype=float)
    s = np.array([e.s for e in evidence], dtype=float)
    if np.any(~(s > 0)):
        raise DataError("standard errors must be positive")
    return y, s


def node_arrays(y: np.ndarray, s: np.ndarray, tau: np.ndarray) -> dict[str, np.ndarray]:
    """Closed-form conditional posteriors at every tau.

    ``y`` and ``s`` have shape (..., J) and ``tau`` shape (N,); per-study
    outputs have shape (..., N, J) and per-node outputs (..., N).
    """
    s2 = s[..., None, :] ** 2
    t2 = (tau**2)[:, None]
    w = 1.0 / (s2 + t2)
    w_plus = w.sum(-1)
    B = s2 * w
    mu_mean = (w * y[..., None, :]).sum(-1) / w_plus
    theta_means = B * mu_mean[..., None] + (1.0 - B) * y[..., None, :]
    theta_vars = B * (t2 + B / w_plus[..., None])
    return dict(w=w, w_plus=w_plus, B=B, mu_mean=mu_mean,
                theta_means=theta_means, theta_vars=theta_vars)


def log_integrated_likelihood(y: np.ndarray, s: np.ndarray, tau: np.ndarray, arrays=None) -> np.ndarray:
    """log L(tau) with mu integrated out under a flat prior, up to a constant."""
    a = node_arrays(y, s, tau) if arrays is None else arrays
    resid = (a["w"] * (y[..., None, :] - a["mu_mean"][..., None]) ** 2).sum(-1)
    return -0.5 * np.log(a["w_plus"]) + 0.5 * np.log(a["w"]).sum(-1) - 0.5 * resid


def conditional(evidence: Sequence[Evidence], tau: float) -> ConditionalPosterior:
    if not tau >= 0:
        raise DomainError(f"tau must be non-negative, got {tau}")
    y, s = _evidence_arrays(evidence)
    a = node_arrays(y, s, np.array([float(tau)]))
    w_plus = float(a["w_plus"][0])
    mu_mean = float(a["mu_mean"][0])
    return ConditionalPosterior(
        tau=float(tau), weights=a["w"][0], w_plus=w_plus, shrinkage=a["B"][0],
        mu_mean=mu_mean, mu_var=1.0 / w_plus,
        theta_means=a["theta_means"][0], theta_vars=a["theta_vars"][0],
        pred_mean=mu_mean, pred_var=float(tau) ** 2 + 1.0 / w_plus,
    )


@dataclass(frozen=True)
class NnhmPosterior:
    evidence: tuple[Evidence, ...]
    tau_prior: HalfNormal
    grid: QuadratureGrid
    tau_density: np.ndarray  # normalised posterior density at grid nodes
    node_mass: np.ndarray  # quadrature weight x density, sums to one
    w_plus: np.ndarray
    mu_mean: np.ndarray
    theta_means: np.ndarray
    theta_vars: np.ndarray

    @property
    def tau(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def study_ids(self) -> list[str]:
        return [e.study_id for e in self.evidence]

    def conditional_at(self, k: int) -> ConditionalPosterior:
        return conditional(self.evidence, float(self.tau[k]))

    def study_index(self, key) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < len(self.evidence):
                raise DomainError(f"study index {key} out of range")
            return int(key)
        ids = self.study_ids
        if key in ids:
            return ids.index(key)
        raise DomainError(f"unknown study {key!r}; known: {', '.join(ids)}")

    def marginal(self, target) -> NormalMixture:
        kind, j = parse_target(target)
        if kind == "mu":
            return NormalMixture(self.node_mass, self.mu_mean, 1.0 / self.w_plus)
        if kind == "theta_star":
            return NormalMixture(self.node_mass, self.mu_mean, self.tau**2 + 1.0 / self.w_plus)
        if kind == "theta":
            j = self.study_index(j)
            return NormalMixture(self.node_mass, self.theta_means[:, j], self.theta_vars[:, j])
        raise DomainError("tau has no normal-mixture marginal")

    def tau_cdf_table(self) -> np.ndarray:
        d, t = self.tau_density, self.tau
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(t))])
        return cum / cum[-1]

    def tau_cdf(self, x):
        return np.interp(x, self.tau, self.tau_cdf_table())

    def tau_quantile(self, p):
        p_arr = np.asarray(p, dtype=float)
        if np.any(~((p_arr > 0) & (p_arr < 1))):
            raise DomainError(f"probabilities must lie in (0, 1), got {p!r}")
        cdf = self.tau_cdf_table()
        # strictly increasing copy for inversion (the density may underflow in the far tail)
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        q = np.interp(p_arr, cdf[keep], self.tau[keep])
        return float(q) if q.ndim == 0 else q

    def tau_interval(self, level: float = 0.95, kind: str = "shortest") -> tuple[float, float]:
        if kind == "central":
            lo, hi = self.tau_quantile([(1 - level) / 2, (1 + level) / 2])
            return float(lo), float(hi)
        if kind != "shortest":
            raise DomainError(f"unknown interval kind {kind!r}")
        alphas = np.linspace(0.0, 1.0 - level, 2001)
        cdf = self.tau_cdf_table()
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        lo = np.interp(alphas, cdf[keep], self.tau[keep])
        hi = np.interp(alphas + level, cdf[keep], self.tau[keep])
        k = int(np.argmin(hi - lo))
        return float(lo[k]), float(hi[k])

    @property
    def tau_mean(self) -> float:
        return float(self.node_mass @ self.tau)


def parse_target(target) -> tuple[str, object]:
    """Normalise a target: 'mu', 'tau', 'theta_star'/'theta-star', 'theta:<id>', or an int index."""
    if isinstance(target, (int, np.integer)):
        return "theta", int(target)
    if isinstance(target, tuple) and len(target) == 2 and target[0] == "theta":
        return "theta", target[1]
    if not isinstance(target, str):
        raise DomainError(f"unrecognised target {target!r}")
    t = target.strip().replace("-", "_")
    if t in TARGETS:
        return t, None
    if t.startswith("theta:") or t.startswith("theta_") and t != "theta_star":
        key = target.split(":", 1)[1] if ":" in target else target[6:]
        return "theta", key
    raise DomainError(f"unrecognised target {target!r}")


def _posterior_on_grid(y, s, prior: HalfNormal, grid: QuadratureGrid):
    a = node_arrays(y, s, grid.nodes)
    logpost = log_integrated_likelihood(y, s, grid.nodes, a) + prior.logpdf(grid.nodes)
    if not np.all(np.isfinite(logpost)):
        raise NumericalError("non-finite tau posterior on grid")
    dens = np.exp(logpost - logpost.max())
    z = grid.integrate(dens)
    return a, dens / z, z * math.exp(logpost.max())


def fit(
    evidence: Sequence[Evidence],
    tau_prior: HalfNormal,
    n_nodes: int = DEFAULT_NODES,
    tol: float = 1e-4,
    max_nodes: int = 6401,
    grid: QuadratureGrid | None = None,
) -> NnhmPosterior:
    """Fit the NNHM; the grid is halved until tau quantiles move less than ``tol``.

    Passing ``grid`` pins the quadrature and skips refinement.
    """
    y, s = _evidence_arrays(evidence)
    if grid is None:
        grid = simpson_grid(tau_prior.upper_bound(), n_nodes)
        prior_mass = grid.integrate(tau_prior.pdf(grid.nodes))
        if abs(prior_mass - 1.0) > 1e-6:
            raise NumericalError(f"grid captures prior mass {prior_mass:.8f}, not 1")
        adaptive = True
    else:
        adaptive = False

    probs = np.array([0.025, 0.5, 0.975])
    post = _build(evidence, y, s, tau_prior, grid)
    while adaptive:
        finer = grid.refined()
        if len(finer) > max_nodes:
            raise NumericalError(f"tau quadrature did not converge within {max_nodes} nodes")
        post_f = _build(evidence, y, s, tau_prior, finer)
        change = np.max(np.abs(post_f.tau_quantile(probs) - post.tau_quantile(probs)))
        grid, post = finer, post_f
        if change < tol:
            break
    return post


def _build(evidence, y, s, prior, grid) -> NnhmPosterior:
    a, dens, _ = _posterior_on_grid(y, s, prior, grid)
    mass = grid.weights * dens
    mass = mass / mass.sum()
    return NnhmPosterior(
        evidence=tuple(evidence), tau_prior=prior, grid=grid, tau_density=dens,
        node_mass=mass, w_plus=a["w_plus"], mu_mean=a["mu_mean"],
        theta_means=a["theta_means"], theta_vars=a["theta_vars"],
    )


@dataclass(frozen=True)
class MarginalSummary:
    target: str
    mean: float
    sd: float
    probs: tuple[float, ...]
    quantiles: tuple[float, ...]
    interval: tuple[float, float]
    interval_kind: str

    def as_record(self, scale: str = "log") -> dict:
        f = math.exp if scale == "rr" else (lambda v: v)
        rec = {"target": self.target, "scale": scale, "mean": self.mean, "sd": self.sd}
        rec.update({f"q{p:g}": f(q) for p, q in zip(self.probs, self.quantiles)})
        rec["interval_kind"] = self.interval_kind
        rec["lower"], rec["upper"] = f(self.interval[0]), f(self.interval[1])
        return rec


def marginal_summary(
    post: NnhmPosterior,
    target,
    probs: Sequence[float] = (0.025, 0.5, 0.975),
    level: float = 0.95,
    interval: str = "shortest",
) -> MarginalSummary:
    """Mean, sd, quantiles and a ``level`` interval ("shortest" or "central") of one marginal."""
    kind, key = parse_target(target)
    probs = tuple(float(p) for p in probs)
    if kind == "tau":
        mean = post.tau_mean
        sd = math.sqrt(max(float(post.node_mass @ post.tau**2) - mean**2, 0.0))
        q = post.tau_quantile(np.array(probs))
        iv = post.tau_interval(level, interval)
        label = "tau"
    else:
        mix = post.marginal(target)
        mean, sd = mix.mean, math.sqrt(mix.var)
        q = mix.quantile(np.array(probs), atol=1e-8)
        iv = mix.interval(level, interval)
        label = kind if kind != "theta" else f"theta:{post.study_ids[post.study_index(key)]}"
    return MarginalSummary(label, mean, sd, probs, tuple(float(v) for v in np.atleast_1d(q)), iv, interval)


def tail_probability(post: NnhmPosterior, target, threshold_log_rr: float) -> float:
    """P(target >= threshold) under the posterior marginal."""
    kind, _ = parse_target(target)
    if threshold_log_rr == -math.inf:
        return 1.0
    if kind == "tau":
        return float(1.0 - post.tau_cdf(threshold_log_rr))
    return float(post.marginal(target).sf(threshold_log_rr))


def map_prior(post: NnhmPosterior) -> NormalMixture:
    """Meta-analytic-predictive prior for a new trial as a normal mixture over tau nodes."""
    return post.marginal("theta_star")


def effective_sample_size(post: NnhmPosterior, ess_reference: float) -> float:
    """ESS of the MAP prior by the two-variances ratio against a tau = 0 pooled analysis."""
    if not ess_reference > 0:
        raise DomainError("ess_reference must be positive")
    s = np.array([e.s for e in post.evidence])
    v0 = 1.0 / np.sum(1.0 / s**2)
    return float(ess_reference * v0 / map_prior(post).var)


def _batch_mixture(y, s, tau_prior: HalfNormal, grid: QuadratureGrid, index: int):
    a = node_arrays(y, s, grid.nodes)
    logpost = log_integrated_likelihood(y, s, grid.nodes, a) + tau_prior.logpdf(grid.nodes)
    logpost += np.log(grid.weights)
    logpost -= logpost.max(axis=-1, keepdims=True)
    mass = np.exp(logpost)
    mass /= mass.sum(-1, keepdims=True)
    return mass, a["theta_means"][..., index], np.sqrt(a["theta_vars"][..., index])


def prob_below_batch(
    y: np.ndarray,
    s: np.ndarray,
    tau_prior: HalfNormal,
    grid: QuadratureGrid,
    index: int,
    threshold: float,
) -> np.ndarray:
    """P(theta_index < threshold) for many independent evidence sets at once.

    ``y`` and ``s`` have shape (R, J); returns shape (R,). Same model and grid
    as :func:`fit` with a pinned ``grid``.
    """
    mass, m, sd = _batch_mixture(y, s, tau_prior, grid, index)
    return (mass * special.ndtr((threshold - m) / sd)).sum(-1)


def lower_bound_above_batch(
    y: np.ndarray,
    s: np.ndarray,
    tau_prior: HalfNormal,
    grid: QuadratureGrid,
    index: int,
    threshold: float,
    level: float = 0.95,
    kind: str = "shortest",
) -> np.ndarray:
    """Whether the ``level`` interval of theta_index lies above ``threshold``, per row.

    For "shortest" the marginal is assumed unimodal: the shortest interval
    [L, U] has equal density at both ends, and f(L) - f(U(L)) increases in L,
    so L > t exactly when F(t) < 1 - level and f(t) < f(U(t)) with
    F(U(t)) = F(t) + level.
    """
    mass, m, sd = _batch_mixture(y, s, tau_prior, grid, index)
    t = np.full(mass.shape[:-1] + (1,), float(threshold))
    cdf = lambda x: (mass * special.ndtr((x - m) / sd)).sum(-1, keepdims=True)
    pdf = lambda x: (mass * np.exp(-0.5 * ((x - m) / sd) ** 2) / sd).sum(-1, keepdims=True)
    F_t = cdf(t)
    if kind == "central":
        return (F_t < (1 - level) / 2)[..., 0]
    if kind != "shortest":
        raise DomainError(f"unknown interval kind {kind!r}")
    target = F_t + level
    lo, hi = t.copy(), t + 40.0 * sd.max(-1, keepdims=True)
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    upper = 0.5 * (lo + hi)
    return ((F_t < 1 - level) & (pdf(t) < pdf(upper)))[..., 0]
