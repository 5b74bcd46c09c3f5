"""Monte Carlo operating characteristics of the phase II/III design.

Each replicate draws one uniform per patient from its own stream, seeded by
(seed, replicate index). A patient responds if its uniform falls below the arm's
response rate, and the interim data are the first patients of each arm. So
results do not depend on chunking or worker count. Scenarios that share a
seed also share random numbers, which keeps comparisons across cells smooth.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .distributions import HalfNormal, norm_ppf, simpson_grid
from .errors import DomainError
from .evidence import Evidence, NiMargin, StudyCounts, log_rr, margin_to_rr
from .nnhm import lower_bound_above_batch

RULES = ("meta_analytic", "standalone")
CHUNK = 1000
# tau nodes for the batched fits; 401 nodes gave identical decisions on the default grid
OC_NODES = 101


@dataclass(frozen=True)
class OcScenario:
    p_control: float
    delta: float
    historical: tuple[Evidence, ...]
    n_per_arm_final: int = 80
    interim_fraction: float = 0.5
    margin_abs: float = 0.12
    tau_prior: HalfNormal = field(default_factory=lambda: HalfNormal(0.5))
    n_sim: int = 10_000
    seed: int = 1
    design_p_control: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "historical", tuple(self.historical))
        if not 0 < self.p_control <= 1:
            raise DomainError(f"p_control must lie in (0, 1], got {self.p_control}")
        if not 0 < self.interim_fraction <= 1:
            raise DomainError("interim_fraction must lie in (0, 1]")
        if self.n_per_arm_final < 1 or self.n_sim < 1:
            raise DomainError("n_per_arm_final and n_sim must be positive")

    @property
    def p_treatment(self) -> float:
        return self.p_control + self.delta

    @property
    def feasible(self) -> bool:
        return 0 < self.p_treatment <= 1 + 1e-12

    @property
    def n_interim(self) -> int:
        return max(1, int(round(self.interim_fraction * self.n_per_arm_final)))

    @property
    def margin(self) -> NiMargin:
        """RR margin from the design control rate, or from the scenario's own rate if unset."""
        pc = self.p_control if self.design_p_control is None else self.design_p_control
        return margin_to_rr(pc, self.margin_abs)

    def check(self):
        if not self.feasible:
            raise ScenarioRejected(
                f"p_T = p_C + delta = {self.p_treatment:.3f} is not a response rate"
            )


class ScenarioRejected(DomainError):
    """The scenario implies a treatment response rate outside (0, 1]."""


@dataclass(frozen=True)
class DecisionRule:
    kind: str = "meta_analytic"
    credibility: float = 0.95
    rr_threshold: float | None = None
    interval: str = "shortest"

    def __post_init__(self):
        if self.interval not in ("shortest", "central"):
            raise DomainError(f"interval must be 'shortest' or 'central', got {self.interval!r}")
        if self.kind not in RULES:
            raise DomainError(f"rule must be one of {RULES}, got {self.kind!r}")
        if not 0 < self.credibility < 1:
            raise DomainError("credibility must lie in (0, 1)")

    def for_scenario(self, scenario: OcScenario) -> "DecisionRule":
        return replace(self, rr_threshold=scenario.margin.rr_threshold)

    @property
    def tail(self) -> float:
        return (1.0 - self.credibility) / 2.0


@dataclass(frozen=True)
class OcResult:
    scenario: OcScenario
    rule: DecisionRule
    p_success_final: float
    p_success_interim_and_final: float
    p_success_interim: float
    mc_se: dict
    n_sim_effective: int


@lru_cache(maxsize=64)
def _uniforms(seed: int, start: int, stop: int, n_t: int, n_c: int) -> tuple[np.ndarray, np.ndarray]:
    u_t = np.empty((stop - start, n_t))
    u_c = np.empty((stop - start, n_c))
    for row, k in enumerate(range(start, stop)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        u_t[row] = rng.random(n_t)
        u_c[row] = rng.random(n_c)
    u_t.flags.writeable = False
    u_c.flags.writeable = False
    return u_t, u_c


def simulate_counts(scenario: OcScenario, start: int = 0, stop: int | None = None) -> dict[str, np.ndarray]:
    """Responder counts for replicates [start, stop): keys r_t/r_c at interim and final."""
    scenario.check()
    stop = scenario.n_sim if stop is None else stop
    n, m = scenario.n_per_arm_final, scenario.n_interim
    u_t, u_c = _uniforms(scenario.seed, start, stop, n, n)
    resp_t = u_t < scenario.p_treatment
    resp_c = u_c < scenario.p_control
    return {
        "r_t_interim": resp_t[:, :m].sum(1), "r_c_interim": resp_c[:, :m].sum(1),
        "r_t_final": resp_t.sum(1), "r_c_final": resp_c.sum(1),
    }


def simulate_trial(scenario: OcScenario, replicate_index: int) -> tuple[StudyCounts, StudyCounts]:
    sim = simulate_counts(scenario, replicate_index, replicate_index + 1)
    n, m = scenario.n_per_arm_final, scenario.n_interim
    interim = StudyCounts("new", int(sim["r_t_interim"][0]), m, int(sim["r_c_interim"][0]), m, "III")
    final = StudyCounts("new", int(sim["r_t_final"][0]), n, int(sim["r_c_final"][0]), n, "III")
    return interim, final


def _decide(scenario: OcScenario, rule: DecisionRule, r_t, r_c, n, grid) -> np.ndarray:
    y, s = log_rr(r_t, n, r_c, n)
    log_thr = math.log(rule.rr_threshold)
    if rule.kind == "standalone":
        return y - norm_ppf(1 - rule.tail) * s > log_thr
    hy = np.array([e.y for e in scenario.historical])
    hs = np.array([e.s for e in scenario.historical])
    Y = np.column_stack([np.broadcast_to(hy, (y.size, hy.size)), y])
    S = np.column_stack([np.broadcast_to(hs, (s.size, hs.size)), s])
    return lower_bound_above_batch(Y, S, scenario.tau_prior, grid, hy.size, log_thr,
                                   rule.credibility, rule.interval)


def run_oc(scenario: OcScenario, rule: DecisionRule, chunk: int = CHUNK) -> OcResult:
    scenario.check()
    rule = rule.for_scenario(scenario)
    if rule.kind == "meta_analytic" and not scenario.historical:
        raise DomainError("meta-analytic rule needs historical evidence")
    grid = simpson_grid(scenario.tau_prior.upper_bound(), OC_NODES)
    n, m = scenario.n_per_arm_final, scenario.n_interim
    n_int = n_fin = n_both = 0
    for start in range(0, scenario.n_sim, chunk):
        sim = simulate_counts(scenario, start, min(start + chunk, scenario.n_sim))
        ok_i = _decide(scenario, rule, sim["r_t_interim"], sim["r_c_interim"], m, grid)
        ok_f = _decide(scenario, rule, sim["r_t_final"], sim["r_c_final"], n, grid)
        n_int += int(ok_i.sum())
        n_fin += int(ok_f.sum())
        n_both += int((ok_i & ok_f).sum())
    R = scenario.n_sim
    probs = {"final": n_fin / R, "interim_and_final": n_both / R, "interim": n_int / R}
    se = {k: math.sqrt(p * (1 - p) / R) for k, p in probs.items()}
    return OcResult(scenario, rule, probs["final"], probs["interim_and_final"], probs["interim"], se, R)


def _run_cell(args):
    scenario, rules = args
    if not scenario.feasible:
        return None
    return {r.kind: run_oc(scenario, r) for r in rules}


def run_grid(
    scenarios: Sequence[OcScenario], rules: Iterable[DecisionRule | str] = RULES, n_jobs: int = 1
) -> list[dict[str, OcResult] | None]:
    """Run every scenario under every rule; infeasible cells map to None.

    Results are keyed by rule kind and do not depend on ``n_jobs``.
    """
    rules = tuple(r if isinstance(r, DecisionRule) else DecisionRule(r) for r in rules)
    tasks = [(sc, rules) for sc in scenarios]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            return list(pool.map(_run_cell, tasks))
    return [_run_cell(t) for t in tasks]


def format_cell(res: OcResult | None) -> str:
    if res is None:
        return "--"
    return f"{100 * res.p_success_final:.0f} ({100 * res.p_success_interim_and_final:.0f})"


def format_table(
    p_controls: Sequence[float],
    deltas: Sequence[float],
    results: dict[tuple[float, float], dict[str, OcResult] | None],
    kinds: Sequence[str] = RULES,
) -> str:
    """Rows by p_C (one line per rule, meta-analytic first), columns by delta."""
    width = 10
    head = "p_C   rule          " + "".join(f"{d:>+{width}.2f}" for d in deltas)
    lines = [head, "-" * len(head)]
    for pc in p_controls:
        for i, kind in enumerate(kinds):
            label = f"{pc:.2f}" if i == 0 else "    "
            cells = []
            for d in deltas:
                cell = results.get((pc, d))
                cells.append(format_cell(None if cell is None else cell[kind]))
            lines.append(f"{label}  {kind:<13} " + "".join(f"{c:>{width}}" for c in cells))
    return "\n".join(lines)
