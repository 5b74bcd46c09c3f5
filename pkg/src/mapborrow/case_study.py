"""Bundled herpetic keratitis data and the end-of-phase-II / phase III workflows."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

from .distributions import HalfNormal, Z975
from .evidence import NiMargin, StudyCounts, margin_to_rr, parse_dataset, to_evidence
from .nnhm import MarginalSummary, effective_sample_size, fit, marginal_summary, tail_probability
from .ocsim import OcScenario

GRID_P_CONTROLS = (0.70, 0.75, 0.80, 0.85, 0.90)
GRID_DELTAS = (-0.12, -0.06, 0.0, 0.06, 0.12)


@dataclass(frozen=True)
class CaseStudyBundle:
    phase2: tuple[StudyCounts, ...]
    phase3_interim: StudyCounts
    phase3_final: StudyCounts
    margin: NiMargin = field(default_factory=lambda: margin_to_rr(0.9, 0.12))
    tau_prior_primary: HalfNormal = field(default_factory=lambda: HalfNormal(0.5))
    tau_prior_sensitivity: HalfNormal = field(default_factory=lambda: HalfNormal(1.0))

    @property
    def ess_reference(self) -> int:
        """Patients randomised in the phase II studies, both arms."""
        return sum(c.n_total for c in self.phase2)

    def phase2_evidence(self):
        return [to_evidence(c) for c in self.phase2]

    def stage_counts(self, stage: str) -> StudyCounts:
        if stage == "interim":
            return self.phase3_interim
        if stage == "final":
            return self.phase3_final
        raise ValueError(f"stage must be 'interim' or 'final', got {stage!r}")


def bundled_csv() -> str:
    return resources.files("mapborrow").joinpath("data/zirgan.csv").read_text()


BUNDLED_SUBSETS = {
    "zirgan-phase2": ("4", "5", "6"),
    "zirgan-interim": ("4", "5", "6", "7IA"),
    "zirgan-final": ("4", "5", "6", "7FA"),
}


def bundled_dataset(name: str) -> list[StudyCounts]:
    """Named subsets of the bundled data, e.g. 'zirgan-final'."""
    if name not in BUNDLED_SUBSETS:
        raise KeyError(name)
    recs = {r.study_id: r for r in parse_dataset(bundled_csv(), "zirgan.csv")}
    return [recs[k] for k in BUNDLED_SUBSETS[name]]


def load_bundle() -> CaseStudyBundle:
    recs = {r.study_id: r for r in parse_dataset(bundled_csv(), "zirgan.csv")}
    return CaseStudyBundle(
        phase2=(recs["4"], recs["5"], recs["6"]),
        phase3_interim=recs["7IA"],
        phase3_final=recs["7FA"],
    )


@dataclass
class Report:
    title: str
    config: dict
    summaries: list[MarginalSummary]
    probabilities: dict[str, float] = field(default_factory=dict)
    decisions: dict[str, bool] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def summary(self, target: str) -> MarginalSummary:
        for s in self.summaries:
            if s.target == target:
                return s
        raise KeyError(target)


def run_eop2(bundle: CaseStudyBundle | None = None, sensitivity: bool = False) -> Report:
    """Meta-analysis of the phase II studies and the MAP prior for phase III."""
    bundle = bundle or load_bundle()
    prior = bundle.tau_prior_sensitivity if sensitivity else bundle.tau_prior_primary
    post = fit(bundle.phase2_evidence(), prior)
    thr = bundle.margin.log_threshold
    summaries = [marginal_summary(post, f"theta:{c.study_id}") for c in bundle.phase2]
    summaries += [marginal_summary(post, t) for t in ("mu", "theta_star", "tau")]
    return Report(
        title="end-of-phase-II meta-analysis",
        config={"tau_prior": str(prior), "margin": _margin_str(bundle.margin)},
        summaries=summaries,
        probabilities={
            "P(mu >= log RR threshold)": tail_probability(post, "mu", thr),
            "P(theta_star >= log RR threshold)": tail_probability(post, "theta_star", thr),
        },
        extra={"ess": effective_sample_size(post, bundle.ess_reference),
               "ess_reference": bundle.ess_reference},
    )


def run_phase3(stage: str, bundle: CaseStudyBundle | None = None, sensitivity: bool = False) -> Report:
    """Combined (MAC) analysis of phase II plus study 7 at ``stage``, and study 7 alone."""
    bundle = bundle or load_bundle()
    prior = bundle.tau_prior_sensitivity if sensitivity else bundle.tau_prior_primary
    counts = bundle.stage_counts(stage)
    new = to_evidence(counts)
    post = fit(bundle.phase2_evidence() + [new], prior)
    thr = bundle.margin.rr_threshold
    meta = marginal_summary(post, f"theta:{new.study_id}")
    lo, hi = new.wald_interval(Z975)
    return Report(
        title=f"phase III {stage} analysis",
        config={"tau_prior": str(prior), "margin": _margin_str(bundle.margin), "stage": stage},
        summaries=[marginal_summary(post, f"theta:{c.study_id}") for c in bundle.phase2]
        + [meta, marginal_summary(post, "mu"), marginal_summary(post, "tau")],
        probabilities={"P(theta_new >= log RR threshold)": tail_probability(post, f"theta:{new.study_id}", math.log(thr))},
        decisions={
            "meta_analytic": math.exp(meta.interval[0]) > thr,
            "standalone": math.exp(lo) > thr,
        },
        extra={"standalone_rr": math.exp(new.y), "standalone_interval_rr": (math.exp(lo), math.exp(hi))},
    )


def default_scenarios(n_sim: int = 10_000, seed: int = 1, **kw) -> list[OcScenario]:
    """The 5 x 5 grid of control rates and treatment differences with phase II history.

    The RR margin stays at the design value 0.78 / 0.9 in every cell.
    """
    hist = tuple(load_bundle().phase2_evidence())
    kw.setdefault("design_p_control", 0.9)
    return [
        OcScenario(pc, d, hist, n_sim=n_sim, seed=seed, **kw)
        for pc in GRID_P_CONTROLS
        for d in GRID_DELTAS
    ]


def _margin_str(m: NiMargin) -> str:
    return f"p_C={m.p_control:g}, m={m.delta_abs:g} -> RR >= {m.rr_threshold:.4f}"
