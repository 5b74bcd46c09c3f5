"""Bayesian meta-analytic borrowing of phase II evidence into phase III analyses."""

__version__ = "0.1.0"

from .distributions import HalfNormal, heterogeneity_ratio, half_normal_quantile, prior_marginal_ratio
from .evidence import Evidence, NiMargin, StudyCounts, margin_to_rr, to_evidence
from .mixture import NormalMixture
from .nnhm import (
    NnhmPosterior,
    conditional,
    effective_sample_size,
    fit,
    map_prior,
    marginal_summary,
    tail_probability,
)
from .ocsim import DecisionRule, OcResult, OcScenario, run_oc, simulate_trial
