"""Command-line interface: ``mapborrow <verb> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
With ``--json`` every verb writes one JSON record per line instead of text.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from .case_study import (BUNDLED_SUBSETS, GRID_DELTAS, GRID_P_CONTROLS, bundled_dataset, load_bundle,
                         run_eop2, run_phase3)
from .distributions import (HalfNormal, half_normal_quantile, heterogeneity_ratio,
                            prior_marginal_ratio)
from .errors import DataError, DomainError, NumericalError
from .evidence import StudyCounts, as_evidence, load_dataset, margin_to_rr
from .nnhm import effective_sample_size, fit, map_prior, marginal_summary, parse_target, tail_probability
from .ocsim import RULES, DecisionRule, OcScenario, format_table, run_grid

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# --- argument types ----------------------------------------------------------

def tau_prior_arg(text: str) -> HalfNormal:
    kind, _, val = text.partition(":")
    try:
        if kind.lower() != "hn":
            raise ValueError
        return HalfNormal(float(val))
    except (ValueError, DomainError):
        raise argparse.ArgumentTypeError(f"expected hn:<positive scale>, got {text!r}") from None


def margin_arg(text: str):
    try:
        pc, m = (float(v) for v in text.split(":"))
        return margin_to_rr(pc, m)
    except (ValueError, DomainError):
        raise argparse.ArgumentTypeError(f"expected <p_control>:<margin> with 0 <= margin < p_control <= 1, got {text!r}") from None


def target_arg(text: str) -> str:
    try:
        parse_target(text)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


# --- output ------------------------------------------------------------------

class Out:
    def __init__(self, as_json: bool, stream=None):
        self.as_json = as_json
        self.stream = stream or sys.stdout

    def config(self, **cfg):
        if self.as_json:
            self.record("config", **cfg)
        else:
            self.text("# " + ", ".join(f"{k}={v}" for k, v in cfg.items()))

    def record(self, kind: str, **fields):
        if self.as_json:
            print(json.dumps({"record": kind, **fields}), file=self.stream)

    def text(self, line: str = ""):
        if not self.as_json:
            print(line, file=self.stream)


def _pct(p: float) -> str:
    return f"{100 * p:.1f}%"


def _summary_lines(out: Out, summaries, probs_label=True):
    out.text(f"{'parameter':<14}{'RR median':>10}{'RR 95% interval':>22}{'log mean':>10}{'log sd':>9}")
    for s in summaries:
        if s.target == "tau":
            med = s.quantiles[s.probs.index(0.5)] if 0.5 in s.probs else float("nan")
            out.text(f"{'tau':<14}{med:>10.3f}{f'({s.interval[0]:.3f}, {s.interval[1]:.3f})':>22}"
                     f"{s.mean:>10.3f}{s.sd:>9.3f}   (tau itself, not RR)")
            out.record("summary", **s.as_record("log"))
            continue
        med = math.exp(s.quantiles[s.probs.index(0.5)]) if 0.5 in s.probs else float("nan")
        lo, hi = math.exp(s.interval[0]), math.exp(s.interval[1])
        out.text(f"{s.target:<14}{med:>10.3f}{f'({lo:.3f}, {hi:.3f})':>22}{s.mean:>10.3f}{s.sd:>9.3f}")
        out.record("summary", **s.as_record("rr"))


def _emit_evidence(out: Out, evidence):
    for e in evidence:
        out.record("evidence", study_id=e.study_id, y=e.y, s=e.s)


def _load(path: str):
    recs = bundled_dataset(path) if path in BUNDLED_SUBSETS else load_dataset(path)
    return recs, as_evidence(recs)


# --- verbs -------------------------------------------------------------------

def cmd_analyze(args, out: Out):
    recs, ev = _load(args.dataset)
    post = fit(ev, args.tau_prior)
    targets = args.target or ["mu", "theta-star", "tau"] + [f"theta:{e.study_id}" for e in ev]
    out.config(verb="analyze", dataset=args.dataset, tau_prior=str(args.tau_prior),
               p_control=args.margin.p_control, margin=args.margin.delta_abs,
               rr_threshold=round(args.margin.rr_threshold, 6), interval=args.interval)
    _emit_evidence(out, ev)
    out.text(f"NNHM fit of {len(ev)} studies, tau prior {args.tau_prior}, {len(post.grid)} tau nodes")
    summaries = [marginal_summary(post, t, interval=args.interval) for t in targets]
    _summary_lines(out, summaries)
    out.text(f"\nP(parameter >= log {args.margin.rr_threshold:.4f}):")
    for t, s in zip(targets, summaries):
        if s.target == "tau":
            continue
        p = tail_probability(post, t, args.margin.log_threshold)
        out.text(f"  {s.target:<14}{_pct(p):>8}")
        out.record("probability", target=s.target, threshold_rr=args.margin.rr_threshold, p=p)


def cmd_predict(args, out: Out):
    recs, ev = _load(args.dataset)
    post = fit(ev, args.tau_prior)
    mix = map_prior(post)
    out.config(verb="predict", dataset=args.dataset, tau_prior=str(args.tau_prior),
               p_control=args.margin.p_control, margin=args.margin.delta_abs,
               rr_threshold=round(args.margin.rr_threshold, 6), interval=args.interval)
    _emit_evidence(out, ev)
    s = marginal_summary(post, "theta_star", interval=args.interval)
    out.text("MAP prior for a new trial (theta_star):")
    _summary_lines(out, [s])
    p = tail_probability(post, "theta_star", args.margin.log_threshold)
    out.text(f"P(theta_star >= log {args.margin.rr_threshold:.4f}) = {_pct(p)}")
    out.record("probability", target="theta_star", threshold_rr=args.margin.rr_threshold, p=p)
    if args.components:
        out.text(f"\n{len(mix.weights)} mixture components (weight, mean, sd) written as records")
        for w, m, v in zip(mix.weights, mix.means, mix.variances):
            out.record("map_component", weight=float(w), mean=float(m), sd=math.sqrt(v))


def cmd_ess(args, out: Out):
    recs, ev = _load(args.dataset)
    ess0 = args.ess0
    if ess0 is None:
        if not all(isinstance(r, StudyCounts) for r in recs):
            raise UsageError("--ess0 is required when the dataset holds evidence records without counts")
        ess0 = sum(r.n_total for r in recs)
    post = fit(ev, args.tau_prior)
    ess = effective_sample_size(post, ess0)
    out.config(verb="ess", dataset=args.dataset, tau_prior=str(args.tau_prior), ess0=ess0)
    out.text(f"ESS of the MAP prior: {ess:.1f} (reference: {ess0} patients under tau = 0)")
    out.record("ess", ess=ess, ess0=ess0, v_star=map_prior(post).var,
               v0=1.0 / sum(1.0 / e.s**2 for e in ev))


def _read_grid(path: str | None, tau_prior: HalfNormal):
    cfg = {}
    base = Path(".")
    if path is not None:
        try:
            cfg = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read grid {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        base = Path(path).parent
    if "cells" in cfg:
        cells = [tuple(map(float, c)) for c in cfg["cells"]]
    else:
        pcs = cfg.get("p_control", GRID_P_CONTROLS)
        ds = cfg.get("delta", GRID_DELTAS)
        cells = [(float(pc), float(d)) for pc in pcs for d in ds]
    if "historical" in cfg:
        hist = as_evidence(load_dataset(base / cfg["historical"]))
    else:
        hist = load_bundle().phase2_evidence()
    if "tau_prior" in cfg:
        tau_prior = tau_prior_arg(cfg["tau_prior"])
    design = dict(
        n_per_arm_final=int(cfg.get("n_per_arm_final", 80)),
        interim_fraction=float(cfg.get("interim_fraction", 0.5)),
        margin_abs=float(cfg.get("margin_abs", 0.12)),
        design_p_control=cfg.get("design_p_control", 0.9),
    )
    return cells, tuple(hist), tau_prior, design


def cmd_oc(args, out: Out):
    if args.nsim < 1000:
        raise UsageError("--nsim must be at least 1000")
    try:
        cells, hist, prior, design = _read_grid(args.grid, args.tau_prior)
        scenarios = [OcScenario(pc, d, hist, tau_prior=prior, n_sim=args.nsim, seed=args.seed, **design)
                     for pc, d in cells]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (DataError, DomainError)):
            raise
        raise DataError(f"malformed grid: {exc}") from None
    kinds = RULES if args.rule == "both" else ({"meta": "meta_analytic"}.get(args.rule, args.rule),)
    rules = [DecisionRule(k, interval=args.interval) for k in kinds]
    out.config(verb="oc", grid=args.grid or "default", nsim=args.nsim, seed=args.seed,
               tau_prior=str(prior), rule=args.rule, interval=args.interval,
               **{k: v for k, v in design.items()})
    results = run_grid(scenarios, rules, n_jobs=args.jobs)
    table = {(sc.p_control, sc.delta): r for sc, r in zip(scenarios, results)}
    pcs = sorted({c[0] for c in cells})
    ds = sorted({c[1] for c in cells})
    out.text("success at final (success at interim and final), percent")
    out.text(format_table(pcs, ds, table, kinds))
    for sc, res in zip(scenarios, results):
        for k in kinds:
            if res is None:
                out.record("oc_cell", p_control=sc.p_control, delta=sc.delta, rule=k, feasible=False)
                continue
            r = res[k]
            out.record("oc_cell", p_control=sc.p_control, delta=sc.delta, rule=k, feasible=True,
                       rr_threshold=r.rule.rr_threshold, p_final=r.p_success_final,
                       p_interim_and_final=r.p_success_interim_and_final,
                       p_interim=r.p_success_interim, mc_se=r.mc_se, n_sim=r.n_sim_effective)


def cmd_case_study(args, out: Out):
    bundle = load_bundle()
    prior = bundle.tau_prior_sensitivity if args.sensitivity else bundle.tau_prior_primary
    out.config(verb="case-study", stage=args.stage, tau_prior=str(prior),
               p_control=bundle.margin.p_control, margin=bundle.margin.delta_abs,
               rr_threshold=round(bundle.margin.rr_threshold, 6))
    stages = ["eop2", "interim", "final"] if args.stage == "all" else [args.stage]
    for stage in stages:
        rep = run_eop2(bundle, args.sensitivity) if stage == "eop2" else run_phase3(stage, bundle, args.sensitivity)
        out.text(f"\n== {rep.title} ==")
        _summary_lines(out, rep.summaries)
        for label, p in rep.probabilities.items():
            out.text(f"{label}: {_pct(p)}")
            out.record("probability", stage=stage, label=label, p=p)
        for kind, ok in rep.decisions.items():
            out.text(f"non-inferiority ({kind}): {'declared' if ok else 'not declared'}")
            out.record("decision", stage=stage, rule=kind, non_inferior=ok)
        if "ess" in rep.extra:
            out.text(f"ESS of MAP prior: {rep.extra['ess']:.1f} (ESS_0 = {rep.extra['ess_reference']})")
            out.record("ess", stage=stage, ess=rep.extra["ess"], ess0=rep.extra["ess_reference"])
        if "standalone_interval_rr" in rep.extra:
            lo, hi = rep.extra["standalone_interval_rr"]
            out.text(f"study 7 alone: RR {rep.extra['standalone_rr']:.3f} (Wald 95% {lo:.3f}, {hi:.3f})")
            out.record("standalone", stage=stage, rr=rep.extra["standalone_rr"], lower=lo, upper=hi)


def cmd_prior_summary(args, out: Out):
    prior = args.tau_prior
    med = half_normal_quantile(prior, 0.5)
    lo, hi = half_normal_quantile(prior, 0.025), half_normal_quantile(prior, 0.975)
    ratio = prior_marginal_ratio(prior, args.draws, args.seed)
    out.config(verb="prior-summary", tau_prior=str(prior), draws=args.draws, seed=args.seed)
    out.text(f"tau ~ {prior}: median {med:.3f}, 95% interval ({lo:.3f}, {hi:.3f})")
    out.text(f"RR 97.5%/50% ratio, tau integrated over the prior: {ratio:.2f}")
    out.text(f"RR 97.5%/50% ratio at the prior median tau: {heterogeneity_ratio(med):.2f}")
    out.record("prior", scale=prior.scale, median=med, lower=lo, upper=hi, rr_ratio=ratio)


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mapborrow", description="Meta-analytic use of phase II data in phase III.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tau-prior", type=tau_prior_arg, default=HalfNormal(0.5), metavar="hn:SCALE")
    common.add_argument("--json", action="store_true", help="line-delimited JSON records")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("dataset", help="CSV or JSON-lines file, or one of: " + ", ".join(BUNDLED_SUBSETS))
    data.add_argument("--margin", type=margin_arg, default=margin_to_rr(0.9, 0.12), metavar="P_C:M")
    data.add_argument("--interval", choices=("shortest", "central"), default="shortest")

    p = sub.add_parser("analyze", parents=[common, data], help="fit and summarise")
    p.add_argument("--target", type=target_arg, action="append",
                   help="mu | tau | theta-star | theta:<study_id> (repeatable)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", parents=[common, data], help="MAP prior for a new trial")
    p.add_argument("--components", action="store_true", help="emit the MAP mixture components")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ess", parents=[common, data], help="effective sample size of the MAP prior")
    p.add_argument("--ess0", type=int, help="patients behind the tau = 0 analysis (default: all randomised)")
    p.set_defaults(func=cmd_ess)

    p = sub.add_parser("oc", parents=[common], help="operating characteristics by simulation")
    p.add_argument("--grid", help="JSON grid file (default: the published 5 x 5 grid)")
    p.add_argument("--nsim", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rule", choices=("meta", "standalone", "both"), default="both")
    p.add_argument("--interval", choices=("shortest", "central"), default="shortest")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_oc)

    p = sub.add_parser("case-study", parents=[common], help="herpetic keratitis workflows")
    p.add_argument("--stage", choices=("eop2", "interim", "final", "all"), default="all")
    p.add_argument("--sensitivity", action="store_true", help="use the HN(1) tau prior")
    p.set_defaults(func=cmd_case_study)

    p = sub.add_parser("prior-summary", parents=[common], help="half-normal tau prior summaries")
    p.add_argument("--draws", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=314)
    p.set_defaults(func=cmd_prior_summary)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Out(getattr(args, "json", False))
    try:
        args.func(args, out)
    except (UsageError, DomainError) as exc:
        if isinstance(exc, DataError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
