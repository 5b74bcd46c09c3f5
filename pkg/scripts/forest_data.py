"""Write forest-plot data (per-study stratified and shrunken RRs, mu, theta_star) as CSV.

    python scripts/forest_data.py > forest.csv
"""
import csv
import math
import sys

from mapborrow.case_study import load_bundle
from mapborrow.distributions import Z975
from mapborrow.evidence import to_evidence
from mapborrow.nnhm import fit, marginal_summary

FIELDS = ["analysis", "parameter", "kind", "rr_median", "rr_lower", "rr_upper"]


def rows_for(name, counts, prior):
    ev = [to_evidence(c) for c in counts]
    for e in ev:
        lo, hi = e.wald_interval(Z975)
        yield dict(analysis=name, parameter=e.study_id, kind="stratified",
                   rr_median=math.exp(e.y), rr_lower=math.exp(lo), rr_upper=math.exp(hi))
    post = fit(ev, prior)
    targets = [f"theta:{e.study_id}" for e in ev] + ["mu"] + (["theta_star"] if name == "eop2" else [])
    for t in targets:
        s = marginal_summary(post, t)
        yield dict(analysis=name, parameter=s.target, kind="posterior",
                   rr_median=math.exp(s.quantiles[1]), rr_lower=math.exp(s.interval[0]),
                   rr_upper=math.exp(s.interval[1]))


def main():
    b = load_bundle()
    w = csv.DictWriter(sys.stdout, FIELDS, lineterminator="\n")
    w.writeheader()
    for name, counts in (("eop2", b.phase2), ("interim", b.phase2 + (b.phase3_interim,)),
                         ("final", b.phase2 + (b.phase3_final,))):
        for row in rows_for(name, counts, b.tau_prior_primary):
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})


if __name__ == "__main__":
    main()
