"""Half-normal tau priors: quantiles and the 97.5%/50% RR ratio, Monte Carlo vs integration."""
import argparse

from mapborrow.distributions import (HalfNormal, half_normal_quantile, prior_marginal_ratio,
                                     prior_marginal_ratio_exact, prior_marginal_ratio_se)

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--scales", type=float, nargs="+", default=[0.5, 1.0])
ap.add_argument("--draws", type=int, default=10**6)
ap.add_argument("--seed", type=int, default=314)
args = ap.parse_args()

for scale in args.scales:
    hn = HalfNormal(scale)
    q = [half_normal_quantile(hn, p) for p in (0.5, 0.025, 0.975)]
    mc = prior_marginal_ratio(hn, args.draws, args.seed)
    print(f"{hn}: median {q[0]:.3f} ({q[1]:.3f}, {q[2]:.3f})  ratio MC {mc:.3f} "
          f"+/- {prior_marginal_ratio_se(hn, args.draws):.3f}, integrated {prior_marginal_ratio_exact(hn):.3f}")
