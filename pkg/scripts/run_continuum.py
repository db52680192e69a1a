"""Common-noise continuum ladder with the error budget table."""
import argparse

from snfe.harness import ExperimentSpec, error_budget, run_continuum

ap = argparse.ArgumentParser()
ap.add_argument("--replicas", type=int, default=200)
ap.add_argument("--T", type=float, default=1.0)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="out/continuum")
args = ap.parse_args()

spec = ExperimentSpec(kind="continuum", kappa=0.4, replicas=args.replicas, T=args.T, seed=args.seed)
rep = run_continuum(spec)
rep.write(args.out)
budget = error_budget(spec, continuum=rep)
budget.write(args.out)
print(rep.summary())
print(budget.summary())
for row in budget.tables["terms"][1]:
    print("m={} 1/m^2={:.2e} tail={:.2e} cond_i={:.2e} cond_ii={:.2e} dominant={} E={:.4f}".format(*row))
