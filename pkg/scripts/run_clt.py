"""Fluctuation check: variance and normality of sqrt(N) M(T)."""
import argparse

from snfe.harness import ExperimentSpec, run_clt

ap = argparse.ArgumentParser()
ap.add_argument("--replicas", type=int, default=10_000)
ap.add_argument("--N", type=int, nargs="+", default=[100, 400])
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="out/clt")
args = ap.parse_args()

rep = run_clt(ExperimentSpec(kind="clt", P=1, x0=(0.2,), N_list=tuple(args.N), replicas=args.replicas, seed=args.seed))
rep.write(args.out)
print(rep.summary())
