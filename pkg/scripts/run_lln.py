"""Law of large numbers ladder: sup-norm error of the chain against the ODE."""
import argparse

from snfe.harness import ExperimentSpec, run_lln

ap = argparse.ArgumentParser()
ap.add_argument("--replicas", type=int, default=1000)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="out/lln")
args = ap.parse_args()

rep = run_lln(ExperimentSpec(kind="lln", replicas=args.replicas, seed=args.seed))
rep.write(args.out)
print(rep.summary())
for N, err, se, _ in rep.tables["errors"][1]:
    print(f"N={N:5d}  err={err:.5f} +- {se:.5f}")
