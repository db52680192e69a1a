"""Solve the traveling front and print speed, residual and the gradient bound."""
import argparse

from snfe.model import GainFunction, SynapticKernel
from snfe.wave import solve_profile

ap = argparse.ArgumentParser()
ap.add_argument("--gamma", type=float, default=8.0)
ap.add_argument("--kappa", type=float, default=0.4)
ap.add_argument("--kernel", default="exponential")
ap.add_argument("--sigma", type=float, default=1.0)
ap.add_argument("--csv", default=None)
args = ap.parse_args()

p = solve_profile(GainFunction(args.gamma, args.kappa), SynapticKernel(args.kernel, args.sigma))
print(f"c = {p.c:.8f}  residual = {p.residual_norm:.2e}  reflected = {p.reflected}")
print(f"fixed points a1={p.a1:.6f} a={p.a:.6f} a2={p.a2:.6f}")
print(f"int u_x^2 = {p.ux_l2_squared():.5f}  bound = {p.ux_l2_bound():.5f}")
if args.csv:
    p.to_csv(args.csv)
