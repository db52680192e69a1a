"""Exit criteria, each at its stated tolerance; one pass/fail line per criterion."""
import numpy as np
import pytest

from conftest import record_criterion
from snfe.diffusion import simulate_activity_sde, simulate_voltage_sde
from snfe.harness import ExperimentSpec, run_clt, run_continuum, run_lln
from snfe.jumpchain import simulate
from snfe.model import GainFunction, SynapticKernel, chain_weights, fixed_points
from snfe.noise import (
    CorrelationKernel, build_covariance, condition_i_bound, condition_i_norm, sample_increments,
)
from snfe.spde import (
    CoupledSystem, NetworkLevel, ReferenceField, SPDEConfig, continuum_lipschitz_bound,
    continuum_lipschitz_numeric, default_delta, simulate_coupled,
)
from snfe.wave import wave_dx

pytestmark = pytest.mark.acceptance
LADDER = {4: 6, 8: 8, 16: 10, 32: 12}


def test_wave_correctness(symmetric_wave, moving_wave):
    s, mv = symmetric_wave, moving_wave
    anti = float(np.max(np.abs(s.u + s.u[::-1] - (s.a1 + s.a2))))
    l2, bound = mv.ux_l2_squared(), mv.ux_l2_bound()
    ok = abs(s.c) < 1e-6 and anti < 1e-6 and mv.residual_norm < 1e-8 and l2 <= bound
    detail = f"|c|={abs(s.c):.1e} antisym={anti:.1e}; moving c={mv.c:.5f} res={mv.residual_norm:.1e} " \
             f"int u_x^2={l2:.4f} <= {bound:.4f}"
    assert record_criterion(1, ok, detail)


def test_fixed_points():
    F = GainFunction(8.0, 0.5)
    (a1, a, a2), (s1, s, s2) = fixed_points(F)
    ok = abs(a - 0.5) < 1e-12 and abs(s - 2.0) < 1e-12 and s > 1 and abs(s1 - s2) < 1e-12 and s1 < 1
    assert record_criterion(2, ok, f"a={a:.15f} F'(a)={s:.12f} F'(a1)={s1:.6f} F'(a2)={s2:.6f}")


def test_kernel_tail_constant():
    errs = [abs(SynapticKernel("exponential", sg).tail_constant() - sg) for sg in (0.5, 1.0, 2.5)]
    assert record_criterion(3, max(errs) < 1e-10, f"max |C_w - sigma_w| = {max(errs):.1e}")


def test_martingale_decomposition():
    F = GainFunction(8.0, 0.5)
    W = chain_weights(SynapticKernel("exponential", 1.0), 3, 1.0)
    worst_identity, worst_cross = 0.0, 0.0
    for seed in range(1000):
        p = simulate([0.2, 0.4, 0.7], W, F, 100, 1.0, seed=seed)
        gap = p.states - (p.states[0] + p.drift_integrals + p.martingale)
        worst_identity = max(worst_identity, float(np.abs(gap).max()))
        off = p.covariation[~np.eye(3, dtype=bool)]
        worst_cross = max(worst_cross, float(np.abs(off).max()))
    ok = worst_identity < 1e-12 and worst_cross == 0.0
    assert record_criterion(4, ok, f"1000 paths: identity gap {worst_identity:.1e}, cross-covariation {worst_cross}")


@pytest.mark.slow
def test_lln_scaling():
    rep = run_lln(ExperimentSpec(kind="lln", replicas=1000, T=1.0, seed=0))
    slope = rep.values["slope"]
    lo, hi = rep.values["slope_ci"]
    rule = next(r for r in rep.rules if r.name == "log-log slope")
    assert record_criterion(5, rule.passed, f"slope {slope:.3f} (CI [{lo:.3f}, {hi:.3f}]) in [-0.65, -0.35]")


@pytest.mark.slow
def test_clt():
    rep = run_clt(ExperimentSpec(kind="clt", P=1, x0=(0.2,), N_list=(400,), replicas=10_000, T=1.0, seed=0))
    var = next(r for r in rep.rules if "variance" in r.name)
    ks = next(r for r in rep.rules if "KS" in r.name)
    ok = var.passed and ks.passed
    assert record_criterion(6, ok, f"Var(sqrt(N) M(T)) rel err {var.value:+.3%}, KS p={ks.value:.3f}")


def test_noise_machinery():
    q = CorrelationKernel(0.1)
    rng = np.random.default_rng(2024)
    cov_ok, worst = True, 0.0
    for m in (4, 8, 16, 32):
        g = build_covariance(q, m, 1)
        x = sample_increments(g, 1.0, rng, size=100_000)
        emp = x.T @ x / len(x)
        se = np.sqrt((np.einsum("ri,rj->ij", x**2, x**2) / len(x) - emp**2) / len(x))
        z = np.abs(emp - g.covariance) / se
        # 3-stderr band entrywise, allowing the Gaussian 0.3% exceedance rate
        frac = float(np.mean(z > 3))
        worst = max(worst, frac)
        cov_ok &= frac <= 0.01
    indep = all(
        np.count_nonzero(np.triu(build_covariance(q, m, 4).covariance, 1)) == 0 for m in range(1, 64) if m < 2.5
    )
    norms = [condition_i_norm(q, m) for m in (4, 8, 16, 32)]
    bounds = [condition_i_bound(q, m) for m in (4, 8, 16, 32)]
    below = all(n <= b for n, b in zip(norms, bounds))
    decreasing = bool(np.all(np.diff(norms) < 0))
    ok = cov_ok and indep and below and decreasing
    detail = (f"cov outside-3se frac {worst:.4f}; independence {indep}; cond-(i) "
              + " ".join(f"{n:.3f}/{b:.3f}" for n, b in zip(norms, bounds))
              + f" (norm/bound, below={below}); decreasing {decreasing}")
    assert record_criterion(7, ok, detail)


def test_dispersion_identities(moving_wave):
    ref = ReferenceField(moving_wave, 128, 16)
    delta = default_delta(moving_wave)
    worst = 0.0
    for t in (0.0, 0.5, 1.0):
        co = ref.coefficients(t, 100, delta)
        on = co.indicator
        rel = co.alpha[on] ** 2 * co.fp[on] / (moving_wave.c * wave_dx(moving_wave, t, ref.x[on])) - 1
        worst = max(worst, float(np.abs(rel).max()))
    co = ref.coefficients(0.0, 100, delta)
    lips = [continuum_lipschitz_numeric(ref, co)]
    for m, L in LADDER.items():
        lev = NetworkLevel(moving_wave, m, L)
        lips.append(lev.lipschitz_numeric(lev.coefficients(0.0, 100, delta)))
    bound = continuum_lipschitz_bound(ref, co)
    lip_ok = max(lips) <= 1.5 * bound
    system = CoupledSystem(moving_wave, SPDEConfig(N=100), LADDER)
    res = simulate_coupled(system, 0.5, 4, 0, output_points=21, budget=True)
    cond = res.budget["cond_ii"].max(axis=1).mean(0)
    cond_ok = bool(np.all(np.diff(cond) < 0))
    ok = worst < 1e-12 and lip_ok and cond_ok
    detail = (f"alpha^2 F' rel err {worst:.1e}; Lipschitz " + " ".join(f"{v:.3f}" for v in lips)
              + f" vs bound {bound:.3f}; condition (ii) " + " ".join(f"{v:.2e}" for v in cond))
    assert record_criterion(8, ok, detail)


@pytest.mark.slow
def test_continuum_limit(moving_wave):
    spec = ExperimentSpec(kind="continuum", replicas=200, p=2.0, epsilon=0.1, m_list=(4, 8, 16, 32), T=1.0,
                          kappa=0.4, seed=0)
    rep = run_continuum(spec, profile=moving_wave)
    names = ["E_m strictly decreasing beyond 1 stderr", "terminal E_m fraction", "noise-off error decreasing"]
    rules = {r.name: r for r in rep.rules}
    ok = all(rules[n].passed for n in names)
    E, se, Ed = rep.values["E"], rep.values["stderr"], rep.values["E_det"]
    detail = ("E_m " + " ".join(f"{e:.4f}+-{s:.4f}" for e, s in zip(E, se))
              + f"; E_32/E_4={E[-1] / E[0]:.3f}; noise-off " + " ".join(f"{e:.2e}" for e in Ed))
    assert record_criterion(9, ok, detail)


def test_ito_consistency():
    F = GainFunction(8.0, 0.5)
    N, T = 10_000, 0.5
    grid = np.linspace(0, T, 101)
    worst = 0.0
    for seed in range(5):
        a = simulate_activity_sde([0.3], np.eye(1), F, N, T, 1e-5, seed, grid)
        u = simulate_voltage_sde(F.inverse(np.array([0.3])), np.eye(1), F, N, T, 1e-5, seed, grid)
        worst = max(worst, float(np.max(np.abs(F.inverse(a.states) - u.states))))
    assert record_criterion(10, worst < 5 / N, f"sup |F^-1(a) - u| = {worst:.2e} < 5/N = {5 / N:.0e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
