import numpy as np
import pytest

from snfe.diffusion import (
    PositivityError, activity_sde_step, linearized_coefficients, network_drift, positivity_check,
    simulate_activity_sde, simulate_linearized, simulate_voltage_sde, voltage_coefficients,
)
from snfe.meanfield import bracket_rate, drift
from snfe.model import GainFunction, SynapticKernel, build_weights
from snfe.wave import solve_profile, wave_at, wave_dx

F = GainFunction(8.0, 0.5)


def test_ito_consistency_single_population():
    W = np.eye(1)
    N, T, dt = 10_000, 0.5, 1e-5
    grid = np.linspace(0, T, 51)
    a = simulate_activity_sde([0.3], W, F, N, T, dt, 5, grid)
    u = simulate_voltage_sde(F.inverse(np.array([0.3])), W, F, N, T, dt, 5, grid)
    assert not a.flagged
    assert np.max(np.abs(F.inverse(a.states) - u.states)) < 5 / N


def test_voltage_coefficients_by_ito_formula():
    W = np.array([[0.6, 0.4], [0.3, 0.7]])
    u = np.array([0.3, 0.6])
    N = 50
    a = F(u)
    fp, fpp = F.d1(u), F.d2(u)
    # d F^{-1}(a) = da / F' - F'' / (2 F'^3) d<a>
    mu_a, q_a = drift(a, W, F), bracket_rate(a, W, F) / N
    exp_drift = mu_a / fp - fpp / (2 * fp**3) * q_a
    exp_disp = np.sqrt(q_a) / fp
    d, s = voltage_coefficients(u, W, F, N)
    np.testing.assert_allclose(d, exp_drift, rtol=1e-12)
    np.testing.assert_allclose(s, exp_disp, rtol=1e-12)


def test_activity_step_clips_and_flags():
    a, flagged = activity_sde_step(np.array([0.01]), np.eye(1), F, 100, 1.0, np.array([-50.0]))
    assert flagged and a[0] == pytest.approx(0.01)


@pytest.fixture(scope="module")
def wave():
    return solve_profile(GainFunction(8.0, 0.4), SynapticKernel("exponential", 1.0))


def test_network_drift_approaches_wave_transport(wave):
    # left-anchored cells make the network drift a first-order quadrature of -c u_x
    errs = []
    for m in (8, 16, 32):
        weights = build_weights(wave.kernel, m, 10)
        nodes = weights.nodes
        b = network_drift(wave_at(wave, 0.0, nodes), weights, wave.gain, wave, 0.0)
        core = np.abs(nodes) < 3
        errs.append(np.abs(b[core] + wave.c * wave_dx(wave, 0.0, nodes[core])).max())
    assert 1.7 < errs[0] / errs[1] < 2.3 and 1.7 < errs[1] / errs[2] < 2.3


@pytest.mark.parametrize("L", [5, 10])
def test_positivity_lower_bound(wave, L):
    rep = positivity_check(wave, build_weights(wave.kernel, 4, L))
    assert rep.ok and rep.minimum > 0
    assert np.all(rep.neg_drift >= rep.lower_bound - 1e-9)


def test_positivity_boundary_gap_shrinks(wave):
    gaps = [wave.gain(wave_at(wave, 0.0, -L)) - wave.gain(wave.a1) for L in (5, 10, 20)]
    assert gaps[0] > gaps[1] > gaps[2] >= 0


def test_positivity_needs_positive_speed(symmetric_wave):
    with pytest.raises(PositivityError):
        positivity_check(symmetric_wave, build_weights(symmetric_wave.kernel, 4, 5))


def test_linearized_coefficients_at_wave(wave):
    weights = build_weights(wave.kernel, 4, 6)
    utw = wave_at(wave, 0.0, weights.nodes)
    b = network_drift(utw, weights, wave.gain, wave, 0.0)
    _, disp = linearized_coefficients(utw, wave, weights, 100, 0.0)
    np.testing.assert_allclose(disp, np.sqrt(-b / wave.gain.d1(utw)) / 10, rtol=1e-12)


def test_linearized_path_stays_near_wave(wave):
    weights = build_weights(wave.kernel, 4, 6)
    p = simulate_linearized(wave, weights, 1000, 0.5, 1e-3, 0, np.linspace(0, 0.5, 6))
    v = p.states - wave_at(wave, p.times[:, None], weights.nodes[None])
    assert not p.flagged
    assert np.abs(v).max() < 0.1
