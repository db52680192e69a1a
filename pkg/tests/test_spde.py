import numpy as np
import pytest

from snfe.spde import (
    CoupledSystem, NetworkLevel, ReferenceField, SPDEConfig, continuum_lipschitz_bound,
    continuum_lipschitz_numeric, default_delta, drift_continuum, level_domains, simulate_coupled,
)
from snfe.wave import wave_dx

LEVELS = {4: 6, 8: 8, 16: 10, 32: 12}


@pytest.fixture(scope="module")
def ref(moving_wave):
    return ReferenceField(moving_wave, 128, 16)


def test_default_delta(moving_wave):
    delta = default_delta(moving_wave)
    assert delta == pytest.approx(0.0338, abs=5e-4)
    ux = np.clip(moving_wave.ux(), 0, None)
    kept = np.sum(ux[ux >= delta] ** 2) / np.sum(ux**2)
    assert 0.99 <= kept < 0.995


def test_level_domain_rule():
    assert level_domains([4, 8, 16, 32]) == LEVELS
    assert level_domains([64])[64] == 14


def test_config_validation():
    with pytest.raises(ValueError):
        SPDEConfig(dt=0.1, dt_max=0.05)
    assert not SPDEConfig(N=None).noisy
    assert not SPDEConfig(noise=False).noisy


def test_continuum_drift_transports_wave(ref, moving_wave):
    # for u = u_TW the N -> infinity drift is -c u_x up to second-order quadrature error
    b = drift_continuum(ref.wave(0.0), ref, 0.0, None)
    target = -moving_wave.c * wave_dx(moving_wave, 0.0, ref.x)
    assert np.abs(b - target).max() < 2e-4


def test_alpha_squared_identity(ref, moving_wave):
    delta = default_delta(moving_wave)
    for t in (0.0, 0.7):
        co = ref.coefficients(t, 100, delta)
        on = co.indicator
        assert on.any()
        np.testing.assert_allclose(co.alpha[on] ** 2 * co.fp[on], moving_wave.c * wave_dx(moving_wave, t, ref.x[on]),
                                   rtol=1e-12)
        assert np.all(co.alpha[~on] == 0)


def test_lipschitz_bounded_across_ladder(ref, moving_wave):
    delta = default_delta(moving_wave)
    co = ref.coefficients(0.0, 100, delta)
    bound = continuum_lipschitz_bound(ref, co)
    assert continuum_lipschitz_numeric(ref, co) <= bound * (1 + 1e-9)
    nums = [NetworkLevel(moving_wave, m, L).lipschitz_numeric(
        NetworkLevel(moving_wave, m, L).coefficients(0.0, 100, delta)) for m, L in LEVELS.items()]
    assert max(nums) <= 2 * min(nums)
    assert max(nums) <= 1.5 * bound


def test_rejects_unresolved_levels(moving_wave):
    with pytest.raises(ValueError):
        CoupledSystem(moving_wave, SPDEConfig(m_ref=64), {32: 8})
    with pytest.raises(ValueError):
        CoupledSystem(moving_wave, SPDEConfig(L_ref=8), {4: 8})


def test_standing_wave_rejected(symmetric_wave):
    with pytest.raises(ValueError):
        ReferenceField(symmetric_wave, 128, 16)


def test_noise_off_error_is_second_order(moving_wave):
    sys = CoupledSystem(moving_wave, SPDEConfig(N=None), LEVELS)
    res = simulate_coupled(sys, 0.5, 1, 0, output_points=11)
    E = res.sup_moment(2.0)[0]
    ratios = E[:-1] / E[1:]
    assert np.all(ratios > 3) and np.all(ratios < 5)


@pytest.fixture(scope="module")
def short_run(moving_wave):
    sys = CoupledSystem(moving_wave, SPDEConfig(N=100), LEVELS)
    return sys, simulate_coupled(sys, 0.25, 6, 3, output_points=11, batch=4, budget=True)


def test_common_noise_reproducible(moving_wave, short_run):
    sys, res = short_run
    same = simulate_coupled(sys, 0.25, 6, 3, output_points=11, batch=4)
    np.testing.assert_array_equal(res.dist_sq, same.dist_sq)
    # other batch sizes only change BLAS/FFT rounding
    again = simulate_coupled(sys, 0.25, 6, 3, output_points=11, batch=6)
    np.testing.assert_allclose(res.dist_sq, again.dist_sq, rtol=1e-12)
    first = simulate_coupled(sys, 0.25, 2, 3, output_points=11)
    np.testing.assert_allclose(res.dist_sq[:2], first.dist_sq, rtol=1e-12)


def test_condition_ii_and_tails_shrink(short_run):
    _, res = short_run
    cond = res.budget["cond_ii"].max(axis=1).mean(0)
    tail = res.budget["tail"].max(axis=1).mean(0)
    assert np.all(np.diff(cond) < 0)
    assert np.all(np.diff(tail) <= 0)


def test_initial_distance_is_sampling_error(short_run):
    sys, res = short_run
    d0 = res.dist_sq[:, 0, :]
    assert np.all(d0[0] > 0)
    assert np.all(np.diff(d0[0]) < 0)


def test_duration_must_fit_step(moving_wave):
    sys = CoupledSystem(moving_wave, SPDEConfig(N=None), {4: 6})
    with pytest.raises(ValueError):
        simulate_coupled(sys, 0.001, 1, 0)
