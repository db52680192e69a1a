import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from snfe.noise import (
    CorrelationKernel, build_covariance, build_interval_covariance, condition_i_bound, condition_i_norm,
    load_noise, phi_m, reference_grid, sample_increments, save_noise,
)


@given(st.floats(0.05, 0.5), st.floats(-0.5, 0.5), st.floats(0.01, 0.3), st.floats(-0.5, 0.5), st.floats(0.01, 0.3))
@settings(max_examples=25, deadline=None)
def test_pair_integral_matches_quadrature(eps, a, wa, c, wc):
    q = CorrelationKernel(eps)
    ref, _ = integrate.dblquad(lambda z, y: q.tent(y - z), a, a + wa, c, c + wc, epsabs=1e-12)
    assert q.pair_integral(a, a + wa, c, c + wc) == pytest.approx(ref, abs=1e-7)


def test_tent_is_self_convolution():
    q = CorrelationKernel(0.1)
    y = np.linspace(-1, 1, 40001)
    box = q(0.0, y)
    conv = np.convolve(box, box, mode="same") * (y[1] - y[0])
    s = np.array([0.0, 0.05, 0.15, 0.19, 0.3])
    idx = np.searchsorted(y, s)
    np.testing.assert_allclose(conv[idx], q.tent(s), atol=5e-3)


def test_covariance_formula_and_limits():
    q = CorrelationKernel(0.1)
    g = build_covariance(q, 8, 2)
    i, j = 10, 11
    (a, b), (c, d) = (g.left[i], g.right[i]), (g.left[j], g.right[j])
    ref, _ = integrate.dblquad(lambda z, y: q.tent(y - z), a, b, c, d)
    assert g.covariance[i, j] == pytest.approx(4 * 64 * ref, rel=1e-8)
    wide = build_covariance(CorrelationKernel(0.5), 32, 1)
    assert np.diag(wide.covariance).min() == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("m", [1, 2])
def test_independent_cells_when_far_apart(m):
    C = build_covariance(CorrelationKernel(0.1), m, 4).covariance
    assert np.count_nonzero(C - np.diag(np.diag(C))) == 0


def test_factor_reproduces_covariance():
    g = build_covariance(CorrelationKernel(0.1), 16, 2)
    Lf = g.dense_factor()
    np.testing.assert_allclose(Lf @ Lf.T, g.covariance, atol=1e-12)


def test_sampled_covariance(rng):
    g = build_covariance(CorrelationKernel(0.1), 8, 1)
    x = sample_increments(g, 0.5, rng, size=100_000)
    emp = x.T @ x / len(x)
    se = np.sqrt((np.einsum("ri,rj->ij", x**2, x**2) / len(x) - emp**2) / len(x))
    z = np.abs(emp - 0.5 * g.covariance) / se
    assert np.mean(z > 3) < 0.01


def test_projection_of_reference_noise_is_exact():
    q = CorrelationKernel(0.1)
    ref = reference_grid(q, 128, 2)
    for m in (4, 8, 16, 32):
        A = phi_m(np.eye(ref.size), m, 1, 128, 2).T
        np.testing.assert_allclose(A @ ref.covariance @ A.T, build_covariance(q, m, 1).covariance, atol=1e-13)


def test_projection_needs_resolution():
    with pytest.raises(ValueError):
        phi_m(np.zeros(512), 64, 1, 128, 2)
    with pytest.raises(ValueError):
        phi_m(np.zeros(256), 4, 1, 128, 1)


def brute_condition_i(eps, m, n_x=201, n_y=40001):
    jl, jr = -0.25 / m, 0.25 / m
    y = np.linspace(-1, 1, n_y)
    dy = y[1] - y[0]
    smooth = 2 * m * (np.clip(np.minimum(y + eps, jr) - np.maximum(y - eps, jl), 0, None) / (2 * eps))
    best = 0.0
    for x in np.linspace(0, 1 / m, n_x):
        f = smooth - np.where(np.abs(x - y) < eps, 0.5 / eps, 0.0)
        best = max(best, np.sum(f**2) * dy)
    return best


@pytest.mark.parametrize("m", [4, 8, 16])
def test_condition_i_against_brute_force(m):
    assert condition_i_norm(CorrelationKernel(0.1), m) == pytest.approx(brute_condition_i(0.1, m), rel=5e-3)


def test_condition_i_decreasing_and_closed_form():
    q = CorrelationKernel(0.1)
    vals = [condition_i_norm(q, m) for m in (4, 8, 16, 32)]
    assert np.all(np.diff(vals) < 0)
    for m, v in zip((8, 16, 32), vals[1:]):
        assert v == pytest.approx(11 / (24 * 0.01 * m), rel=1e-6)
        assert condition_i_norm(q, m, centred=True) == pytest.approx(5 / (24 * 0.01 * m), rel=1e-6)
        assert condition_i_norm(q, m, centred=True) <= condition_i_bound(q, m)


def test_jitter_only_when_needed():
    q = CorrelationKernel(0.1)
    assert build_covariance(q, 4, 2).jitter == 0.0
    # duplicate-ish intervals make the matrix singular
    g = build_interval_covariance(q, np.array([0.0, 1e-12]), np.array([0.1, 0.1 + 1e-12]))
    assert g.jitter > 0


def test_noise_round_trip(tmp_path, rng):
    x = rng.standard_normal((3, 5))
    save_noise(tmp_path / "n.npz", x, 128, 0.1, 0.0025, 9)
    y, header = load_noise(tmp_path / "n.npz")
    np.testing.assert_array_equal(x, y)
    assert header == {"m_ref": 128, "epsilon": 0.1, "dt": 0.0025, "seed": 9}
