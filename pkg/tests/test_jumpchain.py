import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg, stats

from snfe.jumpchain import (
    SimulationError, check_N0, jump_rates, jump_rates_alternative, replica_seeds, simulate, simulate_ensemble,
)
from snfe.meanfield import integrate
from snfe.model import BoundaryError, GainFunction, SynapticKernel, chain_weights

F = GainFunction(8.0, 0.5)
W3 = chain_weights(SynapticKernel("exponential", 1.0), 3, 1.0)


def test_rates_are_nonnegative_and_complementary():
    x = np.array([0.2, 0.4, 0.7])
    up, down = jump_rates(x, W3, F, 100)
    assert np.all(up >= 0) and np.all(down >= 0)
    assert np.all(up * down == 0)
    b = -F.inverse(x) + W3 @ x
    np.testing.assert_allclose((up - down) / 100, F.d1(F.inverse(x)) * b, rtol=1e-12)


def test_alternative_rates_share_drift():
    x = np.array([0.2, 0.4, 0.7])
    u1, d1 = jump_rates(x, W3, F, 50)
    u2, d2 = jump_rates_alternative(x, W3, F, 50)
    np.testing.assert_allclose(u1 - d1, u2 - d2, rtol=1e-12, atol=1e-12)


def test_boundary_condition_examples():
    W = np.array([[1.0]])
    assert check_N0(W, F, 1000)[0]
    assert not check_N0(W, F, 3)[0]
    ok, off = check_N0(W, GainFunction(8.0, 0.4), 2)
    assert not ok and off


def test_below_threshold_refused_unless_clamped():
    W = np.array([[1.0]])
    with pytest.raises(SimulationError):
        simulate([0.5], W, F, 10, 1.0, seed=0)
    path = simulate([0.5], W, F, 10, 1.0, seed=0, clamp=True)
    assert np.all((path.states > 0) & (path.states < 1))


def test_off_lattice_and_boundary_starts():
    with pytest.raises(ValueError):
        simulate([0.333], np.eye(1), F, 100, 1.0, seed=0)
    with pytest.raises(BoundaryError):
        simulate([0.0], np.eye(1), F, 100, 1.0, seed=0)


def test_balanced_start_never_jumps():
    path = simulate([0.5], np.eye(1), F, 100, 5.0, seed=1)
    assert path.n_events == 0
    assert np.all(path.states == 0.5)


def test_reproducible_and_seed_sensitive():
    a = simulate([0.2, 0.4, 0.7], W3, F, 200, 1.0, seed=7)
    b = simulate([0.2, 0.4, 0.7], W3, F, 200, 1.0, seed=7)
    c = simulate([0.2, 0.4, 0.7], W3, F, 200, 1.0, seed=8)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)


def test_replica_seeds_stable():
    np.testing.assert_array_equal(replica_seeds(3, 5), replica_seeds(3, 10)[:5])
    assert len(set(replica_seeds(0, 1000))) == 1000


def test_ensemble_independent_of_workers():
    a = simulate_ensemble([0.2, 0.4, 0.7], W3, F, 100, 0.5, 4, 8, workers=1)
    b = simulate_ensemble([0.2, 0.4, 0.7], W3, F, 100, 0.5, 4, 8, workers=2)
    np.testing.assert_array_equal(a.states, b.states)
    single = simulate([0.2, 0.4, 0.7], W3, F, 100, 0.5, seed=int(replica_seeds(4, 8)[3]))
    np.testing.assert_array_equal(a.states[3], single.states)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_decomposition_exact_per_path(seed):
    p = simulate([0.2, 0.4, 0.7], W3, F, 100, 1.0, seed=seed)
    np.testing.assert_allclose(p.states, p.states[0] + p.drift_integrals + p.martingale, atol=1e-13)
    cov = p.covariation
    assert np.all(cov[~np.eye(3, dtype=bool)] == 0)
    # each jump is +-1/N so the quadratic variation counts events
    assert p.quadratic_variation[-1].sum() * p.N**2 == pytest.approx(p.n_events)


def test_distribution_matches_forward_equation():
    """One population, N=50: the exact law at T from the generator matrix."""
    N, T, x0 = 50, 0.4, 0.3
    W = np.array([[1.0]])
    assert check_N0(W, F, N)[0]
    n = np.arange(1, N)
    x = n / N
    b = -F.inverse(x) + x
    scale = N * 8.0 * x * (1 - x)
    up, down = scale * np.maximum(b, 0), scale * np.maximum(-b, 0)
    Q = np.zeros((N - 1, N - 1))
    for i in range(N - 1):
        if i + 1 < N - 1:
            Q[i, i + 1] = up[i]
        if i > 0:
            Q[i, i - 1] = down[i]
        Q[i, i] = -Q[i].sum()
    p0 = np.zeros(N - 1)
    p0[int(x0 * N) - 1] = 1.0
    pT = p0 @ linalg.expm(Q * T)
    ens = simulate_ensemble([x0], W, F, N, T, 11, 4000, np.array([0.0, T]), workers=1)
    counts = np.bincount(np.rint(ens.states[:, -1, 0] * N).astype(int) - 1, minlength=N - 1)
    keep = pT * 4000 > 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(pT[keep], pT[~keep].sum()) * 4000
    if exp[-1] < 5:
        obs, exp = obs[:-1], exp[:-1] * obs[:-1].sum() / exp[:-1].sum()
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_large_N_tracks_mean_field():
    grid = np.linspace(0, 1, 11)
    ens = simulate_ensemble([0.2, 0.4, 0.7], W3, F, 5000, 1.0, 3, 20, grid, workers=1)
    ode = integrate([0.2, 0.4, 0.7], W3, F, 1.0, output_grid=grid)
    assert np.abs(ens.states.mean(0) - ode.states).max() < 5e-3


def test_sum_tree_path_matches_mean_field():
    K = SynapticKernel("exponential", 1.0)
    W = chain_weights(K, 96, 0.25)
    x0 = np.where(np.arange(96) < 48, 0.2, 0.8)
    p = simulate(x0, W, F, 1000, 0.5, seed=2)
    ode = integrate(x0, W, F, 0.5, output_grid=p.times)
    assert np.abs(p.states - ode.states).max() < 0.05


def test_csv_columns(tmp_path):
    p = simulate([0.2, 0.4, 0.7], W3, F, 100, 0.5, seed=0)
    p.to_csv(tmp_path / "p.csv")
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header.split(",")[:4] == ["time", "x_1", "x_2", "x_3"]
    assert "M_1" in header and "bracket_3" in header
