"""Diffusion approximations of the chain: activity SDE, voltage SDE, and the
system linearized around a traveling wave.

All steppers are explicit Euler-Maruyama with coefficients frozen at the
left endpoint of the step.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .meanfield import bracket_rate
from .meanfield import drift as activity_drift
from .model import GainFunction, WeightMatrix
from .wave import WaveProfile, wave_at, wave_dx

__all__ = [
    "SDEPath",
    "PositivityError",
    "PositivityReport",
    "activity_sde_step",
    "voltage_sde_step",
    "voltage_coefficients",
    "network_drift",
    "positivity_check",
    "linearized_coefficients",
    "linearized_step",
    "simulate_activity_sde",
    "simulate_voltage_sde",
    "simulate_linearized",
]


class PositivityError(ValueError):
    """The traveling-wave drift is not strictly negative on every cell."""


@dataclass
class SDEPath:
    times: np.ndarray
    states: np.ndarray  # (G, P)
    dt_sde: float
    seed: int
    flagged: bool = False

    def to_csv(self, path) -> None:
        P = self.states.shape[1]
        with Path(path).open("w") as fh:
            fh.write(",".join(["time"] + [f"u_{k+1}" for k in range(P)]) + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")


# -- activity and voltage forms ----------------------------------------------


def activity_sde_step(a, W, F: GainFunction, N: int, dt: float, xi, ext=None):
    """One step of the activity diffusion; returns ``(a', flagged)``.

    Values leaving ``(0, 1)`` are absorbed at the lattice guard ``1/N`` or
    ``1 - 1/N`` and the step is flagged.
    """
    mu = activity_drift(a, W, F, ext)
    sig = np.sqrt(bracket_rate(a, W, F, ext) / N)
    out = a + mu * dt + sig * np.sqrt(dt) * np.asarray(xi)
    bad = (out <= 0.0) | (out >= 1.0)
    if np.any(bad):
        out = np.clip(out, 1.0 / N, 1.0 - 1.0 / N)
    return out, bool(np.any(bad))


def voltage_coefficients(u, W, F: GainFunction, N: int, ext=None):
    """Drift and dispersion of the voltage SDE obtained by Ito's formula."""
    u = np.asarray(u, dtype=float)
    ext = 0.0 if ext is None else ext
    b = -u + np.asarray(W) @ F(u) + ext
    fp = F.d1(u)
    drift = b - F.d2(u) / (2.0 * N * fp**2) * np.abs(b)
    disp = np.sqrt(np.abs(b) / fp) / np.sqrt(N)
    return drift, disp


def voltage_sde_step(u, W, F: GainFunction, N: int, dt: float, xi, ext=None):
    drift, disp = voltage_coefficients(u, W, F, N, ext)
    return u + drift * dt + disp * np.sqrt(dt) * np.asarray(xi)


def _normals(seed: int):
    return np.random.Generator(np.random.PCG64(seed))


def _grid_steps(T, dt, output_grid):
    grid = np.linspace(0.0, T, 101) if output_grid is None else np.asarray(output_grid, dtype=float)
    spacing = grid[1] - grid[0]
    sub = max(1, int(np.ceil(spacing / dt - 1e-9)))
    return grid, sub, spacing / sub


def simulate_activity_sde(a0, W, F, N, T, dt, seed, output_grid=None, ext=None) -> SDEPath:
    grid, sub, h = _grid_steps(T, dt, output_grid)
    rng = _normals(seed)
    a = np.array(a0, dtype=float)
    out = np.empty((len(grid), a.size))
    out[0] = a
    flagged = False
    for g in range(1, len(grid)):
        for _ in range(sub):
            a, f = activity_sde_step(a, W, F, N, h, rng.standard_normal(a.size), ext)
            flagged |= f
        out[g] = a
    return SDEPath(grid, out, h, seed, flagged)


def simulate_voltage_sde(u0, W, F, N, T, dt, seed, output_grid=None, ext=None) -> SDEPath:
    """Voltage SDE driven by the same normal stream as the activity SDE with equal seed."""
    grid, sub, h = _grid_steps(T, dt, output_grid)
    rng = _normals(seed)
    u = np.array(u0, dtype=float)
    out = np.empty((len(grid), u.size))
    out[0] = u
    for g in range(1, len(grid)):
        for _ in range(sub):
            u = voltage_sde_step(u, W, F, N, h, rng.standard_normal(u.size), ext)
        out[g] = u
    flagged = not np.all(np.isfinite(out))
    return SDEPath(grid, out, h, seed, flagged)


# -- network around a traveling wave -----------------------------------------


def network_drift(u, weights: WeightMatrix, F: GainFunction, profile: WaveProfile, t: float):
    """``-u_k + sum_l w_kl F(u_l) + w+_k F(u_TW(L)) + w-_k F(u_TW(-L))``; accepts (..., P)."""
    L = weights.L
    edge_plus = F(wave_at(profile, t, float(L)))
    edge_minus = F(wave_at(profile, t, -float(L)))
    u = np.asarray(u, dtype=float)
    return -u + F(u) @ weights.interior.T + weights.boundary_plus * edge_plus + weights.boundary_minus * edge_minus


@dataclass
class PositivityReport:
    minimum: float
    lower_bound: np.ndarray  # per node
    neg_drift: np.ndarray  # -b_hat at u_TW, per node
    ok: bool


def positivity_check(profile: WaveProfile, weights: WeightMatrix, t: float = 0.0, F: GainFunction | None = None,
                     tol: float = 1e-9) -> PositivityReport:
    """Minimum over nodes of ``-b_hat(t, u_TW)`` with its wave lower bound.

    The lower bound is ``c u_x(k/m - ct) - (F(u_TW(-L)) - F(a1))``.  Raises
    :class:`PositivityError` if ``c <= 0``, if the minimum is not positive, or
    if the bound fails by more than ``tol``.
    """
    F = profile.gain if F is None else F
    if not profile.speed > 1e-8:
        raise PositivityError(f"wave speed {profile.speed:.3g} is not positive; the lower bound is vacuous")
    nodes = weights.nodes
    utw = wave_at(profile, t, nodes)
    neg = -network_drift(utw, weights, F, profile, t)
    L = float(weights.L)
    bound = profile.speed * wave_dx(profile, t, nodes) - (F(wave_at(profile, t, -L)) - F(profile.a1))
    minimum = float(neg.min())
    ok = minimum > 0 and bool(np.all(neg >= bound - tol))
    report = PositivityReport(minimum, bound, neg, ok)
    if minimum <= 0:
        raise PositivityError(f"min -b_hat = {minimum:.3e} <= 0; increase L (currently {weights.L})")
    if not ok:
        k = int(np.argmin(neg - bound))
        raise PositivityError(f"lower bound violated at node {nodes[k]:.4g}: {neg[k]:.3e} < {bound[k]:.3e}")
    return report


def linearized_coefficients(u, profile: WaveProfile, weights: WeightMatrix, N: int, t: float, F: GainFunction | None = None):
    """Drift and dispersion of the diffusion linearized about ``u_TW`` at time ``t``.

    ``u`` may be (P,) or (R, P).  Requires ``-b_hat(t, u_TW) > 0`` on every node.
    """
    F = profile.gain if F is None else F
    nodes = weights.nodes
    utw = wave_at(profile, t, nodes)
    b_tw = network_drift(utw, weights, F, profile, t)
    fp, fpp = F.d1(utw), F.d2(utw)
    u = np.asarray(u, dtype=float)
    v = u - utw
    drift = network_drift(u, weights, F, profile, t) + fpp / (2.0 * N * fp**2) * b_tw
    lead = np.sqrt(-b_tw / fp)
    lin = (fpp / fp * b_tw * v + v - (fp * v) @ weights.interior.T) / (2.0 * np.sqrt(-b_tw * fp))
    return drift, (lead + lin) / np.sqrt(N)


def linearized_step(u, profile, weights, N, t, dt, xi, F=None):
    drift, disp = linearized_coefficients(u, profile, weights, N, t, F)
    return u + drift * dt + disp * np.sqrt(dt) * np.asarray(xi)


def simulate_linearized(profile, weights, N, T, dt, seed, output_grid=None, v0=None) -> SDEPath:
    positivity_check(profile, weights, 0.0)
    grid, sub, h = _grid_steps(T, dt, output_grid)
    rng = _normals(seed)
    u = wave_at(profile, 0.0, weights.nodes)
    if v0 is not None:
        u = u + v0
    out = np.empty((len(grid), u.size))
    out[0] = u
    t = 0.0
    for g in range(1, len(grid)):
        for _ in range(sub):
            u = linearized_step(u, profile, weights, N, t, h, rng.standard_normal(u.size))
            t += h
        out[g] = u
    return SDEPath(grid, out, h, seed, not np.all(np.isfinite(out)))
