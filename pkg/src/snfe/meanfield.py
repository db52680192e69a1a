"""Deterministic mean-field network ODE, the large-population limit of the chain."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import BoundaryError, GainFunction

__all__ = ["MeanFieldPath", "drift", "integrate", "bracket_rate"]


def _external(ext, P):
    return np.zeros(P) if ext is None else np.broadcast_to(np.asarray(ext, dtype=float), (P,))


def drift(x, W, F: GainFunction, ext=None):
    """``F'(F^{-1}(x_k)) (-F^{-1}(x_k) + sum_j w_kj x_j + ext_k)``; works on (..., P) arrays."""
    x = np.asarray(x, dtype=float)
    s = x @ np.asarray(W, dtype=float).T + _external(ext, x.shape[-1])
    return F.d1_of_inverse(x) * (s - F.inverse(x))


def bracket_rate(x, W, F: GainFunction, ext=None):
    """``F'(F^{-1}(x_k)) |-F^{-1}(x_k) + sum_j w_kj x_j|``, the limiting bracket density."""
    x = np.asarray(x, dtype=float)
    s = x @ np.asarray(W, dtype=float).T + _external(ext, x.shape[-1])
    return F.d1_of_inverse(x) * np.abs(s - F.inverse(x))


@dataclass
class MeanFieldPath:
    times: np.ndarray
    states: np.ndarray  # (G, P)
    dt_ode: float
    #: integral of the bracket density along the path, on the output grid
    bracket: np.ndarray

    def to_csv(self, path) -> None:
        P = self.states.shape[1]
        with Path(path).open("w") as fh:
            fh.write(",".join(["time"] + [f"x_{k+1}" for k in range(P)]) + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")


def integrate(x0, W, F: GainFunction, T: float, dt_ode: float | None = None, output_grid=None, ext=None) -> MeanFieldPath:
    """Classical RK4 on a uniform step that lands on every output grid point.

    ``output_grid`` must be uniform on [0, T] (default 101 points); the step is
    the largest divisor of its spacing not exceeding ``dt_ode`` (default T/1e4).
    """
    x = np.array(x0, dtype=float)
    if np.any((x <= 0) | (x >= 1)):
        raise BoundaryError("initial state must lie strictly inside (0, 1)")
    grid = np.linspace(0.0, T, 101) if output_grid is None else np.asarray(output_grid, dtype=float)
    G = len(grid)
    if G > 1 and not np.allclose(np.diff(grid), grid[1] - grid[0], rtol=1e-9, atol=1e-12):
        raise ValueError("output grid must be uniform")
    dt_target = T / 1e4 if dt_ode is None else dt_ode
    spacing = grid[1] - grid[0] if G > 1 else T
    sub = max(1, int(np.ceil(spacing / dt_target - 1e-9)))
    dt = spacing / sub

    f = lambda y: drift(y, W, F, ext)
    rate = lambda y: bracket_rate(y, W, F, ext)
    states = np.empty((G, x.size))
    brk = np.zeros((G, x.size))
    states[0] = x
    acc = np.zeros(x.size)
    r_prev = rate(x)
    for g in range(1, G):
        for _ in range(sub):
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if np.any((x <= 0) | (x >= 1)) or not np.all(np.isfinite(x)):
                raise BoundaryError(f"mean-field state left (0, 1) near t={grid[g]:.4g}")
            r = rate(x)
            acc += 0.5 * dt * (r_prev + r)
            r_prev = r
        states[g] = x
        brk[g] = acc
    return MeanFieldPath(times=grid, states=states, dt_ode=dt, bracket=brk)
