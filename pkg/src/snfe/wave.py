"""Traveling wave profile and speed of the deterministic neural field equation.

The profile is computed on a uniform grid by Newton's method on the
unknowns (interior node values, speed) with the phase pinned at ``x = 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.interpolate import CubicSpline

from .model import GainFunction, SynapticKernel, cell_weights

log = logging.getLogger(__name__)

__all__ = ["WaveProfile", "WaveSolveError", "solve_profile", "wave_at", "wave_dx", "wave_dt", "wave_dxx"]


class WaveSolveError(RuntimeError):
    pass


@dataclass
class WaveProfile:
    x: np.ndarray
    u: np.ndarray
    speed: float
    residual_norm: float
    h: float
    gain: GainFunction
    kernel: SynapticKernel
    reflected: bool = False
    _spline: CubicSpline = field(default=None, init=False, repr=False)

    @property
    def c(self) -> float:
        return self.speed

    @property
    def L_w(self) -> float:
        return float(self.x[-1])

    @property
    def a1(self) -> float:
        return self.gain.fixed_points[0]

    @property
    def a(self) -> float:
        return self.gain.fixed_points[1]

    @property
    def a2(self) -> float:
        return self.gain.fixed_points[2]

    @property
    def spline(self) -> CubicSpline:
        if self._spline is None:
            self._spline = CubicSpline(self.x, self.u)
        return self._spline

    def ux(self) -> np.ndarray:
        return self.spline(self.x, 1)

    def ux_l2_squared(self) -> float:
        ux = self.ux()
        return float(np.sum(ux**2) * self.h)

    def ux_l2_bound(self) -> float:
        a1, a2 = self.a1, self.a2
        if self.speed > 1e-8:
            return (a2 / self.speed + 1.0) * (a2 - a1)
        return self.kernel.dx_l1 * (a2 - a1)

    # -- persistence -------------------------------------------------------
    def to_csv(self, path) -> None:
        path = Path(path)
        header = (
            f"# c={float(self.speed)!r} residual={float(self.residual_norm)!r} h={float(self.h)!r} "
            f"gamma={float(self.gain.gamma)!r} kappa={float(self.gain.kappa)!r} "
            f"kernel={self.kernel.family} sigma={float(self.kernel.sigma)!r} reflected={int(self.reflected)}\n"
        )
        ux = self.ux()
        with path.open("w") as fh:
            fh.write(header)
            fh.write("x,u_hat,u_hat_x\n")
            for xi, ui, di in zip(self.x, self.u, ux):
                fh.write(f"{float(xi)!r},{float(ui)!r},{float(di)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "WaveProfile":
        path = Path(path)
        with path.open() as fh:
            meta = dict(kv.split("=", 1) for kv in fh.readline()[1:].split())
            fh.readline()
            rows = [tuple(float(v) for v in line.split(",")) for line in fh if line.strip()]
        arr = np.array(rows)
        gain = GainFunction(float(meta["gamma"]), float(meta["kappa"]))
        kernel = SynapticKernel(meta["kernel"], float(meta["sigma"]))
        return cls(
            x=arr[:, 0],
            u=arr[:, 1],
            speed=float(meta["c"]),
            residual_norm=float(meta["residual"]),
            h=float(meta["h"]),
            gain=gain,
            kernel=kernel,
            reflected=bool(int(meta["reflected"])),
        )


def _grid(L_w: float, h: float) -> np.ndarray:
    n = int(round(2 * L_w / h))
    if not np.isclose(n * h, 2 * L_w) or n % 2:
        raise ValueError("2 L_w / h must be an even integer")
    return -L_w + h * np.arange(n + 1)


def _operators(kernel, x, h, a1, a2):
    # midpoint-centred cells give a second-order quadrature for the convolution
    M = cell_weights(kernel, x, x - 0.5 * h, h)
    left = kernel.tail(x - x[0] + 0.5 * h)
    right = kernel.tail(x[-1] + 0.5 * h - x)
    return M, a1 * left + a2 * right


def residual(F: GainFunction, M, outside, u, c, h):
    """Residual ``-c Du + u - w * F(u)`` at interior nodes."""
    du = (u[2:] - u[:-2]) / (2 * h)
    conv = M @ F(u) + outside
    return -c * du + u[1:-1] - conv[1:-1]


def _newton(F, kernel, x, h, max_iter, guess=None):
    a1, a, a2 = F.fixed_points
    n = len(x) - 1
    mid = n // 2
    M, outside = _operators(kernel, x, h, a1, a2)
    if guess is None:
        u = a1 + (a2 - a1) * F(x + F.kappa)
        c = 0.0
    else:
        u, c = guess[0].copy(), guess[1]
    u[0], u[-1], u[mid] = a1, a2, a

    def full_residual(u, c):
        r = residual(F, M, outside, u, c, h)
        return np.append(r, u[mid] - a)

    r = full_residual(u, c)
    norm = np.max(np.abs(r))
    D = (np.eye(n + 1, k=1) - np.eye(n + 1, k=-1))[1:-1, 1:-1] / (2 * h)
    for it in range(max_iter):
        if norm < 1e-13:
            break
        fp = F.d1(u)
        J = np.zeros((n, n))
        J[: n - 1, : n - 1] = -c * D + np.eye(n - 1) - M[1:-1, 1:-1] * fp[None, 1:-1]
        J[: n - 1, n - 1] = -(u[2:] - u[:-2]) / (2 * h)
        J[n - 1, mid - 1] = 1.0
        try:
            step = linalg.solve(J, -r, check_finite=False)
        except linalg.LinAlgError as exc:
            raise WaveSolveError(f"singular Jacobian at iteration {it}") from exc
        lam = 1.0
        while True:
            u_new = u.copy()
            u_new[1:-1] += lam * step[:-1]
            c_new = c + lam * step[-1]
            r_new = full_residual(u_new, c_new)
            norm_new = np.max(np.abs(r_new))
            if norm_new < norm or lam < 1e-4:
                break
            lam *= 0.5
        u, c, r, norm = u_new, c_new, r_new, norm_new
        log.debug("newton it=%d |r|=%.3e c=%.6g lam=%.3g", it, norm, c, lam)
    if not norm < 1e-8:
        raise WaveSolveError(f"Newton stalled at residual {norm:.3e} after {max_iter} iterations")
    return u, float(c), float(norm)


def _relax(F, kernel, x, h, dt=0.05, t_max=200.0, window=10.0):
    """Evolve ``u_t = -u + w * F(u)`` in a frame re-centred on ``u = a``.

    Returns ``(u, c)`` with ``c`` the mean drift of the level set over the
    last ``window`` time units.
    """
    a1, a, a2 = F.fixed_points
    M, outside = _operators(kernel, x, h, a1, a2)
    u = a1 + (a2 - a1) * F(x + F.kappa)
    shifts = []
    steps = int(round(t_max / dt))
    last = int(round(window / dt))
    for i in range(steps):
        prev = u
        u = u + dt * (-u + M @ F(u) + outside)
        u[0], u[-1] = a1, a2
        j = np.searchsorted(u, a)
        j = min(max(j, 1), len(x) - 1)
        xc = x[j - 1] + (a - u[j - 1]) * h / (u[j] - u[j - 1])
        u = np.interp(x + xc, x, u)
        u = np.maximum.accumulate(u)
        shifts.append(xc)
        # stationary in the moving frame: hand over to Newton
        if i >= last and np.max(np.abs(u - prev)) < 1e-5 * dt:
            break
    c = float(np.sum(shifts[-last:]) / (last * dt))
    return u, c


def solve_profile(
    F: GainFunction,
    kernel: SynapticKernel,
    L_w: float = 30.0,
    h: float = 0.05,
    tol: float = 1e-8,
    max_iter: int = 50,
    reflect_negative: bool = True,
) -> WaveProfile:
    """Solve for the monotone front connecting ``a1`` to ``a2``.

    If the converged speed is negative the solution is mapped through
    ``u -> 1 - u(-x)``, which solves the same equation for the reflected gain
    ``1 - F(1 - x)`` with positive speed; the returned profile then carries
    that gain and ``reflected=True``.
    """
    if kernel.tail(L_w) > 1e-10:
        raise ValueError(f"L_w={L_w} leaves kernel tail mass {kernel.tail(L_w):.2e} >= 1e-10")
    x = _grid(L_w, h)
    try:
        u, c, norm = _newton(F, kernel, x, h, min(max_iter, 20))
    except WaveSolveError:
        log.info("cold Newton start failed; relaxing the field equation first")
        u, c, norm = _newton(F, kernel, x, h, max_iter, _relax(F, kernel, x, h))
    if norm > tol:
        raise WaveSolveError(f"Newton did not converge: residual {norm:.3e}")
    if np.any(np.diff(u) < -1e-10):
        raise WaveSolveError("converged profile is not monotone")

    reflected = False
    if c < 0 and reflect_negative:
        log.warning("wave speed %.4g < 0; returning the reflected front u -> 1 - u(-x)", c)
        F = F.reflected()
        u = 1.0 - u[::-1]
        c = -c
        reflected = True
        M, outside = _operators(kernel, x, h, *F.fixed_points[::2])
        norm = float(np.max(np.abs(residual(F, M, outside, u, c, h))))
        if norm > tol:
            raise WaveSolveError(f"reflected profile residual {norm:.3e} above tol")
    return WaveProfile(x=x, u=u, speed=float(c), residual_norm=float(norm), h=h, gain=F, kernel=kernel, reflected=reflected)


def _shifted(profile: WaveProfile, t, x):
    return np.asarray(x, dtype=float) - profile.speed * t


def wave_at(profile: WaveProfile, t, x):
    """``u_TW(t, x) = u_hat(x - c t)``; clamped to ``a1``/``a2`` off the grid."""
    z = _shifted(profile, t, x)
    out = profile.spline(np.clip(z, profile.x[0], profile.x[-1]))
    return np.where(z < profile.x[0], profile.a1, np.where(z > profile.x[-1], profile.a2, out))


def wave_dx(profile: WaveProfile, t, x):
    z = _shifted(profile, t, x)
    inside = (z >= profile.x[0]) & (z <= profile.x[-1])
    return np.where(inside, profile.spline(np.clip(z, profile.x[0], profile.x[-1]), 1), 0.0)


def wave_dxx(profile: WaveProfile, t, x):
    z = _shifted(profile, t, x)
    inside = (z >= profile.x[0]) & (z <= profile.x[-1])
    return np.where(inside, profile.spline(np.clip(z, profile.x[0], profile.x[-1]), 2), 0.0)


def wave_dt(profile: WaveProfile, t, x):
    return -profile.speed * wave_dx(profile, t, x)
