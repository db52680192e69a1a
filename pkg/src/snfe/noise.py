"""Spatially correlated Wiener noise with a boxcar correlation kernel.

A realization is represented by increments of interval averages
``(1/|A|) <W^Q_t, 1_A>``.  Their covariance per unit time is
``(1/|A||B|) int_A int_B q*q``, where ``q*q`` is the tent
``(2 eps - |s|)_+ / (4 eps^2)``.  The double integral is closed form via the
second antiderivative of the tent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

__all__ = [
    "CorrelationKernel",
    "NoiseGrid",
    "build_covariance",
    "build_interval_covariance",
    "reference_grid",
    "sample_increments",
    "phi_m",
    "condition_i_norm",
    "condition_i_profile",
    "condition_i_bound",
    "save_noise",
    "load_noise",
    "FactorizationError",
]


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorrelationKernel:
    """Boxcar ``q(x, y) = 1/(2 eps) 1{|x - y| < eps}``."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def __call__(self, x, y):
        d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        return np.where(d < self.epsilon, 0.5 / self.epsilon, 0.0)

    @property
    def l1(self) -> float:
        return 1.0

    @property
    def l2_squared(self) -> float:
        return 0.5 / self.epsilon

    def tent(self, s):
        """``q*q`` as a function of the separation ``s``."""
        e = self.epsilon
        return np.maximum(2 * e - np.abs(np.asarray(s, dtype=float)), 0.0) / (4 * e * e)

    def tent_second_antiderivative(self, s):
        """Even function ``G`` with ``G'' = tent`` and ``G(0) = G'(0) = 0``."""
        e = self.epsilon
        a = np.abs(np.asarray(s, dtype=float))
        inner = (e * a * a - a**3 / 6.0) / (4 * e * e)
        outer = 2 * e / 3.0 + 0.5 * (a - 2 * e)
        return np.where(a <= 2 * e, inner, outer)

    def pair_integral(self, a, b, c, d):
        """``int_a^b int_c^d tent(y - z) dz dy``, exactly 0 when the gap is >= 2 eps."""
        G = self.tent_second_antiderivative
        val = G(b - c) - G(a - c) - G(b - d) + G(a - d)
        gap = np.maximum(np.asarray(c) - np.asarray(b), np.asarray(a) - np.asarray(d))
        return np.where(gap >= 2 * self.epsilon, 0.0, val)


@dataclass
class NoiseGrid:
    """Interval family with the banded covariance of its average increments."""

    kernel: CorrelationKernel
    left: np.ndarray
    right: np.ndarray
    covariance: np.ndarray
    bandwidth: int
    #: lower band storage of the Cholesky factor, ``factor[i, j] = Lfac[j + i, j]``
    factor: np.ndarray = field(repr=False)
    m: int | None = None
    L: int | None = None
    jitter: float = 0.0

    @property
    def size(self) -> int:
        return len(self.left)

    def dense_factor(self) -> np.ndarray:
        n, b = self.size, self.bandwidth
        out = np.zeros((n, n))
        for i in range(b + 1):
            idx = np.arange(n - i)
            out[idx + i, idx] = self.factor[i, : n - i]
        return out

    def apply_factor(self, z):
        """``Lfac @ z`` for ``z`` of shape (..., n)."""
        z = np.asarray(z, dtype=float)
        n = self.size
        out = self.factor[0] * z
        for i in range(1, self.bandwidth + 1):
            out[..., i:] += self.factor[i, : n - i] * z[..., : n - i]
        return out


def build_interval_covariance(kernel: CorrelationKernel, left, right, jitter: float = 1e-14) -> NoiseGrid:
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    n = len(left)
    # the widest reach in index space, from the largest gap still within 2 eps
    order = np.all(np.diff(left) > 0)
    if not order:
        raise ValueError("intervals must be sorted")
    band = 0
    for off in range(1, n):
        gaps = left[off:] - right[:-off]
        if np.all(gaps >= 2 * kernel.epsilon):
            break
        band = off
    widths = right - left
    C = np.zeros((n, n))
    for off in range(band + 1):
        i = np.arange(n - off)
        j = i + off
        vals = kernel.pair_integral(left[i], right[i], left[j], right[j]) / (widths[i] * widths[j])
        C[i, j] = vals
        C[j, i] = vals
    ab = np.zeros((band + 1, n))
    for off in range(band + 1):
        ab[off, : n - off] = np.diagonal(C, -off)
    used = 0.0
    try:
        factor = linalg.cholesky_banded(ab, lower=True)
    except linalg.LinAlgError:
        used = jitter * float(np.max(np.diag(C)))
        ab[0] += used
        try:
            factor = linalg.cholesky_banded(ab, lower=True)
        except linalg.LinAlgError as exc:
            raise FactorizationError("covariance not positive definite even after jitter") from exc
    return NoiseGrid(kernel, left, right, C, band, factor, jitter=used)


def build_covariance(kernel: CorrelationKernel, m: int, L: int) -> NoiseGrid:
    """Covariance of ``W^m_k``, the averages over ``J_k = (k/m - 1/4m, k/m + 1/4m)``."""
    if m < 1 or L < 1:
        raise ValueError("need m >= 1 and L >= 1")
    k = np.arange(-m * L, m * L)
    grid = build_interval_covariance(kernel, k / m - 0.25 / m, k / m + 0.25 / m)
    grid.m, grid.L = int(m), int(L)
    return grid


def reference_grid(kernel: CorrelationKernel, m_ref: int, L_ref: int) -> NoiseGrid:
    """Covariance of averages over the reference cells ``[i/m_ref, (i+1)/m_ref)``."""
    i = np.arange(-m_ref * L_ref, m_ref * L_ref)
    grid = build_interval_covariance(kernel, i / m_ref, (i + 1) / m_ref)
    grid.m, grid.L = int(m_ref), int(L_ref)
    return grid


def sample_increments(grid: NoiseGrid, dt: float, rng: np.random.Generator, size=None):
    """Gaussian increments with covariance ``dt * C``; ``size`` prepends batch axes."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    shape = (grid.size,) if size is None else tuple(np.atleast_1d(size)) + (grid.size,)
    return np.sqrt(dt) * grid.apply_factor(rng.standard_normal(shape))


def phi_m(values, m: int, L: int, m_ref: int, L_ref: int):
    """Average over ``J^m_k`` of a field given as reference cell averages.

    ``values`` has shape (..., 2 m_ref L_ref) on cells ``[i/m_ref, (i+1)/m_ref)``.
    Returns shape (..., 2 m L).
    """
    if m_ref % (4 * m):
        raise ValueError(f"reference resolution {m_ref} does not resolve the J cells of m={m}")
    if L >= L_ref:
        # J cells of the outermost nodes reach a quarter cell past +-L
        raise ValueError("level domain must lie strictly inside the reference domain")
    values = np.asarray(values, dtype=float)
    r = m_ref // (4 * m)  # reference cells per quarter of a level cell
    k = np.arange(-m * L, m * L)
    start = (k * 4 * r - r) + m_ref * L_ref  # index of the first reference cell in J_k
    csum = np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(values, axis=-1)], axis=-1)
    total = csum[..., start + 2 * r] - csum[..., start]
    return total / (2 * r)


def _difference_sq_integral(eps, jl, jr, m, x):
    """``|| 2m sqrt(Q) 1_J - q(x, .) ||^2`` by exact piecewise integration."""
    pts = np.array([jl - eps, jl + eps, jr - eps, jr + eps, x - eps, x + eps])
    pts = np.unique(pts)

    def f(y):
        overlap = np.clip(np.minimum(jr, y + eps) - np.maximum(jl, y - eps), 0.0, None)
        smooth = 2 * m * overlap / (2 * eps)
        box = np.where(np.abs(y - x) < eps, 0.5 / eps, 0.0)
        return smooth - box

    a, b = pts[:-1], pts[1:]
    mid = 0.5 * (a + b)
    # integrand is linear on each piece, so Simpson is exact; endpoint values taken as one-sided limits
    fa = _one_sided(f, a, b, left=True)
    fb = _one_sided(f, a, b, left=False)
    return float(np.sum((b - a) / 6.0 * (fa**2 + 4 * f(mid) ** 2 + fb**2)))


def _one_sided(f, a, b, left):
    # linear extrapolation from two interior points avoids discontinuities at the breakpoints
    t1, t2 = (0.25, 0.5) if left else (0.75, 0.5)
    y1 = f(a + t1 * (b - a))
    y2 = f(a + t2 * (b - a))
    t0 = 0.0 if left else 1.0
    return y1 + (y2 - y1) * (t0 - t1) / (t2 - t1)


def condition_i_profile(kernel: CorrelationKernel, m: int, centred: bool = False, n: int = 401):
    """Squared norm as a function of the evaluation point over one population cell.

    The literal cell is ``[k/m, (k+1)/m)``; ``centred`` uses ``[k/m - 1/2m, k/m + 1/2m)``.
    By translation invariance ``k = 0``.  Returns ``(x, values)``.
    """
    eps = kernel.epsilon
    jl, jr = -0.25 / m, 0.25 / m
    lo = -0.5 / m if centred else 0.0
    xs = np.linspace(lo, lo + 1.0 / m, n)
    # include breakpoints of the piecewise quadratic in x
    extra = np.array([jl, jr, jl - 2 * eps, jr + 2 * eps, jl + 2 * eps, jr - 2 * eps, 0.0])
    xs = np.unique(np.concatenate([xs, extra[(extra >= lo) & (extra <= lo + 1.0 / m)]]))
    vals = np.array([_difference_sq_integral(eps, jl, jr, m, x) for x in xs])
    return xs, vals


def condition_i_norm(kernel: CorrelationKernel, m: int, centred: bool = False) -> float:
    """``sup_k sup_{x in I_k} || 2m sqrt(Q) 1_{J_k} - q(x, .) ||^2`` for the boxcar.

    The supremum over the half-open cell includes its closure, since the map
    is continuous in ``x``.
    """
    return float(condition_i_profile(kernel, m, centred)[1].max())


def condition_i_bound(kernel: CorrelationKernel, m: int) -> float:
    return 1.0 / (4.0 * kernel.epsilon**2 * m)


# -- persistence ---------------------------------------------------------------


def save_noise(path, increments, m_ref: int, epsilon: float, dt: float, seed: int) -> None:
    """Binary ``.npz`` with the increment array and its header fields."""
    np.savez(Path(path), increments=np.asarray(increments), m_ref=m_ref, epsilon=epsilon, dt=dt, seed=seed)


def load_noise(path):
    with np.load(Path(path)) as z:
        header = {k: z[k].item() for k in ("m_ref", "epsilon", "dt", "seed")}
        return z["increments"], header
