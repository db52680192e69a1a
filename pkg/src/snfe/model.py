"""Gain function, synaptic kernels and network weight constructions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "GainFunction",
    "SynapticKernel",
    "WeightMatrix",
    "AdmissibilityError",
    "BoundaryError",
    "build_weights",
    "fixed_points",
    "cell_weights",
    "chain_weights",
    "MAX_POPULATIONS",
]

#: Cap on 2mL for dense weight matrices.
MAX_POPULATIONS = 8192


class AdmissibilityError(ValueError):
    """Model parameters violate the bistability assumptions."""


class BoundaryError(ValueError):
    """An activity value reached 0 or 1, where the inverse gain diverges."""


@dataclass(frozen=True)
class GainFunction:
    """Logistic gain ``F(x) = 1 / (1 + exp(-gamma (x - kappa)))``.

    Construction runs the fixed-point scan and rejects parameters for which
    ``F(x) - x`` does not have exactly three roots in (0, 1).
    """

    gamma: float
    kappa: float
    scan_points: int = 10_000
    _fixed: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise AdmissibilityError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.kappa < 1:
            raise AdmissibilityError(f"kappa must lie in (0, 1), got {self.kappa}")
        object.__setattr__(self, "_fixed", self._find_fixed_points())

    # -- evaluation ---------------------------------------------------------
    def __call__(self, x):
        return special.expit(self.gamma * (np.asarray(x, dtype=float) - self.kappa))

    def d1(self, x):
        f = self(x)
        return self.gamma * f * (1.0 - f)

    def d2(self, x):
        f = self(x)
        return self.gamma**2 * f * (1.0 - f) * (1.0 - 2.0 * f)

    def d3(self, x):
        f = self(x)
        return self.gamma**3 * f * (1.0 - f) * (1.0 - 6.0 * f + 6.0 * f * f)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any((y <= 0.0) | (y >= 1.0)) or np.any(~np.isfinite(y)):
            raise BoundaryError("inverse gain needs values strictly inside (0, 1)")
        return self.kappa + special.logit(y) / self.gamma

    def d1_of_inverse(self, y):
        """``F'(F^{-1}(y)) = gamma y (1 - y)`` without forming the inverse."""
        y = np.asarray(y, dtype=float)
        return self.gamma * y * (1.0 - y)

    @property
    def sup_d1(self) -> float:
        return self.gamma / 4.0

    def reflected(self) -> "GainFunction":
        """Gain ``1 - F(1 - x)``; logistic with threshold ``1 - kappa``."""
        return GainFunction(self.gamma, 1.0 - self.kappa, self.scan_points)

    # -- fixed points -------------------------------------------------------
    def _find_fixed_points(self):
        g = lambda x: self(x) - x
        xs = np.linspace(0.0, 1.0, self.scan_points + 1)
        gs = g(xs)
        roots = []
        for i in range(len(xs) - 1):
            if gs[i] == 0.0:
                roots.append(float(xs[i]))
            elif gs[i] * gs[i + 1] < 0.0:
                roots.append(_bisect(g, xs[i], xs[i + 1]))
        if len(roots) != 3:
            raise AdmissibilityError(
                f"F(x) - x has {len(roots)} sign changes on (0, 1) for "
                f"gamma={self.gamma}, kappa={self.kappa}; need exactly 3"
            )
        a1, a, a2 = roots
        slopes = self.d1(np.array(roots))
        if not (slopes[0] < 1.0 and slopes[1] > 1.0 and slopes[2] < 1.0):
            raise AdmissibilityError(f"slope conditions fail at fixed points: F' = {slopes}")
        return a1, a, a2

    @property
    def fixed_points(self) -> tuple[float, float, float]:
        return self._fixed


def _bisect(g, lo, hi, maxiter=200):
    glo = g(lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        gm = g(mid)
        if gm == 0.0:
            return float(mid)
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return float(lo if abs(g(lo)) <= abs(g(hi)) else hi)


def fixed_points(F: GainFunction):
    """Return ``(a1, a, a2)`` and the slopes ``F'`` at each."""
    pts = F.fixed_points
    return pts, tuple(float(s) for s in F.d1(np.array(pts)))


@dataclass(frozen=True)
class SynapticKernel:
    """Even, unit-mass kernel; ``family`` is ``"exponential"`` or ``"gaussian"``."""

    family: str
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in ("exponential", "gaussian"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.sigma > 0:
            raise ValueError("kernel sigma must be positive")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        s = self.sigma
        if self.family == "exponential":
            return np.exp(-x / s) / (2.0 * s)
        return np.exp(-0.5 * (x / s) ** 2) / (np.sqrt(2.0 * np.pi) * s)

    def tail(self, x):
        """Mass to the right of ``x``: integral of w over (x, inf)."""
        x = np.asarray(x, dtype=float)
        s = self.sigma
        if self.family == "exponential":
            return np.where(x >= 0, 0.5 * np.exp(-np.abs(x) / s), 1.0 - 0.5 * np.exp(-np.abs(x) / s))
        return 0.5 * special.erfc(x / (s * np.sqrt(2.0)))

    def mass(self, a, b):
        """Integral of w over (a, b), with cancellation-free branches."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        right = self.tail(np.maximum(a, 0.0)) - self.tail(np.maximum(b, 0.0))
        left = self.tail(np.maximum(-b, 0.0)) - self.tail(np.maximum(-a, 0.0))
        both = 1.0 - self.tail(np.maximum(-a, 0.0)) - self.tail(np.maximum(b, 0.0))
        out = np.where(a >= 0, right, np.where(b <= 0, left, both))
        return np.where(b > a, out, 0.0)

    @property
    def dx_l1(self) -> float:
        """``||w_x||_1``; both families are unimodal so this is ``2 w(0)``."""
        return float(2.0 * self(0.0))

    @property
    def tail_constant_analytic(self) -> float:
        if self.family == "exponential":
            return self.sigma
        return self.sigma * np.sqrt(np.pi / 2.0)

    def tail_ratio(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "exponential":
            return self.tail(x) / self(x)
        # Mills ratio via the scaled complementary error function
        return self.sigma * np.sqrt(np.pi / 2.0) * special.erfcx(x / (self.sigma * np.sqrt(2.0)))

    def tail_constant(self, n: int = 20_001, span: float = 10.0) -> float:
        """Scan ``sup_x tail(x) / w(x)`` over [0, span * sigma]."""
        ratio = self.tail_ratio(np.linspace(0.0, span * self.sigma, n))
        sup = float(ratio.max())
        if sup > self.tail_constant_analytic * (1 + 1e-12):
            raise AssertionError("scanned tail constant exceeds the analytic value")
        return sup

    def effective_support(self, tol: float = 1e-10) -> float:
        """Smallest x with tail(x) < tol."""
        s = self.sigma
        if self.family == "exponential":
            return float(s * np.log(0.5 / tol))
        return float(s * np.sqrt(2.0) * special.erfcinv(2.0 * tol))


@dataclass(frozen=True)
class WeightMatrix:
    m: int
    L: int
    interior: np.ndarray
    boundary_plus: np.ndarray
    boundary_minus: np.ndarray

    @property
    def P(self) -> int:
        return self.interior.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(-self.m * self.L, self.m * self.L) / self.m

    def row_sums(self) -> np.ndarray:
        return self.interior.sum(axis=1) + self.boundary_plus + self.boundary_minus


def cell_weights(kernel: SynapticKernel, targets, cell_left, width: float) -> np.ndarray:
    """``W[i, j] = int_{cell_left[j]}^{cell_left[j]+width} w(targets[i] - y) dy``."""
    t = np.asarray(targets, dtype=float)[:, None]
    s = np.asarray(cell_left, dtype=float)[None, :]
    return kernel.mass(t - s - width, t - s)


def build_weights(kernel: SynapticKernel, m: int, L: int, cap: int = MAX_POPULATIONS) -> WeightMatrix:
    """Network weights for populations at ``k/m``, ``-mL <= k < mL``.

    Interior weights integrate the kernel over the left-anchored cells
    ``[l/m, (l+1)/m)``; the two boundary vectors carry the kernel mass beyond
    ``+L`` and ``-L``.
    """
    if m < 1 or L < 1:
        raise ValueError("need m >= 1 and L >= 1")
    if int(m) != m or int(m * L) != m * L:
        raise ValueError("m and mL must be integers")
    P = int(2 * m * L)
    if P > cap:
        raise ValueError(f"2mL = {P} exceeds the population cap {cap}")
    k = np.arange(-m * L, m * L)
    # Toeplitz in k - l: mass over ((k-l-1)/m, (k-l)/m)
    d = np.arange(-(P - 1), P)
    diag = kernel.mass((d - 1) / m, d / m)
    idx = k[:, None] - k[None, :] + (P - 1)
    interior = diag[idx]
    x = k / m
    plus = kernel.tail(L - x)  # int_L^inf w(x - y) dy
    minus = kernel.tail(x + L)
    return WeightMatrix(int(m), int(L), interior, plus, minus)


def chain_weights(kernel: SynapticKernel, P: int, spacing: float) -> np.ndarray:
    """Row-stochastic weights for a small chain of ``P`` populations.

    Populations sit at ``k * spacing``; each row is the kernel sampled at the
    pairwise distances, normalised to unit row sum.
    """
    pos = np.arange(P) * spacing
    W = kernel(pos[:, None] - pos[None, :])
    return W / W.sum(axis=1, keepdims=True)
