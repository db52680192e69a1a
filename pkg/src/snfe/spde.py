"""Stochastic neural field equation around a traveling wave and the embedded
population networks that approximate it.

The continuum equation is discretized on reference cells
``[i/m_ref, (i+1)/m_ref)`` with values at cell midpoints and the convolution
taken with exact cell masses (second order).  A network at density ``m``
lives on nodes ``k/m`` with the left-anchored cell weights.  All levels are
driven by one realization of the correlated noise: the continuum consumes
reference cell averages, the networks consume their projection ``Phi^m``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .diffusion import network_drift
from .model import WeightMatrix, build_weights
from .noise import CorrelationKernel, NoiseGrid, phi_m, reference_grid
from .wave import WaveProfile, wave_at, wave_dx

log = logging.getLogger(__name__)

__all__ = [
    "SPDEConfig",
    "DispersionCoefficients",
    "ReferenceField",
    "NetworkLevel",
    "CoupledSystem",
    "CoupledResult",
    "default_delta",
    "level_domains",
    "drift_continuum",
    "dispersion_continuum",
    "drift_discrete",
    "dispersion_discrete",
    "simulate_coupled",
]

#: default half-lengths ``L^m`` of the network domains
DEFAULT_LEVEL_DOMAINS = {4: 6, 8: 8, 16: 10, 32: 12}


def level_domains(ms, rule=None):
    rule = DEFAULT_LEVEL_DOMAINS if rule is None else rule
    out = {}
    for m in ms:
        if m in rule:
            out[m] = int(rule[m])
        else:
            # grows logarithmically, matching the default ladder
            out[m] = int(round(2 * np.log2(m) + 2))
    return out


@dataclass(frozen=True)
class SPDEConfig:
    N: float | None = 100.0  # None means the N -> infinity drift without noise
    epsilon: float = 0.1
    m_ref: int = 128
    L_ref: int = 16
    delta: float | None = None
    dt: float = 0.0025
    dt_max: float = 0.05
    noise: bool = True

    def __post_init__(self):
        if self.N is not None and not self.N > 0:
            raise ValueError("N must be positive or None")
        if not 0 < self.dt <= self.dt_max:
            raise ValueError(f"dt={self.dt} outside (0, dt_max={self.dt_max}]")

    @property
    def noisy(self) -> bool:
        return self.noise and self.N is not None


def default_delta(profile: WaveProfile, retain: float = 0.99) -> float:
    """Largest ``delta`` such that ``{u_x >= delta}`` keeps ``retain`` of ``int u_x^2``."""
    ux = np.clip(profile.ux(), 0.0, None)
    order = np.sort(ux)[::-1]
    mass = np.cumsum(order**2)
    idx = int(np.searchsorted(mass, retain * mass[-1]))
    return float(order[min(idx, len(order) - 1)])


@dataclass
class DispersionCoefficients:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    indicator: np.ndarray
    delta: float
    N: float | None
    fp: np.ndarray  # F'(u_TW) at the grid points
    utw: np.ndarray

    @property
    def scale(self) -> float:
        return 0.0 if self.N is None else 1.0 / np.sqrt(self.N)


def _coefficients(neg_drift, fp, fpp, indicator, delta, N, utw):
    if np.any(neg_drift[indicator] <= 0):
        raise ValueError("wave drift is not strictly negative on the noise support")
    safe = np.where(indicator, neg_drift, 1.0)
    root = np.sqrt(safe * fp)
    alpha = np.where(indicator, np.sqrt(safe / fp), 0.0)
    beta = np.where(indicator, (-fpp / fp * safe + 1.0) / (2.0 * root), 0.0)
    gamma = np.where(indicator, 1.0 / (2.0 * root), 0.0)
    return DispersionCoefficients(alpha, beta, gamma, indicator, delta, N, fp, utw)


class ReferenceField:
    """Midpoint-valued reference cells on ``[-L_ref, L_ref)`` standing in for the continuum."""

    def __init__(self, profile: WaveProfile, m_ref: int, L_ref: int):
        if not profile.speed > 1e-8:
            raise ValueError("continuum dispersion needs a wave with c > 0")
        self.profile = profile
        self.F = profile.gain
        self.kernel = profile.kernel
        self.m_ref, self.L_ref = int(m_ref), int(L_ref)
        self.h = 1.0 / m_ref
        n = 2 * m_ref * L_ref
        self.n = n
        self.left = np.arange(-m_ref * L_ref, m_ref * L_ref) / m_ref
        self.x = self.left + 0.5 * self.h
        d = np.arange(-(n - 1), n)
        taps = self.kernel.mass((d - 0.5) * self.h, (d + 0.5) * self.h)
        self._nfft = sfft.next_fast_len(3 * n - 2, real=True)
        self._taps_hat = sfft.rfft(taps, self._nfft)
        self.plus = self.kernel.tail(L_ref - self.x)
        self.minus = self.kernel.tail(self.x + L_ref)

    def convolve(self, f):
        """Cell-mass convolution of a field on the reference cells; batched over leading axes."""
        out = sfft.irfft(sfft.rfft(f, self._nfft, axis=-1) * self._taps_hat, self._nfft, axis=-1)
        return out[..., self.n - 1 : 2 * self.n - 1]

    def wave(self, t):
        return wave_at(self.profile, t, self.x)

    def boundary(self, t):
        F, p, L = self.F, self.profile, float(self.L_ref)
        return self.plus * F(wave_at(p, t, L)) + self.minus * F(wave_at(p, t, -L))

    def coefficients(self, t, N, delta) -> DispersionCoefficients:
        utw = self.wave(t)
        ux = wave_dx(self.profile, t, self.x)
        fp, fpp = self.F.d1(utw), self.F.d2(utw)
        ind = ux >= delta
        return _coefficients(self.profile.speed * ux, fp, fpp, ind, delta, N, utw)

    def l2(self, f, axis=-1):
        return np.sqrt(np.sum(np.asarray(f) ** 2, axis=axis) * self.h)


def drift_continuum(u, ref: ReferenceField, t: float, N: float | None):
    """``-u + w * F(u) + (1/2N) F''/F'^2 (u_TW) d_t u_TW`` on the reference cells."""
    drift = -u + ref.convolve(ref.F(u)) + ref.boundary(t)
    if N is not None:
        utw = ref.wave(t)
        dt_tw = -ref.profile.speed * wave_dx(ref.profile, t, ref.x)
        drift = drift + ref.F.d2(utw) / (2.0 * N * ref.F.d1(utw) ** 2) * dt_tw
    return drift


def dispersion_continuum(u, ref: ReferenceField, coeffs: DispersionCoefficients):
    v = u - coeffs.utw
    inner = coeffs.alpha + coeffs.beta * v - coeffs.gamma * ref.convolve(coeffs.fp * v)
    return coeffs.scale * np.where(coeffs.indicator, inner, 0.0)


def continuum_lipschitz_bound(ref: ReferenceField, coeffs: DispersionCoefficients) -> float:
    """``(sup|beta| + sup|gamma| ||w||_1 ||F'||_inf) / sqrt(N)`` over the support."""
    if not coeffs.indicator.any():
        return 0.0
    b = np.abs(coeffs.beta[coeffs.indicator]).max()
    g = np.abs(coeffs.gamma[coeffs.indicator]).max()
    return coeffs.scale * (b + g * 1.0 * ref.F.sup_d1)


def continuum_lipschitz_numeric(ref: ReferenceField, coeffs: DispersionCoefficients) -> float:
    """Operator norm of the affine map's linear part, restricted to support rows."""
    rows = np.flatnonzero(coeffs.indicator)
    if rows.size == 0:
        return 0.0
    d = ref.x[rows][:, None] - ref.x[None, :]
    M = ref.kernel.mass(d - 0.5 * ref.h, d + 0.5 * ref.h)
    A = -coeffs.gamma[rows][:, None] * M * coeffs.fp[None, :]
    A[np.arange(rows.size), rows] += coeffs.beta[rows]
    return coeffs.scale * float(np.linalg.norm(A, 2))


class NetworkLevel:
    """Population network at density ``m`` on nodes ``k/m``, ``-mL <= k < mL``."""

    def __init__(self, profile: WaveProfile, m: int, L: int):
        self.profile = profile
        self.F = profile.gain
        self.m, self.L = int(m), int(L)
        self.weights: WeightMatrix = build_weights(profile.kernel, m, L)
        self.nodes = self.weights.nodes

    def wave(self, t):
        return wave_at(self.profile, t, self.nodes)

    def wave_drift(self, t):
        return network_drift(self.wave(t), self.weights, self.F, self.profile, t)

    def coefficients(self, t, N, delta) -> DispersionCoefficients:
        utw = self.wave(t)
        fp, fpp = self.F.d1(utw), self.F.d2(utw)
        ind = wave_dx(self.profile, t, self.nodes) >= delta
        return _coefficients(-self.wave_drift(t), fp, fpp, ind, delta, N, utw)

    def lipschitz_numeric(self, coeffs: DispersionCoefficients) -> float:
        A = -coeffs.gamma[:, None] * self.weights.interior * coeffs.fp[None, :]
        A[np.diag_indices_from(A)] += coeffs.beta
        A[~coeffs.indicator] = 0.0
        return coeffs.scale * float(np.linalg.norm(A, 2))


def drift_discrete(u, level: NetworkLevel, t: float, N: float | None):
    """``b^m(t, u)`` plus the Ito correction built from ``b^m(t, pi^m u_TW)``."""
    drift = network_drift(u, level.weights, level.F, level.profile, t)
    if N is not None:
        utw = level.wave(t)
        corr = level.F.d2(utw) / (2.0 * N * level.F.d1(utw) ** 2) * level.wave_drift(t)
        drift = drift + corr
    return drift


def dispersion_discrete(u, level: NetworkLevel, coeffs: DispersionCoefficients):
    v = u - coeffs.utw
    inner = coeffs.alpha + coeffs.beta * v - coeffs.gamma * ((coeffs.fp * v) @ level.weights.interior.T)
    return coeffs.scale * np.where(coeffs.indicator, inner, 0.0)


class CoupledSystem:
    """Continuum reference field plus network levels sharing one noise realization."""

    def __init__(self, profile: WaveProfile, config: SPDEConfig, levels: dict[int, int]):
        self.profile = profile
        self.config = config
        for m, L in levels.items():
            if config.m_ref % (4 * m):
                raise ValueError(f"m_ref={config.m_ref} does not resolve the noise cells of m={m}")
            if L >= config.L_ref:
                raise ValueError(f"L^m={L} must lie strictly inside the reference domain {config.L_ref}")
        self.ref = ReferenceField(profile, config.m_ref, config.L_ref)
        self.levels = {m: NetworkLevel(profile, m, L) for m, L in sorted(levels.items())}
        self.delta = default_delta(profile) if config.delta is None else float(config.delta)
        self.noise_kernel = CorrelationKernel(config.epsilon)
        self.noise_grid: NoiseGrid = reference_grid(self.noise_kernel, config.m_ref, config.L_ref)
        # reference cells covered by each level domain, and the level cell they fall in
        self._slices = {}
        for m, lev in self.levels.items():
            r = config.m_ref // m
            start = (config.L_ref - lev.L) * config.m_ref
            stop = start + 2 * lev.L * config.m_ref
            self._slices[m] = (slice(start, stop), r)

    # -- one explicit step ----------------------------------------------------
    def step_spde(self, u, t, dW, dt):
        cfg = self.config
        out = u + drift_continuum(u, self.ref, t, cfg.N) * dt
        if cfg.noisy and dW is not None:
            coeffs = self.ref.coefficients(t, cfg.N, self.delta)
            out = out + dispersion_continuum(u, self.ref, coeffs) * dW
        return out

    def step_network(self, m, u, t, dW_m, dt):
        cfg = self.config
        lev = self.levels[m]
        out = u + drift_discrete(u, lev, t, cfg.N) * dt
        if cfg.noisy and dW_m is not None:
            coeffs = lev.coefficients(t, cfg.N, self.delta)
            out = out + dispersion_discrete(u, lev, coeffs) * dW_m
        return out

    def project_noise(self, m, dW):
        lev = self.levels[m]
        return phi_m(dW, m, lev.L, self.config.m_ref, self.config.L_ref)

    # -- comparisons ------------------------------------------------------------
    def level_distance_sq(self, m, u_m, u_ref):
        """``||u^m - u||^2`` on ``(-L^m, L^m)``, exact for piecewise-constant fields."""
        sl, r = self._slices[m]
        diff = u_ref[..., sl] - np.repeat(u_m, r, axis=-1)
        return np.sum(diff**2, axis=-1) * self.ref.h

    def sigma_m_on_reference(self, m, u_ref, t, coeffs_m: DispersionCoefficients):
        """``sigma^m(t, u 1_(-L^m, L^m))`` for a reference-grid field, as a reference-grid field."""
        lev = self.levels[m]
        sl, r = self._slices[m]
        v = u_ref[..., sl] - np.repeat(coeffs_m.utw, r, axis=-1)
        fp_rep = np.repeat(coeffs_m.fp, r, axis=-1)
        M = self._node_masses(m)
        conv = (fp_rep * v) @ M.T
        inner = np.repeat(coeffs_m.alpha, r) + np.repeat(coeffs_m.beta, r) * v - np.repeat(coeffs_m.gamma * 1.0, r) * np.repeat(conv, r, axis=-1)
        inner = np.where(np.repeat(coeffs_m.indicator, r), inner, 0.0)
        out = np.zeros(u_ref.shape)
        out[..., sl] = coeffs_m.scale * inner
        return out

    def _node_masses(self, m):
        cache = self.__dict__.setdefault("_mass_cache", {})
        if m not in cache:
            lev = self.levels[m]
            sl, _ = self._slices[m]
            left = self.ref.left[sl]
            d = lev.nodes[:, None] - left[None, :]
            cache[m] = lev.profile.kernel.mass(d - self.ref.h, d)
        return cache[m]


@dataclass
class CoupledResult:
    times: np.ndarray
    ms: list
    #: (R, G, n_levels) squared L2 distances on the level domains
    dist_sq: np.ndarray
    #: (R, G) squared L2 norm of v = u - u_TW for the continuum
    v_sq: np.ndarray
    budget: dict = field(default_factory=dict)
    delta: float = 0.0
    seed: int = 0
    replicas: int = 0

    def sup_moment(self, p: float = 2.0) -> np.ndarray:
        """Per replica and level: ``sup_t ||u^m_t - u_t||^p``; shape (R, n_levels)."""
        return np.max(self.dist_sq, axis=1) ** (p / 2.0)


def _initial(system: CoupledSystem, bump_amplitude: float, bump_width: float):
    bump = lambda x: bump_amplitude * np.exp(-0.5 * (np.asarray(x) / bump_width) ** 2)
    u_ref = system.ref.wave(0.0) + bump(system.ref.x)
    u_levels = {m: lev.wave(0.0) + bump(lev.nodes) for m, lev in system.levels.items()}
    return u_ref, u_levels


def simulate_coupled(
    system: CoupledSystem,
    T: float,
    replicas: int,
    seed: int,
    output_points: int = 200,
    bump_amplitude: float = 0.02,
    bump_width: float = 1.0,
    batch: int = 50,
    budget: bool = False,
    snapshots: bool = False,
) -> CoupledResult:
    """March the continuum and every network level on shared noise.

    The initial continuum state is the wave plus a Gaussian bump; each level
    starts from the nodal sampling of the same function.  Replica ``r`` uses
    the stream spawned as child ``r`` of ``seed`` regardless of batching.
    """
    cfg = system.config
    dt = cfg.dt
    n_steps = int(round(T / dt))
    if not np.isclose(n_steps * dt, T):
        raise ValueError("T must be a multiple of dt")
    out_idx = np.unique(np.rint(np.linspace(0, n_steps, output_points)).astype(int))
    times = out_idx * dt
    ms = list(system.levels)
    G = len(out_idx)
    dist_sq = np.zeros((replicas, G, len(ms)))
    v_sq = np.zeros((replicas, G))
    terms = {}
    if budget:
        for key in ("tail", "cond_ii", "sigma_sq"):
            terms[key] = np.zeros((replicas, G, len(ms))) if key != "sigma_sq" else np.zeros((replicas, G))
    snaps = {} if snapshots else None
    children = np.random.SeedSequence(seed).spawn(replicas)
    u0_ref, u0_levels = _initial(system, bump_amplitude, bump_width)
    for b0 in range(0, replicas, batch):
        b1 = min(replicas, b0 + batch)
        gens = [np.random.Generator(np.random.PCG64(c)) for c in children[b0:b1]]
        u = np.tile(u0_ref, (b1 - b0, 1))
        um = {m: np.tile(u0_levels[m], (b1 - b0, 1)) for m in ms}
        gi = 0
        for step in range(n_steps + 1):
            t = step * dt
            if gi < G and step == out_idx[gi]:
                _record(system, u, um, t, b0, b1, gi, dist_sq, v_sq, terms if budget else None)
                if snaps is not None and b0 == 0:
                    snaps[float(t)] = (u[0].copy(), {m: um[m][0].copy() for m in ms})
                gi += 1
            if step == n_steps:
                break
            dW = None
            if cfg.noisy:
                z = np.stack([g.standard_normal(system.noise_grid.size) for g in gens])
                dW = np.sqrt(dt) * system.noise_grid.apply_factor(z)
            for m in ms:
                dWm = system.project_noise(m, dW) if dW is not None else None
                um[m] = system.step_network(m, um[m], t, dWm, dt)
            u = system.step_spde(u, t, dW, dt)
            if not np.all(np.isfinite(u)):
                raise FloatingPointError(f"continuum state blew up at t={t:.4g}")
    res = CoupledResult(times, ms, dist_sq, v_sq, terms, system.delta, seed, replicas)
    if snapshots:
        res.budget["snapshots"] = snaps
    return res


def _record(system, u, um, t, b0, b1, gi, dist_sq, v_sq, terms):
    ref = system.ref
    v = u - ref.wave(t)
    v_sq[b0:b1, gi] = np.sum(v**2, axis=-1) * ref.h
    for j, m in enumerate(system.levels):
        dist_sq[b0:b1, gi, j] = system.level_distance_sq(m, um[m], u)
    if terms is None:
        return
    cfg = system.config
    coeffs = ref.coefficients(t, cfg.N if cfg.N is not None else np.inf, system.delta)
    sigma = dispersion_continuum(u, ref, coeffs)
    terms["sigma_sq"][b0:b1, gi] = np.sum(sigma**2, axis=-1) * ref.h
    absconv = ref.convolve(np.abs(v))
    ux = wave_dx(ref.profile, t, ref.x)
    for j, (m, lev) in enumerate(system.levels.items()):
        outside = np.abs(ref.x) >= lev.L
        integrand = v**2 + absconv**2 + sigma**2 + ux**2
        terms["tail"][b0:b1, gi, j] = np.sum(integrand[..., outside], axis=-1) * ref.h
        cm = lev.coefficients(t, cfg.N if cfg.N is not None else np.inf, system.delta)
        sig_m = system.sigma_m_on_reference(m, u, t, cm)
        terms["cond_ii"][b0:b1, gi, j] = np.sum((sig_m - sigma) ** 2, axis=-1) * ref.h
