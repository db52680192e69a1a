"""Exact event-driven simulation of the population-activity Markov chain.

State: ``P`` populations of ``N`` neurons, activity ``x_k = n_k / N``.  A
population jumps by ``+-1/N`` with rates proportional to
``F'(F^{-1}(x_k)) (-F^{-1}(x_k) + sum_j w_kj x_j)_{+/-}``.

Alongside the path the simulator accumulates, exactly between jumps, the
integrated generator drift and the predictable bracket, so that the
martingale part ``M = x - x(0) - drift`` is available on the output grid.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .model import BoundaryError, GainFunction

log = logging.getLogger(__name__)

__all__ = [
    "PathRecord",
    "Ensemble",
    "jump_rates",
    "jump_rates_alternative",
    "check_N0",
    "simulate",
    "simulate_ensemble",
    "replica_seeds",
    "SimulationError",
    "default_workers",
]

LINEAR_SCAN_MAX_P = 64


class SimulationError(RuntimeError):
    pass


def _as_external(ext, P):
    return np.zeros(P) if ext is None else np.broadcast_to(np.asarray(ext, dtype=float), (P,)).copy()


def _input_and_inverse(x, W, F, ext):
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0) | (x >= 1)):
        raise BoundaryError("activity state touched 0 or 1")
    finv = F.inverse(x)
    s = W @ x + _as_external(ext, len(x))
    return finv, s


def jump_rates(x, W, F: GainFunction, N: int, ext=None):
    """Up and down rates of every population at activity state ``x``."""
    finv, s = _input_and_inverse(x, W, F, ext)
    b = -finv + s
    scale = N * F.d1_of_inverse(x)
    return scale * np.maximum(b, 0.0), scale * np.maximum(-b, 0.0)


def jump_rates_alternative(x, W, F: GainFunction, N: int, ext=None):
    """Rates with activation driven by the input and decay by the potential."""
    finv, s = _input_and_inverse(x, W, F, ext)
    scale = N * F.d1_of_inverse(x)
    return scale * s, scale * np.maximum(finv, 0.0)


def check_N0(W, F: GainFunction, N: int, ext=None):
    """True iff no jump can leave ``[1/N, 1 - 1/N]``.

    The worst case puts every other population at the same extreme, so the
    input is ``(1 - 1/N) * rowsum`` at the top and ``rowsum / N`` at the bottom.
    Returns ``(ok, offenders)`` with offenders as ``(k, "up"|"down")`` pairs.
    """
    W = np.asarray(W, dtype=float)
    P = W.shape[0]
    ext = _as_external(ext, P)
    rows = W.sum(axis=1)
    if N < 2:
        return False, [(k, d) for k in range(P) for d in ("up", "down")]
    top, bottom = 1.0 - 1.0 / N, 1.0 / N
    b_top = -F.inverse(top) + top * rows + ext
    b_bottom = -F.inverse(bottom) + bottom * rows + ext
    offenders = [(int(k), "up") for k in np.flatnonzero(b_top > 0)]
    offenders += [(int(k), "down") for k in np.flatnonzero(b_bottom < 0)]
    offenders.sort()
    return not offenders, offenders


@dataclass
class PathRecord:
    times: np.ndarray
    counts: np.ndarray  # (G, P) integers
    N: int
    drift_integrals: np.ndarray
    bracket: np.ndarray
    quadratic_variation: np.ndarray
    covariation: np.ndarray  # (P, P) sum of dx_k dx_l over jumps up to T
    n_events: int
    clamped: bool
    seed: int

    @property
    def states(self) -> np.ndarray:
        return self.counts / self.N

    @property
    def martingale(self) -> np.ndarray:
        return self.states - self.states[0] - self.drift_integrals

    def to_csv(self, path) -> None:
        P = self.counts.shape[1]
        cols = ["time"] + [f"x_{k+1}" for k in range(P)] + [f"M_{k+1}" for k in range(P)] + [
            f"bracket_{k+1}" for k in range(P)
        ]
        data = np.column_stack([self.times, self.states, self.martingale, self.bracket])
        _write_csv(path, cols, data)


def _write_csv(path, columns, data):
    with Path(path).open("w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# numba kernel


@njit(cache=True)
def _rate_pair(n, N, s_k, gamma, kappa, alt):
    y = n / N
    finv = kappa + np.log(y / (1.0 - y)) / gamma
    scale = N * gamma * y * (1.0 - y)
    if alt:
        return scale * s_k, scale * max(finv, 0.0)
    b = s_k - finv
    if b > 0:
        return scale * b, 0.0
    return 0.0, -scale * b


@njit(cache=True)
def _tree_update(tree, size, leaf, value):
    i = size + leaf
    tree[i] = value
    i //= 2
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i //= 2


@njit(cache=True)
def _tree_find(tree, size, target):
    i = 1
    while i < size:
        left = tree[2 * i]
        if target < left:
            i = 2 * i
        else:
            target -= left
            i = 2 * i + 1
    return i - size


@njit(cache=True)
def _clamped_rates(n, N, s_k, gamma, kappa, alt, clamp):
    u_, d_ = _rate_pair(n, N, s_k, gamma, kappa, alt)
    hit = False
    if clamp:
        if n == N - 1 and u_ > 0:
            u_ = 0.0
            hit = True
        if n == 1 and d_ > 0:
            d_ = 0.0
            hit = True
    return u_, d_, hit


@njit(cache=True)
def _ssa(counts0, N, W, ext, col_ptr, col_rows, gamma, kappa, alt, clamp, grid, seed, use_tree):
    """Direct-method simulation on the output grid.

    Rates are piecewise constant, so each population keeps the time of its
    last rate change and its drift and bracket integrals are flushed lazily.
    Status codes: 0 ok, 1 boundary hit, 2 non-finite total rate.
    """
    P = counts0.shape[0]
    G = grid.shape[0]
    np.random.seed(seed)
    counts = counts0.copy()
    out_counts = np.zeros((G, P), dtype=np.int64)
    out_drift = np.zeros((G, P))
    out_bracket = np.zeros((G, P))
    out_qv = np.zeros((G, P))
    drift = np.zeros(P)
    bracket = np.zeros(P)
    qv = np.zeros(P)
    last = np.zeros(P)
    up = np.zeros(P)
    down = np.zeros(P)
    s = np.zeros(P)
    clamped = False
    for k in range(P):
        if counts[k] <= 0 or counts[k] >= N:
            return out_counts, out_drift, out_bracket, out_qv, 0, 1, clamped
    for k in range(P):
        acc = ext[k]
        for j in range(P):
            acc += W[k, j] * counts[j] / N
        s[k] = acc

    size = 1
    while size < 2 * P:
        size *= 2
    tree = np.zeros(2 * size)
    for k in range(P):
        u_, d_, hit = _clamped_rates(counts[k], N, s[k], gamma, kappa, alt, clamp)
        clamped = clamped or hit
        up[k] = u_
        down[k] = d_
        tree[size + 2 * k] = u_
        tree[size + 2 * k + 1] = d_
    for i in range(size - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]
    touched = np.zeros(P + 1, dtype=np.int64)

    t = 0.0
    gi = 0
    n_events = 0
    status = 0
    while True:
        if use_tree:
            total = tree[1]
        else:
            total = 0.0
            for k in range(P):
                total += up[k] + down[k]
        if not np.isfinite(total):
            status = 2
            break
        t_next = np.inf
        if total > 0.0:
            t_next = t - np.log(1.0 - np.random.random()) / total
        # cadlag sampling: grid points strictly before the next jump
        while gi < G and grid[gi] < t_next:
            g = grid[gi]
            for k in range(P):
                drift[k] += (up[k] - down[k]) / N * (g - last[k])
                bracket[k] += (up[k] + down[k]) / (N * N) * (g - last[k])
                last[k] = g
                out_counts[gi, k] = counts[k]
                out_drift[gi, k] = drift[k]
                out_bracket[gi, k] = bracket[k]
                out_qv[gi, k] = qv[k]
            gi += 1
        if gi >= G:
            break
        t = t_next
        target = np.random.random() * total
        if use_tree:
            e = min(_tree_find(tree, size, target), 2 * P - 1)
        else:
            e = 2 * P - 1
            acc = 0.0
            for i in range(2 * P):
                acc += up[i // 2] if i % 2 == 0 else down[i // 2]
                if target < acc:
                    e = i
                    break
        k = e // 2
        step = 1 if e % 2 == 0 else -1
        counts[k] += step
        n_events += 1
        if counts[k] <= 0 or counts[k] >= N:
            status = 1
            break
        dx = step / N
        qv[k] += dx * dx

        # rows whose input depends on x_k, plus k itself
        n_touched = 0
        full = n_events % 4096 == 0
        if full:
            for r in range(P):
                touched[r] = r
            n_touched = P
        else:
            for p in range(col_ptr[k], col_ptr[k + 1]):
                touched[n_touched] = col_rows[p]
                n_touched += 1
            touched[n_touched] = k
            n_touched += 1
        for q in range(n_touched):
            r = touched[q]
            drift[r] += (up[r] - down[r]) / N * (t - last[r])
            bracket[r] += (up[r] + down[r]) / (N * N) * (t - last[r])
            last[r] = t
        if full:
            # refresh inputs from scratch to stop round-off drift
            for r in range(P):
                acc = ext[r]
                for j in range(P):
                    acc += W[r, j] * counts[j] / N
                s[r] = acc
        else:
            for p in range(col_ptr[k], col_ptr[k + 1]):
                r = col_rows[p]
                s[r] += W[r, k] * dx
        for q in range(n_touched):
            r = touched[q]
            u_, d_, hit = _clamped_rates(counts[r], N, s[r], gamma, kappa, alt, clamp)
            clamped = clamped or hit
            up[r] = u_
            down[r] = d_
            if use_tree:
                _tree_update(tree, size, 2 * r, u_)
                _tree_update(tree, size, 2 * r + 1, d_)
    return out_counts, out_drift, out_bracket, out_qv, n_events, status, clamped


# ---------------------------------------------------------------------------
# Python drivers


def replica_seeds(seed: int, n: int) -> np.ndarray:
    """Independent 32-bit seeds for replicas ``0..n-1`` derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return np.array([c.generate_state(1, dtype=np.uint32)[0] for c in children], dtype=np.int64)


def _column_structure(W):
    csc = np.abs(W) > 0
    rows = [np.flatnonzero(csc[:, k]) for k in range(W.shape[1])]
    ptr = np.zeros(W.shape[1] + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(r) for r in rows])
    flat = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, dtype=np.int64)
    return ptr, flat


def _prepare(initial, W, F, N, ext, clamp, alternative):
    W = np.ascontiguousarray(W, dtype=float)
    P = W.shape[0]
    counts0 = np.rint(np.asarray(initial, dtype=float) * N).astype(np.int64)
    if np.any(np.abs(counts0 / N - np.asarray(initial, dtype=float)) > 1e-9):
        raise ValueError("initial state is not on the 1/N lattice")
    if np.any((counts0 <= 0) | (counts0 >= N)):
        raise BoundaryError("initial state must lie strictly inside (0, 1)")
    ext = _as_external(ext, P)
    if not alternative:
        ok, offenders = check_N0(W, F, N, ext)
        if not ok and not clamp:
            raise SimulationError(f"N={N} below N0; offending cells {offenders[:6]}; use clamp mode to proceed")
        if not ok:
            log.warning("N=%d below N0; exit rates set to zero and path flagged", N)
    ptr, rows = _column_structure(W)
    return W, counts0, ext, ptr, rows


def simulate(
    initial,
    W,
    F: GainFunction,
    N: int,
    T: float,
    seed: int,
    output_grid=None,
    ext=None,
    clamp: bool = False,
    alternative: bool = False,
) -> PathRecord:
    """Exact stochastic simulation of the chain up to ``T``.

    ``output_grid`` defaults to 101 uniform points on [0, T].  ``ext`` is a
    constant extra input added to every population (e.g. boundary terms).
    """
    W, counts0, ext, ptr, rows = _prepare(initial, W, F, N, ext, clamp, alternative)
    grid = np.linspace(0.0, T, 101) if output_grid is None else np.asarray(output_grid, dtype=float)
    return _run_one(counts0, N, W, ext, ptr, rows, F, alternative, clamp, grid, int(seed))


def _run_one(counts0, N, W, ext, ptr, rows, F, alternative, clamp, grid, seed):
    P = len(counts0)
    out = _ssa(counts0, int(N), W, ext, ptr, rows, float(F.gamma), float(F.kappa), bool(alternative),
               bool(clamp), grid, seed, P > LINEAR_SCAN_MAX_P)
    counts, drift, bracket, qv, n_events, status, clamped = out
    if status == 1:
        raise BoundaryError(f"path reached 0 or 1 after {n_events} events (seed {seed})")
    if status == 2:
        raise SimulationError("total jump rate overflowed")
    return PathRecord(
        times=grid,
        counts=counts,
        N=int(N),
        drift_integrals=drift,
        bracket=bracket,
        quadratic_variation=qv,
        covariation=np.diag(qv[-1]),
        n_events=int(n_events),
        clamped=bool(clamped),
        seed=seed,
    )


@dataclass
class Ensemble:
    """Replica paths stacked on a common grid: arrays have shape (R, G, P)."""

    times: np.ndarray
    N: int
    states: np.ndarray
    martingale: np.ndarray
    bracket: np.ndarray
    quadratic_variation: np.ndarray
    n_events: np.ndarray
    clamped: np.ndarray
    seed: int

    @property
    def replicas(self) -> int:
        return self.states.shape[0]

    def summary_csv(self, path) -> None:
        P = self.states.shape[2]
        cols = ["time"]
        for k in range(P):
            cols += [f"mean_x_{k+1}", f"std_x_{k+1}", f"var_M_{k+1}", f"mean_bracket_{k+1}"]
        blocks = [self.times]
        for k in range(P):
            blocks += [
                self.states[:, :, k].mean(0),
                self.states[:, :, k].std(0, ddof=1) if self.replicas > 1 else np.zeros_like(self.times),
                self.martingale[:, :, k].var(0, ddof=1) if self.replicas > 1 else np.zeros_like(self.times),
                self.bracket[:, :, k].mean(0),
            ]
        _write_csv(path, cols, np.column_stack(blocks))


def _chunk(args):
    counts0, N, W, ext, ptr, rows, gamma, kappa, alternative, clamp, grid, seeds = args
    F = GainFunction(gamma, kappa)
    return [_run_one(counts0, N, W, ext, ptr, rows, F, alternative, clamp, grid, int(s)) for s in seeds]


def default_workers() -> int:
    env = os.environ.get("SNFE_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def simulate_ensemble(
    initial,
    W,
    F: GainFunction,
    N: int,
    T: float,
    seed: int,
    replicas: int,
    output_grid=None,
    ext=None,
    clamp: bool = False,
    alternative: bool = False,
    workers: int | None = None,
) -> Ensemble:
    """Run ``replicas`` independent paths; replica ``r`` uses stream ``(seed, r)``.

    Results do not depend on ``workers``.
    """
    W, counts0, ext, ptr, rows = _prepare(initial, W, F, N, ext, clamp, alternative)
    grid = np.linspace(0.0, T, 101) if output_grid is None else np.asarray(output_grid, dtype=float)
    seeds = replica_seeds(seed, replicas)
    workers = default_workers() if workers is None else workers
    base = (counts0, N, W, ext, ptr, rows, F.gamma, F.kappa, alternative, clamp, grid)
    if workers <= 1 or replicas < 2 * workers:
        paths = _chunk(base + (seeds,))
    else:
        parts = np.array_split(seeds, workers * 4)
        with ProcessPoolExecutor(workers) as pool:
            paths = [p for chunk in pool.map(_chunk, [base + (c,) for c in parts]) for p in chunk]
    return Ensemble(
        times=grid,
        N=int(N),
        states=np.stack([p.states for p in paths]),
        martingale=np.stack([p.martingale for p in paths]),
        bracket=np.stack([p.bracket for p in paths]),
        quadratic_variation=np.stack([p.quadratic_variation for p in paths]),
        n_events=np.array([p.n_events for p in paths]),
        clamped=np.array([p.clamped for p in paths]),
        seed=int(seed),
    )
