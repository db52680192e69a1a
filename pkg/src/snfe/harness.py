"""Certification experiments: law of large numbers, central limit theorem,
continuum limit, and the continuum error budget.

Each ``run_*`` returns a :class:`Report` whose pass/fail rules carry the
numbers they were decided on.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .jumpchain import check_N0, simulate_ensemble
from .meanfield import integrate
from .model import GainFunction, SynapticKernel, chain_weights
from .noise import CorrelationKernel, condition_i_bound, condition_i_norm
from .spde import CoupledSystem, SPDEConfig, level_domains, simulate_coupled
from .wave import WaveProfile, solve_profile

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentSpec",
    "Rule",
    "Report",
    "SlopeFit",
    "fit_loglog",
    "run_lln",
    "run_clt",
    "run_continuum",
    "error_budget",
    "MIN_REPLICAS",
]

MIN_REPLICAS = {"lln": 100, "clt": 1000, "continuum": 20, "wave": 0, "noise_checks": 0}


@dataclass
class ExperimentSpec:
    kind: str = "lln"
    gamma: float = 8.0
    kappa: float = 0.5
    kernel: str = "exponential"
    sigma: float = 1.0
    P: int = 3
    spacing: float = 1.0
    x0: tuple = (0.2, 0.4, 0.7)
    N_list: tuple = (50, 100, 200, 400, 800)
    m_list: tuple = (4, 8, 16, 32)
    T: float = 1.0
    replicas: int = 1000
    p: float = 2.0
    seed: int = 0
    output_points: int = 101
    # continuum experiment
    N_field: float = 100.0
    epsilon: float = 0.1
    m_ref: int = 128
    L_ref: int = 16
    dt: float = 0.0025
    delta: float | None = None
    L_w: float = 30.0
    h: float = 0.05
    terminal_fraction: float = 0.25
    # tolerances
    slope_range: tuple = (-0.65, -0.35)
    variance_rtol: float = 0.05
    ks_level: float = 0.01
    clamp: bool = False
    workers: int | None = None

    def __post_init__(self):
        if self.kind not in MIN_REPLICAS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        for name in ("N_list", "m_list"):
            seq = list(getattr(self, name))
            if any(b <= a for a, b in zip(seq, seq[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            setattr(self, name, tuple(seq))
        self.x0 = tuple(float(v) for v in np.atleast_1d(self.x0))

    def gain(self) -> GainFunction:
        return GainFunction(self.gamma, self.kappa)

    def synaptic(self) -> SynapticKernel:
        return SynapticKernel(self.kernel, self.sigma)

    def weights(self) -> np.ndarray:
        return chain_weights(self.synaptic(), self.P, self.spacing)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Rule:
    name: str
    passed: bool
    value: float | None = None
    threshold: str = ""
    note: str = ""


@dataclass
class Report:
    kind: str
    rules: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    inconclusive: bool = False

    @property
    def passed(self) -> bool:
        return bool(self.rules) and all(r.passed for r in self.rules) and not self.inconclusive

    def add(self, name, passed, value=None, threshold="", note=""):
        self.rules.append(Rule(name, bool(passed), None if value is None else float(value), threshold, note))

    def summary(self) -> str:
        lines = [f"{self.kind}: {'PASS' if self.passed else 'FAIL'}" + (" (inconclusive)" if self.inconclusive else "")]
        for r in self.rules:
            val = "" if r.value is None else f" value={r.value:.6g}"
            lines.append(f"  [{'pass' if r.passed else 'FAIL'}] {r.name}{val} {r.threshold} {r.note}".rstrip())
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "inconclusive": self.inconclusive,
            "rules": [asdict(r) for r in self.rules],
            "values": _jsonable(self.values),
            "provenance": self.provenance,
        }

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        written = []
        for name, (cols, rows) in self.tables.items():
            path = d / f"{self.kind}_{name}.csv"
            with path.open("w") as fh:
                fh.write(",".join(cols) + "\n")
                for row in rows:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
            written.append(path)
        (d / f"{self.kind}_summary.txt").write_text(self.summary() + "\n")
        (d / f"{self.kind}_report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        written += [d / f"{self.kind}_summary.txt", d / f"{self.kind}_report.json"]
        return written


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def provenance(spec: ExperimentSpec) -> dict:
    import numba
    import scipy

    return {
        "spec_digest": spec.digest(),
        "seed": spec.seed,
        "snfe": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


# -- statistics ----------------------------------------------------------------


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    jackknife_se: float


def fit_loglog(x, y, level: float = 0.95) -> SlopeFit:
    """Least-squares slope of ``log y`` on ``log x`` with a jackknife interval."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    n = len(lx)
    slope, intercept = np.polyfit(lx, ly, 1)
    if n < 3:
        return SlopeFit(float(slope), float(intercept), np.nan, np.nan, np.nan)
    loo = np.array([np.polyfit(np.delete(lx, i), np.delete(ly, i), 1)[0] for i in range(n)])
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    q = stats.t.ppf(0.5 + level / 2, n - 1)
    return SlopeFit(float(slope), float(intercept), float(slope - q * se), float(slope + q * se), se)


def _stderr(a, axis=0):
    a = np.asarray(a, dtype=float)
    n = a.shape[axis]
    return np.std(a, axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(np.delete(a.shape, axis))


# -- LLN -------------------------------------------------------------------------


def run_lln(spec: ExperimentSpec) -> Report:
    """Sup-norm distance of chain paths to the mean-field path along the N ladder."""
    report = Report("lln", provenance=provenance(spec))
    F, W = spec.gain(), spec.weights()
    x0 = np.asarray(spec.x0)
    if x0.size != spec.P:
        raise ValueError("x0 must have P entries")
    if spec.replicas < MIN_REPLICAS["lln"]:
        report.inconclusive = True
    ok, offenders = check_N0(W, F, spec.N_list[0])
    if not ok and not spec.clamp:
        raise ValueError(f"boundary condition fails at N={spec.N_list[0]}: {offenders}")
    grid = np.linspace(0.0, spec.T, spec.output_points)
    ode = integrate(x0, W, F, spec.T, output_grid=grid)
    errs, ses, rows = [], [], []
    for i, N in enumerate(spec.N_list):
        ens = simulate_ensemble(x0, W, F, N, spec.T, spec.seed + i, spec.replicas, grid, clamp=spec.clamp,
                                workers=spec.workers)
        dist = np.linalg.norm(ens.states - ode.states[None], axis=2).max(axis=1)
        errs.append(dist.mean())
        ses.append(_stderr(dist))
        rows.append((N, errs[-1], ses[-1], int(ens.clamped.sum())))
    errs, ses = np.array(errs), np.array(ses)
    report.tables["errors"] = (["N", "err", "stderr", "clamped_paths"], rows)
    report.values.update(N=list(spec.N_list), err=errs, stderr=ses)
    if np.all(errs == 0):
        report.add("degenerate balanced start", True, 0.0, note="err(N) = 0 for every N")
        return report
    fit = fit_loglog(spec.N_list, errs)
    report.values.update(slope=fit.slope, slope_ci=(fit.ci_low, fit.ci_high))
    lo, hi = spec.slope_range
    report.add("log-log slope", lo <= fit.slope <= hi, fit.slope, f"in [{lo}, {hi}]",
               f"jackknife CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")
    mono = all(errs[i + 1] <= errs[i] + ses[i] + ses[i + 1] for i in range(len(errs) - 1))
    report.add("err nonincreasing within error bars", mono)
    return report


# -- CLT -------------------------------------------------------------------------


def run_clt(spec: ExperimentSpec) -> Report:
    """Variance, normality and cross-covariance of ``sqrt(N) M(T)`` for each N."""
    report = Report("clt", provenance=provenance(spec))
    F, W = spec.gain(), spec.weights()
    x0 = np.asarray(spec.x0)
    if spec.replicas < MIN_REPLICAS["clt"]:
        report.inconclusive = True
    grid = np.linspace(0.0, spec.T, spec.output_points)
    ode = integrate(x0, W, F, spec.T, output_grid=grid)
    target = ode.bracket[-1]
    rows = []
    variances = {}
    for i, N in enumerate(spec.N_list):
        ens = simulate_ensemble(x0, W, F, N, spec.T, spec.seed + i, spec.replicas, grid, clamp=spec.clamp,
                                workers=spec.workers)
        Y = np.sqrt(N) * ens.martingale[:, -1, :]
        var = Y.var(axis=0, ddof=1)
        variances[N] = var
        R = Y.shape[0]
        var_se = np.sqrt(np.var((Y - Y.mean(0)) ** 2, axis=0, ddof=1) / R)
        for k in range(spec.P):
            if target[k] == 0 and np.all(Y[:, k] == 0):
                report.add(f"N={N} k={k} degenerate martingale", True, 0.0, note="sqrt(N) M = 0 identically")
                rows.append((N, k, 0.0, 0.0, 0.0, 1.0))
                continue
            rel = var[k] / target[k] - 1.0
            z = (Y[:, k] - Y[:, k].mean()) / Y[:, k].std(ddof=1)
            pval = stats.kstest(z, "norm").pvalue
            report.add(f"N={N} k={k} variance vs bracket quadrature", abs(rel) <= spec.variance_rtol, rel,
                       f"|rel| <= {spec.variance_rtol}", f"var={var[k]:.5g} target={target[k]:.5g}")
            report.add(f"N={N} k={k} KS normality", pval > spec.ks_level, pval, f"p > {spec.ks_level}")
            rows.append((N, k, var[k], var_se[k], target[k], pval))
        for k in range(spec.P):
            for l in range(k + 1, spec.P):
                prod = (Y[:, k] - Y[:, k].mean()) * (Y[:, l] - Y[:, l].mean())
                cov, se = prod.mean(), _stderr(prod)
                report.add(f"N={N} cov({k},{l}) ~ 0", abs(cov) <= 3 * se, cov, f"|cov| <= 3 se = {3 * se:.3g}")
    report.tables["variance"] = (["N", "k", "var_sqrtN_M", "stderr", "target", "ks_pvalue"], rows)
    report.values.update(target=target, variances={str(k): v for k, v in variances.items()})
    return report


# -- continuum ---------------------------------------------------------------------


def _profile(spec: ExperimentSpec) -> WaveProfile:
    return solve_profile(spec.gain(), spec.synaptic(), L_w=spec.L_w, h=spec.h)


def run_continuum(spec: ExperimentSpec, profile: WaveProfile | None = None, keep=None) -> Report:
    """Common-noise coupled simulation of the field and the network ladder.

    ``keep`` may be a dict that receives the raw :class:`CoupledResult` objects.
    """
    report = Report("continuum", provenance=provenance(spec))
    if spec.replicas < MIN_REPLICAS["continuum"]:
        report.inconclusive = True
    profile = _profile(spec) if profile is None else profile
    if not profile.speed > 1e-8:
        raise ValueError("continuum experiment needs a wave with c > 0")
    levels = level_domains(spec.m_list)
    qk = CorrelationKernel(spec.epsilon)
    cond_rows = []
    for m in spec.m_list:
        lit, cen, bnd = condition_i_norm(qk, m), condition_i_norm(qk, m, centred=True), condition_i_bound(qk, m)
        cond_rows.append((m, lit, cen, bnd))
    report.tables["condition_i"] = (["m", "sq_norm", "sq_norm_centred_cells", "bound"], cond_rows)
    lit = np.array([r[1] for r in cond_rows])
    report.add("condition (i) decreasing in m", bool(np.all(np.diff(lit) < 0)))

    cfg = SPDEConfig(N=spec.N_field, epsilon=spec.epsilon, m_ref=spec.m_ref, L_ref=spec.L_ref, dt=spec.dt,
                     delta=spec.delta)
    system = CoupledSystem(profile, cfg, levels)
    res = simulate_coupled(system, spec.T, spec.replicas, spec.seed, budget=True)
    det_sys = CoupledSystem(profile, SPDEConfig(N=None, epsilon=spec.epsilon, m_ref=spec.m_ref, L_ref=spec.L_ref,
                                                dt=spec.dt, delta=spec.delta), levels)
    det = simulate_coupled(det_sys, spec.T, 1, spec.seed)
    if keep is not None:
        keep.update(noisy=res, deterministic=det, system=system)

    E = res.sup_moment(spec.p)
    Em, se = E.mean(0), _stderr(E)
    Edet = det.sup_moment(spec.p)[0]
    cond_ii = res.budget["cond_ii"].max(axis=1).mean(0)
    rows = [(m, levels[m], Em[j], se[j], Edet[j], cond_ii[j]) for j, m in enumerate(spec.m_list)]
    report.tables["errors"] = (["m", "L_m", "E_sup_err_p", "stderr", "noise_off_err_p", "condition_ii_sq"], rows)
    report.values.update(E=Em, stderr=se, E_det=Edet, delta=system.delta, cond_ii=cond_ii)
    dec = all(Em[j] - Em[j + 1] > np.hypot(se[j], se[j + 1]) for j in range(len(Em) - 1))
    report.add("E_m strictly decreasing beyond 1 stderr", dec, note=" ".join(f"{v:.4g}" for v in Em))
    frac = Em[-1] / Em[0]
    report.add("terminal E_m fraction", frac <= spec.terminal_fraction, frac, f"<= {spec.terminal_fraction}")
    report.add("noise-off error decreasing", bool(np.all(np.diff(Edet) < 0)), note=" ".join(f"{v:.4g}" for v in Edet))
    report.add("condition (ii) decreasing along the ladder", bool(np.all(np.diff(cond_ii) < 0)))
    report.values["budget"] = _budget_table(spec, profile, res, cond_rows)
    return report


def _budget_table(spec, profile, res, cond_rows):
    h = profile.h
    ux = profile.spline(profile.x, 1)
    uxx = profile.spline(profile.x, 2)
    ux_sq, uxx_sq = float(np.sum(ux**2) * h), float(np.sum(uxx**2) * h)
    v_sup = res.v_sq.max(axis=1).mean()
    sig_sup = res.budget["sigma_sq"].max(axis=1).mean()
    out = {}
    for j, m in enumerate(spec.m_list):
        out[m] = {
            "inverse_m_sq": (v_sup + ux_sq + uxx_sq) / m**2,
            "tail": float(res.budget["tail"][:, :, j].max(axis=1).mean()),
            "condition_i": float(sig_sup * cond_rows[j][1]),
            "condition_ii": float(res.budget["cond_ii"][:, :, j].max(axis=1).mean()),
        }
    return out


def error_budget(spec: ExperimentSpec, profile: WaveProfile | None = None, continuum: Report | None = None) -> Report:
    """Terms of the remainder ``R(t, v, m)`` per level, next to the observed error."""
    continuum = run_continuum(spec, profile) if continuum is None else continuum
    budget = continuum.values["budget"]
    report = Report("budget", provenance=continuum.provenance)
    names = ["inverse_m_sq", "tail", "condition_i", "condition_ii"]
    rows = []
    E = continuum.values["E"]
    for j, m in enumerate(spec.m_list):
        terms = budget[m]
        dom = max(names, key=lambda k: terms[k])
        rows.append((m, *[terms[k] for k in names], dom, E[j]))
    report.tables["terms"] = (["m", *names, "dominant", "E_m"], rows)
    tails = [budget[m]["tail"] for m in spec.m_list]
    report.add("tail terms decrease with L^m", bool(np.all(np.diff(tails) <= 0)))
    # soft linkage: the error should not decay much slower than the dominant term
    first = rows[0]
    dom0 = max(first[1:5])
    soft = []
    for row in rows[1:]:
        ratio_E = row[-1] / first[-1]
        ratio_dom = max(row[1:5]) / dom0
        soft.append(ratio_E <= 10 * ratio_dom)
    report.values["soft_linkage"] = soft
    report.values["terms"] = budget
    return report
