"""Command-line front end.

Exit codes: 0 all pass rules hold, 1 a rule failed, 2 configuration error,
3 runtime error (partial outputs plus a failure manifest are kept).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, ConfigError, config_hash, load_config, schema, to_dict

log = logging.getLogger("snfe")

COMMANDS = [
    "solve-wave",
    "simulate-mc",
    "simulate-sde",
    "simulate-spde",
    "run-lln",
    "run-clt",
    "run-continuum",
    "noise-checks",
    "report",
]


def _versions():
    import numba
    import scipy

    return {"snfe": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _write_csv(path, columns, rows):
    with Path(path).open("w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    return Path(path)


def _spec(cfg: Config, kind: str):
    from .harness import ExperimentSpec

    common = dict(
        gamma=cfg.model.gamma, kappa=cfg.model.kappa, kernel=cfg.model.kernel, sigma=cfg.model.sigma,
        seed=cfg.harness.seed, L_w=cfg.wave.L_w, h=cfg.wave.h,
    )
    if kind in ("lln", "clt"):
        return ExperimentSpec(
            kind=kind, P=cfg.chain.P, spacing=cfg.chain.spacing, x0=tuple(cfg.chain.x0),
            N_list=tuple(cfg.chain.N_list), T=cfg.chain.T, replicas=cfg.chain.replicas,
            output_points=cfg.chain.output_points, slope_range=tuple(cfg.harness.slope_range),
            variance_rtol=cfg.harness.variance_rtol, ks_level=cfg.harness.ks_level, clamp=cfg.chain.clamp, **common,
        )
    return ExperimentSpec(
        kind=kind, m_list=tuple(cfg.spde.m_list), T=cfg.spde.T, replicas=cfg.spde.replicas, p=cfg.spde.p,
        N_field=cfg.spde.N, epsilon=cfg.noise.epsilon, m_ref=cfg.noise.m_ref, L_ref=cfg.spde.L_ref, dt=cfg.spde.dt,
        delta=cfg.spde.delta, terminal_fraction=cfg.spde.terminal_fraction, **common,
    )


def _profile(cfg: Config):
    from .model import GainFunction, SynapticKernel
    from .wave import solve_profile

    return solve_profile(
        GainFunction(cfg.model.gamma, cfg.model.kappa), SynapticKernel(cfg.model.kernel, cfg.model.sigma),
        L_w=cfg.wave.L_w, h=cfg.wave.h, tol=cfg.wave.tol,
    )


# -- commands -------------------------------------------------------------------


def cmd_solve_wave(cfg, out, args):
    prof = _profile(cfg)
    path = out / "wave_profile.csv"
    prof.to_csv(path)
    info = {"c": prof.speed, "residual": prof.residual_norm, "reflected": prof.reflected, "kappa_solved": prof.gain.kappa}
    (out / "wave_summary.txt").write_text(json.dumps(info, indent=2) + "\n")
    print(f"c = {prof.speed:.10g}  residual = {prof.residual_norm:.3e}  reflected = {prof.reflected}")
    return prof.residual_norm <= cfg.wave.tol, [path, out / "wave_summary.txt"]


def cmd_simulate_mc(cfg, out, args):
    from .jumpchain import simulate_ensemble
    from .model import GainFunction, SynapticKernel, chain_weights

    F = GainFunction(cfg.model.gamma, cfg.model.kappa)
    W = chain_weights(SynapticKernel(cfg.model.kernel, cfg.model.sigma), cfg.chain.P, cfg.chain.spacing)
    grid = np.linspace(0.0, cfg.chain.T, cfg.chain.output_points)
    replicas = args.replicas or cfg.chain.replicas
    ens = simulate_ensemble(cfg.chain.x0, W, F, cfg.chain.N, cfg.chain.T, cfg.harness.seed, replicas, grid,
                            clamp=cfg.chain.clamp, alternative=cfg.chain.alternative)
    P = cfg.chain.P
    first = out / "path_replica0.csv"
    cols = ["time"] + [f"x_{k+1}" for k in range(P)] + [f"M_{k+1}" for k in range(P)] + [f"bracket_{k+1}" for k in range(P)]
    _write_csv(first, cols, np.column_stack([grid, ens.states[0], ens.martingale[0], ens.bracket[0]]))
    summary = out / "ensemble_summary.csv"
    ens.summary_csv(summary)
    print(f"{replicas} replicas, mean events {ens.n_events.mean():.1f}, clamped paths {int(ens.clamped.sum())}")
    return True, [first, summary]


def cmd_simulate_sde(cfg, out, args):
    from .diffusion import simulate_activity_sde, simulate_linearized, simulate_voltage_sde
    from .model import GainFunction, SynapticKernel, build_weights, chain_weights

    F = GainFunction(cfg.model.gamma, cfg.model.kappa)
    K = SynapticKernel(cfg.model.kernel, cfg.model.sigma)
    seed = cfg.harness.seed
    grid = np.linspace(0.0, cfg.chain.T, cfg.chain.output_points)
    outputs = []
    if args.form in ("activity", "voltage"):
        W = chain_weights(K, cfg.chain.P, cfg.chain.spacing)
        a = simulate_activity_sde(cfg.chain.x0, W, F, cfg.chain.N, cfg.chain.T, cfg.chain.sde_dt, seed, grid)
        u = simulate_voltage_sde(F.inverse(np.asarray(cfg.chain.x0)), W, F, cfg.chain.N, cfg.chain.T,
                                 cfg.chain.sde_dt, seed, grid)
        a.to_csv(out / "activity_path.csv")
        u.to_csv(out / "voltage_path.csv")
        outputs += [out / "activity_path.csv", out / "voltage_path.csv"]
        gap = float(np.max(np.abs(F.inverse(a.states) - u.states)))
        print(f"sup |F^-1(a) - u| = {gap:.3e}  (flagged: {a.flagged})")
    else:
        prof = _profile(cfg)
        m = cfg.spde.m_list[0]
        L = cfg.spde.L_rule.get(m, 10)
        weights = build_weights(K, m, L)
        path = simulate_linearized(prof, weights, cfg.chain.N, cfg.chain.T, cfg.chain.sde_dt, seed, grid)
        path.to_csv(out / "linearized_path.csv")
        outputs.append(out / "linearized_path.csv")
    return True, outputs


def cmd_simulate_spde(cfg, out, args):
    from .spde import CoupledSystem, SPDEConfig, level_domains, simulate_coupled

    prof = _profile(cfg)
    levels = level_domains(cfg.spde.m_list, cfg.spde.L_rule)
    sc = SPDEConfig(N=cfg.spde.N, epsilon=cfg.noise.epsilon, m_ref=cfg.noise.m_ref, L_ref=cfg.spde.L_ref,
                    delta=cfg.spde.delta, dt=cfg.spde.dt, dt_max=cfg.spde.dt_max, noise=not args.noise_off)
    system = CoupledSystem(prof, sc, levels)
    replicas = args.replicas or cfg.spde.replicas
    res = simulate_coupled(system, cfg.spde.T, replicas, cfg.harness.seed, snapshots=True)
    ms = res.ms
    err = out / "level_errors.csv"
    mean = res.dist_sq.mean(axis=0)
    _write_csv(err, ["time"] + [f"err_sq_m{m}" for m in ms], np.column_stack([res.times, mean]))
    snaps = res.budget["snapshots"]
    times = sorted(snaps)
    picks = [times[0], times[len(times) // 2], times[-1]]
    outputs = [err]
    for t in picks:
        u, _ = snaps[t]
        utw = system.ref.wave(t)
        p = out / f"field_t{t:.4f}.csv"
        _write_csv(p, ["x", "u", "v"], np.column_stack([system.ref.x, u, u - utw]))
        outputs.append(p)
    print(f"delta = {system.delta:.4g}; mean sup ||u^m - u||^2: " +
          ", ".join(f"m={m}: {v:.4g}" for m, v in zip(ms, res.sup_moment(2.0).mean(0))))
    return True, outputs


def _run_report(report, out, plot=None):
    paths = report.write(out)
    if plot is not None:
        paths.append(plot())
    print(report.summary())
    return report.passed, paths


def cmd_run_lln(cfg, out, args):
    from .harness import run_lln
    from .svg import loglog_svg

    report = run_lln(_spec(cfg, "lln"))
    v = report.values
    plot = lambda: loglog_svg(out / "lln_errors.svg", {"E sup |X^N - X|": (v["N"], v["err"])},
                              "LLN error", "N", "error")
    return _run_report(report, out, plot if "svg" in cfg.output.formats else None)


def cmd_run_clt(cfg, out, args):
    from .harness import run_clt

    return _run_report(run_clt(_spec(cfg, "clt")), out)


def cmd_run_continuum(cfg, out, args):
    from .harness import error_budget, run_continuum
    from .svg import loglog_svg

    spec = _spec(cfg, "continuum")
    report = run_continuum(spec)
    budget = error_budget(spec, continuum=report)
    paths = budget.write(out)
    print(budget.summary())
    v = report.values
    plot = lambda: loglog_svg(out / "continuum_errors.svg",
                              {"noisy E_m": (spec.m_list, v["E"]), "noise-off": (spec.m_list, v["E_det"])},
                              "continuum limit", "m", "E sup ||u^m - u||^p")
    ok, more = _run_report(report, out, plot if "svg" in cfg.output.formats else None)
    return ok, paths + more


def cmd_noise_checks(cfg, out, args):
    from .harness import Report
    from .noise import CorrelationKernel, build_covariance, condition_i_bound, condition_i_norm, sample_increments

    eps = cfg.noise.epsilon
    q = CorrelationKernel(eps)
    report = Report("noise")
    rng = np.random.default_rng(cfg.harness.seed)
    rows = []
    for m in cfg.spde.m_list:
        L = cfg.spde.L_rule.get(m, 6)
        grid = build_covariance(q, m, min(L, 2))
        x = sample_increments(grid, 1.0, rng, size=cfg.noise.draws)
        n = x.shape[0]
        emp = x.T @ x / n
        prod_var = np.einsum("ri,rj->ij", x**2, x**2) / n - emp**2
        se = np.sqrt(np.maximum(prod_var, 0) / n)
        z = np.abs(emp - grid.covariance) / np.where(se > 0, se, 1.0)
        # a 3-stderr band over many entries: require the fraction outside to stay at the Gaussian rate
        frac = float(np.mean(z > 3))
        report.add(f"m={m} covariance within 3 stderr", frac <= 0.01, frac, "outside fraction <= 0.01",
                   f"max z = {z.max():.2f} over {z.size} entries")
        lit, bnd = condition_i_norm(q, m), condition_i_bound(q, m)
        report.add(f"m={m} condition (i) squared norm <= 1/(4 eps^2 m)", lit <= bnd, lit, f"<= {bnd:.4g}")
        rows.append((m, frac, lit, condition_i_norm(q, m, centred=True), bnd))
    small = [m for m in range(1, 64) if m < 1 / (4 * eps)]
    for m in small:
        C = build_covariance(q, m, 2).covariance
        report.add(f"m={m} independent cells", bool(np.all(C[~np.eye(len(C), dtype=bool)] == 0)))
    report.tables["checks"] = (["m", "cov_outside_3se", "cond_i", "cond_i_centred", "bound"], rows)
    return _run_report(report, out)


def cmd_report(cfg, out, args):
    from .svg import loglog_svg

    root = Path(cfg.output.directory)
    reports = sorted(root.glob("*/*_report.json"))
    lines, ok = [], True
    for p in reports:
        data = json.loads(p.read_text())
        ok &= bool(data["passed"])
        lines.append(f"{p.parent.name}/{data['kind']}: {'PASS' if data['passed'] else 'FAIL'}")
        for r in data["rules"]:
            lines.append(f"    [{'pass' if r['passed'] else 'FAIL'}] {r['name']}")
        vals = data.get("values", {})
        if data["kind"] == "lln" and "N" in vals:
            loglog_svg(out / "lln_errors.svg", {"err": (vals["N"], vals["err"])}, "LLN error", "N", "error")
        if data["kind"] == "continuum" and "E" in vals:
            ms = [r[0] for r in _read_csv_rows(p.parent / "continuum_errors.csv")]
            loglog_svg(out / "continuum_errors.svg", {"E_m": (ms, vals["E"]), "noise-off": (ms, vals["E_det"])},
                       "continuum limit", "m", "error")
    if not reports:
        lines.append(f"no reports found under {root}")
        ok = False
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return ok, [out / "summary.txt"] + sorted(out.glob("*.svg"))


def _read_csv_rows(path):
    rows = Path(path).read_text().splitlines()[1:]
    return [tuple(float(v) for v in r.split(",")) for r in rows if r]


HANDLERS = {
    "solve-wave": cmd_solve_wave,
    "simulate-mc": cmd_simulate_mc,
    "simulate-sde": cmd_simulate_sde,
    "simulate-spde": cmd_simulate_spde,
    "run-lln": cmd_run_lln,
    "run-clt": cmd_run_clt,
    "run-continuum": cmd_run_continuum,
    "noise-checks": cmd_noise_checks,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snfe", description=__doc__.splitlines()[0])
    p.add_argument("--config", "-c", help="YAML configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. chain.N=800 (repeatable; last repeat of a key wins)")
    p.add_argument("--out", help="shortcut for --set output.directory=...")
    p.add_argument("--print-schema", action="store_true", help="print the configuration schema and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name in ("simulate-mc", "simulate-spde"):
            sp.add_argument("--replicas", type=int, default=None)
        if name == "simulate-sde":
            sp.add_argument("--form", choices=["activity", "voltage", "linearized"], default="activity")
        if name == "simulate-spde":
            sp.add_argument("--noise-off", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.print_schema:
        print(json.dumps(schema(), indent=2, default=str))
        return 0
    if not args.command:
        parser.print_help()
        return 2
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.directory={args.out}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.output.directory) / args.command
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "config_hash": config_hash(cfg),
        "seed": cfg.harness.seed,
        "versions": _versions(),
        "config": to_dict(cfg),
    }
    try:
        passed, outputs = HANDLERS[args.command](cfg, out, args)
    except Exception as exc:  # runtime failure: keep partial outputs and record why
        manifest.update(status="error", error=f"{type(exc).__name__}: {exc}", traceback=traceback.format_exc(),
                        outputs=sorted(str(p.name) for p in out.iterdir() if p.name != "manifest.json"))
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    manifest.update(status="pass" if passed else "fail", outputs=[str(Path(p).name) for p in outputs])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
