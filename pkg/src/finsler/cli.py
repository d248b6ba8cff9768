"""Command-line entry point: ``finsler {solve,sweep,verify-norms,exact,report}``.

Exit codes: 0 ok, 2 configuration error, 3 mesh error, 4 solver error,
5 a non-experimental check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .anisotropy import AnisotropicNorm, NormError
from .asymptotics import CSV_COLUMNS, mesh_kwargs_for, phi_N, regime, run_sweep
from .config import ExperimentConfig, load_config
from .geometry import ConfigError
from .mesh import MeshError, generate_mesh
from .output import read_csv, write_csv, write_json, write_vtk
from .solver import SolverError, extract_fluxes, solve
from .verify import annulus_benchmark, builtin_norm_family, norm_identity_suite, run_solve_checks

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4, 5

log = logging.getLogger("finsler")


def _setup_logging():
    level = os.environ.get("FINSLER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _out_dir(args, cfg: ExperimentConfig | None) -> Path:
    out = Path(args.out if args.out is not None else (cfg.out if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.solver = {**cfg.solver, "seed": args.seed}
    return cfg


# -- subcommands --------------------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = _load(args)
    if len(cfg.deltas) != 1:
        raise ConfigError("solve needs a single delta; use sweep for a delta list")
    config = cfg.base_config()
    mesh_kw, _ = cfg.mesh_options()
    mesh = generate_mesh(config, **mesh_kwargs_for(config.delta, mesh_kw))
    res = solve(config, mesh, cfg.solver_options())
    out = _out_dir(args, cfg)
    neck = None
    summary = res.summary()
    summary.update({"delta": config.delta, "p": config.p, "norm": cfg.norm, "w": cfg.w,
                    "h_far": mesh.info.get("h_far"), "h_neck": mesh.info.get("h_neck")})
    if not config.phi.is_constant:
        neck = config.neck(cfg.w)
        fl = extract_fluxes(res, neck)
        summary.update({"I_delta_w": fl["I_w"], "I_out": fl["I_out"]})
    report = run_solve_checks(res, neck, cfg.kappa / cfg.w**2)
    write_json(summary, out / "summary.json")
    write_json(report.to_dict(), out / "checks.json")
    write_vtk(mesh, out / "solution.vtk", point_data={"u": res.u},
              cell_data={"H_grad": res.H_grad, "grad_u": res.grad})
    print(f"U1={res.U1:.10g} U2={res.U2:.10g} flux_R1={summary['flux_R1']:.3e} "
          f"flux_R2={summary['flux_R2']:.3e} max_H_grad={res.max_H_grad:.6g}")
    return _check_exit(report.failures())


def cmd_sweep(args) -> int:
    cfg = _load(args)
    base = cfg.base_config()
    mesh_kw, mesh_check = cfg.mesh_options()
    rep = run_sweep(base, cfg.deltas, w=cfg.w, mesh=mesh_kw, solver_opts=cfg.solver_options(),
                    jobs=max(1, args.jobs), mesh_check=mesh_check, kappa=cfg.kappa, tau=cfg.tau)
    out = _out_dir(args, cfg)
    blank = () if args.timings else ("wall_s",)
    write_csv(rep.rows, CSV_COLUMNS, out / "sweep.csv", blank=blank)
    write_json({"config": cfg.to_dict(), "w": cfg.w, "fit": rep.fit, "R0": rep.R0, "errors": rep.errors},
               out / "fit.json")
    failures = [c for c in rep.checks if c["status"] == "fail" and not c["experimental"]]
    write_json({"passed": not failures, "checks": rep.checks}, out / "checks.json")
    if "refused" in rep.fit:
        print(f"fit refused: {rep.fit['refused']}")
    else:
        print(f"slope={rep.fit['max_grad']['slope']:.4f} regime={rep.fit['regime']} "
              f"R0={rep.R0.get('value', float('nan')):.6g}")
    if rep.errors:
        for e in rep.errors:
            print(f"delta={e['delta']}: {e['error']}", file=sys.stderr)
        return EXIT_SOLVER
    return _check_exit(failures)


def cmd_verify_norms(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.config is not None:
        cfg = _load(args)
        opts = dict(cfg.verify_norms)
        norms = {cfg.norm["norm"]: cfg.norm_object()}
    else:
        opts = {}
        norms = builtin_norm_family(seed)
    tol = opts.get("tol", 1e-10)
    if "q_values" in opts or "n_quadratic" in opts:
        norms.update(builtin_norm_family(seed, opts.get("q_values", ()), opts.get("n_quadratic", 0)))
    report = norm_identity_suite(norms, opts.get("n_points", 10_000), seed, tol)
    out = _out_dir(args, None if args.config is None else cfg)
    write_json(report.to_dict(), out / "norms.json")
    for e in report.entries:
        print(f"{e.status.upper():4s} {e.name:40s} {e.measured:.2e}")
    return _check_exit(report.failures())


def cmd_exact(args) -> int:
    cfg = _load(args) if args.config is not None else ExperimentConfig()
    ex = dict(cfg.exact)
    norm = AnisotropicNorm.from_spec({k: ex.pop(k) for k in ("norm", "q", "A") if k in ex}
                                     or cfg.norm)
    p = float(ex.pop("p", cfg.p))
    if not 1.0 < p <= norm.dim:
        raise ConfigError(f"p must satisfy p in (1, N] with N={norm.dim}, got p={p}")
    min_order = 1.8 if p >= 2 else 1.3
    bench = annulus_benchmark(norm, p, opts=cfg.solver_options(), **ex)
    ok_order = bench["order_fit"] >= min_order and all(np.diff(bench["linf_error"]) < 0)
    ok_flux = bench["flux_rel_error"][-1] <= 0.02
    rows = [{"level": k, "h": h, "linf_error": e, "flux_rel_error": f}
            for k, (h, e, f) in enumerate(zip(bench["h"], bench["linf_error"], bench["flux_rel_error"]))]
    out = _out_dir(args, cfg)
    write_csv(rows, ["level", "h", "linf_error", "flux_rel_error"], out / "exact.csv")
    summary = {k: v for k, v in bench.items() if k != "results"}
    summary.update({"min_order": min_order, "order_ok": bool(ok_order), "flux_ok": bool(ok_flux)})
    write_json(summary, out / "exact.json")
    print(f"order={bench['order_fit']:.3f} (>= {min_order}) flux_err={bench['flux_rel_error'][-1]:.2e}")
    return EXIT_OK if ok_order and ok_flux else EXIT_CHECK


def cmd_report(args) -> int:
    """Summarise an output directory and emit plot-ready rate data."""
    out = Path(args.out if args.out is not None else "out")
    sweep = out / "sweep.csv"
    if not sweep.exists():
        raise ConfigError(f"no sweep.csv in {out}")
    rows = read_csv(sweep)
    d = np.array([r["delta"] for r in rows])
    g = np.array([r["max_Hgrad"] for r in rows])
    fit = json.loads((out / "fit.json").read_text()) if (out / "fit.json").exists() else {}
    p = float(rows[0]["p"]) if rows else 2.0
    plot = [{"delta": di, "log_delta": float(np.log(di)), "max_Hgrad": gi,
             "max_Hgrad_pm1": gi ** (p - 1.0), "Phi_N": float(phi_N(di, 2, p)) if di < 1 else float("nan"),
             "max_Hgrad_outside_neck": r["max_Hgrad_outside_neck"], "gap": r["gap"]}
            for di, gi, r in zip(d, g, rows)]
    write_csv(plot, list(plot[0]) if plot else ["delta"], out / "rates.csv")
    checks = json.loads((out / "checks.json").read_text()) if (out / "checks.json").exists() else {"checks": []}
    failures = [c for c in checks["checks"] if c["status"] == "fail" and not c.get("experimental")]
    f = fit.get("fit", {})
    print(f"{len(rows)} sweep rows, regime={regime(2, p)}")
    if "max_grad" in f:
        print(f"slope={f['max_grad']['slope']:.4f} ci95={f['max_grad']['slope_ci95']}")
    elif "refused" in f:
        print(f"fit refused: {f['refused']}")
    print(f"checks: {len(checks['checks']) - len(failures)} pass, {len(failures)} fail")
    return _check_exit(failures)


def _check_exit(failures) -> int:
    for f in failures:
        name = f["name"] if isinstance(f, dict) else f.name
        print(f"check failed: {name}", file=sys.stderr)
    return EXIT_CHECK if failures else EXIT_OK


# -- entry point --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--out", help="output directory (default: config 'out' or ./out)")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    common.add_argument("--seed", type=int, help="seed for randomized suites and random initial guesses")
    common.add_argument("--timings", action="store_true", help="fill the wall_s column of sweep.csv")
    ap = argparse.ArgumentParser(prog="finsler", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", cmd_solve), ("sweep", cmd_sweep), ("verify-norms", cmd_verify_norms),
                     ("exact", cmd_exact), ("report", cmd_report)):
        sp = sub.add_parser(name, parents=[common], help=fn.__doc__ and fn.__doc__.splitlines()[0])
        sp.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, NormError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshError as e:
        print(f"mesh error: {e}", file=sys.stderr)
        return EXIT_MESH
    except SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
