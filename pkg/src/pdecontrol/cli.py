"""Command-line entry point: benchmarks, table sweeps, eigenvalue checks."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .bench import BenchReport, MemoryCapExceeded, RunConfig, run_table, sweep
from .fem import Grid2D, WindField, space_operators
from .precond import PrecondConfig
from .problems import T_FINAL
from .timesys import TimeGrid
from .verify import check_schur_bounds, emit_eig_scatter

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

_PRECOND_KEYS = [f.name for f in fields(PrecondConfig) if f.name != "exact_blocks"]


def _add_precond_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("preconditioner")
    g.add_argument("--cheb-steps", type=int)
    g.add_argument("--mg-cycles", type=int)
    g.add_argument("--mg-smoother-sweeps", type=int)
    g.add_argument("--mg-damping", type=float)
    g.add_argument("--xi", type=float)


def _precond_from(ns) -> PrecondConfig:
    given = {k: getattr(ns, k) for k in _PRECOND_KEYS if getattr(ns, k, None) is not None}
    return PrecondConfig(**given)


def _emit(report: BenchReport, out):
    if out is None:
        sys.stdout.write(report.to_json() + "\n")
    else:
        for p in report.write(out):
            print(f"wrote {p}", file=sys.stderr)


def _progress(rec):
    it = "-" if rec.iters is None else rec.iters
    print(f"{rec.scheme} l={rec.level} beta={rec.beta:g} eps={rec.epsilon:g}: "
          f"iters={it} converged={rec.converged} ({rec.status})", file=sys.stderr)


def _single(cfg: RunConfig, out) -> int:
    report = run_table([cfg], progress=_progress)
    _emit(report, out)
    return EXIT_OK if report.all_converged else EXIT_FAILED


def cmd_heat(ns) -> int:
    cfg = RunConfig(level=ns.level, scheme=ns.scheme, beta=ns.beta, rtol=ns.rtol,
                    maxit=ns.maxit, precond=_precond_from(ns))
    return _single(cfg, ns.out)


def cmd_cd(ns) -> int:
    cfg = RunConfig(level=ns.level, scheme=ns.scheme, beta=ns.beta, problem="cd",
                    epsilon=ns.epsilon, rtol=ns.rtol, maxit=ns.maxit, precond=_precond_from(ns))
    return _single(cfg, ns.out)


def configs_from_json(spec: dict) -> list:
    """Sweep definition: ``runs`` (explicit list) and/or ``sweep`` (grid)."""
    precond = PrecondConfig(**spec.get("precond", {}))
    common = {k: spec[k] for k in ("rtol", "maxit") if k in spec}
    configs = []
    for run in spec.get("runs", []):
        run = dict(run)
        pc = PrecondConfig(**{**spec.get("precond", {}), **run.pop("precond", {})})
        configs.append(RunConfig(**{**common, **run, "precond": pc}))
    if "sweep" in spec:
        s = spec["sweep"]
        configs += sweep(s["levels"], s["betas"], s.get("epsilons", [1.0]),
                         scheme=s.get("scheme", "cn"), problem=s.get("problem", "heat"),
                         precond=precond, **common)
    return configs


def cmd_table(ns) -> int:
    spec = json.loads(Path(ns.config).read_text())
    configs = configs_from_json(spec)
    report = run_table(configs, progress=_progress)
    _emit(report, ns.out or spec.get("out"))
    return EXIT_OK if report.all_converged else EXIT_FAILED


def cmd_eig(ns) -> int:
    grid = Grid2D(ns.level)
    wind = WindField.recirculating() if ns.wind == "recirculating" else None
    ops = space_operators(grid, ns.epsilon, wind)
    tg = TimeGrid.from_step(T_FINAL if ns.t_final is None else ns.t_final, grid.h)
    results, ok = [], True
    for beta in ns.beta_list:
        chk = check_schur_bounds(ops, tg, beta)
        results.append((beta, chk.eigenvalues))
        ok &= chk.passed
        print(f"beta={beta:g}: lambda in [{chk.lam_min:.12f}, {chk.lam_max:.12f}] "
              f"{'PASS' if chk.passed else 'FAIL'}")
    emit_eig_scatter(results, ns.out)
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdecontrol",
                                 description="All-at-once optimal control solver benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("heat-bench", help="heat control benchmark with analytic solution")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--scheme", choices=["cn", "be"], default="cn")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--maxit", type=int, default=200)
    p.add_argument("--out")
    _add_precond_args(p)
    p.set_defaults(func=cmd_heat)

    p = sub.add_parser("cd-bench", help="convection-diffusion control benchmark")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--scheme", choices=["cn", "be"], default="cn")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--maxit", type=int, default=200)
    p.add_argument("--out")
    _add_precond_args(p)
    p.set_defaults(func=cmd_cd)

    p = sub.add_parser("table", help="run a JSON sweep definition")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("eig-verify", help="dense Schur-complement eigenvalue check")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--beta-list", type=float, nargs="+", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--wind", choices=["zero", "recirculating"], default="recirculating")
    p.add_argument("--t-final", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eig)
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except (ValueError, MemoryCapExceeded, MemoryError, FileNotFoundError,
            json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
