"""Benchmark driver: assemble, precondition, solve with MINRES, report."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional

from .fem import Grid2D, space_operators
from .minres import minres_solve
from .precond import PrecondConfig, build_preconditioner
from .problems import T_FINAL, cd_problem, heat_problem
from .timesys import (TimeGrid, build_be_system, build_cn_system, recover_trajectories,
                      relative_errors)

__all__ = [
    "RunConfig",
    "RunRecord",
    "BenchReport",
    "MemoryCapExceeded",
    "MEMORY_CAP",
    "CSV_HEADER",
    "estimate_memory",
    "run_benchmark",
    "run_table",
    "sweep",
]

MEMORY_CAP = 4 * 2 ** 30
CSV_HEADER = ["scheme", "level", "beta", "epsilon", "n_x", "n_t", "dim", "iters",
              "seconds", "y_error", "p_error", "converged"]
# MINRES keeps about eight long vectors, the preconditioner a few more
_WORK_VECTORS = 16


class MemoryCapExceeded(MemoryError):
    """The run would need more memory than the configured cap."""


@dataclass(frozen=True)
class RunConfig:
    level: int
    scheme: str = "cn"
    beta: float = 1e-2
    problem: str = "heat"
    epsilon: float = 1.0
    rtol: float = 1e-6
    maxit: int = 200
    precond: PrecondConfig = field(default_factory=PrecondConfig)
    memory_cap: int = MEMORY_CAP

    def __post_init__(self):
        if self.scheme not in ("cn", "be"):
            raise ValueError(f"scheme must be 'cn' or 'be', got {self.scheme!r}")
        if self.problem not in ("heat", "cd"):
            raise ValueError(f"problem must be 'heat' or 'cd', got {self.problem!r}")
        if self.problem == "heat" and self.epsilon != 1.0:
            raise ValueError("the heat problem has epsilon = 1")
        if self.level < 2:
            raise ValueError("level must be >= 2")
        if self.beta <= 0 or self.epsilon <= 0:
            raise ValueError("beta and epsilon must be positive")

    @property
    def h(self) -> float:
        return 2.0 ** (1 - self.level)

    @property
    def tau(self) -> float:
        return self.h if self.scheme == "cn" else self.h ** 2

    @property
    def n_t(self) -> int:
        return TimeGrid.from_step(T_FINAL, self.tau).n_t

    @property
    def n_x(self) -> int:
        return (2 ** self.level - 1) ** 2

    @property
    def per_variable(self) -> int:
        return (self.n_t if self.scheme == "cn" else self.n_t + 1) * self.n_x

    @property
    def system_dim(self) -> int:
        return 2 * self.per_variable

    def sort_key(self):
        return (self.scheme, self.level, self.beta, self.epsilon)


@dataclass
class RunRecord:
    scheme: str
    level: int
    beta: float
    epsilon: float
    n_x: int
    n_t: int
    dim: int
    iters: Optional[int]
    seconds: Optional[float]
    y_error: Optional[float]
    p_error: Optional[float]
    converged: bool
    problem: str = "heat"
    status: str = "ok"
    residuals: List[float] = field(default_factory=list, repr=False)

    def sort_key(self):
        return (self.scheme, self.level, self.beta, self.epsilon)

    def row(self) -> list:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return repr(v)
            return str(v)
        return [fmt(getattr(self, k)) for k in CSV_HEADER]


@dataclass
class BenchReport:
    records: List[RunRecord] = field(default_factory=list)

    def sorted(self) -> "BenchReport":
        return BenchReport(sorted(self.records, key=RunRecord.sort_key))

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def to_json(self, with_history: bool = False) -> str:
        out = []
        for r in self.records:
            d = asdict(r)
            if not with_history:
                d.pop("residuals")
            out.append(d)
        return json.dumps(out, indent=2)

    def write(self, path) -> List[Path]:
        """Write CSV or JSON by suffix; any other suffix writes both."""
        path = Path(path)
        if path.suffix == ".csv":
            path.write_text(self.to_csv())
            return [path]
        if path.suffix == ".json":
            path.write_text(self.to_json())
            return [path]
        written = [path.with_suffix(".json"), path.with_suffix(".csv")]
        written[0].write_text(self.to_json())
        written[1].write_text(self.to_csv())
        return written


def estimate_memory(cfg: RunConfig) -> int:
    """Rough peak bytes: Krylov work vectors plus the spatial matrices."""
    vectors = _WORK_VECTORS * cfg.system_dim * 8
    # about 9 stored entries per row, a handful of matrices per level
    spatial = 12 * 9 * cfg.n_x * 12
    return vectors + spatial


def _problem(cfg: RunConfig):
    if cfg.problem == "heat":
        return heat_problem(cfg.beta)
    return cd_problem(cfg.beta, cfg.epsilon)


def run_benchmark(cfg: RunConfig) -> RunRecord:
    """Assemble and solve one configuration.

    Wall time covers preconditioner setup and the MINRES loop, not assembly.
    """
    need = estimate_memory(cfg)
    if need > cfg.memory_cap:
        raise MemoryCapExceeded(
            f"{cfg.scheme} l={cfg.level}: ~{need / 2**30:.1f} GiB needed, cap {cfg.memory_cap / 2**30:.1f} GiB")
    data = _problem(cfg)
    grid = Grid2D(cfg.level)
    ops = space_operators(grid, data.epsilon, data.wind)
    tg = TimeGrid.from_step(T_FINAL, cfg.tau)
    build = build_cn_system if cfg.scheme == "cn" else build_be_system
    system = build(ops, tg, cfg.beta, data)

    start = time.perf_counter()
    precond = build_preconditioner(system, cfg.precond)
    x, log = minres_solve(system.apply, precond, system.rhs, rtol=cfg.rtol, maxit=cfg.maxit)
    seconds = time.perf_counter() - start

    y_err = p_err = None
    if data.has_exact:
        y_err, p_err = relative_errors(system, recover_trajectories(system, x),
                                       data.y_exact, data.p_exact)
    return RunRecord(cfg.scheme, cfg.level, cfg.beta, data.epsilon, system.n_x, tg.n_t,
                     system.dim, log.iterations, seconds, y_err, p_err, log.converged,
                     problem=cfg.problem, residuals=list(map(float, log.residuals)))


def _refused(cfg: RunConfig, reason: str) -> RunRecord:
    return RunRecord(cfg.scheme, cfg.level, cfg.beta, cfg.epsilon, cfg.n_x, cfg.n_t,
                     cfg.system_dim, None, None, None, None, False,
                     problem=cfg.problem, status=reason)


def run_table(configs: Iterable[RunConfig], progress=None) -> BenchReport:
    """Run every configuration; records come back ordered by (scheme, l, beta, eps)."""
    records = []
    for cfg in sorted(configs, key=RunConfig.sort_key):
        try:
            rec = run_benchmark(cfg)
        except MemoryCapExceeded:
            rec = _refused(cfg, "out of memory")
        records.append(rec)
        if progress is not None:
            progress(rec)
    return BenchReport(records).sorted()


def sweep(levels, betas, epsilons=(1.0,), scheme="cn", problem="heat",
          **kwargs) -> List[RunConfig]:
    """Cartesian product of levels, betas and epsilons."""
    return [RunConfig(level=l, scheme=scheme, beta=b, problem=problem, epsilon=e, **kwargs)
            for l in levels for b in betas for e in epsilons]


def with_precond(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, precond=replace(cfg.precond, **changes))


def is_finite(v) -> bool:
    return v is not None and math.isfinite(v)
