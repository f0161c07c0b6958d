"""Block-diagonal preconditioners for the all-at-once optimality systems.

The Crank-Nicolson preconditioner is ``blkdiag(Ahat, Shat)`` with

    Ahat^{-1} = T1^{-T} (2/tau) blkdiag(Mc) T1^{-1}
    Shat^{-1} = (Lambda21 + Mhat)^{-T} A_D (Lambda21 + Mhat)^{-1}

where ``Mc`` is a fixed Chebyshev semi-iteration for the mass matrix and the
diagonal blocks of ``Lambda21 + Mhat`` are handled by geometric multigrid.
The backward Euler baseline uses the analogous matched Schur approximation
with the ``xi``-perturbed final block.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import Grid2D, SpaceOperators, prolongation, space_operators
from .sparse import BlockBandedOperator, DimensionError, block_tri_solve
from .timesys import SaddleSystem, apply_T

__all__ = [
    "ChebyshevMassSolver",
    "chebyshev_apply",
    "MultigridSolver",
    "level_hierarchy",
    "PrecondConfig",
    "CNPreconditioner",
    "BEPreconditioner",
    "build_preconditioner",
    "probe",
]

Q1_MASS_BOUNDS = (0.25, 2.25)


class ChebyshevMassSolver:
    """Fixed-step Chebyshev semi-iteration for ``M x = b``, Jacobi scaled.

    Starting from ``x0 = 0`` the result is ``q(D^{-1} M) D^{-1} b`` for a fixed
    polynomial ``q``, so the induced operator is linear, symmetric and (for
    bounds enclosing the spectrum of ``D^{-1}M``) positive definite.
    """

    def __init__(self, M: sp.spmatrix, steps: int = 20, eig_bounds=Q1_MASS_BOUNDS):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        lo, hi = eig_bounds
        if not 0 < lo <= hi:
            raise ValueError(f"invalid eigenvalue bounds {eig_bounds}")
        self.M = sp.csr_matrix(M)
        self.diag = self.M.diagonal()
        self.steps = int(steps)
        self.eig_bounds = (float(lo), float(hi))

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return chebyshev_apply(self, b)


def chebyshev_apply(s: ChebyshevMassSolver, b: np.ndarray) -> np.ndarray:
    """``steps`` Chebyshev iterations from zero; ``b`` may hold columns."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != s.n:
        raise DimensionError(f"chebyshev: rhs of length {b.shape[0]}, matrix {s.n}")
    dinv = 1.0 / s.diag if b.ndim == 1 else (1.0 / s.diag)[:, None]
    lo, hi = s.eig_bounds
    theta = 0.5 * (hi + lo)
    delta = 0.5 * (hi - lo)
    d = dinv * b / theta
    if delta == 0.0:
        # the spectrum is a single point: one scaled Jacobi step is exact
        return d
    sigma = theta / delta
    rho = 1.0 / sigma
    x = np.zeros_like(b)
    r = b.copy()
    for _ in range(s.steps):
        x += d
        r -= s.M @ d
        rho_next = 1.0 / (2.0 * sigma - rho)
        d = (rho_next * rho) * d + (2.0 * rho_next / delta) * (dinv * r)
        rho = rho_next
    return x


def level_hierarchy(ops: SpaceOperators, coarsest: int = 2) -> List[SpaceOperators]:
    """Re-discretized operators on levels ``coarsest..l`` (fine one reused)."""
    l = ops.grid.level
    coarsest = min(coarsest, l)
    out = [space_operators(Grid2D(k), ops.epsilon, ops.wind, stabilize=ops.stabilized)
           for k in range(coarsest, l)]
    out.append(ops)
    return out


class MultigridSolver:
    """Geometric V-cycles for ``G = c_L L + c_M M`` (or its transpose).

    Prolongation is bilinear interpolation and restriction its transpose, so
    that the cycle for ``G^T`` is exactly the adjoint of the cycle for ``G``.
    Damped Jacobi smoothing, dense LU on the coarsest level.
    """

    def __init__(self, operators: List[sp.csr_matrix], prolongations: List[sp.csr_matrix],
                 cycles: int = 3, sweeps: int = 2, damping: float = 2.0 / 3.0,
                 transpose: bool = False):
        if len(prolongations) != len(operators) - 1:
            raise ValueError("need one prolongation per level transition")
        self.operators = [sp.csr_matrix(G) for G in operators]
        self.prolongations = prolongations
        self.restrictions = [P.T.tocsr() for P in prolongations]
        self.cycles = int(cycles)
        self.sweeps = int(sweeps)
        self.damping = float(damping)
        self.transpose = transpose
        self._work = [G.T.tocsr() if transpose else G for G in self.operators]
        self._dinv = [1.0 / G.diagonal() for G in self.operators]
        self._coarse = sla.lu_factor(self.operators[0].toarray())

    @classmethod
    def for_shifted_operator(cls, hierarchy: List[SpaceOperators], c_L: float, c_M: float,
                             **kwargs) -> "MultigridSolver":
        ops = [(c_L * h.L + c_M * h.M).tocsr() for h in hierarchy]
        Ps = [prolongation(h.grid) for h in hierarchy[1:]]
        return cls(ops, Ps, **kwargs)

    @property
    def T(self) -> "MultigridSolver":
        out = object.__new__(MultigridSolver)
        out.__dict__.update(self.__dict__)
        out.transpose = not self.transpose
        out._work = [G.T.tocsr() if out.transpose else G for G in self.operators]
        return out

    @property
    def n(self) -> int:
        return self.operators[-1].shape[0]

    def _coarse_solve(self, b):
        return sla.lu_solve(self._coarse, b, trans=1 if self.transpose else 0)

    def _cycle(self, k: int, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        if k == 0:
            return self._coarse_solve(b)
        G, dinv, w = self._work[k], self._dinv[k], self.damping
        for _ in range(self.sweeps):
            x = x + w * dinv * (b - G @ x)
        r = self.restrictions[k - 1] @ (b - G @ x)
        e = self._cycle(k - 1, r, np.zeros_like(r))
        x = x + self.prolongations[k - 1] @ e
        for _ in range(self.sweeps):
            x = x + w * dinv * (b - G @ x)
        return x

    def vcycle(self, b: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.n,):
            raise DimensionError(f"vcycle: rhs shape {b.shape}, operator size {self.n}")
        x = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=np.float64)
        return self._cycle(len(self.operators) - 1, b, x)

    def __call__(self, b: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n)
        for _ in range(self.cycles):
            x = self.vcycle(b, x)
        return x


class _ExactBlock:
    """Sparse LU stand-in for a multigrid block solver."""

    def __init__(self, G: sp.spmatrix, transpose: bool = False):
        self._lu = G if isinstance(G, spla.SuperLU) else spla.splu(sp.csc_matrix(G))
        self.transpose = transpose

    @property
    def T(self) -> "_ExactBlock":
        return _ExactBlock(self._lu, not self.transpose)

    def __call__(self, b):
        return self._lu.solve(np.asarray(b, dtype=np.float64), trans="T" if self.transpose else "N")


@dataclass(frozen=True)
class PrecondConfig:
    cheb_steps: int = 20
    mg_cycles: int = 3
    mg_smoother_sweeps: int = 2
    mg_damping: float = 2.0 / 3.0
    xi: float = 1e-3
    exact_blocks: bool = False


def _block_solver(hierarchy, c_L, c_M, cfg: PrecondConfig):
    if cfg.exact_blocks:
        fine = hierarchy[-1]
        return _ExactBlock((c_L * fine.L + c_M * fine.M).tocsr())
    return MultigridSolver.for_shifted_operator(
        hierarchy, c_L, c_M, cycles=cfg.mg_cycles,
        sweeps=cfg.mg_smoother_sweeps, damping=cfg.mg_damping)


class CNPreconditioner:
    """``blkdiag(Ahat, Shat)^{-1}`` for the symmetrized Crank-Nicolson system."""

    scheme = "cn"

    def __init__(self, system: SaddleSystem, cfg: PrecondConfig = PrecondConfig(),
                 hierarchy: Optional[List[SpaceOperators]] = None):
        if system.scheme != "cn":
            raise ValueError("CNPreconditioner needs a Crank-Nicolson system")
        self.system = system
        self.cfg = cfg
        ops, tau, beta = system.ops, system.tau, system.beta
        self.n_t, self.n_x, self.tau = system.time.n_t, system.n_x, tau
        self.mass = ChebyshevMassSolver(ops.M, steps=cfg.cheb_steps)
        c = tau / (2.0 * np.sqrt(beta))
        blocks = system.extra["blocks"]
        self.G = (blocks.L_plus + c * ops.M).tocsr()
        self.H = (blocks.L_minus + c * ops.M).tocsr()
        # Lambda21 + Mhat: lower block-bidiagonal (G on the diagonal, H below)
        self.factor = BlockBandedOperator(self.n_t, self.n_x, [(0, self.G, 1.0), (-1, self.H, 1.0)],
                                          name="Lambda21+Mhat")
        self.factor_T = self.factor.T
        hierarchy = hierarchy or ([ops] if cfg.exact_blocks else level_hierarchy(ops))
        self.solve_G = _block_solver(hierarchy, 0.5 * tau, 1.0 + c, cfg)
        self.solve_GT = self.solve_G.T
        self.A_D_block = (0.5 * tau * ops.M).tocsr()

    @property
    def half(self) -> int:
        return self.n_t * self.n_x

    def _check(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.half,):
            raise DimensionError(f"expected a vector of length {self.half}, got {r.shape}")
        return r

    def apply_Ahat_inv(self, r: np.ndarray) -> np.ndarray:
        r = self._check(r)
        z = apply_T("T1inv", r, self.n_t, self.n_x).reshape(self.n_t, self.n_x)
        z = (2.0 / self.tau) * self.mass(z.T).T
        return apply_T("T2inv", z.ravel(), self.n_t, self.n_x)

    def apply_Shat_inv(self, r: np.ndarray) -> np.ndarray:
        r = self._check(r)
        w = block_tri_solve(self.factor, r, lambda i, b: self.solve_G(b), "lower")
        w = (self.A_D_block @ w.reshape(self.n_t, self.n_x).T).T.ravel()
        return block_tri_solve(self.factor_T, w, lambda i, b: self.solve_GT(b), "upper")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (2 * self.half,):
            raise DimensionError(f"expected a vector of length {2 * self.half}, got {r.shape}")
        return np.concatenate([self.apply_Ahat_inv(r[:self.half]),
                               self.apply_Shat_inv(r[self.half:])])


class BEPreconditioner:
    """Baseline preconditioner for the backward Euler system.

    ``Ahat^E = blkdiag(tau M, ..., tau M, xi tau M)`` and
    ``Shat^E = (B^E + Mhat^E) (Ahat^E)^{-1} (B^E + Mhat^E)^T``.
    """

    scheme = "be"

    def __init__(self, system: SaddleSystem, cfg: PrecondConfig = PrecondConfig(),
                 hierarchy: Optional[List[SpaceOperators]] = None):
        if system.scheme != "be":
            raise ValueError("BEPreconditioner needs a backward Euler system")
        if system.time.n_t < 1:
            raise ValueError("n_t >= 1 required")
        if not 0 < cfg.xi <= 1:
            raise ValueError(f"xi must lie in (0, 1], got {cfg.xi}")
        self.system = system
        self.cfg = cfg
        ops, tau, beta, xi = system.ops, system.tau, system.beta, cfg.xi
        self.n_b, self.n_x, self.tau, self.xi = system.n_blocks, system.n_x, tau, xi
        self.mass = ChebyshevMassSolver(ops.M, steps=cfg.cheb_steps)
        c = tau / np.sqrt(beta)
        self.scales = np.full(self.n_b, tau)
        self.scales[-1] = xi * tau
        self.factor = BlockBandedOperator(
            self.n_b, self.n_x, [(0, system.extra["LE"], 1.0), (-1, ops.M, -1.0), (0, ops.M, c)],
            [(self.n_b - 1, self.n_b - 1, ops.M, (np.sqrt(xi) - 1.0) * c)], name="BE+MhatE")
        self.factor_T = self.factor.T
        hierarchy = hierarchy or ([ops] if cfg.exact_blocks else level_hierarchy(ops))
        self.solve_G = _block_solver(hierarchy, tau, 1.0 + c, cfg)
        self.solve_G_last = _block_solver(hierarchy, tau, 1.0 + np.sqrt(xi) * c, cfg)
        self.solve_GT, self.solve_G_last_T = self.solve_G.T, self.solve_G_last.T
        self.M = ops.M

    @property
    def half(self) -> int:
        return self.n_b * self.n_x

    def _check(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.half,):
            raise DimensionError(f"expected a vector of length {self.half}, got {r.shape}")
        return r

    def apply_Ahat_inv(self, r: np.ndarray) -> np.ndarray:
        R = self._check(r).reshape(self.n_b, self.n_x)
        return (self.mass(R.T) / self.scales).T.ravel()

    def apply_Shat_inv(self, r: np.ndarray) -> np.ndarray:
        r = self._check(r)
        last = self.n_b - 1
        w = block_tri_solve(self.factor, r, lambda i, b: (self.solve_G_last if i == last
                                                           else self.solve_G)(b), "lower")
        w = ((self.M @ w.reshape(self.n_b, self.n_x).T) * self.scales).T.ravel()
        return block_tri_solve(self.factor_T, w, lambda i, b: (self.solve_G_last_T if i == last
                                                                else self.solve_GT)(b), "upper")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (2 * self.half,):
            raise DimensionError(f"expected a vector of length {2 * self.half}, got {r.shape}")
        return np.concatenate([self.apply_Ahat_inv(r[:self.half]),
                               self.apply_Shat_inv(r[self.half:])])


def build_preconditioner(system: SaddleSystem, cfg: PrecondConfig = PrecondConfig()):
    if system.scheme == "cn":
        return CNPreconditioner(system, cfg)
    return BEPreconditioner(system, cfg)


def probe(apply: Callable[[np.ndarray], np.ndarray], n: int, limit: int = 5000) -> np.ndarray:
    """Dense matrix of a linear operator by applying it to unit vectors."""
    if n > limit:
        raise MemoryError(f"probing an operator of size {n} exceeds {limit}")
    out = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = apply(e)
        e[j] = 0.0
    return out
