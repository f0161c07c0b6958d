"""All-at-once optimality systems in time.

Crank-Nicolson unknowns are ``y = (y^1, ..., y^nt)`` and
``p = (p^0, ..., p^{nt-1})``: the initial state and the final adjoint are
known and eliminated.  The raw Crank-Nicolson matrix is not symmetric; it is
multiplied on the left by ``blkdiag(T1, T2)`` (``T1`` upper bidiagonal of
identities, ``T2 = T1^T``) which yields the symmetric saddle-point matrix
``[[A, B^T], [B, -C]]``.

Backward Euler keeps all ``nt + 1`` time levels of both variables and is
symmetric as assembled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import SpaceOperators, assemble_load
from .sparse import BlockBandedOperator, DimensionError, materialize, to_sparse

__all__ = [
    "TimeGrid",
    "CNBlocks",
    "SaddleSystem",
    "Trajectories",
    "cn_blocks",
    "t_operator",
    "apply_T",
    "cn_raw_operators",
    "cn_operators",
    "be_operators",
    "build_cn_system",
    "build_be_system",
    "recover_trajectories",
    "relative_errors",
]


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    n_t: int

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")

    @property
    def tau(self) -> float:
        return self.t_final / self.n_t

    @property
    def nodes(self) -> np.ndarray:
        return self.tau * np.arange(self.n_t + 1)

    @classmethod
    def from_step(cls, t_final: float, tau: float) -> "TimeGrid":
        n = t_final / tau
        n_int = int(round(n))
        if n_int < 1 or abs(n - n_int) > 1e-9 * n:
            raise ValueError(f"t_final/tau = {n} is not an integer")
        return cls(t_final, n_int)


@dataclass(frozen=True)
class CNBlocks:
    """``L+ = tau/2 L + M``, ``L- = tau/2 L - M``, ``Mbar``, ``Mbar_beta``."""

    tau: float
    beta: float
    M: sp.csr_matrix
    L: sp.csr_matrix
    L_plus: sp.csr_matrix
    L_minus: sp.csr_matrix

    @property
    def M_bar(self) -> sp.csr_matrix:
        return (0.5 * self.tau) * self.M

    @property
    def M_bar_beta(self) -> sp.csr_matrix:
        return (0.5 * self.tau / self.beta) * self.M


def cn_blocks(ops: SpaceOperators, tau: float, beta: float) -> CNBlocks:
    half_L = (0.5 * tau) * ops.L
    return CNBlocks(tau, beta, ops.M, ops.L,
                    (half_L + ops.M).tocsr(), (half_L - ops.M).tocsr())


def t_operator(which: str, n_t: int, n_x: int) -> BlockBandedOperator:
    """``T1`` (identities on the diagonal and superdiagonal) or ``T2 = T1^T``."""
    eye = sp.identity(n_x, format="csr")
    if which == "T1":
        return BlockBandedOperator(n_t, n_x, [(0, eye, 1.0), (1, eye, 1.0)], name="T1")
    if which == "T2":
        return BlockBandedOperator(n_t, n_x, [(0, eye, 1.0), (-1, eye, 1.0)], name="T2")
    raise ValueError(f"unknown transform {which!r}")


def apply_T(which: str, x: np.ndarray, n_t: int, n_x: int) -> np.ndarray:
    """Apply ``T1``, ``T2``, their transposes or inverses (``"T1inv"`` etc.)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n_t * n_x,):
        raise DimensionError(f"expected length {n_t * n_x}, got {x.shape}")
    alias = {"T1T": "T2", "T2T": "T1", "T1Tinv": "T2inv", "T2Tinv": "T1inv",
             "T1invT": "T2inv", "T2invT": "T1inv"}
    which = alias.get(which, which)
    X = x.reshape(n_t, n_x)
    Y = X.copy()
    if which == "T1":
        Y[:-1] += X[1:]
    elif which == "T2":
        Y[1:] += X[:-1]
    elif which == "T1inv":
        for i in range(n_t - 2, -1, -1):
            Y[i] -= Y[i + 1]
    elif which == "T2inv":
        for i in range(1, n_t):
            Y[i] -= Y[i - 1]
    else:
        raise ValueError(f"unknown transform {which!r}")
    return Y.ravel()


@dataclass
class SaddleSystem:
    """Symmetric system ``[[A, B^T], [B, -C]] [y; p] = [b1; b2]``.

    ``n_blocks`` time blocks of size ``n_x`` per variable.
    """

    scheme: str
    A: BlockBandedOperator
    B: BlockBandedOperator
    C: BlockBandedOperator
    b1: np.ndarray
    b2: np.ndarray
    ops: SpaceOperators
    time: TimeGrid
    beta: float
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._BT = self.B.T

    @property
    def n_x(self) -> int:
        return self.A.n_x

    @property
    def n_blocks(self) -> int:
        return self.A.n_t

    @property
    def tau(self) -> float:
        return self.time.tau

    @property
    def h(self) -> float:
        return self.ops.grid.h

    @property
    def epsilon(self) -> float:
        return self.ops.epsilon

    @property
    def half(self) -> int:
        return self.n_blocks * self.n_x

    @property
    def dim(self) -> int:
        return 2 * self.half

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.b1, self.b2])

    def split(self, x: np.ndarray):
        return x[:self.half], x[self.half:]

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape != (self.dim,):
            raise DimensionError(f"expected length {self.dim}, got {x.shape}")
        y, p = self.split(x)
        return np.concatenate([self.A @ y + self._BT @ p, self.B @ y - self.C @ p])

    __call__ = apply

    def materialize(self) -> np.ndarray:
        Ad, Bd, Cd = materialize(self.A), materialize(self.B), materialize(self.C)
        return np.block([[Ad, Bd.T], [Bd, -Cd]])

    def to_sparse(self) -> sp.csr_matrix:
        Bs = to_sparse(self.B)
        return sp.bmat([[to_sparse(self.A), Bs.T], [Bs, -to_sparse(self.C)]], format="csr")


def _sample(ops: SpaceOperators, data, tg: TimeGrid):
    """Desired-state and force vectors, boundary values, initial state.

    The desired state enters as ``M_full`` times its nodal interpolant; exact
    load integration would add an O(h^2) consistency error that ``1/beta``
    amplifies in the adjoint.  The force is a load vector.
    """
    grid = ops.grid
    X = grid.coords
    xb = X[grid.boundary]
    xi = X[grid.interior]
    Mi = ops.M_full[grid.interior].tocsr()
    ones = np.ones(X.shape[0])
    yhat, force, gb = [], [], []
    for t in tg.nodes:
        yhat.append(Mi @ (np.asarray(data.desired(X[:, 0], X[:, 1], t), float) * ones))
        force.append(assemble_load(grid, lambda a, b: data.force(a, b, t)))
        gb.append(np.asarray(data.boundary(xb[:, 0], xb[:, 1], t), float)
                  * np.ones(xb.shape[0]))
    y0 = np.asarray(data.initial(xi[:, 0], xi[:, 1]), float) * np.ones(xi.shape[0])
    return np.array(yhat), np.array(force), np.array(gb), y0


def _coupling(ops: SpaceOperators):
    grid = ops.grid
    MIB = ops.M_full[grid.interior][:, grid.boundary].tocsr()
    LIB = ops.L_full[grid.interior][:, grid.boundary].tocsr()
    return MIB, LIB


def cn_raw_operators(blocks: CNBlocks, n_t: int):
    """The eliminated Crank-Nicolson blocks ``Lambda_ij`` (before the transform).

    The raw matrix is ``[[L11, L12], [L21, -L22]]``.
    """
    nx = blocks.M.shape[0]
    Mb, Mbb = blocks.M_bar, blocks.M_bar_beta
    L11 = BlockBandedOperator(n_t, nx, [(0, Mb, 1.0), (-1, Mb, 1.0)], name="Lambda11")
    L21 = BlockBandedOperator(n_t, nx, [(0, blocks.L_plus, 1.0), (-1, blocks.L_minus, 1.0)],
                              name="Lambda21")
    L12 = L21.T
    L22 = BlockBandedOperator(n_t, nx, [(0, Mbb, 1.0), (1, Mbb, 1.0)], name="Lambda22")
    return L11, L12, L21, L22


def cn_operators(blocks: CNBlocks, n_t: int):
    """Transformed blocks ``A = T1 Lambda11``, ``B = T2 Lambda21``, ``C = T2 Lambda22``."""
    nx = blocks.M.shape[0]
    tau = blocks.tau
    Mb, Mbb = blocks.M_bar, blocks.M_bar_beta
    A = BlockBandedOperator(n_t, nx, [(0, Mb, 2.0), (-1, Mb, 1.0), (1, Mb, 1.0)],
                            [(n_t - 1, n_t - 1, Mb, -1.0)], name="A")
    C = BlockBandedOperator(n_t, nx, [(0, Mbb, 2.0), (-1, Mbb, 1.0), (1, Mbb, 1.0)],
                            [(0, 0, Mbb, -1.0)], name="C")
    B = BlockBandedOperator(n_t, nx, [(0, blocks.L_plus, 1.0),
                                      (-1, (tau * blocks.L).tocsr(), 1.0),
                                      (-2, blocks.L_minus, 1.0)], name="B")
    return A, B, C


def be_operators(M: sp.spmatrix, L: sp.spmatrix, tau: float, beta: float, n_t: int):
    """Backward Euler blocks over ``n_t + 1`` levels; returns ``(A, B, C, LE)``."""
    M = sp.csr_matrix(M)
    nx, nb = M.shape[0], n_t + 1
    LE = (tau * L + M).tocsr()
    A = BlockBandedOperator(nb, nx, [(0, M, tau)], [(n_t, n_t, M, -tau)], name="AE")
    C = BlockBandedOperator(nb, nx, [(0, M, tau / beta)], [(0, 0, M, -tau / beta)], name="CE")
    B = BlockBandedOperator(nb, nx, [(0, LE, 1.0), (-1, M, -1.0)], name="BE")
    return A, B, C, LE


def build_cn_system(ops: SpaceOperators, tg: TimeGrid, beta: float, data,
                    adjoint_lift: bool = True) -> SaddleSystem:
    """Symmetrized Crank-Nicolson optimality system.

    ``adjoint_lift`` subtracts the boundary values of the state from the
    adjoint equation (the ``-y`` coupling term sees the full state).
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if ops.n_x == 0:
        raise ValueError("empty grid")
    nt, nx, tau = tg.n_t, ops.n_x, tg.tau
    blocks = cn_blocks(ops, tau, beta)
    Mb = blocks.M_bar
    A, B, C = cn_operators(blocks, nt)

    yhat, force, gb, y0 = _sample(ops, data, tg)
    MIB, LIB = _coupling(ops)
    LpIB = (0.5 * tau * LIB + MIB).tocsr()
    LmIB = (0.5 * tau * LIB - MIB).tocsr()

    b1 = 0.5 * tau * (yhat[:-1] + yhat[1:])
    b2 = 0.5 * tau * (force[:-1] + force[1:])
    if adjoint_lift:
        b1 -= 0.5 * tau * (MIB @ (gb[:-1] + gb[1:]).T).T
    b2 -= (LmIB @ gb[:-1].T).T + (LpIB @ gb[1:].T).T
    b1[0] -= Mb @ y0
    b2[0] -= blocks.L_minus @ y0
    b1 = apply_T("T1", b1.ravel(), nt, nx)
    b2 = apply_T("T2", b2.ravel(), nt, nx)
    return SaddleSystem("cn", A, B, C, b1, b2, ops, tg, beta,
                        extra={"blocks": blocks, "y0": y0, "gb": gb})


def build_be_system(ops: SpaceOperators, tg: TimeGrid, beta: float, data,
                    adjoint_lift: bool = True) -> SaddleSystem:
    """Backward Euler optimality system over all ``nt + 1`` time levels."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if ops.n_x == 0:
        raise ValueError("empty grid")
    nt, nx, tau = tg.n_t, ops.n_x, tg.tau
    nb = nt + 1
    A, B, C, LE = be_operators(ops.M, ops.L, tau, beta, nt)

    yhat, force, gb, y0 = _sample(ops, data, tg)
    MIB, LIB = _coupling(ops)
    LEIB = (tau * LIB + MIB).tocsr()

    b1 = np.zeros((nb, nx))
    b1[:nt] = tau * yhat[:nt]
    if adjoint_lift:
        b1[:nt] -= tau * (MIB @ gb[:nt].T).T
    b2 = np.zeros((nb, nx))
    b2[0] = LE @ y0
    b2[1:] = tau * force[1:] - (LEIB @ gb[1:].T).T + (MIB @ gb[:-1].T).T
    return SaddleSystem("be", A, B, C, b1.ravel(), b2.ravel(), ops, tg, beta,
                        extra={"LE": LE, "y0": y0, "gb": gb})


@dataclass(frozen=True)
class Trajectories:
    """Nodal state, adjoint and control at every time level (all nodes).

    ``computed`` flags the time levels that were unknowns of the system.
    """

    t: np.ndarray
    y: np.ndarray
    p: np.ndarray
    u: np.ndarray
    y_computed: np.ndarray
    p_computed: np.ndarray


def recover_trajectories(system: SaddleSystem, solution: np.ndarray) -> Trajectories:
    """Reattach eliminated levels and boundary values; control ``u = p / beta``."""
    grid = system.ops.grid
    nt, nx = system.time.n_t, system.n_x
    expected = 2 * nt * nx if system.scheme == "cn" else 2 * (nt + 1) * nx
    if solution.shape != (expected,):
        raise DimensionError(f"solution length {solution.shape}, expected {expected}")
    ys, ps = system.split(solution)
    ys, ps = ys.reshape(-1, nx), ps.reshape(-1, nx)
    y_int = np.zeros((nt + 1, nx))
    p_int = np.zeros((nt + 1, nx))
    ymask = np.ones(nt + 1, dtype=bool)
    pmask = np.ones(nt + 1, dtype=bool)
    if system.scheme == "cn":
        y_int[0] = system.extra["y0"]
        y_int[1:] = ys
        p_int[:nt] = ps
        ymask[0] = False
        pmask[nt] = False
    else:
        y_int[:] = ys
        p_int[:] = ps
    y = grid.to_full(y_int, system.extra["gb"])
    p = grid.to_full(p_int)
    return Trajectories(system.time.nodes, y, p, p / system.beta, ymask, pmask)


def relative_errors(system: SaddleSystem, traj: Trajectories, y_exact, p_exact):
    """Relative max-norm errors over interior nodes and computed time levels."""
    grid = system.ops.grid
    xi = grid.coords[grid.interior]

    def err(values, exact, mask):
        ex = np.array([exact(xi[:, 0], xi[:, 1], t) for t in traj.t[mask]])
        num = values[mask][:, grid.interior] - ex
        return float(np.abs(num).max() / np.abs(ex).max())

    return err(traj.y, y_exact, traj.y_computed), err(traj.p, p_exact, traj.p_computed)
