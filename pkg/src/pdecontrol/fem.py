"""Q1 finite elements on uniform grids of the square (-1, 1)^2.

Nodes are numbered lexicographically (x fastest).  Every assembly routine
first builds the matrix over all nodes and then restricts it; the
interior-boundary coupling blocks are kept for Dirichlet lifting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .sparse import csr_from_coo

__all__ = [
    "Grid2D",
    "WindField",
    "SpaceOperators",
    "gauss_rule",
    "element_mass",
    "element_stiffness",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_convection",
    "assemble_lps",
    "assemble_load",
    "dirichlet_lift",
    "space_operators",
    "prolongation",
    "lps_parameters",
]

# local corner order (0,0), (1,0), (1,1), (0,1) on the reference square
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


def gauss_rule(n: int):
    """Tensor Gauss-Legendre rule on [0, 1]^2: points (n*n, 2), weights (n*n,)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="xy")
    WX, WY = np.meshgrid(w, w, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()]), (WX * WY).ravel()


def _shape(pts):
    """Bilinear basis values (nq, 4) and reference gradients (nq, 4, 2)."""
    xi, eta = pts[:, 0], pts[:, 1]
    phi = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
    dphi = np.empty((pts.shape[0], 4, 2))
    dphi[:, 0] = np.column_stack([-(1 - eta), -(1 - xi)])
    dphi[:, 1] = np.column_stack([(1 - eta), -xi])
    dphi[:, 2] = np.column_stack([eta, xi])
    dphi[:, 3] = np.column_stack([-eta, (1 - xi)])
    return phi, dphi


@dataclass(frozen=True)
class Grid2D:
    """Uniform grid of 2^l x 2^l square elements on (-1, 1)^2."""

    level: int

    def __post_init__(self):
        if self.level < 2:
            raise ValueError(f"grid level must be >= 2, got {self.level}")

    @property
    def n(self) -> int:
        return 2 ** self.level

    @property
    def h(self) -> float:
        return 2.0 ** (1 - self.level)

    @property
    def nodes_per_side(self) -> int:
        return self.n + 1

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_side ** 2

    @property
    def n_x(self) -> int:
        return (self.n - 1) ** 2

    @cached_property
    def coords(self) -> np.ndarray:
        t = -1.0 + self.h * np.arange(self.nodes_per_side)
        X, Y = np.meshgrid(t, t, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def interior(self) -> np.ndarray:
        i = np.arange(1, self.n)
        J, I = np.meshgrid(i, i, indexing="ij")
        return (J * self.nodes_per_side + I).ravel()

    @cached_property
    def boundary(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.interior] = False
        return np.flatnonzero(mask)

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Map from full node number to interior DOF number (-1 on boundary)."""
        idx = -np.ones(self.n_nodes, dtype=np.int64)
        idx[self.interior] = np.arange(self.interior.size)
        return idx

    def node(self, i: int, j: int) -> int:
        return j * self.nodes_per_side + i

    @cached_property
    def elements(self) -> np.ndarray:
        """(n_elem, 4) node numbers, corners counter-clockwise from lower-left."""
        e = np.arange(self.n)
        J, I = np.meshgrid(e, e, indexing="ij")
        I, J = I.ravel(), J.ravel()
        return np.column_stack([
            self.node(I, J), self.node(I + 1, J),
            self.node(I + 1, J + 1), self.node(I, J + 1),
        ])

    @cached_property
    def element_origin(self) -> np.ndarray:
        return self.coords[self.elements[:, 0]]

    @cached_property
    def patches(self) -> np.ndarray:
        """(n_patch, 9) node numbers of each 2x2-element patch (x fastest)."""
        p = np.arange(self.n // 2)
        Q, P = np.meshgrid(p, p, indexing="ij")
        P, Q = P.ravel(), Q.ravel()
        off = np.arange(3)
        dj, di = np.meshgrid(off, off, indexing="ij")
        return self.node(2 * P[:, None] + di.ravel(), 2 * Q[:, None] + dj.ravel())

    @cached_property
    def patch_centroids(self) -> np.ndarray:
        return self.coords[self.patches[:, 4]]

    def interior_values(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[..., self.interior]

    def to_full(self, interior_vals: np.ndarray, boundary_vals=None) -> np.ndarray:
        """Scatter interior values (and optional boundary values) to all nodes."""
        interior_vals = np.asarray(interior_vals)
        out = np.zeros(interior_vals.shape[:-1] + (self.n_nodes,))
        out[..., self.interior] = interior_vals
        if boundary_vals is not None:
            out[..., self.boundary] = boundary_vals
        return out


@dataclass(frozen=True)
class WindField:
    """Wind ``w(x1, x2) -> (w1, w2)``; vectorized over coordinate arrays."""

    evaluate: Callable[[np.ndarray, np.ndarray], tuple]
    divergence_free: bool = True
    name: str = ""

    def __call__(self, x1, x2) -> np.ndarray:
        w1, w2 = self.evaluate(np.asarray(x1, float), np.asarray(x2, float))
        return np.stack(np.broadcast_arrays(w1, w2), axis=-1).astype(float)

    @classmethod
    def zero(cls) -> "WindField":
        return cls(lambda x1, x2: (np.zeros_like(x1), np.zeros_like(x2)), name="zero")

    @classmethod
    def constant(cls, w1: float, w2: float) -> "WindField":
        return cls(lambda x1, x2: (np.full_like(x1, w1), np.full_like(x2, w2)),
                   name=f"constant({w1},{w2})")

    @classmethod
    def recirculating(cls) -> "WindField":
        return cls(lambda x1, x2: (2 * x2 * (1 - x1 ** 2), -2 * x1 * (1 - x2 ** 2)),
                   name="recirculating")


def _quad_points(grid: Grid2D, pts: np.ndarray) -> np.ndarray:
    """Physical quadrature coordinates (n_elem, nq, 2)."""
    return grid.element_origin[:, None, :] + grid.h * pts[None, :, :]


def _assemble_local(grid: Grid2D, local: np.ndarray) -> sp.csr_matrix:
    """Scatter per-element 4x4 matrices (constant or (n_elem, 4, 4))."""
    el = grid.elements
    ne = el.shape[0]
    local = np.broadcast_to(local, (ne, 4, 4))
    rows = np.repeat(el[:, :, None], 4, axis=2)
    cols = np.repeat(el[:, None, :], 4, axis=1)
    return csr_from_coo(rows, cols, local, (grid.n_nodes, grid.n_nodes))


def _restrict(grid: Grid2D, A: sp.csr_matrix) -> sp.csr_matrix:
    return A[grid.interior][:, grid.interior].tocsr()


def element_mass(h: float) -> np.ndarray:
    pts, wts = gauss_rule(2)
    phi, _ = _shape(pts)
    return h * h * np.einsum("q,qa,qb->ab", wts, phi, phi)


def element_stiffness() -> np.ndarray:
    pts, wts = gauss_rule(2)
    _, dphi = _shape(pts)
    return np.einsum("q,qad,qbd->ab", wts, dphi, dphi)


def assemble_mass(grid: Grid2D, full: bool = False) -> sp.csr_matrix:
    """Q1 mass matrix (2x2 Gauss, exact); interior block unless ``full``."""
    Mf = _assemble_local(grid, element_mass(grid.h))
    return Mf if full else _restrict(grid, Mf)


def assemble_stiffness(grid: Grid2D, full: bool = False) -> sp.csr_matrix:
    Kf = _assemble_local(grid, element_stiffness())
    return Kf if full else _restrict(grid, Kf)


def assemble_convection(grid: Grid2D, wind: WindField, full: bool = False,
                        skew: bool = True) -> sp.csr_matrix:
    """``n_ij = int (w . grad phi_j) phi_i`` with 3x3 Gauss per element.

    The interior block is replaced by its skew part ``(N - N^T)/2`` unless
    ``skew`` is false; ``full`` returns the raw all-node matrix.
    """
    pts, wts = gauss_rule(3)
    phi, dphi = _shape(pts)
    xq = _quad_points(grid, pts)
    w = wind(xq[..., 0], xq[..., 1])  # (ne, nq, 2)
    wgrad = np.einsum("eqd,qbd->eqb", w, dphi) / grid.h
    local = grid.h ** 2 * np.einsum("q,qa,eqb->eab", wts, phi, wgrad)
    Nf = _assemble_local(grid, local)
    if full:
        return Nf
    N = _restrict(grid, Nf)
    if skew:
        N = (0.5 * (N - N.T)).tocsr()
        N.sort_indices()
    return N


def lps_parameters(grid: Grid2D, wind: WindField, epsilon: float):
    """Per-patch stabilization weights ``delta_k`` and Peclet numbers ``P_k``."""
    c = grid.patch_centroids
    wk = wind(c[:, 0], c[:, 1])
    nw = np.hypot(wk[:, 0], wk[:, 1])
    delta = np.zeros(nw.size)
    peclet = np.zeros(nw.size)
    nz = nw > 0
    # chord of a square patch of side 2h along the wind direction
    hk = 2 * grid.h / np.maximum(np.abs(wk[nz, 0]), np.abs(wk[nz, 1])) * nw[nz]
    peclet[nz] = nw[nz] * hk / (2 * epsilon)
    d = np.zeros(hk.size)
    big = peclet[nz] > 1
    d[big] = hk[big] / (2 * nw[nz][big]) * (1 - 1 / peclet[nz][big])
    delta[nz] = d
    return delta, peclet


def _patch_streamline(grid: Grid2D, wind: WindField):
    """Streamline derivatives ``w . grad phi_a`` at patch quadrature points.

    Returns ``s`` of shape (n_patch, 36, 9) and quadrature weights (36,)
    already scaled by the element area.
    """
    pts, wts = gauss_rule(3)
    _, dphi = _shape(pts)
    nq = pts.shape[0]
    patches = grid.patches
    npch = patches.shape[0]
    origin = grid.coords[patches[:, 0]]
    s = np.zeros((npch, 4 * nq, 9))
    for k, (ei, ej) in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
        xq = origin[:, None, :] + grid.h * (np.array([ei, ej]) + pts)[None]
        w = wind(xq[..., 0], xq[..., 1])
        g = np.einsum("pqd,qad->pqa", w, dphi) / grid.h
        local_nodes = (ej + _CORNERS[:, 1]) * 3 + (ei + _CORNERS[:, 0])
        s[:, k * nq:(k + 1) * nq, local_nodes] = g
    return s, np.tile(wts, 4) * grid.h ** 2


def assemble_lps(grid: Grid2D, wind: WindField, epsilon: float,
                 full: bool = False) -> sp.csr_matrix:
    """Local projection stabilization matrix on 2x2-element patches."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    delta, _ = lps_parameters(grid, wind, epsilon)
    s, wq = _patch_streamline(grid, wind)
    area = 4 * grid.h ** 2
    mean = np.einsum("q,pqa->pa", wq, s) / area
    fl = s - mean[:, None, :]
    local = delta[:, None, None] * np.einsum("q,pqa,pqb->pab", wq, fl, fl)
    local = 0.5 * (local + local.transpose(0, 2, 1))
    P = grid.patches
    rows = np.repeat(P[:, :, None], 9, axis=2)
    cols = np.repeat(P[:, None, :], 9, axis=1)
    Wf = csr_from_coo(rows, cols, local, (grid.n_nodes, grid.n_nodes))
    return Wf if full else _restrict(grid, Wf)


def assemble_load(grid: Grid2D, g: Callable, full: bool = False) -> np.ndarray:
    """``f_i = int g phi_i`` with 3x3 Gauss per element; ``g(x1, x2)`` vectorized."""
    pts, wts = gauss_rule(3)
    phi, _ = _shape(pts)
    xq = _quad_points(grid, pts)
    gq = np.broadcast_to(np.asarray(g(xq[..., 0], xq[..., 1]), float), xq.shape[:2])
    local = grid.h ** 2 * np.einsum("q,qa,eq->ea", wts, phi, gq)
    out = np.zeros(grid.n_nodes)
    np.add.at(out, grid.elements.ravel(), local.ravel())
    return out if full else out[grid.interior]


def dirichlet_lift(grid: Grid2D, A_full: sp.spmatrix, g_boundary: np.ndarray) -> np.ndarray:
    """``c_i = sum_{j in boundary} A_ij g_j`` for interior rows ``i``."""
    g_boundary = np.asarray(g_boundary, float)
    if g_boundary.shape != (grid.boundary.size,):
        raise ValueError(f"expected {grid.boundary.size} boundary values")
    coupling = A_full.tocsr()[grid.interior][:, grid.boundary]
    return coupling @ g_boundary


@dataclass(frozen=True)
class SpaceOperators:
    """Interior-DOF spatial matrices with their full-node counterparts.

    ``L = eps*K + N + W`` where ``N`` is exactly skew-symmetric on the
    interior.  ``L_full`` uses the raw (non-symmetrized) convection matrix and
    is only needed for the interior-boundary coupling.
    """

    grid: Grid2D
    epsilon: float
    M: sp.csr_matrix
    K: sp.csr_matrix
    N: sp.csr_matrix
    W: sp.csr_matrix
    M_full: sp.csr_matrix = field(repr=False)
    L_full: sp.csr_matrix = field(repr=False)
    wind: Optional[WindField] = None
    stabilized: bool = False

    @cached_property
    def L(self) -> sp.csr_matrix:
        # symmetric part first so L + L^T reproduces 2(eps K + W) closely
        return ((self.epsilon * self.K + self.W) + self.N).tocsr()

    @property
    def n_x(self) -> int:
        return self.grid.n_x

    def lift(self, A_full: sp.spmatrix, g_boundary: np.ndarray) -> np.ndarray:
        return dirichlet_lift(self.grid, A_full, g_boundary)


def space_operators(grid: Grid2D, epsilon: float = 1.0,
                    wind: Optional[WindField] = None,
                    stabilize: bool = True) -> SpaceOperators:
    """Assemble M, K, N, W on ``grid``; ``wind=None`` gives the heat operator."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    Mf = assemble_mass(grid, full=True)
    Kf = assemble_stiffness(grid, full=True)
    M, K = _restrict(grid, Mf), _restrict(grid, Kf)
    zero = sp.csr_matrix((grid.n_x, grid.n_x))
    Lf = epsilon * Kf
    if wind is None:
        N = W = zero
    else:
        Nf = assemble_convection(grid, wind, full=True)
        N = _restrict(grid, Nf)
        N = (0.5 * (N - N.T)).tocsr()
        Lf = Lf + Nf
        if stabilize:
            Wf = assemble_lps(grid, wind, epsilon, full=True)
            W = _restrict(grid, Wf)
            Lf = Lf + Wf
        else:
            W = zero
    for A in (M, K, N, W):
        A.sort_indices()
    return SpaceOperators(grid, epsilon, M, K, N, W, Mf, Lf.tocsr(), wind,
                          stabilized=wind is not None and stabilize)


def prolongation(fine: Grid2D) -> sp.csr_matrix:
    """Bilinear interpolation from level ``l-1`` interior DOFs to level ``l``."""
    nf = fine.n - 1
    nc = fine.n // 2 - 1
    rows, cols, vals = [], [], []
    for I in range(nc):
        i = 2 * I + 1  # fine interior index of coarse node I
        rows += [i - 1, i, i + 1]
        cols += [I, I, I]
        vals += [0.5, 1.0, 0.5]
    P1 = sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))
    return sp.kron(P1, P1, format="csr")
