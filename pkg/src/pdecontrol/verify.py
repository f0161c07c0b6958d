"""Dense brute-force checks of the Schur-complement and mass-block bounds.

Everything here materializes matrices, so instances are capped at
``DENSE_LIMIT`` unknowns per block row of the saddle system.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import SpaceOperators
from .precond import ChebyshevMassSolver, CNPreconditioner, PrecondConfig, probe
from .sparse import DENSE_LIMIT, materialize, sym_gen_eig, to_sparse
from .timesys import SaddleSystem, TimeGrid, cn_blocks, cn_raw_operators, t_operator

__all__ = [
    "BoundCheck",
    "build_S_int",
    "check_schur_bounds",
    "check_corollary_bounds",
    "check_lemma_11",
    "emit_eig_scatter",
    "proof_matrix",
    "time_factor",
    "SLACK",
]

SLACK = 1e-10


@dataclass
class BoundCheck:
    lam_min: float
    lam_max: float
    passed: bool
    eigenvalues: np.ndarray
    detail: Optional[dict] = None


def _guard(n: int, limit: int = DENSE_LIMIT):
    if n > limit:
        raise MemoryError(f"dense verification of size {n} exceeds {limit}")


def _blkdiag(block: sp.spmatrix, n_t: int) -> np.ndarray:
    return sp.kron(sp.eye(n_t), block, format="csr").toarray()


def _sym(X):
    return 0.5 * (X + X.T)


def build_S_int(ops: SpaceOperators, tg: TimeGrid, beta: float, *, check_identity: bool = True):
    """Dense ``S_int = C_D + B_D A_D^{-1} B_D^T`` and its matched approximation.

    ``S_tilde = (Lambda21 + Mhat) A^{-1} (Lambda21 + Mhat)^T`` is built from its
    definition (with the full ``A``) and, when ``check_identity`` is set,
    compared to ``S_int + (B_D + B_D^T)/sqrt(beta)``.
    """
    nt, nx, tau = tg.n_t, ops.n_x, tg.tau
    _guard(nt * nx)
    blocks = cn_blocks(ops, tau, beta)
    _, _, L21, _ = cn_raw_operators(blocks, nt)
    Lam21 = materialize(L21)
    T2 = materialize(t_operator("T2", nt, nx))
    T1 = T2.T
    Mbar = blocks.M_bar.toarray()
    A_D = _blkdiag(blocks.M_bar, nt)
    C_D = _blkdiag(blocks.M_bar_beta, nt)
    # B_D = Lambda21 T2^{-1}  <=>  T2^T B_D^T = Lambda21^T
    B_D = sla.solve_triangular(T2.T, Lam21.T, lower=False).T

    cho = sla.cho_factor(Mbar)
    X = np.vstack([sla.cho_solve(cho, B_D.T[k * nx:(k + 1) * nx]) for k in range(nt)])
    S_int = _sym(C_D + B_D @ X)

    c = tau / (2.0 * np.sqrt(beta))
    M = ops.M.toarray()
    Mhat = c * (np.kron(np.eye(nt), M) + np.kron(np.eye(nt, k=-1), M))
    F = Lam21 + Mhat
    A = T1 @ A_D @ T1.T
    S_tilde = _sym(F @ sla.cho_solve(sla.cho_factor(A), F.T))

    if check_identity:
        alt = S_int + (B_D + B_D.T) / np.sqrt(beta)
        err = np.abs(alt - S_tilde).max() / np.abs(S_tilde).max()
        if err > 1e-11:
            raise AssertionError(f"S_tilde identity violated: relative error {err:.2e}")
    return S_int, S_tilde


def _check(eigs: np.ndarray, lo=0.5, hi=1.0, slack=SLACK, detail=None) -> BoundCheck:
    eigs = np.sort(np.asarray(eigs))
    ok = bool(eigs[0] >= lo - slack and eigs[-1] <= hi + slack)
    return BoundCheck(float(eigs[0]), float(eigs[-1]), ok, eigs, detail)


def check_schur_bounds(ops: SpaceOperators, tg: TimeGrid, beta: float) -> BoundCheck:
    """Generalized eigenvalues of ``(S_int, S_tilde)`` against ``[1/2, 1]``."""
    S_int, S_tilde = build_S_int(ops, tg, beta)
    # raises LinAlgError when S_tilde is not SPD: an assembly bug
    return _check(sym_gen_eig(S_int, S_tilde))


def schur_pair(system: SaddleSystem, precond: Optional[CNPreconditioner] = None):
    """Dense ``S = C + B A^{-1} B^T`` and ``Shat = F A_D^{-1} F^T``."""
    if system.scheme != "cn":
        raise ValueError("the Schur bound concerns the Crank-Nicolson system")
    _guard(system.half)
    A = materialize(system.A)
    B = to_sparse(system.B).toarray()
    C = materialize(system.C)
    S = _sym(C + B @ sla.cho_solve(sla.cho_factor(A), B.T))
    precond = precond or CNPreconditioner(system, PrecondConfig(exact_blocks=True))
    F = materialize(precond.factor)
    A_D = _blkdiag(precond.A_D_block, system.time.n_t)
    Shat = _sym(F @ sla.solve(A_D, F.T, assume_a="pos"))
    return S, Shat


def check_corollary_bounds(system: SaddleSystem,
                           precond: Optional[CNPreconditioner] = None) -> BoundCheck:
    """Spectrum of ``(S, Shat)``; ``detail['gap']`` compares it with ``(S_int, S_tilde)``."""
    S, Shat = schur_pair(system, precond)
    eigs = sym_gen_eig(S, Shat)
    S_int, S_tilde = build_S_int(system.ops, system.time, system.beta)
    ref = sym_gen_eig(S_int, S_tilde)
    gap = float(np.abs(eigs - ref).max())
    return _check(eigs, detail={"gap": gap, "reference": ref})


def _spectrum_of_product(approx_inverse: np.ndarray, A: np.ndarray) -> np.ndarray:
    # eigenvalues of X A for SPD X = R R^T are those of R^T A R
    R = sla.cholesky(_sym(approx_inverse), lower=True)
    return sla.eigh(_sym(R.T @ A @ R), eigvals_only=True)


def check_lemma_11(ops: SpaceOperators, tg: TimeGrid, steps: int = 20,
                   slack: float = 1e-9, beta: float = 1.0) -> BoundCheck:
    """Containment of ``lambda(Ahat^{-1} A)`` in the range of ``lambda(Mc^{-1} M)``."""
    from .problems import heat_problem
    from .timesys import build_cn_system

    nt, nx = tg.n_t, ops.n_x
    _guard(nt * nx)
    cheb = ChebyshevMassSolver(ops.M, steps=steps)
    M = ops.M.toarray()
    mass_eigs = _spectrum_of_product(probe(cheb, nx), M)

    system = build_cn_system(ops, tg, beta, heat_problem(beta))
    pre = CNPreconditioner(system, PrecondConfig(cheb_steps=steps, exact_blocks=True))
    Ahat_inv = probe(pre.apply_Ahat_inv, nt * nx)
    eigs = _spectrum_of_product(Ahat_inv, materialize(system.A))
    lo, hi = float(mass_eigs.min()), float(mass_eigs.max())
    return _check(eigs, lo, hi, slack, detail={"mass_eigs": mass_eigs})


def proof_matrix(ops: SpaceOperators, tg: TimeGrid, beta: float) -> np.ndarray:
    """``Lambda21^T T2 + T2^T Lambda21``, positive semidefinite in theory."""
    nt, nx = tg.n_t, ops.n_x
    _guard(nt * nx)
    _, _, L21, _ = cn_raw_operators(cn_blocks(ops, tg.tau, beta), nt)
    Lam21 = materialize(L21)
    T2 = materialize(t_operator("T2", nt, nx))
    return Lam21.T @ T2 + T2.T @ Lam21


def time_factor(n_t: int) -> Tuple[np.ndarray, np.ndarray]:
    """The tridiagonal time matrix ``T = T1^T T1`` with ``T1`` lower bidiagonal."""
    T1 = np.eye(n_t) + np.eye(n_t, k=-1)
    T = T1.T @ T1
    return T, T1


def emit_eig_scatter(results: Iterable[Tuple[float, np.ndarray]], path) -> None:
    """CSV ``beta,index,eigenvalue`` (one row per eigenvalue)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "index", "eigenvalue"])
        for beta, eigs in results:
            for i, lam in enumerate(np.asarray(eigs)):
                w.writerow([repr(float(beta)), i, repr(float(lam))])
