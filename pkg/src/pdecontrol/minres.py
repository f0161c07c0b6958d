"""Preconditioned MINRES for symmetric indefinite systems."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

__all__ = ["IterationLog", "MinresBreakdown", "minres_solve"]


class MinresBreakdown(RuntimeError):
    """The Lanczos process broke down or the preconditioner is not SPD."""


@dataclass
class IterationLog:
    residuals: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    true_residual: Optional[float] = None

    @property
    def relative(self) -> np.ndarray:
        r = np.asarray(self.residuals)
        return r / r[0] if r.size and r[0] > 0 else r


def minres_solve(apply_A: Callable[[np.ndarray], np.ndarray],
                 apply_Pinv: Callable[[np.ndarray], np.ndarray],
                 b: np.ndarray, rtol: float = 1e-6, maxit: int = 200,
                 callback: Optional[Callable[[np.ndarray, int], None]] = None,
                 check_true_residual: bool = False):
    """Solve ``A x = b`` from ``x0 = 0``.

    Stops once the preconditioned residual norm ``||r_k||_{P^{-1}}``, carried
    by the recurrence, drops below ``rtol`` times its initial value.
    Returns ``(x, IterationLog)``.
    """
    if not 0 < rtol < 1:
        raise ValueError(f"rtol must lie in (0, 1), got {rtol}")
    start = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n)
    log = IterationLog()

    v_old = np.zeros(n)
    v = b.copy()
    z = apply_Pinv(v)
    gamma2 = float(z @ v)
    if gamma2 < 0:
        raise MinresBreakdown("preconditioner is not positive definite")
    gamma = np.sqrt(gamma2)
    log.residuals.append(gamma)
    if gamma == 0.0:
        log.converged = True
        log.wall_time = time.perf_counter() - start
        return x, log

    gamma_old = 1.0
    eta = gamma
    c_old = c = 1.0
    s_old = s = 0.0
    w_old = np.zeros(n)
    w = np.zeros(n)
    target = rtol * gamma

    for j in range(1, maxit + 1):
        z = z / gamma
        Az = apply_A(z)
        delta = float(Az @ z)
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = apply_Pinv(v_new)
        gamma2 = float(z_new @ v_new)
        if gamma2 < 0:
            raise MinresBreakdown(f"preconditioner is not positive definite (iteration {j})")
        gamma_new = np.sqrt(gamma2)

        a0 = c * delta - c_old * s * gamma
        a1 = np.hypot(a0, gamma_new)
        if a1 == 0.0:
            raise MinresBreakdown(f"singular tridiagonal at iteration {j}")
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        c_old, s_old = c, s
        c, s = a0 / a1, gamma_new / a1

        w_new = (z - a3 * w_old - a2 * w) / a1
        x = x + (c * eta) * w_new
        eta = -s * eta

        w_old, w = w, w_new
        v_old, v = v, v_new
        z = z_new
        gamma_old, gamma = gamma, gamma_new

        log.residuals.append(abs(eta))
        log.iterations = j
        if callback is not None:
            callback(x, j)
        if abs(eta) <= target:
            log.converged = True
            break
        if gamma == 0.0:
            raise MinresBreakdown(f"Lanczos breakdown with residual {abs(eta):.3e}")

    if check_true_residual:
        r = b - apply_A(x)
        log.true_residual = float(np.sqrt(max(r @ apply_Pinv(r), 0.0)))
    log.wall_time = time.perf_counter() - start
    return x, log
