"""Benchmark control problems on (-1, 1)^2 x (0, 2)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fem import WindField

__all__ = ["ProblemSpec", "heat_problem", "cd_problem", "T_FINAL"]

T_FINAL = 2.0


@dataclass(frozen=True)
class ProblemSpec:
    """Data of a distributed control problem.

    All callables are vectorized: ``desired(x1, x2, t)``, ``force(x1, x2, t)``,
    ``initial(x1, x2)``, ``boundary(x1, x2, t)``.  ``y_exact``/``p_exact``
    are given when an analytic optimum is known.
    """

    kind: str
    beta: float
    epsilon: float
    desired: Callable
    force: Callable
    initial: Callable
    boundary: Callable
    wind: Optional[WindField] = None
    t_final: float = T_FINAL
    y_exact: Optional[Callable] = None
    p_exact: Optional[Callable] = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind == "heat" and (self.epsilon != 1.0 or self.wind is not None):
            raise ValueError("heat problems have epsilon = 1 and no wind")

    @property
    def has_exact(self) -> bool:
        return self.y_exact is not None and self.p_exact is not None


def _zero(x1, x2, t=0.0):
    return np.zeros(np.broadcast(x1, x2).shape)


def heat_problem(beta: float, t_final: float = T_FINAL) -> ProblemSpec:
    """Heat control with a known optimal state/adjoint pair."""
    pi2 = np.pi ** 2
    etf = np.exp(t_final)

    def s(x1, x2):
        return np.cos(np.pi * x1 / 2) * np.cos(np.pi * x2 / 2)

    def y_exact(x1, x2, t):
        return 1 + (2 / (pi2 * beta) * etf - 2 / ((2 + pi2) * beta) * np.exp(t)) * s(x1, x2)

    def p_exact(x1, x2, t):
        return (etf - np.exp(t)) * s(x1, x2)

    def desired(x1, x2, t):
        a = (2 / (pi2 * beta) + pi2 / 2) * etf
        b = (1 - 2 / ((2 + pi2) * beta) - pi2 / 2) * np.exp(t)
        return 1 + (a + b) * s(x1, x2)

    return ProblemSpec(
        kind="heat", beta=beta, epsilon=1.0,
        desired=desired, force=_zero,
        initial=lambda x1, x2: y_exact(x1, x2, 0.0),
        boundary=y_exact,
        wind=None, t_final=t_final, y_exact=y_exact, p_exact=p_exact,
    )


def _on_right_edge(x1):
    # the closed edge {1} x [-1, 1], corners included
    return np.isclose(x1, 1.0, rtol=0.0, atol=1e-12)


def cd_problem(beta: float, epsilon: float, t_final: float = T_FINAL,
               wind: Optional[WindField] = None) -> ProblemSpec:
    """Convection-diffusion control with the recirculating wind."""

    def indicator(x1, x2, t=0.0):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        return np.where(_on_right_edge(x1), 1.0, 0.0)

    def desired(x1, x2, t):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        return np.exp(-10 * (1 - x1))

    return ProblemSpec(
        kind="convection-diffusion", beta=beta, epsilon=epsilon,
        desired=desired, force=_zero,
        initial=indicator, boundary=indicator,
        wind=wind if wind is not None else WindField.recirculating(),
        t_final=t_final,
    )
