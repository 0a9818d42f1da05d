"""Linear feasibility fast path (hull membership tests).

Backed by scipy's HiGHS linear programming interface; the conic
interior-point machinery is overkill for pure equality/bound feasibility
questions, which the acceptance engine asks thousands of times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ..errors import NumericalFailure


@dataclass(frozen=True)
class LpFeasibility:
    feasible: bool
    x: np.ndarray | None = None
    residual: float = np.nan


def solve_lp_feasibility(A_eq, b_eq, lower_bounds=0.0,
                         residual_tol: float = 1e-9) -> LpFeasibility:
    """Decide whether {x : A_eq x = b_eq, x >= lower_bounds} is nonempty.

    Returns a point with equality residual at most ``residual_tol`` when
    feasible. An empty variable set is feasible only for b_eq = 0.
    """
    A = np.atleast_2d(np.asarray(A_eq, dtype=float))
    b = np.asarray(b_eq, dtype=float).ravel()
    if A.shape[1] == 0:
        feas = bool(np.all(np.abs(b) <= residual_tol))
        return LpFeasibility(feasible=feas,
                             x=np.empty(0) if feas else None,
                             residual=0.0 if feas else np.inf)
    if A.shape[0] != b.size:
        raise ValueError("A_eq/b_eq shape mismatch")
    lb = np.broadcast_to(np.asarray(lower_bounds, dtype=float),
                         (A.shape[1],))
    res = linprog(c=np.zeros(A.shape[1]), A_eq=A, b_eq=b,
                  bounds=list(zip(lb, [None] * A.shape[1])),
                  method="highs")
    if res.status == 2:
        return LpFeasibility(feasible=False)
    if res.status != 0 or res.x is None:
        raise NumericalFailure(f"LP feasibility solve failed: {res.message}")
    x = np.asarray(res.x, dtype=float)
    residual = float(np.max(np.abs(A @ x - b))) if b.size else 0.0
    if residual > residual_tol:
        raise NumericalFailure(
            f"LP point residual {residual:.2e} exceeds {residual_tol:.1e}")
    return LpFeasibility(feasible=True, x=x, residual=residual)
