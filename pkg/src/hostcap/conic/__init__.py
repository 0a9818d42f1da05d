"""Conic programming layer: program representation, reference interior-point
solver with infeasibility certificates, and an LP feasibility fast path."""

from .ipm import ConeLayout, IpmOptions, IpmResult, solve_hsde
from .lp import LpFeasibility, solve_lp_feasibility
from .program import (
    AffineRow,
    Certificate,
    ConicProgram,
    PsiTerms,
    SocBlockDef,
    SolveOptions,
    SolveOutcome,
    SolveStatus,
    cut_coefficients,
    dual_objective,
    in_soc,
    soc_rotated,
)

__all__ = [
    "AffineRow",
    "Certificate",
    "ConeLayout",
    "ConicProgram",
    "IpmOptions",
    "IpmResult",
    "LpFeasibility",
    "PsiTerms",
    "SocBlockDef",
    "SolveOptions",
    "SolveOutcome",
    "SolveStatus",
    "cut_coefficients",
    "dual_objective",
    "in_soc",
    "soc_rotated",
    "solve_hsde",
    "solve_lp_feasibility",
]
