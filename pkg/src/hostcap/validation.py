"""Post-hoc verification of capacity solutions.

Everything here re-derives its verdicts from the raw flow states with the
closed-form CVaR and plain arithmetic, independently of the epigraph
encoding the optimizer used: relaxation gaps per edge and scenario,
empirical CVaR of every constrained quantity against its limit, and
violation-frequency tables suitable for cumulative-histogram plots.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .assemble import RiskParams
from .cvar import cvar, violation_fraction
from .network import RadialNetwork
from .scenarios import ScenarioSet


def stack_states(flow_states):
    """(P, Q, L, W) as (K, .)-shaped arrays."""
    P = np.stack([st.P for st in flow_states])
    Q = np.stack([st.Q for st in flow_states])
    L = np.stack([st.L for st in flow_states])
    W = np.stack([st.W for st in flow_states])
    return P, Q, L, W


def relaxation_gap(result, net: RadialNetwork) -> np.ndarray:
    """Per-scenario, per-edge slack of the conic loss relaxation.

    gap[k, e] = W_send * L - P^2 - Q^2; nonnegative up to solver tolerance,
    and zero exactly where the relaxation is tight.
    """
    P, Q, L, W = stack_states(result.flow_states)
    W_send = W[:, net.from_bus - 1]
    return W_send * L - P**2 - Q**2


@dataclass(frozen=True)
class GapReport:
    gap: np.ndarray
    max_gap: float
    min_gap: float
    loose: list  # (scenario, edge) pairs where gap > exactness_tol


def gap_report(result, net: RadialNetwork, feas_tol: float = 1e-8,
               exactness_tol: float = 1e-6) -> GapReport:
    gap = relaxation_gap(result, net)
    loose = [(int(k), int(e)) for k, e in zip(*np.nonzero(gap > exactness_tol))]
    return GapReport(gap=gap, max_gap=float(np.max(gap)),
                     min_gap=float(np.min(gap)), loose=loose)


@dataclass(frozen=True)
class ViolationTable:
    """Violation frequencies per constraint, non-substation buses and edges."""

    bus: np.ndarray            # buses 2..n
    upper_voltage: np.ndarray  # fraction of scenarios with W > W_max
    lower_voltage: np.ndarray  # fraction with W < W_min
    edge: np.ndarray
    flow: np.ndarray           # fraction with P^2+Q^2 > S_max^2
    nu: float
    gamma: float

    @property
    def chance_bound_ok(self) -> bool:
        return bool(np.all(self.upper_voltage <= 1.0 - self.nu)
                    and np.all(self.lower_voltage <= 1.0 - self.nu)
                    and np.all(self.flow <= 1.0 - self.gamma))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["constraint", "index", "violation_fraction", "bound"])
            for b, f in zip(self.bus, self.upper_voltage):
                w.writerow(["upper_voltage", b, repr(float(f)),
                            repr(1.0 - self.nu)])
            for b, f in zip(self.bus, self.lower_voltage):
                w.writerow(["lower_voltage", b, repr(float(f)),
                            repr(1.0 - self.nu)])
            for e, f in zip(self.edge, self.flow):
                w.writerow(["flow", e, repr(float(f)),
                            repr(1.0 - self.gamma)])


def violation_histogram(result, scen: ScenarioSet, net: RadialNetwork,
                        risk: RiskParams | None = None) -> ViolationTable:
    """Violation fractions per constraint (tracked for buses 2..n and edges)."""
    if risk is None:
        risk = RiskParams(nu=result.nu, gamma=result.gamma)
    P, Q, _, W = stack_states(result.flow_states)
    buses = np.arange(2, net.n + 1)
    upper = np.array([violation_fraction(W[:, j - 1], net.W_max[j - 1])
                      for j in buses])
    lower = np.array([violation_fraction(-W[:, j - 1], -net.W_min[j - 1])
                      for j in buses])
    flows2 = P**2 + Q**2
    edges = np.arange(1, net.n)
    flow = np.array([violation_fraction(flows2[:, e], net.S_max[e]**2)
                     for e in range(net.n_branches)])
    return ViolationTable(bus=buses, upper_voltage=upper, lower_voltage=lower,
                          edge=edges, flow=flow, nu=risk.nu, gamma=risk.gamma)


@dataclass(frozen=True)
class CvarRecheck:
    """Closed-form empirical CVaR of each constrained quantity vs its limit."""

    upper_voltage_margin: np.ndarray  # W_max - cvar(W), all n buses
    lower_voltage_margin: np.ndarray  # -W_min - cvar(-W)
    flow_margin: np.ndarray           # S_max^2 - cvar(P^2+Q^2)
    tol: float

    @property
    def ok(self) -> bool:
        worst = self.worst_margin
        return bool(worst >= -self.tol)

    @property
    def worst_margin(self) -> float:
        return float(min(np.min(self.upper_voltage_margin),
                         np.min(self.lower_voltage_margin),
                         np.min(self.flow_margin)))


def recheck_cvar(result, scen: ScenarioSet, net: RadialNetwork,
                 risk: RiskParams, tol: float = 1e-6) -> CvarRecheck:
    """Re-evaluate the risk constraints with the closed-form CVaR."""
    P, Q, _, W = stack_states(result.flow_states)
    up = np.array([net.W_max[j] - cvar(W[:, j], risk.nu)
                   for j in range(net.n)])
    lo = np.array([-net.W_min[j] - cvar(-W[:, j], risk.nu)
                   for j in range(net.n)])
    flows2 = P**2 + Q**2
    fl = np.array([net.S_max[e]**2 - cvar(flows2[:, e], risk.gamma)
                   for e in range(net.n_branches)])
    return CvarRecheck(upper_voltage_margin=up, lower_voltage_margin=lo,
                       flow_margin=fl, tol=tol)


@dataclass(frozen=True)
class ValidationReport:
    gaps: GapReport
    cvar: CvarRecheck
    violations: ViolationTable
    feas_tol: float
    flags: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.flags.values())


def validate_result(result, net: RadialNetwork, scen: ScenarioSet,
                    risk: RiskParams, feas_tol: float = 1e-8,
                    exactness_tol: float = 1e-6,
                    cvar_tol: float = 1e-6) -> ValidationReport:
    gaps = gap_report(result, net, feas_tol, exactness_tol)
    cv = recheck_cvar(result, scen, net, risk, tol=cvar_tol)
    vio = violation_histogram(result, scen, net, risk)
    flags = {
        "gap_direction_violated": gaps.min_gap < -feas_tol,
        "cvar_exceeded": not cv.ok,
        "chance_bound_violated": not vio.chance_bound_ok,
    }
    return ValidationReport(gaps=gaps, cvar=cv, violations=vio,
                            feas_tol=feas_tol, flags=flags)
