"""User-facing capacity maximization and subsampling studies."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assemble import (
    CvarAnchors,
    RiskParams,
    build_acceptability,
    build_flow_recovery,
    build_hc_max,
    unpack_solution,
)
from .conic import SolveOptions, SolveStatus
from .errors import BaseInfeasible, InvariantViolation, NumericalFailure
from .network import RadialNetwork
from .scenarios import ScenarioSet, subsample
from .validation import validate_result


@dataclass
class HcResult:
    """Capacity maximization outcome with provenance and diagnostics.

    ``objective`` is recomputed as sum(psi_star), decoupled from any
    objective scaling inside the solver. Flow states are recovered by a
    loss-minimizing re-solve at the optimal capacities so they are physically
    meaningful (the joint optimizer is indifferent among relaxation-interior
    points); the CVaR anchors are those of the maximizing solve.
    """

    psi_star: np.ndarray
    objective: float
    flow_states: list
    anchors: CvarAnchors
    nu: float
    gamma: float
    K: int
    scenario_digest: str
    network_digest: str
    solver: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "psi_star": [float(v) for v in self.psi_star],
            "objective": float(self.objective),
            "nu": self.nu, "gamma": self.gamma, "K": self.K,
            "scenario_digest": self.scenario_digest,
            "network_digest": self.network_digest,
            "solver": self.solver,
            "violations": self.violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":")) + "\n"


def extract_flow_states(net: RadialNetwork, scen: ScenarioSet,
                        risk: RiskParams, psi,
                        opts: SolveOptions | None = None):
    """Feasible, loss-minimal flow states at fixed capacities.

    Returns (flow_states, anchors, solve_info); raises NumericalFailure when
    the recovery solve does not come back optimal.
    """
    opts = opts or SolveOptions()
    prog = build_flow_recovery(net, scen, risk, psi)
    out = prog.solve(opts)
    if out.status != SolveStatus.OPTIMAL:
        raise NumericalFailure(
            f"flow recovery solve returned {out.status.value}")
    _, anchors, states = unpack_solution(prog, out.x)
    info = {"status": out.status.value, "iterations": out.iterations,
            "residuals": out.residuals}
    return states, anchors, info


def maximize_capacity(net: RadialNetwork, scen: ScenarioSet, risk: RiskParams,
                      opts: SolveOptions | None = None, *,
                      check_base: bool = True,
                      recover_flows: bool = True,
                      verify: bool = True) -> HcResult:
    """Solve the hosting-capacity maximization and package the result.

    The zero-capacity base case is checked first so that an infeasible
    network configuration surfaces as BaseInfeasible rather than a solver
    diagnostic. Post-hoc, the closed-form CVaR of every constrained quantity
    is re-verified against its limit (independent of the epigraph encoding).
    """
    opts = opts or SolveOptions()
    if check_base:
        base = build_acceptability(net, scen, risk,
                                   np.zeros(net.n_branches)).solve(opts)
        if base.status in (SolveStatus.INFEASIBLE,
                           SolveStatus.INFEASIBLE_NO_CERTIFICATE):
            raise BaseInfeasible(
                "risk constraints are violated even with zero installed "
                "solar; check limits and scenario data")
        if base.status != SolveStatus.OPTIMAL:
            raise NumericalFailure(
                f"base-case solve returned {base.status.value}")

    prog = build_hc_max(net, scen, risk)
    out = prog.solve(opts)
    if out.status != SolveStatus.OPTIMAL:
        raise NumericalFailure(
            f"capacity maximization returned {out.status.value}")
    psi_star, anchors, states = unpack_solution(prog, out.x)
    psi_star = np.clip(psi_star, 0.0, net.psi_max)
    solver_info = {
        "status": out.status.value,
        "iterations": out.iterations,
        "residuals": out.residuals,
        "objective_scale": opts.objective_scale,
    }

    if recover_flows:
        try:
            states, _, rec_info = extract_flow_states(net, scen, risk,
                                                      psi_star, opts)
            solver_info["flow_recovery"] = rec_info
        except NumericalFailure as exc:
            solver_info["flow_recovery"] = {"status": "failed",
                                            "error": str(exc)}

    result = HcResult(
        psi_star=psi_star,
        objective=float(np.sum(psi_star)),
        flow_states=states,
        anchors=anchors,
        nu=risk.nu, gamma=risk.gamma, K=scen.K,
        scenario_digest=scen.digest(),
        network_digest=net.digest(),
        solver=solver_info,
    )

    if verify:
        report = validate_result(result, net, scen, risk,
                                 feas_tol=opts.feas_tol)
        result.violations = {
            "upper_voltage": [float(v) for v in report.violations.upper_voltage],
            "lower_voltage": [float(v) for v in report.violations.lower_voltage],
            "flow": [float(v) for v in report.violations.flow],
            "worst_cvar_margin": report.cvar.worst_margin,
            "max_relaxation_gap": report.gaps.max_gap,
        }
        if report.flags["cvar_exceeded"]:
            raise InvariantViolation(
                "closed-form CVaR recheck exceeds a limit: worst margin "
                f"{report.cvar.worst_margin:.3e}")
    return result


@dataclass(frozen=True)
class StudyRow:
    size: int
    mean_objective: float
    std_objective: float
    trials_ok: int
    trials_failed: int
    degenerate_std: bool  # fewer than two successful trials


def subsample_study(net: RadialNetwork, scen: ScenarioSet, risk: RiskParams,
                    sizes, trials: int, seed: int,
                    opts: SolveOptions | None = None,
                    max_workers: int = 1) -> list:
    """Objective mean/spread across repeated subsample maximizations.

    Per size, ``trials`` subsamples are drawn with seeds derived from one
    seeded generator, each maximized independently (base-case checking and
    flow recovery are skipped; only the objective is recorded). Identical
    subsamples are solved once and shared, which makes the size == K case
    cheap. Solve failures are recorded per trial, not fatal.
    """
    opts = opts or SolveOptions()
    sizes = [int(m) for m in sizes]
    rng = np.random.default_rng(int(seed))
    trial_seeds = rng.integers(0, 2**62, size=(len(sizes), int(trials)))
    cache: dict = {}

    def run_one(sub: ScenarioSet) -> float:
        key = sub.digest()
        if key not in cache:
            res = maximize_capacity(net, sub, risk, opts, check_base=False,
                                    recover_flows=False, verify=False)
            cache[key] = res.objective
        return cache[key]

    rows = []
    for i, m in enumerate(sizes):
        subs = [subsample(scen, m, int(trial_seeds[i, t]))
                for t in range(int(trials))]
        objectives: list = []
        failures = 0
        if max_workers > 1:
            # distinct subsamples only; duplicates resolved via the cache
            uniq: dict = {}
            for sub in subs:
                uniq.setdefault(sub.digest(), sub)
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                futs = {key: pool.submit(run_one, sub)
                        for key, sub in uniq.items()}
                done = {}
                for key, fut in futs.items():
                    try:
                        done[key] = fut.result()
                    except Exception as exc:  # recorded, not fatal
                        done[key] = exc
            for sub in subs:
                r = done[sub.digest()]
                if isinstance(r, Exception):
                    failures += 1
                else:
                    objectives.append(r)
        else:
            for sub in subs:
                try:
                    objectives.append(run_one(sub))
                except Exception:
                    failures += 1
        ok = len(objectives)
        mean = float(np.mean(objectives)) if ok else float("nan")
        std = float(np.std(objectives, ddof=1)) if ok >= 2 else 0.0
        rows.append(StudyRow(size=m, mean_objective=mean, std_objective=std,
                             trials_ok=ok, trials_failed=failures,
                             degenerate_std=ok < 2))
    return rows
