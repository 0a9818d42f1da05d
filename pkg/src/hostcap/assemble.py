"""Assembly of the scenario cone programs.

Two program families share one constraint structure: the hosting-capacity
maximization (capacities free, objective max 1'psi stored as min -1'psi) and
the acceptability feasibility test (capacities fixed, zero objective). Per
scenario the constraints are the branch-flow balance and voltage-drop
equalities, the substation-voltage pin, the per-edge conic relaxation of the
loss equation, and the CVaR epigraph rows: per-component anchors with hinge
slacks for upper/lower squared voltage and squared branch flow.

Variable order is capacities (when free), then anchors, then per-scenario
blocks ``P, Q, L, W, t_w_upper, t_w_lower, t_s``; constraint rows are
global-first then scenario-major with a fixed class order. The layout is
deterministic so debug dumps are comparable across runs.

Program metadata records the per-scenario tally: each scenario adds
``7n - 4`` variables and ``9n - 5`` constraint rows (balance, voltage drop,
hinges, slack bounds and the flow-hinge cones; the per-edge relaxation cones
and the substation pin are structural rows tallied separately).
"""

from __future__ import annotations

from dataclasses import dataclass
from warnings import warn

import numpy as np
import scipy.sparse as sp

from .conic import AffineRow, ConicProgram, PsiTerms, soc_rotated
from .errors import BadDelta, DimensionMismatch
from .network import FlowState, RadialNetwork, build_incidence
from .scenarios import ScenarioSet


@dataclass(frozen=True)
class RiskParams:
    """CVaR levels for voltage (nu) and branch-flow (gamma) constraints."""

    nu: float
    gamma: float

    def __post_init__(self):
        for name in ("nu", "gamma"):
            v = float(getattr(self, name))
            if not 0.0 <= v < 1.0:
                raise BadDelta(f"{name} must lie in [0, 1), got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class CvarAnchors:
    """Anchor variables and hinge slacks of the CVaR epigraph encoding."""

    w_upper: np.ndarray    # (n,)
    w_lower: np.ndarray    # (n,)
    s_flow: np.ndarray     # (n-1,)
    t_w_upper: np.ndarray  # (K, n)
    t_w_lower: np.ndarray  # (K, n)
    t_s: np.ndarray        # (K, n-1)


class ProgramLayout:
    """Variable offsets of one assembled program (absolute, 0-based)."""

    def __init__(self, n: int, K: int, with_psi: bool):
        nb = n - 1
        self.n, self.K, self.nb = n, K, nb
        self.with_psi = with_psi
        g0 = nb if with_psi else 0
        self.psi = 0 if with_psi else None
        self.w_up = g0
        self.w_lo = g0 + n
        self.s_fl = g0 + 2 * n
        self.scen0 = g0 + 2 * n + nb
        self.V = 7 * n - 4  # per-scenario variable count
        # scenario-local offsets (add scen_base(k))
        self.P, self.Q, self.L = 0, nb, 2 * nb
        self.W = 3 * nb
        self.t_up = 3 * nb + n
        self.t_lo = 3 * nb + 2 * n
        self.t_s = 3 * nb + 3 * n
        self.n_x = self.scen0 + K * self.V

    def scen_base(self, k: int) -> int:
        return self.scen0 + k * self.V

    def var_map(self) -> dict:
        vm = {}
        if self.with_psi:
            vm["psi"] = slice(0, self.nb)
        vm["w_upper"] = slice(self.w_up, self.w_up + self.n)
        vm["w_lower"] = slice(self.w_lo, self.w_lo + self.n)
        vm["s_flow"] = slice(self.s_fl, self.s_fl + self.nb)
        for k in range(self.K):
            base = self.scen_base(k)
            for name, off, ln in (("P", self.P, self.nb), ("Q", self.Q, self.nb),
                                  ("L", self.L, self.nb), ("W", self.W, self.n),
                                  ("t_w_upper", self.t_up, self.n),
                                  ("t_w_lower", self.t_lo, self.n),
                                  ("t_s", self.t_s, self.nb)):
                vm[f"{name}[{k}]"] = slice(base + off, base + off + ln)
        return vm


class _Coo:
    """COO triplet accumulator with a scenario tiling helper."""

    def __init__(self, K: int, row_stride: int, col_stride: int):
        self.K = K
        self.row_stride = row_stride
        self.col_stride = col_stride
        self.rows, self.cols, self.vals = [], [], []

    def put(self, rows, cols, vals):
        """Single (non-tiled) triplets at absolute positions."""
        rows = np.asarray(rows, dtype=int).ravel()
        self.rows.append(rows)
        self.cols.append(np.broadcast_to(np.asarray(cols, dtype=int),
                                         rows.shape).ravel().copy())
        self.vals.append(np.broadcast_to(np.asarray(vals, dtype=float),
                                         rows.shape).ravel().copy())

    def tile(self, rows0, cols0, vals0=None, *, scen_cols: bool,
             scen_rows: bool = True, vals_per_k=None):
        """Repeat a k=0 triplet template across all K scenarios.

        ``rows0``/``cols0`` are absolute positions for scenario 0;
        per-scenario rows advance by the row stride, per-scenario columns by
        the column stride (shared columns stay put). ``vals_per_k`` supplies
        a (K, T) array when coefficients vary by scenario.
        """
        rows0 = np.asarray(rows0, dtype=int).ravel()
        cols0 = np.broadcast_to(np.asarray(cols0, dtype=int), rows0.shape).ravel()
        ks = np.arange(self.K)[:, None]
        shape = (self.K, rows0.size)
        rows = np.broadcast_to(
            rows0[None, :] + (self.row_stride * ks if scen_rows else 0),
            shape).ravel()
        cols = np.broadcast_to(
            cols0[None, :] + (self.col_stride * ks if scen_cols else 0),
            shape).ravel()
        if vals_per_k is None:
            vals = np.tile(np.broadcast_to(np.asarray(vals0, dtype=float),
                                           rows0.shape).ravel(), self.K)
        else:
            vals = np.asarray(vals_per_k, dtype=float).reshape(self.K, -1).ravel()
        self.rows.append(rows)
        self.cols.append(cols)
        self.vals.append(vals)

    def matrix(self, shape) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(shape)
        return sp.csr_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=shape)


def _build(net: RadialNetwork, scen: ScenarioSet, risk: RiskParams,
           psi_fixed: np.ndarray | None, objective: str) -> ConicProgram:
    _check_dims(net, scen)
    n, nb, K = net.n, net.n_branches, scen.K
    lay = ProgramLayout(n, K, with_psi=psi_fixed is None)
    inc = build_incidence(net)
    R, X = net.R, net.X
    alpha, p_D, q_D = scen.alpha, scen.p_D, scen.q_D
    from_idx = net.from_bus - 1
    edge_ids = np.arange(nb)
    bus_ids = np.arange(n)
    base0 = lay.scen_base(0)

    # ---- equalities: per scenario [balance_p (nb), balance_q (nb),
    #                                voltage drop (nb), substation pin (1)]
    E_stride = 3 * nb + 1
    p_eq = K * E_stride
    eq = _Coo(K, row_stride=E_stride, col_stride=lay.V)
    N_coo = sp.coo_matrix(inc.B.T[1:, :])  # flow-balance structure
    eq.tile(N_coo.row, base0 + lay.P + N_coo.col, N_coo.data, scen_cols=True)
    eq.tile(edge_ids, base0 + lay.L + edge_ids, R, scen_cols=True)
    eq.tile(N_coo.row + nb, base0 + lay.Q + N_coo.col, N_coo.data,
            scen_cols=True)
    eq.tile(edge_ids + nb, base0 + lay.L + edge_ids, X, scen_cols=True)
    B_coo = sp.coo_matrix(inc.B)
    eq.tile(B_coo.row + 2 * nb, base0 + lay.W + B_coo.col, B_coo.data,
            scen_cols=True)
    eq.tile(edge_ids + 2 * nb, base0 + lay.P + edge_ids, -2.0 * R,
            scen_cols=True)
    eq.tile(edge_ids + 2 * nb, base0 + lay.Q + edge_ids, -2.0 * X,
            scen_cols=True)
    eq.tile(edge_ids + 2 * nb, base0 + lay.L + edge_ids, R**2 + X**2,
            scen_cols=True)
    eq.tile([3 * nb], [base0 + lay.W], [1.0], scen_cols=True)
    if lay.with_psi:
        eq.tile(edge_ids, lay.psi + edge_ids, scen_cols=False,
                vals_per_k=-alpha)
        eq.tile(edge_ids + nb, lay.psi + edge_ids, scen_cols=False,
                vals_per_k=-(net.eta_g[None, :] * alpha))
    A_eq = eq.matrix((p_eq, lay.n_x))

    b_eq = np.zeros((K, E_stride))
    b_eq[:, :nb] = -p_D
    b_eq[:, nb:2 * nb] = -q_D
    b_eq[:, 3 * nb] = net.w_substation
    if psi_fixed is not None:
        b_eq[:, :nb] += alpha * psi_fixed[None, :]
        b_eq[:, nb:2 * nb] += net.eta_g[None, :] * alpha * psi_fixed[None, :]
    b_eq = b_eq.ravel()

    # ---- inequalities: global rows first, then per-scenario rows
    box_rows = 2 * nb if lay.with_psi else 0
    agg_rows = 2 * n + nb
    g_rows = box_rows + agg_rows
    I_stride = 4 * n + nb
    q_in = g_rows + K * I_stride
    iq = _Coo(K, row_stride=I_stride, col_stride=lay.V)
    if lay.with_psi:
        iq.put(edge_ids, lay.psi + edge_ids, -1.0)           # -psi <= 0
        iq.put(nb + edge_ids, lay.psi + edge_ids, 1.0)       # psi <= psi_max
    off_u = box_rows
    off_l = box_rows + n
    off_s = box_rows + 2 * n
    c_nu = 1.0 / ((1.0 - risk.nu) * K)
    c_ga = 1.0 / ((1.0 - risk.gamma) * K)
    iq.put(off_u + bus_ids, lay.w_up + bus_ids, 1.0)
    iq.put(off_l + bus_ids, lay.w_lo + bus_ids, 1.0)
    iq.put(off_s + edge_ids, lay.s_fl + edge_ids, 1.0)
    iq.tile(off_u + bus_ids, base0 + lay.t_up + bus_ids, c_nu,
            scen_cols=True, scen_rows=False)
    iq.tile(off_l + bus_ids, base0 + lay.t_lo + bus_ids, c_nu,
            scen_cols=True, scen_rows=False)
    iq.tile(off_s + edge_ids, base0 + lay.t_s + edge_ids, c_ga,
            scen_cols=True, scen_rows=False)
    # per-scenario hinge and nonnegativity rows
    r0 = g_rows
    iq.tile(r0 + bus_ids, base0 + lay.W + bus_ids, 1.0, scen_cols=True)
    iq.tile(r0 + bus_ids, lay.w_up + bus_ids, -1.0, scen_cols=False)
    iq.tile(r0 + bus_ids, base0 + lay.t_up + bus_ids, -1.0, scen_cols=True)
    iq.tile(r0 + n + bus_ids, base0 + lay.W + bus_ids, -1.0, scen_cols=True)
    iq.tile(r0 + n + bus_ids, lay.w_lo + bus_ids, -1.0, scen_cols=False)
    iq.tile(r0 + n + bus_ids, base0 + lay.t_lo + bus_ids, -1.0, scen_cols=True)
    iq.tile(r0 + 2 * n + bus_ids, base0 + lay.t_up + bus_ids, -1.0,
            scen_cols=True)
    iq.tile(r0 + 3 * n + bus_ids, base0 + lay.t_lo + bus_ids, -1.0,
            scen_cols=True)
    iq.tile(r0 + 4 * n + edge_ids, base0 + lay.t_s + edge_ids, -1.0,
            scen_cols=True)
    A_in = iq.matrix((q_in, lay.n_x))

    b_in = np.zeros(q_in)
    if lay.with_psi:
        b_in[nb:2 * nb] = net.psi_max
    b_in[off_u:off_u + n] = net.W_max
    b_in[off_l:off_l + n] = -net.W_min
    b_in[off_s:off_s + nb] = net.S_max**2

    # ---- cone blocks: per scenario, per edge: loss relaxation then
    #      flow-hinge encoding of t_s >= P^2 + Q^2 - s
    soc_blocks = []
    for k in range(K):
        base = lay.scen_base(k)
        for e in range(nb):
            z1 = AffineRow([base + lay.W + from_idx[e]], [1.0])
            z2 = AffineRow([base + lay.L + e], [1.0])
            Z1 = AffineRow([base + lay.P + e], [1.0])
            Z2 = AffineRow([base + lay.Q + e], [1.0])
            soc_blocks.append(soc_rotated(z1, z2, Z1, Z2))
        for e in range(nb):
            z1 = AffineRow([base + lay.t_s + e, lay.s_fl + e], [1.0, 1.0])
            z2 = AffineRow.constant(1.0)
            Z1 = AffineRow([base + lay.P + e], [1.0])
            Z2 = AffineRow([base + lay.Q + e], [1.0])
            soc_blocks.append(soc_rotated(z1, z2, Z1, Z2))

    # ---- objective
    c = np.zeros(lay.n_x)
    if objective == "max_capacity":
        if not lay.with_psi:
            raise ValueError("capacity objective needs free capacities")
        c[:nb] = -1.0
    elif objective == "min_loss":
        for k in range(K):
            base = lay.scen_base(k)
            c[base + lay.L:base + lay.L + nb] = 1.0
    elif objective != "none":
        raise ValueError(f"unknown objective {objective!r}")

    psi_terms = None
    if psi_fixed is not None:
        cp = _Coo(K, row_stride=E_stride, col_stride=0)
        cp.tile(edge_ids, edge_ids, scen_cols=False, vals_per_k=alpha)
        cp.tile(edge_ids + nb, edge_ids, scen_cols=False,
                vals_per_k=net.eta_g[None, :] * alpha)
        C_psi = cp.matrix((p_eq, nb))
        E_psi = np.asarray(C_psi @ psi_fixed - b_eq)
        vec_dims = np.full(len(soc_blocks), 3, dtype=int)
        soc_G_stack = np.array([r.const for blk in soc_blocks
                                for r in blk.vec_rows])
        soc_g = np.array([blk.scalar_row.const for blk in soc_blocks])
        psi_terms = PsiTerms(C_psi=C_psi, E_psi=E_psi, E=b_in.copy(),
                             soc_G_stack=soc_G_stack, soc_g=soc_g,
                             vec_dims=vec_dims)

    meta = {
        "n": n, "K": K,
        "nu": risk.nu, "gamma": risk.gamma,
        "objective": objective,
        "per_scenario_variables": lay.V,
        "per_scenario_constraints": 9 * n - 5,
        "per_scenario_constraint_breakdown": {
            "real_balance": nb, "reactive_balance": nb, "voltage_drop": nb,
            "voltage_upper_hinge": n, "voltage_lower_hinge": n,
            "flow_hinge": nb, "slack_nonneg": 2 * n + nb,
        },
        "per_scenario_structural_rows": {
            "loss_relaxation_cones": nb, "substation_pin": 1,
        },
        "global_rows": {
            "capacity_box": box_rows, "cvar_aggregate": agg_rows,
        },
        "psi_fixed": None if psi_fixed is None else psi_fixed.tolist(),
    }
    return ConicProgram(c=c, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                        soc_blocks=soc_blocks, var_map=lay.var_map(),
                        meta=meta, psi_terms=psi_terms)


def _check_dims(net: RadialNetwork, scen: ScenarioSet):
    if scen.width != net.n_branches:
        raise DimensionMismatch(
            f"scenario width {scen.width} does not match network with "
            f"{net.n_branches} non-substation buses")


def build_hc_max(net: RadialNetwork, scen: ScenarioSet,
                 risk: RiskParams) -> ConicProgram:
    """Capacity-maximization program: max 1'psi over the risk-feasible set."""
    return _build(net, scen, risk, psi_fixed=None, objective="max_capacity")


def build_acceptability(net: RadialNetwork, scen: ScenarioSet,
                        risk: RiskParams, psi) -> ConicProgram:
    """Feasibility program at fixed capacities psi (zero objective).

    The equality right-hand sides are tagged with their psi-dependence so an
    infeasibility certificate converts into a feasibility cut. Capacities
    outside [0, psi_max] are allowed (the box is informational) but warned
    about.
    """
    psi = np.asarray(psi, dtype=float).ravel()
    if psi.size != net.n_branches:
        raise DimensionMismatch(
            f"psi must have length {net.n_branches}, got {psi.size}")
    if np.any(psi < 0) or np.any(psi > net.psi_max):
        warn("capacities outside [0, psi_max]; testing anyway", stacklevel=2)
    return _build(net, scen, risk, psi_fixed=psi, objective="none")


def build_flow_recovery(net: RadialNetwork, scen: ScenarioSet,
                        risk: RiskParams, psi) -> ConicProgram:
    """Acceptability constraints at fixed psi with a loss-minimizing objective.

    Minimizing total squared current selects a physically meaningful point of
    the relaxed feasible set (the relaxation is tight at such minimizers for
    the instance classes exercised here), which is what flow-state reporting
    and relaxation-gap measurement want. Feasibility is unchanged.
    """
    psi = np.asarray(psi, dtype=float).ravel()
    if psi.size != net.n_branches:
        raise DimensionMismatch(
            f"psi must have length {net.n_branches}, got {psi.size}")
    return _build(net, scen, risk, psi_fixed=psi, objective="min_loss")


def unpack_solution(prog: ConicProgram, x: np.ndarray):
    """Split a solution vector into (psi, anchors, flow states)."""
    vm = prog.var_map
    K = prog.meta["K"]
    psi = x[vm["psi"]].copy() if "psi" in vm else None
    anchors = CvarAnchors(
        w_upper=x[vm["w_upper"]].copy(),
        w_lower=x[vm["w_lower"]].copy(),
        s_flow=x[vm["s_flow"]].copy(),
        t_w_upper=np.stack([x[vm[f"t_w_upper[{k}]"]] for k in range(K)]),
        t_w_lower=np.stack([x[vm[f"t_w_lower[{k}]"]] for k in range(K)]),
        t_s=np.stack([x[vm[f"t_s[{k}]"]] for k in range(K)]),
    )
    states = [FlowState(P=x[vm[f"P[{k}]"]].copy(), Q=x[vm[f"Q[{k}]"]].copy(),
                        L=x[vm[f"L[{k}]"]].copy(), W=x[vm[f"W[{k}]"]].copy())
              for k in range(K)]
    return psi, anchors, states
