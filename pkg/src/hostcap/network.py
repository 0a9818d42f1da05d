"""Radial distribution network model.

Single-phase radial network in per-unit quantities: a spanning tree rooted at
the substation (bus 1), per-edge impedances and thermal limits, per-bus
squared-voltage limits and installable-capacity caps. Also provides the
signed edge-to-node incidence machinery used by the program assembler and an
exact (nonconvex) DistFlow power-flow oracle for small instances.

Bus indices are 1-based at the API and file boundary, with bus 1 the
substation. Edges are canonicalized parent-to-child by BFS from bus 1 and
ordered by child bus, so edge ``e`` (0-based) feeds bus ``e + 2``.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    GraphNotTree,
    NoSolution,
    NonConvergence,
    ParseError,
)


def _as_float_vec(values, length: int, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size != length:
        raise DimensionMismatch(f"{name} must have length {length}, got {v.size}")
    return v


@dataclass(frozen=True)
class RadialNetwork:
    """Radial network data; immutable after construction.

    Edges may be supplied in any order and orientation; the constructor
    orients them away from bus 1 and sorts them by child bus (per-edge
    arrays are permuted along). ``psi_max`` and ``eta_g`` are indexed by
    bus 2..n.
    """

    n: int
    edges: tuple  # ((from_bus, to_bus), ...) 1-based, canonical order
    R: np.ndarray
    X: np.ndarray
    S_max: np.ndarray
    W_min: np.ndarray
    W_max: np.ndarray
    psi_max: np.ndarray
    eta_g: np.ndarray
    w_substation: float = 1.0

    def __post_init__(self):
        n = int(self.n)
        if n < 2:
            raise GraphNotTree("network needs at least a substation and one bus")
        nb = n - 1
        edges = [(int(a), int(b)) for a, b in self.edges]
        if len(edges) != nb:
            raise GraphNotTree(f"expected {nb} edges for {n} buses, got {len(edges)}")
        for a, b in edges:
            if not (1 <= a <= n and 1 <= b <= n):
                raise GraphNotTree(f"edge ({a},{b}) references a bus outside 1..{n}")
            if a == b:
                raise GraphNotTree(f"self-loop at bus {a}")

        R = _as_float_vec(self.R, nb, "R")
        X = _as_float_vec(self.X, nb, "X")
        S_max = _as_float_vec(self.S_max, nb, "S_max")
        W_min = _as_float_vec(self.W_min, n, "W_min")
        W_max = _as_float_vec(self.W_max, n, "W_max")
        psi_max = _as_float_vec(self.psi_max, nb, "psi_max")
        eta_g = _as_float_vec(self.eta_g, nb, "eta_g")

        if np.any(R < 0):
            raise ValueError("R must be nonnegative")
        if np.any(S_max <= 0):
            raise ValueError("S_max must be positive")
        if np.any(W_min <= 0) or np.any(W_min >= W_max):
            raise ValueError("limits must satisfy 0 < W_min < W_max")
        if np.any(psi_max < 0):
            raise ValueError("psi_max must be nonnegative")
        if float(self.w_substation) <= 0:
            raise ValueError("w_substation must be positive")

        # orient parent->child by BFS from bus 1, then order edges by child
        adj = {}
        for e, (a, b) in enumerate(edges):
            adj.setdefault(a, []).append((b, e))
            adj.setdefault(b, []).append((a, e))
        parent_edge = {}  # child bus -> original edge index
        parent_bus = {}
        seen = {1}
        queue = deque([1])
        while queue:
            u = queue.popleft()
            for v, e in adj.get(u, ()):
                if v in seen:
                    continue
                seen.add(v)
                parent_edge[v] = e
                parent_bus[v] = u
                queue.append(v)
        if len(seen) != n:
            raise GraphNotTree("edge set does not connect all buses to bus 1")
        # connected with n-1 edges and no repeated discovery => spanning tree;
        # still reject multi-edges that masquerade as trees
        if len(parent_edge) != nb:
            raise GraphNotTree("edge set contains a cycle or duplicate edge")

        order = [parent_edge[child] for child in range(2, n + 1)]
        canon_edges = tuple((parent_bus[child], child) for child in range(2, n + 1))
        perm = np.asarray(order, dtype=int)

        for name, arr in (("R", R[perm]), ("X", X[perm]), ("S_max", S_max[perm])):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "edges", canon_edges)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "W_min", W_min)
        object.__setattr__(self, "W_max", W_max)
        object.__setattr__(self, "psi_max", psi_max)
        object.__setattr__(self, "eta_g", eta_g)
        object.__setattr__(self, "w_substation", float(self.w_substation))
        for arr in (self.R, self.X, self.S_max, self.W_min, self.W_max,
                    self.psi_max, self.eta_g):
            arr.setflags(write=False)

    @property
    def n_branches(self) -> int:
        return self.n - 1

    def digest(self) -> str:
        """Canonical content hash (orientation- and order-independent)."""
        h = hashlib.sha256()
        h.update(np.array([self.n], dtype=np.int64).tobytes())
        h.update(np.asarray(self.edges, dtype=np.int64).tobytes())
        for arr in (self.R, self.X, self.S_max, self.W_min, self.W_max,
                    self.psi_max, self.eta_g,
                    np.array([self.w_substation])):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()

    @property
    def from_bus(self) -> np.ndarray:
        """Parent (sending-end) bus per canonical edge, 1-based."""
        return np.asarray([a for a, _ in self.edges], dtype=int)

    @property
    def to_bus(self) -> np.ndarray:
        return np.asarray([b for _, b in self.edges], dtype=int)


@dataclass(frozen=True)
class IncidenceDecomposition:
    """Signed edge-to-node incidence matrix and its elementwise parts.

    ``B[e, j]`` is +1 at the edge's from-bus, -1 at its to-bus (0-based
    columns for buses 1..n). ``pi`` is the drop-first-row operator realized
    as an index map: ``vec[pi]`` removes the substation entry.
    """

    B: np.ndarray
    B_plus: np.ndarray
    B_minus: np.ndarray
    pi: np.ndarray


def build_incidence(net: RadialNetwork) -> IncidenceDecomposition:
    """Incidence decomposition of a radial network (canonical edge order)."""
    nb, n = net.n_branches, net.n
    B = np.zeros((nb, n))
    B[np.arange(nb), net.from_bus - 1] = 1.0
    B[np.arange(nb), net.to_bus - 1] = -1.0
    B_plus = np.clip(B, 0.0, None)
    B_minus = np.clip(-B, 0.0, None)
    for arr in (B, B_plus, B_minus):
        arr.setflags(write=False)
    return IncidenceDecomposition(B=B, B_plus=B_plus, B_minus=B_minus,
                                  pi=np.arange(1, n))


def injections(net: RadialNetwork, alpha, p_D, q_D, psi):
    """Net nodal power injections for buses 2..n.

    Solar output scales irradiance with installed capacity (maximum power
    point tracking), with reactive output set by the per-bus power-factor
    coefficient: ``p_inj = alpha*psi - p_D``, ``q_inj = eta_g*alpha*psi - q_D``.
    """
    nb = net.n_branches
    alpha = _as_float_vec(alpha, nb, "alpha")
    p_D = _as_float_vec(p_D, nb, "p_D")
    q_D = _as_float_vec(q_D, nb, "q_D")
    psi = _as_float_vec(psi, nb, "psi")
    gen = alpha * psi
    return gen - p_D, net.eta_g * gen - q_D


@dataclass(frozen=True)
class FlowState:
    """Per-scenario branch flows and voltages.

    ``P``/``Q`` are sending-end real/reactive flows per edge, ``L`` squared
    current magnitudes per edge, ``W`` squared voltage magnitudes per bus.
    """

    P: np.ndarray
    Q: np.ndarray
    L: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        for name in ("P", "Q", "L", "W"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.P.shape == self.Q.shape == self.L.shape):
            raise DimensionMismatch("P, Q, L must share one length")
        if self.W.size != self.P.size + 1:
            raise DimensionMismatch("W must have one more entry than P")


def flow_residuals(net: RadialNetwork, state: FlowState, p_inj, q_inj) -> float:
    """Max componentwise residual of the exact power-flow relations."""
    inc = build_incidence(net)
    nb = net.n_branches
    p_inj = _as_float_vec(p_inj, nb, "p_inj")
    q_inj = _as_float_vec(q_inj, nb, "q_inj")
    P, Q, L, W = state.P, state.Q, state.L, state.W
    rp = (inc.B_plus.T @ P - inc.B_minus.T @ (P - net.R * L))[inc.pi] - p_inj
    rq = (inc.B_plus.T @ Q - inc.B_minus.T @ (Q - net.X * L))[inc.pi] - q_inj
    rw = inc.B @ W - 2.0 * (net.R * P + net.X * Q) + (net.R**2 + net.X**2) * L
    rl = (inc.B_plus @ W) * L - P**2 - Q**2
    return float(max(np.max(np.abs(r)) for r in (rp, rq, rw, rl)))


def solve_power_flow_oracle(net: RadialNetwork, p_inj, q_inj, *,
                            tol: float = 1e-12, max_iter: int = 1000) -> FlowState:
    """Exact DistFlow solution by backward/forward sweep with a fixed point on L.

    Intended for small trees (n <= 10) as a verification oracle. Starting the
    iteration from L = 0 selects the high-voltage solution branch, matching
    physical operation. Raises NoSolution when the iteration diverges (load
    beyond deliverable power) and NonConvergence at the iteration cap.
    """
    nb, n = net.n_branches, net.n
    p_inj = _as_float_vec(p_inj, nb, "p_inj")
    q_inj = _as_float_vec(q_inj, nb, "q_inj")

    # children[e] = edges whose parent bus is edge e's child; edge e <-> bus e+2
    children = [[] for _ in range(nb)]
    root_edges = []
    for e, (a, _) in enumerate(net.edges):
        if a == 1:
            root_edges.append(e)
        else:
            children[a - 2].append(e)
    # reverse topological order: deepest edges first
    parent = {b: a for a, b in net.edges}
    bus_depth = {1: 0}

    def _depth(bus: int) -> int:
        trail = []
        while bus not in bus_depth:
            trail.append(bus)
            bus = parent[bus]
        d = bus_depth[bus]
        for b in reversed(trail):
            d += 1
            bus_depth[b] = d
        return bus_depth[trail[0]] if trail else d

    depth = np.array([_depth(b) for _, b in net.edges], dtype=int)
    back_order = np.argsort(depth, kind="stable")[::-1]
    fwd_order = back_order[::-1]

    L = np.zeros(nb)
    P = np.zeros(nb)
    Q = np.zeros(nb)
    W = np.full(n, net.w_substation)
    for it in range(max_iter):
        # backward: flows from leaves to root with current loss estimate
        for e in back_order:
            P[e] = -p_inj[e] + net.R[e] * L[e] + sum(P[f] for f in children[e])
            Q[e] = -q_inj[e] + net.X[e] * L[e] + sum(Q[f] for f in children[e])
        # forward: voltages from root to leaves
        for e in fwd_order:
            a = net.edges[e][0]
            W[e + 1] = (W[a - 1] - 2.0 * (net.R[e] * P[e] + net.X[e] * Q[e])
                        + (net.R[e]**2 + net.X[e]**2) * L[e])
        W_from = W[net.from_bus - 1]
        if np.any(W_from <= 0) or np.any(~np.isfinite(W_from)):
            raise NoSolution("voltage collapsed during fixed-point iteration")
        L_new = (P**2 + Q**2) / W_from
        if np.any(L_new > 1e12) or np.any(~np.isfinite(L_new)):
            raise NoSolution("squared current diverged; load beyond deliverable power")
        shift = float(np.max(np.abs(L_new - L)))
        L = L_new
        if shift <= tol:
            state = FlowState(P=P.copy(), Q=Q.copy(), L=L.copy(), W=W.copy())
            if flow_residuals(net, state, p_inj, q_inj) > 1e-8:
                raise NonConvergence("sweep converged but residual exceeds 1e-8")
            return state
    raise NonConvergence(f"no fixed point within {max_iter} iterations")


_NETWORK_FIELDS = {"buses", "edges", "w_min", "w_max", "psi_max", "eta_g",
                   "w_substation"}
_EDGE_FIELDS = {"from", "to", "r", "x", "s_max"}


def network_from_dict(doc: dict) -> RadialNetwork:
    """Build a network from the documented JSON schema (strict: unknown keys rejected)."""
    if not isinstance(doc, dict):
        raise ParseError("network document must be a JSON object")
    unknown = set(doc) - _NETWORK_FIELDS
    if unknown:
        raise ParseError(f"unknown network fields: {sorted(unknown)}")
    missing = _NETWORK_FIELDS - {"w_substation"} - set(doc)
    if missing:
        raise ParseError(f"missing network fields: {sorted(missing)}")
    try:
        n = int(doc["buses"])
        raw_edges = doc["edges"]
        edges, R, X, S = [], [], [], []
        for item in raw_edges:
            bad = set(item) - _EDGE_FIELDS
            if bad:
                raise ParseError(f"unknown edge fields: {sorted(bad)}")
            edges.append((int(item["from"]), int(item["to"])))
            R.append(float(item["r"]))
            X.append(float(item["x"]))
            S.append(float(item["s_max"]))
        return RadialNetwork(
            n=n, edges=tuple(edges), R=np.array(R), X=np.array(X),
            S_max=np.array(S),
            W_min=np.array(doc["w_min"], dtype=float),
            W_max=np.array(doc["w_max"], dtype=float),
            psi_max=np.array(doc["psi_max"], dtype=float),
            eta_g=np.array(doc["eta_g"], dtype=float),
            w_substation=float(doc.get("w_substation", 1.0)),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed network document: {exc}") from exc


def network_to_dict(net: RadialNetwork) -> dict:
    return {
        "buses": net.n,
        "edges": [
            {"from": int(a), "to": int(b), "r": float(r), "x": float(x),
             "s_max": float(s)}
            for (a, b), r, x, s in zip(net.edges, net.R, net.X, net.S_max)
        ],
        "w_min": net.W_min.tolist(),
        "w_max": net.W_max.tolist(),
        "psi_max": net.psi_max.tolist(),
        "eta_g": net.eta_g.tolist(),
        "w_substation": net.w_substation,
    }


def load_network(path) -> RadialNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    return network_from_dict(doc)


def save_network(net: RadialNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh, indent=2, sort_keys=True)
        fh.write("\n")
