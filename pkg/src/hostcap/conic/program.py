"""Standard-form conic programs and infeasibility certificates.

A program is

    minimize    c'x
    subject to  A_eq x = b_eq
                A_in x <= b_in
                (F_i x + G_i, f_i'x + g_i) in K_SO,   i = 1..I

where K_SO is the second-order cone {(y, t): ||y||_2 <= t}. Programs carry a
named variable map and, for acceptability problems, the capacity-dependent
terms needed to turn dual improving rays into feasibility cuts: equality
right-hand sides have the form ``b_eq = C_psi psi - E_psi``.

The dual improving ray of an infeasible program is the multiplier tuple
(lam, mu, {mu1_i, mu2_i}) with mu >= 0, (mu1_i, mu2_i) in K_SO,

    A_in' mu = A_eq' lam + sum_i (F_i' mu1_i + f_i mu2_i)

and positive ray value

    value(psi) = (C_psi psi - E_psi)' lam - b_in' mu
                 - sum_i (G_i' mu1_i + g_i mu2_i)  >  0.

``value`` is affine in psi with gradient ``C_psi' lam``, which is what the
acceptance engine cuts use.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionMismatch, InvalidCertificate
from .ipm import ConeLayout, IpmOptions, solve_hsde


class AffineRow:
    """Sparse affine functional a'x + const of the program variables."""

    __slots__ = ("idx", "val", "const")

    def __init__(self, idx=(), val=(), const: float = 0.0):
        self.idx = np.asarray(idx, dtype=int).ravel()
        self.val = np.asarray(val, dtype=float).ravel()
        if self.idx.size != self.val.size:
            raise DimensionMismatch("index/value lengths differ")
        self.const = float(const)

    @classmethod
    def constant(cls, value: float) -> "AffineRow":
        return cls((), (), value)

    def __add__(self, other: "AffineRow") -> "AffineRow":
        return AffineRow(np.concatenate([self.idx, other.idx]),
                         np.concatenate([self.val, other.val]),
                         self.const + other.const)

    def __neg__(self) -> "AffineRow":
        return AffineRow(self.idx, -self.val, -self.const)

    def __sub__(self, other: "AffineRow") -> "AffineRow":
        return self + (-other)

    def scaled(self, factor: float) -> "AffineRow":
        return AffineRow(self.idx, factor * self.val, factor * self.const)

    def value_at(self, x: np.ndarray) -> float:
        return float(x[self.idx] @ self.val) + self.const


@dataclass(frozen=True)
class SocBlockDef:
    """One second-order cone block in row form, scalar row last.

    ``vec_rows`` are the norm-part affine rows, ``scalar_row`` the bound.
    Membership at a point means ||vec(x)||_2 <= scalar(x).
    """

    vec_rows: tuple
    scalar_row: AffineRow

    def member(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        vec = np.array([r.value_at(x) for r in self.vec_rows])
        return bool(np.linalg.norm(vec) <= self.scalar_row.value_at(x) + tol)

    def margin(self, x) -> float:
        """scalar(x) - ||vec(x)||; nonnegative inside the cone."""
        x = np.asarray(x, dtype=float)
        vec = np.array([r.value_at(x) for r in self.vec_rows])
        return self.scalar_row.value_at(x) - float(np.linalg.norm(vec))


def soc_rotated(z1: AffineRow, z2: AffineRow, Z1: AffineRow,
                Z2: AffineRow) -> SocBlockDef:
    """Second-order cone block equivalent to z1*z2 >= Z1^2 + Z2^2, z1+z2 >= 0.

    Emits ((2*Z1, 2*Z2, z1 - z2), z1 + z2) as a 4-row cone block.
    """
    return SocBlockDef(
        vec_rows=(Z1.scaled(2.0), Z2.scaled(2.0), z1 - z2),
        scalar_row=z1 + z2,
    )


def in_soc(vec, scalar: float, tol: float = 0.0) -> bool:
    """Membership test for a constant second-order cone vector."""
    return bool(np.linalg.norm(np.asarray(vec, dtype=float)) <= scalar + tol)


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    INFEASIBLE_NO_CERTIFICATE = "infeasible_no_certificate"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class Certificate:
    """Dual improving ray, normalized so the stacked multipliers have
    infinity-norm one. ``mu1_stack`` concatenates the cone vector parts in
    block order; ``mu2`` holds the cone scalar parts."""

    lam: np.ndarray
    mu: np.ndarray
    mu1_stack: np.ndarray
    mu2: np.ndarray
    vec_dims: np.ndarray  # norm-part length per cone block
    stat_residual: float = np.nan
    margin: float = np.nan

    def stacked_norm(self) -> float:
        parts = [self.lam, self.mu, self.mu1_stack, self.mu2]
        return max((float(np.max(np.abs(p))) for p in parts if p.size),
                   default=0.0)

    def scaled(self, factor: float) -> "Certificate":
        return Certificate(self.lam * factor, self.mu * factor,
                           self.mu1_stack * factor, self.mu2 * factor,
                           self.vec_dims, self.stat_residual, self.margin)

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.lam, self.mu, self.mu1_stack, self.mu2):
            h.update(np.ascontiguousarray(part, dtype=np.float64).tobytes())
        return h.hexdigest()

    def cone_violation(self) -> float:
        """Worst violation of mu >= 0 and ||mu1_i|| <= mu2_i."""
        worst = 0.0
        if self.mu.size:
            worst = max(worst, -float(np.min(self.mu)))
        pos = 0
        for i, d in enumerate(self.vec_dims):
            nrm = float(np.linalg.norm(self.mu1_stack[pos:pos + d]))
            worst = max(worst, nrm - float(self.mu2[i]))
            pos += d
        return worst


@dataclass(frozen=True)
class PsiTerms:
    """Capacity-dependent data of an acceptability program.

    Equality right-hand sides satisfy b_eq = C_psi psi - E_psi; ``E`` is the
    inequality right-hand side and (soc_G_stack, soc_g) the cone constants,
    everything a dual ray needs to be evaluated at an arbitrary psi.
    """

    C_psi: sp.csr_matrix
    E_psi: np.ndarray
    E: np.ndarray
    soc_G_stack: np.ndarray
    soc_g: np.ndarray
    vec_dims: np.ndarray


def dual_objective(cert: Certificate, psi_terms: PsiTerms, psi) -> float:
    """Value of the dual improving ray at capacities psi (affine in psi)."""
    psi = np.asarray(psi, dtype=float).ravel()
    if psi.size != psi_terms.C_psi.shape[1]:
        raise DimensionMismatch(
            f"psi must have length {psi_terms.C_psi.shape[1]}, got {psi.size}")
    if (cert.lam.size != psi_terms.E_psi.size
            or cert.mu.size != psi_terms.E.size
            or cert.mu1_stack.size != psi_terms.soc_G_stack.size):
        raise DimensionMismatch("certificate does not match program terms")
    val = float(cert.lam @ (psi_terms.C_psi @ psi)) \
        - float(cert.lam @ psi_terms.E_psi) \
        - float(cert.mu @ psi_terms.E) \
        - float(cert.mu1_stack @ psi_terms.soc_G_stack) \
        - float(cert.mu2 @ psi_terms.soc_g)
    return val


def cut_coefficients(cert: Certificate, psi_terms: PsiTerms):
    """(a, b) with dual ray value(psi) = a'psi - b."""
    a = psi_terms.C_psi.T @ cert.lam
    b = float(cert.lam @ psi_terms.E_psi) + float(cert.mu @ psi_terms.E) \
        + float(cert.mu1_stack @ psi_terms.soc_G_stack) \
        + float(cert.mu2 @ psi_terms.soc_g)
    return np.asarray(a).ravel(), b


@dataclass
class SolveOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    objective_scale: float = 1.0
    equilibrate: bool = True
    verbose: bool = False

    def ipm(self) -> IpmOptions:
        return IpmOptions(feas_tol=self.feas_tol, gap_tol=self.gap_tol,
                          max_iter=self.max_iter,
                          equilibrate=self.equilibrate, verbose=self.verbose)


@dataclass
class SolveOutcome:
    status: SolveStatus
    x: np.ndarray | None = None
    objective: float = np.nan
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    certificate: Certificate | None = None
    dual_eq: np.ndarray | None = None
    dual_in: np.ndarray | None = None


class ConicProgram:
    """Immutable standard-form cone program with a named variable map."""

    def __init__(self, c, A_eq, b_eq, A_in, b_in, soc_blocks,
                 var_map: dict, meta: dict | None = None,
                 psi_terms: PsiTerms | None = None):
        self.c = np.asarray(c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = sp.csr_matrix(A_eq) if A_eq is not None \
            else sp.csr_matrix((0, n))
        self.b_eq = np.asarray(b_eq, dtype=float).ravel()
        self.A_in = sp.csr_matrix(A_in) if A_in is not None \
            else sp.csr_matrix((0, n))
        self.b_in = np.asarray(b_in, dtype=float).ravel()
        if self.A_eq.shape != (self.b_eq.size, n):
            raise DimensionMismatch("equality block shape mismatch")
        if self.A_in.shape != (self.b_in.size, n):
            raise DimensionMismatch("inequality block shape mismatch")
        self.soc_blocks = tuple(soc_blocks)
        for blk in self.soc_blocks:
            if len(blk.vec_rows) < 1:
                raise DimensionMismatch("SOC block needs a norm part")
        self.var_map = dict(var_map)
        self.meta = dict(meta or {})
        self.psi_terms = psi_terms
        self._check_var_map()
        self._soc_cache = None

    def _check_var_map(self):
        covered = np.zeros(self.n_x, dtype=bool)
        for name, sl in self.var_map.items():
            seg = covered[sl]
            if np.any(seg):
                raise DimensionMismatch(f"variable map overlaps at {name}")
            covered[sl] = True
        if not np.all(covered):
            raise DimensionMismatch("variable map does not cover all variables")

    @property
    def n_x(self) -> int:
        return self.c.size

    @property
    def n_eq(self) -> int:
        return self.b_eq.size

    @property
    def n_in(self) -> int:
        return self.b_in.size

    @property
    def n_soc(self) -> int:
        return len(self.soc_blocks)

    def _soc_matrices(self):
        """Stacked solver-order (scalar first) cone rows and constants."""
        if self._soc_cache is not None:
            return self._soc_cache
        n = self.n_x
        rows_i, cols_i, vals, consts, dims = [], [], [], [], []
        r = 0
        for blk in self.soc_blocks:
            for row in (blk.scalar_row, *blk.vec_rows):
                rows_i.append(np.full(row.idx.size, r, dtype=int))
                cols_i.append(row.idx)
                vals.append(row.val)
                consts.append(row.const)
                r += 1
            dims.append(1 + len(blk.vec_rows))
        if r:
            mat = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows_i),
                                        np.concatenate(cols_i))), shape=(r, n))
        else:
            mat = sp.csr_matrix((0, n))
        self._soc_cache = (mat, np.asarray(consts, dtype=float),
                           np.asarray(dims, dtype=int))
        return self._soc_cache

    def soc_vec_dims(self) -> np.ndarray:
        return np.asarray([len(b.vec_rows) for b in self.soc_blocks], dtype=int)

    def to_cone_form(self):
        """(c, A, b, G, h, layout) for the interior-point solver."""
        soc_rows, soc_consts, soc_dims = self._soc_matrices()
        G = sp.vstack([self.A_in, -soc_rows], format="csr") \
            if soc_rows.shape[0] else self.A_in
        h = np.concatenate([self.b_in, soc_consts])
        layout = ConeLayout(nonneg=self.n_in, soc_dims=tuple(int(d) for d in soc_dims))
        return self.c, self.A_eq, self.b_eq, G, h, layout

    def split_cone_dual(self, z: np.ndarray):
        """Split a solver dual vector into (mu, mu1_stack, mu2)."""
        q = self.n_in
        mu = z[:q].copy()
        z_soc = z[q:]
        _, _, dims = self._soc_matrices()
        starts = np.concatenate([[0], np.cumsum(dims)[:-1]]) if dims.size \
            else np.empty(0, int)
        mu2 = z_soc[starts.astype(int)] if dims.size else np.empty(0)
        vec_mask = np.ones(z_soc.size, dtype=bool)
        if dims.size:
            vec_mask[starts.astype(int)] = False
        mu1_stack = z_soc[vec_mask]
        return mu, mu1_stack, mu2

    def stationarity_residual(self, cert: Certificate) -> float:
        """inf-norm of A_in'mu - A_eq'lam - sum_i(F_i'mu1_i + f_i mu2_i)."""
        soc_rows, _, dims = self._soc_matrices()
        z_soc = np.empty(soc_rows.shape[0])
        pos = 0
        vpos = 0
        for i, d in enumerate(dims):
            z_soc[pos] = cert.mu2[i]
            z_soc[pos + 1:pos + d] = cert.mu1_stack[vpos:vpos + d - 1]
            pos += d
            vpos += d - 1
        r = self.A_in.T @ cert.mu - self.A_eq.T @ cert.lam \
            - soc_rows.T @ z_soc
        return float(np.max(np.abs(r))) if r.size else 0.0

    def certificate_from_ray(self, ray_y, ray_z) -> Certificate:
        """Map a solver ray onto normalized (lam, mu, mu1, mu2) multipliers."""
        lam = -np.asarray(ray_y, dtype=float)
        mu, mu1_stack, mu2 = self.split_cone_dual(np.asarray(ray_z, dtype=float))
        cert = Certificate(lam=lam, mu=mu, mu1_stack=mu1_stack, mu2=mu2,
                           vec_dims=self.soc_vec_dims())
        nrm = cert.stacked_norm()
        if nrm <= 0:
            raise InvalidCertificate("zero dual ray")
        cert = cert.scaled(1.0 / nrm)
        margin = float(self.b_eq @ (-cert.lam)) + float(self.b_in @ cert.mu)
        # ray value = -(b'y + h'z); recompute from program data
        _, consts, dims = self._soc_matrices()
        pos = 0
        vpos = 0
        soc_term = 0.0
        for i, d in enumerate(dims):
            soc_term += consts[pos] * cert.mu2[i]
            soc_term += float(consts[pos + 1:pos + d]
                              @ cert.mu1_stack[vpos:vpos + d - 1])
            pos += d
            vpos += d - 1
        margin = -(margin + soc_term)
        stat = self.stationarity_residual(cert)
        return Certificate(lam=cert.lam, mu=cert.mu, mu1_stack=cert.mu1_stack,
                           mu2=cert.mu2, vec_dims=cert.vec_dims,
                           stat_residual=stat, margin=margin)

    def solve(self, opts: SolveOptions | None = None) -> SolveOutcome:
        opts = opts or SolveOptions()
        c, A, b, G, h, layout = self.to_cone_form()
        scale = float(opts.objective_scale)
        res = solve_hsde(c * scale, A, b, G, h, layout, opts.ipm())
        if res.status == "optimal":
            x = res.x
            return SolveOutcome(
                status=SolveStatus.OPTIMAL, x=x,
                objective=float(self.c @ x), iterations=res.iterations,
                residuals=res.residuals, dual_eq=res.y,
                dual_in=res.z[:self.n_in] if res.z is not None else None)
        if res.status == "infeasible":
            cert = self.certificate_from_ray(res.ray_y, res.ray_z)
            ok = (cert.margin > 0
                  and cert.stat_residual <= 10.0 * opts.feas_tol
                  and cert.cone_violation() <= 10.0 * opts.feas_tol)
            if not ok:
                return SolveOutcome(status=SolveStatus.INFEASIBLE_NO_CERTIFICATE,
                                    iterations=res.iterations,
                                    residuals=res.residuals)
            return SolveOutcome(status=SolveStatus.INFEASIBLE,
                                iterations=res.iterations,
                                residuals=res.residuals, certificate=cert)
        if res.status == "infeasible_no_certificate":
            return SolveOutcome(status=SolveStatus.INFEASIBLE_NO_CERTIFICATE,
                                iterations=res.iterations,
                                residuals=res.residuals)
        if res.status == "unbounded":
            return SolveOutcome(status=SolveStatus.UNBOUNDED,
                                iterations=res.iterations)
        return SolveOutcome(status=SolveStatus.NUMERICAL_FAILURE,
                            iterations=res.iterations)

    def residuals_at(self, x) -> dict:
        """Constraint residuals at a point (positive = violation)."""
        x = np.asarray(x, dtype=float).ravel()
        eq = self.A_eq @ x - self.b_eq
        ineq = self.A_in @ x - self.b_in
        soc_rows, consts, dims = self._soc_matrices()
        vals = soc_rows @ x + consts
        soc_viol = []
        pos = 0
        for d in dims:
            scalar = vals[pos]
            vec = vals[pos + 1:pos + d]
            soc_viol.append(float(np.linalg.norm(vec)) - float(scalar))
            pos += d
        return {
            "eq": float(np.max(np.abs(eq))) if eq.size else 0.0,
            "ineq": float(np.max(ineq)) if ineq.size else 0.0,
            "soc": float(np.max(soc_viol)) if soc_viol else 0.0,
        }

    def dump(self, path) -> None:
        """Sparse text dump: triplets per block, for external cross-checks.

        Format: header line ``conicprogram n_x n_eq n_in n_soc``; then
        sections OBJ (index value), EQ/INEQ (row col value / RHS row value),
        and per cone block SOC k dim followed by row triplets (local row,
        col, value) and CONST entries (local row, value). Local row 0 is the
        cone scalar part.
        """
        soc_rows, consts, dims = self._soc_matrices()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"conicprogram {self.n_x} {self.n_eq} {self.n_in} "
                     f"{self.n_soc}\n")
            fh.write("OBJ\n")
            for i in np.nonzero(self.c)[0]:
                fh.write(f"{i} {self.c[i]!r}\n")
            for name, M, rhs in (("EQ", self.A_eq, self.b_eq),
                                 ("INEQ", self.A_in, self.b_in)):
                fh.write(f"{name}\n")
                coo = M.tocoo()
                for r, cc, v in zip(coo.row, coo.col, coo.data):
                    fh.write(f"{r} {cc} {v!r}\n")
                fh.write(f"{name}_RHS\n")
                for r, v in enumerate(rhs):
                    if v != 0.0:
                        fh.write(f"{r} {v!r}\n")
            pos = 0
            coo = soc_rows.tocoo()
            for k, d in enumerate(dims):
                fh.write(f"SOC {k} {d}\n")
                mask = (coo.row >= pos) & (coo.row < pos + d)
                for r, cc, v in zip(coo.row[mask] - pos, coo.col[mask],
                                    coo.data[mask]):
                    fh.write(f"{r} {cc} {v!r}\n")
                fh.write("CONST\n")
                for r in range(d):
                    if consts[pos + r] != 0.0:
                        fh.write(f"{r} {consts[pos + r]!r}\n")
                pos += d
