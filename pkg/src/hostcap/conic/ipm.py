"""Primal-dual interior-point solver on the homogeneous self-dual embedding.

Solves the standard-form cone program

    minimize    c'x
    subject to  A x = b
                G x + s = h,   s in K = R+^l  x  SOC(d_1) x ... x SOC(d_N)

with Nesterov-Todd scaling and a Mehrotra predictor-corrector. Each
second-order cone block is stored scalar-first: u = (u0, u_bar) with
``||u_bar||_2 <= u0``. The embedding makes infeasibility certificates a
byproduct of the iteration: when the problem is primal infeasible the
returned ray (y, z) satisfies A'y + G'z = 0, z in K and b'y + h'z < 0.

The KKT systems are solved with a sparse LU factorization of the
statically regularized quasidefinite matrix plus iterative refinement
against the unregularized one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def _norm_inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


@dataclass(frozen=True)
class ConeLayout:
    """Row layout of the cone K: leading nonnegative rows, then SOC blocks."""

    nonneg: int
    soc_dims: tuple

    def __post_init__(self):
        if self.nonneg < 0 or any(d < 2 for d in self.soc_dims):
            raise ValueError("cone dims must be nonneg >= 0 and soc dims >= 2")
        starts = self.nonneg + np.concatenate(
            [[0], np.cumsum(self.soc_dims)[:-1]]) if self.soc_dims else np.empty(0, int)
        groups = {}
        for d in sorted(set(self.soc_dims)):
            mask = np.asarray(self.soc_dims) == d
            st = np.asarray(starts[mask], dtype=int)
            groups[d] = st[:, None] + np.arange(d)[None, :]
        object.__setattr__(self, "_groups", groups)

    @property
    def size(self) -> int:
        return self.nonneg + int(sum(self.soc_dims))

    @property
    def degree(self) -> int:
        return self.nonneg + len(self.soc_dims)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[:self.nonneg] = 1.0
        for idx in self._groups.values():
            e[idx[:, 0]] = 1.0
        return e

    def min_margin(self, v: np.ndarray) -> float:
        """Most negative cone margin; >= 0 iff v is a member of K."""
        margins = [np.min(v[:self.nonneg])] if self.nonneg else []
        for idx in self._groups.values():
            U = v[idx]
            margins.append(np.min(U[:, 0] - np.linalg.norm(U[:, 1:], axis=1)))
        return float(min(margins)) if margins else np.inf

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.size)
        out[:self.nonneg] = u[:self.nonneg] * v[:self.nonneg]
        for idx in self._groups.items():
            d, ix = idx
            U, V = u[ix], v[ix]
            out[ix[:, 0]] = np.sum(U * V, axis=1)
            out_bar = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
            out[ix[:, 1:]] = out_bar
        return out

    def solve_product(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve lam o u = d for u (lam in interior of K)."""
        out = np.empty(self.size)
        out[:self.nonneg] = d[:self.nonneg] / lam[:self.nonneg]
        for dim, ix in self._groups.items():
            Lm, D = lam[ix], d[ix]
            l0, lb = Lm[:, 0], Lm[:, 1:]
            rho = l0**2 - np.sum(lb * lb, axis=1)
            u0 = (l0 * D[:, 0] - np.sum(lb * D[:, 1:], axis=1)) / rho
            ub = (D[:, 1:] - u0[:, None] * lb) / l0[:, None]
            out[ix[:, 0]] = u0
            out[ix[:, 1:]] = ub
        return out

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest alpha with u + alpha*du in K (u interior)."""
        alpha = np.inf
        if self.nonneg:
            un, dn = u[:self.nonneg], du[:self.nonneg]
            neg = dn < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-un[neg] / dn[neg])))
        for dim, ix in self._groups.items():
            U, D = u[ix], du[ix]
            a = D[:, 0]**2 - np.sum(D[:, 1:]**2, axis=1)
            b = 2.0 * (U[:, 0] * D[:, 0] - np.sum(U[:, 1:] * D[:, 1:], axis=1))
            c = U[:, 0]**2 - np.sum(U[:, 1:]**2, axis=1)
            c = np.maximum(c, 0.0)
            disc = b * b - 4.0 * a * c
            with np.errstate(invalid="ignore", divide="ignore"):
                sq = np.sqrt(np.maximum(disc, 0.0))
                for roots in ((-b - sq), (-b + sq)):
                    r = np.where((np.abs(a) > 0) & (disc >= 0), roots / (2.0 * a), np.inf)
                    pos = r > 1e-14
                    if np.any(pos):
                        alpha = min(alpha, float(np.min(r[pos])))
                lin = np.where((a == 0) & (b < 0), -c / np.where(b < 0, b, -1.0), np.inf)
                pos = lin > 1e-14
                if np.any(pos):
                    alpha = min(alpha, float(np.min(lin[pos])))
            d0neg = D[:, 0] < 0
            if np.any(d0neg):
                alpha = min(alpha, float(np.min(-U[d0neg, 0] / D[d0neg, 0])))
        return alpha


class _NTScaling:
    """Nesterov-Todd scaling point machinery for R+^l x SOC products."""

    def __init__(self, cone: ConeLayout, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        l = cone.nonneg
        self.w_nn = np.sqrt(s[:l] / z[:l]) if l else np.empty(0)
        self.lmbda = np.empty(cone.size)
        self.lmbda[:l] = np.sqrt(s[:l] * z[:l])
        self.soc = {}
        for dim, ix in cone._groups.items():
            S, Z = s[ix], z[ix]
            snorm2 = S[:, 0]**2 - np.sum(S[:, 1:]**2, axis=1)
            znorm2 = Z[:, 0]**2 - np.sum(Z[:, 1:]**2, axis=1)
            if np.any(snorm2 <= 0) or np.any(znorm2 <= 0):
                raise FloatingPointError("cone iterate left the interior")
            snorm, znorm = np.sqrt(snorm2), np.sqrt(znorm2)
            Sb, Zb = S / snorm[:, None], Z / znorm[:, None]
            gamma = np.sqrt((1.0 + np.sum(Sb * Zb, axis=1)) / 2.0)
            wbar = np.empty_like(S)
            wbar[:, 0] = (Sb[:, 0] + Zb[:, 0]) / (2.0 * gamma)
            wbar[:, 1:] = (Sb[:, 1:] - Zb[:, 1:]) / (2.0 * gamma[:, None])
            eta = np.sqrt(snorm / znorm)
            self.soc[dim] = (wbar, eta)
            lam_blk = self._apply_soc(dim, Z, eta, wbar)
            self.lmbda[ix] = lam_blk

    @staticmethod
    def _apply_soc(dim, U, eta, wbar, inverse=False):
        """eta^{+-1} * Wbar^{+-1} applied rowwise to U."""
        w0, wb = wbar[:, 0], wbar[:, 1:]
        dot = np.sum(wb * U[:, 1:], axis=1)
        out = np.empty_like(U)
        if not inverse:
            out[:, 0] = w0 * U[:, 0] + dot
            out[:, 1:] = (U[:, :1] * wb + U[:, 1:]
                          + (dot / (1.0 + w0))[:, None] * wb)
            out *= eta[:, None]
        else:
            out[:, 0] = w0 * U[:, 0] - dot
            out[:, 1:] = (-U[:, :1] * wb + U[:, 1:]
                          + (dot / (1.0 + w0))[:, None] * wb)
            out /= eta[:, None]
        return out

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        """W v (or W^{-1} v); W is symmetric."""
        out = np.empty(self.cone.size)
        l = self.cone.nonneg
        out[:l] = v[:l] / self.w_nn if inverse else v[:l] * self.w_nn
        for dim, ix in self.cone._groups.items():
            wbar, eta = self.soc[dim]
            out[ix] = self._apply_soc(dim, v[ix], eta, wbar, inverse=inverse)
        return out

    def w_squared_matrix(self) -> sp.csc_matrix:
        """W'W = W^2 as a sparse block-diagonal matrix."""
        cone = self.cone
        rows, cols, data = [], [], []
        l = cone.nonneg
        if l:
            idx = np.arange(l)
            rows.append(idx)
            cols.append(idx)
            data.append(self.w_nn**2)
        for dim, ix in cone._groups.items():
            wbar, eta = self.soc[dim]
            J = np.diag(np.concatenate([[1.0], -np.ones(dim - 1)]))
            blocks = (2.0 * wbar[:, :, None] * wbar[:, None, :] - J[None]) \
                * (eta**2)[:, None, None]
            rows.append(np.repeat(ix, dim, axis=1).reshape(-1))
            cols.append(np.tile(ix, (1, dim)).reshape(-1))
            data.append(blocks.reshape(-1))
        if not rows:
            return sp.csc_matrix((0, 0))
        return sp.csc_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(cone.size, cone.size))


@dataclass
class IpmOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    infeas_cert_tol: float = 1e-8   # stationarity gate on normalized rays
    infeas_margin: float = 1e-7     # minimum normalized certificate margin
    kkt_reg: float = 1e-8
    step_frac: float = 0.99
    equilibrate: bool = True
    verbose: bool = False


@dataclass
class IpmResult:
    status: str  # optimal | infeasible | infeasible_no_certificate | unbounded | numerical_failure
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    s: np.ndarray | None = None
    objective: float = np.nan
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    ray_y: np.ndarray | None = None  # primal-infeasibility certificate
    ray_z: np.ndarray | None = None
    ray_x: np.ndarray | None = None  # dual-infeasibility (unboundedness) ray


def _ruiz_equilibrate(A, b, G, h, c, cone: ConeLayout, iters: int = 8):
    """Ruiz row/column equilibration; SOC rows share one scale per block."""
    n = c.size
    p, m = A.shape[0], G.shape[0]
    d = np.ones(n)
    e_rows = np.ones(p)
    f_rows = np.ones(m)
    A = A.tocsr(copy=True)
    G = G.tocsr(copy=True)

    def _row_max(M):
        out = np.zeros(M.shape[0])
        if M.nnz:
            Mabs = abs(M)
            out = np.asarray(Mabs.max(axis=1).todense()).ravel()
        return out

    for _ in range(iters):
        ra = _row_max(A)
        rg = _row_max(G)
        # one scale per SOC block keeps the cone invariant
        if cone.soc_dims:
            pos = cone.nonneg
            for dim in cone.soc_dims:
                blk = slice(pos, pos + dim)
                rg[blk] = np.max(rg[blk])
                pos += dim
        sa = 1.0 / np.sqrt(np.where(ra > 0, ra, 1.0))
        sg = 1.0 / np.sqrt(np.where(rg > 0, rg, 1.0))
        A = sp.diags(sa) @ A
        G = sp.diags(sg) @ G
        e_rows *= sa
        f_rows *= sg
        stacked = sp.vstack([A, G]).tocsc() if m or p else None
        if stacked is not None and stacked.nnz:
            cm = np.zeros(n)
            Mabs = abs(stacked)
            cm = np.asarray(Mabs.max(axis=0).todense()).ravel()
        else:
            cm = np.ones(n)
        sc = 1.0 / np.sqrt(np.where(cm > 0, cm, 1.0))
        A = A @ sp.diags(sc)
        G = G @ sp.diags(sc)
        d *= sc
    b = e_rows * b
    h = f_rows * h
    c = d * c
    return A.tocsr(), b, G.tocsr(), h, c, d, e_rows, f_rows


def solve_hsde(c, A, b, G, h, cone: ConeLayout,
               opts: IpmOptions | None = None) -> IpmResult:
    """Solve the standard-form cone program; see module docstring."""
    opts = opts or IpmOptions()
    c = np.asarray(c, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    h = np.asarray(h, dtype=float).ravel()
    n = c.size
    A = sp.csr_matrix(A) if A is not None else sp.csr_matrix((0, n))
    G = sp.csr_matrix(G) if G is not None else sp.csr_matrix((0, n))
    p, m = A.shape[0], G.shape[0]
    if G.shape[1] != n or A.shape[1] != n or b.size != p or h.size != m:
        raise ValueError("inconsistent program dimensions")
    if cone.size != m:
        raise ValueError("cone size does not match the number of cone rows")

    if opts.equilibrate and (m or p):
        A_s, b_s, G_s, h_s, c_s, col_d, row_e, row_f = _ruiz_equilibrate(
            A, b, G, h, c, cone)
    else:
        A_s, b_s, G_s, h_s, c_s = A, b, G, h, c
        col_d = np.ones(n)
        row_e = np.ones(p)
        row_f = np.ones(m)
    sigma_c = max(_norm_inf(c_s), 1e-12)
    c_s = c_s / sigma_c

    x = np.zeros(n)
    y = np.zeros(p)
    z = cone.identity()
    s = cone.identity()
    tau, kappa = 1.0, 1.0
    deg = cone.degree + 1

    norm_b = _norm_inf(b_s)
    norm_h = _norm_inf(h_s)
    norm_c = _norm_inf(c_s)

    def _unscale_primal(xv):
        return col_d * xv

    def _unscale_duals(yv, zv):
        # scaled stationarity A_s'y + G_s'z + (Dc)/sigma_c = 0 maps back with
        # a sigma_c gain on the multipliers
        return sigma_c * row_e * yv, sigma_c * row_f * zv

    def _certificate_quality(yv, zv):
        """Normalized stationarity residual and margin of a candidate ray."""
        y0, z0 = _unscale_duals(yv, zv)
        scale = max(_norm_inf(y0), _norm_inf(z0))
        if scale <= 0:
            return np.inf, -np.inf, y0, z0
        stat = _norm_inf(A.T @ y0 + G.T @ z0) / scale
        margin = -(float(b @ y0) + float(h @ z0)) / scale
        return stat, margin, y0, z0

    best = {"mu": np.inf, "stall": 0}
    status = "numerical_failure"
    result = IpmResult(status=status)
    it = 0
    for it in range(opts.max_iter):
        r_x = A_s.T @ y + G_s.T @ z + c_s * tau
        r_y = A_s @ x - b_s * tau
        r_z = G_s @ x + s - h_s * tau
        cx = float(c_s @ x)
        by = float(b_s @ y)
        hz = float(h_s @ z)
        r_tau = kappa + cx + by + hz
        mu = (float(s @ z) + tau * kappa) / deg

        # unscaled convergence measures
        xp = x / tau
        res_py = _norm_inf(A_s @ xp - b_s) / (1.0 + norm_b)
        res_pz = _norm_inf(G_s @ xp + s / tau - h_s) / (1.0 + norm_h)
        res_d = _norm_inf(A_s.T @ (y / tau) + G_s.T @ (z / tau) + c_s) / (1.0 + norm_c)
        pobj = cx / tau
        dobj = -(by + hz) / tau
        rel_gap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
        abs_gap = float(s @ z) / tau**2
        if opts.verbose:
            print(f"iter {it:3d} mu={mu:9.2e} pres={max(res_py, res_pz):9.2e} "
                  f"dres={res_d:9.2e} gap={rel_gap:9.2e} tau={tau:8.2e} "
                  f"kappa={kappa:8.2e}")

        if (max(res_py, res_pz) <= opts.feas_tol and res_d <= opts.feas_tol
                and (rel_gap <= opts.gap_tol or abs_gap <= opts.gap_tol)):
            x_u = _unscale_primal(xp)
            y_u, z_u = _unscale_duals(y / tau, z / tau)
            s_u = (s / tau) / np.where(row_f > 0, row_f, 1.0)
            result = IpmResult(
                status="optimal", x=x_u, y=y_u, z=z_u, s=s_u,
                objective=float(c @ x_u), iterations=it,
                residuals={"primal": max(res_py, res_pz), "dual": res_d,
                           "rel_gap": rel_gap})
            return result

        # primal infeasibility: dual improving ray
        if by + hz < 0:
            stat, margin, y0, z0 = _certificate_quality(y, z)
            if stat <= opts.infeas_cert_tol and margin >= opts.infeas_margin:
                scale = max(_norm_inf(y0), _norm_inf(z0))
                result = IpmResult(
                    status="infeasible", ray_y=y0 / scale, ray_z=z0 / scale,
                    iterations=it,
                    residuals={"cert_stat": stat, "cert_margin": margin})
                return result
        # dual infeasibility: primal improving ray (unbounded problem)
        if cx < 0:
            x0 = _unscale_primal(x)
            nx = _norm_inf(x0)
            if nx > 0:
                x0 = x0 / nx
                margin_u = -float(c @ x0) / max(1.0, _norm_inf(c))
                res_ray = _norm_inf(A @ x0)
                cone_viol = max(0.0, -cone.min_margin(-(G @ x0))) if m else 0.0
                if (margin_u >= opts.infeas_margin
                        and max(res_ray, cone_viol) <= opts.feas_tol):
                    result = IpmResult(status="unbounded", ray_x=x0,
                                       iterations=it)
                    return result

        # stall bookkeeping
        if mu < 0.9 * best["mu"]:
            best["mu"] = mu
            best["stall"] = 0
        else:
            best["stall"] += 1
        if best["stall"] >= 25:
            break

        try:
            scaling = _NTScaling(cone, s, z)
        except FloatingPointError:
            break
        H = scaling.w_squared_matrix()
        reg = opts.kkt_reg
        K0 = sp.bmat(
            [[None, A_s.T if p else None, G_s.T if m else None],
             [A_s if p else None, None, None],
             [G_s if m else None, None, -H if m else None]],
            format="csc")
        reg_vec = np.concatenate([
            np.full(n, reg), np.full(p, -reg), np.full(m, -reg)])
        K_reg = (K0 + sp.diags(reg_vec)).tocsc()
        lu = None
        for bump in range(5):
            try:
                # diagonal pivoting keeps the symbolic fill of the
                # quasidefinite system; refinement recovers accuracy
                lu = spla.splu(K_reg, permc_spec="MMD_AT_PLUS_A",
                               diag_pivot_thresh=0.0,
                               options={"SymmetricMode": True})
                break
            except RuntimeError:
                reg *= 100.0
                K_reg = (K0 + sp.diags(np.sign(reg_vec) * reg)).tocsc()
        if lu is None:
            break

        def kkt_solve(rx, ry, rz):
            rhs = np.concatenate([rx, ry, rz])
            u = lu.solve(rhs)
            for _ in range(3):
                rres = rhs - K0 @ u
                if _norm_inf(rres) <= 1e-13 * (1.0 + _norm_inf(rhs)):
                    break
                du = lu.solve(rres)
                if not np.all(np.isfinite(du)):
                    break
                u += du
            return u[:n], u[n:n + p], u[n + p:]

        # constant-column solve for the tau elimination
        u1x, u1y, u1z = kkt_solve(-c_s, b_s, h_s)
        den = float(c_s @ u1x + b_s @ u1y + h_s @ u1z) - kappa / tau

        lam = scaling.lmbda
        lam_lam = cone.product(lam, lam)

        def direction(d_x, d_y, d_z, d_tau, d_s, d_kappa):
            wl = scaling.apply(cone.solve_product(lam, d_s), inverse=False)
            vx, vy, vz = kkt_solve(d_x, d_y, d_z - wl)
            num = d_tau - d_kappa / tau - float(c_s @ vx + b_s @ vy + h_s @ vz)
            if den == 0.0:
                raise FloatingPointError("singular tau elimination")
            dtau = num / den
            dx = vx + dtau * u1x
            dy = vy + dtau * u1y
            dz = vz + dtau * u1z
            ds = scaling.apply(cone.solve_product(lam, d_s)
                               - scaling.apply(dz), inverse=False)
            dkappa = (d_kappa - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        try:
            aff = direction(-r_x, -r_y, -r_z, -r_tau, -lam_lam, -tau * kappa)
        except FloatingPointError:
            break
        dx_a, dy_a, dz_a, ds_a, dtau_a, dkap_a = aff
        alpha_aff = min(cone.max_step(s, ds_a), cone.max_step(z, dz_a))
        if dtau_a < 0:
            alpha_aff = min(alpha_aff, -tau / dtau_a)
        if dkap_a < 0:
            alpha_aff = min(alpha_aff, -kappa / dkap_a)
        alpha_aff = min(alpha_aff, 1.0)
        sigma = min(max((1.0 - alpha_aff)**3, 1e-8), 0.9999)

        corr = cone.product(scaling.apply(ds_a, inverse=True),
                            scaling.apply(dz_a))
        d_s_comb = -lam_lam - corr + sigma * mu * cone.identity()
        d_kap_comb = -tau * kappa - dtau_a * dkap_a + sigma * mu
        fac = 1.0 - sigma
        try:
            comb = direction(-fac * r_x, -fac * r_y, -fac * r_z, -fac * r_tau,
                             d_s_comb, d_kap_comb)
        except FloatingPointError:
            break
        dx, dy, dz, ds, dtau, dkap = comb
        alpha = min(cone.max_step(s, ds), cone.max_step(z, dz))
        if dtau < 0:
            alpha = min(alpha, -tau / dtau)
        if dkap < 0:
            alpha = min(alpha, -kappa / dkap)
        alpha = min(opts.step_frac * alpha, 1.0)
        if alpha <= 1e-9:
            break

        x += alpha * dx
        y += alpha * dy
        z += alpha * dz
        s += alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkap

    # no clean exit: classify what we can from the final iterate
    by = float(b_s @ y)
    hz = float(h_s @ z)
    if by + hz < 0:
        stat, margin, y0, z0 = _certificate_quality(y, z)
        if stat <= opts.infeas_cert_tol and margin >= opts.infeas_margin:
            scale = max(_norm_inf(y0), _norm_inf(z0))
            return IpmResult(status="infeasible", ray_y=y0 / scale,
                             ray_z=z0 / scale, iterations=it,
                             residuals={"cert_stat": stat, "cert_margin": margin})
        if stat <= 1e-5 and margin > 0 and kappa > 1e3 * tau:
            return IpmResult(status="infeasible_no_certificate",
                             iterations=it,
                             residuals={"cert_stat": stat, "cert_margin": margin})
    return IpmResult(status="numerical_failure", iterations=it)
