"""Singular integral operators of the generalized-eigenfunction problem and
their Nystrom solves.

For a monotone profile b, wavenumber k, spectral point y0 and broadening
eps > 0 with side iota = +/-1, the two operators are

    (T f)(y) = int_0^1 G_k(y, z) f(z) / (b(z) - b(y0) + i iota eps) dz,
    (S f)(y) = -(T (b'' f))(y),

and the generalized eigenfunction solves (I - S) psi = T w0.  The pole kernel
is never quadratured directly: one integration by parts turns it into
d/dz log(b(z) - b(y0) + i iota eps), leaving an integrable log singularity
that graded Gauss panels handle geometrically.  Second-order poles get two
integrations by parts, which also produces the explicit boundary log terms
proportional to sinh(k y)/sinh(k).

Every dense system is LU-factored with a condition estimate; a large estimate
signals proximity to a discrete eigenvalue and raises NearSingularResolvent.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve, lapack

from .errors import GradingMissing, NearSingularResolvent, NoConvergence
from .greens import (
    ChannelGrid,
    build_split_quadrature,
    green_dy,
    green_dz,
    green_eval,
    green_prime,
    numerov_bvp,
    sinh_ratio_0,
    sinh_ratio_1,
)
from .profiles import ShearProfile

COND_LIMIT = 1e8


@dataclass(frozen=True)
class SpectralPoint:
    """One (k, y0, eps, iota) resolvent evaluation point; eps > 0, |iota| = 1."""

    k: int
    y0: float
    eps: float
    iota: int = +1

    def __post_init__(self):
        if self.k == 0:
            raise ValueError("k must be a nonzero integer")
        if not (0.0 <= self.y0 <= 1.0):
            raise ValueError("y0 must lie in [0, 1]")
        if not (0.0 < self.eps <= 0.25):
            raise ValueError("eps must lie in (0, 1/4]")
        if self.iota not in (-1, 1):
            raise ValueError("iota must be +1 or -1")


@dataclass
class ResolventSolution:
    """Generalized eigenfunction at one spectral point with diagnostics."""

    point: SpectralPoint
    psi: np.ndarray
    dpsi_dy: np.ndarray
    residual: float
    cond: Optional[float]
    omega0k: Optional[np.ndarray] = None
    dpsi_dy0: Optional[np.ndarray] = None
    backend: str = "nystrom"


@dataclass
class BoundaryFunctionPair:
    """Solutions driven by the boundary data sinh(k y)/sinh(k) profiles."""

    point: SpectralPoint
    phi0: np.ndarray
    phi1: np.ndarray
    residual: float


class ResolventWorkspace:
    """Heavy per-(profile, grid, k) precomputation shared across spectral points.

    Kernel samples, quadrature weights, diagonal-panel splits and the local
    differentiation operator do not depend on (y0, eps, iota); per point only
    the log factors are recomputed, so assembling one operator costs O(n^2).
    """

    def __init__(self, profile: ShearProfile, grid: ChannelGrid, k: int):
        self.profile = profile
        self.grid = grid
        self.k = int(k)
        y = grid.nodes
        w = grid.weights
        self.y = y
        self.bz = np.asarray(profile.b(y), dtype=float)
        self.dbz = np.asarray(profile.db(y), dtype=float)
        self.d2bz = np.asarray(profile.d2b(y), dtype=float)
        self.d3bz = np.asarray(profile.d3b(y), dtype=float)
        self.d4bz = np.asarray(profile.d4b(y), dtype=float)

        n, q = grid.n_total, grid.order
        own = grid.panel_of_node[:, None] == grid.panel_of_node[None, :]
        Y, Z = y[:, None], y[None, :]
        self.Wg = np.where(own, 0.0, green_eval(k, Y, Z) * w[None, :])
        self.Wdz = np.where(own, 0.0, green_dz(k, Y, Z) * w[None, :])
        self.Wgp = np.where(own, 0.0, green_prime(k, Y, Z) * w[None, :])
        self.Wdy = np.where(own, 0.0, green_dy(k, Y, Z) * w[None, :])

        sq = build_split_quadrature(grid)
        self.sq = sq
        self.Gs = green_eval(k, y[:, None], sq.sub_nodes)
        self.Gdzs = green_dz(k, y[:, None], sq.sub_nodes)
        self.Gps = green_prime(k, y[:, None], sq.sub_nodes)
        self.Gdys = green_dy(k, y[:, None], sq.sub_nodes)
        self.bzs = np.asarray(profile.b(sq.sub_nodes), dtype=float)
        self.dbzs = np.asarray(profile.db(sq.sub_nodes), dtype=float)
        self.d2bzs = np.asarray(profile.d2b(sq.sub_nodes), dtype=float)

        # per-panel differentiation blocks
        _, _, _, Dref = grid._ref()
        self.Dblocks = []
        for p in range(grid.n_panels):
            half = 0.5 * (grid.breakpoints[p + 1] - grid.breakpoints[p])
            self.Dblocks.append(Dref / half)
        self.panel_cols = [np.arange(p * q, (p + 1) * q) for p in range(grid.n_panels)]
        self.own_panel = grid.panel_of_node
        self.cols_own = np.array([self.panel_cols[int(p)] for p in self.own_panel])

        # endpoint extrapolation rows for boundary values of node data
        self.row0 = grid.interp_matrix(np.array([0.0]))[0]
        self.row1 = grid.interp_matrix(np.array([1.0]))[0]
        self.sh0 = np.asarray(sinh_ratio_0(k, y))   # sinh(k y)/sinh k
        self.sh1 = np.asarray(sinh_ratio_1(k, y))   # sinh(k (1-y))/sinh k

        self._point_cache: OrderedDict = OrderedDict()

    # -- helpers ---------------------------------------------------------

    def dmat_apply(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values, dtype=complex)
        q = self.grid.order
        for p, D in enumerate(self.Dblocks):
            sl = slice(p * q, (p + 1) * q)
            out[sl] = D @ values[sl]
        return out

    def _blockwise_right_d(self, M: np.ndarray) -> np.ndarray:
        """Return M @ Dblockdiag without forming the dense block matrix."""
        out = np.empty_like(M)
        q = self.grid.order
        for p, D in enumerate(self.Dblocks):
            sl = slice(p * q, (p + 1) * q)
            out[:, sl] = M[:, sl] @ D
        return out

    def log_factors(self, y0: float, eps: float, iota: int):
        shift = -float(self.profile.b(y0)) + 1j * iota * eps
        lam = np.log(self.bz + shift)
        lam_s = np.log(self.bzs + shift)
        lam_y = lam  # evaluation points coincide with quadrature nodes
        return lam, lam_s, lam_y

    def pole_factors(self, y0: float, eps: float, iota: int):
        shift = -float(self.profile.b(y0)) + 1j * iota * eps
        return 1.0 / (self.bz + shift), 1.0 / (self.bzs + shift)

    def check_grading(self, y0: float, eps: float):
        ga = self.grid.graded_about
        p = int(self.grid.find_panel(np.array([y0]))[0])
        width = self.grid.breakpoints[p + 1] - self.grid.breakpoints[p]
        if eps < width and (ga is None or abs(ga - y0) > 1e-9):
            raise GradingMissing(
                f"eps={eps:g} is below the panel width {width:g} at y0={y0:g} "
                "but the grid is not graded about y0"
            )

    def _scatter_split(self, M: np.ndarray, corr: np.ndarray):
        q = self.grid.order
        for i in range(M.shape[0]):
            p = int(self.own_panel[i])
            M[i, p * q : (p + 1) * q] += corr[i]
        return M

    # -- operator assembly ------------------------------------------------

    def t_matrix(self, y0: float, eps: float, iota: int) -> np.ndarray:
        """Dense T as a map on node values, via the log-form quadrature."""
        self.check_grading(y0, eps)
        lam, lam_s, _ = self.log_factors(y0, eps, iota)
        M = self.Wdz * lam[None, :] + self._blockwise_right_d(self.Wg * lam[None, :])
        wsub = self.sq.sub_weights
        corr = np.einsum("im,imj->ij", wsub * self.Gdzs * lam_s, self.sq.interp)
        corr += np.einsum("im,imj->ij", wsub * self.Gs * lam_s, self.sq.dinterp)
        self._scatter_split(M, corr)
        return -M / self.dbz[None, :]

    def t_matrix_direct(self, y0: float, eps: float, iota: int) -> np.ndarray:
        """T by direct pole quadrature; accurate only while eps resolves the mesh."""
        pole, pole_s = self.pole_factors(y0, eps, iota)
        M = self.Wg * pole[None, :]
        corr = np.einsum("im,imj->ij", self.sq.sub_weights * self.Gs * pole_s, self.sq.interp)
        self._scatter_split(M, corr)
        return M

    def dy_t_matrix(self, y0: float, eps: float, iota: int) -> np.ndarray:
        """d/dy of T f as a map on node values of f.

        The derivative carries the explicit local log term -(f/b') log(...) at
        the evaluation point plus two regular kernel quadratures.
        """
        lam, lam_s, lam_y = self.log_factors(y0, eps, iota)
        M = self.Wgp * lam[None, :] + self._blockwise_right_d(self.Wdy * lam[None, :])
        wsub = self.sq.sub_weights
        corr = np.einsum("im,imj->ij", wsub * self.Gps * lam_s, self.sq.interp)
        corr += np.einsum("im,imj->ij", wsub * self.Gdys * lam_s, self.sq.dinterp)
        self._scatter_split(M, corr)
        M = M + np.diag(lam_y)
        return -M / self.dbz[None, :]

    # -- per-point cached operator bundle ----------------------------------

    def point_ops(self, y0: float, eps: float, iota: int):
        key = (round(float(y0), 14), round(float(eps), 16), int(iota))
        if key in self._point_cache:
            self._point_cache.move_to_end(key)
            return self._point_cache[key]
        T = self.t_matrix(y0, eps, iota)
        S = -T * self.d2bz[None, :]
        A = np.eye(self.grid.n_total, dtype=complex) - S
        anorm = np.linalg.norm(A, 1)
        lu, piv = lu_factor(A, check_finite=False)
        rcond, info = lapack.zgecon(lu, anorm, norm="1")
        cond = np.inf if rcond == 0 else 1.0 / float(rcond)
        ops = {"T": T, "S": S, "lu": (lu, piv), "cond": cond}
        self._point_cache[key] = ops
        if len(self._point_cache) > 12:
            self._point_cache.popitem(last=False)
        return ops


def _workspace(profile: ShearProfile, grid: ChannelGrid, k: int) -> ResolventWorkspace:
    key = ("resolvent", id(profile), int(k))
    ws = grid._cache.get(key)
    if ws is None:
        ws = ResolventWorkspace(profile, grid, k)
        grid._cache[key] = ws
    return ws


# -- public operations -----------------------------------------------------


def apply_T(profile: ShearProfile, point: SpectralPoint, f, grid: ChannelGrid, form: str = "log"):
    """Apply the pole-kernel operator T at one spectral point.

    form "log" uses the integration-by-parts quadrature (valid uniformly in
    eps); form "direct" quadratures the pole itself and is only trustworthy
    while eps is large compared to the local mesh.
    """
    ws = _workspace(profile, grid, point.k)
    f = np.asarray(f, dtype=complex)
    if form == "log":
        return ws.t_matrix(point.y0, point.eps, point.iota) @ f
    if form == "direct":
        return ws.t_matrix_direct(point.y0, point.eps, point.iota) @ f
    raise ValueError(f"unknown form {form!r}")


def apply_S(profile: ShearProfile, point: SpectralPoint, f, grid: ChannelGrid):
    """S f = -T(b'' f)."""
    ws = _workspace(profile, grid, point.k)
    f = np.asarray(f, dtype=complex)
    return -(ws.t_matrix(point.y0, point.eps, point.iota) @ (ws.d2bz * f))


def solve_psi(
    profile: ShearProfile, point: SpectralPoint, omega0k, grid: ChannelGrid
) -> ResolventSolution:
    """Nystrom solve of (I - S) psi = T w0 with derivative and diagnostics."""
    ws = _workspace(profile, grid, point.k)
    omega0k = np.asarray(omega0k, dtype=complex)
    ops = ws.point_ops(point.y0, point.eps, point.iota)
    if ops["cond"] > COND_LIMIT:
        raise NearSingularResolvent(
            f"condition estimate {ops['cond']:.3g} at (k={point.k}, y0={point.y0:g}, "
            f"eps={point.eps:g}); run a spectrum scan"
        )
    rhs = ops["T"] @ omega0k
    psi = lu_solve(ops["lu"], rhs, check_finite=False)
    defect = psi - ops["S"] @ psi - rhs
    scale = max(np.max(np.abs(rhs)), 1e-300)
    residual = float(np.max(np.abs(defect)) / scale)
    f_tot = omega0k - ws.d2bz * psi
    dpsi = ws.dy_t_matrix(point.y0, point.eps, point.iota) @ f_tot
    return ResolventSolution(point, psi, dpsi, residual, ops["cond"], omega0k=omega0k)


def solve_psi_ode(
    profile: ShearProfile, point: SpectralPoint, omega0k, grid: ChannelGrid
) -> ResolventSolution:
    """Independent compact fourth-order ODE solve of the eigenfunction equation.

    Discretizes psi'' - k^2 psi - b'' m psi = -w0 m (m the regularized pole)
    on a fine uniform mesh and interpolates back; used to cross-check the
    Nystrom route.
    """
    from scipy.interpolate import CubicSpline

    omega0k = np.asarray(omega0k, dtype=complex)
    N = 1 << int(np.ceil(np.log2(max(8192, 96.0 / point.eps))))
    N = min(N, 1 << 18)
    yu = np.linspace(0.0, 1.0, N + 1)
    m = 1.0 / (np.asarray(profile.b(yu)) - float(profile.b(point.y0)) + 1j * point.iota * point.eps)
    Q = float(point.k) ** 2 + np.asarray(profile.d2b(yu)) * m
    w0u = grid.interpolate(omega0k, yu)
    R = -w0u * m
    psi_u = numerov_bvp(Q, R, 1.0 / N)
    psi_c = numerov_bvp(Q[::2], R[::2], 2.0 / N)
    err = float(np.max(np.abs(psi_u[::2] - psi_c)))
    sr = CubicSpline(yu, psi_u.real)
    si = CubicSpline(yu, psi_u.imag)
    psi = sr(grid.nodes) + 1j * si(grid.nodes)
    dpsi = sr(grid.nodes, 1) + 1j * si(grid.nodes, 1)
    return ResolventSolution(point, psi, dpsi, err, None, omega0k=omega0k, backend="ode")


def _f2_assemble(ws: ResolventWorkspace, y0, eps, iota, u, u1, u2, g0, g1, lam_pack):
    """Second-order-pole integral, reduced by two integrations by parts.

    For g with u = g/b', the value is
    g(y)/b'(y)^2 log(..) - boundary log terms - J(u, u', u''),
    where J collects only log-weighted regular kernel quadratures.  g0, g1 are
    the endpoint values of g and u, u1, u2 its scaled derivatives at nodes.
    """
    lam, lam_s, lam_y = lam_pack
    db, d2b = ws.dbz, ws.d2bz
    k2 = float(ws.k) ** 2
    a_g = k2 * u / db - u1 * d2b / db**2 + u2 / db
    a_dz = 2.0 * u1 / db - u * d2b / db**2
    J = (ws.Wg * lam[None, :]) @ a_g + (ws.Wdz * lam[None, :]) @ a_dz

    # split-panel contribution with interpolated u, u', u''
    cols = ws.cols_own
    u_s = np.einsum("imj,ij->im", ws.sq.interp, u[cols])
    u1_s = np.einsum("imj,ij->im", ws.sq.interp, u1[cols])
    u2_s = np.einsum("imj,ij->im", ws.sq.interp, u2[cols])
    dbs, d2bs = ws.dbzs, ws.d2bzs
    integrand = ws.Gs * (k2 * u_s / dbs - u1_s * d2bs / dbs**2 + u2_s / dbs)
    integrand += ws.Gdzs * (2.0 * u1_s / dbs - u_s * d2bs / dbs**2)
    J += np.einsum("im,im->i", ws.sq.sub_weights * lam_s, integrand)

    b = ws.profile.b
    shift = -float(b(y0)) + 1j * iota * eps
    lg1 = np.log(float(b(1.0)) + shift)
    lg0 = np.log(float(b(0.0)) + shift)
    db1 = float(ws.profile.db(1.0))
    db0 = float(ws.profile.db(0.0))
    bnd = g1 * ws.sh0 / db1**2 * lg1 + g0 * ws.sh1 / db0**2 * lg0
    g_at_nodes = u * db
    return g_at_nodes / db**2 * lam_y - bnd - J


def solve_dy0_psi(
    profile: ShearProfile, point: SpectralPoint, sol: ResolventSolution, grid: ChannelGrid
) -> np.ndarray:
    """Solve the y0-differentiated system for d(psi)/d(y0).

    The right side combines second-order-pole integrals of w0 and b'' psi; one
    extra integration by parts keeps the quadrature at a log singularity.  For
    the b'' psi part the needed psi'' comes from the differential equation
    itself rather than numerical differentiation.
    """
    if sol.omega0k is None:
        raise ValueError("solution does not carry its source data")
    ws = _workspace(profile, grid, point.k)
    ops = ws.point_ops(point.y0, point.eps, point.iota)
    lam_pack = ws.log_factors(point.y0, point.eps, point.iota)
    psi = sol.psi
    dpsi = sol.dpsi_dy
    omega0k = np.asarray(sol.omega0k, dtype=complex)

    db, d2b, d3b, d4b = ws.dbz, ws.d2bz, ws.d3bz, ws.d4bz
    pole = 1.0 / (ws.bz - float(profile.b(point.y0)) + 1j * point.iota * point.eps)

    # g = w0 branch: plain per-panel spectral derivatives of the data
    u_w = omega0k / db
    u1_w = ws.dmat_apply(u_w)
    u2_w = ws.dmat_apply(u1_w)
    w0_0 = complex(ws.row0 @ omega0k)
    w0_1 = complex(ws.row1 @ omega0k)
    F2_w = _f2_assemble(ws, point.y0, point.eps, point.iota, u_w, u1_w, u2_w, w0_0, w0_1, lam_pack)

    # g = b'' psi branch: psi'' from the equation, so no double differentiation
    r = d2b / db
    r1 = (d3b * db - d2b**2) / db**2
    r2 = ((d4b * db - d3b * d2b) * db - 2.0 * d2b * (d3b * db - d2b**2)) / db**3
    psi2 = float(point.k) ** 2 * psi + (d2b * psi - omega0k) * pole
    u_p = r * psi
    u1_p = r1 * psi + r * dpsi
    u2_p = r2 * psi + 2.0 * r1 * dpsi + r * psi2
    g0 = complex(ws.row0 @ (d2b * psi))
    g1 = complex(ws.row1 @ (d2b * psi))
    F2_p = _f2_assemble(ws, point.y0, point.eps, point.iota, u_p, u1_p, u2_p, g0, g1, lam_pack)

    rhs = float(profile.db(point.y0)) * (F2_w - F2_p)
    dpsi_dy0 = lu_solve(ops["lu"], rhs, check_finite=False)
    sol.dpsi_dy0 = dpsi_dy0
    return dpsi_dy0


def solve_boundary_Phi(
    profile: ShearProfile, point: SpectralPoint, grid: ChannelGrid
) -> BoundaryFunctionPair:
    """Solve (I - S) Phi^sigma = boundary data for sigma in {0, 1}.

    Phi^1 is driven by sinh(k y)/(b'(1)^2 sinh k) and Phi^0 by the reflected
    profile; for vanishing b'' they reduce to the data itself.
    """
    ws = _workspace(profile, grid, point.k)
    ops = ws.point_ops(point.y0, point.eps, point.iota)
    if ops["cond"] > COND_LIMIT:
        raise NearSingularResolvent(f"condition estimate {ops['cond']:.3g}")
    rhs1 = (ws.sh0 / float(profile.db(1.0)) ** 2).astype(complex)
    rhs0 = (ws.sh1 / float(profile.db(0.0)) ** 2).astype(complex)
    phi1 = lu_solve(ops["lu"], rhs1, check_finite=False)
    phi0 = lu_solve(ops["lu"], rhs0, check_finite=False)
    d1 = phi1 - ops["S"] @ phi1 - rhs1
    d0 = phi0 - ops["S"] @ phi0 - rhs0
    residual = float(max(np.max(np.abs(d0)), np.max(np.abs(d1))))
    return BoundaryFunctionPair(point, phi0, phi1, residual)


# -- broadening limit --------------------------------------------------------


@dataclass
class EpsLimitReport:
    """Convergence metadata of a geometric broadening schedule."""

    order: float
    exact: bool
    diff_norms: np.ndarray
    est_error: float
    converged: bool


def eps_limit(family: Sequence, min_levels: int = 4):
    """Extrapolate a family computed at eps_j = eps0 2^-j to eps -> 0.

    Returns (limit, report).  The limit is the last iterate plus a geometric
    continuation of the Cauchy differences; the report carries the empirical
    order and the estimated remaining error.  Raises NoConvergence when the
    successive differences fail to decrease.
    """
    vals = [np.asarray(v, dtype=complex) for v in family]
    if len(vals) < min_levels:
        raise NoConvergence(f"need at least {min_levels} broadening levels, got {len(vals)}")
    diffs = [vals[j + 1] - vals[j] for j in range(len(vals) - 1)]
    norms = np.array([np.max(np.abs(d)) for d in diffs])
    scale = max(np.max(np.abs(vals[-1])), 1e-300)
    floor = 1e-13 * scale
    if np.all(norms <= floor):
        rep = EpsLimitReport(order=np.inf, exact=True, diff_norms=norms, est_error=0.0, converged=True)
        return vals[-1].copy(), rep
    active = norms > floor
    idx = np.where(active)[0]
    decreasing = all(norms[j + 1] < norms[j] * (1.0 + 1e-9) for j in idx[:-1] if active[j + 1])
    if not decreasing:
        raise NoConvergence(f"difference norms not decreasing: {norms}")
    r = norms[-1] / norms[-2] if norms[-2] > floor else 0.0
    order = float(-np.log2(r)) if r > 0 else np.inf
    if r >= 0.995:
        raise NoConvergence(f"contraction ratio {r:.4g} too close to 1")
    tail = diffs[-1] * (r / (1.0 - r))
    limit = vals[-1] + tail
    est = float(np.max(np.abs(tail))) + norms[-1] * r**2 / max(1.0 - r, 1e-3)
    rep = EpsLimitReport(order=order, exact=False, diff_norms=norms, est_error=est, converged=True)
    return limit, rep


def default_eps_schedule(eps0: float = 0.02, levels: int = 5) -> np.ndarray:
    """Geometric broadening schedule eps_j = eps0 2^-j."""
    return eps0 * 0.5 ** np.arange(levels)


def hk_norm(omega0k, k: int, grid: ChannelGrid) -> float:
    """Discrete weighted Sobolev norm sum_a |k|^(3-a) ||d^a w||_L2."""
    v = np.asarray(omega0k, dtype=complex)
    total = 0.0
    kk = abs(int(k))
    for a in range(4):
        l2 = float(np.sqrt(np.real(grid.integrate(np.abs(v) ** 2))))
        total += kk ** (3 - a) * l2
        if a < 3:
            v = _dmat(grid, v)
    return total


def _dmat(grid: ChannelGrid, values):
    out = np.empty_like(values, dtype=complex)
    _, _, _, Dref = grid._ref()
    q = grid.order
    for p in range(grid.n_panels):
        half = 0.5 * (grid.breakpoints[p + 1] - grid.breakpoints[p])
        sl = slice(p * q, (p + 1) * q)
        out[sl] = (Dref / half) @ values[sl]
    return out
