"""Time evolution of one Fourier mode from its spectral representation.

The stream function evolves as an oscillatory integral over the spectral
parameter y0,

    psi_k(t, y) = -(1/(2 pi i)) int_0^1 e^{-i k b(y0) t} |b'(y0)|
                  [psi^-(y, y0) - psi^+(y, y0)] dy0,

where the bracket is the eps -> 0 jump of the generalized eigenfunctions.
The jump carries an explicit singular factor along y0 = y,

    jump(y, y0) = c(y0) G_k(y, y0) + regular,
    c(y0) = 2 pi i (w0(y0) - b''(y0) psibar(y0, y0)) / b'(y0),

which this module removes node-by-node and integrates with the exact Green's
kernel, so that only a smooth remainder is ever interpolated across panels.
Large kt uses panel-wise Filon quadrature: the remainder's panel interpolant
is integrated against exact moments of the locally linearized oscillator with
a series correction for phase curvature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoConvergence
from .greens import (
    ChannelGrid,
    green_dy,
    green_eval,
    make_boundary_grid,
    make_graded_grid,
)
from .profiles import ShearProfile
from .resolvent import (
    SpectralPoint,
    default_eps_schedule,
    eps_limit,
    solve_psi,
)

_TWO_PI_I = 2.0j * np.pi


@dataclass
class ModeTrajectory:
    """Sampled evolution of one Fourier mode."""

    k: int
    times: np.ndarray
    y: np.ndarray
    psi_t: np.ndarray       # (nt, ny)
    dpsi_dy_t: np.ndarray   # (nt, ny)
    omega_t: np.ndarray     # (nt, ny)
    source: str
    meta: dict = field(default_factory=dict)


@dataclass
class SpectralDensity:
    """Jump of the generalized eigenfunctions across the continuous spectrum.

    density rows live on y0 quadrature nodes, columns on the reporting y grid.
    density_reg and density_dy_reg have the singular ridge c(y0) G_k(y, y0)
    (resp. its y derivative) removed; sing_coeff holds c at the y0 nodes.
    diag_plus and diag_jump sample the one-sided limit and the jump on the
    diagonal y = y0, which the large-time asymptotics consume directly.
    """

    k: int
    profile: ShearProfile
    y0_grid: ChannelGrid
    y_grid: ChannelGrid
    weight: np.ndarray            # |b'| at y0 nodes
    density_reg: np.ndarray       # (n0, ny)
    density_dy_reg: np.ndarray    # (n0, ny)
    sing_coeff: np.ndarray        # (n0,)
    diag_plus: np.ndarray         # (n0,)
    diag_jump: np.ndarray         # (n0,)
    omega0k: np.ndarray           # on y_grid nodes
    eps_schedule: np.ndarray
    eps_orders: np.ndarray        # empirical order per y0 node
    eps_errors: np.ndarray        # estimated extrapolation error per node

    @property
    def y0_nodes(self) -> np.ndarray:
        return self.y0_grid.nodes

    def density(self, with_singular: bool = True) -> np.ndarray:
        """Full jump matrix, reassembling the singular ridge if requested."""
        out = self.density_reg.copy()
        if with_singular:
            G = green_eval(self.k, self.y_grid.nodes[None, :], self.y0_nodes[:, None])
            out += self.sing_coeff[:, None] * G
        return out


def build_density(
    profile: ShearProfile,
    k: int,
    omega0k,
    y_grid: Optional[ChannelGrid] = None,
    y0_grid: Optional[ChannelGrid] = None,
    n_res: int = 224,
    eps0: float = 0.02,
    levels: int = 5,
    real_data: Optional[bool] = None,
    certificate=None,
) -> SpectralDensity:
    """Construct the spectral density of one mode.

    The caller is responsible for running a spectrum scan first; pass its
    certification token as `certificate` to document that (it is not
    re-checked here).  For real sources on a real profile the minus-side
    solves are obtained by conjugation unless real_data=False forces both.

    Raises NoConvergence (propagated) when the broadening limit stalls at
    some node and NearSingularResolvent when a solve sits too close to a
    discrete eigenvalue.
    """
    if y_grid is None:
        y_grid = make_boundary_grid(192, 8)
    if y0_grid is None:
        y0_grid = make_boundary_grid(176, 8, h_max=1.0 / 12.0, boundary_floor=1.0 / 512.0)
    omega0k = np.asarray(omega0k, dtype=complex)
    if real_data is None:
        real_data = bool(np.max(np.abs(omega0k.imag)) < 1e-14)
    eps_sched = default_eps_schedule(eps0, levels)

    y0s = y0_grid.nodes
    n0 = y0s.size
    ny = y_grid.n_total
    dens_reg = np.empty((n0, ny), dtype=complex)
    dens_dy_reg = np.empty((n0, ny), dtype=complex)
    coeff = np.empty(n0, dtype=complex)
    diag_plus = np.empty(n0, dtype=complex)
    diag_jump = np.empty(n0, dtype=complex)
    orders = np.empty(n0)
    errors = np.empty(n0)

    for j, y0 in enumerate(y0s):
        res = _density_at_node(profile, k, omega0k, y_grid, float(y0), eps_sched, n_res, real_data)
        dens_reg[j], dens_dy_reg[j], coeff[j], diag_plus[j], diag_jump[j], orders[j], errors[j] = res

    return SpectralDensity(
        k=int(k),
        profile=profile,
        y0_grid=y0_grid,
        y_grid=y_grid,
        weight=np.abs(np.asarray(profile.db(y0s), dtype=float)),
        density_reg=dens_reg,
        density_dy_reg=dens_dy_reg,
        sing_coeff=coeff,
        diag_plus=diag_plus,
        diag_jump=diag_jump,
        omega0k=omega0k,
        eps_schedule=eps_sched,
        eps_orders=orders,
        eps_errors=errors,
    )


def _density_at_node(profile, k, omega0k, y_grid, y0, eps_sched, n_res, real_data):
    """Solve the broadening schedule at one y0 node and extrapolate the jump."""
    grid = make_graded_grid(y0, n_res, y_grid.order)
    w0 = y_grid.interpolate(omega0k, grid.nodes)
    jumps, djumps, means = [], [], []
    for eps in eps_sched:
        sp = solve_psi(profile, SpectralPoint(k, y0, float(eps), +1), w0, grid)
        if real_data:
            psi_m, dpsi_m = np.conj(sp.psi), np.conj(sp.dpsi_dy)
        else:
            sm = solve_psi(profile, SpectralPoint(k, y0, float(eps), -1), w0, grid)
            psi_m, dpsi_m = sm.psi, sm.dpsi_dy
        jumps.append(psi_m - sp.psi)
        djumps.append(dpsi_m - sp.dpsi_dy)
        means.append(0.5 * (psi_m + sp.psi))
    stacked = [np.concatenate([a, b, c]) for a, b, c in zip(jumps, djumps, means)]
    lim, rep = eps_limit(stacked)
    n = grid.n_total
    jump_lim, djump_lim, mean_lim = lim[:n], lim[n : 2 * n], lim[2 * n :]
    # one-sided plus limit on the diagonal, for the asymptotic profiles
    plus_lim = mean_lim - 0.5 * jump_lim

    row_y0 = grid.interp_matrix(np.array([y0]))[0]
    psibar_diag = complex(row_y0 @ mean_lim)
    w0_diag = complex(row_y0 @ w0)
    diag_plus = complex(row_y0 @ plus_lim)
    diag_jump = complex(row_y0 @ jump_lim)
    db0 = float(profile.db(y0))
    d2b0 = float(profile.d2b(y0))
    c = _TWO_PI_I * (w0_diag - d2b0 * psibar_diag) / db0

    d_reg = jump_lim - c * green_eval(k, grid.nodes, y0)
    d_dy_reg = djump_lim - c * green_dy(k, grid.nodes, y0)
    transfer = grid.interp_matrix(y_grid.nodes)
    return (
        transfer @ d_reg,
        transfer @ d_dy_reg,
        c,
        diag_plus,
        diag_jump,
        rep.order,
        rep.est_error,
    )


# -- oscillatory quadrature over y0 ------------------------------------------


def _linear_phase_moments(theta: float, nmax: int) -> np.ndarray:
    """mu_n = int_{-1}^{1} s^n exp(i theta s) ds for n = 0..nmax."""
    if abs(theta) <= 24.0:
        xg, wg = np.polynomial.legendre.leggauss(32)
        osc = wg * np.exp(1j * theta * xg)
        return np.array([np.dot(osc, xg**n) for n in range(nmax + 1)])
    mu = np.empty(nmax + 1, dtype=complex)
    ith = 1j * theta
    ep, em = np.exp(ith), np.exp(-ith)
    mu[0] = (ep - em) / ith
    for n in range(1, nmax + 1):
        mu[n] = (ep - (-1) ** n * em) / ith - n / ith * mu[n - 1]
    return mu


def _chebyshev_fit_matrix(q: int, deg: int):
    """Least-squares monomial fit of panel Lagrange bases sampled on Chebyshev points."""
    s = np.cos(np.pi * (2 * np.arange(deg + 1) + 1) / (2 * (deg + 1)))
    V = np.vander(s, deg + 1, increasing=True)
    return s, np.linalg.inv(V)


def oscillatory_weights(
    y0_grid: ChannelGrid, profile: ShearProfile, k: int, t: float, filon_threshold: float = 4.0
) -> np.ndarray:
    """Node weights W with int e^{-i k b(y0) t} g(y0) dy0 ~ sum_j W_j g(y0_j).

    g is understood as its per-panel polynomial interpolant.  Panels where the
    phase advances little use plain Gauss weights; fast panels use sub-panel
    Filon quadrature, exact for a linearized phase with a truncated series in
    the curvature.
    """
    kt = float(k) * float(t)
    q = y0_grid.order
    xg, _, wbref, _ = y0_grid._ref()
    W = np.zeros(y0_grid.n_total, dtype=complex)
    phase = lambda x: np.exp(-1j * kt * np.asarray(profile.b(x), dtype=float))
    for p in range(y0_grid.n_panels):
        lo, hi = y0_grid.breakpoints[p], y0_grid.breakpoints[p + 1]
        h = hi - lo
        sl = y0_grid.panel_slice(p)
        nodes = y0_grid.nodes[sl]
        dbmax = float(np.max(np.abs(profile.db(nodes))))
        theta_panel = abs(kt) * dbmax * h / 2.0
        if theta_panel <= filon_threshold:
            W[sl] = y0_grid.weights[sl] * phase(nodes)
            continue
        W[sl] = _filon_panel_weights(profile, kt, lo, hi, nodes, xg, wbref, q)
    return W


def _filon_panel_weights(profile, kt, lo, hi, nodes, xg, wbref, q):
    """Filon weights for one panel, subdivided until phase curvature is small."""
    from .greens import _bary_eval_matrix

    h = hi - lo
    mid = 0.5 * (lo + hi)
    # curvature-based subdivision: quadratic through quartic phase terms small
    def curv(hh):
        c = mid
        return abs(kt) * (
            abs(float(profile.d2b(c))) * hh**2 / 2.0
            + abs(float(profile.d3b(c))) * hh**3 / 6.0
            + abs(float(profile.d4b(c))) * hh**4 / 24.0
        )

    n_sub = 1
    while curv(h / (2 * n_sub)) > 0.12 and n_sub < 64:
        n_sub += 1
    deg_fit = q - 1
    s_cheb, Vinv = _chebyshev_fit_matrix(q, deg_fit)
    w = np.zeros(q, dtype=complex)
    edges = np.linspace(lo, hi, n_sub + 1)
    for a, b_e in zip(edges[:-1], edges[1:]):
        hh = 0.5 * (b_e - a)
        c = 0.5 * (b_e + a)
        # parent-panel Lagrange bases as local monomials
        s_glob = c + hh * s_cheb
        s_parent = (2.0 * s_glob - (lo + hi)) / h
        L = _bary_eval_matrix(xg, wbref, s_parent)      # (deg+1, q)
        P = Vinv @ L                                     # monomial coeffs per basis, (deg+1, q)
        phi0 = -kt * float(profile.b(c))
        phi1 = -kt * float(profile.db(c)) * hh
        phi2 = -kt * float(profile.d2b(c)) * hh**2 / 2.0
        phi3 = -kt * float(profile.d3b(c)) * hh**3 / 6.0
        # series for exp(i(phi2 s^2 + phi3 s^3)), truncated at fourth order
        corr = np.zeros(13, dtype=complex)
        corr[0] = 1.0
        base = np.zeros(4, dtype=complex)
        base[2], base[3] = 1j * phi2, 1j * phi3
        term = np.array([1.0 + 0.0j])
        fact = 1.0
        for r in range(1, 5):
            term = np.convolve(term, base)
            fact *= r
            add = term / fact
            corr[: add.size] += add[:13]
        nmax = deg_fit + corr.size - 1
        mu = _linear_phase_moments(phi1, nmax)
        M = np.array([np.dot(corr, mu[a0 : a0 + corr.size]) for a0 in range(deg_fit + 1)])
        w += hh * np.exp(1j * phi0) * (M @ P)
    return w


def _singular_part(
    dens: SpectralDensity, t: float, y_targets: np.ndarray, kernel: str
) -> np.ndarray:
    """Integral of e^{-ikbt} |b'| c(y0) K(y, y0) dy0 with the exact kernel K.

    K is G_k for the stream function or its one-sided y derivative.  Per
    target y the panel containing y is integrated on segments meeting exactly
    at y, so the kernel kink (or jump) never sits inside a quadrature cell.
    """
    prof, k = dens.profile, dens.k
    g = dens.y0_grid
    kt = float(k) * float(t)
    kfun = green_eval if kernel == "psi" else green_dy
    xg, wg = np.polynomial.legendre.leggauss(8)
    bmax = float(np.max(np.abs(prof.db(g.nodes))))

    # interpolate the smooth scalar pieces once per node set
    def fvals(pts):
        c = g.interpolate(dens.sing_coeff, pts)
        db = np.abs(np.asarray(prof.db(pts), dtype=float))
        osc = np.exp(-1j * kt * np.asarray(prof.b(pts), dtype=float))
        return c * db * osc

    ny = y_targets.size
    out = np.zeros(ny, dtype=complex)
    pidx = g.find_panel(y_targets)

    # panels away from the target: chunked Gauss resolving the oscillator
    sub_nodes = []
    sub_w = []
    sub_panel = []
    for p in range(g.n_panels):
        lo, hi = g.breakpoints[p], g.breakpoints[p + 1]
        n_sub = max(1, int(np.ceil(abs(kt) * bmax * (hi - lo) / 6.0)))
        edges = np.linspace(lo, hi, n_sub + 1)
        for a, b_e in zip(edges[:-1], edges[1:]):
            hh, c = 0.5 * (b_e - a), 0.5 * (b_e + a)
            sub_nodes.append(c + hh * xg)
            sub_w.append(hh * wg)
            sub_panel.append(np.full(xg.size, p))
    zeta = np.concatenate(sub_nodes)
    wz = np.concatenate(sub_w)
    pz = np.concatenate(sub_panel)
    vals = fvals(zeta) * wz
    Kmat = kfun(k, y_targets[:, None], zeta[None, :])
    mask = pz[None, :] != pidx[:, None]
    out += (Kmat * mask) @ vals

    # own panel: two segments meeting at y, chunked the same way
    lo = g.breakpoints[pidx]
    hi = g.breakpoints[pidx + 1]
    for a_arr, b_arr in ((lo, y_targets), (y_targets, hi)):
        seg = b_arr - a_arr
        n_sub = max(1, int(np.ceil(abs(kt) * bmax * float(np.max(seg)) / 6.0)))
        fracs = np.linspace(0.0, 1.0, n_sub + 1)
        for fa, fb in zip(fracs[:-1], fracs[1:]):
            a_e = a_arr + fa * seg
            b_e = a_arr + fb * seg
            hh = 0.5 * (b_e - a_e)
            c = 0.5 * (b_e + a_e)
            zloc = c[:, None] + hh[:, None] * xg[None, :]
            wloc = hh[:, None] * wg[None, :]
            Kloc = kfun(k, y_targets[:, None], zloc)
            out += np.einsum("im,im->i", Kloc * wloc, fvals(zloc))
    return out


def evolve_psi_k(dens: SpectralDensity, t: float, y_targets=None) -> np.ndarray:
    """Stream function of the mode at time t on the reporting grid (or targets)."""
    return _evolve(dens, t, "psi", y_targets)


def evolve_dy_psi_k(dens: SpectralDensity, t: float, y_targets=None) -> np.ndarray:
    """y derivative of the mode stream function at time t."""
    return _evolve(dens, t, "dy", y_targets)


def _evolve(dens, t, which, y_targets):
    if y_targets is None:
        y_targets = dens.y_grid.nodes
        reg = dens.density_reg if which == "psi" else dens.density_dy_reg
    else:
        y_targets = np.atleast_1d(np.asarray(y_targets, dtype=float))
        base = dens.density_reg if which == "psi" else dens.density_dy_reg
        T = dens.y_grid.interp_matrix(y_targets)
        reg = base @ T.T
    W = oscillatory_weights(dens.y0_grid, dens.profile, dens.k, t)
    I_reg = (W * dens.weight) @ reg
    I_sing = _singular_part(dens, t, y_targets, "psi" if which == "psi" else "dy")
    return -(I_reg + I_sing) / _TWO_PI_I


def recover_omega_k(psi_values, k: int, grid: ChannelGrid) -> np.ndarray:
    """w = (d^2/dy^2 - k^2) psi by per-panel spectral application."""
    psi_values = np.asarray(psi_values, dtype=complex)
    _, _, _, Dref = grid._ref()
    q = grid.order
    out = np.empty_like(psi_values)
    for p in range(grid.n_panels):
        half = 0.5 * (grid.breakpoints[p + 1] - grid.breakpoints[p])
        sl = grid.panel_slice(p)
        D = Dref / half
        out[sl] = D @ (D @ psi_values[sl])
    return out - float(k) ** 2 * psi_values


def evolve_omega_k(dens: SpectralDensity, t: float) -> np.ndarray:
    """Vorticity of the mode at time t on the reporting grid.

    Applying d^2/dy^2 - k^2 under the y0 integral hits the singular ridge
    c(y0) G_k(y, y0) with the Green's identity and collapses it to the free
    transport term e^{-i k b(y) t} |b'(y)| c(y) / (2 pi i); the smooth
    remainder is differentiated per panel.
    """
    y = dens.y_grid.nodes
    W = oscillatory_weights(dens.y0_grid, dens.profile, dens.k, t)
    lap = _laplacian_rows(dens)
    I_reg = (W * dens.weight) @ lap
    c_at_y = dens.y0_grid.interpolate(dens.sing_coeff, y)
    dby = np.abs(np.asarray(dens.profile.db(y), dtype=float))
    osc = np.exp(-1j * float(dens.k) * np.asarray(dens.profile.b(y), dtype=float) * t)
    return (osc * dby * c_at_y - I_reg) / _TWO_PI_I


def _laplacian_rows(dens: SpectralDensity) -> np.ndarray:
    """(d^2/dy^2 - k^2) applied along y to every density row (cached)."""
    cache = dens.y_grid._cache
    key = ("density_lap", id(dens))
    if key not in cache:
        out = np.empty_like(dens.density_reg)
        for j in range(out.shape[0]):
            out[j] = recover_omega_k(dens.density_reg[j], dens.k, dens.y_grid)
        cache[key] = out
    return cache[key]


def evolve_spectral(
    dens: SpectralDensity, t_samples: Sequence[float], with_omega: bool = True
) -> ModeTrajectory:
    """Sample psi, its y derivative and the vorticity of the mode over time."""
    t_samples = np.asarray(list(t_samples), dtype=float)
    y = dens.y_grid.nodes
    ny = y.size
    nt = t_samples.size
    psi_t = np.empty((nt, ny), dtype=complex)
    dpsi_t = np.empty((nt, ny), dtype=complex)
    omega_t = np.empty((nt, ny), dtype=complex)
    for i, t in enumerate(t_samples):
        psi_t[i] = evolve_psi_k(dens, t)
        dpsi_t[i] = evolve_dy_psi_k(dens, t)
        omega_t[i] = evolve_omega_k(dens, t) if with_omega else np.nan
    return ModeTrajectory(
        k=dens.k,
        times=t_samples,
        y=y,
        psi_t=psi_t,
        dpsi_dy_t=dpsi_t,
        omega_t=omega_t,
        source="spectral",
        meta={"eps_schedule": dens.eps_schedule.tolist()},
    )


def trajectory_to_rows(traj: ModeTrajectory):
    """Rows (t, y, Re psi, Im psi, Re dpsi, Im dpsi, Re w, Im w) for CSV export."""
    rows = []
    for i, t in enumerate(traj.times):
        for j, yy in enumerate(traj.y):
            rows.append(
                (
                    t,
                    yy,
                    traj.psi_t[i, j].real,
                    traj.psi_t[i, j].imag,
                    traj.dpsi_dy_t[i, j].real,
                    traj.dpsi_dy_t[i, j].imag,
                    traj.omega_t[i, j].real,
                    traj.omega_t[i, j].imag,
                )
            )
    return rows
