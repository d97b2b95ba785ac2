"""Channel Green's function for k^2 - d^2/dy^2 with Dirichlet data, panel grids,
and the elliptic solve (d^2/dy^2 - k^2) psi = rhs, psi(0) = psi(1) = 0.

All kernel evaluations use exponential-difference forms, exp(a + c - |k|) with
nonpositive exponents throughout, so they are overflow-safe and keep full
relative accuracy for every k (plain sinh overflows near k = 710 and loses
digits long before).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(q: int):
    if q not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(q)
        _GAUSS_CACHE[q] = (x, w)
    return _GAUSS_CACHE[q]


def _kernel_parts(k, y, z):
    """Shared stable factors for all kernel variants.

    Returns (E, A, Abar, C, Cbar, D, below) with
    E = exp(-kappa |y - z|), A = 1 - exp(-2 kappa min(y,z)),
    C = 1 - exp(-2 kappa (1 - max(y,z))), D = 1 - exp(-2 kappa),
    below = (y <= z).
    """
    kappa = abs(int(k))
    if kappa == 0:
        raise ValueError("wavenumber k must be nonzero")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    lo = np.minimum(y, z)
    hi = np.maximum(y, z)
    a = kappa * lo
    c = kappa * (1.0 - hi)
    E = np.exp(a + c - kappa)
    A = -np.expm1(-2.0 * a)
    Abar = 1.0 + np.exp(-2.0 * a)
    C = -np.expm1(-2.0 * c)
    Cbar = 1.0 + np.exp(-2.0 * c)
    D = -np.expm1(-2.0 * kappa)
    return kappa, E, A, Abar, C, Cbar, D, (y <= z)


def green_eval(k: int, y, z):
    """G_k(y, z): symmetric, Dirichlet at y in {0, 1}, relative accuracy 1e-13."""
    kappa, E, A, _, C, _, D, _ = _kernel_parts(k, y, z)
    return E * A * C / (2.0 * kappa * D)


def green_dy(k: int, y, z):
    """One-sided d/dy G_k(y, z); the y <= z branch is used on the diagonal."""
    kappa, E, A, Abar, C, Cbar, D, below = _kernel_parts(k, y, z)
    lower = E * Abar * C / (2.0 * D)
    upper = -E * A * Cbar / (2.0 * D)
    return np.where(below, lower, upper)


def green_dz(k: int, y, z):
    """One-sided d/dz G_k(y, z); the y <= z branch is used on the diagonal."""
    kappa, E, A, Abar, C, Cbar, D, below = _kernel_parts(k, y, z)
    lower = -E * A * Cbar / (2.0 * D)
    upper = E * Abar * C / (2.0 * D)
    return np.where(below, lower, upper)


def green_prime(k: int, y, z):
    """Auxiliary kernel: the smooth part of d^2/(dy dz) G_k off the diagonal."""
    kappa, E, _, Abar, _, Cbar, D, _ = _kernel_parts(k, y, z)
    return -kappa * E * Abar * Cbar / (2.0 * D)


def sinh_ratio_0(k: int, y):
    """sinh(|k| y) / sinh(|k|), overflow-safe; vanishes at y = 0."""
    kappa = abs(int(k))
    y = np.asarray(y, dtype=float)
    return np.exp(kappa * (y - 1.0)) * (-np.expm1(-2.0 * kappa * y)) / (-np.expm1(-2.0 * kappa))


def sinh_ratio_1(k: int, y):
    """sinh(|k| (1 - y)) / sinh(|k|); vanishes at y = 1."""
    return sinh_ratio_0(k, 1.0 - np.asarray(y, dtype=float))


@dataclass(frozen=True)
class GreensKernel:
    """Green's function of k^2 - d^2/dy^2 on [0,1] with Dirichlet data, plus
    its one-sided partial derivatives and the off-diagonal mixed kernel."""

    k: int

    def eval(self, y, z):
        return green_eval(self.k, y, z)

    def eval_prime(self, y, z):
        return green_prime(self.k, y, z)

    def eval_dy(self, y, z):
        return green_dy(self.k, y, z)

    def eval_dz(self, y, z):
        return green_dz(self.k, y, z)


def _bary_weights(t: np.ndarray) -> np.ndarray:
    d = t[:, None] - t[None, :]
    np.fill_diagonal(d, 1.0)
    w = 1.0 / np.prod(d, axis=1)
    return w / np.max(np.abs(w))


def _bary_eval_matrix(t, wb, x):
    """Rows of Lagrange basis values l_j(x) for nodes t, barycentric weights wb."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dx = x[:, None] - t[None, :]
    exact = np.abs(dx) < 1e-300
    dx = np.where(exact, 1.0, dx)
    r = wb[None, :] / dx
    out = r / np.sum(r, axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if np.any(hit):
        out[hit] = exact[hit].astype(float)
    return out


def _bary_diff_matrix(t, wb, x):
    """Rows of Lagrange basis derivatives l_j'(x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dx = x[:, None] - t[None, :]
    r = wb[None, :] / dx
    s = np.sum(r, axis=1, keepdims=True)
    sp = -np.sum(wb[None, :] / dx**2, axis=1, keepdims=True)
    return (-wb[None, :] / dx**2) / s - r * sp / s**2


def _diff_matrix(t, wb):
    """Spectral differentiation matrix on the nodes t themselves."""
    q = t.size
    D = np.empty((q, q))
    for i in range(q):
        for j in range(q):
            if i != j:
                D[i, j] = (wb[j] / wb[i]) / (t[i] - t[j])
    for i in range(q):
        D[i, i] = 0.0
        D[i, i] = -np.sum(D[i])
    return D


@dataclass(frozen=True)
class ChannelGrid:
    """Panelized Gauss-Legendre grid on [0, 1].

    breakpoints are the panel edges; each panel carries `order` Gauss nodes.
    When graded_about is set, panel sizes halve toward that point down to the
    floor h_min.  Geometry is immutable; the cache dict only memoizes kernel
    quadrature matrices keyed by wavenumber.
    """

    breakpoints: np.ndarray
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    panel_of_node: np.ndarray
    graded_about: Optional[float]
    h_min: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_total(self) -> int:
        return self.nodes.size

    @property
    def n_panels(self) -> int:
        return self.breakpoints.size - 1

    def panel_slice(self, p: int) -> slice:
        q = self.order
        return slice(p * q, (p + 1) * q)

    def find_panel(self, x) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, np.atleast_1d(x), side="right") - 1
        return np.clip(idx, 0, self.n_panels - 1)

    # -- local polynomial machinery -------------------------------------

    def _ref(self):
        if "ref" not in self._cache:
            xg, wg = _gauss(self.order)
            wb = _bary_weights(xg)
            D = _diff_matrix(xg, wb)
            self._cache["ref"] = (xg, wg, wb, D)
        return self._cache["ref"]

    def interp_matrix(self, targets) -> np.ndarray:
        """Dense (len(targets) x n_total) per-panel barycentric interpolation."""
        xg, _, wb, _ = self._ref()
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        out = np.zeros((targets.size, self.n_total))
        pidx = self.find_panel(targets)
        q = self.order
        for p in np.unique(pidx):
            rows = np.where(pidx == p)[0]
            lo, hi = self.breakpoints[p], self.breakpoints[p + 1]
            s = (2.0 * targets[rows] - (lo + hi)) / (hi - lo)
            out[np.ix_(rows, range(p * q, (p + 1) * q))] = _bary_eval_matrix(xg, wb, s)
        return out

    def interpolate(self, values, targets):
        M = self.interp_matrix(targets)
        return M @ np.asarray(values)

    def differentiate(self, values) -> np.ndarray:
        """Per-panel spectral derivative of node values."""
        _, _, _, D = self._ref()
        values = np.asarray(values)
        out = np.empty_like(values, dtype=np.result_type(values, float))
        q = self.order
        for p in range(self.n_panels):
            sl = self.panel_slice(p)
            half = 0.5 * (self.breakpoints[p + 1] - self.breakpoints[p])
            out[sl] = (D @ values[sl]) / half
        return out

    def integrate(self, values):
        return np.dot(self.weights, np.asarray(values))

    def node_breaks(self):
        """Panel edge pair (lo, hi) per node."""
        p = self.panel_of_node
        return self.breakpoints[p], self.breakpoints[p + 1]


def _nodes_from_breakpoints(bp: np.ndarray, q: int):
    xg, wg = _gauss(q)
    lo = bp[:-1]
    hi = bp[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    panel = np.repeat(np.arange(bp.size - 1), q)
    return nodes, weights, panel


def _fill_budget(bp: list, q: int, n_total: int) -> np.ndarray:
    """Bisect the largest panel (leftmost on ties) until the node budget is met."""
    bp = sorted(bp)
    while (len(bp) - 1) * q < n_total:
        sizes = np.diff(bp)
        j = int(np.argmax(sizes))
        bp.insert(j + 1, 0.5 * (bp[j] + bp[j + 1]))
    return np.asarray(bp)


def make_uniform_grid(n_total: int = 256, order: int = 8) -> ChannelGrid:
    """Uniform panels; n_total is rounded up to a multiple of the panel order."""
    m = max(1, -(-n_total // order))
    bp = np.linspace(0.0, 1.0, m + 1)
    nodes, weights, panel = _nodes_from_breakpoints(bp, order)
    return ChannelGrid(bp, order, nodes, weights, panel, None, 0.0)


def _dedupe(points, tol: float = 1e-12):
    pts = sorted(points)
    out = [pts[0]]
    for p in pts[1:]:
        if p - out[-1] > tol:
            out.append(p)
    if out[-1] != 1.0:
        out[-1] = 1.0
    return out


def make_graded_grid(
    y0: float,
    n_total: int = 256,
    order: int = 8,
    h_min: float = 1e-6,
    h_max: float = 0.125,
    boundary_floor: float = 1.0 / 128.0,
) -> ChannelGrid:
    """Panels halving geometrically toward y0 down to h_min, then budget-filled.

    The spectral point y0 is always a breakpoint, so no quadrature node ever
    coincides with it.  Panels also shrink dyadically toward both channel
    walls down to boundary_floor, where solved fields must satisfy Dirichlet
    data to high accuracy and boundary log factors pile up.
    """
    y0 = float(np.clip(y0, 0.0, 1.0))
    pts = {0.0, 1.0}
    if 1e-12 < y0 < 1.0 - 1e-12:
        pts.add(y0)
    for sign, dist in ((-1.0, y0), (1.0, 1.0 - y0)):
        d = dist
        while d > h_min:
            pts.add(y0 + sign * d)
            d *= 0.5
    d = h_max
    while d > boundary_floor * (1.0 - 1e-12):
        pts.add(d)
        pts.add(1.0 - d)
        d *= 0.5
    bp = _dedupe(pts)
    # enforce the coarse ceiling before budget filling
    refined = [bp[0]]
    for right in bp[1:]:
        size = right - refined[-1]
        if size > h_max:
            parts = int(np.ceil(size / h_max))
            refined.extend(np.linspace(refined[-1], right, parts + 1)[1:].tolist())
        else:
            refined.append(right)
    bp = _fill_budget(refined, order, n_total)
    nodes, weights, panel = _nodes_from_breakpoints(bp, order)
    return ChannelGrid(bp, order, nodes, weights, panel, y0, h_min)


def make_boundary_grid(
    n_total: int = 256,
    order: int = 8,
    h_max: float = 0.125,
    boundary_floor: float = 1.0 / 128.0,
) -> ChannelGrid:
    """Grid graded only toward the channel walls; the common reporting grid."""
    pts = {0.0, 1.0}
    d = h_max
    while d > boundary_floor * (1.0 - 1e-12):
        pts.add(d)
        pts.add(1.0 - d)
        d *= 0.5
    refined = _dedupe(pts)
    out = [refined[0]]
    for right in refined[1:]:
        size = right - out[-1]
        if size > h_max:
            parts = int(np.ceil(size / h_max))
            out.extend(np.linspace(out[-1], right, parts + 1)[1:].tolist())
        else:
            out.append(right)
    bp = _fill_budget(out, order, n_total)
    nodes, weights, panel = _nodes_from_breakpoints(bp, order)
    return ChannelGrid(bp, order, nodes, weights, panel, None, 0.0)


@dataclass(frozen=True)
class SplitQuadrature:
    """Per-row diagonal-panel splits.

    For evaluation at node y_i the z-panel containing y_i is replaced by two
    Gauss sub-panels meeting at y_i, so kernels with a kink or derivative jump
    across z = y_i are integrated one-sidedly at full order.  Off-node values
    of the density come from the parent panel's interpolant.
    """

    sub_nodes: np.ndarray    # (n, 2q)
    sub_weights: np.ndarray  # (n, 2q)
    interp: np.ndarray       # (n, 2q, q) parent-panel basis values
    dinterp: np.ndarray      # (n, 2q, q) parent-panel basis derivatives


def build_split_quadrature(grid: ChannelGrid) -> SplitQuadrature:
    key = "split"
    if key in grid._cache:
        return grid._cache[key]
    xg, wg, wb, _ = grid._ref()
    q = grid.order
    n = grid.n_total
    lo, hi = grid.node_breaks()
    y = grid.nodes
    sub_nodes = np.empty((n, 2 * q))
    sub_weights = np.empty((n, 2 * q))
    for j, (a, b) in enumerate(((lo, y), (y, hi))):
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        sub_nodes[:, j * q : (j + 1) * q] = mid[:, None] + half[:, None] * xg[None, :]
        sub_weights[:, j * q : (j + 1) * q] = half[:, None] * wg[None, :]
    interp = np.empty((n, 2 * q, q))
    dinterp = np.empty((n, 2 * q, q))
    half_p = 0.5 * (hi - lo)
    mid_p = 0.5 * (hi + lo)
    for i in range(n):
        s = (sub_nodes[i] - mid_p[i]) / half_p[i]
        interp[i] = _bary_eval_matrix(xg, wb, s)
        dinterp[i] = _bary_diff_matrix(xg, wb, s) / half_p[i]
    out = SplitQuadrature(sub_nodes, sub_weights, interp, dinterp)
    grid._cache[key] = out
    return out


def greens_quadrature_matrix(grid: ChannelGrid, k: int) -> np.ndarray:
    """Dense matrix Q with (Q f)_i ~ int_0^1 G_k(y_i, z) f(z) dz.

    Standard panel quadrature everywhere except the panel containing y_i,
    which is integrated on the split sub-panels against the panel interpolant
    of f (the kernel has a derivative kink across z = y_i).
    """
    key = ("gq", int(k))
    if key in grid._cache:
        return grid._cache[key]
    n, q = grid.n_total, grid.order
    y = grid.nodes
    W = green_eval(k, y[:, None], y[None, :]) * grid.weights[None, :]
    # remove own-panel standard contribution, replace by split quadrature
    sq = build_split_quadrature(grid)
    Gs = green_eval(k, y[:, None], sq.sub_nodes)
    corr = np.einsum("im,imj->ij", Gs * sq.sub_weights, sq.interp)
    for i in range(n):
        sl = grid.panel_slice(int(grid.panel_of_node[i]))
        W[i, sl] = corr[i]
    grid._cache[key] = W
    return W


def elliptic_solve(k: int, rhs, grid: ChannelGrid, method: str = "quadrature"):
    """Solve psi'' - k^2 psi = rhs with psi(0) = psi(1) = 0 on the grid nodes.

    method "quadrature" integrates -G_k against rhs; "banded" solves a compact
    fourth-order tridiagonal system on a fine uniform mesh and interpolates
    back.  The two routes agree to discretization tolerance and serve as
    mutual checks.
    """
    rhs = np.asarray(rhs)
    if method == "quadrature":
        return -(greens_quadrature_matrix(grid, k) @ rhs)
    if method == "banded":
        N = max(2048, 4 * grid.n_total)
        yu = np.linspace(0.0, 1.0, N + 1)
        ru = grid.interpolate(rhs, yu).astype(complex)
        Q = np.full(N + 1, float(k) ** 2, dtype=complex)
        psi_u = numerov_bvp(Q, ru, 1.0 / N)
        spl_r = CubicSpline(yu, psi_u.real)
        spl_i = CubicSpline(yu, psi_u.imag)
        return spl_r(grid.nodes) + 1j * spl_i(grid.nodes)
    raise ValueError(f"unknown elliptic method {method!r}")


def numerov_bvp(Q: np.ndarray, R: np.ndarray, h: float) -> np.ndarray:
    """Compact fourth-order solve of psi'' = Q psi + R, psi(first) = psi(last) = 0.

    Q and R are values on a uniform grid including both endpoints.
    """
    N = Q.size - 1
    c = h * h / 12.0
    a = 1.0 - c * Q  # stencil weights at each node
    lower = a[:-2]
    diag = -2.0 - 10.0 * c * Q[1:-1]
    upper = a[2:]
    rhs = c * (R[:-2] + 10.0 * R[1:-1] + R[2:])
    ab = np.zeros((3, N - 1), dtype=complex)
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    interior = solve_banded((1, 1), ab, rhs.astype(complex))
    out = np.zeros(N + 1, dtype=complex)
    out[1:-1] = interior
    return out
