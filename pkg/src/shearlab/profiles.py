"""Monotone shear profiles and the Fourier conventions shared by all modules.

A profile is the channel shear b(y) on [0, 1] together with its first four
derivatives and a monotonicity certificate: the largest theta in (0, 1/10)
such that theta/100 <= |b'(y)| <= 1/(100 theta) everywhere, plus the constant
sign of b'.  Builtin profiles carry hand-coded analytic derivatives; tabulated
profiles go through a quintic spline and must pass finite-difference
consistency checks, because the downstream singular solves need b'' pointwise
with no noise.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.optimize import brentq

from .errors import NonMonotone, OutOfRange, RegularityFail

_THETA_CAP = np.nextafter(0.1, 0.0)
_N_CERT = 4097  # certification sample count


@dataclass(frozen=True)
class ShearProfile:
    """Certified monotone shear profile.

    The callables accept scalars or arrays.  Instances are immutable and safe
    to share across threads.
    """

    name: str
    b: Callable
    db: Callable
    d2b: Callable
    d3b: Callable
    d4b: Callable
    theta: float
    sign_aleph: int

    @property
    def b_range(self):
        lo, hi = float(self.b(0.0)), float(self.b(1.0))
        return (min(lo, hi), max(lo, hi))

    def __repr__(self):
        return f"ShearProfile({self.name!r}, theta={self.theta:.6g}, aleph={self.sign_aleph:+d})"


@dataclass(frozen=True)
class FourierConvention:
    """Mode convention: w(t, x, y) = sum_k w_k(t, y) exp(i k x).

    c0 is the forward-transform constant, w_k = c0 * int_0^{2pi} w e^{-ikx} dx.
    The same constant multiplies the physical-space assembly formulas so that
    assembled fields and their stated limits scale together.
    """

    c0: float = 1.0 / (2.0 * math.pi)

    def modes_from_field(self, field_x: np.ndarray) -> np.ndarray:
        """Fourier coefficients along axis 0 of samples on a uniform x grid."""
        n = field_x.shape[0]
        return np.fft.fft(field_x, axis=0) / n

    def field_from_modes(self, modes: np.ndarray) -> np.ndarray:
        """Inverse of modes_from_field."""
        n = modes.shape[0]
        return np.fft.ifft(modes, axis=0) * n


def _couette():
    one = np.ones_like
    zero = np.zeros_like

    def as_arr(f):
        return lambda y: f(np.asarray(y, dtype=float))

    return dict(
        b=as_arr(lambda y: y),
        db=as_arr(one),
        d2b=as_arr(zero),
        d3b=as_arr(zero),
        d4b=as_arr(zero),
    )


def _linear(b0: float, b1: float):
    s = b1 - b0

    def shape(y, v):
        return np.full_like(np.asarray(y, dtype=float), v)

    return dict(
        b=lambda y: b0 + s * np.asarray(y, dtype=float),
        db=lambda y: shape(y, s),
        d2b=lambda y: shape(y, 0.0),
        d3b=lambda y: shape(y, 0.0),
        d4b=lambda y: shape(y, 0.0),
    )


def _sine_perturbed(a: float):
    w = 2.0 * math.pi
    return dict(
        b=lambda y: np.asarray(y, dtype=float) + a * np.sin(w * np.asarray(y)) / w,
        db=lambda y: 1.0 + a * np.cos(w * np.asarray(y)),
        d2b=lambda y: -a * w * np.sin(w * np.asarray(y)),
        d3b=lambda y: -a * w**2 * np.cos(w * np.asarray(y)),
        d4b=lambda y: a * w**3 * np.sin(w * np.asarray(y)),
    )


def _tanh_monotone(s: float):
    # b maps [0,1] onto [0,1] with steepness s at the centre.
    c = 1.0 / (2.0 * math.tanh(s / 2.0))

    def u(y):
        return s * (np.asarray(y, dtype=float) - 0.5)

    def sech2(y):
        return 1.0 / np.cosh(u(y)) ** 2

    return dict(
        b=lambda y: 0.5 + c * np.tanh(u(y)),
        db=lambda y: c * s * sech2(y),
        d2b=lambda y: -2.0 * c * s**2 * sech2(y) * np.tanh(u(y)),
        d3b=lambda y: 2.0 * c * s**3 * sech2(y) * (2.0 - 3.0 * sech2(y)),
        d4b=lambda y: 8.0 * c * s**4 * sech2(y) * np.tanh(u(y)) * (3.0 * sech2(y) - 1.0),
    )


def _table(y_tab, b_tab):
    y_tab = np.asarray(y_tab, dtype=float)
    b_tab = np.asarray(b_tab, dtype=float)
    if y_tab.ndim != 1 or y_tab.shape != b_tab.shape or y_tab.size < 8:
        raise RegularityFail("tabulated profile needs matching 1-d arrays with >= 8 points")
    if abs(y_tab[0]) > 1e-12 or abs(y_tab[-1] - 1.0) > 1e-12:
        raise RegularityFail("tabulated profile must cover [0, 1]")
    spl = make_interp_spline(y_tab, b_tab, k=5)
    ders = [spl.derivative(m) for m in range(1, 5)]
    return dict(
        b=lambda y: spl(np.clip(np.asarray(y, dtype=float), 0.0, 1.0)),
        db=lambda y: ders[0](np.clip(np.asarray(y, dtype=float), 0.0, 1.0)),
        d2b=lambda y: ders[1](np.clip(np.asarray(y, dtype=float), 0.0, 1.0)),
        d3b=lambda y: ders[2](np.clip(np.asarray(y, dtype=float), 0.0, 1.0)),
        d4b=lambda y: ders[3](np.clip(np.asarray(y, dtype=float), 0.0, 1.0)),
    )


_CALL_RE = re.compile(r"^([a-zA-Z-]+)\(([-0-9.eE+]+)\)$")


def _parse_descriptor(spec):
    """Normalize a string or dict descriptor into (kind, params)."""
    if isinstance(spec, str):
        m = _CALL_RE.match(spec.strip())
        if m:
            kind, arg = m.group(1), float(m.group(2))
            if kind == "sine-perturbed":
                return kind, {"a": arg}
            if kind == "tanh-monotone":
                return kind, {"s": arg}
            raise NonMonotone(f"unknown profile kind {kind!r}")
        if spec.strip() == "couette":
            return "couette", {}
        raise NonMonotone(f"unknown profile descriptor {spec!r}")
    if isinstance(spec, dict):
        d = dict(spec)
        kind = d.pop("kind", None)
        if kind is None:
            raise NonMonotone("profile descriptor dict needs a 'kind' key")
        return kind, d
    raise NonMonotone(f"unsupported profile descriptor of type {type(spec).__name__}")


def make_profile(spec) -> ShearProfile:
    """Build and certify a shear profile from a descriptor.

    Accepts builtin names ("couette", "sine-perturbed(a)", "tanh-monotone(s)",
    {"kind": "linear", "b0": .., "b1": ..}) or a tabulated profile
    {"kind": "table", "y": [...], "b": [...]}.

    Raises NonMonotone when b' changes sign or is too close to zero, and
    RegularityFail when the stored derivatives are inconsistent with b under
    centered finite differences.
    """
    kind, params = _parse_descriptor(spec)
    if kind == "couette":
        funcs, name = _couette(), "couette"
    elif kind == "linear":
        b0, b1 = float(params["b0"]), float(params["b1"])
        funcs, name = _linear(b0, b1), f"linear({b0:g},{b1:g})"
    elif kind == "sine-perturbed":
        a = float(params["a"])
        funcs, name = _sine_perturbed(a), f"sine-perturbed({a:g})"
    elif kind == "tanh-monotone":
        s = float(params["s"])
        if s <= 0:
            raise NonMonotone("tanh-monotone steepness must be positive")
        funcs, name = _tanh_monotone(s), f"tanh-monotone({s:g})"
    elif kind == "table":
        funcs, name = _table(params["y"], params["b"]), params.get("name", "table")
    else:
        raise NonMonotone(f"unknown profile kind {kind!r}")

    ys = np.linspace(0.0, 1.0, _N_CERT)
    dbv = np.asarray(funcs["db"](ys), dtype=float)
    if np.any(~np.isfinite(dbv)):
        raise RegularityFail("b' is not finite on [0, 1]")
    sgn = np.sign(dbv)
    if sgn[0] == 0 or np.any(sgn != sgn[0]):
        raise NonMonotone("b' changes sign on [0, 1]")
    m, big = float(np.min(np.abs(dbv))), float(np.max(np.abs(dbv)))
    if m < 1e-8:
        raise NonMonotone(f"|b'| reaches {m:.3g}; profile is not safely monotone")

    theta = min(100.0 * m, 1.0 / (100.0 * big))
    theta = min(theta, _THETA_CAP)

    _check_derivative_consistency(funcs)

    return ShearProfile(
        name=name,
        b=funcs["b"],
        db=funcs["db"],
        d2b=funcs["d2b"],
        d3b=funcs["d3b"],
        d4b=funcs["d4b"],
        theta=float(theta),
        sign_aleph=int(sgn[0]),
    )


def _check_derivative_consistency(funcs, h: float = 1.0 / 2048.0):
    """Centered O(h^2) checks of db and d2b against b."""
    ys = np.linspace(2 * h, 1.0 - 2 * h, 513)
    b = funcs["b"]
    fd1 = (b(ys + h) - b(ys - h)) / (2 * h)
    fd2 = (b(ys + h) - 2 * b(ys) + b(ys - h)) / h**2
    d3 = np.max(np.abs(funcs["d3b"](ys))) if np.ndim(funcs["d3b"](ys)) else 0.0
    d4 = np.max(np.abs(funcs["d4b"](ys)))
    scale1 = h**2 * max(d3, 1.0) / 6.0 * 10.0 + 1e-10
    scale2 = h**2 * max(d4, 1.0) / 12.0 * 10.0 + 1e-8
    e1 = np.max(np.abs(fd1 - funcs["db"](ys)))
    e2 = np.max(np.abs(fd2 - funcs["d2b"](ys)))
    if e1 > scale1 or e2 > scale2:
        raise RegularityFail(
            f"derivative tables inconsistent with b: |db err|={e1:.3g} (tol {scale1:.3g}), "
            f"|d2b err|={e2:.3g} (tol {scale2:.3g})"
        )


def b_inverse(profile: ShearProfile, v: float) -> float:
    """Invert b on [0, 1]: return y with |b(y) - v| <= 1e-12.

    Raises OutOfRange when v lies outside [min(b(0), b(1)), max(b(0), b(1))].
    """
    lo, hi = profile.b_range
    v = float(v)
    span = hi - lo
    if v < lo - 1e-13 * max(1.0, span) or v > hi + 1e-13 * max(1.0, span):
        raise OutOfRange(f"value {v:g} outside profile range [{lo:g}, {hi:g}]")
    v = min(max(v, lo), hi)
    s = profile.sign_aleph

    def g(y):
        return s * (float(profile.b(y)) - v)

    if g(0.0) >= 0.0:
        return 0.0
    if g(1.0) <= 0.0:
        return 1.0
    y = brentq(g, 0.0, 1.0, xtol=1e-15, rtol=1e-15, maxiter=200)
    # one Newton polish; brentq already meets the tolerance in practice
    dby = float(profile.db(y))
    if dby != 0.0:
        y = min(max(y - g(y) * s / dby, 0.0), 1.0)
    return float(y)


def b_inverse_many(profile: ShearProfile, values) -> np.ndarray:
    """Vectorized b_inverse."""
    return np.array([b_inverse(profile, v) for v in np.atleast_1d(values)])
