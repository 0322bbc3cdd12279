"""Fundamental diagram f(rho) = rho v(rho), its partial inverse g and the
Legendre transform g* used by the Lax formula.

All evaluators accept scalars or numpy arrays. A ``FluxModel`` is immutable,
so it can be shared freely between threads.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from ._numerics import bisect_increasing

INF = np.inf

# Evaluations of g' are capped here; g'(u) -> +inf as u -> M.
SATURATION = 1.0 - 1e-9


class FluxModelError(ValueError):
    pass


class InvalidVelocityLaw(FluxModelError):
    pass


class NonConcaveFlux(FluxModelError):
    pass


class FluxExceedsCapacity(FluxModelError):
    pass


class SlopeBelowCharacteristic(FluxModelError):
    pass


def _as_array(x):
    return np.asarray(x, dtype=float)


def _ret(x, like):
    return float(x) if np.ndim(like) == 0 else x


def _slope(fn, r, h):
    """Five-point central difference; truncation O(h^4)."""
    return (8.0 * (fn(r + h) - fn(r - h)) - (fn(r + 2 * h) - fn(r - 2 * h))) / (12.0 * h)


@dataclass(frozen=True)
class FluxModel:
    """Concave flux ``f = rho v(rho)`` with cached scalar characteristics.

    ``gp0`` is the slope ``g'(0+) = 1/v(0)``: the time a free-flowing car
    needs per unit length. ``affine`` holds ``(a, b)`` when ``v = a - b rho``,
    which enables closed forms for g, gamma and g*.
    """
    v: Callable
    rho_jam: float
    rho_max: float
    M: float
    gp0: float
    dv: Optional[Callable] = field(default=None, repr=False)
    affine: Optional[tuple] = None

    # -- density side -------------------------------------------------
    def velocity(self, rho):
        return self.v(_as_array(rho))

    def f(self, rho):
        rho = _as_array(rho)
        return _ret(rho * self.v(rho), rho)

    def df(self, rho):
        rho = _as_array(rho)
        if self.affine is not None:
            a, b = self.affine
            return _ret(a - 2.0 * b * rho, rho)
        if self.dv is not None:
            out = self.v(rho) + rho * self.dv(rho)
        else:
            out = _slope(self.f, rho, 1e-3 * self.rho_jam)
        return _ret(np.broadcast_to(out, rho.shape) * 1.0, rho)

    # -- flux side ----------------------------------------------------
    def g(self, u):
        """Density of the free branch carrying flux ``u``; linear for u < 0."""
        u = _as_array(u)
        if np.any(u > self.M * (1.0 + 1e-12)):
            raise FluxExceedsCapacity(f"flux {np.max(u)!r} exceeds capacity M={self.M!r}")
        uc = np.clip(u, 0.0, self.M)
        if self.affine is not None:
            a, b = self.affine
            disc = np.maximum(a * a - 4.0 * b * uc, 0.0)
            rho = 2.0 * uc / (a + np.sqrt(disc))
        else:
            rho = bisect_increasing(lambda r: self.f(r), uc, 0.0, self.rho_max, iters=64)
            rho = np.where(uc <= 0.0, 0.0, np.where(uc >= self.M, self.rho_max, rho))
        out = np.where(u < 0.0, self.gp0 * u, rho)
        return _ret(out, u)

    def dg(self, u):
        """g'(u); evaluations above ``M * SATURATION`` are clamped there."""
        u = _as_array(u)
        cap = self.M * SATURATION
        uc = np.clip(u, 0.0, cap)
        if self.affine is not None:
            a, b = self.affine
            out = 1.0 / np.sqrt(a * a - 4.0 * b * uc)
        else:
            out = 1.0 / np.asarray(self.df(self.g(uc)))
        out = np.where(u < 0.0, self.gp0, out)
        return _ret(out, u)

    def saturated(self, u):
        return np.asarray(u) >= self.M * SATURATION

    def gamma(self, p):
        """Flux u in [0, M) with g'(u) = p."""
        p = _as_array(p)
        if np.any(p < self.gp0 * (1.0 - 1e-13)):
            raise SlopeBelowCharacteristic(f"slope {np.min(p)!r} < g'(0)={self.gp0!r}")
        pc = np.maximum(p, self.gp0)
        if self.affine is not None:
            a, b = self.affine
            out = (a * a - 1.0 / (pc * pc)) / (4.0 * b)
        else:
            # f' decreases from v(0) to 0 on [0, rho_max]; solve f'(rho) = 1/p
            rho = bisect_increasing(lambda r: -np.asarray(self.df(r)), -1.0 / pc,
                                    0.0, self.rho_max, iters=64)
            out = self.f(rho)
        out = np.where(pc <= self.gp0, 0.0, np.maximum(out, 0.0))
        return _ret(out, p)

    def g_star(self, p):
        """Legendre transform max_u (p u - g(u)); +inf below g'(0)."""
        p = _as_array(p)
        below = p < self.gp0 * (1.0 - 1e-13)
        pc = np.where(below, self.gp0, np.maximum(p, self.gp0))
        if self.affine is not None:
            a, b = self.affine
            val = (a * pc - 1.0) ** 2 / (4.0 * b * pc)
        else:
            u = self.gamma(pc)
            val = pc * u - self.g(u)
        out = np.where(below, INF, val)
        return _ret(out, p)

    def char_slope(self, u):
        """dt/dx of the characteristic carrying flux ``u`` (inf at capacity)."""
        u = _as_array(u)
        out = np.where(self.saturated(u), INF, self.dg(u))
        return _ret(out, u)

    def inverse_speed(self, u):
        """1/v(g(u)), the time per unit length of a car in flux ``u``."""
        u = _as_array(u)
        if self.affine is not None:
            a, b = self.affine
            uc = np.clip(u, 0.0, self.M)
            return _ret(2.0 / (a + np.sqrt(np.maximum(a * a - 4.0 * b * uc, 0.0))), u)
        rho = np.asarray(self.g(np.clip(u, 0.0, self.M)))
        return _ret(1.0 / np.asarray(self.v(rho), dtype=float), u)


class LegendreView:
    """Read-only tabulation of gamma and g* on ``[g'(0), p_max]``.

    The table is a convenience for plotting and for cheap initial guesses;
    the exact evaluators stay on the model.
    """

    def __init__(self, model: FluxModel, p_max=None, n=512):
        self.model = model
        if p_max is None:
            p_max = 20.0 * model.gp0
        self.p = np.linspace(model.gp0, p_max, n)
        self.u = np.asarray(model.gamma(self.p))
        self.values = np.asarray(model.g_star(self.p))
        for arr in (self.p, self.u, self.values):
            arr.setflags(write=False)

    def gamma(self, p):
        return self.model.gamma(p)

    def g_star(self, p):
        return self.model.g_star(p)

    def fenchel_gap(self, p, u):
        """g*(p) + g(u) - p u, nonnegative by Fenchel-Young."""
        return self.model.g_star(p) + self.model.g(u) - np.asarray(p) * np.asarray(u)


def _check_velocity(v, rho_jam, samples=201):
    rho = np.linspace(0.0, rho_jam, samples)
    vals = np.asarray(v(rho), dtype=float) * np.ones_like(rho)
    if not np.all(np.isfinite(vals)):
        raise InvalidVelocityLaw("velocity law is not finite on [0, rho_jam]")
    if vals[0] <= 0.0:
        raise InvalidVelocityLaw(f"v(0) = {vals[0]!r} must be positive")
    if abs(vals[-1]) > 1e-9 * vals[0]:
        raise InvalidVelocityLaw(f"v(rho_jam) = {vals[-1]!r} must vanish")
    if np.any(np.diff(vals) >= 0.0):
        k = int(np.argmax(np.diff(vals) >= 0.0))
        raise InvalidVelocityLaw(f"v is not strictly decreasing near rho={rho[k]!r}")
    flux = rho * vals
    second = flux[:-2] - 2.0 * flux[1:-1] + flux[2:]
    bad = np.nonzero(second >= 0.0)[0]
    if bad.size:
        k = int(bad[0])
        triple = (rho[k], rho[k + 1], rho[k + 2])
        raise NonConcaveFlux(f"flux not strictly concave at samples rho={triple}")


def build_flux_model(v, rho_jam, dv=None, affine=None):
    """Validate a velocity law and locate the capacity point.

    Parameters
    ----------
    v : callable
        Velocity as a function of density, vectorized over numpy arrays.
    rho_jam : float
        Jam density, where ``v`` vanishes.
    dv : callable, optional
        Analytic derivative of ``v``; central differences are used otherwise.
    affine : tuple, optional
        ``(a, b)`` if ``v(rho) = a - b rho``.
    """
    rho_jam = float(rho_jam)
    if rho_jam <= 0.0:
        raise InvalidVelocityLaw("rho_jam must be positive")
    _check_velocity(v, rho_jam)
    v0 = float(np.asarray(v(np.asarray(0.0))))
    if affine is not None:
        a, b = map(float, affine)
        rho_max = a / (2.0 * b)
    else:
        if dv is not None:
            def fp(r):
                return float(v(np.asarray(r)) + r * dv(np.asarray(r)))
        else:
            def fp(r):
                return float(_slope(lambda q: q * np.asarray(v(np.asarray(q))), r, 1e-3 * rho_jam))
        rho_max = brentq(fp, 0.0, rho_jam, xtol=1e-14 * rho_jam, rtol=1e-14)
    M = float(rho_max * np.asarray(v(np.asarray(rho_max))))
    return FluxModel(v=v, rho_jam=rho_jam, rho_max=float(rho_max), M=M,
                     gp0=1.0 / v0, dv=dv, affine=None if affine is None else (a, b))


def affine_flux_model(a, b):
    """Model for the linear velocity law ``v = a - b rho`` (Greenshields)."""
    a, b = float(a), float(b)
    return build_flux_model(lambda r: a - b * np.asarray(r), a / b,
                            dv=lambda r: -b * np.ones_like(np.asarray(r, dtype=float)),
                            affine=(a, b))
