"""Entropy solutions of u_x + g(u)_t = 0 from departure data via the Lax formula.

Departure data are piecewise constant on a uniform grid, so the cumulative
count is piecewise linear. On each cell the Lax objective

    tau -> x g*((t - tau)/x) + Ubar(tau)

is convex, and its stationary point is ``tau = t - x g'(ubar_c)``. The global
minimum is therefore found exactly by comparing one interior candidate per
cell with the grid edges where the objective has a kink minimum (the centers
of rarefaction fans). No search tolerance enters the value of U.
"""
from dataclasses import dataclass

import numpy as np

from ._numerics import gauss_legendre
from .fluxmodel import FluxModel

# entries per chunk in the (queries x candidates) matrices
_CHUNK = 3_000_000
# the sparse path runs once per distinct x
_SPARSE_MAX_X = 64


def _expand(a, b):
    """Pairs (j, i) for every j and i in range(a[j], b[j])."""
    counts = np.maximum(b - a, 0)
    total = int(counts.sum())
    j = np.repeat(np.arange(counts.size), counts)
    offs = np.cumsum(counts) - counts
    i = np.arange(total) - np.repeat(offs, counts) + np.repeat(a, counts)
    return j, i


class LaxError(RuntimeError):
    pass


class WindowTooNarrow(LaxError):
    pass


class NotAShock(LaxError):
    pass


class InvalidProfile(ValueError):
    pass


class BoundaryProfile:
    """Piecewise-constant departure rate on a uniform grid over [t_lo, t_hi].

    The rate vanishes outside the window; ``cum`` holds the cumulative count
    at the grid edges.
    """

    def __init__(self, t_lo, t_hi, rates):
        rates = np.asarray(rates, dtype=float)
        if rates.ndim != 1 or rates.size == 0:
            raise InvalidProfile("rates must be a non-empty 1-d array")
        if not t_hi > t_lo:
            raise InvalidProfile("empty window")
        if np.any(rates < 0.0) or not np.all(np.isfinite(rates)):
            raise InvalidProfile("rates must be finite and nonnegative")
        self.t_lo = float(t_lo)
        self.t_hi = float(t_hi)
        self.rates = rates
        self.n = rates.size
        self.h = (self.t_hi - self.t_lo) / self.n
        self.edges = np.linspace(self.t_lo, self.t_hi, self.n + 1)
        self.cum = np.concatenate([[0.0], np.cumsum(rates * self.h)])
        self.G = float(self.cum[-1])

    @classmethod
    def from_function(cls, fn, t_lo, t_hi, n, order=4):
        """Cell averages of a rate function, by Gauss-Legendre per cell."""
        edges = np.linspace(t_lo, t_hi, n + 1)
        x, w = gauss_legendre(order)
        h = edges[1] - edges[0]
        nodes = edges[:-1, None] + h * x[None, :]
        vals = np.asarray(fn(nodes.ravel()), dtype=float).reshape(nodes.shape)
        return cls(t_lo, t_hi, vals @ w)

    @classmethod
    def from_cumulative(cls, t_lo, t_hi, cum):
        cum = np.asarray(cum, dtype=float)
        h = (t_hi - t_lo) / (cum.size - 1)
        return cls(t_lo, t_hi, np.maximum(np.diff(cum), 0.0) / h)

    @property
    def mids(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def Ubar(self, t):
        """Cumulative departures before ``t``."""
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.edges, self.cum, left=0.0, right=self.G)
        return float(out) if t.ndim == 0 else out

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.floor((t - self.t_lo) / self.h).astype(int)
        inside = (k >= 0) & (k < self.n)
        out = np.where(inside, self.rates[np.clip(k, 0, self.n - 1)], 0.0)
        return float(out) if t.ndim == 0 else out

    def support(self):
        """(first, last) edge bounding the cells with positive rate, or None."""
        pos = np.nonzero(self.rates > 0.0)[0]
        if pos.size == 0:
            return None
        return float(self.edges[pos[0]]), float(self.edges[pos[-1] + 1])

    def check_capacity(self, M):
        if np.any(self.rates > M * (1.0 + 1e-12)):
            raise InvalidProfile(f"departure rate exceeds capacity M={M}")


@dataclass(frozen=True)
class CharInterval:
    """Initial times of the minimal and maximal backward characteristics."""
    T: np.ndarray
    eta_minus: np.ndarray
    eta_plus: np.ndarray

    @property
    def width(self):
        return self.eta_plus - self.eta_minus


@dataclass(frozen=True)
class _Minima:
    value: np.ndarray
    eta_minus: np.ndarray
    eta_plus: np.ndarray
    flux_left: np.ndarray
    multiple: np.ndarray


class LaxSolution:
    """Solution on a road of length ``L`` generated by a departure profile."""

    def __init__(self, model: FluxModel, profile: BoundaryProfile, L, shock_rtol=1e-9):
        profile.check_capacity(model.M)
        self.model = model
        self.profile = profile
        self.L = float(L)
        self.shock_rtol = shock_rtol
        p = profile
        self._r = np.concatenate([[0.0], p.rates, [0.0]])
        s = np.asarray(model.char_slope(self._r), dtype=float)
        self._s = s
        finite = np.isfinite(s)
        self._gs = np.where(finite, np.asarray(model.g_star(np.where(finite, s, model.gp0))), np.inf)
        self._lower = np.concatenate([[-np.inf], p.edges])
        self._upper = np.concatenate([p.edges, [np.inf]])
        self._ref = np.concatenate([[p.edges[0]], p.edges[:-1], [p.edges[-1]]])
        self._Uref = np.concatenate([[0.0], p.cum[:-1], [p.G]])
        self._s_max = float(np.max(s[finite]))
        self._saturated = bool(np.any(~finite))
        self.truncated_left = p.rates[0] > 0.0
        self.truncated_right = p.rates[-1] > 0.0

    @property
    def G(self):
        return self.profile.G

    # -- core ---------------------------------------------------------
    def _minima(self, t, x):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.broadcast_to(np.asarray(x, dtype=float), t.shape)
        if np.any(x <= 0.0):
            raise ValueError("x must be positive")
        m = t.size
        out = {k: np.empty(m) for k in ("value", "em", "ep", "flux")}
        mult = np.zeros(m, dtype=bool)
        xs, inv = np.unique(x, return_inverse=True)
        if xs.size <= _SPARSE_MAX_X and not self._saturated:
            for j, xv in enumerate(xs):
                idx = np.nonzero(inv.ravel() == j)[0]
                res = self._minima_sparse(t[idx], float(xv))
                out["value"][idx], out["em"][idx], out["ep"][idx], out["flux"][idx], mult[idx] = res
        else:
            order = np.argsort(t, kind="stable")
            ncols = 2 * self.profile.n + 3
            rows = max(1, _CHUNK // ncols)
            for start in range(0, m, rows):
                idx = order[start:start + rows]
                res = self._minima_chunk(t[idx], x[idx])
                out["value"][idx], out["em"][idx], out["ep"][idx], out["flux"][idx], mult[idx] = res
        return _Minima(out["value"], out["em"], out["ep"], out["flux"], mult)

    def _minima_sparse(self, t, x):
        """Same minimization for a common ``x``, visiting only active candidates.

        Cell c can host the minimizer only when ``t - x s_c`` lies inside it,
        and edge k only when ``s_k <= (t - e_k)/x <= s_{k+1}``; both are
        intervals in t, so sorted queries are matched by binary search.
        """
        model = self.model
        p = self.profile
        order = np.argsort(t, kind="stable")
        ts = t[order]
        # interior candidates of the extended cells
        lo_t = self._lower + x * self._s
        hi_t = self._upper + x * self._s
        a = np.searchsorted(ts, lo_t, side="right")
        b = np.searchsorted(ts, hi_t, side="left")
        ci, qi = _expand(a, b)
        tq = ts[qi]
        tau_i = tq - x * self._s[ci]
        val_i = x * self._gs[ci] + self._Uref[ci] + self._r[ci] * (tau_i - self._ref[ci])
        # kink candidates at grid edges
        e = p.edges
        s_left, s_right = self._s[:-1], self._s[1:]
        a = np.searchsorted(ts, e + x * s_left, side="left")
        b = np.searchsorted(ts, e + x * s_right, side="right")
        ke, qe = _expand(a, b)
        pk = np.maximum((ts[qe] - e[ke]) / x, model.gp0)
        val_e = x * np.asarray(model.g_star(pk), dtype=float) + p.cum[ke]
        flux_e = np.asarray(model.gamma(pk), dtype=float)

        q = np.concatenate([qi, qe])
        vals = np.concatenate([val_i, val_e])
        taus = np.concatenate([tau_i, e[ke]])
        fluxes = np.concatenate([self._r[ci], flux_e])
        n = ts.size
        if np.any(np.bincount(q, minlength=n) == 0):
            raise LaxError("no feasible minimizer; check the evaluation point")
        best = np.full(n, np.inf)
        np.minimum.at(best, q, vals)
        tol = self.shock_rtol * (1.0 + np.abs(best))
        near = vals <= best[q] + tol[q]
        qn, tn, fn = q[near], taus[near], fluxes[near]
        em = np.full(n, np.inf)
        ep = np.full(n, -np.inf)
        np.minimum.at(em, qn, tn)
        np.maximum.at(ep, qn, tn)
        # flux of the leftmost near-minimizer
        srt = np.lexsort((tn, qn))
        first = np.ones(srt.size, dtype=bool)
        first[1:] = qn[srt][1:] != qn[srt][:-1]
        flux = np.empty(n)
        flux[qn[srt][first]] = fn[srt][first]
        cnt = np.bincount(qn, minlength=n)
        multiple = (cnt > 1) & (ep - em > 1e-12 * (1.0 + np.abs(ts)))
        self._check_window(em, ep)
        res = [np.empty(n) for _ in range(4)] + [np.empty(n, dtype=bool)]
        for dst, src in zip(res, (best, em, ep, flux, multiple)):
            dst[order] = src
        return tuple(res)

    def _column_range(self, t, x):
        p = self.profile
        if self._saturated:
            return 0, p.n
        tau_lo = np.min(t - x * self._s_max) - p.h
        tau_hi = np.max(t - x * self.model.gp0) + p.h
        c0 = int(np.clip(np.floor((tau_lo - p.t_lo) / p.h), 0, p.n))
        c1 = int(np.clip(np.ceil((tau_hi - p.t_lo) / p.h), 0, p.n))
        return c0, c1

    def _minima_chunk(self, t, x):
        model = self.model
        p = self.profile
        c0, c1 = self._column_range(t, x)
        # extended cells: 0 = left exterior, c+1 = grid cell c, n+1 = right exterior
        cells = np.concatenate([[0], np.arange(c0 + 1, c1 + 1), [p.n + 1]])
        tc, xc = t[:, None], x[:, None]

        s = self._s[cells]
        tau_i = tc - xc * s[None, :]
        inside = (tau_i > self._lower[cells][None, :]) & (tau_i < self._upper[cells][None, :])
        with np.errstate(invalid="ignore"):
            val_i = xc * self._gs[cells][None, :] + self._Uref[cells][None, :] \
                + self._r[cells][None, :] * (tau_i - self._ref[cells][None, :])
        val_i = np.where(inside, val_i, np.inf)
        tau_i = np.where(inside, tau_i, np.nan)
        flux_i = np.broadcast_to(self._r[cells][None, :], val_i.shape)

        # kink minima at grid edges e_k, k in [c0, c1]
        ks = np.arange(c0, c1 + 1)
        e = p.edges[ks]
        pk = (tc - e[None, :]) / xc
        cand = (pk >= self._s[ks][None, :]) & (pk <= self._s[ks + 1][None, :])
        val_e = np.full(pk.shape, np.inf)
        flux_e = np.zeros(pk.shape)
        if np.any(cand):
            pc = pk[cand]
            val_e[cand] = (xc * np.ones_like(pk))[cand] * np.asarray(model.g_star(pc)) \
                + np.broadcast_to(p.cum[ks][None, :], pk.shape)[cand]
            flux_e[cand] = np.asarray(model.gamma(pc))
        tau_e = np.where(cand, np.broadcast_to(e[None, :], pk.shape), np.nan)

        vals = np.concatenate([val_i, val_e], axis=1)
        taus = np.concatenate([tau_i, tau_e], axis=1)
        fluxes = np.concatenate([flux_i, flux_e], axis=1)
        best = np.min(vals, axis=1)
        if not np.all(np.isfinite(best)):
            raise LaxError("no feasible minimizer; check the evaluation point")
        tol = self.shock_rtol * (1.0 + np.abs(best))
        near = vals <= (best + tol)[:, None]
        em = np.min(np.where(near, taus, np.inf), axis=1)
        ep = np.max(np.where(near, taus, -np.inf), axis=1)
        left_col = np.argmin(np.where(near, taus, np.inf), axis=1)
        flux = fluxes[np.arange(t.size), left_col]
        nmin = np.sum(near, axis=1)
        multiple = (nmin > 1) & (ep - em > 1e-12 * (1.0 + np.abs(t)))
        self._check_window(em, ep)
        return best, em, ep, flux, multiple

    def _check_window(self, em, ep):
        p = self.profile
        slack = 1e-12 * (1.0 + abs(p.t_lo) + abs(p.t_hi))
        if self.truncated_left and np.any(em <= p.t_lo + slack):
            raise WindowTooNarrow("argmin at the left window edge with truncated data")
        if self.truncated_right and np.any(ep >= p.t_hi - slack):
            raise WindowTooNarrow("argmin at the right window edge with truncated data")

    # -- queries --------------------------------------------------------
    def value(self, t, x=None):
        """U(t, x): number of cars that passed ``x`` before time ``t``."""
        x = self.L if x is None else x
        t_arr = np.asarray(t, dtype=float)
        t1 = np.atleast_1d(t_arr)
        x1 = np.broadcast_to(np.asarray(x, dtype=float), t1.shape)
        out = np.asarray(self.profile.Ubar(t1), dtype=float).copy()
        pos = x1 > 0.0
        if np.any(pos):
            out[pos] = self._minima(t1[pos], x1[pos]).value
        return float(out[0]) if t_arr.ndim == 0 else out

    def flux(self, t, x=None, return_flags=False):
        """u(t-, x); at shocks the left state, with a multiplicity flag."""
        x = self.L if x is None else x
        t_arr = np.asarray(t, dtype=float)
        res = self._minima(np.atleast_1d(t_arr), x)
        flux, mult = res.flux_left, res.multiple
        if t_arr.ndim == 0:
            flux, mult = float(flux[0]), bool(mult[0])
        return (flux, mult) if return_flags else flux

    def backward_char_interval(self, T, x=None):
        x = self.L if x is None else x
        T_arr = np.asarray(T, dtype=float)
        res = self._minima(np.atleast_1d(T_arr), x)
        if T_arr.ndim == 0:
            return CharInterval(float(T_arr), float(res.eta_minus[0]), float(res.eta_plus[0]))
        return CharInterval(T_arr, res.eta_minus, res.eta_plus)

    def _latest_arrival_bound(self, x):
        return self.profile.t_hi + x * self._s_max + 1e-9 * (1.0 + abs(self.profile.t_hi))

    def level_time(self, levels, x=None, t_start=None, tol=1e-12):
        """inf{t >= t_start : U(t, x) >= level}, vectorized over levels."""
        x = self.L if x is None else float(x)
        levels = np.atleast_1d(np.asarray(levels, dtype=float))
        if t_start is None:
            t_start = np.full(levels.shape, self.profile.t_lo + x * self.model.gp0)
        lo = np.broadcast_to(np.asarray(t_start, dtype=float), levels.shape).copy()
        if self._saturated:
            raise WindowTooNarrow("cannot bound arrival times for data at capacity")
        hi = np.maximum(lo, self._latest_arrival_bound(x)) + 1e-9
        if np.any(self.value(hi, x) < levels - 1e-12 * (1.0 + self.G)):
            raise WindowTooNarrow("level not reached inside the evaluation window")
        slack = 1e-13 * (1.0 + self.G)
        done = self.value(lo, x) >= levels - slack
        hi = np.where(done, lo, hi)
        scale = tol * (1.0 + np.abs(hi))
        for _ in range(200):
            active = (hi - lo) > scale
            if not np.any(active):
                break
            mid = 0.5 * (lo[active] + hi[active])
            up = self.value(mid, x) >= levels[active] - slack
            hi[active] = np.where(up, mid, hi[active])
            lo[active] = np.where(up, lo[active], mid)
        return hi

    def passage_time(self, t0, x=None):
        """Time at which the car departing at ``t0`` passes ``x``."""
        x = self.L if x is None else float(x)
        t0_arr = np.atleast_1d(np.asarray(t0, dtype=float))
        free = t0_arr + x * self.model.gp0
        if x == 0.0:
            out = t0_arr.copy()
        else:
            levels = np.asarray(self.profile.Ubar(t0_arr), dtype=float)
            out = free.copy()
            busy = levels > 0.0
            if np.any(busy):
                out[busy] = np.maximum(free[busy], self.level_time(levels[busy], x, t_start=free[busy]))
        return float(out[0]) if np.ndim(t0) == 0 else out

    def arrival_time(self, t0):
        return self.passage_time(t0, self.L)

    def car_trajectory(self, t0, n=101):
        """Sampled path (t_k, x_k) of the car departing at ``t0``."""
        xs = np.linspace(0.0, self.L, n)
        ts = np.array([self.passage_time(t0, xk) for xk in xs])
        return ts, xs

    def characteristic_terminus(self, t, x=None):
        """Smallest T whose backward characteristics reach back to ``t``."""
        x = self.L if x is None else float(x)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo = t + x * self.model.gp0
        hi = t + x * self._s_max + 1e-9
        for _ in range(200):
            if np.all(hi - lo <= 1e-12 * (1.0 + np.abs(hi))):
                break
            mid = 0.5 * (lo + hi)
            ci = self.backward_char_interval(mid, x)
            up = ci.eta_plus >= t
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        return hi

    def compressionize(self, T):
        """Replace the data feeding a shock at (T, L) by a centered compression wave."""
        ci = self.backward_char_interval(float(T))
        em, ep = ci.eta_minus, ci.eta_plus
        if ep - em <= 1e-12 * (1.0 + abs(T)):
            raise NotAShock(f"no shock reaches (T={T}, L)")
        lam = self.value(float(T))
        p = self.profile
        cum = p.cum.copy()
        inside = (p.edges > em) & (p.edges < ep)
        cum[inside] = lam - self.L * np.asarray(self.model.g_star((T - p.edges[inside]) / self.L))
        cum = np.minimum(cum, p.cum)
        return BoundaryProfile.from_cumulative(p.t_lo, p.t_hi, cum)


# module-level spellings of the operations
def lax_value(sol, t, x):
    return sol.value(t, x)


def lax_flux(sol, t, x):
    return sol.flux(t, x)


def backward_char_interval(sol, T):
    return sol.backward_char_interval(T)


def arrival_time(sol, t0):
    return sol.arrival_time(t0)


def car_trajectory(sol, t0, n=101):
    return sol.car_trajectory(t0, n)


def compressionize(sol, T):
    return sol.compressionize(T)
