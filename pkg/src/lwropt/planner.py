"""Optimal departure plans for N driver groups on a single road.

Given constants C, every arrival time T is paired with the departure time
t(T) solving phi(t) + psi(T) = 0, where psi is the lower envelope of the
shifted arrival costs. The straight characteristic joining (t(T), 0) and
(T, L) carries the flux gamma((T - t)/L). The constants are then tuned so
that each group's share of the arrivals matches its size.
"""
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from ._numerics import bisect_increasing, gauss_legendre
from .fluxmodel import FluxModel
from .groups import FractionField, GroupSpec
from .laxhopf import BoundaryProfile, LaxSolution, WindowTooNarrow

log = logging.getLogger(__name__)


class PlannerError(RuntimeError):
    pass


class NoRootInWindow(PlannerError):
    pass


class MaxIterations(PlannerError):
    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class SingularJacobian(PlannerError):
    pass


class TrajectoryStalled(PlannerError):
    pass


@dataclass
class PlannerOptions:
    window: Tuple[float, float] = (-8.0, 8.0)
    arrival_points: int = 10000
    departure_cells: int = 8000
    gauss_order: int = 8
    fd_step: float = 1e-4
    tol: float = 1e-4
    max_iter: int = 200
    multistart: int = 8
    seed: int = 0
    threads: int = 1
    refine: bool = True
    refine_tol: float = 1e-3
    max_refine: int = 4
    ode_steps: int = 200
    ode_tol: float = 1e-6

    @property
    def mass_panels(self):
        return max(1, self.arrival_points // self.gauss_order)


Constants = np.ndarray


# -- envelope ---------------------------------------------------------------
class Envelope:
    """psi(T) = min_k (psi_k(T) - C_k) with its active index."""

    def __init__(self, spec: GroupSpec, C):
        self.spec = spec
        self.C = np.asarray(C, dtype=float)

    def shifted(self, T):
        return self.spec.psi_all(T) - self.C

    def __call__(self, T):
        out = np.min(self.shifted(T), axis=-1)
        return float(out) if np.ndim(T) == 0 else out

    def index(self, T):
        out = np.argmin(self.shifted(T), axis=-1)
        return int(out) if np.ndim(T) == 0 else out

    def derivative(self, T):
        idx = np.atleast_1d(self.index(T))
        d = np.atleast_2d(self.spec.dpsi_all(np.atleast_1d(T)))
        out = d[np.arange(idx.size), idx]
        return float(out[0]) if np.ndim(T) == 0 else out

    def crossings(self, lo, hi, samples=4001, xtol=1e-10):
        """Points in [lo, hi] where the active index changes."""
        if self.C.size == 1 or hi <= lo:
            return np.empty(0)
        T = np.linspace(lo, hi, samples)
        idx = self.index(T)
        out = []
        for k in np.nonzero(np.diff(idx) != 0)[0]:
            a, b = T[k], T[k + 1]
            i, j = idx[k], idx[k + 1]

            def diff(s, i=i, j=j):
                v = self.shifted(s)
                return v[..., i] - v[..., j]
            if np.sign(diff(a)) == np.sign(diff(b)):
                root = 0.5 * (a + b)
            else:
                root = brentq(diff, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps)
            out.append(root)
        return np.array(out)


def psi_envelope(spec: GroupSpec, C):
    return Envelope(spec, C)


def characteristic_terminus(spec: GroupSpec, C, t, T_window=None):
    """Arrival time T(t) with phi(t) + psi(T) = 0."""
    env = Envelope(spec, C)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    target = -np.asarray(spec.phi(t_arr), dtype=float) * np.ones_like(t_arr)
    if T_window is None:
        lo = np.full(t_arr.shape, float(np.min(t_arr)) - 1.0)
        hi = np.full(t_arr.shape, float(np.max(t_arr)) + 1.0)
        step = 1.0 + float(np.max(t_arr) - np.min(t_arr))
        for _ in range(80):
            bad_lo = env(lo) > target
            bad_hi = env(hi) < target
            if not (np.any(bad_lo) or np.any(bad_hi)):
                break
            lo = np.where(bad_lo, lo - step, lo)
            hi = np.where(bad_hi, hi + step, hi)
            step *= 2.0
        else:
            raise NoRootInWindow("could not bracket phi(t) + psi(T) = 0")
    else:
        lo = np.full(t_arr.shape, float(T_window[0]))
        hi = np.full(t_arr.shape, float(T_window[1]))
        if np.any(env(lo) > target) or np.any(env(hi) < target):
            raise NoRootInWindow("phi(t) + psi(T) = 0 has no root in the arrival window")
    T = bisect_increasing(env, target, lo, hi, iters=200, xtol=1e-13)
    return float(T[0]) if np.ndim(t) == 0 else T


# -- candidate ----------------------------------------------------------------
@dataclass
class Candidate:
    C: np.ndarray
    T_lo: float
    T_up: float
    support: List[Tuple[float, float]]
    crossings: np.ndarray
    pieces: List[Tuple[float, float, int]]   # support split at crossings, with active group
    T: Optional[np.ndarray] = None
    t_of_T: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    profile: Optional[BoundaryProfile] = None

    def arrival_rate(self, T):
        """Exact candidate flux u(T, L)."""
        geo = self._geo
        T = np.asarray(T, dtype=float)
        out = np.zeros(T.shape)
        inside = (T >= self.T_lo) & (T <= self.T_up)
        if np.any(inside):
            out[inside] = geo.flux(T[inside], geo.departure(T[inside]))
        return out

    def departure_rate(self, t):
        """Exact candidate departure rate; zero outside the window."""
        geo = self._geo
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        inside = (t >= geo.t_lo) & (t <= geo.t_hi)
        # a terminus before T_lo means free-flow arrival (zero flux)
        inside &= geo.env(np.full(t.shape, self.T_lo)) <= geo.neg_phi(t)
        if np.any(inside):
            ti = t[inside]
            Tn = characteristic_terminus(geo.spec, geo.env.C, ti, (self.T_lo, self.T_up))
            out[inside] = geo.flux(Tn, ti)
        return out


class _Geometry:
    """Shared evaluators for one (spec, model, L, C, window)."""

    def __init__(self, spec, model, L, C, window):
        self.spec, self.model, self.L = spec, model, float(L)
        self.env = Envelope(spec, C)
        self.t_lo, self.t_hi = map(float, window)
        self.span = self.t_hi - self.t_lo

    def neg_phi(self, t):
        t = np.asarray(t, dtype=float)
        return -np.asarray(self.spec.phi(t), dtype=float) * np.ones_like(t)

    def departure(self, T, lo=None, hi=None):
        """t(T) solving -phi(t) = psi(T), bracketed by the departure window."""
        T = np.asarray(T, dtype=float)
        lo = self.t_lo if lo is None else lo
        hi = self.t_hi if hi is None else hi
        return bisect_increasing(self.neg_phi, self.env(T), lo, hi, iters=200, xtol=1e-14)

    def slope(self, T, t):
        return (np.asarray(T) - t) / self.L

    def flux(self, T, t):
        p = self.slope(T, t)
        active = p > self.model.gp0
        out = np.zeros(np.shape(p))
        if np.any(active):
            out[active] = self.model.gamma(p[active])
        return out

    def arrival_range(self):
        gp0 = self.model.gp0
        T_lo = self.t_lo + self.L * gp0
        if self.env(T_lo) < self.neg_phi(self.t_lo):
            raise WindowTooNarrow("optimal departures start before the window")
        # arrivals before T_lo must not come from departures before the window
        Ts = np.linspace(T_lo - self.span, T_lo, 201)
        lo = np.full(Ts.shape, self.t_lo - 4.0 * self.span)
        if np.all(self.neg_phi(lo) <= self.env(Ts)):
            ts = self.departure(Ts, lo, self.t_lo)
            if np.any(self.slope(Ts, ts) > gp0 * (1.0 + 1e-12)):
                raise WindowTooNarrow("optimal departures start before the window")
        target = self.neg_phi(self.t_hi)
        hi, step = self.t_hi + self.L * gp0, 1.0 + self.span
        for _ in range(200):
            if self.env(hi) >= target:
                break
            hi += step
            step *= 2.0
        else:
            raise NoRootInWindow("arrival cost envelope never reaches -phi(t_hi)")
        T_up = float(bisect_increasing(self.env, target, T_lo, hi, iters=200, xtol=1e-13))
        if self.slope(T_up, self.t_hi) > gp0 * (1.0 + 1e-12):
            raise WindowTooNarrow("optimal departures continue past the window")
        return T_lo, T_up

    def support(self, T_lo, T_up, samples=4001):
        """Maximal intervals where the candidate flux is positive."""
        gp0 = self.model.gp0
        T = np.linspace(T_lo, T_up, samples)
        s = self.slope(T, self.departure(T)) - gp0
        pos = s > 0.0
        if not np.any(pos):
            return []

        def excess(x):
            return float(self.slope(x, self.departure(np.asarray(x))) - gp0)
        out = []
        k = 0
        n = T.size
        while k < n:
            if not pos[k]:
                k += 1
                continue
            j = k
            while j + 1 < n and pos[j + 1]:
                j += 1
            a = T_lo if k == 0 else brentq(excess, T[k - 1], T[k], xtol=1e-13)
            b = T_up if j == n - 1 else brentq(excess, T[j], T[j + 1], xtol=1e-13)
            out.append((a, b))
            k = j + 1
        return out


def build_candidate(spec: GroupSpec, model: FluxModel, L, C, options=None, tabulate=True):
    """Shock-free candidate generated by the constants ``C``."""
    opt = options or PlannerOptions()
    geo = _Geometry(spec, model, L, C, opt.window)
    T_lo, T_up = geo.arrival_range()
    support = geo.support(T_lo, T_up)
    cross = geo.env.crossings(T_lo, T_up)
    pieces = []
    for a, b in support:
        cuts = np.concatenate([[a], cross[(cross > a) & (cross < b)], [b]])
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            pieces.append((float(lo), float(hi), int(geo.env.index(0.5 * (lo + hi)))))
    cand = Candidate(np.asarray(C, dtype=float), T_lo, T_up, support, cross, pieces)
    cand._geo = geo
    if tabulate:
        _tabulate(cand, geo, opt)
    return cand


def _tabulate(cand, geo, opt):
    extra = [x for piece in cand.pieces for x in piece[:2]]
    T = np.unique(np.concatenate([np.linspace(cand.T_lo, cand.T_up, opt.arrival_points), extra]))
    t = geo.departure(T)
    cand.T, cand.t_of_T, cand.u = T, t, geo.flux(T, t)

    n = opt.departure_cells
    edges = np.linspace(geo.t_lo, geo.t_hi, n + 1)
    h = edges[1] - edges[0]
    x, w = gauss_legendre(4)
    nodes = (edges[:-1, None] + h * x[None, :]).ravel()
    rates = (cand.departure_rate(nodes).reshape(n, 4) * w[None, :]).sum(axis=1)
    if np.any(rates >= geo.model.M):
        raise PlannerError("candidate departure rate reaches road capacity")
    cand.profile = BoundaryProfile(geo.t_lo, geo.t_hi, rates)


@dataclass
class Partition:
    sets: List[List[Tuple[float, float]]]
    kappa: np.ndarray


def arrival_partition(candidate: Candidate, spec: GroupSpec, C=None, options=None):
    """Arrival sets A_i and their masses kappa_i (the map Lambda)."""
    opt = options or PlannerOptions()
    geo = candidate._geo
    sets = [[] for _ in range(spec.N)]
    kappa = np.zeros(spec.N)
    pieces = candidate.pieces
    if not pieces:
        return Partition(sets, kappa)
    total = sum(b - a for a, b, _ in pieces)
    x, w = gauss_legendre(opt.gauss_order)
    for a, b, i in pieces:
        m = max(1, int(np.ceil(opt.mass_panels * (b - a) / total)))
        e = np.linspace(a, b, m + 1)
        hh = np.diff(e)
        nodes = (e[:-1, None] + hh[:, None] * x[None, :]).ravel()
        u = geo.flux(nodes, geo.departure(nodes))
        kappa[i] += float(np.sum(u * (hh[:, None] * w[None, :]).ravel()))
        sets[i].append((a, b))
    for s in sets:
        s[:] = _merge(s)
    return Partition(sets, kappa)


def _merge(intervals, tol=1e-12):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1] + tol:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def mass_map(spec, model, L, C, options=None):
    """Lambda(C): masses of the arrival sets."""
    cand = build_candidate(spec, model, L, C, options, tabulate=False)
    return arrival_partition(cand, spec, options=options).kappa


# -- fitting the constants ------------------------------------------------------
@dataclass
class SolveResult:
    C: np.ndarray
    kappa: np.ndarray
    residual: float
    converged: bool
    iterations: List[dict] = field(default_factory=list)
    alternatives: List[np.ndarray] = field(default_factory=list)
    refinements: List[np.ndarray] = field(default_factory=list)


def default_initial_guess(spec, model, L, options=None):
    opt = options or PlannerOptions()
    t_mid = 0.5 * (opt.window[0] + opt.window[1])
    t_ff = t_mid + L * model.gp0
    return np.array([float(g.psi(t_ff)) for g in spec.groups]) + float(spec.phi(t_mid))


class _Fitter:
    def __init__(self, spec, model, L, G, opt):
        self.spec, self.model, self.L = spec, model, L
        self.G = np.asarray(G, dtype=float)
        self.opt = opt
        self.target = opt.tol * float(np.max(self.G))

    def residual(self, C):
        return mass_map(self.spec, self.model, self.L, C, self.opt) - self.G

    def jacobian(self, C, r, pool):
        h = self.opt.fd_step
        cols = []
        for i in range(C.size):
            Ch = C.copy()
            Ch[i] += h
            cols.append(Ch)
        if pool is not None:
            rs = list(pool.map(self.residual, cols))
        else:
            rs = [self.residual(c) for c in cols]
        return np.stack([(ri - r) / h for ri in rs], axis=1)

    def coordinate_sweep(self, C, r, trace):
        """Fallback: bisection on each C_i in turn (kappa_i grows with C_i)."""
        C = C.copy()
        for sweep in range(50):
            for i in range(C.size):
                def fi(c, i=i):
                    Ct = C.copy()
                    Ct[i] = c
                    return self.residual(Ct)[i]
                lo, hi = C[i] - 1.0, C[i] + 1.0
                flo, fhi = fi(lo), fi(hi)
                step = 2.0
                for _ in range(60):
                    if flo <= 0.0 <= fhi:
                        break
                    if flo > 0.0:
                        hi, fhi = lo, flo
                        lo -= step
                        flo = fi(lo)
                    else:
                        lo, flo = hi, fhi
                        hi += step
                        fhi = fi(hi)
                    step *= 2.0
                else:
                    raise MaxIterations("coordinate bisection failed to bracket", C, np.inf)
                C[i] = brentq(fi, lo, hi, xtol=1e-12)
            r = self.residual(C)
            trace.append({"method": "bisection", "C": C.tolist(), "residual": float(np.max(np.abs(r)))})
            if np.max(np.abs(r)) <= 1e-3 * self.target:
                break
        return C, r

    def newton(self, C0, pool=None):
        C = np.asarray(C0, dtype=float).copy()
        r = self.residual(C)
        trace = [{"method": "start", "C": C.tolist(), "residual": float(np.max(np.abs(r)))}]
        fine = 1e-3 * self.target
        for _ in range(self.opt.max_iter):
            norm = float(np.max(np.abs(r)))
            if norm <= fine:
                break
            try:
                J = self.jacobian(C, r, pool)
                if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e12:
                    raise SingularJacobian("finite-difference Jacobian is singular")
                d = np.linalg.solve(J, -r)
            except (SingularJacobian, np.linalg.LinAlgError):
                C, r = self.coordinate_sweep(C, r, trace)
                continue
            lam, accepted = 1.0, False
            while lam >= 1.0 / 1024:
                Ct = C + lam * d
                try:
                    rt = self.residual(Ct)
                except (WindowTooNarrow, NoRootInWindow):
                    lam *= 0.5
                    continue
                if np.max(np.abs(rt)) < norm:
                    accepted = True
                    break
                lam *= 0.5
            if accepted:
                C, r = Ct, rt
                trace.append({"method": "newton", "C": C.tolist(), "damping": lam,
                              "residual": float(np.max(np.abs(r)))})
            else:
                if norm <= self.target:
                    break
                C, r = self.coordinate_sweep(C, r, trace)
                if float(np.max(np.abs(r))) >= norm:
                    break
        return C, r, trace


def solve_constants(spec: GroupSpec, model: FluxModel, L, G=None, C0=None, options=None):
    """Fit Lambda(C) = G; returns a ``SolveResult``.

    Newton with damping runs from ``C0`` and from ``multistart - 1`` seeded
    perturbations of it. If distinct fixed points appear, the cheaper one is
    returned with a warning.
    """
    opt = options or PlannerOptions()
    G = spec.sizes if G is None else np.asarray(G, dtype=float)
    if np.any(G <= 0.0):
        raise ValueError("group sizes must be positive")
    if C0 is None:
        C0 = default_initial_guess(spec, model, L, opt)
    C0 = np.asarray(C0, dtype=float)
    rng = np.random.default_rng(opt.seed)
    starts = [C0] + [C0 + rng.uniform(-1.0, 1.0, C0.size) * 0.5 * (1.0 + np.abs(C0))
                     for _ in range(max(0, opt.multistart - 1))]
    fitter = _Fitter(spec, model, L, G, opt)

    def run(c):
        try:
            return fitter.newton(c)
        except (WindowTooNarrow, NoRootInWindow, MaxIterations) as exc:
            log.info("start %s abandoned: %s", c, exc)
            return None

    if opt.threads > 1:
        with ThreadPoolExecutor(opt.threads) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(c) for c in starts]

    trace = []
    found = []
    best = None
    for res in runs:
        if res is None:
            continue
        C, r, tr = res
        trace.extend(tr)
        norm = float(np.max(np.abs(r)))
        if best is None or norm < best[1]:
            best = (C, norm)
        if norm <= fitter.target:
            if not any(np.all(np.abs(C - c) <= 1e-3 * (1.0 + np.abs(c))) for c, _ in found):
                found.append((C, r))
    if not found:
        raise MaxIterations("no start reached the mass tolerance",
                            None if best is None else best[0], None if best is None else best[1])
    if len(found) > 1:
        costs = [candidate_cost(spec, model, L, c, opt) for c, _ in found]
        order = np.argsort(costs)
        warnings.warn(f"{len(found)} distinct constant vectors fit the group sizes; "
                      f"returning the cheaper (costs {sorted(costs)})", RuntimeWarning)
        found = [found[k] for k in order]
    C, r = found[0]
    result = SolveResult(C, r + G, float(np.max(np.abs(r))), True, trace,
                         alternatives=[c for c, _ in found[1:]])

    if opt.refine:
        prev = C
        panels = opt.arrival_points
        for _ in range(opt.max_refine):
            panels *= 2
            fine = _replace(opt, arrival_points=panels)
            Cn, rn, tr = _Fitter(spec, model, L, G, fine).newton(prev)
            result.iterations.extend(tr)
            result.refinements.append(Cn)
            moved = float(np.max(np.abs(Cn - prev)))
            prev = Cn
            result.C, result.kappa, result.residual = Cn, rn + G, float(np.max(np.abs(rn)))
            if moved < opt.refine_tol:
                break
    return result


def _replace(opt, **kw):
    from dataclasses import replace
    return replace(opt, **kw)


def candidate_cost(spec, model, L, C, options=None):
    """Total cost of the candidate: departure side plus arrival side."""
    opt = options or PlannerOptions()
    cand = build_candidate(spec, model, L, C, opt, tabulate=True)
    return _cost_of(cand, spec, opt)


def _cost_of(cand, spec, opt):
    geo = cand._geo
    p = cand.profile
    x, w = gauss_legendre(4)
    nodes = p.edges[:-1, None] + p.h * x[None, :]
    dep = float(np.sum(p.rates[:, None] * np.asarray(spec.phi(nodes)) * w[None, :]) * p.h)
    arr = 0.0
    xg, wg = gauss_legendre(opt.gauss_order)
    total = sum(b - a for a, b, _ in cand.pieces) or 1.0
    for a, b, i in cand.pieces:
        m = max(1, int(np.ceil(opt.mass_panels * (b - a) / total)))
        e = np.linspace(a, b, m + 1)
        hh = np.diff(e)
        nd = (e[:-1, None] + hh[:, None] * xg[None, :]).ravel()
        u = geo.flux(nd, geo.departure(nd))
        arr += float(np.sum(u * np.asarray(spec.psi(i, nd)) * (hh[:, None] * wg[None, :]).ravel()))
    return dep + arr


# -- departures -----------------------------------------------------------------
@dataclass
class Plan:
    constants: np.ndarray
    envelope: Envelope
    arrival_T: np.ndarray
    arrival_u: np.ndarray
    active: np.ndarray
    arrival_sets: List[List[Tuple[float, float]]]
    eta_T: np.ndarray
    eta: np.ndarray
    departure_sets: List[List[Tuple[float, float]]]
    profile: BoundaryProfile
    group_rates: np.ndarray
    kappa: np.ndarray
    cost: float
    solve: Optional[SolveResult] = None
    candidate: Optional[Candidate] = None

    @property
    def masses(self):
        return self.group_rates.sum(axis=1) * self.profile.h

    def fractions(self):
        return FractionField.from_rates(self.profile, self.group_rates)

    def lax(self, model, L):
        return LaxSolution(model, self.profile, L)


class _CharTable:
    """Point queries of the candidate flux from its straight characteristics."""

    def __init__(self, cand, model, L):
        keep = cand.u > 0.0
        # pad each support run with its zero-flux edge rays
        edge = np.zeros_like(keep)
        edge[:-1] |= keep[1:]
        edge[1:] |= keep[:-1]
        sel = keep | edge
        self.t0 = cand.t_of_T[sel]
        self.T = cand.T[sel]
        self.u = np.where(keep[sel], cand.u[sel], 0.0)
        self.L = L
        self.model = model

    def flux(self, t, x):
        if self.t0.size == 0:
            return np.zeros_like(t)
        pos = self.t0 + x * (self.T - self.t0) / self.L
        return np.interp(t, pos, self.u, left=0.0, right=0.0)


def _backtrack(table, model, L, T, steps):
    """RK4 in x for dt/dx = 1/v(rho(u)), from (T, L) back to x = 0."""
    t = np.asarray(T, dtype=float).copy()
    h = L / steps
    cap = model.M * (1.0 - 1e-6)

    def F(tt, xx):
        u = table.flux(tt, xx)
        if np.any(u >= cap):
            raise TrajectoryStalled("car path entered the capacity region")
        return np.asarray(model.inverse_speed(u))
    x = L
    for _ in range(steps):
        k1 = F(t, x)
        k2 = F(t - 0.5 * h * k1, x - 0.5 * h)
        k3 = F(t - 0.5 * h * k2, x - 0.5 * h)
        k4 = F(t - h * k3, x - h)
        t = t - h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        x -= h
    return t


def departure_map(table, model, L, T, steps=200, tol=1e-6, max_steps=6400):
    """eta(T) with step doubling until two resolutions agree to ``tol``."""
    coarse = _backtrack(table, model, L, T, steps)
    while steps < max_steps:
        steps *= 2
        fine = _backtrack(table, model, L, T, steps)
        if np.max(np.abs(fine - coarse), initial=0.0) <= tol:
            return fine
        coarse = fine
    return coarse


def backout_departures(candidate: Candidate, partition: Partition, model: FluxModel, L,
                       spec: GroupSpec = None, options=None, solve=None):
    """Per-group departure rates from the arrival partition."""
    opt = options or PlannerOptions()
    if candidate.T is None:
        _tabulate(candidate, candidate._geo, opt)
    geo = candidate._geo
    spec = spec or geo.spec
    table = _CharTable(candidate, model, L)
    ends = np.array([x for s in partition.sets for iv in s for x in iv])
    grid = candidate.T[candidate.u > 0.0]
    eta_all = departure_map(table, model, L, np.concatenate([ends, grid]), opt.ode_steps, opt.ode_tol)
    eta_ends, eta = eta_all[:ends.size], eta_all[ends.size:]

    dep_sets = []
    k = 0
    for s in partition.sets:
        cur = []
        for _ in s:
            cur.append((float(eta_ends[k]), float(eta_ends[k + 1])))
            k += 2
        dep_sets.append(cur)

    p = candidate.profile
    over = np.zeros((spec.N, p.n))
    lo, hi = p.edges[:-1], p.edges[1:]
    for i, s in enumerate(dep_sets):
        for a, b in s:
            over[i] += np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
    tot = over.sum(axis=0)
    frac = np.zeros_like(over)
    has = tot > 0.0
    frac[:, has] = over[:, has] / tot[has]
    orphan = np.nonzero((~has) & (p.rates > 0.0))[0]
    if orphan.size:
        mids = p.mids[orphan]
        dist = np.full((spec.N, orphan.size), np.inf)
        for i, s in enumerate(dep_sets):
            for a, b in s:
                dist[i] = np.minimum(dist[i], np.maximum(a - mids, mids - b))
        frac[np.argmin(dist, axis=0), orphan] = 1.0
    rates = frac * p.rates[None, :]
    cost = _cost_of(candidate, spec, opt)
    return Plan(constants=candidate.C, envelope=geo.env, arrival_T=candidate.T, arrival_u=candidate.u,
                active=geo.env.index(candidate.T), arrival_sets=partition.sets, eta_T=grid, eta=eta,
                departure_sets=dep_sets, profile=p, group_rates=rates, kappa=partition.kappa,
                cost=cost, solve=solve, candidate=candidate)


def plan(spec: GroupSpec, model: FluxModel, L, options=None, C0=None):
    """Full pipeline: fit constants, build the candidate, back out departures."""
    opt = options or PlannerOptions()
    res = solve_constants(spec, model, L, spec.sizes, C0, opt)
    fine = opt if not res.refinements else _replace(
        opt, arrival_points=opt.arrival_points * 2 ** len(res.refinements))
    cand = build_candidate(spec, model, L, res.C, opt)
    part = arrival_partition(cand, spec, options=fine)
    return backout_departures(cand, part, model, L, spec, opt, res)
