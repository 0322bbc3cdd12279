"""Riemann solvers and a buffer model for one intersection with m incoming
and n outgoing roads."""
import itertools
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .fluxmodel import FluxModel


class JunctionError(ValueError):
    pass


class ModelShapeError(JunctionError):
    pass


class DensityOutOfRange(JunctionError):
    pass


@dataclass
class JunctionConfig:
    incoming: List[FluxModel]
    outgoing: List[FluxModel]
    priorities: np.ndarray
    turning: np.ndarray            # (m, n), rows sum to one
    M_buf: Optional[float] = None

    def __post_init__(self):
        self.priorities = np.asarray(self.priorities, dtype=float)
        self.turning = np.atleast_2d(np.asarray(self.turning, dtype=float))
        m, n = len(self.incoming), len(self.outgoing)
        if m == 0 or n == 0:
            raise ModelShapeError("a junction needs incoming and outgoing roads")
        if self.priorities.shape != (m,):
            raise ModelShapeError(f"expected {m} priorities, got {self.priorities.shape}")
        if self.turning.shape != (m, n):
            raise ModelShapeError(f"turning matrix must be {m}x{n}, got {self.turning.shape}")
        if np.any(self.priorities < 0.0) or abs(self.priorities.sum() - 1.0) > 1e-12:
            raise JunctionError("priorities must be nonnegative and sum to one")
        if np.any(self.turning < 0.0) or np.any(np.abs(self.turning.sum(axis=1) - 1.0) > 1e-12):
            raise JunctionError("turning fractions must be nonnegative with unit row sums")
        if self.M_buf is not None and self.M_buf <= 0.0:
            raise JunctionError("buffer capacity must be positive")

    @property
    def m(self):
        return len(self.incoming)

    @property
    def n(self):
        return len(self.outgoing)


@dataclass
class FluxBounds:
    incoming: np.ndarray
    outgoing: np.ndarray


@dataclass
class JunctionResult:
    incoming: np.ndarray
    outgoing: np.ndarray
    active: np.ndarray        # outgoing constraints holding with equality
    tie: bool = False


def _check_density(model, rho):
    if not (0.0 <= rho <= model.rho_jam):
        raise DensityOutOfRange(f"density {rho!r} outside [0, {model.rho_jam!r}]")


def max_exit_flux(model: FluxModel, rho):
    """Largest flux an incoming road in state ``rho`` can send."""
    _check_density(model, rho)
    return float(model.f(rho)) if rho <= model.rho_max else model.M


def max_entry_flux(model: FluxModel, rho):
    """Largest flux an outgoing road in state ``rho`` can receive."""
    _check_density(model, rho)
    return model.M if rho < model.rho_max else float(model.f(rho))


def flux_bounds(cfg: JunctionConfig, rho_in, rho_out):
    fin = np.array([max_exit_flux(mo, r) for mo, r in zip(cfg.incoming, rho_in)])
    fout = np.array([max_entry_flux(mo, r) for mo, r in zip(cfg.outgoing, rho_out)])
    return FluxBounds(fin, fout)


def admissible_region_contains(cfg: JunctionConfig, bounds: FluxBounds, f, tol=0.0):
    f = np.asarray(f, dtype=float)
    if f.shape != (cfg.m,):
        return False
    if np.any(f < -tol) or np.any(f > bounds.incoming + tol):
        return False
    return bool(np.all(f @ cfg.turning <= bounds.outgoing + tol))


def _outgoing(cfg, f):
    return f @ cfg.turning


def _snap(cfg, bounds, f):
    """Nudge a numerically computed point so the exact membership test passes."""
    f = np.clip(np.asarray(f, dtype=float), 0.0, bounds.incoming)
    for _ in range(64):
        if admissible_region_contains(cfg, bounds, f):
            return f
        load = _outgoing(cfg, f)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(load > bounds.outgoing, bounds.outgoing / load, 1.0)
        f = f * float(np.min(ratio)) * (1.0 - 4.0 * np.finfo(float).eps)
    raise JunctionError("could not place the solution inside the admissible region")


def _result(cfg, bounds, f, tie=False):
    f = _snap(cfg, bounds, f)
    out = _outgoing(cfg, f)
    active = np.isclose(out, bounds.outgoing, rtol=1e-12, atol=1e-14)
    return JunctionResult(f, out, active, tie)


def solve_lp(cfg: JunctionConfig, bounds: FluxBounds):
    """Maximize sum c_i f_i over the admissible region by vertex enumeration."""
    m, n = cfg.m, cfg.n
    if m > 4 or n > 4:
        raise ModelShapeError("vertex enumeration is limited to 4x4 junctions")
    A = np.vstack([-np.eye(m), np.eye(m), cfg.turning.T])
    b = np.concatenate([np.zeros(m), bounds.incoming, bounds.outgoing])
    scale = 1.0 + float(np.max(np.abs(b)))
    verts = []
    for rows in itertools.combinations(range(A.shape[0]), m):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-14:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ x <= b + 1e-11 * scale):
            verts.append(x)
    verts = np.array(verts)
    obj = verts @ cfg.priorities
    best = float(np.max(obj))
    near = verts[obj >= best - 1e-12 * (1.0 + abs(best))]
    # distinct optimal vertices mean the maximizer is not unique
    uniq = np.unique(np.round(near, 12), axis=0)
    tie = uniq.shape[0] > 1
    order = np.lexsort(tuple(-uniq[:, k] for k in reversed(range(m))))
    return _result(cfg, bounds, uniq[order[0]], tie)


def _curve_limit(cfg, bounds, c):
    """Largest s with sum_i theta_ij min(c_i s, fmax_i) <= fmax_j for all j."""
    fmax = bounds.incoming
    brk = fmax / c
    order = np.argsort(brk)
    s_bar = np.inf
    for j in range(cfg.n):
        th = cfg.turning[:, j]
        cap = bounds.outgoing[j]
        if np.dot(th, fmax) <= cap:
            continue
        prev = 0.0
        for k in range(len(order) + 1):
            hi = brk[order[k]] if k < len(order) else np.inf
            sat = brk <= prev
            const = float(np.dot(th[sat], fmax[sat]))
            slope = float(np.dot(th[~sat], c[~sat]))
            s = (cap - const) / slope if slope > 0.0 else np.inf
            if s <= hi:
                s_bar = min(s_bar, max(s, prev))
                break
            prev = hi
    return s_bar


def solve_priority_curve(cfg: JunctionConfig, bounds: FluxBounds):
    """Largest point on the curve s -> min(c_i s, fmax_i) inside the region."""
    c = cfg.priorities
    if np.any(c <= 0.0):
        raise JunctionError("the priority curve needs positive priorities")
    s_bar = _curve_limit(cfg, bounds, c)
    f = np.minimum(c * s_bar, bounds.incoming) if np.isfinite(s_bar) else bounds.incoming.copy()
    return _result(cfg, bounds, f)


def solve_stop_sign(cfg: JunctionConfig, bounds: FluxBounds):
    """Road 1 has right of way; road 2 enters only when road 1 is not limited."""
    if cfg.m != 2:
        raise ModelShapeError(f"stop-sign rule needs exactly 2 incoming roads, got {cfg.m}")
    th, fout = cfg.turning, bounds.outgoing
    with np.errstate(divide="ignore"):
        lim1 = np.where(th[0] > 0.0, fout / np.where(th[0] > 0, th[0], 1.0), np.inf)
    f1 = min(bounds.incoming[0], float(np.min(lim1)))
    f2 = 0.0
    if f1 >= bounds.incoming[0] * (1.0 - 1e-12):
        rest = fout - th[0] * f1
        with np.errstate(divide="ignore"):
            lim2 = np.where(th[1] > 0.0, rest / np.where(th[1] > 0, th[1], 1.0), np.inf)
        f2 = max(0.0, min(bounds.incoming[1], float(np.min(lim2))))
    return _result(cfg, bounds, np.array([f1, f2]))


# -- buffer model ------------------------------------------------------------
@dataclass
class BufferState:
    q: np.ndarray
    incoming: np.ndarray = field(default_factory=lambda: np.empty(0))
    outgoing: np.ndarray = field(default_factory=lambda: np.empty(0))


def admission_rates(cfg: JunctionConfig, bounds: FluxBounds):
    """Per-road admission coefficients a_i = c_i K / M_buf.

    K = max_i fmax_i / c_i, so an empty buffer admits every road at its
    maximum and the admitted fluxes always lie on the priority curve.
    """
    c = cfg.priorities
    pos = c > 0.0
    K = float(np.max(bounds.incoming[pos] / c[pos])) if np.any(pos) else 0.0
    return c * K / cfg.M_buf


def buffer_step(cfg: JunctionConfig, bounds: FluxBounds, q, dt):
    """One explicit Euler step of the queue dynamics.

    Queues that would turn negative are clamped at zero and their outflow is
    reduced to what actually left; an overfull buffer trims the inflows.
    """
    if cfg.M_buf is None:
        raise JunctionError("buffer capacity M_buf is not set")
    q = np.asarray(q, dtype=float)
    if np.any(q < 0.0) or q.sum() > cfg.M_buf * (1.0 + 1e-12):
        raise JunctionError("queues must be nonnegative with total at most M_buf")
    a = admission_rates(cfg, bounds)
    room = max(cfg.M_buf - float(q.sum()), 0.0)
    fin = np.minimum(bounds.incoming, a * room)
    arriving = fin @ cfg.turning
    fout = np.where(q > 0.0, bounds.outgoing, np.minimum(arriving, bounds.outgoing))
    qn = q + dt * (arriving - fout)
    neg = qn < 0.0
    if np.any(neg):
        fout = np.where(neg, q / dt + arriving, fout)
        qn = np.where(neg, 0.0, qn)
    excess = float(qn.sum()) - cfg.M_buf
    if excess > 0.0 and fin.sum() > 0.0:
        # scale inflows so the buffer ends exactly full
        inflow = dt * arriving
        keep = max(0.0, 1.0 - excess / float(inflow.sum()))
        fin = fin * keep
        arriving = fin @ cfg.turning
        qn = np.maximum(q + dt * (arriving - fout), 0.0)
        over = float(qn.sum()) - cfg.M_buf
        if over > 0.0:
            qn *= cfg.M_buf / float(qn.sum())
    return BufferState(qn, fin, fout)


def simulate_buffer(cfg: JunctionConfig, bounds: FluxBounds, q0=None, dt=None, t_end=None,
                    record_every=1):
    """Integrate the buffer to ``t_end``; returns times, queues and fluxes."""
    if cfg.M_buf is None:
        raise JunctionError("buffer capacity M_buf is not set")
    a = admission_rates(cfg, bounds)
    fmax = float(max(np.max(bounds.incoming), np.max(bounds.outgoing), 1e-300))
    if dt is None:
        dt = cfg.M_buf / (10.0 * max(float(a.sum()) * cfg.M_buf, fmax))
    if t_end is None:
        t_end = 200.0 * cfg.M_buf / fmax
    steps = int(np.ceil(t_end / dt))
    q = np.zeros(cfg.n) if q0 is None else np.asarray(q0, dtype=float)
    ts, qs, fins, fouts = [], [], [], []
    state = None
    for k in range(steps):
        state = buffer_step(cfg, bounds, q, dt)
        q = state.q
        if (k + 1) % record_every == 0 or k == steps - 1:
            ts.append((k + 1) * dt)
            qs.append(q.copy())
            fins.append(state.incoming)
            fouts.append(state.outgoing)
    return np.array(ts), np.array(qs), np.array(fins), np.array(fouts)
