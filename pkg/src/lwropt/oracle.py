"""Independent checks: a finite-volume solver marching in x and a brute-force
optimizer over piecewise-constant departure rates."""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ._numerics import gauss_legendre
from .fluxmodel import FluxModel


class OracleError(RuntimeError):
    pass


class CFLViolation(OracleError):
    pass


class CapacitySaturation(OracleError):
    pass


class InfeasibleMass(OracleError):
    pass


@dataclass
class FVResult:
    t0: float
    dt: float
    dx: float
    steps: int
    u: np.ndarray        # arrival flux per t-cell, shape (..., n)
    theta: Optional[np.ndarray]  # arrival fractions, shape (..., N, n)

    @property
    def centers(self):
        return self.t0 + self.dt * (np.arange(self.u.shape[-1]) + 0.5)

    @property
    def mass(self):
        return self.u.sum(axis=-1) * self.dt


def fv_propagate(ubar, model: FluxModel, L, dt, dx=None, theta=None, t0=0.0, cfl=0.9, pad=True):
    """March u_x + g(u)_t = 0 from x=0 to x=L on a uniform t-grid.

    ``ubar`` holds departure cell averages (leading axes are a batch).
    Because g is increasing the exact Riemann flux at every interface is
    g of the left state, so Godunov reduces to upwinding in t. Fractions
    ride along in conservative form, with w_i = u theta_i and flux g(u) theta_i.
    """
    u = np.array(ubar, dtype=float, copy=True)
    cap = model.M * (1.0 - 1e-6)
    if np.any(u < 0.0):
        raise OracleError("departure rates must be nonnegative")
    umax = float(np.max(u, initial=0.0))
    if umax >= cap:
        raise CapacitySaturation(f"state {umax!r} at capacity")
    smax = float(model.dg(umax))
    if pad:
        extra = int(np.ceil(L * smax / dt)) + 4
        u = np.concatenate([u, np.zeros(u.shape[:-1] + (extra,))], axis=-1)
    if dx is None:
        nx = max(1, int(np.ceil(L * smax / (cfl * dt))))
    else:
        if dx * smax / dt > 1.0 + 1e-12:
            raise CFLViolation(f"dx*g'/dt = {dx * smax / dt:.4g} > 1")
        nx = max(1, int(np.ceil(L / dx - 1e-12)))
    dxx = L / nx
    lam = dxx / dt

    w = None
    if theta is not None:
        th = np.array(theta, dtype=float, copy=True)
        if pad:
            fill = np.zeros(th.shape[:-1] + (u.shape[-1] - th.shape[-1],))
            fill[..., 0, :] = 1.0
            th = np.concatenate([th, fill], axis=-1)
        w = u[..., None, :] * th
        last_theta = th

    g = model.g
    for _ in range(nx):
        F = g(u)
        if w is not None:
            Fw = F[..., None, :] * last_theta
            w[..., 1:] -= lam * (Fw[..., 1:] - Fw[..., :-1])
            w[..., :1] -= lam * Fw[..., :1]
        u[..., 1:] -= lam * (F[..., 1:] - F[..., :-1])
        u[..., :1] -= lam * F[..., :1]
        if w is not None:
            last_theta = _fractions(u, w, last_theta)
    if np.any(u >= cap):
        raise CapacitySaturation("state reached capacity during propagation")
    out_theta = None if w is None else last_theta
    return FVResult(float(t0), float(dt), dxx, nx, u, out_theta)


def _fractions(u, w, prev):
    w = np.maximum(w, 0.0)
    tot = w.sum(axis=-2, keepdims=True)
    ok = (u[..., None, :] > 1e-14) & (tot > 0.0)
    # empty cells take the fractions of their upwind neighbor
    shifted = np.concatenate([prev[..., :1], prev[..., :-1]], axis=-1)
    return np.where(ok, w / np.where(ok, tot, 1.0), shifted)


def cell_averages(fn, t_lo, t_hi, n, order=4):
    """Cell averages of a vectorized rate function on a uniform grid."""
    x, w = gauss_legendre(order)
    h = (t_hi - t_lo) / n
    edges = t_lo + h * np.arange(n)
    nodes = edges[:, None] + h * x[None, :]
    return (np.asarray(fn(nodes.ravel())).reshape(n, order) * w[None, :]).sum(axis=1)


def arrival_flux_error(departure_rate, arrival_rate, model: FluxModel, L, t_lo, t_hi, dt):
    """L1 distance between FV-propagated departures and a reference arrival flux.

    Both rates are callables of time; the reference is cell-averaged on the FV output grid.
    """
    n = int(round((t_hi - t_lo) / dt))
    ub = cell_averages(departure_rate, t_lo, t_lo + n * dt, n)
    res = fv_propagate(ub, model, L, dt, t0=t_lo)
    ua = cell_averages(arrival_rate, t_lo, t_lo + dt * res.u.size, res.u.size)
    return float(np.sum(np.abs(res.u - ua)) * dt), float(ub.sum() * dt), float(res.mass)


def fv_cost(spec, model, L, rates, t_lo, dt, theta=None, res=None):
    """Total cost of departure cells, arrivals evaluated by ``fv_propagate``.

    ``rates`` has shape (..., N, n): per-group departure rates on cells of
    width ``dt`` starting at ``t_lo``.
    """
    rates = np.asarray(rates, dtype=float)
    total = rates.sum(axis=-2)
    n = total.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        th = np.where(total[..., None, :] > 0.0, rates / np.where(total > 0, total, 1.0)[..., None, :],
                      1.0 / rates.shape[-2])
    if res is None:
        res = fv_propagate(total, model, L, dt, theta=th if rates.shape[-2] > 1 else None, t0=t_lo)
    theta_arr = res.theta if res.theta is not None else np.ones(res.u.shape[:-1] + (1,) + res.u.shape[-1:])
    x, w = gauss_legendre(4)
    nodes = (t_lo + dt * (np.arange(n)[:, None] + x[None, :]))
    phi_avg = (np.asarray(spec.phi(nodes)) * w[None, :]).sum(axis=1)
    dep = np.sum(total * phi_avg, axis=-1) * dt
    tc = res.centers
    psi = spec.psi_all(tc).T          # (N, m)
    arr = np.sum(res.u[..., None, :] * theta_arr * psi, axis=(-2, -1)) * dt
    return dep + arr, res


# -- brute force -------------------------------------------------------------
@dataclass
class BruteOptions:
    bins: int = 16
    starts: int = 20
    seed: int = 0
    cells_per_bin: int = 4
    polish_cells_per_bin: int = 16
    polish_top: int = 2
    polish_gap: int = 2
    fine_dt: float = 1e-3
    cap_fraction: float = 0.99
    coarse_min_step: float = 1e-3
    min_step: float = 1e-4
    max_sweeps: int = 4000


@dataclass
class BruteResult:
    rates: np.ndarray           # (N, bins)
    edges: np.ndarray
    cost: float
    coarse_cost: float
    start_costs: np.ndarray


def project_capped_simplex(y, mass, width, cap):
    """Closest h with 0 <= h <= cap and sum(h) * width = mass."""
    y = np.asarray(y, dtype=float)
    return _project_room(y, mass, width, np.full(y.shape, float(cap)))


def brute_force_optimize(spec, model: FluxModel, L, bins=16, window: Tuple[float, float] = (0.0, 1.0),
                         options: Optional[BruteOptions] = None):
    """Projected coordinate descent over piecewise-constant departure rates.

    Each sweep scores every mass transfer between two bins of one group in a
    single batched FV run. The search runs on a coarse t-grid from every
    start; the best few finals are polished on a finer grid and ranked by a
    fine FV evaluation.
    """
    opt = options or BruteOptions(bins=bins)
    if spec.N > 2:
        raise OracleError("brute force supports at most two groups")
    N, B = spec.N, int(bins)
    t_lo, t_hi = map(float, window)
    width = (t_hi - t_lo) / B
    cap = opt.cap_fraction * model.M
    G = spec.sizes
    if cap * (t_hi - t_lo) < G.sum():
        raise InfeasibleMass(f"capacity {cap * (t_hi - t_lo):.4g} below total mass {G.sum():.4g}")
    edges = np.linspace(t_lo, t_hi, B + 1)
    rng = np.random.default_rng(opt.seed)

    def coster(cells):
        def cost(h):
            return fv_cost(spec, model, L, np.repeat(h, cells, axis=-1), t_lo, width / cells)[0]
        return cost

    coarse = coster(opt.cells_per_bin)
    finals, final_costs, start_costs = [], [], []
    for _ in range(opt.starts):
        h = np.zeros((N, B))
        room = np.full(B, cap)
        for i in range(N):
            y = rng.exponential(1.0, B) * G[i] / (t_hi - t_lo)
            h[i] = _project_room(y, G[i], width, room)
            room = room - h[i]
        start_costs.append(float(coarse(h)))
        h, J = _descend(h, coarse, cap, 0.25 * cap, opt.coarse_min_step * cap, opt.max_sweeps)
        finals.append(h)
        final_costs.append(J)

    polish = coster(opt.polish_cells_per_bin)
    fine_cells = max(1, int(round(width / opt.fine_dt)))
    fine = coster(fine_cells)
    best = (np.inf, None, None)
    for k in np.argsort(final_costs)[: opt.polish_top]:
        h, Jp = _descend(finals[k], polish, cap, 4.0 * opt.coarse_min_step * cap, opt.min_step * cap,
                         opt.max_sweeps, opt.polish_gap)
        Jf = float(fine(h))
        if Jf < best[0]:
            best = (Jf, h, Jp)
    return BruteResult(best[1], edges, best[0], best[2], np.array(start_costs))


def _descend(h, cost, cap, step, min_step, max_sweeps, max_gap=None):
    N, B = h.shape
    gap = B if max_gap is None else max_gap
    pairs = [(i, a, b) for i in range(N) for a in range(B) for b in range(B)
             if a != b and abs(a - b) <= gap]
    J = float(cost(h))
    for _ in range(max_sweeps):
        if step < min_step:
            break
        tot = h.sum(axis=0)
        moves, cand = [], []
        for i, a, b in pairs:
            d = min(step, h[i, b])
            if d <= 0.0 or tot[a] + d > cap:
                continue
            hn = h.copy()
            hn[i, a] += d
            hn[i, b] -= d
            cand.append(hn)
            moves.append((i, a, b, d))
        if not cand:
            step *= 0.5
            continue
        Js = cost(np.stack(cand))
        gain = J - Js
        if not np.any(gain > 1e-13 * (1.0 + abs(J))):
            step *= 0.5
            continue
        k = int(np.argmax(gain))
        # also try the best improving moves on disjoint bins together
        combo, used = h.copy(), set()
        for j in np.argsort(-gain):
            if gain[j] <= 0.0:
                break
            i, a, b, d = moves[j]
            if a in used or b in used:
                continue
            used.update((a, b))
            combo[i, a] += d
            combo[i, b] -= d
        trial = [cand[k]]
        if len(used) > 2 and np.all(combo.sum(axis=0) <= cap) and np.all(combo >= 0.0):
            trial.append(combo)
        Jt = cost(np.stack(trial))
        j = int(np.argmin(Jt))
        h, J = trial[j], float(Jt[j])
    return h, J


def _project_room(y, mass, width, room):
    """Projection onto {0 <= h <= room, sum(h) width = mass}."""
    room = np.asarray(room, dtype=float)
    if np.sum(room) * width < mass * (1.0 - 1e-12):
        raise InfeasibleMass("mass exceeds the remaining capacity")
    target = mass / width
    lo, hi = float(np.min(y - room)), float(np.max(y))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum(np.clip(y - mid, 0.0, room)) > target:
            lo = mid
        else:
            hi = mid
    return np.clip(y - 0.5 * (lo + hi), 0.0, room)
