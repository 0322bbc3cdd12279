"""Driver groups: fractions carried along car paths, total cost, marginal cost."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ._numerics import gauss_legendre
from .costexpr import Function
from .laxhopf import BoundaryProfile, LaxSolution


class GroupError(ValueError):
    pass


class AssumptionViolation(GroupError):
    pass


class LabelOutOfRange(GroupError):
    pass


class AmbiguousCharacteristic(RuntimeError):
    pass


@dataclass
class Group:
    name: str
    size: float
    psi: Function


@dataclass
class GroupSpec:
    """N groups sharing one departure cost ``phi``."""
    phi: Function
    groups: List[Group] = field(default_factory=list)

    @property
    def N(self):
        return len(self.groups)

    @property
    def sizes(self):
        return np.array([g.size for g in self.groups], dtype=float)

    def psi(self, i, t):
        return self.groups[i].psi(t)

    def dpsi(self, i, t):
        return self.groups[i].psi.d(t)

    def psi_all(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.broadcast_to(g.psi(t), t.shape) for g in self.groups], axis=-1)

    def dpsi_all(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.broadcast_to(g.psi.d(t), t.shape) for g in self.groups], axis=-1)

    def validate(self, window, samples=2001):
        """Sampled checks of the sign conditions on phi and psi_i, and genericity."""
        if self.N == 0:
            raise AssumptionViolation("at least one group is required")
        t = np.linspace(window[0], window[1], samples)
        if np.any(self.sizes <= 0.0):
            raise AssumptionViolation("group sizes must be positive")
        if np.any(np.asarray(self.phi.d(t)) >= 0.0):
            raise AssumptionViolation("departure cost must be strictly decreasing on the window")
        for g in self.groups:
            if np.any(np.asarray(g.psi(t)) <= 0.0):
                raise AssumptionViolation(f"arrival cost of {g.name!r} must be positive")
            if np.any(np.asarray(g.psi.d(t)) <= 0.0):
                raise AssumptionViolation(f"arrival cost of {g.name!r} must be strictly increasing")
        d1 = self.dpsi_all(t)
        for i in range(self.N):
            for j in range(i + 1, self.N):
                diff = d1[:, i] - d1[:, j]
                if np.all(diff == 0.0):
                    raise AssumptionViolation(f"groups {i} and {j} have identical psi' on the window")
                flips = np.nonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) <= 0)[0]
                for k in flips:
                    tc = t[k] if diff[k] == 0.0 else 0.5 * (t[k] + t[k + 1])
                    d2 = self.groups[i].psi.d2(tc) - self.groups[j].psi.d2(tc)
                    if abs(d2) <= 1e-12:
                        raise AssumptionViolation(
                            f"non-generic cost pair ({i}, {j}) near t={tc:.6g}")


@dataclass
class FractionField:
    """Group fractions indexed by the cumulative-count label s in [0, G].

    ``breaks`` has K+1 increasing labels; ``fractions[k]`` applies on
    ``[breaks[k], breaks[k+1])`` (right-continuous, last segment closed).
    """
    breaks: np.ndarray
    fractions: np.ndarray

    @property
    def G(self):
        return float(self.breaks[-1])

    @property
    def N(self):
        return self.fractions.shape[1]

    def theta(self, s):
        """Fractions of every group at label(s) ``s``, shape (..., N)."""
        s = np.asarray(s, dtype=float)
        if self.fractions.shape[0] == 0:
            return np.zeros(s.shape + (self.N,))
        k = np.searchsorted(self.breaks, s, side="right") - 1
        k = np.clip(k, 0, self.fractions.shape[0] - 1)
        return self.fractions[k]

    def Theta(self, i, s):
        return self.theta(s)[..., i]

    def interior_breaks(self):
        return self.breaks[1:-1]

    @classmethod
    def from_rates(cls, profile: BoundaryProfile, group_rates):
        """Build from per-group departure rates on the profile's cells."""
        group_rates = np.asarray(group_rates, dtype=float)
        total = profile.rates
        pos = total > 0.0
        N = group_rates.shape[0]
        if not np.any(pos):
            return cls(np.array([0.0, 0.0]), np.full((1, N), 1.0 / N))
        frac = np.zeros((profile.n, N))
        frac[pos] = (group_rates[:, pos] / total[pos]).T
        frac[pos] /= frac[pos].sum(axis=1, keepdims=True)
        lo = profile.cum[:-1][pos]
        fr = frac[pos]
        # merge consecutive cells with equal fractions
        keep = np.ones(fr.shape[0], dtype=bool)
        keep[1:] = np.any(np.abs(np.diff(fr, axis=0)) > 1e-15, axis=1)
        breaks = np.concatenate([lo[keep], [profile.G]])
        return cls(breaks, fr[keep])


def label_inverse(profile: BoundaryProfile, s):
    """inf{t : Ubar(t) >= s}, the departure time of the driver with label s."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    G = profile.G
    slack = 1e-12 * (1.0 + G)
    if np.any(s_arr < -slack) or np.any(s_arr > G + slack):
        raise LabelOutOfRange(f"label outside [0, {G}]")
    supp = profile.support()
    start = supp[0] if supp else profile.t_lo
    sc = np.clip(s_arr, 0.0, G)
    k = np.searchsorted(profile.cum, sc, side="left")
    k = np.clip(k, 1, profile.n)
    rate = profile.rates[k - 1]
    base = profile.cum[k - 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = profile.edges[k - 1] + np.where(rate > 0.0, (sc - base) / np.where(rate > 0, rate, 1.0), 0.0)
    t = np.where(sc <= 0.0, start, t)
    return float(t[0]) if np.ndim(s) == 0 else t


def theta_at(fractions: FractionField, sol: LaxSolution, i, t, x):
    return fractions.Theta(i, sol.value(t, x))


class _ArrivalLabels:
    """Arrival times at x=L of the label breakpoints, computed once."""

    def __init__(self, sol, fractions):
        inner = fractions.interior_breaks()
        self.times = sol.level_time(inner) if inner.size else np.empty(0)


def total_cost(spec: GroupSpec, sol: LaxSolution, fractions: FractionField, panels=64, order=4):
    """Departure plus arrival cost of the solution.

    The arrival part is integrated in label space, where the Stieltjes
    measure dU(t, L) becomes d(sigma).
    """
    p = sol.profile
    if p.G <= 0.0:
        return 0.0
    x, w = gauss_legendre(order)
    nodes = p.edges[:-1, None] + p.h * x[None, :]
    dep = float(np.sum(p.rates[:, None] * np.asarray(spec.phi(nodes)) * w[None, :]) * p.h)

    breaks = fractions.breaks
    arr = 0.0
    all_nodes, all_w, all_mid = [], [], []
    for k in range(len(breaks) - 1):
        a, b = breaks[k], breaks[k + 1]
        if b <= a:
            continue
        edges = np.linspace(a, b, panels + 1)
        hh = np.diff(edges)
        sig = (edges[:-1, None] + hh[:, None] * x[None, :]).ravel()
        all_nodes.append(sig)
        all_w.append((hh[:, None] * w[None, :]).ravel())
        all_mid.append(np.full(sig.size, 0.5 * (a + b)))
    if all_nodes:
        sig = np.concatenate(all_nodes)
        ww = np.concatenate(all_w)
        mid = np.concatenate(all_mid)
        tarr = sol.level_time(sig)
        theta = fractions.theta(mid)
        psi = spec.psi_all(tarr)
        arr = float(np.sum(ww[:, None] * theta * psi))
    return dep + arr


def marginal_cost(spec: GroupSpec, sol: LaxSolution, fractions: FractionField, i, t,
                  order=16, labels=None, return_parts=False):
    """Cost of inserting one more driver of group ``i`` departing at ``t``.

    Vectorized over ``t``; entries at rarefaction centers are NaN (a scalar
    query raises ``AmbiguousCharacteristic``).
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if labels is None:
        labels = _ArrivalLabels(sol, fractions)
    tau_a = np.atleast_1d(sol.arrival_time(t_arr))
    T = sol.characteristic_terminus(t_arr)
    dT = 1e-7 * (1.0 + np.abs(T))
    ahead = sol.backward_char_interval(T + dT)
    ambiguous = ahead.eta_minus <= t_arr + 1e-13 * (1.0 + np.abs(t_arr))
    if np.ndim(t) == 0 and ambiguous[0]:
        raise AmbiguousCharacteristic(f"t={float(t)} is the center of a rarefaction fan")

    integral = _delay_integral(spec, sol, fractions, tau_a, T, labels.times, order)
    value = np.asarray(spec.phi(t_arr)) + np.asarray(spec.psi(i, tau_a)) + integral
    value = np.where(ambiguous, np.nan, value)
    if return_parts:
        return value, tau_a, T, integral, ambiguous
    return float(value[0]) if np.ndim(t) == 0 else value


def _delay_integral(spec, sol, fractions, lo, hi, label_times, order):
    """sum_j int_lo^hi psi_j'(s) theta_j(s, L) ds, split at group switches."""
    x, w = gauss_legendre(order)
    owner, nodes, weights = [], [], []
    for q, (a, b) in enumerate(zip(lo, hi)):
        if not b > a:
            continue
        cuts = label_times[(label_times > a) & (label_times < b)]
        pts = np.concatenate([[a], cuts, [b]])
        h = np.diff(pts)
        nd = (pts[:-1, None] + h[:, None] * x[None, :]).ravel()
        nodes.append(nd)
        weights.append((h[:, None] * w[None, :]).ravel())
        owner.append(np.full(nd.size, q))
    out = np.zeros(len(lo))
    if not nodes:
        return out
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    owner = np.concatenate(owner)
    U = sol.value(nodes)
    theta = fractions.theta(U)
    dpsi = spec.dpsi_all(nodes)
    np.add.at(out, owner, weights * np.sum(dpsi * theta, axis=1))
    return out


def envelope_delay_integral(spec, C, lo, hi):
    """int_lo^hi psi'(s) ds for the lower envelope psi = min_k (psi_k - C_k)."""
    C = np.asarray(C, dtype=float)

    def env(s):
        return np.min(spec.psi_all(s) - C, axis=-1)
    return np.asarray(env(np.asarray(hi))) - np.asarray(env(np.asarray(lo)))


def support_violation(spec, C, sol, fractions, T, flux_floor=1e-9):
    """max over arrivals of group i of psi_i - C_i - min_k(psi_k - C_k)."""
    C = np.asarray(C, dtype=float)
    T = np.asarray(T, dtype=float)
    u = np.asarray(sol.flux(T))
    theta = fractions.theta(sol.value(T))
    gap = spec.psi_all(T) - C
    gap = gap - np.min(gap, axis=1, keepdims=True)
    active = theta * u[:, None] > flux_floor
    return float(np.max(np.where(active, gap, -np.inf))) if np.any(active) else 0.0


@dataclass
class OptimalityReport:
    support_dev: np.ndarray      # max |dJ(i,t) - C_i| on Supp(u_i)
    off_support_slack: np.ndarray  # min dJ(i,t) - C_i off the support
    ambiguous: int
    samples: int

    def passed(self, C, rtol=1e-3, atol=1e-3):
        C = np.asarray(C, dtype=float)
        ok_on = np.all(self.support_dev <= rtol * (1.0 + np.abs(C)))
        ok_off = np.all(self.off_support_slack >= -atol)
        return bool(ok_on and ok_off)


def check_optimality(spec, C, sol, fractions, group_rates, n_support=400, n_off=500):
    """Evaluate the marginal-cost conditions on a departure plan.

    On the support of each group the marginal cost must equal C_i; elsewhere
    it may only be larger. Samples are cell midpoints; cells shared between
    groups are skipped (they are not Lebesgue points of the fractions).
    """
    C = np.asarray(C, dtype=float)
    p = sol.profile
    group_rates = np.asarray(group_rates, dtype=float)
    labels = _ArrivalLabels(sol, fractions)
    mids = p.mids
    total = p.rates
    dev = np.zeros(spec.N)
    slack = np.full(spec.N, np.inf)
    amb = 0
    count = 0
    for i in range(spec.N):
        pure = (group_rates[i] > 0.0) & np.isclose(group_rates[i], total, rtol=1e-12, atol=0.0)
        # skip the outermost cells where the rate is resolved by a single cell
        idx = np.nonzero(pure)[0]
        if idx.size > 2:
            idx = idx[1:-1]
        if idx.size:
            pick = idx[np.unique(np.linspace(0, idx.size - 1, min(n_support, idx.size)).astype(int))]
            vals = marginal_cost(spec, sol, fractions, i, mids[pick], labels=labels)
            amb += int(np.sum(np.isnan(vals)))
            count += pick.size
            good = vals[~np.isnan(vals)]
            if good.size:
                dev[i] = float(np.max(np.abs(good - C[i])))
        off = np.nonzero(group_rates[i] <= 0.0)[0]
        if off.size:
            pick = off[np.unique(np.linspace(0, off.size - 1, min(n_off, off.size)).astype(int))]
            vals = marginal_cost(spec, sol, fractions, i, mids[pick], labels=labels)
            amb += int(np.sum(np.isnan(vals)))
            count += pick.size
            good = vals[~np.isnan(vals)]
            if good.size:
                slack[i] = float(np.min(good - C[i]))
    return OptimalityReport(dev, slack, amb, count)
