import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import one_group_spec
from lwropt.laxhopf import BoundaryProfile, LaxSolution
from lwropt.oracle import (BruteOptions, CapacitySaturation, CFLViolation, InfeasibleMass,
                           brute_force_optimize, cell_averages, fv_cost, fv_propagate,
                           project_capped_simplex)


def test_zero_data_gives_zero_arrivals(model):
    res = fv_propagate(np.zeros(100), model, 3.0, 0.01)
    assert np.all(res.u == 0.0)


def test_constant_data_is_steady(model):
    c = 0.4
    res = fv_propagate(np.full(2000, c), model, 1.0, 0.005)
    # away from the two ends the state just travels
    assert np.allclose(res.u[400:1600], c, atol=1e-12)


def test_mass_conservation(model):
    rng = np.random.default_rng(1)
    ub = np.repeat(rng.uniform(0.0, 0.9, 20), 50)
    res = fv_propagate(ub, model, 4.0, 0.002)
    G = ub.sum() * 0.002
    assert abs(res.mass - G) <= 1e-3 * G


def test_cfl_and_saturation_errors(model):
    with pytest.raises(CFLViolation):
        fv_propagate(np.full(10, 0.5), model, 1.0, 0.01, dx=0.1)
    with pytest.raises(CapacitySaturation):
        fv_propagate(np.full(10, 1.0), model, 1.0, 0.01)


def test_fractions_stay_on_the_simplex(model):
    rng = np.random.default_rng(2)
    ub = np.repeat(rng.uniform(0.0, 0.9, 12), 40)
    th = rng.uniform(0.0, 1.0, (3, ub.size))
    th /= th.sum(axis=0)
    res = fv_propagate(ub, model, 2.0, 0.005, theta=th)
    assert np.all(res.theta >= 0.0)
    assert np.allclose(res.theta.sum(axis=0), 1.0, atol=1e-12)


def test_batched_runs_match_single_runs(model):
    rng = np.random.default_rng(3)
    ub = rng.uniform(0.0, 0.8, (3, 200))
    batch = fv_propagate(ub, model, 1.0, 0.01, pad=False)
    for k in range(3):
        single = fv_propagate(ub[k], model, 1.0, 0.01, dx=batch.dx, pad=False)
        assert np.array_equal(batch.u[k], single.u)


@pytest.mark.parametrize("seed", range(5))
def test_refinement_reduces_distance_to_lax(model, seed):
    rng = np.random.default_rng(500 + seed)
    rates = np.r_[0.0, rng.uniform(0.0, 0.9, 6), 0.0]
    sol = LaxSolution(model, BoundaryProfile(-1.0, 3.0, rates), 1.0)
    errs = []
    for dt in (8e-3, 4e-3, 2e-3):
        n = int(round(4.0 / dt))
        res = fv_propagate(cell_averages(sol.profile.rate, -1.0, 3.0, n), model, 1.0, dt, t0=-1.0)
        ref = cell_averages(sol.flux, -1.0, -1.0 + dt * res.u.size, res.u.size, order=8)
        errs.append(np.sum(np.abs(res.u - ref)) * dt)
    assert np.all(np.diff(errs) < 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=20), st.floats(0.01, 1.0))
def test_capped_simplex_projection(y, frac):
    y = np.array(y)
    width, cap = 0.5, 1.0
    mass = frac * cap * width * y.size
    h = project_capped_simplex(y, mass, width, cap)
    assert np.all(h >= 0.0) and np.all(h <= cap)
    assert h.sum() * width == pytest.approx(mass, rel=1e-9, abs=1e-12)


def test_single_bin_cost_is_the_only_feasible_profile(model):
    spec = one_group_spec(G=0.5)
    opt = BruteOptions(bins=1, starts=2, fine_dt=1e-3)
    res = brute_force_optimize(spec, model, 2.0, 1, (-1.0, 0.0), opt)
    assert np.allclose(res.rates, 0.5)
    n = 1000
    ref = fv_cost(spec, model, 2.0, np.full((1, n), 0.5), -1.0, 1.0 / n)[0]
    assert res.cost == pytest.approx(float(ref), rel=1e-12)


def test_infeasible_mass(model):
    with pytest.raises(InfeasibleMass):
        brute_force_optimize(one_group_spec(G=5.0), model, 2.0, 4, (0.0, 1.0), BruteOptions(bins=4))


@pytest.mark.slow
def test_more_bins_do_not_cost_more(model):
    spec = one_group_spec(G=0.5, psi="exp(t - 1)")
    costs = []
    for bins in (4, 8):
        opt = BruteOptions(bins=bins, starts=4, seed=0)
        costs.append(brute_force_optimize(spec, model, 2.0, bins, (-2.0, 1.0), opt).cost)
    assert costs[1] <= costs[0] * 1.005
