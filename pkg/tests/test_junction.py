import numpy as np
import pytest

from lwropt.fluxmodel import affine_flux_model
from lwropt.junction import (DensityOutOfRange, FluxBounds, JunctionConfig, JunctionError,
                             ModelShapeError, admissible_region_contains, buffer_step,
                             max_entry_flux, max_exit_flux, simulate_buffer, solve_lp,
                             solve_priority_curve, solve_stop_sign)

from grid_oracle import grid_optimum_2x2, grid_optimum_3x2, random_instance

ROAD = affine_flux_model(2.0, 1.0)   # M = 1 at rho = 1


def test_flux_bound_cases():
    assert max_exit_flux(ROAD, 0.0) == 0.0
    assert max_exit_flux(ROAD, 1.5) == pytest.approx(1.0)
    assert max_exit_flux(ROAD, 0.5) == pytest.approx(0.75)
    assert max_entry_flux(ROAD, 0.5) == pytest.approx(1.0)
    assert max_entry_flux(ROAD, 1.5) == pytest.approx(0.75)
    with pytest.raises(DensityOutOfRange):
        max_exit_flux(ROAD, 2.5)


def test_config_validation():
    with pytest.raises(ModelShapeError):
        JunctionConfig([ROAD], [ROAD], [0.5, 0.5], [[1.0]])
    with pytest.raises(JunctionError):
        JunctionConfig([ROAD], [ROAD, ROAD], [1.0], [[0.7, 0.4]])
    with pytest.raises(JunctionError):
        JunctionConfig([ROAD, ROAD], [ROAD], [0.7, 0.4], [[1.0], [1.0]])


def test_admissible_region_examples():
    cfg = JunctionConfig([ROAD, ROAD], [ROAD, ROAD], [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]])
    b = FluxBounds(np.array([0.6, 0.8]), np.array([1.0, 1.0]))
    assert admissible_region_contains(cfg, b, [0.0, 0.0])
    assert admissible_region_contains(cfg, b, b.incoming)
    tight = FluxBounds(b.incoming, np.array([0.7, 1.0]))
    assert admissible_region_contains(cfg, tight, [0.6, 0.8])
    assert not admissible_region_contains(cfg, tight, [0.6, 0.8 + 2e-6])


def test_lp_single_road():
    cfg = JunctionConfig([ROAD], [ROAD], [1.0], [[1.0]])
    for fin, fout in ((0.3, 0.9), (0.9, 0.3)):
        r = solve_lp(cfg, FluxBounds(np.array([fin]), np.array([fout])))
        assert r.incoming[0] == pytest.approx(min(fin, fout))


def test_lp_reports_ties():
    cfg = JunctionConfig([ROAD, ROAD], [ROAD], [0.5, 0.5], [[1.0], [1.0]])
    r = solve_lp(cfg, FluxBounds(np.array([0.8, 0.8]), np.array([1.0])))
    assert r.tie
    assert r.incoming.sum() == pytest.approx(1.0)
    # lexicographic choice favours road 1
    assert r.incoming[0] == pytest.approx(0.8)


@pytest.mark.parametrize("seed", range(50))
def test_lp_matches_grid_search_2x2(seed):
    rng = np.random.default_rng(seed)
    cfg, b = random_instance(rng, 2, 2)
    r = solve_lp(cfg, b)
    assert admissible_region_contains(cfg, b, r.incoming)
    lp = float(cfg.priorities @ r.incoming)
    grid = grid_optimum_2x2(cfg, b)
    assert grid <= lp + 1e-12
    assert lp - grid <= 1e-4


@pytest.mark.parametrize("seed", range(50))
def test_lp_matches_grid_search_3x2(seed):
    rng = np.random.default_rng(1000 + seed)
    cfg, b = random_instance(rng, 3, 2)
    r = solve_lp(cfg, b)
    assert admissible_region_contains(cfg, b, r.incoming)
    lp = float(cfg.priorities @ r.incoming)
    grid = grid_optimum_3x2(cfg, b)
    assert grid <= lp + 1e-12
    assert lp - grid <= 1e-4


def test_equal_priorities_maximize_total_flux():
    rng = np.random.default_rng(7)
    for _ in range(10):
        cfg, b = random_instance(rng, 2, 2)
        cfg.priorities = np.full(2, 0.5)
        r = solve_lp(cfg, b)
        assert r.incoming.sum() / 2 >= grid_optimum_2x2(cfg, b) - 1e-12


def test_priority_curve_examples():
    cfg = JunctionConfig([ROAD, ROAD], [ROAD, ROAD], [0.3, 0.7], [[0.5, 0.5], [0.2, 0.8]])
    free = FluxBounds(np.array([0.4, 0.5]), np.array([1.0, 1.0]))
    assert np.allclose(solve_priority_curve(cfg, free).incoming, free.incoming)
    one = JunctionConfig([ROAD], [ROAD, ROAD], [1.0], [[0.4, 0.6]])
    r = solve_priority_curve(one, FluxBounds(np.array([0.9]), np.array([1.0, 0.3])))
    assert r.incoming[0] == pytest.approx(min(0.9, 1.0 / 0.4, 0.3 / 0.6))


@pytest.mark.parametrize("seed", range(20))
def test_priority_curve_is_maximal(seed):
    rng = np.random.default_rng(2000 + seed)
    cfg, b = random_instance(rng, 3, 2)
    r = solve_priority_curve(cfg, b)
    assert admissible_region_contains(cfg, b, r.incoming)
    at_max = np.allclose(r.incoming, b.incoming)
    assert at_max or np.any(r.active)
    # on the curve: unsaturated roads share one parameter s
    s = r.incoming / cfg.priorities
    free = r.incoming < b.incoming * (1 - 1e-9)
    if np.sum(free) > 1:
        assert np.ptp(s[free]) <= 1e-9 * np.max(s[free])


def test_stop_sign_branches():
    cfg = JunctionConfig([ROAD, ROAD], [ROAD], [0.5, 0.5], [[1.0], [1.0]])
    busy = solve_stop_sign(cfg, FluxBounds(np.array([0.9, 0.5]), np.array([0.6])))
    assert busy.incoming == pytest.approx([0.6, 0.0])
    quiet = solve_stop_sign(cfg, FluxBounds(np.array([0.3, 0.5]), np.array([0.6])))
    assert quiet.incoming == pytest.approx([0.3, 0.3])
    with pytest.raises(ModelShapeError):
        solve_stop_sign(JunctionConfig([ROAD] * 3, [ROAD], np.full(3, 1 / 3), np.ones((3, 1))),
                        FluxBounds(np.ones(3), np.ones(1)))


@pytest.mark.parametrize("seed", range(20))
def test_all_solvers_land_in_region(seed):
    rng = np.random.default_rng(3000 + seed)
    cfg, b = random_instance(rng, 2, 3)
    for solver in (solve_lp, solve_priority_curve, solve_stop_sign):
        assert admissible_region_contains(cfg, b, solver(cfg, b).incoming)


def test_buffer_light_traffic_passes_through():
    cfg = JunctionConfig([ROAD, ROAD], [ROAD, ROAD], [0.5, 0.5], [[0.5, 0.5], [0.3, 0.7]], M_buf=1e-3)
    b = FluxBounds(np.array([0.2, 0.3]), np.array([1.0, 1.0]))
    st = buffer_step(cfg, b, np.zeros(2), 1e-5)
    assert np.allclose(st.incoming, b.incoming)
    assert np.allclose(st.outgoing, b.incoming @ cfg.turning)
    assert np.all(st.q == 0.0)


def test_full_buffer_blocks_inflow():
    cfg = JunctionConfig([ROAD, ROAD], [ROAD], [0.5, 0.5], [[1.0], [1.0]], M_buf=1e-3)
    st = buffer_step(cfg, FluxBounds(np.array([0.5, 0.5]), np.array([0.2])), np.array([1e-3]), 1e-5)
    assert np.all(st.incoming == 0.0)


def test_buffer_rejects_bad_queues():
    cfg = JunctionConfig([ROAD], [ROAD], [1.0], [[1.0]], M_buf=1e-3)
    with pytest.raises(JunctionError):
        buffer_step(cfg, FluxBounds(np.ones(1), np.ones(1)), np.array([-1e-9]), 1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_small_buffer_approaches_priority_curve(seed):
    rng = np.random.default_rng(4000 + seed)
    cfg, b = random_instance(rng, 2, 2, M_buf=1e-3)
    ts, qs, fin, fout = simulate_buffer(cfg, b, dt=1e-5, t_end=0.1, record_every=50)
    assert np.all(qs >= 0.0)
    assert np.all(qs.sum(axis=1) <= 1e-3 * (1 + 1e-12))
    ref = solve_priority_curve(cfg, b).incoming
    assert np.max(np.abs(fin[-1] - ref)) <= 1e-2
