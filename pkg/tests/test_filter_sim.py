import math

import numpy as np
import pytest

from oracles import halfspace_box_projection
from predcbf.dynamics import kinematic_bicycle, single_integrator
from predcbf.filter_sim import (
    Barrier,
    FilterConfig,
    FilterError,
    TargetLine,
    baseline_input,
    safe_input,
    simulate,
)
from predcbf.grid import CbfGrid, GridAxis, dini_directional, interpolate
from predcbf.shift import sinusoid_abs
from setups import BLUE_BOX, blue_grid

BLUE = single_integrator(*BLUE_BOX)
A = np.array([0.6, 0.8])


def planar_grid(offset=0.0):
    """Grid holding the affine function ``A.x + offset`` with the reference metadata."""
    ax = (GridAxis(-10.0, 10.0, 11), GridAxis(-10.0, 10.0, 11))
    X = ax[0].nodes[:, None] * A[0] + ax[1].nodes[None, :] * A[1] + offset
    return CbfGrid(ax, X, np.ones(X.size, bool), dict(blue_grid().meta))


# --- baseline ----------------------------------------------------------------


def test_baseline_examples():
    line = TargetLine(cruise=1.0)
    np.testing.assert_array_equal(baseline_input(BLUE, [3.0, 0.0], line), [1.0, 0.0])
    assert baseline_input(BLUE, [3.0, 1.5], line)[1] < 0
    bike = kinematic_bicycle()
    u = baseline_input(bike, [0.0, 0.0, 0.0], line)
    assert u[1] == 0.0 and u[0] == pytest.approx(0.5 * (bike.input_lo[0] + bike.input_hi[0]))


def test_baseline_clamped_to_box():
    u = baseline_input(BLUE, [0.0, 50.0], TargetLine(cruise=1.0))
    assert np.all(u >= BLUE.input_lo) and np.all(u <= BLUE.input_hi)


# --- filter ------------------------------------------------------------------


def test_inactive_constraint_returns_base_exactly():
    b = [Barrier(blue_grid())]
    ub = np.array([0.123456789, -0.5])
    res = safe_input(FilterConfig(), BLUE, b, 0.0, [9.5, 9.5], ub)
    assert res.u is not ub and np.array_equal(res.u, ub)
    assert res.feasible and res.active == [] and res.flag_string() == ""


def test_matches_box_qp_projection():
    # H(x) = 0 at x = 0, so the constraint reads A.u >= c_alpha
    g = planar_grid()
    cfg = FilterConfig()
    c_alpha = g.spec.c_alpha
    for ub in ([-1.0, 0.5], [-2.0, -2.0], [0.0, -1.0], [1.5, -1.9]):
        res = safe_input(cfg, BLUE, [Barrier(g)], 0.0, [0.0, 0.0], ub)
        ref = halfspace_box_projection(ub, A, c_alpha, BLUE.input_lo, BLUE.input_hi)
        assert res.feasible
        np.testing.assert_allclose(res.u, ref, atol=1e-3)
        assert A @ res.u >= c_alpha - 1e-9


def test_returned_input_satisfies_constraint_near_obstacle():
    g = blue_grid()
    x = np.array([9.5, 0.0])  # close to H = 0
    ub = np.array([-2.0, 0.0])  # straight at the obstacle
    res = safe_input(FilterConfig(), BLUE, [Barrier(g)], 0.0, x, ub)
    assert res.feasible and res.active == [0]
    d = dini_directional(g, x, BLUE.f(x, res.u))
    assert d >= -g.alpha(interpolate(g, x)) + g.spec.c_alpha - 1e-9


def test_infeasible_is_best_effort_and_flagged():
    g = planar_grid(offset=-30.0)  # deep negative: required ascent exceeds |A.u|max
    res = safe_input(FilterConfig(c_alpha=5.0), BLUE, [Barrier(g)], 0.0, [0.0, 0.0], [0.0, 0.0])
    assert not res.feasible
    assert "infeasible" in res.flag_string()
    np.testing.assert_allclose(res.u, [2.0, 2.0])  # maximizes A.u on the box


def test_clamped_query_is_flagged():
    g = planar_grid(offset=50.0)
    res = safe_input(FilterConfig(), BLUE, [Barrier(g)], 0.0, [10.5, 0.0], [1.0, 0.0])
    assert res.clamped and "clamped" in res.flag_string()


def test_filter_output_in_box():
    g = blue_grid()
    rng = np.random.default_rng(1)
    for _ in range(30):
        x = rng.uniform(-10, 10, 2)
        ub = rng.uniform(-3, 3, 2)
        res = safe_input(FilterConfig(), BLUE, [Barrier(g)], 0.0, x, ub)
        assert np.all(res.u >= BLUE.input_lo) and np.all(res.u <= BLUE.input_hi)


def test_filter_config_validation():
    with pytest.raises(FilterError):
        FilterConfig(P=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(FilterError):
        FilterConfig(c_alpha=-0.1)
    with pytest.raises(FilterError):
        FilterConfig(P=np.eye(3)).weight(2)


def test_weighted_projection_prefers_cheap_axis():
    g = planar_grid()
    ub = [-1.0, -1.0]
    cheap_x = safe_input(FilterConfig(P=np.diag([1.0, 100.0])), BLUE, [Barrier(g)], 0.0, [0.0, 0.0], ub)
    cheap_y = safe_input(FilterConfig(P=np.diag([100.0, 1.0])), BLUE, [Barrier(g)], 0.0, [0.0, 0.0], ub)
    assert abs(cheap_x.u[1] - ub[1]) < abs(cheap_y.u[1] - ub[1])
    assert abs(cheap_y.u[0] - ub[0]) < abs(cheap_x.u[0] - ub[0])


# --- simulation ---------------------------------------------------------------


def test_no_grids_is_pure_baseline():
    line = TargetLine(cruise=1.0)
    log = simulate(BLUE, 0.1, [], FilterConfig(), [-5.0, 2.0], 3.0, line)
    a = log.arrays()
    np.testing.assert_array_equal(a["u_base"], a["u_safe"])
    assert a["t"].size == 31
    assert np.all(np.diff(a["t"]) > 0)
    with pytest.raises(FilterError):
        simulate(BLUE, None, [], FilterConfig(), [0.0, 0.0], 1.0)


def test_static_scenario_short_run_is_safe():
    log = simulate(BLUE, None, [Barrier(blue_grid())], FilterConfig(), [-9.8, 1.0], 12.0)
    a = log.arrays()
    assert a["h_min"].min() >= 0
    assert np.diff(a["t"]) == pytest.approx(np.full(a["t"].size - 1, 0.1))


def test_csv_layout_and_determinism():
    sched = sinusoid_abs(9.0, 4.0, 20.0)
    run = lambda: simulate(BLUE, 0.2, [Barrier(blue_grid(), sched)], FilterConfig(), [-9.8, 1.0], 2.0,  # noqa: E731
                           config={"name": "t"})
    text = run().to_csv_text()
    assert text == run().to_csv_text()
    lines = text.splitlines()
    assert lines[0] == '# config: {"name": "t"}'
    assert lines[1] == "t,x0,x1,ub0,ub1,us0,us1,H_shifted_min,lambda_min,h_min,flags"
    first = lines[2].split(",")
    assert float(first[8]) == 9.0  # lambda at t = 0
    assert len(lines) == 2 + 11


def test_angles_are_wrapped():
    from predcbf.dynamics import unicycle

    sys = unicycle()
    log = simulate(sys, 0.1, [], FilterConfig(), [0.0, 5.0, 3.1], 4.0, TargetLine(angle=math.pi))
    psi = log.arrays()["x"][:, 2]
    assert np.all((psi >= -math.pi) & (psi < math.pi))
