import math

import numpy as np
import pytest

from predcbf.classk import ClassKe
from predcbf.grid import GridRangeError, ShiftBound, interpolate
from predcbf.shift import (
    ScheduleError,
    ShiftSchedule,
    check_shiftable,
    constant,
    critical_period,
    kink_times,
    lambda_dot,
    lambda_eval,
    shifted_value,
    sinusoid_abs,
)
from setups import blue_grid

ALPHA = ClassKe(c=2.0, gamma=2.0)
S = sinusoid_abs(r=9.0, r_max=4.0, tau_p=20.0)
BOUND = ShiftBound(9.0)


def test_lambda_examples():
    assert lambda_eval(S, 0.0) == 9.0
    assert lambda_eval(S, 10.0) == pytest.approx(5.0, abs=1e-15)
    assert lambda_eval(constant(2.0), 123.0) == 2.0


def test_lambda_dot_examples():
    assert lambda_dot(S, 0.0) == pytest.approx(-4 * math.pi / 20)
    assert lambda_dot(S, 20.0) == pytest.approx(-4 * math.pi / 20)
    assert lambda_dot(S, 5.0) == pytest.approx(-0.4443, abs=1e-4)
    fd = (lambda_eval(S, 5.0 + 1e-6) - lambda_eval(S, 5.0 - 1e-6)) / 2e-6
    assert lambda_dot(S, 5.0) == pytest.approx(fd, abs=1e-7)
    assert lambda_dot(constant(3.0), 4.0) == 0.0


def test_one_sided_derivatives_at_kink_differ_in_sign():
    right = (lambda_eval(S, 1e-7) - lambda_eval(S, 0.0)) / 1e-7
    left = (lambda_eval(S, 0.0) - lambda_eval(S, -1e-7)) / 1e-7
    assert right < 0 < left
    assert lambda_dot(S, 0.0) == pytest.approx(min(left, right), rel=1e-5)


def test_kink_times_with_phase():
    s = sinusoid_abs(9.0, 4.0, 20.0, sigma=math.pi / 4)
    k = kink_times(s, 0.0, 45.0)
    np.testing.assert_allclose(k, [5.0, 25.0, 45.0])
    np.testing.assert_allclose(np.sin(math.pi * k / 20 - math.pi / 4), 0.0, atol=1e-12)


def test_reference_schedule_passes():
    rep = check_shiftable(S, ALPHA, BOUND, horizon=40.0)
    assert rep.passed
    assert rep.worst_margin >= 1.068 - 1e-3
    assert rep.samples >= 10001
    assert 0.0 in rep.kinks and 20.0 in rep.kinks


def test_constant_schedule_passes():
    for lam in (0.0, 2.0, 9.0):
        assert check_shiftable(constant(lam), ALPHA, BOUND, 10.0).passed


def test_range_violation_fails():
    rep = check_shiftable(constant(10.0), ALPHA, BOUND, 10.0)
    assert not rep.passed and not rep.range_ok and rep.derivative_ok


def test_fast_schedule_fails_with_located_time():
    rep = check_shiftable(sinusoid_abs(9.0, 4.0, 2.0), ALPHA, BOUND, 4.0)
    assert not rep.derivative_ok
    assert 0 <= rep.worst_t <= 4.0
    assert lambda_dot(sinusoid_abs(9.0, 4.0, 2.0), rep.worst_t) < ALPHA(-lambda_eval(S, 0.0))


def test_critical_period_brackets_boundary():
    tau_fail, tau_pass = critical_period(S, ALPHA, BOUND)
    assert tau_fail <= 8.0 < 20.0
    assert not check_shiftable(sinusoid_abs(9, 4, tau_fail), ALPHA, BOUND, 2 * tau_fail).passed
    assert check_shiftable(sinusoid_abs(9, 4, tau_pass), ALPHA, BOUND, 2 * tau_pass).passed


def test_shiftability_monotone_in_period():
    results = [check_shiftable(sinusoid_abs(9, 4, tau), ALPHA, BOUND, 2 * tau).passed
               for tau in np.geomspace(1.0, 60.0, 25)]
    first = results.index(True)
    assert all(results[first:])


def test_shifted_value():
    g = blue_grid()
    x = [3.1, -4.2]
    assert shifted_value(g, constant(0.0), 7.0, x) == interpolate(g, x)
    node = g.points()[17]
    assert shifted_value(g, S, 0.0, node) == g.values[17] + 9.0
    with pytest.raises(GridRangeError):
        shifted_value(g, S, 0.0, [11.0, 0.0])


def test_shift_preserves_spatial_argmax():
    g = blue_grid()
    rng = np.random.default_rng(5)
    X = rng.uniform(-10, 10, (200, 2))
    base = [interpolate(g, x) for x in X]
    shifted = [shifted_value(g, S, 3.7, x) for x in X]
    assert int(np.argmax(base)) == int(np.argmax(shifted))


def test_schedule_validation_and_roundtrip():
    with pytest.raises(ScheduleError):
        sinusoid_abs(r=3.0, r_max=4.0, tau_p=1.0)
    with pytest.raises(ScheduleError):
        ShiftSchedule("ramp")
    with pytest.raises(ScheduleError):
        ShiftSchedule.from_dict({"kind": "constant", "value": 1.0, "speed": 2})
    assert ShiftSchedule.from_dict(S.to_dict()) == S
