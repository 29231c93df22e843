import math

import numpy as np
import pytest

from oracles import bicycle_reference
from predcbf.dynamics import (
    BicycleParams,
    DiscreteStepper,
    DynamicsError,
    double_integrator,
    eval_f,
    kinematic_bicycle,
    make_system,
    rk4_step,
    rollout,
    single_integrator,
    turning_radius,
    unicycle,
)


def test_eval_f_examples():
    np.testing.assert_array_equal(eval_f(single_integrator(), [0, 0], [1, 2]), [1, 2])
    np.testing.assert_array_equal(eval_f(unicycle(), [0, 0, 0], [1, 0]), [1, 0, 0])
    np.testing.assert_array_equal(eval_f(kinematic_bicycle(), [0, 0, 0], [1, 0]), [1, 0, 0])


def test_eval_f_dimension_mismatch():
    with pytest.raises(DynamicsError):
        eval_f(single_integrator(), [0, 0, 0], [1, 2])
    with pytest.raises(DynamicsError):
        eval_f(unicycle(), [0, 0, 0], [1])


def test_rk4_exact_cases():
    np.testing.assert_allclose(rk4_step(single_integrator(), [0, 0], [1, 2], 0.4), [0.4, 0.8], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(rk4_step(double_integrator(), [0, 0, 1, 0], [0, 0], 1.0), [1, 0, 1, 0])


def test_rk4_bicycle_against_adaptive_reference():
    got = rk4_step(kinematic_bicycle(), [0, 0, 0], [1.0, 0.3], 0.1)
    np.testing.assert_allclose(got, bicycle_reference([0, 0, 0], (1.0, 0.3), 0.1), atol=1e-6)


def test_rk4_fourth_order_on_bicycle():
    sys = kinematic_bicycle(zeta_max=0.5)
    x0, u, t_end = np.array([0.0, 0.0, 0.3]), np.array([1.5, 0.45]), 2.0
    ref = bicycle_reference(x0, u, t_end)
    errs = []
    for n in (10, 20):
        x = x0
        for _ in range(n):
            x = rk4_step(sys, x, u, t_end / n)
        errs.append(np.linalg.norm(x - ref))
    assert errs[0] / errs[1] >= 15.0


def test_rk4_rejects_bad_dt_and_names_stage():
    with pytest.raises(DynamicsError):
        rk4_step(single_integrator(), [0, 0], [0, 0], 0.0)
    with pytest.raises(DynamicsError, match="k1"):
        rk4_step(single_integrator(), [0, 0], [np.inf, 0], 0.1)


def test_rollout_examples():
    st = DiscreteStepper(1.0)
    xs = rollout(single_integrator(), st, [0, 0], [[1, 0], [0, 1]])
    np.testing.assert_array_equal(xs, [[0, 0], [1, 0], [1, 1]])
    xs = rollout(unicycle(), st, [1, 2, 3], np.zeros((0, 2)))
    np.testing.assert_array_equal(xs, [[1, 2, 3]])
    xs = rollout(double_integrator(), DiscreteStepper(0.1), [0, 0, 0, 0], np.tile([1.0, 0.0], (10, 1)))
    assert abs(xs[-1, 0] - 0.5) <= 1e-9


def test_rollout_reports_step_index():
    with pytest.raises(DynamicsError, match="step 1"):
        rollout(single_integrator(), DiscreteStepper(1.0), [0, 0], [[0, 0], [np.nan, 0]])


def test_rollout_is_deterministic():
    rng = np.random.default_rng(1)
    u = rng.uniform([1, -0.3], [2, 0.3], (30, 2))
    a = rollout(kinematic_bicycle(), DiscreteStepper(0.2), [0, 0, 0.1], u)
    b = rollout(kinematic_bicycle(), DiscreteStepper(0.2), [0, 0, 0.1], u)
    assert a.tobytes() == b.tobytes()


def test_turning_radius():
    r1 = turning_radius(BicycleParams(wheelbase=1.0, zeta_max=math.pi / 4))
    assert r1 == pytest.approx(1.1180, abs=1e-4)
    r2 = turning_radius(BicycleParams(wheelbase=2.0, zeta_max=math.pi / 4))
    assert r2 == pytest.approx(2 * r1, rel=1e-12)
    assert turning_radius(BicycleParams(zeta_max=1e-9)) > 1e8


def test_bicycle_params_invariants():
    with pytest.raises(DynamicsError):
        BicycleParams(v_min=2.0, v_max=1.0)
    with pytest.raises(DynamicsError):
        BicycleParams(zeta_max=math.pi / 2)


def test_unicycle_speed_is_v():
    rng = np.random.default_rng(0)
    sys = unicycle()
    for _ in range(50):
        x = rng.uniform(-5, 5, 3)
        u = rng.uniform(sys.input_lo, sys.input_hi)
        f = eval_f(sys, x, u)
        assert math.hypot(f[0], f[1]) == pytest.approx(abs(u[0]), rel=1e-15)


def test_make_system_roundtrip_and_errors():
    for sys in (single_integrator(), double_integrator(), kinematic_bicycle(), unicycle()):
        d = sys.describe()
        again = make_system(d["id"], d["params"])
        assert again.describe() == d
    with pytest.raises(DynamicsError):
        make_system("quadrotor")
    with pytest.raises(DynamicsError):
        single_integrator((1, 1), (0, 0))


@pytest.mark.parametrize("sys", [single_integrator(), double_integrator(), kinematic_bicycle(), unicycle()],
                         ids=lambda s: s.model_id)
def test_jacobians_match_finite_differences(sys):
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (4, sys.state_dim))
    u = rng.uniform(sys.input_lo, sys.input_hi, (4, sys.input_dim))
    A, B = sys.jacobians(x, u)
    eps = 1e-6
    for i in range(sys.state_dim):
        dx = np.zeros(sys.state_dim)
        dx[i] = eps
        fd = (sys.f(x + dx, u) - sys.f(x - dx, u)) / (2 * eps)
        np.testing.assert_allclose(A[:, :, i], fd, atol=1e-7)
    for j in range(sys.input_dim):
        du = np.zeros(sys.input_dim)
        du[j] = eps
        fd = (sys.f(x, u + du) - sys.f(x, u - du)) / (2 * eps)
        np.testing.assert_allclose(B[:, :, j], fd, atol=1e-7)
