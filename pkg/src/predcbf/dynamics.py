"""Continuous-time control systems, box input sets and RK4 discretization.

All vector fields are written for batches: ``x`` has shape ``(B, n)`` and ``u``
shape ``(B, m)``.  Single states go through :func:`eval_f`, :func:`rk4_step`
and :func:`rollout`, which add and strip the batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MODEL_IDS = ("single_integrator", "double_integrator", "bicycle", "unicycle")


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class BicycleParams:
    wheelbase: float = 1.0
    v_min: float = 1.0
    v_max: float = 2.0
    zeta_max: float = 20.0 / 180.0 * math.pi

    def __post_init__(self):
        if not (0.0 < self.v_min <= self.v_max):
            raise DynamicsError(f"need 0 < v_min <= v_max, got {self.v_min}, {self.v_max}")
        if not (0.0 < self.zeta_max < math.pi / 2):
            raise DynamicsError(f"zeta_max must lie in (0, pi/2), got {self.zeta_max}")
        if self.wheelbase <= 0.0:
            raise DynamicsError("wheelbase must be positive")


class ControlSystem:
    """Base class: ``xdot = f(x, u)`` with ``u`` restricted to a box."""

    model_id = "custom"
    state_dim: int
    input_dim: int
    # indices of states that are angles on [-pi, pi)
    angular_states: tuple[int, ...] = ()

    def __init__(self, input_lo, input_hi):
        lo = np.asarray(input_lo, dtype=float).reshape(-1)
        hi = np.asarray(input_hi, dtype=float).reshape(-1)
        if lo.shape != (self.input_dim,) or hi.shape != (self.input_dim,):
            raise DynamicsError(
                f"{self.model_id}: input box needs {self.input_dim} bounds per side"
            )
        if np.any(lo > hi):
            raise DynamicsError(f"{self.model_id}: input box has lo > hi: {lo} > {hi}")
        self.input_lo = lo
        self.input_hi = hi

    @property
    def input_box(self) -> np.ndarray:
        return np.stack([self.input_lo, self.input_hi], axis=1)

    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(df/dx, df/du)`` with shapes ``(B, n, n)`` and ``(B, n, m)``."""
        raise NotImplementedError

    def clip_input(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.input_lo, self.input_hi)

    def params(self) -> dict:
        return {"input_box": self.input_box.tolist()}

    def describe(self) -> dict:
        return {"id": self.model_id, "params": self.params()}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


class SingleIntegrator(ControlSystem):
    model_id = "single_integrator"
    state_dim = 2
    input_dim = 2

    def __init__(self, input_lo=(-2.0, -2.0), input_hi=(2.0, 2.0)):
        super().__init__(input_lo, input_hi)

    def f(self, x, u):
        return np.array(u, dtype=float, copy=True)

    def jacobians(self, x, u):
        b = x.shape[0]
        return np.zeros((b, 2, 2)), np.broadcast_to(np.eye(2), (b, 2, 2)).copy()


class DoubleIntegrator(ControlSystem):
    """Planar double integrator with state ordering ``(x, y, xdot, ydot)``."""

    model_id = "double_integrator"
    state_dim = 4
    input_dim = 2

    def __init__(self, input_lo=(-1.0, -1.0), input_hi=(1.0, 1.0)):
        super().__init__(input_lo, input_hi)

    def f(self, x, u):
        return np.concatenate([x[:, 2:4], u], axis=1)

    def jacobians(self, x, u):
        b = x.shape[0]
        a = np.zeros((b, 4, 4))
        a[:, 0, 2] = 1.0
        a[:, 1, 3] = 1.0
        bm = np.zeros((b, 4, 2))
        bm[:, 2, 0] = 1.0
        bm[:, 3, 1] = 1.0
        return a, bm

    def params(self):
        return {"input_box": self.input_box.tolist(), "state_order": ["x", "y", "xdot", "ydot"]}


class KinematicBicycle(ControlSystem):
    """Kinematic bicycle with state ``(x, y, psi)`` and input ``(v, zeta)``."""

    model_id = "bicycle"
    state_dim = 3
    input_dim = 2
    angular_states = (2,)

    def __init__(self, bp: BicycleParams | None = None):
        self.bp = bp or BicycleParams()
        super().__init__(
            (self.bp.v_min, -self.bp.zeta_max), (self.bp.v_max, self.bp.zeta_max)
        )

    def f(self, x, u):
        v, zeta = u[:, 0], u[:, 1]
        beta = np.arctan(0.5 * np.tan(zeta))
        heading = x[:, 2] + beta
        return np.stack(
            [
                v * np.cos(heading),
                v * np.sin(heading),
                v * np.cos(beta) * np.tan(zeta) / self.bp.wheelbase,
            ],
            axis=1,
        )

    def jacobians(self, x, u):
        v, zeta = u[:, 0], u[:, 1]
        tz = np.tan(zeta)
        sec2 = 1.0 + tz * tz
        beta = np.arctan(0.5 * tz)
        dbeta = 0.5 * sec2 / (1.0 + 0.25 * tz * tz)
        heading = x[:, 2] + beta
        c, s = np.cos(heading), np.sin(heading)
        cb, sb = np.cos(beta), np.sin(beta)
        L = self.bp.wheelbase
        b = x.shape[0]
        a = np.zeros((b, 3, 3))
        a[:, 0, 2] = -v * s
        a[:, 1, 2] = v * c
        bm = np.empty((b, 3, 2))
        bm[:, 0, 0] = c
        bm[:, 1, 0] = s
        bm[:, 2, 0] = cb * tz / L
        bm[:, 0, 1] = -v * s * dbeta
        bm[:, 1, 1] = v * c * dbeta
        bm[:, 2, 1] = v / L * (-sb * dbeta * tz + cb * sec2)
        return a, bm

    def params(self):
        return {
            "L": self.bp.wheelbase,
            "v_min": self.bp.v_min,
            "v_max": self.bp.v_max,
            "zeta_max": self.bp.zeta_max,
        }


class Unicycle(ControlSystem):
    """Unicycle with state ``(x, y, psi)`` and input ``(v, omega)``."""

    model_id = "unicycle"
    state_dim = 3
    input_dim = 2
    angular_states = (2,)

    def __init__(self, input_lo=(1.0, -0.9), input_hi=(2.0, 0.9)):
        super().__init__(input_lo, input_hi)

    def f(self, x, u):
        v = u[:, 0]
        return np.stack([v * np.cos(x[:, 2]), v * np.sin(x[:, 2]), u[:, 1]], axis=1)

    def jacobians(self, x, u):
        v = u[:, 0]
        c, s = np.cos(x[:, 2]), np.sin(x[:, 2])
        b = x.shape[0]
        a = np.zeros((b, 3, 3))
        a[:, 0, 2] = -v * s
        a[:, 1, 2] = v * c
        bm = np.zeros((b, 3, 2))
        bm[:, 0, 0] = c
        bm[:, 1, 0] = s
        bm[:, 2, 1] = 1.0
        return a, bm


def single_integrator(input_lo=(-2.0, -2.0), input_hi=(2.0, 2.0)) -> SingleIntegrator:
    return SingleIntegrator(input_lo, input_hi)


def double_integrator(input_lo=(-1.0, -1.0), input_hi=(1.0, 1.0)) -> DoubleIntegrator:
    return DoubleIntegrator(input_lo, input_hi)


def kinematic_bicycle(wheelbase=1.0, v_min=1.0, v_max=2.0, zeta_max=20 / 180 * math.pi):
    return KinematicBicycle(BicycleParams(wheelbase, v_min, v_max, zeta_max))


def unicycle(input_lo=(1.0, -0.9), input_hi=(2.0, 0.9)) -> Unicycle:
    return Unicycle(input_lo, input_hi)


def make_system(model_id: str, params: dict | None = None) -> ControlSystem:
    """Build a model from its string id and a JSON-style ``params`` dict."""
    params = dict(params or {})
    if model_id == "bicycle":
        if "input_box" in params:
            raise DynamicsError("bicycle input box is derived from v_min/v_max/zeta_max")
        return kinematic_bicycle(
            wheelbase=params.get("L", 1.0),
            v_min=params.get("v_min", 1.0),
            v_max=params.get("v_max", 2.0),
            zeta_max=params.get("zeta_max", 20 / 180 * math.pi),
        )
    ctors = {
        "single_integrator": SingleIntegrator,
        "double_integrator": DoubleIntegrator,
        "unicycle": Unicycle,
    }
    if model_id not in ctors:
        raise DynamicsError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")
    extra = set(params) - {"input_box", "state_order"}
    if extra:
        raise DynamicsError(f"{model_id}: unknown params {sorted(extra)}")
    if "input_box" in params:
        box = np.asarray(params["input_box"], dtype=float)
        return ctors[model_id](box[:, 0], box[:, 1])
    return ctors[model_id]()


def turning_radius(bp: BicycleParams) -> float:
    """Minimum turning radius ``L / (cos(beta(zeta_max)) tan(zeta_max))``."""
    t = math.tan(bp.zeta_max)
    if t == 0.0:
        return math.inf
    beta = math.atan(0.5 * t)
    return bp.wheelbase / (math.cos(beta) * t)


# ---------------------------------------------------------------------------
# single-state API


def _check_dims(sys: ControlSystem, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (sys.state_dim,):
        raise DynamicsError(f"state must have shape ({sys.state_dim},), got {x.shape}")
    if u.shape != (sys.input_dim,):
        raise DynamicsError(f"input must have shape ({sys.input_dim},), got {u.shape}")
    return x, u


def eval_f(sys: ControlSystem, x, u) -> np.ndarray:
    x, u = _check_dims(sys, x, u)
    return sys.f(x[None], u[None])[0]


def rk4_step(sys: ControlSystem, x, u, dt: float) -> np.ndarray:
    """One classical RK4 step with ``u`` held constant."""
    if not dt > 0:
        raise DynamicsError(f"dt must be positive, got {dt}")
    x, u = _check_dims(sys, x, u)
    xb, ub = x[None], u[None]
    stages = []
    xs = xb
    for i, frac in enumerate((0.0, 0.5, 0.5, 1.0)):
        if i:
            xs = xb + (frac * dt) * stages[-1]
        k = sys.f(xs, ub)
        if not np.all(np.isfinite(k)):
            raise DynamicsError(f"non-finite derivative in RK4 stage k{i + 1}")
        stages.append(k)
    k1, k2, k3, k4 = stages
    out = xb + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return out[0]


def rk4_batch(sys: ControlSystem, x: np.ndarray, u: np.ndarray, dt: float):
    """Batched RK4 step. Returns the next states and the four stage states."""
    k1 = sys.f(x, u)
    s2 = x + (0.5 * dt) * k1
    k2 = sys.f(s2, u)
    s3 = x + (0.5 * dt) * k2
    k3 = sys.f(s3, u)
    s4 = x + dt * k3
    k4 = sys.f(s4, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), (x, s2, s3, s4)


def rk4_vjp(sys: ControlSystem, stages, u: np.ndarray, dt: float, lam: np.ndarray):
    """Pull ``lam = dL/dx_next`` back through one RK4 step.

    Returns ``(dL/dx, dL/du)``.
    """
    weights = (dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0)
    offsets = (0.5 * dt, 0.5 * dt, dt)  # stage i+1 state = x + offsets[i] * k_i
    gx = lam.copy()
    gu = np.zeros_like(u)
    carry = np.zeros_like(lam)
    for i in (3, 2, 1, 0):
        a, bm = sys.jacobians(stages[i], u)
        adj_k = weights[i] * lam + carry
        g_stage = np.einsum("bij,bi->bj", a, adj_k)
        gu += np.einsum("bij,bi->bj", bm, adj_k)
        gx += g_stage
        if i > 0:
            carry = offsets[i - 1] * g_stage
    return gx, gu


def rollout_batch(sys: ControlSystem, x0: np.ndarray, u_seq: np.ndarray, dt: float,
                  keep_stages: bool = False):
    """Roll out ``u_seq`` of shape ``(B, N, m)`` from ``x0`` of shape ``(B, n)``."""
    b, n_steps, _ = u_seq.shape
    xs = np.empty((b, n_steps + 1, x0.shape[1]))
    xs[:, 0] = x0
    stages = [] if keep_stages else None
    x = x0
    for k in range(n_steps):
        x, st = rk4_batch(sys, x, u_seq[:, k], dt)
        xs[:, k + 1] = x
        if keep_stages:
            stages.append(st)
    return xs, stages


@dataclass(frozen=True)
class DiscreteStepper:
    """Fixed-step RK4 discretization ``x[k+1] = f_d(x[k], u[k])``."""

    dt: float
    scheme: str = field(default="rk4")

    def __post_init__(self):
        if not self.dt > 0:
            raise DynamicsError(f"dt must be positive, got {self.dt}")
        if self.scheme != "rk4":
            raise DynamicsError("only the classical RK4 scheme is supported")

    def step(self, sys: ControlSystem, x, u) -> np.ndarray:
        return rk4_step(sys, x, u, self.dt)


def rollout(sys: ControlSystem, stepper: DiscreteStepper, x0, u_seq, check_box: bool = False):
    """Return the ``(N+1, n)`` state sequence generated by ``u_seq``."""
    x0 = np.asarray(x0, dtype=float)
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, sys.input_dim)
    if check_box and u_seq.size:
        if np.any(u_seq < sys.input_lo - 1e-12) or np.any(u_seq > sys.input_hi + 1e-12):
            raise DynamicsError("input sequence leaves the input box")
    out = np.empty((len(u_seq) + 1, sys.state_dim))
    out[0] = x0
    for k, u in enumerate(u_seq):
        try:
            out[k + 1] = stepper.step(sys, out[k], u)
        except DynamicsError as err:
            raise DynamicsError(f"rollout step {k}: {err}") from None
        if not np.all(np.isfinite(out[k + 1])):
            raise DynamicsError(f"rollout step {k}: non-finite state")
    return out
