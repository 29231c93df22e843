"""Baseline tracking, the sampled CBF safety filter and the closed-loop simulator.

The filter solves

    min_u (u - u_base)^T P (u - u_base)
    s.t.  dH(x; f(x,u)) + dlam/dt >= -alpha(H(x) + lam) + c_alpha   per barrier

over the input box.  ``dH`` is the forward difference of the interpolated
grid, which is not affine in ``u`` in general, so the problem is solved by a
dense candidate grid, a shrinking local search and a final SLSQP polish.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dynamics import ControlSystem, rk4_step
from .grid import CbfGrid, dini_batch, interpolate_batch
from .shift import ShiftSchedule, constant, lambda_dot, lambda_eval

FLAG_TOKENS = ("infeasible", "clamped", "flagged_cell")


class FilterError(ValueError):
    pass


@dataclass
class FilterConfig:
    P: np.ndarray | None = None
    c_alpha: float | None = None
    input_candidates: int = 21
    sigma_dini: float | None = None
    refine_iters: int = 200
    refine_tol: float = 1e-7

    def __post_init__(self):
        if self.P is not None:
            P = np.asarray(self.P, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.allclose(P, P.T):
                raise FilterError("P must be a symmetric square matrix")
            try:
                np.linalg.cholesky(P)
            except np.linalg.LinAlgError as exc:
                raise FilterError("P must be positive definite") from exc
            self.P = P
        if self.c_alpha is not None and self.c_alpha < 0:
            raise FilterError(f"c_alpha must be nonnegative, got {self.c_alpha}")
        if int(self.input_candidates) < 2:
            raise FilterError("need at least 2 input candidates per dimension")
        self.input_candidates = int(self.input_candidates)

    def weight(self, m: int) -> np.ndarray:
        if self.P is None:
            return np.eye(m)
        if self.P.shape != (m, m):
            raise FilterError(f"P is {self.P.shape}, inputs have dimension {m}")
        return self.P


@dataclass
class Barrier:
    """One obstacle: a synthesized grid and the schedule shifting it."""

    grid: CbfGrid
    schedule: ShiftSchedule = field(default_factory=lambda: constant(0.0))

    def __post_init__(self):
        self._alpha = self.grid.alpha
        self._field = self.grid.field
        self._c_alpha = self.grid.spec.c_alpha

    @property
    def alpha(self):
        return self._alpha

    def h(self, x) -> float:
        return float(self._field(np.asarray(x, dtype=float)[None])[0])


@dataclass(frozen=True)
class TargetLine:
    """Straight line through ``point`` with heading ``angle``, tracked at ``cruise`` speed."""

    point: tuple[float, float] = (0.0, 0.0)
    angle: float = 0.0
    cruise: float = 1.0

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])

    @property
    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.angle), math.cos(self.angle)])

    def cross_track(self, pos) -> float:
        return float(np.dot(np.asarray(pos, dtype=float) - np.asarray(self.point), self.normal))


@dataclass(frozen=True)
class TrackingGains:
    k_pos: float = 1.0
    k_vel: float = 1.5
    lookahead: float = 3.0
    k_heading: float = 1.5


def _wrap(a):
    return (np.asarray(a) + math.pi) % (2 * math.pi) - math.pi


def baseline_input(sys: ControlSystem, x, line: TargetLine, gains: TrackingGains = TrackingGains()):
    """Tracking law toward ``line``, clamped to the input box."""
    x = np.asarray(x, dtype=float)
    d, n = line.direction, line.normal
    e = line.cross_track(x[:2])
    if sys.model_id == "single_integrator":
        u = line.cruise * d - gains.k_pos * e * n
    elif sys.model_id == "double_integrator":
        vel = x[2:4]
        v_des = line.cruise * d - gains.k_pos * e * n
        u = gains.k_vel * (v_des - vel)
    elif sys.model_id in ("bicycle", "unicycle"):
        # pure pursuit on a point ahead of the projection onto the line
        along = float(np.dot(x[:2] - np.asarray(line.point), d))
        target = np.asarray(line.point) + (along + gains.lookahead) * d
        err = float(_wrap(math.atan2(target[1] - x[1], target[0] - x[0]) - x[2]))
        v = 0.5 * (sys.input_lo[0] + sys.input_hi[0])
        u = np.array([v, gains.k_heading * err])
    else:
        raise FilterError(f"no baseline law for model {sys.model_id!r}")
    return sys.clip_input(np.asarray(u, dtype=float))


@dataclass
class FilterResult:
    u: np.ndarray
    feasible: bool
    active: list
    clamped: bool
    flagged_cell: bool
    H: list
    lam: list
    residual: list

    def flag_string(self) -> str:
        toks = []
        if self.active:
            toks.append("active=" + "+".join(str(i) for i in self.active))
        if not self.feasible:
            toks.append("infeasible")
        if self.clamped:
            toks.append("clamped")
        if self.flagged_cell:
            toks.append("flagged_cell")
        return ";".join(toks)


class _Constraints:
    """Residuals of all barrier constraints at a fixed ``(t, x)`` for batches of inputs."""

    def __init__(self, cfg: FilterConfig, sys: ControlSystem, barriers, t: float, x):
        self.sys = sys
        self.x = np.asarray(x, dtype=float)
        self.barriers = barriers
        self.sigma = cfg.sigma_dini
        self.H, self.lam, self.rhs = [], [], []
        self.clamped = False
        self.flagged = False
        for b in barriers:
            v, cl, touched = interpolate_batch(b.grid, self.x[None], clamp=True)
            lam = float(lambda_eval(b.schedule, t))
            ldot = float(lambda_dot(b.schedule, t))
            c_alpha = b._c_alpha if cfg.c_alpha is None else cfg.c_alpha
            self.H.append(float(v[0]))
            self.lam.append(lam)
            self.rhs.append(-float(b.alpha(v[0] + lam)) + c_alpha - ldot)
            self.clamped |= bool(cl[0])
            self.flagged |= bool(touched[0])

    def residuals(self, U: np.ndarray):
        """``(K, n_barriers)`` residuals; nonnegative means satisfied."""
        U = np.atleast_2d(U)
        F = self.sys.f(np.repeat(self.x[None], U.shape[0], axis=0), U)
        out = np.empty((U.shape[0], len(self.barriers)))
        for j, b in enumerate(self.barriers):
            d, cl = dini_batch(b.grid, self.x, F, self.sigma, clamp=True)
            self.clamped |= bool(cl.any())
            out[:, j] = d - self.rhs[j]
        return out


def _candidate_grid(sys: ControlSystem, k: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, k) if hi > lo else np.array([lo]) for lo, hi in zip(sys.input_lo, sys.input_hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, sys.input_dim)


def safe_input(cfg: FilterConfig, sys: ControlSystem, barriers, t: float, x, u_base) -> FilterResult:
    """Minimal-deviation input satisfying every barrier constraint (best effort otherwise)."""
    u_base = sys.clip_input(np.asarray(u_base, dtype=float))
    if not barriers:
        return FilterResult(u_base, True, [], False, False, [], [], [])
    con = _Constraints(cfg, sys, barriers, t, x)
    P = cfg.weight(sys.input_dim)

    def cost(U):
        D = U - u_base
        return np.einsum("ki,ij,kj->k", D, P, D)

    r_base = con.residuals(u_base)[0]
    if np.all(r_base >= 0):
        return FilterResult(u_base, True, [], con.clamped, con.flagged, con.H, con.lam, r_base.tolist())
    active = [int(j) for j in np.flatnonzero(r_base < 0)]

    cand = _candidate_grid(sys, cfg.input_candidates)
    res = con.residuals(cand)
    worst = res.min(axis=1)
    ok = worst >= 0
    if not ok.any():
        k = int(np.argmax(worst))
        u = cand[k]
        return FilterResult(u, False, active, con.clamped, con.flagged, con.H, con.lam, res[k].tolist())

    c = np.where(ok, cost(cand), np.inf)
    k = int(np.argmin(c))
    u, best = cand[k], c[k]
    step = (sys.input_hi - sys.input_lo) / (cfg.input_candidates - 1)
    offsets = _candidate_grid_unit(sys.input_dim)
    for _ in range(cfg.refine_iters):
        if np.max(step) < cfg.refine_tol:
            break
        trial = sys.clip_input(u + offsets * step)
        r = con.residuals(trial).min(axis=1)
        tc = np.where(r >= 0, cost(trial), np.inf)
        j = int(np.argmin(tc))
        if tc[j] < best:
            u, best = trial[j], tc[j]
        else:
            step = step * 0.5
    u = _polish(sys, con, P, u_base, u, best, cand[int(np.argmax(worst))])
    r_u = con.residuals(u)[0]
    return FilterResult(u, True, active, con.clamped, con.flagged, con.H, con.lam, r_u.tolist())


def _polish(sys: ControlSystem, con: _Constraints, P: np.ndarray, u_base: np.ndarray, u: np.ndarray,
            best: float, anchor: np.ndarray) -> np.ndarray:
    """SLSQP from the pattern-search point; kept only if cheaper and feasible.

    A slightly infeasible SQP answer is pulled toward ``anchor``, the most
    interior grid candidate.

    Pattern search stalls where the feasible descent cone is thin (a tilted
    constraint boundary); a local SQP step follows the boundary instead.
    """
    fun = lambda v: float((v - u_base) @ P @ (v - u_base))  # noqa: E731
    jac = lambda v: 2.0 * P @ (v - u_base)  # noqa: E731
    cons = {"type": "ineq", "fun": lambda v: con.residuals(v)[0]}
    bounds = list(zip(sys.input_lo, sys.input_hi))
    try:
        out = minimize(fun, u, jac=jac, bounds=bounds, constraints=[cons], method="SLSQP",
                       options={"ftol": 1e-12, "maxiter": 100})
    except (ValueError, np.linalg.LinAlgError):
        return u
    cand = sys.clip_input(np.asarray(out.x, dtype=float))
    if not np.all(np.isfinite(cand)):
        return u
    if con.residuals(cand)[0].min() < 0:
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if con.residuals(cand + mid * (anchor - cand))[0].min() >= 0:
                hi = mid
            else:
                lo = mid
        cand = cand + hi * (anchor - cand)
        if con.residuals(cand)[0].min() < 0:
            return u
    return cand if fun(cand) < best else u


def _candidate_grid_unit(m: int) -> np.ndarray:
    lv = np.linspace(-1.0, 1.0, 5)
    return np.stack(np.meshgrid(*[lv] * m, indexing="ij"), axis=-1).reshape(-1, m)


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimLog:
    state_dim: int
    input_dim: int
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    u_base: list = field(default_factory=list)
    u_safe: list = field(default_factory=list)
    H_shifted_min: list = field(default_factory=list)
    lambda_min: list = field(default_factory=list)
    h_min: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    config: dict | None = None

    def arrays(self) -> dict:
        return {
            "t": np.asarray(self.t),
            "x": np.asarray(self.x).reshape(-1, self.state_dim),
            "u_base": np.asarray(self.u_base).reshape(-1, self.input_dim),
            "u_safe": np.asarray(self.u_safe).reshape(-1, self.input_dim),
            "H_shifted_min": np.asarray(self.H_shifted_min),
            "lambda_min": np.asarray(self.lambda_min),
            "h_min": np.asarray(self.h_min),
        }

    def header(self) -> str:
        cols = ["t"]
        cols += [f"x{i}" for i in range(self.state_dim)]
        cols += [f"ub{i}" for i in range(self.input_dim)]
        cols += [f"us{i}" for i in range(self.input_dim)]
        cols += ["H_shifted_min", "lambda_min", "h_min", "flags"]
        return ",".join(cols)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        if self.config is not None:
            buf.write("# config: " + json.dumps(self.config, sort_keys=True) + "\n")
        buf.write(self.header() + "\n")
        for k in range(len(self.t)):
            nums = [self.t[k], *self.x[k], *self.u_base[k], *self.u_safe[k],
                    self.H_shifted_min[k], self.lambda_min[k], self.h_min[k]]
            buf.write(",".join("%.17g" % v for v in nums) + "," + self.flags[k] + "\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())


def default_sim_dt(barriers) -> float:
    spec = barriers[0].grid.spec
    return spec.dt / 4.0


def simulate(sys: ControlSystem, dt: float | None, barriers, cfg: FilterConfig, x0, t_end: float,
             line: TargetLine = TargetLine(), gains: TrackingGains = TrackingGains(),
             config: dict | None = None) -> SimLog:
    """Fixed-step closed loop: baseline, filter, one RK4 step; every step is logged."""
    if dt is None:
        if not barriers:
            raise FilterError("a step size is required when no grids are given")
        dt = default_sim_dt(barriers)
    if not dt > 0:
        raise FilterError(f"dt must be positive, got {dt}")
    steps = int(round(t_end / dt))
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.state_dim,):
        raise FilterError(f"x0 must have {sys.state_dim} entries")
    log = SimLog(sys.state_dim, sys.input_dim, config=config)
    for k in range(steps + 1):
        t = k * dt
        ub = baseline_input(sys, x, line, gains)
        res = safe_input(cfg, sys, barriers, t, x, ub)
        if barriers:
            shifted = [h + lam for h, lam in zip(res.H, res.lam)]
            j = int(np.argmin(shifted))
            H_min, lam_min = shifted[j], min(res.lam)
            h_min = min(b.h(x) for b in barriers)
        else:
            H_min, lam_min, h_min = math.inf, 0.0, math.inf
        log.t.append(t)
        log.x.append(x.tolist())
        log.u_base.append(ub.tolist())
        log.u_safe.append(res.u.tolist())
        log.H_shifted_min.append(H_min)
        log.lambda_min.append(lam_min)
        log.h_min.append(h_min)
        log.flags.append(res.flag_string())
        if k == steps:
            break
        x = rk4_step(sys, x, res.u, dt)
        for i in sys.angular_states:
            x[i] = float(_wrap(x[i]))
    return log
