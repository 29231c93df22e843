"""Pointwise computation of the predictive CBF value ``H_T(x0)``.

The max-min problem is discretized into ``N`` RK4 steps.  The inner minimum
over time is replaced by the p-norm of the reciprocal shifted constraint
values; that smooth objective is minimized over the input sequence by
projected gradient descent with Armijo backtracking.  The terminal condition
``x[terminal] in F`` enters as a quadratic penalty whose weight is escalated
over three rounds.  The reported value is always recomputed from the rolled
out trajectory as ``min_k h(x[k]) - gamma*k*dt``.

Everything operates on batches of (point, restart) pairs so that a chunk of
grid nodes is optimized in one vectorized loop; each batch row is updated
independently of the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classk import ClassKe, ClippedAlpha
from .constraint import ConstraintField, InvariantSubset, SynthesisSpec
from .dynamics import ControlSystem, rk4_batch, rk4_vjp, rollout_batch

PENALTY_ROUNDS = ((1e2, 10.0), (1e4, 30.0), (1e6, 100.0))
TERMINAL_MARGIN = 1e-3
MAX_ITERS = 400
MIN_STEP = 1e-10
REL_TOL = 1e-9
REL_WINDOW = 5
ARMIJO_C = 1e-4

RESTART_NAMES = ("constant", "greedy_ascent", "warm_start", "random")


class SynthesisError(ValueError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def node_seed(global_seed: int, index: int) -> int:
    return splitmix64(splitmix64(int(global_seed) & 0xFFFFFFFFFFFFFFFF) ^ int(index))


@dataclass
class PointSolve:
    x0: np.ndarray
    u_star: np.ndarray
    x_star: np.ndarray
    k_star: int
    value: float
    feasible: bool
    restarts_used: int
    converged: bool
    restart: str = ""
    violation: float = 0.0


@dataclass
class Problem:
    """Everything the batched solver needs, with ``htilde`` resolved."""

    spec: SynthesisSpec
    sys: ControlSystem
    field: ConstraintField
    sub: InvariantSubset
    htilde: float
    alpha_bar: ClippedAlpha | None = None
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.htilde is None or not self.htilde > 0:
            raise SynthesisError(f"htilde must be a positive number, got {self.htilde}")
        self.times = np.arange(self.spec.N + 1) * self.spec.dt
        if self.spec.variant == "alpha_penalty" and self.alpha_bar is None:
            self.alpha_bar = ClippedAlpha(ClassKe(self.spec.c, self.spec.gamma))

    @property
    def level(self) -> float:
        return self.sub.level


# ---------------------------------------------------------------------------
# objective pieces


def shifted_values(spec: SynthesisSpec, h: np.ndarray, times: np.ndarray,
                   alpha_bar: ClippedAlpha | None = None) -> np.ndarray:
    """``h_k - gamma*t_k`` (or ``h_k + alpha_bar(h_k)*t_k`` for the alpha variant)."""
    if spec.variant == "alpha_penalty":
        if alpha_bar is None:
            alpha_bar = ClippedAlpha(ClassKe(spec.c, spec.gamma))
        return h + alpha_bar(h) * times
    return h - spec.gamma * times


def pnorm(v: np.ndarray, p: int) -> np.ndarray:
    """p-norm of positive vectors along the last axis, scaled by the max to avoid overflow."""
    m = v.max(axis=-1)
    return m * np.sum((v / m[..., None]) ** p, axis=-1) ** (1.0 / p)


def pnorm_objective(spec: SynthesisSpec, field_: ConstraintField, x_seq, htilde: float) -> float:
    """``|| (1 / (h(x_k) - gamma*k*dt + htilde))_k ||_p`` along a state sequence."""
    x_seq = np.atleast_2d(np.asarray(x_seq, dtype=float))
    times = np.arange(len(x_seq)) * spec.dt
    d = shifted_values(spec, field_(x_seq), times) + htilde
    if np.any(d <= 0):
        k = int(np.argmax(d <= 0))
        raise SynthesisError(
            f"nonpositive denominator {d[k]:.6g} at step {k}; htilde must exceed "
            "max(0, gamma*T - min h) over the visited states"
        )
    return float(pnorm(1.0 / d, spec.p))


def _terminal_violation(prob: Problem, h: np.ndarray) -> np.ndarray:
    gap = np.maximum(0.0, prob.level - h)
    if prob.spec.terminal_mode == "at_final_step":
        return gap[..., -1]
    return gap.min(axis=-1)


def _objective(prob: Problem, xs: np.ndarray, mu: float, beta: float, want_grad: bool = False):
    """Scaled p-norm plus terminal penalty for a batch of trajectories ``(B, N+1, n)``.

    With ``want_grad`` also returns ``dJ/dx`` of shape ``(B, N+1, n)``.
    """
    spec = prob.spec
    if want_grad:
        h, gh = prob.field.value_and_grad(xs)
    else:
        h = prob.field(xs)
    d = shifted_values(spec, h, prob.times, prob.alpha_bar) + prob.htilde
    bad = ~np.all(np.isfinite(xs), axis=(1, 2)) | np.any(~(d > 0), axis=1)
    d = np.where(bad[:, None], 1.0, d)
    v = 1.0 / d
    norm = pnorm(v, spec.p)
    J = prob.htilde * norm

    if spec.terminal_mode == "at_final_step":
        viol = np.maximum(0.0, prob.level + TERMINAL_MARGIN - h[:, -1])
        J = J + mu * viol**2
    else:
        slack = math.log(spec.N + 1) / beta + TERMINAL_MARGIN
        viol_k = np.maximum(0.0, prob.level + slack - h)
        vmin = viol_k.min(axis=1)
        ex = np.exp(-beta * (viol_k - vmin[:, None]))
        tot = ex.sum(axis=1)
        soft = vmin - np.log(tot) / beta
        pos = np.maximum(0.0, soft)
        J = J + mu * pos**2
    J = np.where(bad, np.inf, J)
    if not want_grad:
        return J

    r = v / norm[:, None]
    dJ_dd = prob.htilde * r ** (spec.p - 1) * (-(v**2))
    dd_dh = np.ones_like(h)
    if spec.variant == "alpha_penalty":
        dd_dh = dd_dh + prob.alpha_bar.derivative(h) * prob.times
    coef = dJ_dd * dd_dh
    if spec.terminal_mode == "at_final_step":
        coef[:, -1] += -2.0 * mu * viol
    else:
        w = ex / tot[:, None]
        coef -= 2.0 * mu * pos[:, None] * w * (viol_k > 0)
    coef = np.where(bad[:, None], 0.0, coef)
    return J, coef[:, :, None] * gh


def _objective_and_grad(prob: Problem, x0: np.ndarray, u: np.ndarray, mu: float, beta: float):
    """Objective and its gradient w.r.t. the input sequence ``u`` (B, N, m) by an adjoint sweep."""
    dt = prob.spec.dt
    xs, stages = rollout_batch(prob.sys, x0, u, dt, keep_stages=True)
    J, gx = _objective(prob, xs, mu, beta, want_grad=True)
    gu = np.zeros_like(u)
    lam = gx[:, -1]
    for k in range(u.shape[1] - 1, -1, -1):
        lam_x, gu[:, k] = rk4_vjp(prob.sys, stages[k], u[:, k], dt, lam)
        lam = lam_x + gx[:, k]
    return J, gu


def objective_gradient(spec, sys, field_, sub, x0, u_seq, htilde, mu: float = 0.0, beta: float = 10.0):
    """Value and input gradient of ``htilde*pnorm + penalty`` for a single input sequence.

    With ``mu=0`` this is the scaled p-norm objective alone.
    """
    prob = Problem(spec, sys, field_, sub, htilde)
    x0 = np.asarray(x0, dtype=float)[None]
    u = np.asarray(u_seq, dtype=float).reshape(1, spec.N, sys.input_dim)
    J, g = _objective_and_grad(prob, x0, u, mu, beta)
    return float(J[0]), g[0]


def objective_value(spec, sys, field_, sub, x0, u_seq, htilde, mu: float = 0.0, beta: float = 10.0):
    prob = Problem(spec, sys, field_, sub, htilde)
    x0 = np.asarray(x0, dtype=float)[None]
    u = np.asarray(u_seq, dtype=float).reshape(1, spec.N, sys.input_dim)
    xs, _ = rollout_batch(sys, x0, u, spec.dt)
    return float(_objective(prob, xs, mu, beta)[0])


# ---------------------------------------------------------------------------
# projected gradient descent on normalized inputs z in [0, 1]


def _optimize(prob: Problem, x0: np.ndarray, z: np.ndarray):
    """Minimize over ``z`` (B, N, m) in the unit box. Returns ``(z, converged)``."""
    lo, width = prob.sys.input_lo, prob.sys.input_hi - prob.sys.input_lo
    to_u = lambda zz: lo + zz * width  # noqa: E731

    B = z.shape[0]
    z = z.copy()
    converged = np.zeros(B, dtype=bool)
    done = np.zeros(B, dtype=bool)
    for mu, beta in PENALTY_ROUNDS:
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        J, gu = _objective_and_grad(prob, x0[idx], to_u(z[idx]), mu, beta)
        alive = np.isfinite(J)
        # starting points with invalid denominators are abandoned
        done[idx[~alive]] = True
        idx, J, g = idx[alive], J[alive], (gu * width)[alive]
        step = np.ones(idx.size)
        hist = np.tile(J[:, None], (1, REL_WINDOW + 1))
        round_conv = np.zeros(idx.size, dtype=bool)
        for it in range(MAX_ITERS):
            act = np.flatnonzero(~round_conv)
            if act.size == 0:
                break
            za = z[idx[act]]
            ga = g[act]
            sa = step[act].copy()
            Ja = J[act]
            new_z = np.empty_like(za)
            new_J = np.empty_like(Ja)
            accepted = np.zeros(act.size, dtype=bool)
            stalled = np.zeros(act.size, dtype=bool)
            pend = np.arange(act.size)
            while pend.size:
                zt = np.clip(za[pend] - sa[pend, None, None] * ga[pend], 0.0, 1.0)
                moved = np.sum(ga[pend] * (za[pend] - zt), axis=(1, 2))
                xs, _ = rollout_batch(prob.sys, x0[idx[act[pend]]], to_u(zt), prob.spec.dt)
                Jt = _objective(prob, xs, mu, beta)
                ok = Jt <= Ja[pend] - ARMIJO_C * moved
                no_move = moved <= 0.0
                acc = ok & ~no_move
                new_z[pend[acc]] = zt[acc]
                new_J[pend[acc]] = Jt[acc]
                accepted[pend[acc]] = True
                rest = pend[~acc]
                stalled[pend[no_move]] = True
                rest = rest[~stalled[rest]]
                sa[rest] *= 0.5
                tiny = sa[rest] < MIN_STEP
                stalled[rest[tiny]] = True
                pend = rest[~tiny]

            acc_i = np.flatnonzero(accepted)
            if acc_i.size:
                glob = act[acc_i]
                z[idx[glob]] = new_z[acc_i]
                J[glob] = new_J[acc_i]
                step[glob] = np.minimum(sa[acc_i] * 2.0, 1e6)
                _, gu = _objective_and_grad(prob, x0[idx[glob]], to_u(new_z[acc_i]), mu, beta)
                g[glob] = gu * width
                hist[glob] = np.roll(hist[glob], -1, axis=1)
                hist[glob, -1] = J[glob]
                if it >= REL_WINDOW:
                    old = hist[glob, 0]
                    rel = (old - hist[glob, -1]) / np.maximum(np.abs(old), 1e-300)
                    round_conv[glob[rel < REL_TOL]] = True
            round_conv[act[stalled]] = True
        converged[idx] = round_conv
        # a point whose penalty is already zero is unaffected by a larger weight
        xs, _ = rollout_batch(prob.sys, x0[idx], to_u(z[idx]), prob.spec.dt)
        h = prob.field(xs)
        if prob.spec.terminal_mode == "at_final_step":
            clean = h[:, -1] >= prob.level + TERMINAL_MARGIN
        else:
            slack = math.log(prob.spec.N + 1) / beta + TERMINAL_MARGIN
            clean = np.any(h >= prob.level + slack, axis=1)
        done[idx[clean]] = True
    return z, converged


# ---------------------------------------------------------------------------
# restarts


def _greedy_ascent(prob: Problem, x0: np.ndarray) -> np.ndarray:
    """Per step, pick the lattice input (3 levels per axis) that maximizes ``h`` next."""
    sys = prob.sys
    levels = np.linspace(0.0, 1.0, 3)
    lattice = np.stack(np.meshgrid(*[levels] * sys.input_dim, indexing="ij"), -1).reshape(-1, sys.input_dim)
    cand_u = sys.input_lo + lattice * (sys.input_hi - sys.input_lo)
    P, C = x0.shape[0], cand_u.shape[0]
    z = np.empty((P, prob.spec.N, sys.input_dim))
    x = x0
    for k in range(prob.spec.N):
        xr = np.repeat(x, C, axis=0)
        ur = np.tile(cand_u, (P, 1))
        xn, _ = rk4_batch(sys, xr, ur, prob.spec.dt)
        hv = prob.field(xn).reshape(P, C)
        hv = np.where(np.isfinite(hv), hv, -np.inf)
        best = hv.argmax(axis=1)
        z[:, k] = lattice[best]
        x = xn.reshape(P, C, -1)[np.arange(P), best]
    return z


def _constant_start(prob: Problem, P: int) -> np.ndarray:
    lo, hi = prob.sys.input_lo, prob.sys.input_hi
    width = hi - lo
    u = np.where((lo <= 0) & (hi >= 0), 0.0, 0.5 * (lo + hi))
    zc = np.where(width > 0, (u - lo) / np.where(width > 0, width, 1.0), 0.0)
    return np.broadcast_to(zc, (P, prob.spec.N, prob.sys.input_dim)).copy()


def _random_start(prob: Problem, seeds) -> np.ndarray:
    out = np.empty((len(seeds), prob.spec.N, prob.sys.input_dim))
    for i, s in enumerate(seeds):
        out[i] = np.random.default_rng(int(s)).random((prob.spec.N, prob.sys.input_dim))
    return out


def _to_z(prob: Problem, u: np.ndarray) -> np.ndarray:
    lo, width = prob.sys.input_lo, prob.sys.input_hi - prob.sys.input_lo
    safe = np.where(width > 0, width, 1.0)
    return np.clip((np.asarray(u, dtype=float) - lo) / safe, 0.0, 1.0) * (width > 0)


# ---------------------------------------------------------------------------
# public solvers


def evaluate_inputs(prob: Problem, x0: np.ndarray, u: np.ndarray):
    """Roll out, pick ``k*`` and return ``(xs, k_star, value, violation)`` for a batch."""
    xs, _ = rollout_batch(prob.sys, x0, u, prob.spec.dt)
    h = prob.field(xs)
    vals = shifted_values(prob.spec, h, prob.times, prob.alpha_bar)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k_star = np.argmin(vals, axis=1)
    value = vals[np.arange(len(vals)), k_star]
    return xs, k_star, value, _terminal_violation(prob, h)


def solve_batch(prob: Problem, x0s, seeds, warm_starts=None,
                restarts: tuple[str, ...] = RESTART_NAMES) -> list[PointSolve]:
    """Solve ``H_T`` at several initial states at once.

    ``seeds`` holds one integer per point; ``warm_starts`` optionally holds an
    input sequence (or ``None``) per point.  ``restarts`` selects which restart
    kinds run; a point left without any restart raises.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    P = x0s.shape[0]
    if len(seeds) != P:
        raise SynthesisError("need one seed per point")
    unknown = set(restarts) - set(RESTART_NAMES)
    if unknown:
        raise SynthesisError(f"unknown restart kinds {sorted(unknown)}")
    builders = [
        lambda: _constant_start(prob, P),
        lambda: _greedy_ascent(prob, x0s),
        None,
        lambda: _random_start(prob, seeds),
    ]
    owner, labels, zs = [], [], []
    for r, build in enumerate(builders):
        if RESTART_NAMES[r] not in restarts:
            continue
        zr = build() if build is not None else None
        if r == 2:
            if warm_starts is None:
                continue
            for i, ws in enumerate(warm_starts):
                if ws is not None:
                    owner.append(i)
                    labels.append(r)
                    zs.append(_to_z(prob, ws)[None])
            continue
        owner.extend(range(P))
        labels.extend([r] * P)
        zs.append(zr)
    if set(owner) != set(range(P)):
        raise SynthesisError("every point needs at least one restart")
    owner = np.asarray(owner)
    labels = np.asarray(labels)
    z0 = np.concatenate(zs, axis=0)
    z, conv = _optimize(prob, x0s[owner], z0)
    u = prob.sys.input_lo + z * (prob.sys.input_hi - prob.sys.input_lo)
    xs, k_star, value, viol = evaluate_inputs(prob, x0s[owner], u)
    feas = viol <= 0.0

    out = []
    for i in range(P):
        rows = np.flatnonzero(owner == i)
        if np.any(feas[rows]):
            cand = rows[feas[rows]]
            best = cand[np.argmax(value[cand])]
        else:
            # least infeasible, then highest value
            order = np.lexsort((-value[rows], viol[rows]))
            best = rows[order[0]]
        out.append(
            PointSolve(
                x0=x0s[i].copy(),
                u_star=u[best],
                x_star=xs[best],
                k_star=int(k_star[best]),
                value=float(value[best]),
                feasible=bool(feas[best]),
                restarts_used=int(rows.size),
                converged=bool(conv[best]),
                restart=RESTART_NAMES[labels[best]],
                violation=float(viol[best]),
            )
        )
    return out


def solve_point(spec, sys, field_, sub, x0, seed: int = 0, htilde: float | None = None,
                warm_start=None) -> PointSolve:
    """``H_T(x0)`` with its optimal input/state sequences; never raises on solver failure."""
    if htilde is None:
        htilde = spec.htilde
    prob = Problem(spec, sys, field_, sub, htilde)
    return solve_batch(prob, np.asarray(x0, dtype=float)[None], [seed],
                       None if warm_start is None else [warm_start])[0]


def saturate(spec: SynthesisSpec, value):
    """``min(value, level)`` with the level matching the synthesis variant."""
    return np.minimum(value, spec.saturation_level())


def solve_point_on_f_shortcut(spec: SynthesisSpec, sub: InvariantSubset, field_: ConstraintField, x0):
    """Saturation level for ``x0`` in ``F``, else ``None``."""
    if not spec.saturated:
        raise SynthesisError("the F shortcut is only valid for saturated synthesis")
    if bool(sub.contains(field_, np.asarray(x0, dtype=float))):
        return spec.saturation_level()
    return None
