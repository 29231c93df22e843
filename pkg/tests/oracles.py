"""Independent reference computations used by the tests.

Nothing here calls into the solver; trajectories of the single integrator are
built in closed form (positions are cumulative sums of constant velocities).
"""

from __future__ import annotations

import itertools

import numpy as np


def exhaustive_single_integrator(x0, lo, hi, T, N, gamma, center, radius, level,
                                 blocks=5, levels=3, mode="at_final_step"):
    """Best ``min_k h(x_k) - gamma*k*dt`` over block-constant lattice inputs.

    The input is held constant over ``N // blocks`` steps and takes one of
    ``levels**2`` lattice values per block, so the searched set is a subset
    of what the solver can reach.  Returns ``-inf`` if no sequence reaches
    ``{h >= level}`` as required by ``mode``.
    """
    if N % blocks:
        raise ValueError("N must be a multiple of blocks")
    per = N // blocks
    dt = T / N
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    lat = np.array(list(itertools.product(*[np.linspace(lo[i], hi[i], levels) for i in range(2)])))
    combos = np.array(list(itertools.product(range(len(lat)), repeat=blocks)))
    vel = lat[combos]  # (S, blocks, 2)
    steps = np.repeat(vel, per, axis=1) * dt  # (S, N, 2)
    pos = np.concatenate([np.zeros((len(steps), 1, 2)), np.cumsum(steps, axis=1)], axis=1)
    pos = pos + np.asarray(x0, float)
    h = np.hypot(pos[..., 0] - center[0], pos[..., 1] - center[1]) - radius
    vals = (h - gamma * dt * np.arange(N + 1)).min(axis=1)
    if mode == "at_final_step":
        ok = h[:, -1] >= level
    else:
        ok = np.any(h >= level, axis=1)
    if not ok.any():
        return -np.inf
    return float(vals[ok].max())


def central_difference_gradient(fun, u, eps=1e-6):
    u = np.asarray(u, dtype=float)
    g = np.zeros_like(u)
    flat = u.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        up = flat.copy()
        dn = flat.copy()
        up[i] += eps
        dn[i] -= eps
        gf[i] = (fun(up.reshape(u.shape)) - fun(dn.reshape(u.shape))) / (2 * eps)
    return g


def halfspace_box_projection(u0, a, b, lo, hi, iters=200):
    """Euclidean projection of ``u0`` onto ``{a.u >= b} & [lo, hi]``.

    The KKT point is ``clip(u0 + nu*a, lo, hi)`` for the smallest ``nu >= 0``
    meeting the half-space; ``a.u`` is nondecreasing in ``nu`` so bisection
    finds it.
    """
    u0, a = np.asarray(u0, float), np.asarray(a, float)
    point = lambda nu: np.clip(u0 + nu * a, lo, hi)  # noqa: E731
    if a @ point(0.0) >= b:
        return point(0.0)
    hi_nu = 1.0
    while a @ point(hi_nu) < b:
        hi_nu *= 2.0
        if hi_nu > 1e12:
            raise ValueError("half-space misses the box")
    lo_nu = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo_nu + hi_nu)
        if a @ point(mid) >= b:
            hi_nu = mid
        else:
            lo_nu = mid
    return point(hi_nu)


def sigmoid(s):
    return 1.0 / (1.0 + np.exp(-s))


def bicycle_reference(x0, u, t_end, wheelbase=1.0):
    """Adaptive high-accuracy integration of the bicycle with constant input."""
    from scipy.integrate import solve_ivp

    v, zeta = u

    def rhs(_, x):
        beta = np.arctan(0.5 * np.tan(zeta))
        return [v * np.cos(x[2] + beta), v * np.sin(x[2] + beta), v * np.cos(beta) * np.tan(zeta) / wheelbase]

    sol = solve_ivp(rhs, (0.0, t_end), x0, method="DOP853", rtol=1e-10, atol=1e-12)
    return sol.y[:, -1]
