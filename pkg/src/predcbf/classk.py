"""Extended class-K_e function family: linear for z >= 0, scaled sigmoid for z < 0."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit


@dataclass(frozen=True)
class ClassKe:
    """``alpha(z) = c*z`` for ``z >= 0`` and ``2*gamma*(sig(c*z/4) - 1/2)`` otherwise.

    The negative branch saturates at ``-gamma``.  The function is convex as
    long as the left slope at zero, ``gamma*c/8``, does not exceed ``c``.
    """

    c: float
    gamma: float

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        neg = 2.0 * self.gamma * (expit(self.c * z / 4.0) - 0.5)
        out = np.where(z >= 0, self.c * z, neg)
        return out if out.ndim else float(out)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        s = expit(self.c * z / 4.0)
        out = np.where(z >= 0, self.c, 2.0 * self.gamma * s * (1.0 - s) * self.c / 4.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class ClippedAlpha:
    """``alpha`` on the non-positive axis, zero on the positive axis."""

    inner: ClassKe

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.where(z <= 0, self.inner(np.minimum(z, 0.0)), 0.0)
        return out if out.ndim else float(out)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        out = np.where(z < 0, self.inner.derivative(np.minimum(z, 0.0)), 0.0)
        return out if out.ndim else float(out)


def alpha_eval(a: ClassKe, z: float) -> float:
    return float(a(z))


def alpha_bar_eval(a: ClippedAlpha, z: float) -> float:
    return float(a(z))


def sample_ladder(n_per_side: int = 1000, lo_exp: float = -6.0, hi_exp: float = 3.0) -> np.ndarray:
    mags = np.logspace(lo_exp, hi_exp, n_per_side)
    return np.concatenate([-mags[::-1], [0.0], mags])


@dataclass
class ClassKeReport:
    zero_value: float
    min_slope: float
    lower_bound_margin: float
    convexity_margin: float
    tail_gap: float
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def check_classke(a: ClassKe, ladder: np.ndarray | None = None) -> ClassKeReport:
    """Sampled check of alpha(0)=0, strict monotonicity, alpha >= -gamma and convexity."""
    z = sample_ladder() if ladder is None else np.sort(np.asarray(ladder, dtype=float))
    vals = np.asarray(a(z))
    zero = float(a(0.0))
    slopes = np.diff(vals) / np.diff(z)
    lower = float(np.min(vals + a.gamma))
    # midpoint value against the chord of each consecutive triple
    z0, z1, z2 = z[:-2], z[1:-1], z[2:]
    w = (z1 - z0) / (z2 - z0)
    chord = (1 - w) * vals[:-2] + w * vals[2:]
    scale = np.maximum(1.0, np.abs(chord))
    convex = float(np.min((chord - vals[1:-1]) / scale))
    tail = abs(float(a(-1e6)) + a.gamma)
    # the sigmoid branch rounds to -gamma far out; strictness there comes from
    # the derivative, evaluated in log space
    s_arg = a.c * z[z < 0] / 4.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_slope = np.log(2.0 * a.gamma * a.c / 4.0) + log_expit(s_arg) + log_expit(-s_arg)
    increasing = (
        bool(np.all(np.diff(vals) >= 0))
        and a.c > 0
        and a.gamma > 0
        and bool(np.all(np.isfinite(log_slope)))
    )
    checks = {
        "zero_at_zero": zero == 0.0,
        "strictly_increasing": increasing,
        "lower_bound": lower >= -1e-12,
        "convex": convex >= -1e-12,
        "saturates_at_minus_gamma": tail <= 1e-9,
    }
    return ClassKeReport(zero, float(slopes.min()), lower, convex, tail, checks)
