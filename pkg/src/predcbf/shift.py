"""Shift schedules ``lam(t)`` and the numeric shiftability certificate.

``H(x) + lam(t)`` stays a CBF while ``lam`` lies in ``[0, Lambda]`` and
``dlam/dt >= alpha(-lam)``.  The ``|sin|`` family has kinks; there the
smaller one-sided derivative is used so that a pass is conservative.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .classk import ClassKe
from .grid import CbfGrid, ShiftBound, interpolate

SCHEDULE_KINDS = ("constant", "sinusoid_abs")
KINK_RTOL = 1e-12


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftSchedule:
    """``constant``: ``lam = value``.  ``sinusoid_abs``: ``lam = -r_max*|sin(pi*t/tau_p - sigma)| + r``."""

    kind: str = "constant"
    value: float = 0.0
    r: float = 0.0
    r_max: float = 0.0
    tau_p: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ScheduleError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if self.kind == "sinusoid_abs":
            if not self.tau_p > 0:
                raise ScheduleError(f"tau_p must be positive, got {self.tau_p}")
            if not 0 <= self.r_max <= self.r:
                raise ScheduleError(f"need 0 <= r_max <= r, got r_max={self.r_max}, r={self.r}")

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": self.kind, "r": self.r, "r_max": self.r_max, "tau_p": self.tau_p, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftSchedule":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ScheduleError(f"unknown schedule keys {sorted(extra)}")
        return cls(**d)


def constant(value: float) -> ShiftSchedule:
    return ShiftSchedule("constant", value=float(value))


def sinusoid_abs(r: float, r_max: float, tau_p: float, sigma: float = 0.0) -> ShiftSchedule:
    return ShiftSchedule("sinusoid_abs", r=r, r_max=r_max, tau_p=tau_p, sigma=sigma)


def lambda_eval(s: ShiftSchedule, t):
    t = np.asarray(t, dtype=float)
    if s.kind == "constant":
        out = np.full(t.shape, s.value)
    else:
        out = -s.r_max * np.abs(np.sin(math.pi * t / s.tau_p - s.sigma)) + s.r
    return out if out.ndim else float(out)


def kink_times(s: ShiftSchedule, t0: float, t1: float) -> np.ndarray:
    """Instants in ``[t0, t1]`` where ``|sin|`` is not differentiable."""
    if s.kind != "sinusoid_abs" or s.r_max == 0:
        return np.empty(0)
    off = s.sigma / math.pi
    k0 = math.ceil(t0 / s.tau_p - off - 1e-12)
    k1 = math.floor(t1 / s.tau_p - off + 1e-12)
    return s.tau_p * (np.arange(k0, k1 + 1) + off)


def _at_kink(s: ShiftSchedule, t: np.ndarray) -> np.ndarray:
    off = s.sigma / math.pi
    tk = s.tau_p * (np.round(t / s.tau_p - off) + off)
    return np.abs(t - tk) <= KINK_RTOL * np.maximum(1.0, np.abs(t))


def lambda_dot(s: ShiftSchedule, t):
    """Time derivative; at a kink the lesser one-sided value ``-r_max*pi/tau_p``."""
    t = np.asarray(t, dtype=float)
    if s.kind == "constant" or s.r_max == 0:
        out = np.zeros(t.shape)
    else:
        w = math.pi / s.tau_p
        arg = w * t - s.sigma
        out = -s.r_max * w * np.sign(np.sin(arg)) * np.cos(arg)
        out = np.where(_at_kink(s, t), -s.r_max * w, out)
    return out if out.ndim else float(out)


@dataclass
class ShiftReport:
    passed: bool
    worst_margin: float
    worst_t: float
    lambda_min: float
    lambda_max: float
    capital_lambda: float
    range_ok: bool
    derivative_ok: bool
    samples: int
    kinks: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["capital_lambda"] = d["capital_lambda"] if math.isfinite(self.capital_lambda) else "inf"
        return d

    def format(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"shiftability {status}: worst margin {self.worst_margin:.6g} at t={self.worst_t:.6g}; "
            f"lambda in [{self.lambda_min:.6g}, {self.lambda_max:.6g}], Lambda={self.capital_lambda:.6g}; "
            f"{len(self.kinks)} kink(s)"
        )


def check_shiftable(s: ShiftSchedule, alpha: ClassKe, lam_bound, horizon: float,
                    samples: int = 10001) -> ShiftReport:
    """Sampled check of ``lam in [0, Lambda]`` and ``dlam/dt >= alpha(-lam)`` on ``[0, horizon]``."""
    cap = lam_bound.capital_lambda if isinstance(lam_bound, ShiftBound) else float(lam_bound)
    kinks = kink_times(s, 0.0, horizon)
    t = np.union1d(np.linspace(0.0, horizon, max(int(samples), 2)), kinks)
    lam = lambda_eval(s, t)
    margin = lambda_dot(s, t) - alpha(-lam)
    k = int(np.argmin(margin))
    lo, hi = float(lam.min()), float(lam.max())
    range_ok = lo >= -1e-12 and hi <= cap + 1e-12
    deriv_ok = bool(margin[k] >= 0.0)
    return ShiftReport(
        passed=bool(range_ok and deriv_ok),
        worst_margin=float(margin[k]),
        worst_t=float(t[k]),
        lambda_min=lo,
        lambda_max=hi,
        capital_lambda=cap,
        range_ok=bool(range_ok),
        derivative_ok=deriv_ok,
        samples=int(t.size),
        kinks=[float(v) for v in kinks],
    )


def critical_period(s: ShiftSchedule, alpha: ClassKe, lam_bound, periods: float = 2.0,
                    lo: float = 1e-3, hi: float = 1e3, tol: float = 1e-6):
    """Bisect on ``tau_p`` for the pass/fail boundary of :func:`check_shiftable`.

    Returns ``(tau_fail, tau_pass)`` bracketing the boundary, with each check
    run over ``periods`` periods.  Either side is ``None`` when no bracket exists.
    """
    if s.kind != "sinusoid_abs":
        raise ScheduleError("critical period only applies to the sinusoid family")

    def ok(tau):
        return check_shiftable(replace(s, tau_p=tau), alpha, lam_bound, periods * tau).passed

    if ok(lo):
        return None, lo
    if not ok(hi):
        return hi, None
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def shifted_value(grid: CbfGrid, s: ShiftSchedule, t: float, x) -> float:
    return interpolate(grid, x) + float(lambda_eval(s, t))
