"""Constraint fields ``h``, the known subset ``F``, the domain box and synthesis parameters."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

FIELD_KINDS = ("circle", "modified_double_integrator", "composite_min")
TERMINAL_MODES = ("any_time", "at_final_step")
VARIANTS = ("gamma_penalty", "alpha_penalty")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintField:
    """Lipschitz constraint function ``h``; the safe set is ``{h >= 0}``.

    ``circle`` is the signed distance to a disk of radius ``radius``.
    ``modified_double_integrator`` additionally bounds the velocity coordinates
    (indices 2 and 3) by ``v_bound`` through ``eta * min{h_pos/eta, v_bound +- v}``.
    ``composite_min`` takes the pointwise minimum of ``parts``.
    """

    kind: str = "circle"
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 9.0
    eta: float = 1.0
    v_bound: float = 2.0
    parts: tuple["ConstraintField", ...] = ()

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ConfigError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "modified_double_integrator" and self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.kind == "composite_min" and not self.parts:
            raise ConfigError("composite_min needs at least one part")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def _circle(self, x):
        dx = x[..., 0] - self.center[0]
        dy = x[..., 1] - self.center[1]
        return np.hypot(dx, dy) - self.radius

    def _terms(self, x):
        vx, vy = x[..., 2], x[..., 3]
        b = self.v_bound
        return np.stack(
            [self._circle(x) / self.eta, b + vx, b + vy, b - vx, b - vy], axis=-1
        )

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "circle":
            return self._circle(x)
        if self.kind == "modified_double_integrator":
            return self.eta * self._terms(x).min(axis=-1)
        return np.min(np.stack([p(x) for p in self.parts], axis=-1), axis=-1)

    def value_and_grad(self, x: np.ndarray):
        """``h`` and one (sub)gradient for a batch of states ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        if self.kind == "circle":
            dx = x[..., 0] - self.center[0]
            dy = x[..., 1] - self.center[1]
            d = np.hypot(dx, dy)
            safe = np.where(d > 0, d, 1.0)
            grad[..., 0] = np.where(d > 0, dx / safe, 0.0)
            grad[..., 1] = np.where(d > 0, dy / safe, 0.0)
            return d - self.radius, grad
        if self.kind == "modified_double_integrator":
            terms = self._terms(x)
            idx = terms.argmin(axis=-1)
            val = self.eta * np.take_along_axis(terms, idx[..., None], axis=-1)[..., 0]
            hp, gp = ConstraintField("circle", self.center, self.radius).value_and_grad(x)
            sel0 = idx == 0
            grad[..., 0] = np.where(sel0, gp[..., 0], 0.0)
            grad[..., 1] = np.where(sel0, gp[..., 1], 0.0)
            grad[..., 2] = self.eta * np.select([idx == 1, idx == 3], [1.0, -1.0], 0.0)
            grad[..., 3] = self.eta * np.select([idx == 2, idx == 4], [1.0, -1.0], 0.0)
            return val, grad
        vals, grads = zip(*(p.value_and_grad(x) for p in self.parts))
        vals = np.stack(vals, axis=-1)
        idx = vals.argmin(axis=-1)
        grads = np.stack(grads, axis=-2)
        g = np.take_along_axis(grads, idx[..., None, None], axis=-2)[..., 0, :]
        return vals.min(axis=-1), g

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "composite_min":
            d["parts"] = [p.to_dict() for p in self.parts]
            return d
        d.update(center=list(self.center), radius=self.radius)
        if self.kind == "modified_double_integrator":
            d.update(eta=self.eta, v_bound=self.v_bound)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintField":
        d = dict(d)
        parts = tuple(cls.from_dict(p) for p in d.pop("parts", ()))
        allowed = {"kind", "center", "radius", "eta", "v_bound"}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown constraint keys {sorted(extra)}")
        if "center" in d:
            d["center"] = tuple(d["center"])
        return cls(parts=parts, **d)


def h_eval(field_: ConstraintField, x) -> float:
    return float(field_(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class InvariantSubset:
    """The known set ``F``: ``h >= threshold`` or ``h >= delta + margin``."""

    kind: str = "superlevel"
    threshold: float = 1.0
    delta: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        if self.kind not in ("superlevel", "eroded_superlevel"):
            raise ConfigError(f"unknown invariant subset kind {self.kind!r}")

    @property
    def level(self) -> float:
        if self.kind == "superlevel":
            return self.threshold
        return self.delta + self.margin

    def contains(self, field_: ConstraintField, x) -> np.ndarray:
        return field_(x) >= self.level

    def to_dict(self) -> dict:
        if self.kind == "superlevel":
            return {"kind": self.kind, "threshold": self.threshold}
        return {"kind": self.kind, "delta": self.delta, "margin": self.margin}

    @classmethod
    def from_dict(cls, d: dict) -> "InvariantSubset":
        extra = set(d) - {"kind", "threshold", "delta", "margin"}
        if extra:
            raise ConfigError(f"unknown invariant_subset keys {sorted(extra)}")
        return cls(**d)


def f_member(sub: InvariantSubset, field_: ConstraintField, x) -> bool:
    return bool(sub.contains(field_, np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned domain ``D``; ``wraps[i]`` marks angles on ``[-pi, pi)``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    wraps: tuple[bool, ...] = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        wraps = tuple(bool(w) for w in self.wraps) or (False,) * len(lo)
        if not (len(lo) == len(hi) == len(wraps)):
            raise ConfigError("domain lo/hi/wraps lengths differ")
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not a < b:
                raise ConfigError(f"domain axis {i}: need min < max, got [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "wraps", wraps)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        ok = True
        for i in range(self.dim):
            if not self.wraps[i]:
                ok &= self.lo[i] <= x[i] <= self.hi[i]
        return bool(ok)


@dataclass
class SynthesisSpec:
    """Scalar parameters of the pointwise synthesis problem.

    ``tbar=None`` means no bound on the minimizing time is asserted (the
    ``gamma < delta/T`` condition applies); ``tbar=0`` asserts the minimum is
    always attained at ``t=0``.  ``htilde=None`` is resolved from the domain
    grid at synthesis time.
    """

    gamma: float = 2.0
    delta: float = 1.0
    T: float = 10.0
    N: int = 25
    tbar: Optional[float] = None
    p: int = 40
    htilde: Optional[float] = None
    terminal_mode: str = "at_final_step"
    variant: str = "gamma_penalty"
    c: float = 2.0
    c_alpha: float = 0.2
    saturated: bool = False
    tau_bound: Optional[float] = None

    def __post_init__(self):
        if self.terminal_mode not in TERMINAL_MODES:
            raise ConfigError(f"terminal_mode must be one of {TERMINAL_MODES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        self.N = int(self.N)
        self.p = int(self.p)

    @property
    def dt(self) -> float:
        return self.T / self.N

    def saturation_level(self) -> float:
        if self.variant == "alpha_penalty":
            return self.delta
        if self.tbar is not None:
            return self.delta - self.gamma * self.tbar
        return self.delta - self.gamma * self.T

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisSpec":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown synthesis keys {sorted(extra)}")
        return cls(**d)


def default_htilde(spec: SynthesisSpec, min_h: float) -> float:
    """Offset keeping every denominator ``h - gamma*t + htilde`` positive."""
    return max(0.0, spec.gamma * spec.T - min_h) + 1.0


@dataclass
class Condition:
    name: str
    lhs: float
    rhs: float
    relation: str
    passed: bool
    note: str = ""


@dataclass
class ValidationReport:
    conditions: list[Condition] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def failures(self) -> list[Condition]:
        return [c for c in self.conditions if not c.passed]

    def add(self, name, lhs, rhs, relation, note=""):
        ops = {
            "<": lambda a, b: a < b,
            "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b,
            ">=": lambda a, b: a >= b,
        }
        passed = bool(ops[relation](lhs, rhs))
        self.conditions.append(Condition(name, float(lhs), float(rhs), relation, passed, note))

    def to_dict(self) -> dict:
        return {"ok": self.ok, "conditions": [asdict(c) for c in self.conditions]}

    def format(self) -> str:
        lines = []
        for c in self.conditions:
            mark = "ok  " if c.passed else "FAIL"
            lines.append(f"[{mark}] {c.name}: {c.lhs:.6g} {c.relation} {c.rhs:.6g} {c.note}".rstrip())
        return "\n".join(lines)


def grid_min_h(field_: ConstraintField, domain: DomainBox, counts: Sequence[int]) -> float:
    axes = [np.linspace(a, b, int(c)) for a, b, c in zip(domain.lo, domain.hi, counts)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    return float(field_(pts).min())


def validate_spec(
    spec: SynthesisSpec,
    field_: ConstraintField,
    domain: DomainBox,
    sub: InvariantSubset | None = None,
    counts: Sequence[int] | None = None,
) -> ValidationReport:
    """Check the parameter conditions of the synthesis; never raises."""
    rep = ValidationReport()
    rep.add("gamma positive", spec.gamma, 0.0, ">")
    rep.add("delta positive", spec.delta, 0.0, ">")
    rep.add("horizon positive", spec.T, 0.0, ">")
    rep.add("steps positive", spec.N, 1, ">=")
    rep.add("p positive", spec.p, 0, ">")
    rep.add("p even", spec.p % 2, 0, "<=")

    if spec.variant == "gamma_penalty":
        if spec.tbar is None:
            rep.add("gamma*T < delta", spec.gamma * spec.T, spec.delta, "<")
        elif spec.tbar == 0:
            rep.add("gamma*tbar < delta", 0.0, spec.delta, "<", note="(tbar=0: vacuous)")
        else:
            rep.add("gamma*tbar < delta", spec.gamma * spec.tbar, spec.delta, "<")
    if spec.tbar is not None:
        rep.add("tbar < T", spec.tbar, spec.T, "<")

    if sub is not None:
        rep.add("F inside {h >= delta}", sub.level, spec.delta, ">=")

    if spec.tau_bound is not None:
        rep.add("T >= tau (asserted)", spec.T, spec.tau_bound, ">=")

    if counts is None:
        counts = [21] * domain.dim
    min_h = grid_min_h(field_, domain, counts)
    bound = max(0.0, spec.gamma * spec.T - min_h)
    if spec.htilde is None:
        rep.add("htilde > max(0, gamma*T - min h)", default_htilde(spec, min_h), bound, ">",
                note="(auto)")
    else:
        rep.add("htilde > max(0, gamma*T - min h)", spec.htilde, bound, ">")
        rep.add("htilde positive", spec.htilde, 0.0, ">")

    if field_.kind == "modified_double_integrator" and sub is not None:
        # h <= eta * v_bound, so F is empty when the level exceeds it
        rep.add("F nonempty (eta*v_bound >= level)", field_.eta * field_.v_bound, sub.level, ">=")
    return rep


def default_subset(model_id: str, spec: SynthesisSpec, bicycle_radius: float | None = None):
    """Integrators can hold position, so ``F = {h >= delta}``; car-like models
    erode by the diameter of the tightest turning circle."""
    if model_id in ("bicycle", "unicycle"):
        if bicycle_radius is None:
            raise ConfigError("turning radius required for car-like default F")
        return InvariantSubset("eroded_superlevel", delta=spec.delta, margin=2.0 * bicycle_radius)
    return InvariantSubset("superlevel", threshold=spec.delta)


def unicycle_turning_radius(v_min: float, omega_max: float) -> float:
    if omega_max <= 0:
        return math.inf
    return v_min / omega_max
