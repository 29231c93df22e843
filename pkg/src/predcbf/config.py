"""JSON run configuration: schema, validation and construction of the run objects."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .constraint import (
    ConfigError,
    ConstraintField,
    DomainBox,
    InvariantSubset,
    SynthesisSpec,
    default_subset,
    unicycle_turning_radius,
)
from .dynamics import MODEL_IDS, ControlSystem, KinematicBicycle, make_system, turning_radius
from .filter_sim import FilterConfig, TargetLine, TrackingGains
from .shift import ShiftSchedule

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM}

_CONSTRAINT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["circle", "modified_double_integrator", "composite_min"]},
        "center": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "radius": _NUM,
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "v_bound": _NUM,
        "parts": {"type": "array", "items": {"$ref": "#/$defs/constraint"}},
    },
}

_SCHEDULE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "sinusoid_abs"]},
        "value": _NUM,
        "r": _NUM,
        "r_max": _NUM,
        "tau_p": {"type": "number", "exclusiveMinimum": 0},
        "sigma": _NUM,
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "constraint", "domain", "synthesis"],
    "$defs": {"constraint": _CONSTRAINT},
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["id"],
            "properties": {
                "id": {"enum": list(MODEL_IDS)},
                "params": {"type": "object"},
            },
        },
        "constraint": {"$ref": "#/$defs/constraint"},
        "invariant_subset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["superlevel", "eroded_superlevel"]},
                "threshold": _NUM,
                "delta": _NUM,
                "margin": _NUM,
            },
        },
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lo", "hi", "counts"],
            "properties": {
                "lo": _VEC,
                "hi": _VEC,
                "wraps": {"type": "array", "items": {"type": "boolean"}},
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 2}},
            },
        },
        "synthesis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": _NUM,
                "delta": _NUM,
                "T": _NUM,
                "N": {"type": "integer", "minimum": 1},
                "tbar": {"type": ["number", "null"]},
                "p": {"type": "integer"},
                "htilde": {"type": ["number", "null"]},
                "terminal_mode": {"enum": ["any_time", "at_final_step"]},
                "variant": {"enum": ["gamma_penalty", "alpha_penalty"]},
                "c": _NUM,
                "c_alpha": _NUM,
                "saturated": {"type": "boolean"},
                "tau_bound": {"type": ["number", "null"]},
            },
        },
        "shift": {"oneOf": [_SCHEDULE, {"type": "array", "items": _SCHEDULE}]},
        "filter": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "P": {"type": "array", "items": _VEC},
                "c_alpha": {"type": ["number", "null"], "minimum": 0},
                "input_candidates": {"type": "integer", "minimum": 2},
                "sigma_dini": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "required": ["x0", "t_end"],
            "properties": {
                "x0": _VEC,
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "line": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "point": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                        "angle": _NUM,
                        "cruise": _NUM,
                    },
                },
                "gains": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "k_pos": _NUM,
                        "k_vel": _NUM,
                        "lookahead": _NUM,
                        "k_heading": _NUM,
                    },
                },
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
    },
}


def validate_config(raw: dict) -> None:
    """Raise :class:`ConfigError` describing the first schema violation."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


@dataclass
class RunConfig:
    raw: dict
    system: ControlSystem
    field: ConstraintField
    spec: SynthesisSpec
    subset: InvariantSubset
    domain: DomainBox
    counts: tuple[int, ...]
    schedules: list[ShiftSchedule] = field(default_factory=list)
    filter: FilterConfig = field(default_factory=FilterConfig)
    simulate: dict | None = None
    seed: int = 0
    threads: int | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        validate_config(raw)
        try:
            m = raw["model"]
            system = make_system(m["id"], m.get("params"))
            fld = ConstraintField.from_dict(raw["constraint"])
            spec = SynthesisSpec.from_dict(raw["synthesis"])
            if "invariant_subset" in raw:
                sub = InvariantSubset.from_dict(raw["invariant_subset"])
            else:
                sub = default_subset(system.model_id, spec, car_turning_radius(system))
            d = raw["domain"]
            wraps = d.get("wraps") or [i in system.angular_states for i in range(len(d["lo"]))]
            domain = DomainBox(tuple(d["lo"]), tuple(d["hi"]), tuple(wraps))
            counts = tuple(int(c) for c in d["counts"])
            if len(counts) != domain.dim or domain.dim != system.state_dim:
                raise ConfigError(
                    f"domain has {domain.dim} axes and {len(counts)} counts; "
                    f"model state has {system.state_dim} coordinates"
                )
            sh = raw.get("shift", [])
            schedules = [ShiftSchedule.from_dict(s) for s in (sh if isinstance(sh, list) else [sh])]
            fc = dict(raw.get("filter", {}))
            filt = FilterConfig(**fc)
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(raw, system, fld, spec, sub, domain, counts, schedules, filt,
                   raw.get("simulate"), int(raw.get("seed", 0)), raw.get("threads"))

    def schedules_for(self, n_grids: int) -> list[ShiftSchedule]:
        """One schedule per grid: a single schedule is shared, none means no shift."""
        if not self.schedules:
            return [ShiftSchedule() for _ in range(n_grids)]
        if len(self.schedules) == 1:
            return self.schedules * n_grids
        if len(self.schedules) != n_grids:
            raise ConfigError(f"{len(self.schedules)} shift schedules for {n_grids} grids")
        return list(self.schedules)

    def target_line(self) -> TargetLine:
        line = (self.simulate or {}).get("line", {})
        return TargetLine(tuple(line.get("point", (0.0, 0.0))), line.get("angle", 0.0), line.get("cruise", 1.0))

    def gains(self) -> TrackingGains:
        return TrackingGains(**(self.simulate or {}).get("gains", {}))


def car_turning_radius(system: ControlSystem) -> float | None:
    if isinstance(system, KinematicBicycle):
        return turning_radius(system.bp)
    if system.model_id == "unicycle":
        return unicycle_turning_radius(system.input_lo[0], min(-system.input_lo[1], system.input_hi[1]))
    return None


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(raw)


def finite_or_str(v: float):
    return v if math.isfinite(v) else str(v)
