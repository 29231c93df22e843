"""Grid synthesis over a box domain, multilinear interpolation and grid files.

Values are stored row-major with the last axis varying fastest.  Angular axes
span exactly one period with a node at both ends; the last node of such an
axis is the same physical state as the first and is copied, not solved.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import crc32c
import numpy as np

from .classk import ClassKe
from .constraint import (
    ConstraintField,
    DomainBox,
    InvariantSubset,
    SynthesisSpec,
    default_htilde,
    validate_spec,
)
from .dynamics import ControlSystem, make_system
from .synthesis import (
    ARMIJO_C,
    MAX_ITERS,
    MIN_STEP,
    PENALTY_ROUNDS,
    REL_TOL,
    REL_WINDOW,
    RESTART_NAMES,
    TERMINAL_MARGIN,
    PointSolve,
    Problem,
    SynthesisError,
    node_seed,
    solve_batch,
)

MAGIC = b"CBFG"
FORMAT_VERSION = 1
TWO_PI = 2.0 * math.pi
DEFAULT_CHUNK = 64


class GridError(ValueError):
    pass


class GridRangeError(GridError):
    def __init__(self, axis: int, coordinate: float, lo: float, hi: float):
        super().__init__(f"coordinate {coordinate!r} on axis {axis} outside [{lo}, {hi}]")
        self.axis = axis
        self.coordinate = coordinate


class GridFormatError(GridError):
    pass


class ChecksumError(GridFormatError):
    pass


class UnsupportedVersionError(GridFormatError):
    pass


@dataclass(frozen=True)
class GridAxis:
    min: float
    max: float
    count: int
    wraps: bool = False

    def __post_init__(self):
        if int(self.count) < 2:
            raise GridError(f"axis needs at least 2 nodes, got {self.count}")
        if not self.min < self.max:
            raise GridError(f"axis needs min < max, got [{self.min}, {self.max}]")
        if self.wraps and not math.isclose(self.max - self.min, TWO_PI, rel_tol=0, abs_tol=1e-9):
            raise GridError("a wrapping axis must span exactly 2*pi")
        object.__setattr__(self, "count", int(self.count))

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.count)

    @property
    def edge(self) -> float:
        return (self.max - self.min) / (self.count - 1)

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "count": self.count, "wraps": self.wraps}


@dataclass(frozen=True)
class ShiftBound:
    """``capital_lambda`` with the rule that produced it (``contained`` or ``exterior``)."""

    capital_lambda: float
    kind: str = "contained"

    def __post_init__(self):
        if not self.capital_lambda >= 0:
            raise GridError(f"shift bound must be nonnegative, got {self.capital_lambda}")


def axes_from_domain(domain: DomainBox, counts) -> tuple[GridAxis, ...]:
    counts = list(counts)
    if len(counts) != domain.dim:
        raise GridError(f"{len(counts)} counts for a {domain.dim}-dimensional domain")
    return tuple(
        GridAxis(lo, hi, c, w) for lo, hi, c, w in zip(domain.lo, domain.hi, counts, domain.wraps)
    )


@dataclass
class CbfGrid:
    axes: tuple[GridAxis, ...]
    values: np.ndarray
    flags: np.ndarray
    meta: dict

    def __post_init__(self):
        self.axes = tuple(self.axes)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        self.flags = np.asarray(self.flags, dtype=bool).reshape(-1)
        n = int(np.prod(self.counts))
        if self.values.size != n or self.flags.size != n:
            raise GridError(f"expected {n} values and flags, got {self.values.size}/{self.flags.size}")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def min_edge(self) -> float:
        return min(a.edge for a in self.axes)

    def points(self) -> np.ndarray:
        return node_points(self.axes)

    # reconstructed objects ------------------------------------------------

    @property
    def spec(self) -> SynthesisSpec:
        return SynthesisSpec.from_dict(self.meta["synthesis"])

    @property
    def field(self) -> ConstraintField:
        return ConstraintField.from_dict(self.meta["constraint"])

    @property
    def subset(self) -> InvariantSubset:
        return InvariantSubset.from_dict(self.meta["invariant_subset"])

    @property
    def system(self) -> ControlSystem:
        m = self.meta["model"]
        return make_system(m["id"], m["params"])

    @property
    def alpha(self) -> ClassKe:
        s = self.spec
        return ClassKe(s.c, s.gamma)

    @property
    def saturated(self) -> bool:
        return bool(self.meta.get("saturated", False))

    @property
    def saturation_level(self) -> float:
        return self.spec.saturation_level()

    @property
    def sentinel(self) -> float:
        s = self.spec
        return -(abs(s.saturation_level()) + 10.0 * s.gamma * s.T)

    def effective_values(self) -> np.ndarray:
        """Stored values with infeasible nodes replaced by the unsafe sentinel."""
        return np.where(self.flags, self.values, self.sentinel)


def node_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*[a.nodes for a in axes], indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, len(axes))


def _canonical_index(axes) -> np.ndarray:
    """Flat index of the representative node (last node of a wrapping axis maps to the first)."""
    counts = tuple(a.count for a in axes)
    idx = np.indices(counts).reshape(len(axes), -1)
    for d, a in enumerate(axes):
        if a.wraps:
            idx[d] = np.where(idx[d] == a.count - 1, 0, idx[d])
    return np.ravel_multi_index(tuple(idx), counts)


# ---------------------------------------------------------------------------
# synthesis


def _better(a: PointSolve, b: PointSolve) -> PointSolve:
    """Selection rule of the solver: feasible first, then value, then smaller violation."""
    if a.feasible != b.feasible:
        return a if a.feasible else b
    if a.feasible:
        return b if b.value > a.value else a
    if b.violation < a.violation or (b.violation == a.violation and b.value > a.value):
        return b
    return a


def _neighbors(flat: int, counts, axes) -> list[int]:
    multi = np.unravel_index(flat, counts)
    out = []
    for d, a in enumerate(axes):
        for step in (-1, 1):
            j = multi[d] + step
            if a.wraps:
                j %= a.count - 1
            elif not 0 <= j < a.count:
                continue
            nb = list(multi)
            nb[d] = j
            out.append(int(np.ravel_multi_index(tuple(nb), counts)))
    return out


def synthesize_grid(
    spec: SynthesisSpec,
    sys: ControlSystem,
    field_: ConstraintField,
    sub: InvariantSubset,
    domain: DomainBox,
    counts,
    threads: int | None = None,
    seed: int = 0,
    override: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
    config: dict | None = None,
    progress=None,
) -> CbfGrid:
    """Fill a grid over ``domain`` with pointwise solves of ``H_T``.

    Work is split into fixed chunks of node indices, so the result does not
    depend on ``threads``.  A second pass re-solves nodes from the inputs of
    a better axis neighbor and keeps whichever result the selection rule
    prefers.
    """
    if domain.dim != sys.state_dim:
        raise GridError(f"domain has {domain.dim} axes, model state has {sys.state_dim}")
    for i in sys.angular_states:
        if not domain.wraps[i]:
            raise GridError(f"state {i} is an angle; its domain axis must wrap")
    axes = axes_from_domain(domain, counts)
    counts = tuple(a.count for a in axes)
    pts = node_points(axes)
    h_nodes = field_(pts)

    report = validate_spec(spec, field_, domain, sub, counts)
    if not report.ok and not override:
        raise SynthesisError("parameter validation failed:\n" + report.format())
    htilde = spec.htilde
    if htilde is None:
        htilde = default_htilde(spec, float(h_nodes.min()))
    spec = replace(spec, htilde=float(htilde))
    prob = Problem(spec, sys, field_, sub, spec.htilde)

    P = pts.shape[0]
    canon = _canonical_index(axes)
    results: list[PointSolve | None] = [None] * P
    values = np.full(P, np.nan)
    flags = np.zeros(P, dtype=bool)
    restarts_used = np.zeros(P, dtype=np.int64)

    own = canon == np.arange(P)
    shortcut = np.zeros(P, dtype=bool)
    if spec.saturated:
        shortcut = own & np.asarray(sub.contains(field_, pts), dtype=bool)
        values[shortcut] = spec.saturation_level()
        flags[shortcut] = True
    todo = np.flatnonzero(own & ~shortcut)

    def run(chunk, warm=None, restarts=RESTART_NAMES):
        seeds = [node_seed(seed, int(i)) for i in chunk]
        return solve_batch(prob, pts[chunk], seeds, warm, restarts)

    workers = max(1, int(threads or 1))
    chunks = [todo[i : i + chunk_size] for i in range(0, todo.size, chunk_size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for chunk, sols in zip(chunks, pool.map(run, chunks)):
            for i, s in zip(chunk, sols):
                results[i] = s
            if progress:
                progress("solve", len(chunk))

        # warm-start pass, driven only by pass-one results
        warm_idx, warm_u = [], []
        for i in todo:
            mine = results[i]
            best = None
            for j in _neighbors(int(i), counts, axes):
                nb = results[int(canon[j])]
                if nb is None or not nb.feasible:
                    continue
                if mine.feasible and nb.value <= mine.value + 1e-6:
                    continue
                if best is None or nb.value > best.value:
                    best = nb
            if best is not None:
                warm_idx.append(i)
                warm_u.append(best.u_star)
        warm_idx = np.asarray(warm_idx, dtype=np.int64)
        wchunks = [
            (warm_idx[k : k + chunk_size], warm_u[k : k + chunk_size])
            for k in range(0, warm_idx.size, chunk_size)
        ]
        outs = pool.map(lambda c: run(c[0], c[1], ("warm_start",)), wchunks)
        for (chunk, _), sols in zip(wchunks, outs):
            for i, s in zip(chunk, sols):
                first = results[i]
                s.restarts_used += first.restarts_used
                pick = _better(first, s)
                pick.restarts_used = s.restarts_used
                results[i] = pick
            if progress:
                progress("warm", len(chunk))

    for i in todo:
        r = results[i]
        values[i] = r.value
        flags[i] = r.feasible
        restarts_used[i] = r.restarts_used
    values = values[canon]
    flags = flags[canon]
    if spec.saturated:
        values = np.minimum(values, spec.saturation_level())

    meta = {
        "model": sys.describe(),
        "constraint": field_.to_dict(),
        "invariant_subset": sub.to_dict(),
        "synthesis": spec.to_dict(),
        "domain": {"lo": list(domain.lo), "hi": list(domain.hi), "wraps": list(domain.wraps)},
        "axes": [a.to_dict() for a in axes],
        "seed": int(seed),
        "saturated": bool(spec.saturated),
        "layout": "row-major, last axis fastest",
        "validation": report.to_dict(),
        "solver": {
            "method": "projected gradient, Armijo backtracking, adjoint gradients",
            "penalty_rounds": [list(r) for r in PENALTY_ROUNDS],
            "terminal_margin": TERMINAL_MARGIN,
            "max_iters": MAX_ITERS,
            "min_step": MIN_STEP,
            "rel_tol": REL_TOL,
            "rel_window": REL_WINDOW,
            "armijo_c": ARMIJO_C,
            "restarts": list(RESTART_NAMES),
            "chunk_size": int(chunk_size),
        },
        "stats": {
            "points": int(P),
            "solved": int(todo.size),
            "f_shortcut": int(shortcut.sum()),
            "warm_resolved": int(warm_idx.size),
            "infeasible": int((~flags).sum()),
            "restarts_total": int(restarts_used.sum()),
        },
    }
    if config is not None:
        meta["config"] = config
    return CbfGrid(axes, values, flags, meta)


# ---------------------------------------------------------------------------
# queries


def _locate(grid: CbfGrid, X: np.ndarray, clamp: bool):
    """Cell indices, fractions and a clamped mask for query points ``(K, n)``."""
    X = np.array(X, dtype=float, copy=True)
    if X.ndim != 2 or X.shape[1] != grid.dim:
        raise GridError(f"query must have {grid.dim} coordinates, got shape {X.shape}")
    clamped = np.zeros(X.shape[0], dtype=bool)
    idx = np.empty(X.shape, dtype=np.int64)
    frac = np.empty(X.shape)
    for d, a in enumerate(grid.axes):
        col = X[:, d]
        if not np.all(np.isfinite(col)):
            k = int(np.flatnonzero(~np.isfinite(col))[0])
            raise GridRangeError(d, float(col[k]), a.min, a.max)
        if a.wraps:
            col = a.min + np.mod(col - a.min, TWO_PI)
            col = np.where(col >= a.max, a.min, col)
        else:
            out = (col < a.min) | (col > a.max)
            if np.any(out):
                if not clamp:
                    k = int(np.flatnonzero(out)[0])
                    raise GridRangeError(d, float(col[k]), a.min, a.max)
                clamped |= out
                col = np.clip(col, a.min, a.max)
        nodes = a.nodes
        i = np.clip(np.searchsorted(nodes, col, side="right") - 1, 0, a.count - 2)
        f = (col - nodes[i]) / (nodes[i + 1] - nodes[i])
        idx[:, d] = i
        frac[:, d] = f
    return idx, frac, clamped


def interpolate_batch(grid: CbfGrid, X, clamp: bool = False):
    """Multilinear values at ``X`` (K, n).

    Returns ``(values, clamped, touched_infeasible)``.  Out-of-range queries
    raise :class:`GridRangeError` unless ``clamp`` is set.
    """
    idx, frac, clamped = _locate(grid, np.atleast_2d(X), clamp)
    vals = grid.effective_values().reshape(grid.counts)
    bad = (~grid.flags).reshape(grid.counts)
    out = np.zeros(idx.shape[0])
    touched = np.zeros(idx.shape[0], dtype=bool)
    for corner in product((0, 1), repeat=grid.dim):
        c = np.asarray(corner)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        sel = tuple((idx + c).T)
        out += w * vals[sel]
        touched |= (w > 0) & bad[sel]
    return out, clamped, touched


def interpolate(grid: CbfGrid, x) -> float:
    v, _, _ = interpolate_batch(grid, np.asarray(x, dtype=float)[None])
    return float(v[0])


def dini_sigma(grid: CbfGrid, v) -> float:
    return 0.1 * grid.min_edge / max(1.0, float(np.linalg.norm(v)))


def dini_batch(grid: CbfGrid, x, V, sigma: float | None = None, clamp: bool = False):
    """Forward differences of the interpolant from ``x`` along each row of ``V``.

    Returns ``(d, clamped)``.  Zero directions give 0.
    """
    x = np.asarray(x, dtype=float)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    norms = np.linalg.norm(V, axis=1)
    if sigma is None:
        sig = 0.1 * grid.min_edge / np.maximum(1.0, norms)
    else:
        sig = np.full(V.shape[0], float(sigma))
    pts = np.vstack([x[None], x[None] + sig[:, None] * V])
    vals, clamped, _ = interpolate_batch(grid, pts, clamp)
    d = (vals[1:] - vals[0]) / sig
    d = np.where(norms == 0.0, 0.0, d)
    return d, clamped[1:] | clamped[0]


def dini_directional(grid: CbfGrid, x, v, sigma: float | None = None) -> float:
    d, _ = dini_batch(grid, x, np.asarray(v, dtype=float)[None], sigma)
    return float(d[0])


def boundary_mask(grid: CbfGrid) -> np.ndarray:
    """Nodes on the outermost shell of every non-wrapping axis."""
    idx = np.indices(grid.counts).reshape(grid.dim, -1)
    mask = np.zeros(idx.shape[1], dtype=bool)
    for d, a in enumerate(grid.axes):
        if not a.wraps:
            mask |= (idx[d] == 0) | (idx[d] == a.count - 1)
    return mask


def compute_capital_lambda(grid: CbfGrid) -> ShiftBound:
    """Largest ``lam`` with ``{H >= -lam}`` free of boundary nodes.

    When every boundary node already lies in ``{H >= 0}`` the safe set is the
    exterior of an obstacle and no superlevel set fits inside the window; the
    bound is then the obstacle depth ``-min H`` over feasible nodes, beyond
    which the shifted obstacle disappears.
    """
    mask = boundary_mask(grid)
    if not mask.any():
        return ShiftBound(math.inf)
    eff = grid.effective_values()
    edge = eff[mask]
    if edge.min() >= 0.0 and grid.flags.any():
        return ShiftBound(max(0.0, -float(grid.values[grid.flags].min())), "exterior")
    return ShiftBound(max(0.0, -float(edge.max())))


def lipschitz_ratio(grid: CbfGrid) -> float:
    """Largest |dH|/edge between adjacent feasible nodes (observed, not certified)."""
    vals = grid.values.reshape(grid.counts)
    ok = grid.flags.reshape(grid.counts)
    worst = 0.0
    for d, a in enumerate(grid.axes):
        dv = np.abs(np.diff(vals, axis=d)) / a.edge
        both = ok.take(range(a.count - 1), axis=d) & ok.take(range(1, a.count), axis=d)
        if np.any(both):
            worst = max(worst, float(dv[both].max()))
    return worst


def field_bound(sys: ControlSystem, pts: np.ndarray, per_axis: int = 11) -> float:
    """Largest over ``pts`` of the smallest ``|f(x,u)|`` over an input lattice."""
    lattice = np.array(list(product(*(np.linspace(lo, hi, per_axis) for lo, hi in sys.input_box))))
    best = np.full(len(pts), np.inf)
    for u in lattice:
        speed = np.linalg.norm(sys.f(pts, np.broadcast_to(u, (len(pts), u.size))), axis=1)
        best = np.minimum(best, speed)
    return float(best.max())


def alpha_dominance(grid: CbfGrid) -> dict:
    """Sufficient condition ``c*delta >= L*M`` with ``L`` and ``M`` estimated
    from the nodes; informational only."""
    spec = grid.spec
    L = lipschitz_ratio(grid)
    M = field_bound(grid.system, grid.points())
    return {"passed": True, "holds": bool(spec.c * spec.delta >= L * M),
            "c_delta": spec.c * spec.delta, "L": L, "M": M}


def same_axes(g1: CbfGrid, g2: CbfGrid) -> bool:
    return g1.axes == g2.axes


def check_monotone(g1: CbfGrid, g2: CbfGrid, tol: float = 0.05, lambdas=None) -> dict:
    """Pointwise ``H1 >= -lam  =>  H2 >= -lam - tol`` on shared nodes.

    ``g1`` should carry the shorter horizon.  ``lambdas`` defaults to
    ``{0, Lambda/2, Lambda}`` with ``Lambda`` the smaller of both grids' bounds.
    """
    if not same_axes(g1, g2):
        raise GridError("monotonicity check needs identical axes")
    lam_max = min(compute_capital_lambda(g1).capital_lambda, compute_capital_lambda(g2).capital_lambda)
    if lambdas is None:
        lambdas = [0.0, 0.5 * lam_max, lam_max]
    v1, v2 = g1.effective_values(), g2.effective_values()
    pts = g1.points()
    levels = []
    for lam in lambdas:
        bad = (v1 >= -lam) & (v2 < -lam - tol)
        entry = {"lambda": float(lam), "violations": int(bad.sum())}
        if bad.any():
            deficit = np.where(bad, -lam - v2, -np.inf)
            k = int(np.argmax(deficit))
            entry["worst"] = {
                "index": k,
                "point": pts[k].tolist(),
                "H1": float(v1[k]),
                "H2": float(v2[k]),
                "deficit": float(deficit[k]),
            }
        levels.append(entry)
    return {
        "passed": all(e["violations"] == 0 for e in levels),
        "tol": tol,
        "capital_lambda": lam_max,
        "T1": g1.spec.T,
        "T2": g2.spec.T,
        "levels": levels,
    }


def check_grid(grid: CbfGrid, tol: float = 1e-9) -> dict:
    """Invariant suite over the nodes of a finished grid."""
    pts = grid.points()
    h = grid.field(pts)
    feas = grid.flags
    v = grid.values
    checks = {}

    excess = np.where(feas, v - h, -np.inf)
    k = int(np.argmax(excess))
    checks["upper_bound"] = {
        "passed": bool(excess[k] <= tol) if feas.any() else True,
        "worst_excess": float(excess[k]) if feas.any() else None,
        "worst_point": pts[k].tolist() if feas.any() else None,
    }
    unsound = feas & (v >= 0) & (h < 0)
    checks["soundness"] = {
        "passed": not bool(unsound.any()),
        "violations": int(unsound.sum()),
        "first_point": pts[int(np.argmax(unsound))].tolist() if unsound.any() else None,
    }
    if grid.saturated:
        level = grid.saturation_level
        over = feas & (v > level)
        checks["saturation_cap"] = {
            "passed": not bool(over.any()),
            "level": level,
            "violations": int(over.sum()),
        }
    finite = np.isfinite(v)
    checks["finite_values"] = {"passed": bool(finite.all()), "nonfinite": int((~finite).sum())}
    lam = compute_capital_lambda(grid).capital_lambda
    checks["capital_lambda"] = {"passed": lam >= 0, "value": lam}
    checks["lipschitz_ratio"] = {"passed": True, "observed": lipschitz_ratio(grid)}
    checks["alpha_dominance"] = alpha_dominance(grid)
    checks["feasibility"] = {
        "passed": True,
        "infeasible_nodes": int((~feas).sum()),
        "total_nodes": int(feas.size),
    }
    return {"passed": all(c["passed"] for c in checks.values()), "checks": checks}


def slice_2d(grid: CbfGrid, dims=(0, 1), fixed: dict | None = None):
    """Values on the node lattice of two axes, other coordinates held fixed.

    ``fixed`` maps axis index to coordinate; unspecified axes use their
    middle node.  Returns ``(xs, ys, H)`` with ``H[i, j]`` at ``(xs[i], ys[j])``.
    """
    a, b = dims
    if a == b or not (0 <= a < grid.dim and 0 <= b < grid.dim):
        raise GridError(f"bad slice axes {dims} for a {grid.dim}-dimensional grid")
    fixed = dict(fixed or {})
    base = np.empty(grid.dim)
    for d, ax in enumerate(grid.axes):
        base[d] = fixed.get(d, ax.nodes[ax.count // 2])
    xs, ys = grid.axes[a].nodes, grid.axes[b].nodes
    X = np.tile(base, (xs.size * ys.size, 1))
    mx, my = np.meshgrid(xs, ys, indexing="ij")
    X[:, a] = mx.ravel()
    X[:, b] = my.ravel()
    vals, _, _ = interpolate_batch(grid, X)
    return xs, ys, vals.reshape(xs.size, ys.size)


# ---------------------------------------------------------------------------
# persistence


def _meta_bytes(grid: CbfGrid) -> bytes:
    meta = dict(grid.meta)
    meta["axes"] = [a.to_dict() for a in grid.axes]
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def to_bytes(grid: CbfGrid) -> bytes:
    meta = _meta_bytes(grid)
    body = b"".join(
        [
            MAGIC,
            struct.pack("<I", FORMAT_VERSION),
            struct.pack("<Q", len(meta)),
            meta,
            grid.values.astype("<f8").tobytes(),
            np.packbits(grid.flags, bitorder="little").tobytes(),
        ]
    )
    return body + struct.pack("<I", crc32c.crc32c(body))


def from_bytes(blob: bytes) -> CbfGrid:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise GridFormatError("not a grid file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported grid format version {version}")
    if len(blob) < 20:
        raise ChecksumError("file too short to carry a checksum")
    (stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if crc32c.crc32c(blob[:-4]) != stored:
        raise ChecksumError("checksum mismatch: file is corrupted or truncated")
    (mlen,) = struct.unpack_from("<Q", blob, 8)
    meta_end = 16 + mlen
    if meta_end > len(blob) - 4:
        raise GridFormatError("truncated payload: metadata runs past the end")
    meta = json.loads(blob[16:meta_end].decode("utf-8"))
    axes = tuple(GridAxis(**a) for a in meta["axes"])
    n = int(np.prod([a.count for a in axes]))
    nflag = (n + 7) // 8
    if len(blob) - 4 - meta_end != 8 * n + nflag:
        raise GridFormatError(
            f"truncated payload: expected {8 * n + nflag} bytes after metadata, "
            f"found {len(blob) - 4 - meta_end}"
        )
    values = np.frombuffer(blob, dtype="<f8", count=n, offset=meta_end).astype(np.float64)
    bits = np.frombuffer(blob, dtype=np.uint8, count=nflag, offset=meta_end + 8 * n)
    flags = np.unpackbits(bits, count=n, bitorder="little").astype(bool)
    return CbfGrid(axes, values, flags, meta)


def save(grid: CbfGrid, path) -> int:
    """Write ``grid`` and return the CRC32C stored in the trailer."""
    blob = to_bytes(grid)
    Path(path).write_bytes(blob)
    return struct.unpack_from("<I", blob, len(blob) - 4)[0]


def load(path) -> CbfGrid:
    return from_bytes(Path(path).read_bytes())
