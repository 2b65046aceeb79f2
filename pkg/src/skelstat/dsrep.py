"""Data model and dsrep-json IO for globally and locally parameterized ds-reps."""
from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
UNIT_TOL = 1e-6       # directions further from unit length than this are rejected
RENORM_TOL = 1e-12    # ...and closer than this are kept bit-for-bit


class DsRepError(ValueError):
    """Schema or invariant violation in a ds-rep."""


class SpokeKind(str, enum.Enum):
    UP = "up"
    DOWN = "down"
    CREST = "crest"


class NodeRole(str, enum.Enum):
    SCENTROID = "s_centroid"
    SPINAL = "spinal"
    VEIN = "vein"
    CREST_TAIL = "crest_tail"


@dataclass(frozen=True)
class GridLayout:
    """Skeletal grid: ``rows x cols`` points (row-major), middle row is the spine.

    ``spine_extensions`` names the vein nodes continuing the spine past its
    first and last column. ``crest_order`` lists crest-spoke tails along the
    fold. Skeletal points beyond the grid (crest-only tails) must be attached
    to a grid node through ``crest_attach``.
    """

    rows: int
    cols: int
    spine_extensions: tuple[int, int]
    crest_order: tuple[int, ...] = ()
    crest_attach: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DsRepError("grid dimensions must be positive")
        if self.rows % 2 == 0:
            raise DsRepError("grid must have an odd number of rows")

    @property
    def spine_row(self):
        return (self.rows - 1) // 2

    @property
    def n_grid(self):
        return self.rows * self.cols

    @property
    def n_points(self):
        return self.n_grid + len(self.crest_attach)

    @property
    def index_map(self):
        return np.arange(self.n_grid).reshape(self.rows, self.cols)

    def index(self, r, c):
        return r * self.cols + c

    def position(self, idx):
        """``(row, col)`` of a grid node, ``None`` for crest-only points."""
        if idx >= self.n_grid:
            return None
        return divmod(int(idx), self.cols)

    @property
    def root(self):
        return self.index(self.spine_row, (self.cols - 1) // 2)


@dataclass(frozen=True)
class FrameHierarchy:
    """Spanning tree over skeletal points; ``parent[root] == root``."""

    parent: tuple[int, ...]
    roles: tuple[NodeRole, ...]

    def __post_init__(self):
        validate_tree(self.parent)
        if len(self.roles) != len(self.parent):
            raise DsRepError("hierarchy roles and parents differ in length")

    @property
    def root(self):
        return next(i for i, p in enumerate(self.parent) if i == p)

    @property
    def children(self):
        kids = [[] for _ in self.parent]
        for i, p in enumerate(self.parent):
            if i != p:
                kids[p].append(i)
        return kids

    def order(self):
        """Breadth-first node order starting at the root."""
        kids = self.children
        out = [self.root]
        k = 0
        while k < len(out):
            out.extend(kids[out[k]])
            k += 1
        return out


def validate_tree(parent):
    n = len(parent)
    roots = [i for i, p in enumerate(parent) if i == p]
    if len(roots) != 1 or any(not 0 <= p < n for p in parent):
        raise DsRepError("hierarchy not a tree")
    for i in range(n):
        seen, j = 0, i
        while parent[j] != j:
            j = parent[j]
            seen += 1
            if seen > n:
                raise DsRepError("hierarchy not a tree")


@dataclass(frozen=True, eq=False)
class GpDsRep:
    """Skeletal points plus spokes (tail index, kind, unit direction, length) in world coordinates."""

    points: np.ndarray
    spoke_tails: np.ndarray
    spoke_kinds: tuple[SpokeKind, ...]
    spoke_dirs: np.ndarray
    spoke_lengths: np.ndarray
    grid: GridLayout

    @property
    def n_p(self):
        return len(self.points)

    @property
    def n_s(self):
        return len(self.spoke_tails)

    def tips(self):
        return self.points[self.spoke_tails] + self.spoke_lengths[:, None] * self.spoke_dirs

    def transformed(self, R, t=(0.0, 0.0, 0.0), scale=1.0):
        """Apply ``x -> scale * R x + t``."""
        R = np.asarray(R, float)
        return replace(self, points=scale * self.points @ R.T + np.asarray(t, float),
                       spoke_dirs=self.spoke_dirs @ R.T,
                       spoke_lengths=scale * self.spoke_lengths)

    def spokes_of(self, kind):
        return np.array([i for i, k in enumerate(self.spoke_kinds) if k == kind], dtype=int)


@dataclass(frozen=True, eq=False)
class LpDsRep:
    """Locally parameterized ds-rep.

    ``frames[j]`` holds node ``j``'s frame (columns n, b, b_perp) in its
    parent's chart, ``conn_dirs[j]``/``conn_lengths[j]`` the connection from
    the parent. Spoke directions live in the frame of their tail node. The
    root carries the reference frame and a zero-length connection whose
    direction is the placeholder ``e1``. ``lp_size`` is the physical LP-size
    (kept when ``scaled`` so units can be restored).
    """

    grid: GridLayout
    hierarchy: FrameHierarchy
    spoke_tails: np.ndarray
    spoke_kinds: tuple[SpokeKind, ...]
    spoke_dirs: np.ndarray
    spoke_lengths: np.ndarray
    frames: np.ndarray
    conn_dirs: np.ndarray
    conn_lengths: np.ndarray
    scaled: bool = False
    lp_size: float = field(default=float("nan"))
    meta: dict = field(default_factory=dict)

    @property
    def n_p(self):
        return len(self.frames)

    @property
    def n_s(self):
        return len(self.spoke_tails)

    def same_structure(self, other):
        return (self.grid == other.grid and self.hierarchy == other.hierarchy
                and np.array_equal(self.spoke_tails, other.spoke_tails)
                and self.spoke_kinds == other.spoke_kinds)


# --------------------------------------------------------------------------
# sizes


def pre_shape(points):
    """Centered, unit Frobenius norm configuration (accepts a GpDsRep or an array)."""
    P = np.asarray(points.points if isinstance(points, GpDsRep) else points, dtype=float)
    C = P - P.mean(axis=0)
    nrm = np.linalg.norm(C)
    if P.shape[0] < 2 or nrm < 1e-300:
        raise DsRepError("degenerate configuration")
    return C / nrm


def centroid_size(X):
    X = np.asarray(X, dtype=float)
    return float(np.linalg.norm(X - X.mean(axis=0)))


def gp_size(gp, of="tips"):
    """Centroid size of spoke tips (default) or of skeletal points (``of="tails"``)."""
    if of == "tips":
        return centroid_size(gp.tips())
    if of == "tails":
        return centroid_size(gp.points)
    raise ValueError(f"unknown GP-size variant {of!r}")


def lp_size(lp):
    """Sum of all spoke and connection lengths."""
    return float(np.sum(lp.spoke_lengths) + np.sum(lp.conn_lengths))


def scale_lp(lp):
    ell = lp_size(lp)
    physical = lp.lp_size if lp.scaled else ell
    return replace(lp, spoke_lengths=lp.spoke_lengths / ell, conn_lengths=lp.conn_lengths / ell,
                   scaled=True, lp_size=float(physical))


# --------------------------------------------------------------------------
# validation


def _unit_rows(arr, what):
    arr = np.array(arr, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or not np.all(np.isfinite(arr)):
        raise DsRepError(f"{what}: expected finite 3-vectors")
    nrm = np.linalg.norm(arr, axis=1)
    dev = np.abs(nrm - 1.0)
    if np.any(dev > UNIT_TOL):
        raise DsRepError(f"{what}: non-unit direction (|norm - 1| = {dev.max():.3g})")
    fix = dev > RENORM_TOL
    if np.any(fix):
        warnings.warn(f"{what}: renormalized {int(fix.sum())} direction(s)", stacklevel=3)
        arr[fix] /= nrm[fix, None]
    return arr


def _check_spokes(tails, kinds, lengths, n_points):
    if np.any((tails < 0) | (tails >= n_points)):
        raise DsRepError("spoke tail index out of range")
    if np.any(~(lengths > 0)):
        raise DsRepError("non-positive spoke length")
    ups = {int(t) for t, k in zip(tails, kinds) if k == SpokeKind.UP}
    downs = {int(t) for t, k in zip(tails, kinds) if k == SpokeKind.DOWN}
    if ups != downs:
        raise DsRepError("every up spoke needs a down spoke at the same tail")


def validate_gp(gp):
    if gp.points.shape != (gp.grid.n_points, 3):
        raise DsRepError(f"expected {gp.grid.n_points} skeletal points, got {len(gp.points)}")
    _check_spokes(gp.spoke_tails, gp.spoke_kinds, gp.spoke_lengths, gp.n_p)
    _check_grid_refs(gp.grid, gp.n_p)


def _check_grid_refs(grid, n_points):
    refs = list(grid.spine_extensions) + list(grid.crest_order)
    refs += [i for pair in grid.crest_attach for i in pair]
    if any(not 0 <= int(i) < n_points for i in refs):
        raise DsRepError("grid refers to a missing skeletal point")
    for extra, node in grid.crest_attach:
        if extra < grid.n_grid or node >= grid.n_grid:
            raise DsRepError("crest_attach must map a crest-only point to a grid node")


def validate_lp(lp):
    n = lp.grid.n_points
    if lp.frames.shape != (n, 3, 3) or lp.conn_dirs.shape != (n, 3) or len(lp.conn_lengths) != n:
        raise DsRepError("frame/connection arrays do not match the grid")
    if len(lp.hierarchy.parent) != n:
        raise DsRepError("hierarchy size does not match the grid")
    _check_spokes(lp.spoke_tails, lp.spoke_kinds, lp.spoke_lengths, n)
    _check_grid_refs(lp.grid, n)
    root = lp.hierarchy.root
    if lp.conn_lengths[root] != 0.0:
        raise DsRepError("root connection must have zero length")
    others = np.delete(lp.conn_lengths, root)
    if np.any(~(others > 0)):
        raise DsRepError("non-positive connection length")
    F = lp.frames
    gram = np.einsum("nki,nkj->nij", F, F)
    if not np.allclose(gram, np.eye(3), atol=1e-9):
        raise DsRepError("frame vectors are not orthonormal")
    if lp.scaled and abs(lp_size(lp) - 1.0) > 1e-12:
        raise DsRepError(f"scaled LP-ds-rep has LP-size {lp_size(lp)!r}, expected 1")
    if not lp.lp_size > 0:
        raise DsRepError("lp_size must be positive")


# --------------------------------------------------------------------------
# dsrep-json


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise DsRepError("non-finite number cannot be serialized")
        s = format(float(x), ".17g")
        if "." not in s and "e" not in s and "n" not in s:
            s += ".0"
        return s
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _emit(obj, indent=0):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {_emit(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict)) for v in obj):
            return "[" + ", ".join(_fmt(v) for v in obj) + "]"
        if all(isinstance(v, (list, tuple)) and all(not isinstance(w, (list, tuple, dict)) for w in v)
               for v in obj) and len(obj) <= 3:
            return "[" + ", ".join(_emit(v) for v in obj) + "]"
        items = [pad + "  " + _emit(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _fmt(obj)


def dumps(doc):
    return _emit(doc) + "\n"


def _grid_doc(grid):
    doc = {"rows": grid.rows, "cols": grid.cols,
           "spine_extensions": list(grid.spine_extensions),
           "crest_order": list(grid.crest_order)}
    if grid.crest_attach:
        doc["crest_attach"] = [list(p) for p in grid.crest_attach]
    return doc


def _spoke_docs(tails, kinds, dirs, lengths):
    return [{"tail": int(t), "kind": k.value, "dir": [float(v) for v in d], "len": float(r)}
            for t, k, d, r in zip(tails, kinds, dirs, lengths)]


def gp_to_doc(gp):
    return {"format_version": FORMAT_VERSION, "kind": "gp", "grid": _grid_doc(gp.grid),
            "skeletal_points": [[float(v) for v in p] for p in gp.points],
            "spokes": _spoke_docs(gp.spoke_tails, gp.spoke_kinds, gp.spoke_dirs, gp.spoke_lengths)}


def lp_to_doc(lp):
    doc = {"format_version": FORMAT_VERSION, "kind": "lp", "grid": _grid_doc(lp.grid),
           "hierarchy": {"parent": list(lp.hierarchy.parent),
                         "roles": [r.value for r in lp.hierarchy.roles]},
           "frames": [[[float(v) for v in F[:, k]] for k in range(3)] for F in lp.frames],
           "connections": [{"dir": [float(v) for v in d], "len": float(r)}
                           for d, r in zip(lp.conn_dirs, lp.conn_lengths)],
           "spokes": _spoke_docs(lp.spoke_tails, lp.spoke_kinds, lp.spoke_dirs, lp.spoke_lengths),
           "scaled": bool(lp.scaled), "lp_size": float(lp.lp_size)}
    if lp.meta:
        doc["meta"] = lp.meta
    return doc


def _require(doc, key):
    if key not in doc:
        raise DsRepError(f"missing field {key!r}")
    return doc[key]


def _grid_from_doc(doc):
    g = _require(doc, "grid")
    try:
        ext = tuple(int(i) for i in _require(g, "spine_extensions"))
        if len(ext) != 2:
            raise DsRepError("spine_extensions must name two nodes")
        return GridLayout(int(_require(g, "rows")), int(_require(g, "cols")), ext,
                          tuple(int(i) for i in g.get("crest_order", [])),
                          tuple((int(a), int(b)) for a, b in g.get("crest_attach", [])))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DsRepError):
            raise
        raise DsRepError(f"malformed grid: {exc}") from exc


def _spokes_from_doc(doc):
    spokes = _require(doc, "spokes")
    try:
        tails = np.array([int(s["tail"]) for s in spokes], dtype=int)
        kinds = tuple(SpokeKind(s["kind"]) for s in spokes)
        lengths = np.array([float(s["len"]) for s in spokes])
        dirs = _unit_rows([s["dir"] for s in spokes], "spoke")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DsRepError):
            raise
        raise DsRepError(f"malformed spoke: {exc}") from exc
    return tails, kinds, dirs, lengths


def gp_from_doc(doc):
    if doc.get("kind") != "gp":
        raise DsRepError("not a GP-ds-rep document")
    grid = _grid_from_doc(doc)
    pts = np.array(_require(doc, "skeletal_points"), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DsRepError("skeletal_points must be 3-vectors")
    tails, kinds, dirs, lengths = _spokes_from_doc(doc)
    gp = GpDsRep(pts, tails, kinds, dirs, lengths, grid)
    validate_gp(gp)
    return gp


def lp_from_doc(doc):
    if doc.get("kind") != "lp":
        raise DsRepError("not an LP-ds-rep document")
    grid = _grid_from_doc(doc)
    h = _require(doc, "hierarchy")
    try:
        hier = FrameHierarchy(tuple(int(p) for p in _require(h, "parent")),
                              tuple(NodeRole(r) for r in _require(h, "roles")))
        frames_raw = np.array(_require(doc, "frames"), dtype=float)
        if frames_raw.ndim != 3 or frames_raw.shape[1:] != (3, 3):
            raise DsRepError("frames must be triples of 3-vectors")
        frames = np.swapaxes(_unit_rows(frames_raw.reshape(-1, 3), "frame").reshape(-1, 3, 3), 1, 2)
        conns = _require(doc, "connections")
        conn_len = np.array([float(c["len"]) for c in conns])
        conn_dirs = _unit_rows([c["dir"] for c in conns], "connection")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DsRepError):
            raise
        raise DsRepError(f"malformed LP document: {exc}") from exc
    tails, kinds, dirs, lengths = _spokes_from_doc(doc)
    lp = LpDsRep(grid, hier, tails, kinds, dirs, lengths, frames, conn_dirs, conn_len,
                 scaled=bool(doc.get("scaled", False)), lp_size=float(_require(doc, "lp_size")),
                 meta=dict(doc.get("meta", {})))
    validate_lp(lp)
    return lp


def _read(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DsRepError(f"{path}: invalid JSON ({exc})") from exc


def load_gp(path):
    return gp_from_doc(_read(path))


def load_lp(path):
    return lp_from_doc(_read(path))


def load_any(path):
    doc = _read(path)
    return gp_from_doc(doc) if doc.get("kind") == "gp" else lp_from_doc(doc)


def save_gp(gp, path):
    Path(path).write_text(dumps(gp_to_doc(gp)))


def save_lp(lp, path):
    Path(path).write_text(dumps(lp_to_doc(lp)))
