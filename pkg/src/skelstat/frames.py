"""Hierarchical local frames on a skeletal grid.

The root sits at the middle of the spine. Spinal nodes chain outward along
the middle row, and every column is a vein chained outward from its spinal
node. Each node gets a frame ``(n, b, b_perp)``: ``n`` is the discrete sheet
normal and ``b`` is built from the tangent-plane projections of the parent
and child positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsrep import DsRepError, FrameHierarchy, GpDsRep, GridLayout, NodeRole, SpokeKind
from .sphere import GeometryError

FOLD_BACK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FittedFrames:
    frames: np.ndarray          # (n_p, 3, 3), columns n, b, b_perp, world coordinates
    hierarchy: FrameHierarchy
    conn_dirs: np.ndarray       # (n_p, 3), root row is e1
    conn_lengths: np.ndarray    # (n_p,), root entry is 0

    @property
    def normals(self):
        return self.frames[:, :, 0]


def build_hierarchy(grid: GridLayout) -> FrameHierarchy:
    if grid.rows % 2 == 0:
        raise DsRepError("grid must have an odd number of rows")
    if grid.rows < 3 or grid.cols < 3:
        raise DsRepError("grid too small")
    m, c0 = grid.spine_row, (grid.cols - 1) // 2
    parent = np.arange(grid.n_points)
    for c in range(grid.cols):
        if c != c0:
            parent[grid.index(m, c)] = grid.index(m, c + 1 if c < c0 else c - 1)
        for r in range(grid.rows):
            if r != m:
                parent[grid.index(r, c)] = grid.index(r + 1 if r < m else r - 1, c)
    for extra, node in grid.crest_attach:
        parent[extra] = node

    roles = [NodeRole.VEIN] * grid.n_points
    for c in range(grid.cols):
        roles[grid.index(m, c)] = NodeRole.SPINAL
    for j in grid.crest_order:
        if roles[j] != NodeRole.SPINAL:
            roles[j] = NodeRole.CREST_TAIL
    roles[grid.root] = NodeRole.SCENTROID
    return FrameHierarchy(tuple(int(p) for p in parent), tuple(roles))


def crest_child_spoke(spoke_tails, spoke_kinds):
    """Map each crest-spoke tail node to its crest spoke index."""
    return {int(t): i for i, (t, k) in enumerate(zip(spoke_tails, spoke_kinds))
            if k == SpokeKind.CREST}


def estimate_normals(gp: GpDsRep) -> np.ndarray:
    grid = gp.grid
    if grid.rows < 2 or grid.cols < 2:
        raise DsRepError("grid too small")
    Q = gp.points[: grid.n_grid].reshape(grid.rows, grid.cols, 3)
    t_col = np.gradient(Q, axis=1)
    t_row = np.gradient(Q, axis=0)
    n = np.cross(t_col, t_row).reshape(-1, 3)
    scale = np.linalg.norm(t_col, axis=-1).ravel() * np.linalg.norm(t_row, axis=-1).ravel()
    nrm = np.linalg.norm(n, axis=1)
    bad = np.flatnonzero(~(nrm > 1e-12 * np.maximum(scale, 1e-300)))
    if bad.size:
        raise GeometryError(f"degenerate neighborhood at skeletal point {int(bad[0])}")
    n = n / nrm[:, None]

    normals = np.empty((gp.n_p, 3))
    normals[: grid.n_grid] = n
    for extra, node in grid.crest_attach:
        normals[extra] = n[node]

    up = gp.spokes_of(SpokeKind.UP)
    if up.size:
        tails = gp.spoke_tails[up]
        dots = np.einsum("ij,ij->i", normals[tails], gp.spoke_dirs[up])
        if dots.sum() < 0:
            normals = -normals
            dots = -dots
        normals[tails[dots < -1e-6]] *= -1
    return normals


def _unit(v):
    return v / np.linalg.norm(v)


def _projected_dir(p, n, q):
    """Unit direction from ``p`` to ``q`` after projecting ``q`` onto the tangent plane at ``p``."""
    d = q - p
    d = d - (d @ n) * n
    nrm = np.linalg.norm(d)
    if nrm < 1e-14:
        raise GeometryError("neighbor projects onto the skeletal point")
    return d / nrm


def _continuation(grid: GridLayout, j, crest_tips):
    """Position-source for the child used by the b rule at node ``j`` (or ``None``)."""
    pos = grid.position(j)
    if pos is None:
        return crest_tips.get(j)
    r, c = pos
    m, c0 = grid.spine_row, (grid.cols - 1) // 2
    if r == m:
        if c == 0:
            return ("node", grid.spine_extensions[0])
        if c == grid.cols - 1:
            return ("node", grid.spine_extensions[1])
        return ("node", grid.index(m, c - 1 if c < c0 else c + 1))
    if 0 < r < grid.rows - 1:
        return ("node", grid.index(r - 1 if r < m else r + 1, c))
    return crest_tips.get(j)


def fit_frames(gp: GpDsRep, hierarchy: FrameHierarchy | None = None,
               normals: np.ndarray | None = None) -> FittedFrames:
    grid = gp.grid
    hier = hierarchy or build_hierarchy(grid)
    if normals is None:
        normals = estimate_normals(gp)
    P = gp.points
    tips = gp.tips()
    crest_tips = {j: ("tip", i) for j, i in crest_child_spoke(gp.spoke_tails, gp.spoke_kinds).items()}

    def position(src):
        kind, i = src
        return P[i] if kind == "node" else tips[i]

    root = hier.root
    frames = np.empty((gp.n_p, 3, 3))
    for j in range(gp.n_p):
        p, n = P[j], normals[j]
        if j == root:
            m, c0 = grid.spine_row, (grid.cols - 1) // 2
            u1 = _projected_dir(p, n, P[grid.index(m, c0 - 1)])
            u2 = _projected_dir(p, n, P[grid.index(m, c0 + 1)])
            s = u2 - u1
        else:
            s = -_projected_dir(p, n, P[hier.parent[j]])
            src = _continuation(grid, j, crest_tips)
            if src is not None:
                s = s + _projected_dir(p, n, position(src))
        nrm = np.linalg.norm(s)
        if nrm < FOLD_BACK_TOL:
            raise GeometryError(f"b undefined at node {j}")
        b = s / nrm
        b = _unit(b - (b @ n) * n)
        frames[j] = np.column_stack([n, b, np.cross(n, b)])

    parent = np.asarray(hier.parent)
    delta = P - P[parent]
    lengths = np.linalg.norm(delta, axis=1)
    dirs = np.tile(np.array([1.0, 0.0, 0.0]), (gp.n_p, 1))
    nz = np.arange(gp.n_p) != root
    if np.any(lengths[nz] <= 0):
        bad = int(np.flatnonzero(nz & (lengths <= 0))[0])
        raise GeometryError(f"skeletal point {bad} coincides with its parent")
    dirs[nz] = delta[nz] / lengths[nz, None]
    return FittedFrames(frames, hier, dirs, lengths)
