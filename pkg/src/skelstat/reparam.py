"""Conversion between global (GP) and local hierarchical (LP) parameterizations."""
from __future__ import annotations

import numpy as np

from .dsrep import GpDsRep, LpDsRep, DsRepError, lp_size
from .frames import FittedFrames, fit_frames
from .sphere import IDENTITY_FRAME, frame_alignment


def _alignments(frames):
    rots = np.empty_like(frames)
    left = np.zeros(len(frames), dtype=bool)
    for j, F in enumerate(frames):
        rots[j], left[j] = frame_alignment(F)
    return rots, left


def gp_to_lp(gp: GpDsRep, fitted: FittedFrames | None = None) -> LpDsRep:
    """Express every frame, connection and spoke in the chart of the frame it hangs from.

    A node's frame and incoming connection are written in its parent's chart,
    a spoke in the chart of its tail node. Lengths are copied; the result is
    unscaled.
    """
    ff = fitted or fit_frames(gp)
    hier = ff.hierarchy
    parent = np.asarray(hier.parent)
    root = hier.root
    rots, left = _alignments(ff.frames)

    local = rots[parent] @ ff.frames
    flip = left[parent]
    local[flip, :, 2] *= -1.0
    local[root] = IDENTITY_FRAME

    conn_dirs = np.einsum("nij,nj->ni", rots[parent], ff.conn_dirs)
    conn_dirs[root] = (1.0, 0.0, 0.0)
    conn_lengths = ff.conn_lengths.copy()
    conn_lengths[root] = 0.0

    spoke_dirs = np.einsum("nij,nj->ni", rots[gp.spoke_tails], gp.spoke_dirs)
    ell = float(gp.spoke_lengths.sum() + conn_lengths.sum())
    return LpDsRep(gp.grid, hier, gp.spoke_tails.copy(), gp.spoke_kinds, spoke_dirs,
                   gp.spoke_lengths.copy(), local, conn_dirs, conn_lengths, scaled=False, lp_size=ell)


def lp_to_gp(lp: LpDsRep, root_pose=None, size: float | None = None) -> GpDsRep:
    """Rebuild world coordinates breadth-first from the root.

    The root frame is the reference frame at the origin, optionally moved by
    ``root_pose = (rotation, translation)``. A scaled LP needs ``size`` (the
    LP-size to restore).
    """
    factor = 1.0
    if lp.scaled:
        if size is None:
            raise DsRepError("scaled LP-ds-rep needs a target LP-size for reconstruction")
        factor = float(size)
    elif size is not None:
        factor = float(size) / lp_size(lp)

    R0, t0 = np.eye(3), np.zeros(3)
    if root_pose is not None:
        R0, t0 = np.asarray(root_pose[0], float), np.asarray(root_pose[1], float)

    hier = lp.hierarchy
    _, inv = _walk(lp, R0)
    P = np.empty((lp.n_p, 3))
    for j in hier.order():
        if j == hier.root:
            P[j] = t0
        else:
            p = hier.parent[j]
            P[j] = P[p] + factor * lp.conn_lengths[j] * (inv[p] @ lp.conn_dirs[j])

    dirs = np.einsum("nij,nj->ni", inv[lp.spoke_tails], lp.spoke_dirs)
    return GpDsRep(P, lp.spoke_tails.copy(), lp.spoke_kinds, dirs,
                   factor * lp.spoke_lengths, lp.grid)


def _walk(lp, R0):
    hier = lp.hierarchy
    G = np.empty((lp.n_p, 3, 3))
    inv = np.empty_like(G)     # [R2 R1]^-1 per node
    left = np.zeros(lp.n_p, dtype=bool)
    for j in hier.order():
        if j == hier.root:
            G[j] = R0 @ IDENTITY_FRAME
        else:
            p = hier.parent[j]
            F = lp.frames[j].copy()
            if left[p]:
                F[:, 2] *= -1.0
            G[j] = inv[p] @ F
        A, left[j] = frame_alignment(G[j])
        inv[j] = A.T
    return G, inv


def reconstructed_frames(lp: LpDsRep, root_pose=None) -> np.ndarray:
    """World frames produced by the same traversal as :func:`lp_to_gp`."""
    R0 = np.eye(3) if root_pose is None else np.asarray(root_pose[0], float)
    return _walk(lp, R0)[0]
