"""Population statistics: LP distance, per-GOP means, frame means, and GPA."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .dsrep import DsRepError, LpDsRep, lp_size
from .sphere import (IDENTITY_FRAME, ConvergenceError, GeometryError, _frechet_means,
                     euclideanize_pns_batch, exp_map, geodesic_dist, log_map, normalize,
                     rotate_x_to_y, rotations_about)

SPREAD_WARN = np.pi / 4


@dataclass(frozen=True, eq=False)
class LpPopulation:
    members: tuple[LpDsRep, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise DsRepError("empty population")
        first = self.members[0]
        for k, lp in enumerate(self.members[1:], start=1):
            if not first.same_structure(lp):
                raise DsRepError(f"member {k} is structurally different from member 0")
            if lp.scaled != first.scaled:
                raise DsRepError("population mixes scaled and unscaled members")

    @property
    def scaled(self):
        return self.members[0].scaled

    def __len__(self):
        return len(self.members)

    def stack(self, attr):
        return np.stack([getattr(lp, attr) for lp in self.members])


# --------------------------------------------------------------------------
# distance


def lp_distance(a: LpDsRep, b: LpDsRep, commensurate: bool = False) -> float:
    """Product-space distance between two LP-ds-reps.

    Directions (spokes, frame axes, connections) contribute squared geodesic
    distances, lengths squared differences. ``commensurate`` multiplies the
    length differences by pi.
    """
    if not a.same_structure(b):
        raise DsRepError("LP-ds-reps are structurally different")
    w = np.pi ** 2 if commensurate else 1.0
    total = np.sum(geodesic_dist(a.spoke_dirs, b.spoke_dirs) ** 2)
    total += np.sum(geodesic_dist(np.swapaxes(a.frames, 1, 2), np.swapaxes(b.frames, 1, 2)) ** 2)
    total += np.sum(geodesic_dist(a.conn_dirs, b.conn_dirs) ** 2)
    total += w * np.sum((a.spoke_lengths - b.spoke_lengths) ** 2)
    total += w * np.sum((a.conn_lengths - b.conn_lengths) ** 2)
    return float(np.sqrt(total))


# --------------------------------------------------------------------------
# direction means


def direction_means(X, method="pns"):
    """Mean direction of each sample in ``X`` (``(G, N, 3)``).

    ``method`` is ``"pns"`` (base point of the fitted circle) or
    ``"frechet"``. Samples with fewer than three distinct points always use
    the Frechet mean.
    """
    X = normalize(np.asarray(X, dtype=float))
    G = len(X)
    if method not in ("pns", "frechet"):
        raise ValueError(f"unknown mean method {method!r}")
    mu, ok = _frechet_means(X)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise ConvergenceError(f"Frechet mean did not converge for sample {bad}", last=mu[bad])
    if method == "frechet" or X.shape[1] < 3:
        return mu
    distinct = np.array([len(np.unique(np.round(X[g], 12), axis=0)) >= 3 for g in range(G)])
    if np.any(distinct):
        _, base = euclideanize_pns_batch(X[distinct])
        mu[distinct] = base
    return mu


def _spread_warning(X, mu, what):
    spread = geodesic_dist(mu[:, None, :], X).max(axis=1)
    if np.any(spread > SPREAD_WARN):
        warnings.warn(f"{int(np.sum(spread > SPREAD_WARN))} {what} sample(s) spread beyond pi/4; "
                      "their mean may not be unique", stacklevel=3)


# --------------------------------------------------------------------------
# frame means


def initial_frame(n_mean, b_mean, strategy="B", bperp_mean=None):
    """Starting frame for the frame-alignment iteration.

    Strategy ``"B"`` splits the geodesic from ``n_mean`` to ``b_mean`` at its
    midpoint and walks pi/4 either way, so the result is exactly orthogonal
    and equally far from both targets. Strategy ``"A"`` rotates the
    reference frame so that the sum of its axes points along the sum of the
    three mean axes.
    """
    n_mean, b_mean = normalize(np.asarray(n_mean, float)), normalize(np.asarray(b_mean, float))
    if strategy == "A":
        if bperp_mean is None:
            bperp_mean = np.cross(n_mean, b_mean)
        target = np.asarray(n_mean) + b_mean + normalize(np.asarray(bperp_mean, float))
        if np.linalg.norm(target) < 1e-12:
            raise GeometryError("mean axes cancel; strategy A undefined")
        return rotate_x_to_y(np.ones(3) / np.sqrt(3.0), normalize(target)) @ IDENTITY_FRAME
    if strategy != "B":
        raise ValueError(f"unknown initial-frame strategy {strategy!r}")
    return _initial_frames_b(n_mean[None], b_mean[None])[0]


def _initial_frames_b(n_mean, b_mean):
    d = geodesic_dist(n_mean, b_mean)
    if np.any(d < 1e-12) or np.any(np.pi - d < 1e-12):
        raise GeometryError("mean n and b are identical or antipodal")
    v = log_map(n_mean, b_mean)
    mid = exp_map(n_mean, 0.5 * v)
    to_b = log_map(mid, b_mean)
    to_b /= np.linalg.norm(to_b, axis=1, keepdims=True)
    n = exp_map(mid, -np.pi / 4 * to_b)
    b = exp_map(mid, np.pi / 4 * to_b)
    b = normalize(b - np.einsum("gi,gi->g", b, n)[:, None] * n)
    return np.stack([n, b, np.cross(n, b)], axis=2)


@dataclass(frozen=True, eq=False)
class FrameFit:
    frames: np.ndarray        # (G, 3, 3)
    objective: np.ndarray     # (G,) final objective
    history: list             # per-iteration objective arrays, (G,) each; inf once a problem stopped
    iterations: np.ndarray    # (G,)


def _objective(F, targets):
    return np.sqrt(np.sum(geodesic_dist(np.swapaxes(F, 1, 2), np.swapaxes(targets, 1, 2)) ** 2, axis=1))


def align_frames(F0, targets, step=0.01, tol=1e-8, max_iter=100_000, keep_history=False):
    """Frame alignment toward per-axis targets, batched over a leading axis.

    Every axis ``i`` pulls the frame toward ``targets[..., i]`` along
    ``Log(axis_i, target_i)``; each iteration applies the three pulls as one
    rotation about ``sum_i axis_i x Log(axis_i, target_i)`` by ``step`` times
    its length. That is a gradient step on the summed squared axis
    distances, so the objective never increases for small steps and the
    rotations keep frames orthonormal. A problem stops once its objective
    changes by less than ``tol`` or drops below ``tol``.
    """
    F = np.array(F0, dtype=float)
    T = np.asarray(targets, dtype=float)
    G = len(F)
    obj = _objective(F, T)
    iters = np.zeros(G, dtype=int)
    active = np.flatnonzero(obj >= tol)
    history = [obj.copy()] if keep_history else []
    for _ in range(max_iter):
        if active.size == 0:
            break
        Fa = F[active]
        axes = np.swapaxes(Fa, 1, 2)                       # (g, 3 axes, 3)
        pull = log_map(axes, np.swapaxes(T[active], 1, 2))
        omega = np.cross(axes, pull).sum(axis=1)
        size = np.linalg.norm(omega, axis=1)
        direction = omega / np.where(size > 0, size, 1.0)[:, None]
        Fa = rotations_about(direction, step * size) @ Fa
        F[active] = Fa
        new = _objective(Fa, T[active])
        iters[active] += 1
        done = (np.abs(obj[active] - new) < tol) | (new < tol)
        obj[active] = new
        if keep_history:
            h = np.full(G, np.nan)
            h[active] = new
            history.append(h)
        active = active[~done]
    if active.size:
        j = int(active[0])
        raise ConvergenceError(f"frame alignment did not converge in {max_iter} iterations",
                               last=F[j], objective=float(obj[j]))
    return FrameFit(F, obj, history, iters)


def component_means(frames, method="pns"):
    """Per-axis mean directions of frame samples ``(G, N, 3, 3)`` -> ``(G, 3, 3)`` (columns)."""
    frames = np.asarray(frames, dtype=float)
    G, N = frames.shape[:2]
    axes = np.swapaxes(frames, 2, 3).transpose(0, 2, 1, 3).reshape(G * 3, N, 3)
    mu = direction_means(axes, method)
    return mu.reshape(G, 3, 3).swapaxes(1, 2)


def frame_means(frames, method="pns", strategy="B", step=0.01, tol=1e-8, max_iter=100_000,
                keep_history=False):
    """Mean frame of each sample in ``frames`` (``(G, N, 3, 3)``)."""
    targets = component_means(frames, method)
    if strategy == "B":
        F0 = _initial_frames_b(targets[:, :, 0], targets[:, :, 1])
    else:
        F0 = np.stack([initial_frame(t[:, 0], t[:, 1], strategy, t[:, 2]) for t in targets])
    return align_frames(F0, targets, step, tol, max_iter, keep_history)


def frame_mean(frames, method="pns", strategy="B", **kw):
    """Mean of a list of frames; returns the single ``(3, 3)`` frame."""
    fit = frame_means(np.asarray(frames, dtype=float)[None], method, strategy, **kw)
    return fit.frames[0]


# --------------------------------------------------------------------------
# mean LP-ds-rep


def mean_lp(pop, method="pns", lengths="geometric", strategy="B", **frame_kw) -> LpDsRep:
    """Per-GOP mean of a population of LP-ds-reps.

    Lengths use the geometric mean by default (``lengths="arithmetic"`` for
    the plain mean). A scaled population yields a scaled mean; after
    geometric averaging it is rescaled to LP-size 1 and
    ``meta["renormalized"]`` records the factor.
    """
    if not isinstance(pop, LpPopulation):
        pop = LpPopulation(tuple(pop))
    first = pop.members[0]
    root = first.hierarchy.root
    others = np.flatnonzero(np.arange(first.n_p) != root)

    spokes = pop.stack("spoke_dirs").swapaxes(0, 1)             # (n_s, N, 3)
    conns = pop.stack("conn_dirs")[:, others].swapaxes(0, 1)    # (n_p-1, N, 3)
    frames = pop.stack("frames")[:, others].swapaxes(0, 1)      # (n_p-1, N, 3, 3)

    dirs = np.concatenate([spokes, conns])
    dir_mu = direction_means(dirs, method)
    _spread_warning(dirs, dir_mu, "direction")
    spoke_mu, conn_mu = dir_mu[: first.n_s], dir_mu[first.n_s:]
    fit = frame_means(frames, method, strategy, **frame_kw)

    if lengths == "geometric":
        avg = lambda a: np.exp(np.mean(np.log(a), axis=0))
    elif lengths == "arithmetic":
        avg = lambda a: np.mean(a, axis=0)
    else:
        raise ValueError(f"unknown length mean {lengths!r}")
    spoke_len = avg(pop.stack("spoke_lengths"))
    conn_len = np.zeros(first.n_p)
    conn_len[others] = avg(pop.stack("conn_lengths")[:, others])

    out_frames = first.frames.copy()
    out_frames[others] = fit.frames
    out_frames[root] = IDENTITY_FRAME
    conn_dirs = first.conn_dirs.copy()
    conn_dirs[others] = conn_mu
    mean = replace(first, spoke_dirs=spoke_mu, spoke_lengths=spoke_len, frames=out_frames,
                   conn_dirs=conn_dirs, conn_lengths=conn_len, meta={})
    sizes = np.array([lp.lp_size for lp in pop.members])
    if pop.scaled:
        physical = float(avg(sizes))
        if lengths == "geometric":
            ell = lp_size(mean)
            mean = replace(mean, spoke_lengths=spoke_len / ell, conn_lengths=conn_len / ell,
                           meta={"renormalized": True, "renormalization_factor": ell})
        return replace(mean, lp_size=physical)
    return replace(mean, lp_size=lp_size(mean))


# --------------------------------------------------------------------------
# generalized Procrustes analysis


@dataclass(frozen=True, eq=False)
class GpaResult:
    aligned: np.ndarray       # (M, n, 3)
    rotations: np.ndarray     # (M, 3, 3): aligned = scale * (X - centroid) @ rotation
    scales: np.ndarray        # (M,)
    centroids: np.ndarray     # (M, 3)
    mean: np.ndarray
    objective: list           # sum of squared distances to the mean, per iteration
    iterations: int


def procrustes_rotations(X, target):
    """Proper rotations ``R`` minimizing ``||X_k R - target||`` for each ``X_k``."""
    U, _, Vt = np.linalg.svd(np.swapaxes(X, 1, 2) @ target)
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    U[:, :, 2] *= d[:, None]
    return U @ Vt


def gpa_align(configs, with_scaling=True, tol=1e-10, max_iter=100) -> GpaResult:
    X = np.asarray(configs, dtype=float)
    if X.ndim != 3 or X.shape[0] < 2:
        raise ValueError("GPA needs at least two configurations")
    centroids = X.mean(axis=1)
    C = X - centroids[:, None, :]
    sizes = np.linalg.norm(C, axis=(1, 2))
    if np.any(sizes < 1e-300):
        raise DsRepError("degenerate configuration")
    scales = 1.0 / sizes if with_scaling else np.ones(len(X))
    C = C * scales[:, None, None]

    mean = C[0]
    history = []
    R = np.tile(np.eye(3), (len(X), 1, 1))
    it = 0
    for it in range(1, max_iter + 1):
        R = procrustes_rotations(C, mean)
        Y = C @ R
        new = Y.mean(axis=0)
        if with_scaling:
            new /= np.linalg.norm(new)
        history.append(float(np.sum((Y - new) ** 2)))
        change = np.linalg.norm(new - mean)
        mean = new
        if change < tol:
            break
    Y = C @ R
    return GpaResult(Y, R, scales, centroids, mean, history, it)
