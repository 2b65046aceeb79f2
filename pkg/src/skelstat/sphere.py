"""Geometry on the unit sphere S^2 and on orthonormal frames.

Points on S^2 are plain ``(3,)`` float arrays, point sets are ``(N, 3)``.
A frame is a ``(3, 3)`` array whose *columns* are ``(n, b, b_perp)``.

Most routines have a batched private twin (leading axis ``G``) that the
population and inference code use to process hundreds of geometric object
properties at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])
NORTH = E3

#: Reference frame (e3, e1, e2) as columns.
IDENTITY_FRAME = np.column_stack([E3, E1, E2])


class GeometryError(ValueError):
    """Raised for undefined geometric operations (antipodes, cut locus, ...)."""


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations.

    ``last`` holds the final iterate and ``objective`` its objective value.
    """

    def __init__(self, msg, last=None, objective=None):
        super().__init__(msg)
        self.last = last
        self.objective = objective


def normalize(v, axis=-1):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def geodesic_dist(x, y):
    """Great-circle distance in ``[0, pi]``; broadcasts over leading axes."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    c = np.sum(x * y, axis=-1)
    s = np.linalg.norm(np.cross(x, y), axis=-1)
    return np.arctan2(s, c)


def rotate_x_to_y(x, y, tol=1e-12):
    """Rotation matrix moving unit ``x`` to unit ``y`` along the shortest geodesic.

    Uses the closed form ``I + sin(a)(y w^T - w y^T) + (cos(a) - 1)(y y^T + w w^T)``
    with ``w`` the unit component of ``x`` orthogonal to ``y``.
    Returns the identity for ``x == y`` and raises :class:`GeometryError`
    for antipodal input, where the geodesic is not unique.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = float(np.clip(y @ x, -1.0, 1.0))
    w = x - y * c
    nw = np.linalg.norm(w)
    if nw < tol:
        if c > 0:
            return np.eye(3)
        raise GeometryError("antipodal rotation undefined")
    w = w / nw
    # sine and cosine straight from the components; arccos(c) loses tiny angles
    r = np.hypot(nw, c)
    sin_a, cos_a = nw / r, c / r
    return (np.eye(3) + sin_a * (np.outer(y, w) - np.outer(w, y))
            + (cos_a - 1.0) * (np.outer(y, y) + np.outer(w, w)))


def axis_angle_matrix(axis, angle):
    """Right-handed rotation by ``angle`` about unit ``axis`` (Rodrigues)."""
    k = normalize(axis)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotations_about(axes, angles):
    """Stack of rotations about unit ``axes`` ``(M, 3)`` by ``angles`` ``(M,)``."""
    axes = np.asarray(axes, dtype=float)
    K = np.zeros((len(axes), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -axes[:, 2], axes[:, 1], -axes[:, 0]
    K -= np.swapaxes(K, 1, 2)
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * K + (1 - c) * K @ K


def rotations_x_to_y(x, y):
    """Batched minimal rotations taking unit rows ``x`` to unit rows ``y``.

    Antipodal pairs are not detected; callers use this for small moves only.
    """
    axis = np.cross(x, y)
    sn = np.linalg.norm(axis, axis=1)
    ang = np.arctan2(sn, np.einsum("ij,ij->i", x, y))
    safe = sn > 1e-300
    axis[safe] /= sn[safe, None]
    axis[~safe] = E1
    ang[~safe] = 0.0
    return rotations_about(axis, ang)


def tangent_basis(a):
    """Orthonormal ``(t1, t2)`` spanning the tangent plane at ``a`` with t1 x t2 = a.

    Works on ``(3,)`` or ``(P, 3)`` input.
    """
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a2 = np.atleast_2d(a)
    helper = np.where((np.abs(a2[:, 0]) < 0.9)[:, None], E1, E2)
    t1 = normalize(helper - np.sum(helper * a2, axis=1, keepdims=True) * a2)
    t2 = np.cross(a2, t1)
    if single:
        return t1[0], t2[0]
    return t1, t2


def log_map(p, x):
    """Riemannian log at ``p``; broadcasts ``p`` against ``x``."""
    p = np.asarray(p, float)
    x = np.asarray(x, float)
    c = np.clip(np.sum(p * x, axis=-1, keepdims=True), -1.0, 1.0)
    theta = np.arccos(c)
    s = np.sin(theta)
    small = s < 1e-12
    scale = np.where(small, 1.0, theta / np.where(small, 1.0, s))
    return scale * (x - c * p)


def exp_map(p, v):
    p = np.asarray(p, float)
    v = np.asarray(v, float)
    t = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(t < 1e-300, 1.0, t)
    out = np.cos(t) * p + np.sin(t) * v / safe
    return normalize(out)


def log_map_north(v):
    """Tangent coordinates of ``v`` at the north pole ``(0, 0, 1)``.

    ``theta / sin(theta)`` is taken as 1 at ``theta = 0``. Raises at the
    south pole (cut locus).
    """
    v = np.asarray(v, dtype=float)
    z = np.clip(v[..., 2], -1.0, 1.0)
    if np.any(1.0 + z < 1e-15):
        raise GeometryError("log map undefined at cut locus")
    theta = np.arccos(z)
    s = np.sin(theta)
    small = s < 1e-12
    scale = np.where(small, 1.0, theta / np.where(small, 1.0, s))
    return np.stack([v[..., 0] * scale, v[..., 1] * scale], axis=-1)


# --------------------------------------------------------------------------
# Frechet means


def _frechet_means(X, tol=1e-12, max_iter=1000):
    """Batched intrinsic means; ``X`` is ``(G, N, 3)``.

    Returns ``(means, converged)``.
    """
    X = np.asarray(X, dtype=float)
    m = np.sum(X, axis=1)
    nm = np.linalg.norm(m, axis=1)
    bad = nm < 1e-12
    m[bad] = X[bad, 0]
    mu = normalize(m)
    converged = np.zeros(len(X), dtype=bool)
    active = np.arange(len(X))
    for _ in range(max_iter):
        if active.size == 0:
            break
        step = log_map(mu[active, None, :], X[active]).mean(axis=1)
        mu[active] = exp_map(mu[active], step)
        done = np.linalg.norm(step, axis=1) < tol
        converged[active[done]] = True
        active = active[~done]
    return mu, converged


def frechet_mean_s2(points, tol=1e-12, max_iter=1000):
    """Minimizer of the summed squared geodesic distance (iterative tangent averaging)."""
    pts = normalize(np.atleast_2d(np.asarray(points, dtype=float)))
    if pts.shape[0] == 0:
        raise ValueError("empty point set")
    mu, ok = _frechet_means(pts[None], tol=tol, max_iter=max_iter)
    if not ok[0]:
        obj = float(np.sum(geodesic_dist(mu[0], pts) ** 2))
        raise ConvergenceError("Frechet mean did not converge", last=mu[0], objective=obj)
    return mu[0]


def circular_frechet_mean(angles, tol=1e-13, max_iter=1000):
    """Intrinsic mean on the circle of each row of ``angles`` (``(G, N)`` or ``(N,)``)."""
    a = np.asarray(angles, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    mu = np.arctan2(np.sin(a).mean(axis=1), np.cos(a).mean(axis=1))
    for _ in range(max_iter):
        step = wrap_angle(a - mu[:, None]).mean(axis=1)
        mu = wrap_angle(mu + step)
        if np.all(np.abs(step) < tol):
            break
    return mu[0] if single else mu


def wrap_angle(a):
    """Wrap to ``[-pi, pi)``."""
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


# --------------------------------------------------------------------------
# Circle fitting (principal nested spheres on S^2)


@dataclass(frozen=True)
class FittedCircle:
    axis: np.ndarray
    radius_angle: float
    is_great: bool
    mse_small: float = float("nan")
    mse_great: float = float("nan")


def _initial_axes(X):
    """Eight deterministic starting axes per point set; ``X`` is ``(G, N, 3)``."""
    C = np.einsum("gni,gnj->gij", X - X.mean(axis=1, keepdims=True),
                  X - X.mean(axis=1, keepdims=True))
    M = np.einsum("gni,gnj->gij", X, X)
    _, vc = np.linalg.eigh(C)
    _, vm = np.linalg.eigh(M)
    # the profiled objective is invariant under axis -> -axis, so use 8 distinct lines
    a, b, c = vc[:, :, 0], vc[:, :, 1], vc[:, :, 2]
    cand = [a, vm[:, :, 0], b, c, normalize(X.sum(axis=1) + 1e-300),
            (a + b) / np.sqrt(2), (a + c) / np.sqrt(2), (b + c) / np.sqrt(2)]
    return np.stack(cand, axis=1)


def _circle_objective(X, A, great):
    d = np.arccos(np.clip(np.matmul(X, A[:, :, None])[..., 0], -1.0, 1.0))
    r = np.full(len(A), np.pi / 2) if great else d.mean(axis=1)
    return np.sum((d - r[:, None]) ** 2, axis=1), r


def _refine_axes(X, A, great, max_iter=200):
    """Levenberg-Marquardt on the axis with the radius profiled out.

    ``X`` is ``(P, N, 3)`` and ``A`` ``(P, 3)``; every problem is refined
    independently and converged problems drop out of the active set.
    """
    A = A.copy()
    f, _ = _circle_objective(X, A, great)
    lam = np.full(len(A), 1e-6)
    active = np.arange(len(A))
    for _ in range(max_iter):
        if active.size == 0:
            break
        Xa, a = X[active], A[active]
        t1, t2 = tangent_basis(a)
        proj = np.matmul(Xa, np.stack([a, t1, t2], axis=-1))
        c = np.clip(proj[..., 0], -1.0, 1.0)
        d = np.arccos(c)
        s = np.maximum(np.sqrt(1.0 - c * c), 1e-12)
        e = d - (np.pi / 2 if great else d.mean(axis=1, keepdims=True))
        J = -proj[..., 1:] / s[..., None]
        if not great:
            J = J - J.mean(axis=1, keepdims=True)
        Jt = np.swapaxes(J, 1, 2)
        g = np.matmul(Jt, e[..., None])[..., 0]
        H = np.matmul(Jt, J)
        diag = np.eye(2)[None] * (np.trace(H, axis1=1, axis2=2)[:, None, None] / 2 + 1e-12)
        step = -np.linalg.solve(H + lam[active, None, None] * diag, g[..., None])[..., 0]
        a_new = exp_map(a, step[:, :1] * t1 + step[:, 1:] * t2)
        f_new, _ = _circle_objective(Xa, a_new, great)
        better = f_new <= f[active]
        idx = active[better]
        gain = f[idx] - f_new[better]
        A[idx] = a_new[better]
        f[idx] = f_new[better]
        lam[idx] *= 0.2
        lam[active[~better]] *= 10.0
        snorm = np.linalg.norm(step, axis=1)
        done = np.zeros(active.size, dtype=bool)
        done[better] = (snorm[better] < 1e-11) | (gain <= 1e-10 * f[idx])
        done |= lam[active] > 1e12
        active = active[~done]
    return A, f


def _multistart(X, starts, great, max_iter, screen_iter=15, keep=2):
    """Refine all starts briefly, then only the ``keep`` best per point set."""
    G, S, _ = starts.shape
    A, f = _refine_axes(np.repeat(X, S, axis=0), starts.reshape(G * S, 3), great,
                        max_iter=screen_iter)
    A, f = A.reshape(G, S, 3), f.reshape(G, S)
    order = np.argsort(f, axis=1, kind="stable")[:, :keep]
    rows = np.arange(G)[:, None]
    A, f = _refine_axes(np.repeat(X, keep, axis=0), A[rows, order].reshape(-1, 3), great,
                        max_iter=max(max_iter - screen_iter, 1))
    A, f = A.reshape(G, keep, 3), f.reshape(G, keep)
    k = np.argmin(f, axis=1)
    return A[np.arange(G), k], f[np.arange(G), k]


def fit_circles(X, small_gain=0.05, great_margin=0.05, min_radius_ratio=3.0, max_iter=200):
    """Batched great/small circle fit; ``X`` is ``(G, N, 3)``.

    Returns ``(axes, radii, is_great, mse_small, mse_great)``. The small
    circle is kept only when it lowers the mean squared residual by more
    than ``small_gain``, its radius stays ``great_margin`` below pi/2 and the
    radius exceeds ``min_radius_ratio`` residual RMS (a circle wrapped
    around an isotropic blob is rejected).
    """
    X = np.asarray(X, dtype=float)
    G, N, _ = X.shape
    starts = _initial_axes(X)
    axis_s, f_s = _multistart(X, starts, great=False, max_iter=max_iter)
    axis_g, f_g = _multistart(X, starts, great=True, max_iter=max_iter)
    r_s = geodesic_dist(axis_s[:, None, :], X).mean(axis=1)
    flip = r_s > np.pi / 2
    axis_s[flip] *= -1.0
    r_s[flip] = np.pi - r_s[flip]
    mse_s = f_s / N
    mse_g = f_g / N

    small = ((mse_s < (1.0 - small_gain) * mse_g)
             & (r_s < np.pi / 2 - great_margin)
             & (r_s > min_radius_ratio * np.sqrt(mse_s)))
    axes = np.where(small[:, None], axis_s, axis_g)
    radii = np.where(small, r_s, np.pi / 2)
    return axes, radii, ~small, mse_s, mse_g


def _check_spread(pts):
    if pts.shape[0] < 3:
        raise GeometryError("circle fit needs at least 3 points")
    if np.max(geodesic_dist(pts[0], pts)) < 1e-12:
        raise GeometryError("degenerate input: all points identical")


def fit_circle_s2(points, **rule):
    """Fit the best great or small circle to points on S^2 (see :func:`fit_circles`)."""
    pts = normalize(np.asarray(points, dtype=float))
    _check_spread(pts)
    axes, radii, great, ms, mg = fit_circles(pts[None], **rule)
    return FittedCircle(axes[0], float(radii[0]), bool(great[0]), float(ms[0]), float(mg[0]))


def _pns_residuals(X, axes, radii):
    """Residual coordinates and PNS means for fitted circles (batched)."""
    t1, t2 = tangent_basis(axes)
    d = geodesic_dist(axes[:, None, :], X)
    lon = np.arctan2(np.einsum("gni,gi->gn", X, t2), np.einsum("gni,gi->gn", X, t1))
    lon_mean = circular_frechet_mean(lon)
    res1 = d - radii[:, None]
    res2 = np.sin(radii)[:, None] * wrap_angle(lon - lon_mean[:, None])
    on_circle = np.cos(lon_mean)[:, None] * t1 + np.sin(lon_mean)[:, None] * t2
    base = np.cos(radii)[:, None] * axes + np.sin(radii)[:, None] * on_circle
    return np.stack([res1, res2], axis=-1), base


def euclideanize_pns_batch(X, **rule):
    """PNS residuals for ``(G, N, 3)`` input; returns ``(coords (G,N,2), base (G,3))``."""
    X = np.asarray(X, dtype=float)
    axes, radii, _, _, _ = fit_circles(X, **rule)
    return _pns_residuals(X, axes, radii)


def euclideanize_pns(points, **rule):
    """Residuals of points with respect to their fitted circle.

    Column 0 is the signed distance to the circle (positive away from the
    axis), column 1 the arc length (scaled by ``sin(r)``) from the PNS mean
    to the projected point, counter-clockwise about the axis. Returns
    ``(coords, base_point)``.
    """
    pts = normalize(np.asarray(points, dtype=float))
    _check_spread(pts)
    coords, base = euclideanize_pns_batch(pts[None], **rule)
    return coords[0], base[0]


def euclideanize_tangent(points, mean=None):
    """Rotate the Frechet mean to the north pole, then take the log map there."""
    pts = normalize(np.atleast_2d(np.asarray(points, dtype=float)))
    mu = frechet_mean_s2(pts) if mean is None else np.asarray(mean, float)
    R = rotate_x_to_y(mu, NORTH)
    return log_map_north(pts @ R.T)


def euclideanize_tangent_batch(X, means):
    """Batched tangent-space coordinates about given means."""
    X = np.asarray(X, dtype=float)
    out = np.empty(X.shape[:2] + (2,))
    for g in range(len(X)):
        R = rotate_x_to_y(means[g], NORTH)
        out[g] = log_map_north(X[g] @ R.T)
    return out


# --------------------------------------------------------------------------
# Frames


def is_frame(F, tol=1e-9):
    F = np.asarray(F, dtype=float)
    return (np.allclose(F.T @ F, np.eye(3), atol=tol)
            and np.allclose(np.cross(F[:, 0], F[:, 1]), F[:, 2], atol=tol))


def frame_alignment(F):
    """The rotation ``R2 R1`` carrying ``(n, b)`` of ``F`` onto ``(e3, e1)``.

    ``R1 = R(n, e3)`` and ``R2 = R(R1 b, e1)``; for orthonormal ``n, b`` the
    product equals ``I~ [n, b, n x b]^T``, which is what is evaluated here
    because it stays defined when ``n = -e3`` or ``R1 b = -e1``.
    Also returns whether ``F`` is left-handed (``b_perp = -(n x b)``).
    """
    F = np.asarray(F, dtype=float)
    n, b = F[:, 0], F[:, 1]
    right = np.column_stack([n, b, np.cross(n, b)])
    left_handed = float(F[:, 2] @ right[:, 2]) < 0.0
    return IDENTITY_FRAME @ right.T, left_handed


def frame_alignment_literal(F):
    """``R(R1 b, e1) R(n, e3)`` built from two spherical rotations."""
    R1 = rotate_x_to_y(F[:, 0], E3)
    R2 = rotate_x_to_y(R1 @ F[:, 1], E1)
    return R2 @ R1
