"""Templates, deformations, noise models and the two-group bending study."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .dsrep import DsRepError, GpDsRep, GridLayout, LpDsRep, SpokeKind, lp_size
from .sphere import axis_angle_matrix, rotations_about, rotations_x_to_y, tangent_basis

# --------------------------------------------------------------------------
# ellipsoid template


def _fold_nodes(grid):
    """Outer-ring grid nodes (without the spine endpoints), top half left to right."""
    m, cols = grid.spine_row, grid.cols
    top = [(r, 0) for r in range(m - 1, -1, -1)]
    top += [(0, c) for c in range(1, cols - 1)]
    top += [(r, cols - 1) for r in range(m)]
    return top


def ellipsoid_template(rows=5, cols=9, radii=(3.0, 2.0, 1.0), crest_count=20, spine_ratio=0.8):
    """Discrete skeleton of the ellipsoid ``(x/a)^2 + (y/b)^2 + (z/c)^2 = 1``.

    The skeletal sheet is the medial ellipse with semi-axes ``(a^2-c^2)/a`` and
    ``(b^2-c^2)/b``. Its ring of outer grid nodes lies on the ellipse, the spine
    runs along the major axis, and interior vein nodes interpolate linearly
    between spine and ring. Up and down spokes follow the boundary normals
    (they meet the surface orthogonally); crest spokes leave evenly spaced
    ring nodes within the sheet plane.
    """
    a, b, c = map(float, radii)
    if not a > b > c > 0:
        raise DsRepError("ellipsoid radii must satisfy a > b > c > 0")
    if rows % 2 == 0 or rows < 3 or cols < 3:
        raise DsRepError("ellipsoid grid needs odd rows >= 3 and cols >= 3")
    m = (rows - 1) // 2
    grid0 = GridLayout(rows, cols, (0, 0))
    top = _fold_nodes(grid0)
    nf = len(top)
    ma, mb = (a * a - c * c) / a, (b * b - c * c) / b

    pts = np.zeros((rows, cols, 3))
    angle = {}
    for k, (r, col) in enumerate(top):
        phi = np.pi - (2 * k + 1) * np.pi / (2 * nf)
        angle[(r, col)] = phi
        pts[r, col] = (ma * np.cos(phi), mb * np.sin(phi), 0.0)
    for col in range(cols):
        pts[m, col] = (spine_ratio * ma * np.cos(angle[(0, col)]), 0.0, 0.0)
        for r in range(1, m):
            if 0 < col < cols - 1:
                s = (m - r) / m
                pts[r, col] = (1 - s) * pts[m, col] + s * pts[0, col]
    for r in range(m + 1, rows):
        pts[r] = pts[rows - 1 - r] * (1.0, -1.0, 1.0)

    ring = top + [(rows - 1 - r, col) for r, col in reversed(top)]
    ring_idx = [r * cols + col for r, col in ring]
    if crest_count > len(ring):
        raise DsRepError(f"at most {len(ring)} crest spokes fit on this grid")
    picks = np.round(np.linspace(0, len(ring), crest_count, endpoint=False)).astype(int)
    crest = tuple(ring_idx[i] for i in picks)
    grid = GridLayout(rows, cols, (grid0.index(m - 1, 0), grid0.index(m - 1, cols - 1)), crest)

    P = pts.reshape(-1, 3)
    gx = P[:, 0] / (1 - c * c / (a * a))
    gy = P[:, 1] / (1 - c * c / (b * b))
    gz = c * np.sqrt(np.clip(1 - (P[:, 0] / ma) ** 2 - (P[:, 1] / mb) ** 2, 0.0, None))

    tails, kinds, tips = [], [], []
    for j in range(grid.n_grid):
        for kind, sign in ((SpokeKind.UP, 1.0), (SpokeKind.DOWN, -1.0)):
            tails.append(j)
            kinds.append(kind)
            tips.append((gx[j], gy[j], sign * gz[j]))
    for j in crest:
        tails.append(j)
        kinds.append(SpokeKind.CREST)
        tips.append((gx[j], gy[j], 0.0))
    tails = np.array(tails)
    vec = np.array(tips) - P[tails]
    lengths = np.linalg.norm(vec, axis=1)
    return GpDsRep(P, tails, tuple(kinds), vec / lengths[:, None], lengths, grid)


# --------------------------------------------------------------------------
# deformation


class FrameAxis(str, enum.Enum):
    N = "n"
    B = "b"
    BPERP = "b_perp"

    @property
    def column(self):
        return {"n": 0, "b": 1, "b_perp": 2}[self.value]


@dataclass(frozen=True)
class DeformSpec:
    target_nodes: tuple[int, ...]
    axis: FrameAxis = FrameAxis.BPERP
    angle: float | tuple[float, ...] = 0.0

    def __post_init__(self):
        object.__setattr__(self, "axis", FrameAxis(self.axis))
        object.__setattr__(self, "target_nodes", tuple(int(j) for j in self.target_nodes))
        if any(abs(t) >= np.pi for t in self.angles()):
            raise ValueError("deformation angles must satisfy |angle| < pi")

    def angles(self):
        if np.ndim(self.angle) == 0:
            return (float(self.angle),) * len(self.target_nodes)
        if len(self.angle) != len(self.target_nodes):
            raise ValueError("one angle per target node expected")
        return tuple(float(t) for t in self.angle)


def rotate_frames(lp: LpDsRep, spec: DeformSpec) -> LpDsRep:
    """Rotate each targeted frame about one of its own axes (in its parent's chart)."""
    frames = lp.frames.copy()
    e = np.eye(3)[spec.axis.column]
    for j, theta in zip(spec.target_nodes, spec.angles()):
        if not 0 <= j < lp.n_p:
            raise DsRepError(f"invalid node {j}")
        if j == lp.hierarchy.root:
            raise DsRepError("the root frame is fixed and cannot be rotated")
        if theta != 0.0:
            frames[j] = frames[j] @ axis_angle_matrix(e, theta)
    return replace(lp, frames=frames)


def default_bend_nodes(grid: GridLayout, count=3):
    """Spinal nodes nearest the root on the lower-column side, root outward."""
    m, c0 = grid.spine_row, (grid.cols - 1) // 2
    if count > c0:
        raise DsRepError("not enough spinal nodes on the lower side")
    return tuple(grid.index(m, c0 - k) for k in range(1, count + 1))


# --------------------------------------------------------------------------
# sampling


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _vmf_cos(kappa, size, rng):
    """Cosine of the angle to the mean direction, by inverse CDF."""
    u = 1.0 - rng.random(size)                      # (0, 1]
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    return np.clip(w, -1.0, 1.0)


def _vmf_about(mus, kappa, rng):
    """One vMF draw around each row of ``mus``."""
    mus = np.atleast_2d(mus)
    w = _vmf_cos(kappa, len(mus), rng)
    phi = rng.uniform(0.0, 2 * np.pi, len(mus))
    s = np.sqrt(np.clip(1 - w * w, 0.0, None))
    t1, t2 = tangent_basis(mus)
    out = (s * np.cos(phi))[:, None] * t1 + (s * np.sin(phi))[:, None] * t2 + w[:, None] * mus
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def sample_vmf_s2(mu, kappa, n, seed=None):
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    mu = np.asarray(mu, float) / np.linalg.norm(mu)
    return _vmf_about(np.tile(mu, (n, 1)), kappa, _rng(seed))


def sample_vmf_circle(mu, kappa, n, seed=None):
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return _rng(seed).vonmises(mu, kappa, n)


def sample_trunc_normal(mu, sigma, a, b, n, seed=None):
    if not a < b:
        raise ValueError("empty truncation interval")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    lo, hi = (a - mu) / sigma, (b - mu) / sigma
    x = stats.truncnorm.rvs(lo, hi, loc=mu, scale=sigma, size=n, random_state=_rng(seed))
    return np.clip(x, a, b)


def _trunc_normal_each(mus, factors, rng):
    sig_f, a_f, b_f = factors
    mus = np.asarray(mus, float)
    x = stats.truncnorm.rvs((a_f - 1) / sig_f, (b_f - 1) / sig_f, size=len(mus), random_state=rng)
    return np.clip(mus * (1.0 + sig_f * x), a_f * mus, b_f * mus)


def small_circle_cluster(axis, colatitude, kappa_radial, kappa_angular, n, seed=None):
    """Points scattered around the circle at ``colatitude`` from ``axis``."""
    if not 0 < colatitude < np.pi / 2:
        raise ValueError("colatitude must lie in (0, pi/2)")
    rng = _rng(seed)
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    theta = np.abs(rng.vonmises(colatitude, kappa_radial, n))
    lon = rng.vonmises(0.0, kappa_angular, n)
    t1, t2 = tangent_basis(axis)
    return (np.sin(theta) * np.cos(lon))[:, None] * t1 + (np.sin(theta) * np.sin(lon))[:, None] * t2 \
        + np.cos(theta)[:, None] * axis


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseSpec:
    """vMF concentrations (``None`` switches a component off) and length noise factors."""

    kappa_frame: float | None = 600.0
    kappa_spoke: float | None = 250.0
    kappa_conn: float | None = 5000.0
    length_noise: tuple[float, float, float] | None = (0.02, 0.5, 1.5)

    def __post_init__(self):
        for k in (self.kappa_frame, self.kappa_spoke, self.kappa_conn):
            if k is not None and not k > 0:
                raise ValueError("concentrations must be positive")
        if self.length_noise is not None:
            s, lo, hi = self.length_noise
            if not (s > 0 and 0 < lo < 1 < hi):
                raise ValueError("length noise needs sigma > 0 and 0 < a < 1 < b")

    @classmethod
    def none(cls):
        return cls(None, None, None, None)


def perturb_lp(lp: LpDsRep, noise: NoiseSpec, seed=None) -> LpDsRep:
    """Independent noise on every direction, frame and length (the root stays fixed)."""
    if lp.scaled:
        raise DsRepError("perturb_lp expects an unscaled LP-ds-rep")
    rng = _rng(seed)
    root = lp.hierarchy.root
    others = np.arange(lp.n_p) != root
    spoke_dirs, conn_dirs, frames = lp.spoke_dirs, lp.conn_dirs.copy(), lp.frames.copy()
    spoke_len, conn_len = lp.spoke_lengths, lp.conn_lengths.copy()

    if noise.kappa_spoke is not None:
        spoke_dirs = _vmf_about(lp.spoke_dirs, noise.kappa_spoke, rng)
    if noise.kappa_conn is not None:
        conn_dirs[others] = _vmf_about(lp.conn_dirs[others], noise.kappa_conn, rng)
    if noise.kappa_frame is not None:
        F = lp.frames[others]
        n = F[:, :, 0]
        n_new = _vmf_about(n, noise.kappa_frame, rng)
        spin = rng.vonmises(0.0, noise.kappa_frame, len(F))
        frames[others] = rotations_about(n_new, spin) @ rotations_x_to_y(n, n_new) @ F
    if noise.length_noise is not None:
        spoke_len = _trunc_normal_each(lp.spoke_lengths, noise.length_noise, rng)
        conn_len[others] = _trunc_normal_each(lp.conn_lengths[others], noise.length_noise, rng)
    out = replace(lp, spoke_dirs=spoke_dirs, conn_dirs=conn_dirs, frames=frames,
                  spoke_lengths=spoke_len, conn_lengths=conn_len)
    return replace(out, lp_size=lp_size(out))


# --------------------------------------------------------------------------
# two-group study


@dataclass(frozen=True)
class BendGroup:
    """Bending angle distribution: von Mises with mean ``mu``; ``kappa=None`` means fixed at ``mu``."""

    mu: float = 0.0
    kappa: float | None = 100.0

    def draw(self, rng):
        return self.mu if self.kappa is None else float(rng.vonmises(self.mu, self.kappa))


@dataclass(frozen=True)
class StudyConfig:
    n_per_group: int = 150
    groups: tuple[BendGroup, BendGroup] = (BendGroup(0.0, 100.0), BendGroup(-np.pi / 15, 100.0))
    bend_nodes: tuple[int, ...] | None = None   # default: default_bend_nodes(grid)
    bend_axis: FrameAxis = FrameAxis.BPERP
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0

    def to_dict(self):
        return {"n_per_group": self.n_per_group,
                "groups": [{"mu": g.mu, "kappa": g.kappa} for g in self.groups],
                "bend_nodes": None if self.bend_nodes is None else list(self.bend_nodes),
                "bend_axis": FrameAxis(self.bend_axis).value,
                "noise": {"kappa_frame": self.noise.kappa_frame, "kappa_spoke": self.noise.kappa_spoke,
                          "kappa_conn": self.noise.kappa_conn,
                          "length_noise": None if self.noise.length_noise is None
                          else list(self.noise.length_noise)},
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        noise = d.get("noise", {})
        ln = noise.get("length_noise", (0.02, 0.5, 1.5))
        groups = d.get("groups")
        return cls(n_per_group=int(d.get("n_per_group", 150)),
                   groups=(tuple(BendGroup(float(g["mu"]), None if g.get("kappa") is None
                                           else float(g["kappa"])) for g in groups)
                           if groups else cls.groups),
                   bend_nodes=None if d.get("bend_nodes") is None else tuple(d["bend_nodes"]),
                   bend_axis=FrameAxis(d.get("bend_axis", "b_perp")),
                   noise=NoiseSpec(noise.get("kappa_frame", 600.0), noise.get("kappa_spoke", 250.0),
                                   noise.get("kappa_conn", 5000.0),
                                   None if ln is None else tuple(float(x) for x in ln)),
                   seed=int(d.get("seed", 0)))


def simulate_member(template: LpDsRep, config: StudyConfig, group: int, index: int) -> LpDsRep:
    """Member ``index`` of ``group``; depends only on (seed, group, index)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, group, index]))
    nodes = config.bend_nodes or default_bend_nodes(template.grid)
    theta = config.groups[group].draw(rng)
    bent = rotate_frames(template, DeformSpec(nodes, config.bend_axis, theta))
    return perturb_lp(bent, config.noise, rng)


def build_study(template: LpDsRep, config: StudyConfig):
    """Two lists of ``n_per_group`` unscaled LP-ds-reps."""
    if template.scaled:
        raise DsRepError("the study template must be unscaled")
    return tuple([simulate_member(template, config, g, i) for i in range(config.n_per_group)]
                 for g in (0, 1))


def study_template():
    """Ellipsoid skeleton (5 x 13, radii 3/2/1, 20 crest spokes) curved in-plane.

    The five spinal frames on the upper-column side are each turned by pi/36
    about their normal, giving a gently curved slab.
    """
    from .reparam import gp_to_lp

    lp = gp_to_lp(ellipsoid_template(5, 13, (3.0, 2.0, 1.0), 20))
    g = lp.grid
    m, c0 = g.spine_row, (g.cols - 1) // 2
    nodes = tuple(g.index(m, c) for c in range(c0 + 1, g.cols))
    return rotate_frames(lp, DeformSpec(nodes, FrameAxis.N, np.pi / 36))
