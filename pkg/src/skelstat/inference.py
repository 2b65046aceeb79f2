"""Two-sample permutation tests on geometric object properties (GOPs).

Every GOP is reduced to a Euclidean sample: lengths and sizes stay scalar
(pooled t statistic), directions are euclideanized on the pooled sample to
2D and skeletal positions are used as 3D coordinates (Hotelling T^2).

All GOPs of a study share one matrix of group labels, so the permuted
statistics for every GOP come out of a few matrix products over the pooled
data.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .dsrep import GpDsRep, LpDsRep, gp_size, scale_lp
from .population import LpPopulation, gpa_align
from .reparam import lp_to_gp
from .sphere import (GeometryError, _frechet_means, euclideanize_pns_batch,
                     euclideanize_tangent_batch, normalize)

TIE_RTOL = 1e-10
TIE_DIFF = 1e-13      # mean differences of standardized data below this are ties
RIDGE = 1e-8


class GopKind(str, enum.Enum):
    SPOKE_DIR = "spoke_dir"
    SPOKE_LEN = "spoke_len"
    FRAME_N = "frame_n"
    FRAME_B = "frame_b"
    FRAME_BPERP = "frame_bperp"
    CONN_DIR = "conn_dir"
    CONN_LEN = "conn_len"
    POSITION = "position"
    SIZE = "size"


FRAME_KINDS = (GopKind.FRAME_N, GopKind.FRAME_B, GopKind.FRAME_BPERP)


@dataclass(frozen=True)
class GopId:
    kind: GopKind
    index: int

    def __str__(self):
        return f"{self.kind.value}[{self.index}]"


@dataclass(frozen=True, eq=False)
class GopSample:
    """Pooled values of one GOP; the first ``n_a`` rows belong to group A."""

    gop_id: GopId
    values: np.ndarray     # (N,) or (N, d)
    n_a: int

    @property
    def arity(self):
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def groups(self):
        return self.values[: self.n_a], self.values[self.n_a:]


def gop_count(n_s, n_p, mode="lp"):
    return 2 * n_s + 5 * n_p + 1 if mode == "lp" else n_p + 2 * n_s + 1


# --------------------------------------------------------------------------
# statistics


def t_statistic(x, y):
    """Pooled two-sample t; +-inf when the pooled variance vanishes but the means differ."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n1, n2 = len(x), len(y)
    if n1 < 2 or n2 < 2:
        raise ValueError("each group needs at least two values")
    diff = x.mean() - y.mean()
    sp2 = (np.sum((x - x.mean()) ** 2) + np.sum((y - y.mean()) ** 2)) / (n1 + n2 - 2)
    if sp2 == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return float(diff / math.sqrt(sp2 * (1.0 / n1 + 1.0 / n2)))


def hotelling_t2(x, y, return_ridge=False):
    """Two-sample Hotelling T^2 with the pooled covariance times ``1/n1 + 1/n2``.

    A singular covariance gets the ridge ``1e-8 * trace / d``.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    n1, n2 = len(x), len(y)
    d = x.shape[1]
    diff = x.mean(axis=0) - y.mean(axis=0)
    W = ((x - x.mean(0)).T @ (x - x.mean(0)) + (y - y.mean(0)).T @ (y - y.mean(0))) / (n1 + n2 - 2)
    S = W * (1.0 / n1 + 1.0 / n2)
    ridge = False
    if not np.any(diff):
        return (0.0, ridge) if return_ridge else 0.0
    if np.linalg.matrix_rank(S) < d or np.linalg.cond(S) > 1e12:
        ridge = True
        tr = np.trace(S)
        if tr == 0.0:
            return (math.inf, ridge) if return_ridge else math.inf
        S = S + RIDGE * tr / d * np.eye(d)
    t2 = float(diff @ np.linalg.solve(S, diff))
    return (t2, ridge) if return_ridge else t2


def _pairs(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def _quad_form(W, diff, d):
    """``diff^T W^-1 diff`` for stacked symmetric ``W`` given by its upper-triangle pairs."""
    if d == 1:
        return diff[..., 0] ** 2 / W[..., 0]
    if d == 2:
        a, b, c = W[..., 0], W[..., 1], W[..., 2]
        x, y = diff[..., 0], diff[..., 1]
        return (c * x * x - 2 * b * x * y + a * y * y) / (a * c - b * b)
    if d == 3:
        a, b, c, e, f, g = (W[..., k] for k in range(6))   # 00 01 02 11 12 22
        A00, A01, A02 = e * g - f * f, c * f - b * g, b * f - c * e
        A11, A12, A22 = a * g - c * c, b * c - a * f, a * e - b * b
        det = a * A00 + b * A01 + c * A02
        x, y, z = diff[..., 0], diff[..., 1], diff[..., 2]
        q = (A00 * x * x + A11 * y * y + A22 * z * z
             + 2 * (A01 * x * y + A02 * x * z + A12 * y * z))
        return q / det
    raise ValueError("arity above 3 is not supported")


class _Arity:
    """Permutation statistics for all GOPs of one arity, computed from group sums."""

    def __init__(self, X, n_a):
        X = np.asarray(X, float)
        if X.ndim == 2:
            X = X[:, :, None]
        self.N, self.K, self.d = X.shape
        self.n1, self.n2 = n_a, self.N - n_a
        Xc = X - X.mean(axis=0)
        scale = np.sqrt(np.mean(np.sum(Xc ** 2, axis=2), axis=0))     # (K,)
        self.const = scale == 0
        Xc = Xc / np.where(self.const, 1.0, scale)[None, :, None]
        self.pairs = _pairs(self.d)
        P = np.stack([Xc[:, :, i] * Xc[:, :, j] for i, j in self.pairs], axis=2)
        self.lin = Xc.reshape(self.N, -1)
        self.quad = P.reshape(self.N, -1)
        self.lin_tot = self.lin.sum(axis=0).reshape(self.K, self.d)
        self.quad_tot = self.quad.sum(axis=0).reshape(self.K, -1)
        self.ridge = np.zeros(self.K)
        self.ridged = np.zeros(self.K, dtype=bool)

    def _moments(self, L):
        b = len(L)
        S1 = (L @ self.lin).reshape(b, self.K, self.d)
        Q1 = (L @ self.quad).reshape(b, self.K, -1)
        S2 = self.lin_tot - S1
        Q2 = self.quad_tot - Q1
        W = np.empty_like(Q1)
        for k, (i, j) in enumerate(self.pairs):
            W[..., k] = (Q1[..., k] - S1[..., i] * S1[..., j] / self.n1
                         + Q2[..., k] - S2[..., i] * S2[..., j] / self.n2)
        W /= self.N - 2
        diff = S1 / self.n1 - S2 / self.n2
        return W, diff

    def calibrate(self, L_obs):
        """Decide per GOP whether the observed covariance needs a ridge."""
        if self.d == 1:
            return
        W, _ = self._moments(L_obs)
        W = W[0]
        diag = [k for k, (i, j) in enumerate(self.pairs) if i == j]
        tr = W[:, diag].sum(axis=1)
        M = np.zeros((self.K, self.d, self.d))
        for k, (i, j) in enumerate(self.pairs):
            M[:, i, j] = M[:, j, i] = W[:, k]
        ev = np.linalg.eigvalsh(M)
        sing = (ev[:, 0] <= 1e-12 * np.maximum(ev[:, -1], 1e-300)) & ~self.const
        self.ridged = sing
        self.ridge = np.where(sing, RIDGE * tr / self.d, 0.0)

    def statistics(self, L):
        """``|t|`` (arity 1) or ``T^2`` for each label row of ``L`` and each GOP; shape ``(b, K)``."""
        W, diff = self._moments(L)
        factor = 1.0 / self.n1 + 1.0 / self.n2
        if self.d == 1:
            var = W[..., 0]
            zero = var <= 1e-13
            with np.errstate(divide="ignore", invalid="ignore"):
                T = np.abs(diff[..., 0]) / np.sqrt(var * factor)
            tiny = np.abs(diff[..., 0]) <= TIE_DIFF
            T = np.where(tiny, 0.0, np.where(zero, np.inf, T))
        else:
            for k, (i, j) in enumerate(self.pairs):
                if i == j:
                    W[..., k] += self.ridge
            with np.errstate(divide="ignore", invalid="ignore"):
                T = _quad_form(W * factor, diff, self.d)
            tiny = np.all(np.abs(diff) <= TIE_DIFF, axis=-1)
            T = np.where(tiny, 0.0, np.where(np.isfinite(T) & (T >= 0), T, np.inf))
        return np.where(self.const, 0.0, T)


def permutation_labels(n_total, n_a, B, seed):
    """Rows of 0/1 group-A indicators.

    Returns ``(labels, exact)``. When the number of distinct partitions does
    not exceed ``B`` all partitions are enumerated (``exact=True``);
    otherwise ``B`` random partitions are drawn with replacement from the
    partition space.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    count = math.comb(n_total, n_a)
    if count <= B:
        L = np.zeros((count, n_total))
        for r, idx in enumerate(combinations(range(n_total), n_a)):
            L[r, list(idx)] = 1.0
        return L, True
    rng = np.random.default_rng(seed)
    order = np.argsort(rng.random((B, n_total)), axis=1)
    L = np.zeros((B, n_total))
    np.put_along_axis(L, order[:, :n_a], 1.0, axis=1)
    return L, False


@dataclass(frozen=True, eq=False)
class PermutationResult:
    statistic: np.ndarray   # observed |t| or T^2
    p_values: np.ndarray
    flags: list             # per GOP tuple of strings
    n_perm: int
    exact: bool


def permutation_pvalues(samples, B=10_000, seed=0, chunk=1000):
    """Raw p-values for a list of :class:`GopSample` sharing one group split."""
    if not samples:
        raise ValueError("no GOP samples")
    N, n_a = len(samples[0].values), samples[0].n_a
    if any(len(s.values) != N or s.n_a != n_a for s in samples):
        raise ValueError("GOP samples must share the group split")
    if n_a < 2 or N - n_a < 2:
        raise ValueError("each group needs at least two members")
    L, exact = permutation_labels(N, n_a, B, seed)
    L_obs = np.zeros((1, N))
    L_obs[0, :n_a] = 1.0

    K = len(samples)
    stat = np.empty(K)
    count = np.zeros(K)
    flags = [() for _ in range(K)]
    for d in sorted({s.arity for s in samples}):
        idx = [k for k, s in enumerate(samples) if s.arity == d]
        eng = _Arity(np.stack([samples[k].values for k in idx], axis=1), n_a)
        eng.calibrate(L_obs)
        obs = eng.statistics(L_obs)[0]
        thresh = obs * (1.0 - TIE_RTOL)
        c = np.zeros(len(idx))
        for start in range(0, len(L), chunk):
            c += np.sum(eng.statistics(L[start:start + chunk]) >= thresh, axis=0)
        stat[idx] = obs
        count[idx] = c
        for pos, k in enumerate(idx):
            if eng.ridged[pos]:
                flags[k] += ("ridge",)
            if np.isinf(obs[pos]):
                flags[k] += ("infinite_statistic",)
    if exact:
        p = count / len(L)
    else:
        p = (1.0 + count) / (len(L) + 1.0)
    inf = np.isinf(stat)
    p[inf] = 1.0 / (len(L) + (0.0 if exact else 1.0))
    return PermutationResult(stat, np.clip(p, None, 1.0), flags, len(L), exact)


def permutation_test(sample: GopSample, B=10_000, seed=0):
    """Raw permutation p-value of a single GOP."""
    return float(permutation_pvalues([sample], B, seed).p_values[0])


def adjust_bonferroni(p):
    p = np.asarray(p, float)
    return np.minimum(p * len(p), 1.0)


def adjust_bh(p):
    """Benjamini-Hochberg step-up adjusted p-values in the original order."""
    p = np.asarray(p, float)
    K = len(p)
    order = np.argsort(p, kind="stable")
    scaled = p[order] * K / np.arange(1, K + 1)
    adj = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty(K)
    out[order] = adj
    return out


# --------------------------------------------------------------------------
# GOP extraction


def euclideanize_directions(X, method="pns"):
    """2D coordinates for each pooled direction sample ``X`` (``(G, N, 3)``).

    Samples with fewer than three distinct directions (or any that fail the
    circle fit) fall back to tangent coordinates about the Frechet mean.
    """
    X = normalize(np.asarray(X, float))
    G = len(X)
    out = np.zeros(X.shape[:2] + (2,))
    if method not in ("pns", "tangent"):
        raise ValueError(f"unknown euclideanization {method!r}")
    if method == "pns":
        pns = np.array([len(np.unique(np.round(X[g], 12), axis=0)) >= 3 for g in range(G)])
    else:
        pns = np.zeros(G, dtype=bool)
    if np.any(pns):
        out[pns] = euclideanize_pns_batch(X[pns])[0]
    rest = ~pns
    if np.any(rest):
        mu, _ = _frechet_means(X[rest])
        out[rest] = euclideanize_tangent_batch(X[rest], mu)
    return out


def _as_members(group):
    if isinstance(group, LpPopulation):
        return list(group.members)
    return list(group)


def lp_gop_samples(group_a, group_b, euclid="pns"):
    """GOP samples of scaled LP-ds-reps (members are scaled here if needed)."""
    members = [m if m.scaled else scale_lp(m) for m in _as_members(group_a) + _as_members(group_b)]
    n_a = len(_as_members(group_a))
    first = members[0]
    if any(not first.same_structure(m) for m in members):
        raise ValueError("groups are structurally incompatible")
    spokes = np.stack([m.spoke_dirs for m in members], axis=1)          # (n_s, N, 3)
    frames = np.stack([m.frames for m in members], axis=1)              # (n_p, N, 3, 3)
    conns = np.stack([m.conn_dirs for m in members], axis=1)
    dirs = np.concatenate([spokes, frames[..., 0], frames[..., 1], frames[..., 2], conns])
    coords = euclideanize_directions(dirs, euclid)
    n_s, n_p = first.n_s, first.n_p
    kinds = ([(GopKind.SPOKE_DIR, i) for i in range(n_s)]
             + [(k, j) for k in FRAME_KINDS for j in range(n_p)]
             + [(GopKind.CONN_DIR, j) for j in range(n_p)])
    samples = {(k, i): GopSample(GopId(k, i), coords[g], n_a) for g, (k, i) in enumerate(kinds)}
    rho = np.stack([m.spoke_lengths for m in members], axis=1)
    tau = np.stack([m.conn_lengths for m in members], axis=1)

    out = []
    for i in range(n_s):
        out.append(samples[(GopKind.SPOKE_DIR, i)])
        out.append(GopSample(GopId(GopKind.SPOKE_LEN, i), rho[i], n_a))
    for j in range(n_p):
        out.extend(samples[(k, j)] for k in FRAME_KINDS)
        out.append(samples[(GopKind.CONN_DIR, j)])
        out.append(GopSample(GopId(GopKind.CONN_LEN, j), tau[j], n_a))
    out.append(GopSample(GopId(GopKind.SIZE, 0), np.array([m.lp_size for m in members]), n_a))
    return out


def _to_gp(member):
    if isinstance(member, GpDsRep):
        return member
    return lp_to_gp(member, size=member.lp_size if member.scaled else None)


def gp_gop_samples(group_a, group_b, scaling=True, euclid="pns"):
    """GOP samples after pooled GPA of the skeletal points."""
    members = [_to_gp(m) for m in _as_members(group_a) + _as_members(group_b)]
    n_a = len(_as_members(group_a))
    gpa = gpa_align(np.stack([g.points for g in members]), with_scaling=scaling)
    dirs = np.stack([g.spoke_dirs @ R for g, R in zip(members, gpa.rotations)], axis=1)
    lengths = np.stack([g.spoke_lengths * s for g, s in zip(members, gpa.scales)], axis=1)
    coords = euclideanize_directions(dirs, euclid)
    out = [GopSample(GopId(GopKind.POSITION, j), gpa.aligned[:, j, :], n_a)
           for j in range(members[0].n_p)]
    for i in range(members[0].n_s):
        out.append(GopSample(GopId(GopKind.SPOKE_DIR, i), coords[i], n_a))
        out.append(GopSample(GopId(GopKind.SPOKE_LEN, i), lengths[i], n_a))
    out.append(GopSample(GopId(GopKind.SIZE, 0), np.array([gp_size(g) for g in members]), n_a))
    return out


# --------------------------------------------------------------------------
# study


@dataclass(frozen=True, eq=False)
class TestReport:
    gop_ids: list
    statistic: np.ndarray
    raw_p: np.ndarray
    bh_p: np.ndarray
    bonf_p: np.ndarray
    flags: list
    B: int
    alpha: float
    fdr: float
    seed: int
    mode: str
    options: dict = field(default_factory=dict)
    nodes: np.ndarray | None = None    # skeletal node each GOP belongs to (-1 for sizes)

    __test__ = False    # not a pytest class

    @property
    def K(self):
        return len(self.gop_ids)

    @property
    def sig_raw(self):
        return self.raw_p <= self.alpha

    @property
    def sig_bh(self):
        return self.bh_p <= self.fdr

    @property
    def sig_bonf(self):
        return self.bonf_p <= self.alpha

    def select(self, kinds):
        kinds = {GopKind(k) for k in kinds}
        return np.array([g.kind in kinds for g in self.gop_ids])

    def index_of(self, kind, index):
        return next(k for k, g in enumerate(self.gop_ids) if g.kind == kind and g.index == index)

    def summary(self):
        counts = {}
        for kind in sorted({g.kind for g in self.gop_ids}, key=lambda k: list(GopKind).index(k)):
            sel = self.select([kind])
            counts[kind.value] = {"K": int(sel.sum()), "raw": int(self.sig_raw[sel].sum()),
                                  "bh": int(self.sig_bh[sel].sum()),
                                  "bonferroni": int(self.sig_bonf[sel].sum())}
        flagged = {str(g): list(f) for g, f in zip(self.gop_ids, self.flags) if f}
        return {"mode": self.mode, "K": self.K, "B": self.B, "alpha": self.alpha, "fdr": self.fdr,
                "seed": self.seed, "options": self.options,
                "significant": {"raw": int(self.sig_raw.sum()), "bh": int(self.sig_bh.sum()),
                                "bonferroni": int(self.sig_bonf.sum())},
                "by_kind": counts, "flags": flagged}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gop_kind", "index", "statistic", "raw_p", "bh_p", "bonf_p",
                        "sig_raw", "sig_bh", "sig_bonf"])
            for k, g in enumerate(self.gop_ids):
                w.writerow([g.kind.value, g.index, repr(float(self.statistic[k])),
                            repr(float(self.raw_p[k])), repr(float(self.bh_p[k])),
                            repr(float(self.bonf_p[k])), int(self.sig_raw[k]),
                            int(self.sig_bh[k]), int(self.sig_bonf[k])])

    def write_significance_map(self, path, level="bh"):
        """Significant GOPs with the skeletal node they are attached to."""
        sig = {"raw": self.sig_raw, "bh": self.sig_bh, "bonferroni": self.sig_bonf}[level]
        p = {"raw": self.raw_p, "bh": self.bh_p, "bonferroni": self.bonf_p}[level]
        nodes = self.nodes if self.nodes is not None else np.full(self.K, -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gop_kind", "index", "node", f"{level}_p"])
            for k in np.flatnonzero(sig):
                g = self.gop_ids[k]
                w.writerow([g.kind.value, g.index, int(nodes[k]), repr(float(p[k]))])

    def write_summary(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def run_study(group_a, group_b, mode="lp", scaling=True, B=10_000, seed=0, alpha=0.05,
              fdr=0.05, euclid="pns"):
    """Test every GOP for a difference between two groups.

    ``mode="lp"`` works on scaled LP-ds-reps plus their LP-size; the
    ``scaling`` option only affects ``mode="gp"`` (GPA with or without
    scaling).
    """
    if mode == "lp":
        samples = lp_gop_samples(group_a, group_b, euclid)
    elif mode == "gp":
        samples = gp_gop_samples(group_a, group_b, scaling, euclid)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    res = permutation_pvalues(samples, B, seed)
    raw = res.p_values
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bh, bonf = adjust_bh(raw), adjust_bonferroni(raw)
    options = {"euclid": euclid, "exact_enumeration": res.exact, "n_perm": res.n_perm}
    if mode == "gp":
        options["scaling"] = bool(scaling)
    first = _as_members(group_a)[0]
    tails = np.asarray(first.spoke_tails)
    nodes = np.array([-1 if s.gop_id.kind == GopKind.SIZE
                      else tails[s.gop_id.index] if s.gop_id.kind in (GopKind.SPOKE_DIR, GopKind.SPOKE_LEN)
                      else s.gop_id.index for s in samples])
    return TestReport([s.gop_id for s in samples], res.statistic, raw, bh, bonf, res.flags,
                      B, alpha, fdr, seed, mode, options, nodes)
