from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from skelstat.dsrep import DsRepError, lp_size, scale_lp
from skelstat.population import (LpPopulation, align_frames, component_means, frame_mean,
                                 frame_means, gpa_align, initial_frame, lp_distance, mean_lp)
from skelstat.simulation import (NoiseSpec, StudyConfig, build_study, perturb_lp,
                                 sample_vmf_circle, sample_vmf_s2)
from skelstat.sphere import (IDENTITY_FRAME, axis_angle_matrix, geodesic_dist, rotations_about,
                             rotations_x_to_y)

from conftest import random_rotation, random_unit

E1, E2, E3 = np.eye(3)


def angle(x, y):
    return float(np.arccos(np.clip(np.dot(x, y), -1.0, 1.0)))


def vmf_frames(base, kappa, n, seed):
    """Tilt ``base``'s n by a vMF draw, then spin about the new n."""
    rng = np.random.default_rng(seed)
    n_new = sample_vmf_s2(base[:, 0], kappa, n, rng)
    spin = sample_vmf_circle(0.0, kappa, n, rng)
    tilt = rotations_x_to_y(np.tile(base[:, 0], (n, 1)), n_new)
    return rotations_about(n_new, spin) @ tilt @ base


def frame_objective(F, targets):
    return np.sqrt(sum(angle(F[:, i], targets[:, i]) ** 2 for i in range(3)))


# --------------------------------------------------------------------------
# distance


class TestDistance:
    def test_identity(self, template_lp):
        assert lp_distance(template_lp, template_lp) == 0.0

    def test_single_spoke(self, template_lp):
        dirs = template_lp.spoke_dirs.copy()
        axis = np.cross(dirs[7], random_unit(np.random.default_rng(0)))
        dirs[7] = axis_angle_matrix(axis / np.linalg.norm(axis), 0.2) @ dirs[7]
        other = replace(template_lp, spoke_dirs=dirs)
        assert lp_distance(template_lp, other) == pytest.approx(0.2, abs=1e-12)

    def test_term_by_term(self, template_lp):
        noisy = perturb_lp(template_lp, NoiseSpec(), seed=5)
        a, b = template_lp, noisy
        total = 0.0
        for i in range(a.n_s):
            total += angle(a.spoke_dirs[i], b.spoke_dirs[i]) ** 2
            total += (a.spoke_lengths[i] - b.spoke_lengths[i]) ** 2
        for j in range(a.n_p):
            total += sum(angle(a.frames[j][:, k], b.frames[j][:, k]) ** 2 for k in range(3))
            total += angle(a.conn_dirs[j], b.conn_dirs[j]) ** 2
            total += (a.conn_lengths[j] - b.conn_lengths[j]) ** 2
        assert lp_distance(a, b) == pytest.approx(np.sqrt(total), abs=1e-12)
        pi_weighted = lp_distance(a, b, commensurate=True)
        assert pi_weighted > lp_distance(a, b)

    def test_structure_mismatch(self, template_lp, ellipsoid_lp):
        with pytest.raises(DsRepError, match="structurally"):
            lp_distance(template_lp, ellipsoid_lp)

    def test_metric_axioms(self, template_lp):
        members = [perturb_lp(template_lp, NoiseSpec(kappa_frame=50, kappa_spoke=50, kappa_conn=50),
                              seed=s) for s in range(12)]
        rng = np.random.default_rng(1)
        D = np.array([[lp_distance(x, y) for y in members] for x in members])
        assert np.array_equal(D, D.T)
        assert np.all(np.diag(D) == 0) and np.all(D[~np.eye(12, dtype=bool)] > 0)
        triples = rng.integers(0, 12, size=(1000, 3))
        i, j, k = triples.T
        assert np.all(D[i, k] <= D[i, j] + D[j, k] + 1e-9)


# --------------------------------------------------------------------------
# frame means


class TestFrameMean:
    def test_identical_frames(self):
        F0 = random_rotation(np.random.default_rng(2))
        np.testing.assert_allclose(frame_mean([F0] * 6), F0, atol=1e-9)

    def test_symmetric_pair(self):
        n = normalize_vec([0.2, -0.3, 0.9])
        base = np.column_stack([n, normalize_vec(np.cross(n, E1)), np.zeros(3)])
        base[:, 2] = np.cross(base[:, 0], base[:, 1])
        pair = [axis_angle_matrix(n, t) @ base for t in (0.3, -0.3)]
        for method in ("pns", "frechet"):
            F = frame_mean(pair, method=method)
            assert angle(F[:, 0], n) < 1e-6
            assert angle(F[:, 1], base[:, 1]) < 1e-6

    def test_beats_random_search(self):
        base = random_rotation(np.random.default_rng(4))
        frames = vmf_frames(base, 600, 50, seed=11)
        targets = component_means(frames[None])[0]
        found = frame_mean(frames)
        cand = Rotation.random(100_000, random_state=12).as_matrix()
        d = np.arccos(np.clip(np.einsum("nki,ki->ni", cand, targets), -1, 1))
        best = np.sqrt(np.sum(d ** 2, axis=1)).min()
        assert frame_objective(found, targets) <= best

    def test_monotone_objective(self):
        for seed, step in ((0, 0.01), (1, 0.03), (2, 0.05)):
            base = random_rotation(np.random.default_rng(seed))
            frames = vmf_frames(base, 20, 40, seed=seed + 100)
            fit = frame_means(frames[None], step=step, keep_history=True)
            hist = np.array([h[0] for h in fit.history if not np.isnan(h[0])])
            assert np.all(np.diff(hist) <= 1e-12)
            np.testing.assert_allclose(fit.frames[0].T @ fit.frames[0], np.eye(3), atol=1e-12)

    def test_no_worse_than_start(self):
        frames = vmf_frames(random_rotation(np.random.default_rng(7)), 30, 30, seed=8)
        targets = component_means(frames[None])[0]
        start = initial_frame(targets[:, 0], targets[:, 1])
        assert frame_objective(frame_mean(frames), targets) <= frame_objective(start, targets)

    def test_equivariance(self):
        frames = vmf_frames(random_rotation(np.random.default_rng(9)), 100, 30, seed=10)
        R = random_rotation(np.random.default_rng(11))
        np.testing.assert_allclose(frame_mean(R @ frames), R @ frame_mean(frames), atol=1e-6)

    def test_non_convergence_carries_iterate(self):
        from skelstat.sphere import ConvergenceError
        targets = np.eye(3)[None]
        start = axis_angle_matrix(E3, 1.0)[None]
        with pytest.raises(ConvergenceError) as err:
            align_frames(start, targets, max_iter=3)
        assert err.value.last.shape == (3, 3) and err.value.objective > 0


def normalize_vec(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


class TestInitialFrame:
    def test_already_orthogonal(self):
        F = initial_frame(E3, E1)
        np.testing.assert_allclose(F, IDENTITY_FRAME, atol=1e-15)

    def test_eighty_degrees(self):
        b_mean = np.array([np.sin(np.radians(80)), 0, np.cos(np.radians(80))])
        F = initial_frame(E3, b_mean)
        assert np.degrees(angle(F[:, 0], F[:, 1])) == pytest.approx(90, abs=1e-10)
        assert np.degrees(angle(F[:, 0], E3)) == pytest.approx(5, abs=1e-7)
        assert np.degrees(angle(F[:, 1], b_mean)) == pytest.approx(5, abs=1e-7)

    @given(st.floats(0.05, np.pi - 0.05), st.integers(0, 2 ** 32 - 1))
    def test_strategy_b_geometry(self, gap, seed):
        R = random_rotation(np.random.default_rng(seed))
        n_mean = R @ E3
        b_mean = R @ np.array([np.sin(gap), 0, np.cos(gap)])
        F = initial_frame(n_mean, b_mean)
        assert abs(angle(F[:, 0], F[:, 1]) - np.pi / 2) < 1e-12
        expected = abs(gap - np.pi / 2) / 2
        assert abs(angle(F[:, 0], n_mean) - expected) < 1e-9
        assert abs(angle(F[:, 1], b_mean) - expected) < 1e-9
        assert np.linalg.det(F) == pytest.approx(1.0, abs=1e-12)

    def test_strategy_a_fixed_point(self):
        F = initial_frame(E3, E1, strategy="A", bperp_mean=E2)
        np.testing.assert_allclose(F, IDENTITY_FRAME, atol=1e-15)

    def test_degenerate(self):
        from skelstat.sphere import GeometryError
        for b in (E3, -E3):
            with pytest.raises(GeometryError):
                initial_frame(E3, b)


# --------------------------------------------------------------------------
# mean LP-ds-rep


@pytest.fixture(scope="module")
def population(template_lp):
    group_a, _ = build_study(template_lp, StudyConfig(n_per_group=150, seed=3))
    return LpPopulation(tuple(scale_lp(m) for m in group_a))


def frechet_oracle(X):
    """Minimize the summed squared arc length over tangent coordinates at the pole."""
    m = X.mean(axis=0)
    m /= np.linalg.norm(m)
    R = Rotation.align_vectors([[0, 0, 1.0]], [m])[0].as_matrix()  # mean near the pole
    Y = X @ R.T

    def point(v):
        r = np.hypot(*v)
        s = np.sinc(r / np.pi)           # sin(r) / r
        return np.array([v[0] * s, v[1] * s, np.cos(r)])

    def cost(v):
        return np.sum(np.arccos(np.clip(Y @ point(v), -1, 1)) ** 2)

    v = minimize(cost, [0.0, 0.0], method="Nelder-Mead",
                 options={"xatol": 1e-13, "fatol": 1e-18, "maxiter": 20000}).x
    return R.T @ point(v)


class TestMeanLp:
    def test_single_member(self, template_lp):
        lp = scale_lp(template_lp)
        mean = mean_lp([lp])
        for attr in ("spoke_dirs", "conn_dirs", "frames"):
            np.testing.assert_allclose(getattr(mean, attr), getattr(lp, attr), atol=1e-12)
        np.testing.assert_allclose(mean.spoke_lengths, lp.spoke_lengths, rtol=1e-12)

    def test_identical_members(self, template_lp):
        lp = scale_lp(template_lp)
        mean = mean_lp([lp] * 5)
        assert lp_distance(mean, lp) < 1e-9

    def test_arithmetic_spoke_length(self, template_lp):
        a = replace(template_lp, spoke_lengths=np.r_[0.01, template_lp.spoke_lengths[1:]])
        b = replace(template_lp, spoke_lengths=np.r_[0.03, template_lp.spoke_lengths[1:]])
        mean = mean_lp([a, b], lengths="arithmetic")
        assert mean.spoke_lengths[0] == pytest.approx(0.02, abs=1e-15)

    def test_arithmetic_keeps_unit_size(self, population):
        mean = mean_lp(population, lengths="arithmetic")
        assert mean.scaled and lp_size(mean) == pytest.approx(1.0, abs=1e-12)
        assert "renormalized" not in mean.meta

    def test_geometric_renormalizes(self, population):
        mean = mean_lp(population)
        assert lp_size(mean) == pytest.approx(1.0, abs=1e-12)
        assert mean.meta["renormalized"] and mean.meta["renormalization_factor"] < 1.0
        sizes = [m.lp_size for m in population.members]
        assert min(sizes) <= mean.lp_size <= max(sizes)

    def test_per_gop_frechet_oracle(self, population):
        mean = mean_lp(population, method="frechet")
        spokes = population.stack("spoke_dirs")
        for i in range(0, population.members[0].n_s, 15):
            assert angle(mean.spoke_dirs[i], frechet_oracle(spokes[:, i])) < 1e-6
        conns = population.stack("conn_dirs")
        for j in (3, 31, 50):
            assert angle(mean.conn_dirs[j], frechet_oracle(conns[:, j])) < 1e-6

    def test_per_gop_pns(self, population):
        from skelstat.sphere import euclideanize_pns
        mean = mean_lp(population)
        spokes = population.stack("spoke_dirs")
        for i in range(population.members[0].n_s):
            _, base = euclideanize_pns(spokes[:, i])
            assert angle(mean.spoke_dirs[i], base) < 1e-6

    def test_empty(self):
        with pytest.raises(DsRepError, match="empty"):
            mean_lp([])

    def test_mixed_scaling(self, template_lp):
        with pytest.raises(DsRepError, match="mixes"):
            LpPopulation((template_lp, scale_lp(template_lp)))


# --------------------------------------------------------------------------
# GPA


def shape(seed, n=12):
    return np.random.default_rng(seed).normal(size=(n, 3)) * [3, 2, 1]


class TestGpa:
    def test_rotated_copy(self):
        X = shape(0)
        Y = X @ axis_angle_matrix(E3, np.pi / 2).T + [1, 2, 3]
        res = gpa_align([X, Y])
        assert np.abs(res.aligned[0] - res.aligned[1]).max() < 1e-9

    def test_translation_only(self):
        X = shape(1)
        res = gpa_align([X, X + [5, 0, 0], X - [0, 2, 1]], with_scaling=False)
        centered = X - X.mean(axis=0)
        for Y in res.aligned:
            np.testing.assert_allclose(Y, centered, atol=1e-12)

    def test_objective_monotone_and_better_than_first_shape(self):
        rng = np.random.default_rng(2)
        base = shape(2)
        configs = [(base + rng.normal(scale=0.3, size=base.shape)) @ random_rotation(rng).T * s
                   for s in rng.uniform(0.5, 2.0, 10)]
        for scaling in (True, False):
            res = gpa_align(configs, with_scaling=scaling)
            assert np.all(np.diff(res.objective) <= 1e-12)
            # baseline: align everything to the first shape once
            C = res.aligned / 1.0
            first = (configs[0] - configs[0].mean(0)) * (res.scales[0])
            pair = []
            for X, s in zip(configs, res.scales):
                Xc = (X - X.mean(0)) * s
                U, _, Vt = np.linalg.svd(Xc.T @ first)
                d = np.sign(np.linalg.det(U @ Vt))
                pair.append(Xc @ (U @ np.diag([1, 1, d]) @ Vt))
            pair = np.array(pair)
            baseline = np.sum((pair - pair.mean(0)) ** 2)
            assert np.sum((C - C.mean(0)) ** 2) <= baseline + 1e-12

    @settings(max_examples=20)
    @given(st.integers(0, 9), st.integers(0, 2 ** 32 - 1))
    def test_single_pre_rotation(self, which, seed):
        configs = [shape(s) for s in range(10)]
        base = gpa_align(configs)
        moved = list(configs)
        moved[which] = configs[which] @ random_rotation(np.random.default_rng(seed)).T
        again = gpa_align(moved)
        def pairwise(res):
            return np.linalg.norm(res.aligned[:, None] - res.aligned[None], axis=(2, 3))
        np.testing.assert_allclose(pairwise(again), pairwise(base), atol=1e-8)

    def test_degenerate(self):
        with pytest.raises(DsRepError, match="degenerate"):
            gpa_align([np.zeros((5, 3)), shape(0, 5)])
