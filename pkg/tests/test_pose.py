import numpy as np
import pytest

from stratdepth.errors import AlignmentError, DegenerateTrajectoryError, FormatError
from stratdepth.pose import (
    SE3,
    Trajectory,
    aligned_trajectory,
    ate,
    compose,
    quaternion_to_rotation,
    read_trajectory,
    rotation_to_quaternion,
    umeyama_alignment,
    write_trajectory,
)


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quaternion_to_rotation(*q)


def random_se3(rng, translation_scale=100.0):
    return SE3(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def random_trajectory(rng, n=20):
    poses = tuple(random_se3(rng) for _ in range(n))
    return Trajectory(np.arange(n, dtype=float), poses)


def transform_trajectory(traj, g: SE3, scale=1.0):
    poses = tuple(
        SE3(g.rotation @ p.rotation, scale * (g.rotation @ p.translation) + g.translation) for p in traj.poses
    )
    return Trajectory(traj.timestamps, poses)


class TestSE3:
    def test_compose_with_identity(self):
        rng = np.random.default_rng(0)
        p = random_se3(rng)
        q = compose(p, SE3.identity())
        assert np.array_equal(q.rotation, p.rotation)
        assert np.array_equal(q.translation, p.translation)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(1)
        p = random_se3(rng)
        r = compose(p, p.inverse())
        assert np.abs(r.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(r.translation).max() < 1e-9  # mm-scale translations cancel to float noise

    def test_associativity(self):
        rng = np.random.default_rng(2)
        p, q, r = (random_se3(rng, translation_scale=5.0) for _ in range(3))
        left = compose(compose(p, q), r)
        right = compose(p, compose(q, r))
        assert np.abs(left.rotation - right.rotation).max() < 1e-12
        assert np.abs(left.translation - right.translation).max() < 1e-12

    def test_apply_matches_matrix_action(self):
        rng = np.random.default_rng(3)
        p = random_se3(rng)
        pts = rng.standard_normal((10, 3))
        want = (p.rotation @ pts.T).T + p.translation
        assert np.abs(p.apply(pts) - want).max() < 1e-12

    def test_rejects_bad_rotation(self):
        with pytest.raises(ValueError):
            SE3(np.eye(3) * 1.001, np.zeros(3))


class TestQuaternions:
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            r = random_rotation(rng)
            assert np.abs(quaternion_to_rotation(*rotation_to_quaternion(r)) - r).max() < 1e-12

    def test_identity(self):
        assert rotation_to_quaternion(np.eye(3)) == (0.0, 0.0, 0.0, 1.0)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            quaternion_to_rotation(0, 0, 0, 0)


class TestAte:
    def test_identical_trajectories_zero_for_all_modes(self):
        rng = np.random.default_rng(5)
        traj = random_trajectory(rng)
        for mode in ("none", "se3", "sim3"):
            rmse, residuals = ate(traj, traj, align=mode)
            assert rmse < 1e-9
            assert residuals.shape == (len(traj),)

    def test_rigid_displacement(self):
        rng = np.random.default_rng(6)
        gt = random_trajectory(rng)
        g = random_se3(rng, translation_scale=50.0)
        est = transform_trajectory(gt, g)
        rmse_se3, _ = ate(gt, est, align="se3")
        assert rmse_se3 < 1e-9
        rmse_none, residuals = ate(gt, est, align="none")
        expected = float(np.sqrt(np.mean(np.linalg.norm(est.positions() - gt.positions(), axis=1) ** 2)))
        assert rmse_none == pytest.approx(expected, abs=1e-12)
        assert rmse_none > 1.0

    def test_uniform_scale_needs_sim3(self):
        rng = np.random.default_rng(7)
        gt = random_trajectory(rng)
        est = transform_trajectory(gt, SE3.identity(), scale=2.0)
        rmse_sim3, _ = ate(gt, est, align="sim3")
        assert rmse_sim3 < 1e-9
        rmse_se3, _ = ate(gt, est, align="se3")
        # closed form: doubling every position leaves the optimal rigid
        # rotation at identity, translation recenters, residual is the
        # centered point cloud itself
        centered = gt.positions() - gt.positions().mean(axis=0)
        expected = float(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
        assert rmse_se3 == pytest.approx(expected, rel=1e-6)
        # no rotation from a coarse random search beats the closed form
        best = min(
            float(
                np.sqrt(
                    np.mean(
                        np.sum(
                            (
                                2.0 * (gt.positions() - gt.positions().mean(axis=0)) @ random_rotation(rng).T
                                - centered
                            )
                            ** 2,
                            axis=1,
                        )
                    )
                )
            )
            for _ in range(500)
        )
        assert rmse_se3 <= best + 1e-9

    def test_alignment_hierarchy_on_random_trajectories(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            gt = random_trajectory(rng, n=int(rng.integers(4, 30)))
            est = Trajectory(
                gt.timestamps,
                tuple(
                    SE3(random_rotation(rng), p.translation + rng.normal(0, 5.0, 3))
                    for p in gt.poses
                ),
            )
            r_none, _ = ate(gt, est, "none")
            r_se3, _ = ate(gt, est, "se3")
            r_sim3, _ = ate(gt, est, "sim3")
            assert r_sim3 <= r_se3 + 1e-9
            assert r_se3 <= r_none + 1e-9

    def test_invariant_under_common_rigid_transform(self):
        rng = np.random.default_rng(9)
        gt = random_trajectory(rng)
        est = Trajectory(
            gt.timestamps,
            tuple(SE3(p.rotation, p.translation + rng.normal(0, 3.0, 3)) for p in gt.poses),
        )
        g = random_se3(rng, translation_scale=30.0)
        for mode in ("none", "se3", "sim3"):
            base, _ = ate(gt, est, mode)
            moved, _ = ate(transform_trajectory(gt, g), transform_trajectory(est, g), mode)
            assert abs(base - moved) < 1e-9

    def test_length_and_timestamp_mismatch(self):
        rng = np.random.default_rng(10)
        gt = random_trajectory(rng, n=5)
        short = Trajectory(gt.timestamps[:4], gt.poses[:4])
        with pytest.raises(AlignmentError):
            ate(gt, short)
        shifted = Trajectory(gt.timestamps + 0.5, gt.poses)
        with pytest.raises(AlignmentError):
            ate(gt, shifted, "none")

    def test_collinear_points_rejected_for_alignment(self):
        ts = np.arange(4, dtype=float)
        line = Trajectory(ts, tuple(SE3(np.eye(3), np.array([float(i), 0.0, 0.0])) for i in range(4)))
        with pytest.raises(DegenerateTrajectoryError):
            ate(line, line, "se3")
        rmse, _ = ate(line, line, "none")  # no alignment, no degeneracy
        assert rmse == 0.0

    def test_two_points_rejected_for_alignment(self):
        ts = np.arange(2, dtype=float)
        t = Trajectory(ts, (SE3.identity(), SE3(np.eye(3), np.array([1.0, 2.0, 3.0]))))
        with pytest.raises(DegenerateTrajectoryError):
            ate(t, t, "sim3")


class TestUmeyama:
    def test_recovers_known_similarity(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((30, 3)) * 10
        rot = random_rotation(rng)
        scale_true = 1.7
        t_true = np.array([4.0, -2.0, 9.0])
        y = scale_true * (x @ rot.T) + t_true
        scale, r, t = umeyama_alignment(x, y, with_scale=True)
        assert abs(scale - scale_true) < 1e-9
        assert np.abs(r - rot).max() < 1e-9
        assert np.abs(t - t_true).max() < 1e-7

    def test_reflection_guard(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((20, 3))
        y = x.copy()
        y[:, 2] *= -1  # a reflection, not reachable by a proper rotation
        _, r, _ = umeyama_alignment(x, y, with_scale=False)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


class TestTrajectoryIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        traj = random_trajectory(rng, n=7)
        path = tmp_path / "traj.txt"
        write_trajectory(path, traj)
        loaded = read_trajectory(path)
        assert np.array_equal(loaded.timestamps, traj.timestamps)
        for got, want in zip(loaded.poses, traj.poses):
            assert np.array_equal(got.translation, want.translation)
            assert np.abs(got.rotation - want.rotation).max() < 1e-12

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("# header\n\n0.0 1 2 3 0 0 0 1\n1.0 4 5 6 0 0 0 1  # inline\n")
        traj = read_trajectory(path)
        assert len(traj) == 2
        assert traj.poses[1].translation.tolist() == [4.0, 5.0, 6.0]

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("0.0 1 2 3 0 0 1\n")
        with pytest.raises(FormatError):
            read_trajectory(path)

    def test_non_monotone_timestamps_rejected(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n")
        with pytest.raises(FormatError):
            read_trajectory(path)

    def test_aligned_trajectory_matches_ate_residuals(self, tmp_path):
        rng = np.random.default_rng(14)
        gt = random_trajectory(rng)
        g = random_se3(rng, translation_scale=20.0)
        est = transform_trajectory(gt, g)
        out = aligned_trajectory(gt, est, "se3")
        assert np.abs(out.positions() - gt.positions()).max() < 1e-9
