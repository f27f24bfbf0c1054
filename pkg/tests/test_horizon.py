import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from omnigyro.errors import (DegenerateMeanError, DegenerateNormalError, EmptyHeatmapError,
                             InvalidDimensionsError, NoConsensusError)
from omnigyro.horizon import (HeatMapPair, RansacConfig, WeightedSpherePoints, estimate_vertical,
                              heatmap_to_sphere, horizon_attitude, load_heatmaps,
                              ransac_horizon_plane, rollpitch_from_normal, save_heatmaps,
                              synth_heatmaps)
from omnigyro.sphere import (direction_to_equirect, equirect_to_direction, rot_x,
                             rpy_to_rotation)

Z = np.array([0.0, 0.0, 1.0])


def angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(a @ b / np.linalg.norm(a) / np.linalg.norm(b), -1, 1)))


def great_circle(normal, n, rng=None, jitter_deg=0.0):
    normal = normal / np.linalg.norm(normal)
    a = np.cross(normal, [1.0, 0, 0] if abs(normal[0]) < 0.9 else [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    t = np.linspace(0, 2 * np.pi, n, endpoint=False) if rng is None else rng.uniform(0, 2 * np.pi, n)
    P = np.cos(t)[:, None] * a + np.sin(t)[:, None] * b
    if jitter_deg:
        e = np.deg2rad(jitter_deg) * rng.normal(size=n)
        P = np.cos(e)[:, None] * P + np.sin(e)[:, None] * normal
    return P


def pts(P, w=None):
    return WeightedSpherePoints(np.asarray(P, float), np.ones(len(P)) if w is None else np.asarray(w, float))


class TestHeatmapToSphere:
    def test_single_hot_pixel(self):
        hm = np.zeros((16, 32))
        hm[5, 9] = 0.8
        out = heatmap_to_sphere(hm)
        assert len(out) == 1
        np.testing.assert_allclose(out.points[0], equirect_to_direction(9, 5, 32, 16))
        assert out.weights[0] == 0.8

    def test_zero_grid(self):
        with pytest.raises(EmptyHeatmapError):
            heatmap_to_sphere(np.zeros((16, 32)))

    def test_band_near_true_circle(self):
        R = rpy_to_rotation(0.3, -0.2, 1.0)
        hm = synth_heatmaps(R, 256, 128, sigma_deg=2.0)
        # a pixel passes tau iff exp(-a^2 / 2 sigma^2) > tau, i.e. a < sigma sqrt(2 ln(1/tau))
        for tau, bound in ((0.65, 2.0), (0.3, 2.0 * np.sqrt(2 * np.log(1 / 0.3)))):
            p = heatmap_to_sphere(hm.horizon, tau)
            dev = np.degrees(np.abs(np.arcsin(p.points @ (R @ Z))))
            assert dev.max() < bound

    def test_threshold_relative_to_peak(self):
        hm = np.zeros((4, 8))
        hm[0, 0], hm[1, 1], hm[2, 2] = 0.5, 0.2, 0.1
        assert len(heatmap_to_sphere(hm, 0.3)) == 2


class TestEstimateVertical:
    def test_single(self):
        np.testing.assert_allclose(estimate_vertical(pts([Z])), Z)

    def test_antipodal_pair_folds_up(self):
        np.testing.assert_allclose(estimate_vertical(pts([Z, -Z])), Z)

    def test_downward_single_reported_up(self):
        np.testing.assert_allclose(estimate_vertical(pts([-Z])), Z)

    def test_noisy_cluster(self, rng):
        target = rot_x(np.deg2rad(10)) @ Z
        # 200 samples around target and its antipode, 5 deg spread
        e = np.deg2rad(5) * rng.normal(size=(200, 2))
        a = np.cross(target, [1.0, 0, 0]); a /= np.linalg.norm(a)
        b = np.cross(target, a)
        P = target + e[:, :1] * a + e[:, 1:] * b
        P /= np.linalg.norm(P, axis=1, keepdims=True)
        P[::2] *= -1
        assert angle_deg(estimate_vertical(pts(P, rng.uniform(0.5, 1, 200))), target) < 1.5

    def test_degenerate(self):
        with pytest.raises(DegenerateMeanError):
            estimate_vertical(WeightedSpherePoints(np.zeros((2, 3)), np.ones(2)))

    def test_empty(self):
        with pytest.raises(EmptyHeatmapError):
            estimate_vertical(WeightedSpherePoints(np.zeros((0, 3)), np.zeros(0)))


class TestRansac:
    def test_noiseless(self):
        plane = ransac_horizon_plane(pts(great_circle(Z, 50)), Z)
        assert angle_deg(plane.normal, Z) < np.degrees(1e-6)
        assert plane.inlier_ratio == 1.0

    def test_outliers(self, rng):
        normal = rot_x(0.2) @ Z
        P = great_circle(normal, 70, rng)
        out = rng.normal(size=(30, 3))
        out /= np.linalg.norm(out, axis=1, keepdims=True)
        plane = ransac_horizon_plane(pts(np.vstack([P, out])), Z, rng=1)
        assert angle_deg(plane.normal, normal) < 1.0
        assert plane.inlier_ratio >= 0.6

    def test_gate_rejects_40deg_plane(self):
        with pytest.raises(NoConsensusError):
            ransac_horizon_plane(pts(great_circle(rot_x(np.deg2rad(40)) @ Z, 50)), Z)

    def test_too_few_points(self):
        with pytest.raises(NoConsensusError):
            ransac_horizon_plane(pts([Z]), Z)

    def test_min_inliers(self, rng):
        P = rng.normal(size=(200, 3))
        P /= np.linalg.norm(P, axis=1, keepdims=True)
        with pytest.raises(NoConsensusError):
            ransac_horizon_plane(pts(P), Z, RansacConfig(min_inliers=0.5))

    def test_gate_never_violated(self, rng):
        for seed in range(30):
            r = np.random.default_rng(seed)
            P = np.vstack([great_circle(r.normal(size=3), 80, r, 1.0), r.normal(size=(40, 3))])
            P /= np.linalg.norm(P, axis=1, keepdims=True)
            v = r.normal(size=3)
            v /= np.linalg.norm(v)
            try:
                plane = ransac_horizon_plane(pts(P), v, RansacConfig(min_inliers=0.0), rng=seed)
            except NoConsensusError:
                continue
            assert angle_deg(plane.normal, v) <= 30.0 + 1e-9

    def test_normal_sign_follows_vertical(self):
        plane = ransac_horizon_plane(pts(great_circle(-Z, 40)), Z)
        assert plane.normal @ Z > 0

    def test_deterministic(self, rng):
        P = np.vstack([great_circle(rot_x(0.1) @ Z, 60, rng, 1.0), rng.normal(size=(20, 3))])
        P /= np.linalg.norm(P, axis=1, keepdims=True)
        a = ransac_horizon_plane(pts(P), Z, rng=5)
        b = ransac_horizon_plane(pts(P), Z, rng=5)
        assert np.array_equal(a.normal, b.normal) and a.inlier_ratio == b.inlier_ratio


class TestRollPitch:
    def test_level(self):
        assert rollpitch_from_normal(Z) == (0.0, 0.0)

    def test_closed_form_roll(self):
        t = np.deg2rad(10)
        r, p = rollpitch_from_normal(np.array([0, np.sin(t), np.cos(t)]))
        assert r == pytest.approx(t, abs=1e-15) and p == pytest.approx(0, abs=1e-15)

    def test_composition_oracle(self, rng):
        for _ in range(2000):
            r, p = rng.uniform(-np.deg2rad(85), np.deg2rad(85), 2)
            n = rpy_to_rotation(r, p, 0).T @ Z
            rr, pp = rollpitch_from_normal(n)
            assert abs(rr - r) < 1e-9 and abs(pp - p) < 1e-9
            np.testing.assert_allclose(rpy_to_rotation(rr, pp, 0).T @ Z, n, atol=1e-9)

    def test_down(self):
        with pytest.raises(DegenerateNormalError):
            rollpitch_from_normal(-Z)


class TestSynth:
    def test_identity_peak_on_equator(self):
        hm = synth_heatmaps(np.eye(3), 64, 32)
        # rows 15 and 16 straddle theta = 0 symmetrically
        rows = hm.horizon.max(axis=1)
        assert rows[15] == rows.max() and rows[16] == rows.max()
        assert np.allclose(hm.horizon[15], hm.horizon[15, 0])

    def test_vertical_hottest_pixel(self, rng):
        for _ in range(10):
            R = Rotation.random(random_state=rng).as_matrix()
            hm = synth_heatmaps(R, 128, 64)
            u, v = direction_to_equirect(R @ Z, 128, 64)
            # both blobs peak at 1; the one for +R z sits on the nearest pixel centre
            iv = min(int(np.floor(v + 0.5)), 63)
            iu = int(np.floor(u + 0.5)) % 128
            assert hm.vertical[iv, iu] == pytest.approx(hm.vertical.max(), abs=1e-12)
            assert hm.vertical.max() == pytest.approx(1.0, abs=1e-12)

    def test_range_with_noise(self):
        hm = synth_heatmaps(np.eye(3), 64, 32, noise=0.5, rng=3)
        assert hm.horizon.min() >= 0 and hm.horizon.max() <= 1

    def test_bad_dims(self):
        with pytest.raises(InvalidDimensionsError):
            synth_heatmaps(np.eye(3), 60, 32)

    def test_pair_validation(self):
        with pytest.raises(InvalidDimensionsError):
            HeatMapPair(np.zeros((4, 8)), np.zeros((4, 6)))

    def test_file_round_trip(self, tmp_path):
        hm = synth_heatmaps(rot_x(0.2), 64, 32)
        save_heatmaps(hm, tmp_path, "000003")
        assert (tmp_path / "000003_horizon.png").exists()
        back = load_heatmaps(tmp_path, "000003")
        assert np.abs(back.horizon - hm.horizon).max() <= 0.5 / 255 + 1e-12


class TestChain:
    def test_recovers_rollpitch(self, rng):
        errs = []
        for k in range(10):
            r, p = np.deg2rad(rng.uniform(-60, 60, 2))
            Rc = rpy_to_rotation(r, p, rng.uniform(-np.pi, np.pi))
            res = horizon_attitude(synth_heatmaps(Rc.T, 256, 128, 2.0, 0.1, rng=k), rng=k)
            # roll/pitch of the camera are those of Rc with yaw removed
            n_true = Rc.T @ Z
            errs.append(angle_deg(res.normal, n_true))
        assert np.mean(errs) < 1.0

    def test_equivariance(self, rng):
        R = rpy_to_rotation(0.2, 0.3, 0.0)
        base = horizon_attitude(synth_heatmaps(R, 256, 128), rng=0).normal
        for _ in range(5):
            Q = Rotation.random(random_state=rng).as_matrix()
            if (Q @ R @ Z)[2] < 0.2:
                continue
            moved = horizon_attitude(synth_heatmaps(Q @ R, 256, 128), rng=0).normal
            assert angle_deg(moved, Q @ base) < 2.0

    def test_empty_heatmaps(self):
        with pytest.raises(EmptyHeatmapError):
            horizon_attitude(HeatMapPair(np.zeros((16, 32)), np.zeros((16, 32))))
