import timeit

import numpy as np
import pytest

from omnigyro import kernels
from omnigyro.errors import DimensionsMismatchError
from omnigyro.mpp import build_mpp, yaw_cost_and_derivatives
from omnigyro.panorama import EquirectImage, rotate_equirect
from omnigyro.pvg import (PhotometricProblem, PvgConfig, refine_rotation, sample_spherical,
                          spherical_gradient)
from omnigyro.sphere import (IcosphereGrid, axis_angle_rotation, build_icosphere,
                             equirect_to_direction, exp_so3, geodesic_angle, rot_x, rot_z,
                             rpy_to_rotation)
from omnigyro.synthetic import SmoothScene

AXES = np.eye(3)


def tangent_basis(y):
    a = np.cross(y, [0.3, 0.5, 0.8])
    a /= np.linalg.norm(a, axis=-1, keepdims=True)
    return a, np.cross(y, a)


def random_dirs(rng, n, max_lat_deg=75):
    lon = rng.uniform(-np.pi, np.pi, n)
    lat = np.deg2rad(rng.uniform(-max_lat_deg, max_lat_deg, n))
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def very_smooth_scene(seed):
    """Wide low blobs and a soft horizon: no clipping, small third derivatives."""
    s = SmoothScene.random(seed, n_blobs=25, min_width_deg=20, max_width_deg=40)
    return SmoothScene(s.centers, 0.3 * s.amplitudes, s.widths, horizon_softness=0.6)


class TestSampleSpherical:
    def test_uniform(self):
        img = EquirectImage(np.full((64, 128), 0.3))
        out = sample_spherical(img, build_icosphere(3), rpy_to_rotation(0.4, 0.2, 1.0))
        np.testing.assert_allclose(out.values, 0.3)

    def test_pixel_centres(self, rng):
        a = rng.random((32, 64))
        uu, vv = rng.integers(0, 64, 30), rng.integers(0, 32, 30)
        grid = IcosphereGrid(0, equirect_to_direction(uu, vv, 64, 32), np.zeros((0, 3), int))
        np.testing.assert_allclose(sample_spherical(EquirectImage(a), grid).values, a[vv, uu], atol=1e-12)

    def test_commutes_with_resampling(self, ref_img):
        grid = build_icosphere(5)
        R = rpy_to_rotation(0.3, -0.2, 0.9)
        a = sample_spherical(ref_img, grid, R).values
        b = sample_spherical(rotate_equirect(ref_img, R), grid).values
        assert np.abs(a - b).mean() < 0.02

    def test_level5_size(self, ref_img):
        assert sample_spherical(ref_img, 5).values.shape == (10242,)


class TestSphericalGradient:
    def test_constant(self, rng):
        img = EquirectImage(np.full((64, 128), 0.5))
        assert not spherical_gradient(img, random_dirs(rng, 100)).any()

    def test_horizontal_ramp(self, rng):
        W, H = 256, 128
        uu = np.tile(np.arange(W, dtype=float), (H, 1))
        img = EquirectImage(uu / W)
        y = random_dirs(rng, 400, 70)
        u, _ = np.divmod(np.arctan2(y[:, 1], y[:, 0]) + np.pi, 2 * np.pi)[1] * W / (2 * np.pi) - 0.5, None
        # keep away from the seam where the ramp jumps from 1 back to 0
        y = y[(u > 2) & (u < W - 3)]
        g = spherical_gradient(img, y)
        rho2 = y[:, 0] ** 2 + y[:, 1] ** 2
        # I = (phi + pi) / (2 pi) + const  =>  grad I = (-y1, y0, 0) / (2 pi rho^2)
        expected = np.column_stack([-y[:, 1], y[:, 0], np.zeros(len(y))]) / (2 * np.pi * rho2[:, None])
        np.testing.assert_allclose(g, expected, rtol=1e-9, atol=1e-12)
        # magnitude grows as 1 / cos(latitude)
        np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1 / (2 * np.pi * np.sqrt(rho2)), rtol=1e-9)

    def test_tangent(self, ref_img, rng):
        R = rpy_to_rotation(0.2, 0.4, -1.0)
        x = random_dirs(rng, 500, 89)
        g = spherical_gradient(ref_img, x, R)
        np.testing.assert_allclose(np.einsum("ij,ij->i", g, x @ R), 0.0, atol=1e-9)

    def test_pole_guard(self, ref_img):
        g, ok = spherical_gradient(ref_img, np.array([0.0, 0.0, 1.0]), return_mask=True)
        assert not ok and not g.any()
        g, ok = spherical_gradient(ref_img, np.array([0.0, 0.01, -1.0]) / np.hypot(0.01, 1), return_mask=True)
        assert not ok and not g.any()

    def test_finite_difference(self, rng):
        img = very_smooth_scene(3).render(1024)
        y = random_dirs(rng, 2000, 70)
        t1, t2 = tangent_basis(y)
        h = 1e-4
        g = spherical_gradient(img, y)
        from omnigyro.panorama import sample_directions
        est, fd = [], []
        for t in (t1, t2):
            plus = np.cos(h) * y + np.sin(h) * t
            minus = np.cos(h) * y - np.sin(h) * t
            fd.append((sample_directions(img, plus) - sample_directions(img, minus)) / (2 * h))
            est.append(np.einsum("ij,ij->i", g, t))
        est, fd = np.concatenate(est), np.concatenate(fd)
        assert np.linalg.norm(est - fd) / np.linalg.norm(fd) < 2e-2


def _problem(seed, width=1024, level=4):
    scene = very_smooth_scene(seed)
    ref = scene.render(width)
    Rc = rpy_to_rotation(*np.random.default_rng(seed).uniform(-0.3, 0.3, 3))
    return PhotometricProblem(ref, scene.render(width, Rc), level), Rc


class TestJacobian:
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed, backend):
        prob, Rc = _problem(seed)
        R = exp_so3(np.deg2rad([1.0, -0.5, 0.7])) @ Rc
        _, J = prob.residuals_and_jacobian(R)
        h = 1e-2
        fd = np.column_stack([
            (prob.residuals(exp_so3(h * e) @ R) - prob.residuals(exp_so3(-h * e) @ R)) / (2 * h)
            for e in AXES])
        # the step spans about two pixels, averaging out the piecewise-linear texture
        assert np.linalg.norm(J - fd) / np.linalg.norm(fd) < 1e-3

    def test_normal_equations_match_jacobian(self, backend):
        prob, Rc = _problem(1)
        R = rot_x(0.05) @ Rc
        r, J = prob.residuals_and_jacobian(R)
        c, JtJ, Jtr = prob.normal_equations(R)
        assert c == pytest.approx(r @ r, rel=1e-12)
        np.testing.assert_allclose(JtJ, J.T @ J, rtol=1e-10)
        np.testing.assert_allclose(Jtr, J.T @ r, rtol=1e-10, atol=1e-12)

    def test_sign_pinned(self):
        # a small step along -J^T r must lower the cost
        prob, Rc = _problem(2)
        R = rot_z(np.deg2rad(2)) @ Rc
        r, J = prob.residuals_and_jacobian(R)
        step = -1e-3 * (J.T @ r) / np.linalg.norm(J.T @ r)
        assert prob.cost(exp_so3(step) @ R) < prob.cost(R)

    def test_residual_count(self, ref_img):
        prob = PhotometricProblem(ref_img, ref_img, 5)
        assert prob.residuals(np.eye(3)).shape == (10242,)
        assert prob.residuals_and_jacobian(np.eye(3))[1].shape == (10242, 3)


def test_fast_atan2_accuracy(rng):
    y, x = rng.normal(size=(2, 200_000))
    y[:10] = 0.0
    x[10:20] = 0.0
    ours = kernels.atan2_nb(y, x)
    ref = np.arctan2(y, x)
    diff = np.abs((ours - ref + np.pi) % (2 * np.pi) - np.pi)
    assert diff.max() < 2e-15


class TestRefine:
    def test_self(self, ref_img):
        res = refine_rotation(ref_img, ref_img)
        assert geodesic_angle(res.rotation, np.eye(3)) < 1e-9
        assert res.final_cost < 1e-20
        assert res.iterations <= 2 and res.converged

    @pytest.mark.parametrize("axis", range(3))
    def test_ten_degree_offset(self, axis):
        scene = SmoothScene.random(10 + axis)
        Rc = axis_angle_rotation(AXES[axis], np.deg2rad(8))
        ref, cur = scene.render(512), scene.render(512, Rc)
        R0 = axis_angle_rotation(AXES[axis], np.deg2rad(10)) @ Rc
        res = refine_rotation(ref, cur, R0)
        assert np.degrees(geodesic_angle(res.rotation, Rc)) < 0.1

    def test_monotone(self):
        scene = SmoothScene.random(4)
        Rc = rpy_to_rotation(0.1, 0.05, -0.2)
        res = refine_rotation(scene.render(512), scene.render(512, Rc),
                              rot_z(np.deg2rad(12)) @ Rc)
        h = np.array(res.cost_history)
        assert h[0] == res.initial_cost and h[-1] == res.final_cost
        assert np.all(np.diff(h) < 0)
        assert res.final_cost <= res.initial_cost

    def test_left_composition(self):
        # transforming both images by Q conjugates the solution: Q R Q^T
        scene = SmoothScene.random(8)
        ref = scene.render(512)
        Rc = rpy_to_rotation(0.05, -0.04, 0.1)
        cur = scene.render(512, Rc)
        R0 = rot_z(np.deg2rad(6)) @ Rc
        Q = rpy_to_rotation(0.3, 0.2, -0.7)
        base = refine_rotation(ref, cur, R0).rotation
        moved = refine_rotation(rotate_equirect(ref, Q), rotate_equirect(cur, Q), Q @ R0 @ Q.T).rotation
        assert np.degrees(geodesic_angle(moved, Q @ base @ Q.T)) < 0.05

    def test_right_composition(self):
        # transforming only the current image by Q composes the solution with Q
        scene = SmoothScene.random(8)
        ref = scene.render(512)
        Rc = rpy_to_rotation(0.05, -0.04, 0.1)
        cur = scene.render(512, Rc)
        R0 = rot_z(np.deg2rad(6)) @ Rc
        Q = rpy_to_rotation(0.1, -0.05, 0.2)
        base = refine_rotation(ref, cur, R0).rotation
        moved = refine_rotation(ref, rotate_equirect(cur, Q), R0 @ Q.T).rotation
        assert np.degrees(geodesic_angle(moved, base @ Q.T)) < 0.05

    def test_shape_mismatch(self, ref_img):
        with pytest.raises(DimensionsMismatchError):
            refine_rotation(ref_img, SmoothScene.random(1).render(128))

    def test_max_iters(self):
        scene = SmoothScene.random(4)
        res = refine_rotation(scene.render(256), scene.render(256, rot_z(0.1)), None,
                              PvgConfig(max_iters=1))
        assert res.iterations == 1 and not res.converged

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PvgConfig(level=9)
        with pytest.raises(ValueError):
            PvgConfig(step_tol=0)


def _pvg_iteration_time(prob, R):
    c, Hm, g = prob.normal_equations(R)

    def one():
        delta = np.linalg.solve(Hm + 1e-3 * np.diag(np.diag(Hm)), -g)
        return prob.normal_equations(exp_so3(delta) @ R)

    one()
    return min(timeit.repeat(one, number=20, repeat=7)) / 20


def test_runtime_pvg_iteration_vs_mpp_evaluation():
    """One LM iteration at n=5 against one full-sum MPP C, C', C'' at n=3."""
    scene = SmoothScene.random(1)
    ref, cur = scene.render(1024), scene.render(1024, rpy_to_rotation(0.05, 0.02, 0.1))
    prob = PhotometricProblem(ref, cur, 5)
    t_pvg = _pvg_iteration_time(prob, rpy_to_rotation(0.04, 0.01, 0.09))
    A, B = build_mpp(ref, 3), build_mpp(cur, 3)
    f = lambda: yaw_cost_and_derivatives(A, B, (0.0, 0.0), 0.3, truncation=0.0)
    f()
    t_mpp = min(timeit.repeat(f, number=3, repeat=7)) / 3
    ratio = t_mpp / t_pvg
    print(f"pvg iteration {t_pvg * 1e3:.3f} ms, mpp evaluation {t_mpp * 1e3:.3f} ms, ratio {ratio:.1f}")
    assert ratio >= 10.0
