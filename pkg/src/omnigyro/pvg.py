"""Photometric gyroscope: per-vertex brightness on a fine icosphere, refined over
SO(3) by Levenberg-Marquardt with image-plane gradients."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionsMismatchError
from .panorama import sample_directions
from .sphere import (IcosphereGrid, build_icosphere, direction_to_equirect, exp_so3,
                     project_to_so3)


@dataclass(frozen=True)
class PvgConfig:
    level: int = 5
    max_iters: int = 100
    step_tol: float = 1e-6
    lambda0: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.level <= 7:
            raise ValueError("pvg.level must be in [0, 7]")
        if self.max_iters < 1:
            raise ValueError("pvg.max_iters must be >= 1")
        if self.step_tol <= 0:
            raise ValueError("pvg.step_tol must be > 0")


@dataclass(frozen=True, eq=False)
class SphericalBrightness:
    grid: IcosphereGrid
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class RefineResult:
    rotation: np.ndarray
    final_cost: float
    iterations: int
    converged: bool
    initial_cost: float
    cost_history: tuple = ()  # cost at the start and after every accepted step


def sample_spherical(img, grid, R=None):
    """``values[k] = img(R.T @ x_k)``."""
    if isinstance(grid, int):
        grid = build_icosphere(grid)
    X = grid.vertices if R is None else grid.vertices @ np.asarray(R, dtype=np.float64)
    return SphericalBrightness(grid, np.asarray(sample_directions(img, X)))


def gradient_stack(img):
    """(H, W, 3) stack of intensity, d/du and d/dv (central differences).

    d/du wraps around the seam; d/dv is one-sided on the first and last rows.
    """
    I = img.intensity
    du = 0.5 * (np.roll(I, -1, axis=1) - np.roll(I, 1, axis=1))
    dv = np.gradient(I, axis=0)
    return np.ascontiguousarray(np.stack([I, du, dv], axis=2))


def spherical_gradient(img, x, R=None, return_mask=False, stack=None):
    """Brightness gradient w.r.t. direction at ``y = R.T @ x``, tangent at y.

    Zero (and flagged False in the mask) within one pixel row of a pole.
    Accepts a single direction or an (N, 3) array.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(-1, 3)
    y = X if R is None else X @ np.asarray(R, dtype=np.float64)
    H, W = img.shape
    if stack is None:
        stack = gradient_stack(img)
    u, v = direction_to_equirect(y, W, H)
    v_raw = (0.5 * np.pi - np.arcsin(np.clip(y[:, 2], -1.0, 1.0))) * H / np.pi - 0.5
    s = kernels.bilinear_sample(stack[:, :, 1:], u, v)
    g, ok = kernels.direction_gradient_np(y, s[:, 0], s[:, 1], v_raw, W, H)
    if single:
        g, ok = g[0], bool(ok[0])
    return (g, ok) if return_mask else g


class PhotometricProblem:
    """Residuals ``ref(x_k) - cur(R.T x_k)`` and their left-tangent Jacobian."""

    def __init__(self, ref, cur, level=5):
        if ref.shape != cur.shape:
            raise DimensionsMismatchError(f"image shapes differ: {ref.shape} vs {cur.shape}")
        self.grid = build_icosphere(level) if isinstance(level, int) else level
        H, W = cur.shape
        u, v = direction_to_equirect(self.grid.vertices, W, H)
        # visit vertices in image row order: the samples stay cache-local near R = I
        self.order = np.lexsort((u, np.floor(v)))
        self.X = np.ascontiguousarray(self.grid.vertices[self.order])
        self.Xt = np.ascontiguousarray(self.X.T)
        self.ref_values = np.asarray(sample_directions(ref, self.X))
        self.H, self.W = cur.shape
        self.stack = gradient_stack(cur)

    def residuals(self, R):
        return kernels.photometric_residuals(self.Xt, R, self.stack, self.ref_values,
            columns=True)

    def cost(self, R):
        r = self.residuals(R)
        return float(r @ r)

    def residuals_and_jacobian(self, R):
        """J[k] = d r_k / d omega for the update ``R <- exp([omega]x) R``."""
        return kernels.photometric_residuals_jacobian(self.Xt, R, self.stack, self.ref_values,
            columns=True)

    def normal_equations(self, R):
        """``(cost, J.T J, J.T r)`` at R."""
        return kernels.photometric_normal_equations(self.Xt, R, self.stack, self.ref_values,
            columns=True)


def refine_rotation(ref, cur, R0=None, cfg=PvgConfig()):
    """Levenberg-Marquardt over SO(3) on the photometric SSD.

    Each accepted step strictly lowers the cost; the iteration stops when the
    tangent step drops below ``cfg.step_tol`` (converged) or after
    ``cfg.max_iters`` iterations.
    """
    prob = PhotometricProblem(ref, cur, cfg.level)
    R = np.eye(3) if R0 is None else project_to_so3(np.asarray(R0, dtype=np.float64))
    cost, Hm, g = prob.normal_equations(R)
    initial = cost
    history = [cost]
    lam = cfg.lambda0
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        damp = np.diag(Hm).copy()
        damp += 1e-12 * max(damp.max(), 1.0)
        try:
            delta = np.linalg.solve(Hm + lam * np.diag(damp), -g)
        except np.linalg.LinAlgError:
            break
        if np.linalg.norm(delta) < cfg.step_tol:
            converged = True
            break
        # one pass per iteration: the candidate's normal equations are kept on accept
        Rc = exp_so3(delta) @ R
        cc, Hc, gc = prob.normal_equations(Rc)
        if cc < cost:
            R, cost, Hm, g = Rc, cc, Hc, gc
            history.append(cost)
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return RefineResult(project_to_so3(R), cost, it, converged, initial, tuple(history))


def photometric_cost(ref, cur, R, level=5):
    return PhotometricProblem(ref, cur, level).cost(np.asarray(R, dtype=np.float64))
