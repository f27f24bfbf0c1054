"""Roll/pitch from a horizon-line heat-map and a vertical vanishing-point heat-map.

Both heat-maps are lifted to the unit sphere.  The vanishing-point blobs give
a rough vertical direction; a RANSAC great-circle fit on the horizon points,
restricted to normals within ``gate_deg`` of that vertical, gives the horizon
plane whose normal is world-up in the camera frame.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DegenerateMeanError, DegenerateNormalError, EmptyHeatmapError,
                     InvalidDimensionsError, NoConsensusError)
from .panorama import load_gray, save_gray
from .sphere import direction_to_equirect, equirect_to_direction, pixel_directions

_Z = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class HeatMapPair:
    horizon: np.ndarray
    vertical: np.ndarray

    def __post_init__(self):
        hz = np.asarray(self.horizon, dtype=np.float64)
        vt = np.asarray(self.vertical, dtype=np.float64)
        if hz.ndim != 2 or hz.shape != vt.shape:
            raise InvalidDimensionsError("heat-maps must be 2-D with matching shapes")
        if hz.shape[1] != 2 * hz.shape[0]:
            raise InvalidDimensionsError(f"heat-maps need W = 2H, got {hz.shape[1]}x{hz.shape[0]}")
        object.__setattr__(self, "horizon", np.clip(hz, 0.0, 1.0))
        object.__setattr__(self, "vertical", np.clip(vt, 0.0, 1.0))

    @property
    def shape(self):
        return self.horizon.shape


@dataclass(frozen=True, eq=False)
class WeightedSpherePoints:
    points: np.ndarray   # (N, 3)
    weights: np.ndarray  # (N,)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class HorizonPlane:
    normal: np.ndarray
    inlier_ratio: float


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_angle_deg: float = 2.0
    min_inliers: float = 0.3
    gate_deg: float = 30.0
    threshold: float = 0.3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("ransac.iterations must be >= 1")
        if not 0.0 < self.inlier_angle_deg < 90.0:
            raise ValueError("ransac.inlier_angle_deg must be in (0, 90)")
        if not 0.0 <= self.min_inliers <= 1.0:
            raise ValueError("ransac.min_inliers must be in [0, 1]")
        if not 0.0 < self.gate_deg <= 180.0:
            raise ValueError("ransac.gate_deg must be in (0, 180]")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError("ransac.threshold must be in [0, 1)")


@dataclass(frozen=True)
class HorizonResult:
    roll: float
    pitch: float
    normal: np.ndarray
    vertical: np.ndarray
    inlier_ratio: float


def heatmap_to_sphere(hm, threshold=0.3):
    """Directions and confidences of pixels above ``threshold * max(hm)``."""
    hm = np.asarray(hm, dtype=np.float64)
    H, W = hm.shape
    peak = hm.max() if hm.size else 0.0
    if peak <= 0.0:
        raise EmptyHeatmapError("heat-map has no positive confidence")
    vv, uu = np.nonzero(hm > threshold * peak)
    if vv.size == 0:
        raise EmptyHeatmapError("no heat-map pixel passes the threshold")
    return WeightedSpherePoints(equirect_to_direction(uu, vv, W, H), hm[vv, uu])


def estimate_vertical(pts):
    """Weighted mean direction with antipodal folding, upper hemisphere."""
    if len(pts) == 0:
        raise EmptyHeatmapError("no points")
    order = np.argsort(-pts.weights, kind="stable")
    P = pts.points[order]
    w = pts.weights[order]
    mean = w[0] * P[0]
    for p, wi in zip(P[1:], w[1:]):
        if p @ mean < 0.0:
            p = -p
        mean = mean + wi * p
    norm = np.linalg.norm(mean)
    if norm < 1e-6 * w.sum():
        raise DegenerateMeanError("folded mean direction vanishes")
    mean = mean / norm
    return -mean if mean[2] < 0.0 else mean


def _weighted_plane_normal(P, w):
    M = np.sqrt(w)[:, None] * P
    return np.linalg.svd(M, full_matrices=False)[2][-1]


def ransac_horizon_plane(pts, v_est, cfg=RansacConfig(), rng=0):
    """Great circle (plane through the origin) best supported by ``pts``.

    Hypotheses whose normal is more than ``cfg.gate_deg`` from ``v_est`` are
    dropped, both before scoring and after the least-squares refit.  Scoring
    is the confidence-weighted inlier count.
    """
    rng = np.random.default_rng(rng)
    P, w = pts.points, pts.weights
    N = len(pts)
    if N < 2:
        raise NoConsensusError("need at least two points")
    v_est = np.asarray(v_est, dtype=np.float64)
    v_est = v_est / np.linalg.norm(v_est)
    cos_gate = np.cos(np.deg2rad(cfg.gate_deg))
    sin_in = np.sin(np.deg2rad(cfg.inlier_angle_deg))

    i = rng.integers(N, size=cfg.iterations)
    j = rng.integers(N - 1, size=cfg.iterations)
    j = j + (j >= i)
    normals = np.cross(P[i], P[j])
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-9
    normals = normals[ok] / norms[ok, None]
    normals *= np.where(normals @ v_est < 0.0, -1.0, 1.0)[:, None]
    normals = normals[normals @ v_est >= cos_gate]
    if normals.shape[0] == 0:
        raise NoConsensusError(f"no hypothesis within {cfg.gate_deg} deg of the vertical estimate")

    best_score, best = -1.0, None
    for start in range(0, normals.shape[0], 64):
        chunk = normals[start:start + 64]
        scores = w @ (np.abs(P @ chunk.T) < sin_in)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score, best = scores[k], chunk[k]

    normal = best
    for _ in range(2):
        inl = np.abs(P @ normal) < sin_in
        if inl.sum() < 2:
            break
        refit = _weighted_plane_normal(P[inl], w[inl])
        if refit @ v_est < 0.0:
            refit = -refit
        if refit @ v_est < cos_gate:
            break
        normal = refit

    ratio = float(w[np.abs(P @ normal) < sin_in].sum() / w.sum())
    if ratio < cfg.min_inliers:
        raise NoConsensusError(f"inlier ratio {ratio:.3f} below {cfg.min_inliers}")
    assert normal @ v_est >= cos_gate - 1e-12
    return HorizonPlane(normal, ratio)


def rollpitch_from_normal(n):
    """(roll, pitch) such that ``rpy_to_rotation(roll, pitch, 0).T @ z == n``."""
    n = np.asarray(n, dtype=np.float64)
    if n[2] <= -1.0 + 1e-9:
        raise DegenerateNormalError("horizon normal points straight down")
    pitch = -float(np.arcsin(np.clip(n[0], -1.0, 1.0)))
    roll = float(np.arctan2(n[1], n[2]))
    return roll, pitch


def horizon_attitude(heatmaps, cfg=RansacConfig(), rng=0):
    """Full heat-map to roll/pitch chain."""
    v_pts = heatmap_to_sphere(heatmaps.vertical, cfg.threshold)
    v_est = estimate_vertical(v_pts)
    h_pts = heatmap_to_sphere(heatmaps.horizon, cfg.threshold)
    plane = ransac_horizon_plane(h_pts, v_est, cfg, rng)
    roll, pitch = rollpitch_from_normal(plane.normal)
    return HorizonResult(roll, pitch, plane.normal, v_est, plane.inlier_ratio)


def synth_heatmaps(R, W, H, sigma_deg=2.0, noise=0.0, rng=0):
    """Ideal heat-maps for an image whose world-up direction is ``R @ z``.

    For a camera with camera-to-world orientation ``Rc`` pass ``R = Rc.T``.
    Noise is uniform in [0, noise], added before clamping to [0, 1].
    """
    if W != 2 * H:
        raise InvalidDimensionsError(f"heat-maps need W = 2H, got {W}x{H}")
    R = np.asarray(R, dtype=np.float64)
    up = R @ _Z
    D = pixel_directions(W, H)
    two_s2 = 2.0 * np.deg2rad(sigma_deg) ** 2
    a = np.arcsin(np.clip(D @ up, -1.0, 1.0))
    horizon = np.exp(-a**2 / two_s2)
    vertical = np.zeros((H, W))
    for c in (up, -up):
        u, v = direction_to_equirect(c, W, H)
        cu = int(np.floor(u + 0.5)) % W
        cv = min(int(np.floor(v + 0.5)), H - 1)
        cdir = equirect_to_direction(cu, cv, W, H)
        b = np.arccos(np.clip(D @ cdir, -1.0, 1.0))
        vertical = np.maximum(vertical, np.exp(-b**2 / two_s2))
    if noise > 0.0:
        gen = np.random.default_rng(rng)
        horizon = horizon + gen.uniform(0.0, noise, size=horizon.shape)
        vertical = vertical + gen.uniform(0.0, noise, size=vertical.shape)
    return HeatMapPair(horizon, vertical)


def heatmap_paths(directory, frame_id):
    directory = Path(directory)
    return directory / f"{frame_id}_horizon.png", directory / f"{frame_id}_vertical.png"


def load_heatmaps(directory, frame_id):
    hp, vp = heatmap_paths(directory, frame_id)
    return HeatMapPair(load_gray(hp), load_gray(vp))


def save_heatmaps(hm, directory, frame_id):
    hp, vp = heatmap_paths(directory, frame_id)
    save_gray(hm.horizon, hp)
    save_gray(hm.vertical, vp)
