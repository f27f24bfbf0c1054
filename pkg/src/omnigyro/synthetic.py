"""Analytic smooth spherical scenes for fixtures and the ``synth`` command.

A scene is a continuous brightness function on the sphere (a soft sky/ground
split plus random spherical blobs), so panoramas of any camera orientation
can be rendered without resampling another raster.
"""
from dataclasses import dataclass

import numpy as np

from .panorama import EquirectImage
from .sphere import pixel_directions, rpy_to_rotation


@dataclass(frozen=True, eq=False)
class SmoothScene:
    centers: np.ndarray      # (K, 3) unit blob centres (world frame)
    amplitudes: np.ndarray   # (K,) signed blob amplitudes
    widths: np.ndarray       # (K,) blob angular widths, radians
    horizon_softness: float = 0.15

    @classmethod
    def random(cls, seed=0, n_blobs=40, min_width_deg=8.0, max_width_deg=25.0):
        rng = np.random.default_rng(seed)
        c = rng.normal(size=(n_blobs, 3))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        amp = rng.uniform(-0.25, 0.25, size=n_blobs)
        w = np.deg2rad(rng.uniform(min_width_deg, max_width_deg, size=n_blobs))
        return cls(c, amp, w)

    def brightness(self, d):
        """Brightness in [0, 1] along world directions ``d`` (..., 3)."""
        d = np.asarray(d, dtype=np.float64)
        base = 0.45 + 0.2 * np.tanh(d[..., 2] / self.horizon_softness)
        s = d @ self.centers.T
        blobs = np.exp((s - 1.0) / self.widths**2) @ self.amplitudes
        return np.clip(base + blobs, 0.0, 1.0)

    def render(self, width, R=None):
        """Panorama of a camera whose camera-to-world orientation is ``R``."""
        R = np.eye(3) if R is None else np.asarray(R, dtype=np.float64)
        d = pixel_directions(width, width // 2) @ R.T
        return EquirectImage(self.brightness(d))


def random_trajectory(n_frames, seed=0, max_tilt_deg=20.0, yaw_step_deg=12.0, tilt_step_deg=4.0):
    """Smooth random walk of (roll, pitch, yaw) in degrees, one row per frame."""
    rng = np.random.default_rng(seed)
    out = np.zeros((n_frames, 3))
    r, p, y = rng.uniform(-0.5, 0.5, 2).tolist() + [rng.uniform(-180.0, 180.0)]
    r *= max_tilt_deg
    p *= max_tilt_deg
    for i in range(n_frames):
        out[i] = (r, p, (y + 180.0) % 360.0 - 180.0)
        r = float(np.clip(r + rng.normal(0, tilt_step_deg), -max_tilt_deg, max_tilt_deg))
        p = float(np.clip(p + rng.normal(0, tilt_step_deg), -max_tilt_deg, max_tilt_deg))
        y += rng.normal(0, yaw_step_deg)
    return out


def trajectory_rotations(rpy_deg):
    return [rpy_to_rotation(*np.deg2rad(row)) for row in np.asarray(rpy_deg, dtype=np.float64)]
