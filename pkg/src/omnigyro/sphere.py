"""Unit-sphere geometry shared by every stage.

Conventions
-----------
* Camera frame: x forward, y left, z up.
* Rotations are camera-to-world 3x3 matrices, ``d_world = R @ d_camera``.
* Euler angles compose as ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* Equirectangular pixel ``(u, v)`` (integer = pixel centre) maps to longitude
  ``phi = 2*pi*(u + 0.5)/W - pi`` and latitude ``theta = pi/2 - pi*(v + 0.5)/H``;
  row 0 is the top (up).
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import InvalidDimensionsError, LevelTooLargeError

MAX_ICOSPHERE_LEVEL = 7


class EulerRPY(NamedTuple):
    roll: float
    pitch: float
    yaw: float


def _check_dims(W, H):
    if W != 2 * H or H <= 0:
        raise InvalidDimensionsError(f"equirectangular images need W = 2H, got {W}x{H}")


def equirect_to_direction(u, v, W, H):
    """Pixel coordinates to unit directions; accepts scalars or arrays.

    Returns an array of shape ``broadcast(u, v).shape + (3,)``.
    """
    _check_dims(W, H)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    phi = 2.0 * np.pi * (u + 0.5) / W - np.pi
    theta = 0.5 * np.pi - np.pi * (v + 0.5) / H
    ct = np.cos(theta)
    return np.stack(np.broadcast_arrays(ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)), axis=-1)


def direction_to_equirect(d, W, H):
    """Inverse of :func:`equirect_to_direction`.

    ``u`` is wrapped into [0, W) and ``v`` clamped into [0, H).  At the poles
    ``u`` is whatever ``atan2`` gives.
    """
    _check_dims(W, H)
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    phi = np.arctan2(y, x)
    theta = np.arcsin(np.clip(z, -1.0, 1.0))
    u = np.mod((phi + np.pi) * W / (2.0 * np.pi) - 0.5, W)
    # mod can round up to exactly W for tiny negative inputs
    u = np.where(u >= W, u - W, u)
    v = np.clip((0.5 * np.pi - theta) * H / np.pi - 0.5, 0.0, np.nextafter(H, 0))
    return u, v


def pixel_directions(W, H):
    """(H, W, 3) directions of every pixel centre."""
    uu, vv = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    return equirect_to_direction(uu, vv, W, H)


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_rotation(roll, pitch=None, yaw=None):
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; also accepts a single EulerRPY."""
    if pitch is None and yaw is None:
        roll, pitch, yaw = roll
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def _wrap_half_open(a):
    # atan2 gives (-pi, pi]; the documented range is [-pi, pi)
    return -np.pi if a >= np.pi else float(a)


def wrap_angle(a):
    """Wrap radians into [-pi, pi)."""
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)


def rotation_to_rpy(R):
    """Inverse of :func:`rpy_to_rotation`.

    At gimbal lock (|pitch| = pi/2) roll is set to 0 and the remaining freedom
    goes into yaw.
    """
    R = np.asarray(R, dtype=np.float64)
    sp = -R[2, 0]
    pitch = float(np.arcsin(np.clip(sp, -1.0, 1.0)))
    cp = np.hypot(R[2, 1], R[2, 2])
    if cp < 1e-12:
        roll = 0.0
        yaw = np.arctan2(-R[0, 1], R[1, 1])
    else:
        pitch = float(np.arctan2(sp, cp))
        roll = np.arctan2(R[2, 1], R[2, 2])
        yaw = np.arctan2(R[1, 0], R[0, 0])
    return EulerRPY(_wrap_half_open(roll), pitch, _wrap_half_open(yaw))


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def exp_so3(w):
    """Rodrigues' formula for a rotation vector."""
    w = np.asarray(w, dtype=np.float64)
    th = float(np.linalg.norm(w))
    K = skew(w)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1.0 - np.cos(th)) / th**2 * K @ K


def axis_angle_rotation(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    return exp_so3(axis / np.linalg.norm(axis) * angle)


def geodesic_angle(Ra, Rb):
    """Angle in radians of the relative rotation ``Ra @ Rb.T``, in [0, pi]."""
    M = np.asarray(Ra, dtype=np.float64) @ np.asarray(Rb, dtype=np.float64).T
    c = (np.trace(M) - 1.0) / 2.0
    # the sine from the skew part keeps full precision where arccos(c) loses it (c near 1)
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.arctan2(s, c))


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=np.float64)
    return (R.shape == (3, 3) and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol)


def project_to_so3(M):
    """Closest rotation in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


# ---------------------------------------------------------------------------
# icosphere

@dataclass(frozen=True, eq=False)
class IcosphereGrid:
    """Midpoint-subdivided icosahedron.

    ``vertices`` is (10*4**n + 2, 3) and unit-norm; ``faces`` is (20*4**n, 3).
    Vertices of level n-1 are the leading rows of level n.
    """
    level: int
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def n_vertices(self):
        return self.vertices.shape[0]


def _icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def _subdivide(verts, faces):
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    edges = np.concatenate([np.stack([a, b], 1), np.stack([b, c], 1), np.stack([c, a], 1)])
    edges.sort(axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    nv = verts.shape[0]
    F = faces.shape[0]
    ab, bc, ca = nv + inv[:F], nv + inv[F:2 * F], nv + inv[2 * F:]
    new_faces = np.concatenate([
        np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
        np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
    ])
    return np.concatenate([verts, mids]), new_faces


@lru_cache(maxsize=None)
def build_icosphere(level):
    """Icosahedron subdivided ``level`` times (0 <= level <= 7)."""
    level = int(level)
    if level < 0:
        raise ValueError("icosphere level must be >= 0")
    if level > MAX_ICOSPHERE_LEVEL:
        raise LevelTooLargeError(f"icosphere level {level} exceeds {MAX_ICOSPHERE_LEVEL}")
    verts, faces = _icosahedron()
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    verts.setflags(write=False)
    faces.setflags(write=False)
    return IcosphereGrid(level, verts, faces)
