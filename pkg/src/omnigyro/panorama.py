"""Panorama containers, image IO, bilinear sampling and resampling under rotation,
plus an equidistant dual-fisheye to equirectangular converter."""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import kernels
from .errors import InvalidDimensionsError, LensConfigError, MissingColorError
from .sphere import direction_to_equirect, pixel_directions

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class EquirectImage:
    """Grayscale intensity in [0, 1] with an optional RGB layer, W = 2H."""
    intensity: np.ndarray
    color: Optional[np.ndarray] = None

    def __post_init__(self):
        inten = np.asarray(self.intensity, dtype=np.float64)
        if inten.ndim != 2:
            raise InvalidDimensionsError(f"intensity must be 2-D, got shape {inten.shape}")
        H, W = inten.shape
        if W != 2 * H:
            raise InvalidDimensionsError(f"equirectangular images need W = 2H, got {W}x{H}")
        object.__setattr__(self, "intensity", np.clip(inten, 0.0, 1.0))
        if self.color is not None:
            col = np.asarray(self.color, dtype=np.float64)
            if col.shape != (H, W, 3):
                raise InvalidDimensionsError(f"color layer must be {(H, W, 3)}, got {col.shape}")
            object.__setattr__(self, "color", np.clip(col, 0.0, 1.0))

    @property
    def height(self):
        return self.intensity.shape[0]

    @property
    def width(self):
        return self.intensity.shape[1]

    @property
    def shape(self):
        return self.intensity.shape

    @classmethod
    def from_color(cls, color):
        color = np.asarray(color, dtype=np.float64)
        return cls(color @ LUMA, color)


def to_grayscale(img):
    """Luma (0.299 R + 0.587 G + 0.114 B) of the colour layer."""
    if img.color is None:
        raise MissingColorError("image has no colour layer")
    return EquirectImage(img.color @ LUMA, img.color)


def _read_8bit(path):
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            return arr, None
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return None, rgb


def load_equirect(path):
    """Read an 8-bit PNG/JPEG panorama; checks W = 2H."""
    gray, rgb = _read_8bit(path)
    arr = gray if gray is not None else rgb
    H, W = arr.shape[:2]
    if W != 2 * H:
        raise InvalidDimensionsError(f"{path}: equirectangular images need W = 2H, got {W}x{H}")
    if rgb is not None:
        return EquirectImage.from_color(rgb)
    return EquirectImage(gray)


def to_uint8(a):
    return np.clip(np.round(np.asarray(a) * 255.0), 0, 255).astype(np.uint8)


def save_equirect(img, path):
    """Write RGB when a colour layer exists, 8-bit grayscale otherwise."""
    if img.color is not None:
        Image.fromarray(to_uint8(img.color), mode="RGB").save(path)
    else:
        Image.fromarray(to_uint8(img.intensity), mode="L").save(path)


def load_gray(path):
    """8-bit image as a float array in [0, 1] (colour collapsed to luma)."""
    gray, rgb = _read_8bit(path)
    return gray if gray is not None else rgb @ LUMA


def save_gray(arr, path):
    Image.fromarray(to_uint8(arr), mode="L").save(path)


def _channels(img):
    if img.color is None:
        return img.intensity[:, :, None]
    return np.concatenate([img.intensity[:, :, None], img.color], axis=2)


def sample_bilinear(img, u, v):
    """Bilinear intensity lookup; u wraps across the +-pi seam, v is clamped.

    Scalars in give a float back, arrays give an array of the broadcast shape.
    """
    u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
    out = kernels.bilinear_sample(img.intensity[:, :, None], u.ravel(), v.ravel())[:, 0]
    if u.ndim == 0:
        return float(out[0])
    return out.reshape(u.shape)


def sample_directions(img, d):
    """Intensity seen along world directions ``d`` (..., 3)."""
    d = np.asarray(d, dtype=np.float64)
    u, v = direction_to_equirect(d, img.width, img.height)
    return sample_bilinear(img, u, v)


def _snap(a, tol=1e-7):
    r = np.round(a)
    return np.where(np.abs(a - r) < tol, r, a)


def rotate_equirect(img, R):
    """Resample so that ``out(d) = img(R.T @ d)`` for every pixel direction d.

    Content seen at direction d in ``img`` appears at ``R @ d`` in the result.
    The view of a camera with camera-to-world orientation ``Rc`` (reference
    camera at identity) is therefore ``rotate_equirect(ref, Rc.T)``.
    """
    R = np.asarray(R, dtype=np.float64)
    H, W = img.shape
    src = pixel_directions(W, H).reshape(-1, 3) @ R  # rows are (R.T @ d).T
    u, v = direction_to_equirect(src, W, H)
    # snap coordinates that land on a pixel centre up to round-off, so that
    # identity and grid-aligned rotations reproduce the input exactly
    u, v = _snap(u), _snap(v)
    out = kernels.bilinear_sample(_channels(img), u, v).reshape(H, W, -1)
    if img.color is None:
        return EquirectImage(out[:, :, 0])
    return EquirectImage(out[:, :, 0], out[:, :, 1:])


# ---------------------------------------------------------------------------
# dual fisheye

# lens axis, image-right, image-up in the camera frame (x fwd, y left, z up)
_FRONT_FRAME = (np.array([1.0, 0.0, 0.0]), np.array([0.0, -1.0, 0.0]), np.array([0.0, 0.0, 1.0]))
_REAR_FRAME = (np.array([-1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))


@dataclass(frozen=True)
class LensParams:
    """Equidistant fisheye lens: ``radius`` px corresponds to ``fov/2`` degrees."""
    cx: float
    cy: float
    radius: float
    fov: float

    @property
    def half_fov(self):
        return np.deg2rad(self.fov) / 2.0


@dataclass(frozen=True, eq=False)
class DualFisheyeImage:
    color: np.ndarray
    front: LensParams
    rear: LensParams

    def __post_init__(self):
        col = np.asarray(self.color, dtype=np.float64)
        if col.ndim == 2:
            col = np.repeat(col[:, :, None], 3, axis=2)
        object.__setattr__(self, "color", col)
        validate_lenses(self.front, self.rear)


def validate_lenses(front, rear):
    for name, lens in (("front", front), ("rear", rear)):
        if not 180.0 <= lens.fov <= 220.0:
            raise LensConfigError(f"{name}.fov must be within [180, 220], got {lens.fov}")
        if lens.radius <= 0:
            raise LensConfigError(f"{name}.radius must be positive")
    gap = np.hypot(front.cx - rear.cx, front.cy - rear.cy)
    if gap < front.radius + rear.radius - 1e-9:
        raise LensConfigError("front and rear lens circles overlap")


_LENS_KEYS = ("cx", "cy", "radius", "fov")


def parse_lens_config(text, source="<string>"):
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise LensConfigError(f"{source}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("lens."):
            key = key[5:]
        try:
            vals[key] = float(val)
        except ValueError:
            raise LensConfigError(f"{source}:{lineno}: {key} is not a number") from None
    lenses = []
    for side in ("front", "rear"):
        missing = [f"{side}.{k}" for k in _LENS_KEYS if f"{side}.{k}" not in vals]
        if missing:
            raise LensConfigError(f"{source}: missing keys {', '.join(missing)}")
        lenses.append(LensParams(*(vals[f"{side}.{k}"] for k in _LENS_KEYS)))
    validate_lenses(*lenses)
    return lenses[0], lenses[1]


def load_lens_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise LensConfigError(f"cannot read lens config {path}: {exc}") from None
    return parse_lens_config(text, str(path))


def format_lens_config(front, rear):
    lines = []
    for side, lens in (("front", front), ("rear", rear)):
        for k in _LENS_KEYS:
            lines.append(f"{side}.{k}={getattr(lens, k)!r}")
    return "\n".join(lines) + "\n"


def side_by_side_lenses(height, fov=190.0):
    """Two touching lens circles filling a (2*height) x height frame."""
    r = height / 2.0
    c = r - 0.5
    return LensParams(c, c, r, fov), LensParams(c + height, c, r, fov)


def _lens_project(d, lens, frame):
    axis, right, up = frame
    a = np.clip(d @ axis, -1.0, 1.0)
    alpha = np.arccos(a)
    psi = np.arctan2(d @ up, d @ right)
    r = lens.radius * alpha / lens.half_fov
    return lens.cx + r * np.cos(psi), lens.cy - r * np.sin(psi), alpha


def _sample_clamped(color, px, py):
    H, W, _ = color.shape
    return kernels.bilinear_sample(color, np.clip(px, 0.0, W - 1.0), np.clip(py, 0.0, H - 1.0))


def dualfisheye_to_equirect(df, out_width):
    """Equirectangular panorama of width ``out_width`` from a dual-fisheye frame.

    Directions seen by both lenses are blended linearly by their angular margin
    to each lens edge.
    """
    if out_width <= 0 or out_width % 2:
        raise InvalidDimensionsError("output width must be a positive even number")
    H = out_width // 2
    d = pixel_directions(out_width, H).reshape(-1, 3)
    fu, fv, a_f = _lens_project(d, df.front, _FRONT_FRAME)
    ru, rv, a_r = _lens_project(d, df.rear, _REAR_FRAME)
    m_f = df.front.half_fov - a_f
    m_r = df.rear.half_fov - a_r
    cov_f = m_f >= 0
    cov_r = m_r >= 0
    both = cov_f & cov_r
    tot = np.where(both, m_f + m_r, 1.0)
    w_f = np.where(both, np.where(tot > 0, m_f / np.where(tot > 0, tot, 1.0), 0.5),
                   np.where(cov_f, 1.0, 0.0))
    col = (w_f[:, None] * _sample_clamped(df.color, fu, fv)
           + (1.0 - w_f[:, None]) * _sample_clamped(df.color, ru, rv))
    return EquirectImage.from_color(col.reshape(H, out_width, 3))


def render_dualfisheye(img, front, rear, width, height):
    """Forward model: dual-fisheye frame seeing the panorama ``img``.

    Pixels outside both lens circles are black.
    """
    src = img.color if img.color is not None else np.repeat(img.intensity[:, :, None], 3, axis=2)
    src_img = EquirectImage(src @ LUMA, src)
    out = np.zeros((height, width, 3))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for lens, (axis, right, up) in ((front, _FRONT_FRAME), (rear, _REAR_FRAME)):
        dx = xx - lens.cx
        dy = -(yy - lens.cy)
        r = np.hypot(dx, dy)
        inside = r <= lens.radius
        alpha = r[inside] / lens.radius * lens.half_fov
        psi = np.arctan2(dy[inside], dx[inside])
        d = (np.cos(alpha)[:, None] * axis + (np.sin(alpha) * np.cos(psi))[:, None] * right
             + (np.sin(alpha) * np.sin(psi))[:, None] * up)
        u, v = direction_to_equirect(d, img.width, img.height)
        out[inside] = kernels.bilinear_sample(src_img.color, u, v)
    return DualFisheyeImage(out, front, rear)


def load_dualfisheye(path, front, rear):
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return DualFisheyeImage(rgb, front, rear)
