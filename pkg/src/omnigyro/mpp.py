"""Mixture of photometric potentials on an icosphere and yaw-only alignment.

Each icosphere vertex carries a spherical Gaussian lobe
``w_i * exp((x . v_i - 1) / lambda_g**2)`` weighted by the image intensity at
that vertex.  Two mixtures are compared by the sum of squared differences of
their values at the grid vertices, and the yaw that minimises it is found by a
damped 1-D Newton iteration on the analytic derivatives.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import GridMismatchError
from .panorama import sample_directions
from .sphere import IcosphereGrid, build_icosphere, rot_z, rpy_to_rotation, wrap_angle

log = logging.getLogger(__name__)

TRUNCATION = 1e-8
NEWTON_EPS = 1e-12
MAX_STEP = 0.5  # rad, cap on a single Newton step before backtracking
MAX_HALVINGS = 20


@dataclass(frozen=True)
class MppConfig:
    level: int = 3
    lambda_g: float = 0.325
    multistart: bool = True
    max_iters: int = 100
    tol: float = 1e-5

    def __post_init__(self):
        if not 0 <= self.level <= 7:
            raise ValueError("mpp.level must be in [0, 7]")
        if self.lambda_g <= 0:
            raise ValueError("mpp.lambda_g must be > 0")
        if self.max_iters < 1:
            raise ValueError("mpp.max_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class MppModel:
    grid: IcosphereGrid
    weights: np.ndarray
    lambda_g: float

    def __post_init__(self):
        if self.lambda_g <= 0:
            raise ValueError("lambda_g must be > 0")
        if self.weights.shape != (self.grid.n_vertices,):
            raise ValueError("one weight per grid vertex expected")

    @property
    def inv_lam2(self):
        return 1.0 / self.lambda_g**2

    def s_cut(self, truncation=TRUNCATION):
        """Smallest kernel cosine that still contributes more than ``truncation``."""
        if truncation <= 0:
            return -2.0
        return 1.0 + self.lambda_g**2 * np.log(truncation)

    @cached_property
    def grid_values(self):
        """Mixture evaluated at its own grid vertices."""
        return mpp_values(self, self.grid.vertices)


@dataclass(frozen=True)
class YawEstimate:
    yaw: float
    final_cost: float
    iterations: int
    converged: bool


def build_mpp(img, grid, lambda_g=0.325):
    """Weights are the bilinear intensities at the grid vertices."""
    if isinstance(grid, int):
        grid = build_icosphere(grid)
    w = sample_directions(img, grid.vertices)
    return MppModel(grid, np.asarray(w, dtype=np.float64), float(lambda_g))


def mpp_values(G, x, truncation=TRUNCATION):
    x = np.asarray(x, dtype=np.float64)
    pts = x.reshape(-1, 3)
    vals = kernels.mpp_values(pts, G.grid.vertices, G.weights, G.inv_lam2, G.s_cut(truncation))
    return vals.reshape(x.shape[:-1])


def mpp_value(G, x):
    """Mixture value at a single unit direction."""
    return float(mpp_values(G, np.asarray(x, dtype=np.float64)[None])[0])


def _check_pair(a, b):
    if a.grid.level != b.grid.level or a.grid.n_vertices != b.grid.n_vertices:
        raise GridMismatchError(f"grid levels differ: {a.grid.level} vs {b.grid.level}")
    if a.lambda_g != b.lambda_g:
        raise GridMismatchError(f"lambda_g differs: {a.lambda_g} vs {b.lambda_g}")


def mpp_ssd_cost(Gref, Greq, R):
    """``sum_k (Gref(x_k) - Greq(R.T @ x_k))**2`` over the grid vertices."""
    _check_pair(Gref, Greq)
    R = np.asarray(R, dtype=np.float64)
    moved = Greq.grid.vertices @ R
    diff = Gref.grid_values - mpp_values(Greq, moved)
    return float(diff @ diff)


def yaw_rotation(psi, rp, ref_rp=(0.0, 0.0)):
    """``Tref.T @ Rz(psi) @ T`` with T, Tref the tilts built from (roll, pitch).

    With a level reference (the default) this is ``rpy_to_rotation(roll, pitch, psi)``.
    """
    T = rpy_to_rotation(rp[0], rp[1], 0.0)
    Tref = rpy_to_rotation(ref_rp[0], ref_rp[1], 0.0)
    return Tref.T @ rot_z(psi) @ T


class _YawObjective:
    """C(psi) and its first two derivatives for R(psi) = A Rz(psi) B."""

    def __init__(self, Gref, Greq, rp, ref_rp=(0.0, 0.0), truncation=TRUNCATION):
        _check_pair(Gref, Greq)
        B = rpy_to_rotation(rp[0], rp[1], 0.0)
        A = rpy_to_rotation(ref_rp[0], ref_rp[1], 0.0).T
        X = Gref.grid.vertices
        self.targets = Gref.grid_values
        self.p = X @ A                       # rows (A.T x)
        self.centers = Greq.grid.vertices @ B.T  # rows (B v)
        self.weights = Greq.weights
        self.inv_lam2 = Greq.inv_lam2
        self.s_cut = Greq.s_cut(truncation)
        self.evaluations = 0

    def __call__(self, psi):
        q = self.p @ rot_z(psi)              # rows Rz(-psi) p
        dq = np.column_stack([q[:, 1], -q[:, 0], np.zeros(len(q))])
        d2q = np.column_stack([-q[:, 0], -q[:, 1], np.zeros(len(q))])
        self.evaluations += 1
        return kernels.mpp_ssd(self.targets, q, dq, d2q, self.centers, self.weights,
                               self.inv_lam2, self.s_cut)


def yaw_cost_and_derivatives(Gref, Greq, rp, psi, ref_rp=(0.0, 0.0), truncation=TRUNCATION):
    """``(C, dC/dpsi, d2C/dpsi2)`` at yaw ``psi``."""
    return _YawObjective(Gref, Greq, rp, ref_rp, truncation)(psi)


def _newton(f, psi, max_iters, tol):
    c, d1, d2 = f(psi)
    for it in range(1, max_iters + 1):
        step = -d1 / max(d2, NEWTON_EPS)
        step = float(np.clip(step, -MAX_STEP, MAX_STEP))
        if abs(step) < tol:
            return psi, c, it, True
        for _ in range(MAX_HALVINGS + 1):
            cn, d1n, d2n = f(psi + step)
            if cn <= c:
                break
            step *= 0.5
        else:
            return psi, c, it, abs(step) < tol
        psi, c, d1, d2 = psi + step, cn, d1n, d2n
        if abs(step) < tol:
            return psi, c, it, True
    return psi, c, max_iters, False


def optimize_yaw(Gref, Greq, rp=(0.0, 0.0), yaw0=None, multistart=None,
                 ref_rp=(0.0, 0.0), max_iters=100, tol=1e-5):
    """Yaw minimising the MPP SSD with roll/pitch held at ``rp``.

    ``yaw0=None`` means the yaw is unknown; multi-start over yaw0 + k*90deg is
    then on unless ``multistart`` says otherwise.  The start with the lowest
    final cost wins, so the result never costs more than ``yaw0`` itself.
    """
    f = _YawObjective(Gref, Greq, rp, ref_rp)
    if multistart is None:
        multistart = yaw0 is None
    base = 0.0 if yaw0 is None else float(yaw0)
    starts = [base + k * 0.5 * np.pi for k in range(4)] if multistart else [base]

    best = None
    total_iters = 0
    reduced = False
    for s in starts:
        c0 = f(s)[0]
        psi, c, iters, conv = _newton(f, s, max_iters, tol)
        total_iters += iters
        reduced |= c < c0 or conv
        if best is None or c < best[1]:
            best = (psi, c, conv)
    psi, c, conv = best
    if not reduced:
        log.warning("optimize_yaw: no start reduced the cost")
        conv = False
    return YawEstimate(wrap_angle(psi), float(c), total_iters, bool(conv))


def count_local_minima(Gref, Greq, rp=(0.0, 0.0), step_deg=1.0):
    """Strict local minima of the cost on a circular yaw scan."""
    f = _YawObjective(Gref, Greq, rp)
    psis = np.deg2rad(np.arange(0.0, 360.0, step_deg))
    c = np.array([f(p)[0] for p in psis])
    prev, nxt = np.roll(c, 1), np.roll(c, -1)
    return int(np.sum((c < prev) & (c < nxt)))
