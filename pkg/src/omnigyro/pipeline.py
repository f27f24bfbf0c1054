"""Horizon -> MPP -> PVG orchestration, ground truth IO and evaluation.

All per-frame rotations are camera-to-world relative to the reference frame:
the reference camera is the world, so ``rotate_equirect(frame, R)`` stabilises
a frame whose estimate is ``R``.
"""
import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import GroundTruthError, GyroError, MissingReferenceError
from .horizon import RansacConfig, horizon_attitude, load_heatmaps, synth_heatmaps
from .mpp import MppConfig, MppModel, build_mpp, optimize_yaw, yaw_rotation
from .panorama import rotate_equirect
from .pvg import PvgConfig, refine_rotation
from .sphere import (EulerRPY, build_icosphere, geodesic_angle, rotation_to_rpy,
                     rpy_to_rotation)

log = logging.getLogger(__name__)

_Z = np.array([0.0, 0.0, 1.0])


def frame_key(frame_id):
    """Canonical frame id: zero-padded numbers collapse to their integer text."""
    s = str(frame_id).strip()
    return str(int(s)) if s.isdigit() else s


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PipelineConfig:
    ransac: RansacConfig = field(default_factory=RansacConfig)
    mpp: MppConfig = field(default_factory=MppConfig)
    pvg: PvgConfig = field(default_factory=PvgConfig)
    success_threshold_deg: float = 10.0
    seed: int = 0

    KEYS = {
        "mpp.level": ("mpp", "level", int, "icosphere subdivision level of the MPP (default 3)"),
        "mpp.lambda_g": ("mpp", "lambda_g", float, "shared lobe width lambda_g (default 0.325)"),
        "mpp.multistart": ("mpp", "multistart", "bool", "multi-start yaw search on the first frame (default true)"),
        "mpp.max_iters": ("mpp", "max_iters", int, "Newton iterations per start (default 100)"),
        "pvg.level": ("pvg", "level", int, "icosphere subdivision level of the PVG (default 5)"),
        "pvg.max_iters": ("pvg", "max_iters", int, "Levenberg-Marquardt iterations (default 100)"),
        "pvg.step_tol": ("pvg", "step_tol", float, "tangent step stopping tolerance, rad (default 1e-6)"),
        "ransac.iterations": ("ransac", "iterations", int, "RANSAC hypotheses (default 500)"),
        "ransac.inlier_angle_deg": ("ransac", "inlier_angle_deg", float, "inlier band half-width, deg (default 2)"),
        "ransac.min_inliers": ("ransac", "min_inliers", float, "minimum weighted inlier ratio (default 0.3)"),
        "ransac.gate_deg": ("ransac", "gate_deg", float, "max angle between plane normal and vertical estimate (default 30)"),
        "ransac.threshold": ("ransac", "threshold", float, "heat-map threshold as a fraction of the max (default 0.3)"),
        "success.threshold_deg": (None, "success_threshold_deg", float, "rotation error counted as success, deg (default 10)"),
        "seed": (None, "seed", int, "RNG seed (default 0)"),
    }

    @classmethod
    def from_mapping(cls, values):
        """Build from flat ``section.key -> str`` settings; unknown keys raise."""
        sections = {"ransac": {}, "mpp": {}, "pvg": {}}
        top = {}
        for key, raw in values.items():
            if key.startswith("lens."):
                continue
            if key not in cls.KEYS:
                raise ValueError(f"unknown config key {key!r}")
            section, name, typ, _ = cls.KEYS[key]
            try:
                if typ == "bool":
                    val = _parse_bool(raw)
                else:
                    val = typ(raw)
            except (TypeError, ValueError):
                raise ValueError(f"bad value for {key}: {raw!r}") from None
            (sections[section] if section else top)[name] = val
        return cls(ransac=RansacConfig(**sections["ransac"]), mpp=MppConfig(**sections["mpp"]),
                   pvg=PvgConfig(**sections["pvg"]), **top)


def _parse_bool(s):
    if isinstance(s, bool):
        return s
    low = str(s).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def read_keyvalue(path):
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# per-frame estimation

@dataclass(frozen=True)
class StageSnapshot:
    stage: str
    roll: float
    pitch: float
    yaw: float
    cost: float


@dataclass(frozen=True, eq=False)
class AttitudeEstimate:
    frame_id: str
    rotation: np.ndarray
    rpy: EulerRPY
    stage_trace: tuple
    converged: bool
    horizon_normal: Optional[np.ndarray] = None
    horizon_inlier_ratio: float = math.nan
    yaw_param: float = 0.0
    pvg_initial_cost: float = math.nan
    pvg_iterations: int = 0

    def stage(self, name):
        for s in self.stage_trace:
            if s.stage == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class Reference:
    """Artifacts derived once from the reference frame."""
    frame_id: str
    image: object
    mpp: MppModel
    tilt: tuple = (0.0, 0.0)


def make_reference(frame_id, image, heatmaps=None, cfg=PipelineConfig()):
    """Reference MPP plus the reference tilt (level when no heat-maps are given)."""
    grid = build_icosphere(cfg.mpp.level)
    tilt = (0.0, 0.0)
    if heatmaps is not None:
        try:
            hz = horizon_attitude(heatmaps, cfg.ransac, cfg.seed)
            tilt = (hz.roll, hz.pitch)
        except GyroError as exc:
            log.warning("reference %s: horizon failed (%s); assuming a level reference", frame_id, exc)
    return Reference(frame_key(frame_id), image, build_mpp(image, grid, cfg.mpp.lambda_g), tilt)


def estimate_frame(frame, heatmaps, ref_mpp, ref_img, warm=None, cfg=PipelineConfig(),
                   ref_tilt=(0.0, 0.0), frame_id="", rng=None):
    """Run the three stages on one frame.

    Roll/pitch come from the heat-maps (falling back to ``warm`` when the
    horizon fit fails), yaw from the MPP alignment against ``ref_mpp`` and the
    full rotation from the photometric refinement against ``ref_img``.
    """
    rng = cfg.seed if rng is None else rng
    Tref = rpy_to_rotation(ref_tilt[0], ref_tilt[1], 0.0)
    normal, inlier_ratio = None, math.nan
    try:
        hz = horizon_attitude(heatmaps, cfg.ransac, rng)
        roll, pitch = hz.roll, hz.pitch
        normal, inlier_ratio = hz.normal, hz.inlier_ratio
    except GyroError as exc:
        if warm is None:
            raise
        log.info("frame %s: horizon failed (%s); using previous attitude", frame_id, exc)
        prev = rotation_to_rpy(Tref @ warm.rotation)
        roll, pitch = prev.roll, prev.pitch
    trace = [StageSnapshot("horizon", roll, pitch, math.nan, math.nan)]

    greq = build_mpp(frame, ref_mpp.grid, ref_mpp.lambda_g)
    if warm is None:
        ye = optimize_yaw(ref_mpp, greq, (roll, pitch), None, cfg.mpp.multistart,
                          ref_rp=ref_tilt, max_iters=cfg.mpp.max_iters, tol=cfg.mpp.tol)
    else:
        ye = optimize_yaw(ref_mpp, greq, (roll, pitch), warm.yaw_param, False,
                          ref_rp=ref_tilt, max_iters=cfg.mpp.max_iters, tol=cfg.mpp.tol)
    R_mpp = yaw_rotation(ye.yaw, (roll, pitch), ref_tilt)
    trace.append(StageSnapshot("mpp", *rotation_to_rpy(R_mpp), ye.final_cost))

    res = refine_rotation(ref_img, frame, R_mpp, cfg.pvg)
    R = res.rotation
    rpy = rotation_to_rpy(R)
    trace.append(StageSnapshot("pvg", *rpy, res.final_cost))
    return AttitudeEstimate(
        frame_id=frame_key(frame_id), rotation=R, rpy=rpy, stage_trace=tuple(trace),
        converged=res.converged, horizon_normal=normal, horizon_inlier_ratio=inlier_ratio,
        yaw_param=rotation_to_rpy(Tref @ R).yaw, pvg_initial_cost=res.initial_cost,
        pvg_iterations=res.iterations)


def run_sequence(frames, heatmap_source, ref_id, cfg=PipelineConfig(), progress=None):
    """Estimate every frame of an ordered ``frame_id -> image`` mapping.

    ``heatmap_source`` maps a frame id to its HeatMapPair.  Frame t is warm
    started from frame t-1.
    """
    frames = {frame_key(k): v for k, v in dict(frames).items()}
    ref_key = frame_key(ref_id)
    if ref_key not in frames:
        raise MissingReferenceError(f"reference frame {ref_id!r} not in the sequence")
    ref_hm = _maybe(heatmap_source, ref_key)
    ref = make_reference(ref_key, frames[ref_key], ref_hm, cfg)
    out = []
    warm = None
    for i, (fid, img) in enumerate(frames.items()):
        est = estimate_frame(img, heatmap_source(fid), ref.mpp, ref.image, warm, cfg,
                             ref.tilt, fid, rng=cfg.seed + i)
        out.append(est)
        warm = est
        if progress is not None:
            progress(est)
    return out


def _maybe(source, fid):
    try:
        return source(fid)
    except (OSError, GyroError):
        return None


class FileHeatmapSource:
    """``<dir>/<frame>_horizon.png`` and ``<dir>/<frame>_vertical.png``."""

    def __init__(self, directory, names=None):
        self.directory = Path(directory)
        self.names = dict(names or {})

    def __call__(self, frame_id):
        return load_heatmaps(self.directory, self.names.get(frame_key(frame_id), frame_id))


class SyntheticHeatmapSource:
    """Heat-maps rendered from known camera orientations (relative or absolute)."""

    def __init__(self, rotations, width, sigma_deg=2.0, noise=0.0, seed=0):
        self.rotations = {frame_key(k): np.asarray(v) for k, v in dict(rotations).items()}
        self.width = width
        self.sigma_deg = sigma_deg
        self.noise = noise
        self.seed = seed

    def __call__(self, frame_id):
        key = frame_key(frame_id)
        Rc = self.rotations[key]
        salt = int(key) if key.isdigit() else zlib.crc32(key.encode()) % 100003
        return synth_heatmaps(Rc.T, self.width, self.width // 2, self.sigma_deg, self.noise,
                              self.seed + salt)


# ---------------------------------------------------------------------------
# ground truth and metrics

@dataclass(frozen=True, eq=False)
class GroundTruthRecord:
    frame_id: int
    rotation: np.ndarray
    timestamp: float = math.nan


def quaternion_to_rotation(qw, qx, qy, qz):
    q = np.array([qw, qx, qy, qz], dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def load_ground_truth(path):
    """Parse ``frame_id,qw,qx,qy,qz`` or ``frame_id,roll_deg,pitch_deg,yaw_deg`` rows.

    A non-numeric first row is taken as a header.  Frame ids must increase.
    """
    records = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            row = [c.strip() for c in row]
            if not row or not any(row) or row[0].startswith("#"):
                continue
            try:
                fid = int(row[0])
                vals = [float(c) for c in row[1:]]
            except ValueError:
                if lineno == 1:
                    continue
                raise GroundTruthError(f"non-numeric field in {row!r}", lineno) from None
            if len(vals) == 4:
                try:
                    R = quaternion_to_rotation(*vals)
                except ValueError as exc:
                    raise GroundTruthError(str(exc), lineno) from None
            elif len(vals) == 3:
                R = rpy_to_rotation(*np.deg2rad(vals))
            else:
                raise GroundTruthError(f"expected 4 or 5 columns, got {len(row)}", lineno)
            if records and fid <= records[-1].frame_id:
                raise GroundTruthError(f"frame_id {fid} not increasing", lineno)
            records.append(GroundTruthRecord(fid, R))
    return records


def write_ground_truth(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "roll_deg", "pitch_deg", "yaw_deg"])
        for rec in records:
            w.writerow([rec.frame_id] + [repr(float(a)) for a in np.rad2deg(rotation_to_rpy(rec.rotation))])


def normal_angle_error(n, n_hat):
    """Angle between two unit vectors, degrees.

    Equal to ``arccos(clamp(n . n_hat))``; the sine from the cross product keeps
    precision for nearly parallel or antipodal vectors.
    """
    n = np.asarray(n, dtype=np.float64)
    n_hat = np.asarray(n_hat, dtype=np.float64)
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(n, n_hat))), float(np.dot(n, n_hat))))


def rotation_angle_error(R_gt, R_pred):
    """Geodesic angle between two rotations, degrees."""
    return math.degrees(geodesic_angle(R_gt, R_pred))


@dataclass(frozen=True)
class FrameError:
    frame_id: str
    normal_err_deg: float
    rot_err_deg: float
    converged: bool


@dataclass(frozen=True)
class EvalReport:
    frames: tuple
    reference_id: str
    success_threshold_deg: float
    mean_normal_err_deg: float
    median_normal_err_deg: float
    mean_rot_err_deg: float
    median_rot_err_deg: float
    success_rate: float

    def summary(self):
        return "\n".join([
            f"reference frame: {self.reference_id}",
            f"frames: {len(self.frames)}",
            f"normal error (deg): mean {self.mean_normal_err_deg:.4f}  median {self.median_normal_err_deg:.4f}",
            f"rotation error (deg): mean {self.mean_rot_err_deg:.4f}  median {self.median_rot_err_deg:.4f}",
            f"success rate (< {self.success_threshold_deg:g} deg): {self.success_rate:.4f}",
        ]) + "\n"


def _stats(vals):
    a = np.asarray([v for v in vals if not math.isnan(v)])
    if a.size == 0:
        return math.nan, math.nan
    return float(a.mean()), float(np.median(a))


def evaluate_estimates(estimates, gt, ref_id, success_deg=10.0):
    """Errors of per-frame estimates against ground truth, relative to ``ref_id``.

    ``estimates`` is a sequence of AttitudeEstimate.  Ground-truth rotations
    are re-expressed relative to the reference; estimates are too, using the
    reference frame's own estimate when it is among them.  Normal errors
    compare the horizon normal with ``R_gt.T @ z``.
    """
    gt_map = {frame_key(r.frame_id): r for r in gt}
    ref_key = frame_key(ref_id)
    if ref_key not in gt_map:
        raise MissingReferenceError(f"reference frame {ref_id!r} has no ground truth")
    R_ref = gt_map[ref_key].rotation
    est_map = {frame_key(e.frame_id): e for e in estimates}
    E_ref = est_map[ref_key].rotation if ref_key in est_map else np.eye(3)
    rows = []
    for key, est in est_map.items():
        if key not in gt_map:
            raise GroundTruthError(f"frame {est.frame_id!r} has no ground truth")
        R_gt = gt_map[key].rotation
        rot_err = rotation_angle_error(R_ref.T @ R_gt, E_ref.T @ est.rotation)
        if est.horizon_normal is not None:
            n_err = normal_angle_error(est.horizon_normal, R_gt.T @ _Z)
        else:
            n_err = math.nan
        rows.append(FrameError(key, n_err, rot_err, bool(est.converged)))
    if not rows:
        return EvalReport((), ref_key, success_deg, math.nan, math.nan, math.nan, math.nan, math.nan)
    mn, mdn = _stats([r.normal_err_deg for r in rows])
    mr, mdr = _stats([r.rot_err_deg for r in rows])
    ok = sum(1 for r in rows if r.rot_err_deg < success_deg)
    return EvalReport(tuple(rows), ref_key, success_deg, mn, mdn, mr, mdr, ok / len(rows))


def evaluate_sequence(frames, heatmap_source, gt, ref_id, success_deg=10.0,
                      cfg=PipelineConfig(), stabilized_dir=None):
    """Estimate a whole sequence and score it.

    With empty ``gt`` (qualitative mode) the stabilised frames are written to
    ``stabilized_dir`` as ``<frame_id>_stab.png`` and None is returned.
    """
    frames = dict(frames)
    estimates = run_sequence(frames, heatmap_source, ref_id, cfg)
    if not gt:
        if stabilized_dir is not None:
            from .panorama import save_equirect
            d = Path(stabilized_dir)
            d.mkdir(parents=True, exist_ok=True)
            for (fid, img), est in zip(frames.items(), estimates):
                save_equirect(stabilize(img, est.rotation), d / f"{fid}_stab.png")
        return None
    keys = {frame_key(k) for k in frames}
    missing = keys - {frame_key(r.frame_id) for r in gt}
    if missing:
        raise GroundTruthError(f"no ground truth for frames {sorted(missing)[:5]}")
    return evaluate_estimates(estimates, gt, ref_id, success_deg)


def stabilize(img, R_est):
    """Undo an estimated camera rotation: the result looks like the reference view."""
    return rotate_equirect(img, R_est)


# ---------------------------------------------------------------------------
# CSV schemas

ESTIMATE_COLUMNS = [
    "frame_id", "roll_deg", "pitch_deg", "yaw_deg", "converged",
    "hz_roll_deg", "hz_pitch_deg", "hz_nx", "hz_ny", "hz_nz", "hz_inlier_ratio",
    "mpp_roll_deg", "mpp_pitch_deg", "mpp_yaw_deg", "mpp_cost",
    "pvg_init_cost", "pvg_cost", "pvg_iters",
]


def _f(x):
    return repr(float(x))


_NO_STAGE = StageSnapshot("", math.nan, math.nan, math.nan, math.nan)


def estimate_row(est):
    """One CSV row; stage columns are NaN for estimates without a stage trace."""
    stages = {s.stage: s for s in est.stage_trace}
    hz, mp, pv = (stages.get(k, _NO_STAGE) for k in ("horizon", "mpp", "pvg"))
    n = est.horizon_normal if est.horizon_normal is not None else (math.nan,) * 3
    return [est.frame_id, *(_f(math.degrees(a)) for a in est.rpy), int(est.converged),
            _f(math.degrees(hz.roll)), _f(math.degrees(hz.pitch)), *(_f(c) for c in n),
            _f(est.horizon_inlier_ratio),
            _f(math.degrees(mp.roll)), _f(math.degrees(mp.pitch)), _f(math.degrees(mp.yaw)),
            _f(mp.cost), _f(est.pvg_initial_cost), _f(pv.cost), est.pvg_iterations]


def write_estimates(estimates, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_COLUMNS)
        for est in estimates:
            w.writerow(estimate_row(est))


def read_estimates(path):
    """Inverse of :func:`write_estimates` (rotation rebuilt from the rpy columns)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, 2):
            try:
                rpy = np.deg2rad([float(row["roll_deg"]), float(row["pitch_deg"]), float(row["yaw_deg"])])
                R = rpy_to_rotation(*rpy)
                n = np.array([float(row.get("hz_nx", "nan")), float(row.get("hz_ny", "nan")),
                              float(row.get("hz_nz", "nan"))])
                conv = bool(int(row.get("converged", "1")))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad estimate row ({exc})") from None
            trace = []
            if not math.isnan(float(row.get("mpp_yaw_deg", "nan") or "nan")):
                trace = [
                    StageSnapshot("horizon", math.radians(float(row["hz_roll_deg"])),
                                  math.radians(float(row["hz_pitch_deg"])), math.nan, math.nan),
                    StageSnapshot("mpp", *np.deg2rad([float(row["mpp_roll_deg"]), float(row["mpp_pitch_deg"]),
                                                      float(row["mpp_yaw_deg"])]).tolist(),
                                  float(row["mpp_cost"])),
                    StageSnapshot("pvg", *rpy.tolist(), float(row["pvg_cost"])),
                ]
            out.append(AttitudeEstimate(
                frame_id=frame_key(row["frame_id"]), rotation=R, rpy=rotation_to_rpy(R),
                stage_trace=tuple(trace), converged=conv,
                horizon_normal=None if np.isnan(n).any() else n,
                horizon_inlier_ratio=float(row.get("hz_inlier_ratio", "nan")),
                pvg_initial_cost=float(row.get("pvg_init_cost", "nan")),
                pvg_iterations=int(row.get("pvg_iters", "0") or 0)))
    return out


def write_report(report, csv_path, summary_path=None):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "normal_err_deg", "rot_err_deg", "converged"])
        for r in report.frames:
            w.writerow([r.frame_id, _f(r.normal_err_deg), _f(r.rot_err_deg), int(r.converged)])
    if summary_path is not None:
        Path(summary_path).write_text(report.summary())


def estimate_from_rotation(frame_id, R, converged=True):
    """Bare estimate (no stage trace) wrapping a known rotation."""
    R = np.asarray(R, dtype=np.float64)
    return AttitudeEstimate(frame_key(frame_id), R, rotation_to_rpy(R), (), converged)
