"""``omnigyro`` command line: convert, estimate, stabilize, evaluate, synth."""
import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import GroundTruthError, GyroError, LensConfigError
from .horizon import save_heatmaps, synth_heatmaps
from .panorama import (dualfisheye_to_equirect, load_dualfisheye, load_equirect,
                       load_lens_config, rotate_equirect, save_equirect)
from .pipeline import (GroundTruthRecord, PipelineConfig, FileHeatmapSource,
                       SyntheticHeatmapSource, evaluate_estimates, frame_key,
                       load_ground_truth, read_estimates, read_keyvalue, run_sequence,
                       stabilize, write_estimates, write_ground_truth, write_report,
                       ESTIMATE_COLUMNS)
from .synthetic import SmoothScene, random_trajectory, trajectory_rotations

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_IMAGE = 3
EXIT_NO_REF = 4
EXIT_NO_ESTIMATE = 5

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
_AUX_SUFFIXES = ("_horizon", "_vertical", "_stab")


class UsageError(Exception):
    """Bad input the user can fix; mapped to exit code 2."""


def _config_epilog():
    lines = ["config keys (--config FILE with key=value lines, or --set key=value):"]
    for key, (_, _, _, doc) in PipelineConfig.KEYS.items():
        lines.append(f"  {key:<24} {doc}")
    lines.append("  lens.front.{cx,cy,radius,fov}, lens.rear.{cx,cy,radius,fov}  dual-fisheye lens model (convert)")
    return "\n".join(lines)


def list_frames(directory):
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES and not p.stem.endswith(_AUX_SUFFIXES))


def build_config(args):
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(read_keyvalue(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "success_deg", None) is not None:
        values["success.threshold_deg"] = str(args.success_deg)
    try:
        return PipelineConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config: {exc}") from None


# ---------------------------------------------------------------------------
# commands

def cmd_convert(args):
    cfg_path = Path(args.lens)
    try:
        front, rear = load_lens_config(cfg_path)
    except LensConfigError as exc:
        print(f"error: lens config {cfg_path}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for path in list_frames(args.in_dir):
        try:
            df = load_dualfisheye(path, front, rear)
        except (OSError, ValueError) as exc:
            print(f"{path.name}: unreadable ({exc})", file=sys.stderr)
            status = EXIT_IMAGE
            continue
        width = args.width or df.color.shape[1]
        width += width % 2
        pano = dualfisheye_to_equirect(df, width)
        save_equirect(pano, out / f"{path.stem}.png")
        print(f"{path.name}: ok -> {path.stem}.png ({width}x{width // 2})")
    return status


def cmd_estimate(args):
    cfg = build_config(args)
    paths = list_frames(args.seq_dir)
    if not paths:
        write_estimates([], args.out)
        return EXIT_OK
    names = {frame_key(p.stem): p for p in paths}
    ref_key = frame_key(args.ref)
    if ref_key not in names:
        print(f"error: reference frame {args.ref!r} not found in {args.seq_dir}", file=sys.stderr)
        return EXIT_NO_REF
    frames = {}
    for key, p in names.items():
        try:
            frames[key] = load_equirect(p)
        except (OSError, ValueError) as exc:
            print(f"error: cannot read {p}: {exc}", file=sys.stderr)
            return EXIT_IMAGE
    width = frames[ref_key].width
    if args.synth:
        try:
            gt = load_ground_truth(args.synth)
        except (OSError, GroundTruthError) as exc:
            raise UsageError(f"ground truth {args.synth}: {exc}") from None
        source = SyntheticHeatmapSource({frame_key(r.frame_id): r.rotation for r in gt}, width,
                                        args.synth_sigma, args.synth_noise, cfg.seed)
    else:
        source = FileHeatmapSource(args.heatmaps, {k: p.stem for k, p in names.items()})

    def report(est):
        print(f"{est.frame_id}: roll {math.degrees(est.rpy.roll):8.3f}  pitch {math.degrees(est.rpy.pitch):8.3f}"
              f"  yaw {math.degrees(est.rpy.yaw):8.3f}  {'converged' if est.converged else 'NOT converged'}")

    try:
        estimates = run_sequence(frames, source, ref_key, cfg, progress=report)
    except (GyroError, OSError, KeyError) as exc:
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_estimates(estimates, args.out)
    return EXIT_OK


def cmd_stabilize(args):
    try:
        estimates = {e.frame_id: e for e in read_estimates(args.estimates)}
    except (OSError, ValueError) as exc:
        raise UsageError(f"estimates {args.estimates}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_frames(args.seq_dir)
    missing = [p.name for p in paths if frame_key(p.stem) not in estimates]
    if missing:
        print(f"error: no estimate for {', '.join(missing[:5])}", file=sys.stderr)
        return EXIT_NO_ESTIMATE
    for p in paths:
        try:
            img = load_equirect(p)
        except (OSError, ValueError) as exc:
            print(f"error: cannot read {p}: {exc}", file=sys.stderr)
            return EXIT_IMAGE
        save_equirect(stabilize(img, estimates[frame_key(p.stem)].rotation), out / f"{p.stem}_stab.png")
        print(f"{p.name}: ok")
    return EXIT_OK


def cmd_evaluate(args):
    try:
        estimates = read_estimates(args.estimates)
        gt = load_ground_truth(args.gt)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    threshold = args.success_deg if args.success_deg is not None else build_config(args).success_threshold_deg
    try:
        report = evaluate_estimates(estimates, gt, args.ref, threshold)
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_REF
    except GroundTruthError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        write_report(report, args.out, args.summary)
    sys.stdout.write(report.summary())
    return EXIT_OK


def parse_trajectory(path):
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read trajectory {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            vals = [float(x) for x in parts]
        except ValueError:
            raise UsageError(f"{path}:{lineno}: non-numeric trajectory entry") from None
        if len(vals) != 3 or not all(map(math.isfinite, vals)):
            raise UsageError(f"{path}:{lineno}: expected roll,pitch,yaw in degrees")
        rows.append(vals)
    if not rows:
        raise UsageError(f"{path}: empty trajectory")
    return np.array(rows)


def cmd_synth(args):
    if args.trajectory:
        traj = parse_trajectory(args.trajectory)
    else:
        if args.frames < 1:
            raise UsageError("--frames must be >= 1")
        traj = random_trajectory(args.frames, seed=args.seed or 0)
    if args.width <= 0 or args.width % 2:
        raise UsageError("--width must be a positive even number")
    out = Path(args.out)
    fdir, hdir = out / "frames", out / "heatmaps"
    fdir.mkdir(parents=True, exist_ok=True)
    hdir.mkdir(parents=True, exist_ok=True)
    if args.source:
        try:
            source = load_equirect(args.source)
        except (OSError, ValueError) as exc:
            print(f"error: cannot read {args.source}: {exc}", file=sys.stderr)
            return EXIT_IMAGE
        width = source.width
        render = lambda Rc: rotate_equirect(source, Rc.T)  # noqa: E731
    else:
        scene = SmoothScene.random(seed=args.seed or 0)
        width = args.width
        render = lambda Rc: scene.render(width, Rc)  # noqa: E731
    records = []
    seed = args.seed or 0
    for i, Rc in enumerate(trajectory_rotations(traj)):
        name = f"{i:06d}"
        save_equirect(render(Rc), fdir / f"{name}.png")
        save_heatmaps(synth_heatmaps(Rc.T, width, width // 2, args.sigma, args.noise, seed + i), hdir, name)
        records.append(GroundTruthRecord(i, Rc))
    write_ground_truth(records, out / "gt.csv")
    print(f"wrote {len(records)} frames to {fdir}, heat-maps to {hdir}, ground truth to {out / 'gt.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    epilog = _config_epilog()
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="omnigyro", description=__doc__, epilog=epilog, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int, help="RNG seed")

    sp = sub.add_parser("convert", help="dual-fisheye frames to equirectangular", epilog=epilog, formatter_class=fmt)
    sp.add_argument("in_dir")
    sp.add_argument("--lens", required=True, help="lens config (front.cx=..., rear.fov=...)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--width", type=int, default=0, help="output width (default: input width)")
    common(sp)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("estimate", help="estimate per-frame orientation", epilog=epilog, formatter_class=fmt)
    sp.add_argument("seq_dir")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--heatmaps", help="directory of <frame>_horizon.png / <frame>_vertical.png")
    src.add_argument("--synth", metavar="GT_CSV", help="render heat-maps from this ground truth")
    sp.add_argument("--synth-sigma", type=float, default=2.0)
    sp.add_argument("--synth-noise", type=float, default=0.0)
    sp.add_argument("--ref", required=True, help="reference frame id")
    sp.add_argument("--out", required=True, help="estimates CSV")
    common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("stabilize", help="rotate frames back to the reference", epilog=epilog, formatter_class=fmt)
    sp.add_argument("seq_dir")
    sp.add_argument("--estimates", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_stabilize)

    sp = sub.add_parser("evaluate", help="score estimates against ground truth", epilog=epilog, formatter_class=fmt)
    sp.add_argument("--estimates", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--success-deg", type=float, help="success threshold in degrees (default 10)")
    sp.add_argument("--out", help="per-frame report CSV")
    sp.add_argument("--summary", help="plain-text summary file")
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("synth", help="render a synthetic sequence", epilog=epilog, formatter_class=fmt)
    sp.add_argument("out")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--trajectory", help="file of roll,pitch,yaw (degrees) per line")
    g.add_argument("--frames", type=int, default=20, help="random smooth trajectory length")
    sp.add_argument("--source", help="source panorama (default: procedural scene)")
    sp.add_argument("--width", type=int, default=512)
    sp.add_argument("--sigma", type=float, default=2.0, help="heat-map band width, degrees")
    sp.add_argument("--noise", type=float, default=0.0, help="heat-map uniform noise amplitude")
    common(sp)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
