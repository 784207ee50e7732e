"""Command-line entry point: ``fishlen {calibrate,skl,eval-seg,eval-len,synth}``.

Exit status: 0 success, 2 bad input or refused overwrite, 3 numerical failure.
Every subcommand checks its inputs and output targets before writing anything.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataset_io, evallen, evalseg, geometry, length_skl, synth
from .dataset_io import DatasetError, Regime

log = logging.getLogger("fishlen")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    """Bad arguments, malformed files or an output that would be overwritten."""


class NumericalError(Exception):
    """A computation diverged or hit a degenerate configuration."""


def parse_groups(text: str | None) -> list[int] | None:
    """``"1,3,5-8"`` -> [1, 3, 5, 6, 7, 8]."""
    if text is None or text == "":
        return None
    out: set[int] = set()
    for part in str(text).split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)(?:-(\d+))?", part)
        if not m:
            raise InputError(f"bad group list {text!r}")
        a, b = int(m[1]), int(m[2] or m[1])
        if b < a:
            raise InputError(f"bad group range {part!r}")
        out.update(range(a, b + 1))
    return sorted(out)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _check_targets(paths: Sequence[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise InputError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _load_index(args) -> dataset_io.DatasetIndex:
    index = dataset_io.load_dataset(args.annotations)
    return dataset_io.select(index, parse_groups(args.groups), args.regime)


def _load_cameras(directory: Path, groups) -> dict[int, geometry.CameraModel]:
    cams = {}
    for g in sorted(groups):
        path = directory / f"camera_group_{g:02d}.json"
        if not path.exists():
            raise InputError(f"no camera file for group {g} ({path})")
        try:
            cams[g] = geometry.CameraModel.load(path)
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path}: {exc}") from None
        if cams[g].belt is None:
            raise InputError(f"{path}: camera has no belt homography")
    return cams


# ---------------------------------------------------------------- calibrate


def _calibration_group(path: Path, data: dict) -> int:
    if "group" in data:
        return int(data["group"])
    m = re.search(r"(\d+)", path.stem)
    if not m:
        raise InputError(f"{path}: cannot tell which group this calibration belongs to")
    return int(m[1])


def cmd_calibrate(args) -> int:
    files = []
    for p in args.inputs:
        p = Path(p)
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not files:
        raise InputError("no calibration files given")
    wanted = parse_groups(args.groups)
    jobs = []
    for f in files:
        try:
            data, _, views = geometry.load_calibration(f)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{f}: {exc}") from None
        g = _calibration_group(f, data)
        if wanted is not None and g not in wanted:
            continue
        if not any(v.flat_on_belt for v in views):
            raise InputError(f"group {g} ({f}): no view is flagged flat_on_belt")
        if len(views) < 3:
            raise InputError(f"group {g} ({f}): need at least 3 views, got {len(views)}")
        size = data.get("image_size")
        jobs.append((g, f, views, None if size is None else tuple(int(s) for s in size)))
    seen = [g for g, *_ in jobs]
    dup = sorted({g for g in seen if seen.count(g) > 1})
    if dup:
        raise InputError(f"several calibration files for group(s) {dup}")
    out = Path(args.out)
    targets = [out / f"camera_group_{g:02d}.json" for g, *_ in jobs] + [out / "calibration_report.json"]
    _check_targets(targets, args.force)

    cams, report = {}, []
    for g, f, views, size in sorted(jobs, key=lambda j: j[0]):
        try:
            cal = geometry.calibrate_planar(views, image_size=size)
        except (geometry.CalibrationError, geometry.DegenerateConfigurationError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"group {g}: calibration failed: {exc}") from None
        cams[g] = cal.camera
        report.append(
            {"group": g, "source": str(f), "initial_rms_px": cal.initial_rms, "rms_px": cal.rms, "views": len(views)}
        )
        print(f"group {g:2d}: {len(views)} views, reprojection rms {cal.initial_rms:.4f} -> {cal.rms:.4f} px")
    out.mkdir(parents=True, exist_ok=True)
    for g, cam in cams.items():
        cam.save(out / f"camera_group_{g:02d}.json")
    _write_json(out / "calibration_report.json", report)
    return EXIT_OK


# ---------------------------------------------------------------- skl


def cmd_skl(args) -> int:
    if not 0.0 <= args.conf_threshold <= 1.0:
        raise InputError("--conf-threshold must lie in [0, 1]")
    index = _load_index(args)
    cams = _load_cameras(Path(args.cameras), {im.group for im in index.images})
    preds = None
    if args.predictions:
        preds = dataset_io.load_predictions(args.predictions, index)
    out = Path(args.out)
    _check_targets([out], args.force)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = length_skl.run_skl(index, cams, preds, args.conf_threshold, args.threads)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out.parent.mkdir(parents=True, exist_ok=True)
    length_skl.write_lengths(est, out)
    print(f"{len(est)} length estimates written to {out}")
    if est:
        pairs = evallen.match_lengths(est, index, preds)
        if pairs.pairs:
            rep = evallen.length_report(pairs, clip=args.clip_cm)
            print(f"MAE {rep.mae_cm:.3f} cm, MAPE {rep.mape:.2f}% over {rep.n} fish")
    return EXIT_OK


# ---------------------------------------------------------------- eval-seg


def cmd_eval_seg(args) -> int:
    index = _load_index(args)
    preds = dataset_io.load_predictions(args.predictions, index)
    out = Path(args.out)
    targets = [out / "seg_report.json", out / "seg_report.csv"]
    _check_targets(targets, args.force)
    keep = {im.id for im in index.images}
    preds = [p for p in preds if p.image_id in keep]
    rep = evalseg.evaluate_segmentation(
        preds, index.instances, class_names=dict(index.categories), threads=args.threads or os.cpu_count() or 1
    )
    out.mkdir(parents=True, exist_ok=True)
    rep.save(*targets)
    print(f"mAP {rep.mAP:.4f} over {len(rep.ap)} classes; mean matched IoU {rep.mean_matched_iou:.3f}")
    if rep.excluded:
        print(f"classes without ground truth (excluded): {rep.excluded}")
    return EXIT_OK


# ---------------------------------------------------------------- eval-len


def cmd_eval_len(args) -> int:
    if args.clip_cm <= 0:
        raise InputError("--clip-cm must be positive")
    index = _load_index(args)
    try:
        est = length_skl.read_lengths(args.lengths)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.lengths}: {exc}") from None
    keep = {im.id for im in index.images}
    est = [e for e in est if e.image_id in keep]
    preds = dataset_io.load_predictions(args.predictions, index) if args.predictions else None
    out = Path(args.out)
    targets = [out / n for n in ("length_report.json", "length_histogram.csv", "aggregation.json", "aggregation.csv")]
    _check_targets(targets, args.force)
    pairs = evallen.match_lengths(est, index, preds)
    if not pairs.pairs:
        raise InputError("no estimate could be paired with a ground-truth fish")
    rep = evallen.length_report(pairs, clip=args.clip_cm, bin_width=args.bin_cm, regime=str(args.regime))
    by_fish, truth = evallen.group_by_fish(pairs.pairs)
    if args.n_values:
        n_values = parse_groups(args.n_values)
    else:
        n_values = list(range(1, min(len(v) for v in by_fish.values()) + 1))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        curve = evallen.aggregation_curve(by_fish, truth, n_values, trials=args.trials, seed=args.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(targets[0], rep.to_dict())
    targets[1].write_text(rep.histogram.to_csv(), encoding="utf-8")
    _write_json(targets[2], curve.to_dict())
    targets[3].write_text(curve.to_csv(), encoding="utf-8")
    print(f"MAE {rep.mae_cm:.3f} cm, MAPE {rep.mape:.2f}% over {rep.n} pairs")
    print(f"unmatched estimates {rep.unmatched_estimates}, unmatched fish {rep.unmatched_truths}")
    return EXIT_OK


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    groups = parse_groups(args.groups) or [1]
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise InputError(f"refusing to write into non-empty {out} (use --force)")
    ds = synth.generate_dataset(
        groups,
        fish_per_group=args.fish_per_group,
        images_per_set=args.images_per_set,
        seed=args.seed,
        k1=args.k1,
    )
    preds = synth.synthetic_predictions(ds.annotation, seed=args.seed) if args.predictions else None
    synth.write_dataset(ds, out, preds)
    n_ann = len(ds.annotation["annotations"])
    print(f"{len(ds.annotation['images'])} images, {n_ann} annotations, {len(groups)} group(s) written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _load_config(path: str) -> dict:
    """JSON object or ``key = value`` lines; keys use flag names with dashes or underscores."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{ln}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            data[k] = v
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be an object of defaults")
    return {k.replace("-", "_"): v for k, v in data.items()}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of default option values (JSON or key = value lines)")
    common.add_argument("--groups", help="group list, e.g. 10,14,20-22")
    common.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.COMBINED.value,
                        help="image regime (default: combined)")
    common.add_argument("--conf-threshold", type=float, default=length_skl.DEFAULT_THRESHOLD,
                        help="keep predictions scoring at least this")
    common.add_argument("--clip-cm", type=float, default=5.0, help="histogram range, +- cm")
    common.add_argument("--seed", type=int, default=0, help="seed for synthesis and aggregation draws")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fishlen", description="Fish length measurement from instance masks.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", parents=[common], help="planar calibration + belt homography per group")
    c.add_argument("inputs", nargs="+", help="calibration files or directories of them")
    c.add_argument("--out", required=True, help="directory for camera_group_XX.json")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("skl", parents=[common], help="skeleton-based length estimation")
    s.add_argument("--annotations", required=True)
    s.add_argument("--cameras", required=True, help="directory with camera_group_XX.json")
    s.add_argument("--predictions", help="prediction file; omit to measure ground-truth masks")
    s.add_argument("--out", required=True, help="length output file (JSON)")
    s.set_defaults(func=cmd_skl)

    e = sub.add_parser("eval-seg", parents=[common], help="mask AP / mAP")
    e.add_argument("--annotations", required=True)
    e.add_argument("--predictions", required=True)
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval_seg)

    L = sub.add_parser("eval-len", parents=[common], help="length MAE / MAPE, histogram and aggregation curve")
    L.add_argument("--annotations", required=True)
    L.add_argument("--lengths", required=True, help="length file from `fishlen skl` or another estimator")
    L.add_argument("--predictions", help="prediction file the lengths were measured on (prediction mode)")
    L.add_argument("--bin-cm", type=float, default=0.25, help="histogram bin width")
    L.add_argument("--trials", type=int, default=100, help="random draws per aggregation point")
    L.add_argument("--n-values", help="sample counts for the aggregation curve, e.g. 1-10,20,40")
    L.add_argument("--out", required=True, help="output directory")
    L.set_defaults(func=cmd_eval_len)

    y = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    y.add_argument("--out", required=True, help="output directory")
    y.add_argument("--fish-per-group", type=int, default=8)
    y.add_argument("--images-per-set", type=int, default=2)
    y.add_argument("--k1", type=float, default=-0.05)
    y.add_argument("--predictions", action="store_true", help="also write jittered predictions")
    y.set_defaults(func=cmd_synth)
    p.subcommands = {"calibrate": c, "skl": s, "eval-seg": e, "eval-len": L, "synth": y}
    return p


def _parse(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = _load_config(args.config)
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from None
        sub = parser.subcommands[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            raise InputError(f"{args.config}: unknown option(s) {unknown}")
        defaults = {}
        for k, v in cfg.items():
            act = known[k]
            if act.type is not None and isinstance(v, str):
                v = act.type(v)
            elif isinstance(act, argparse._StoreTrueAction) and isinstance(v, str):
                v = v.lower() in ("1", "true", "yes", "on")
            defaults[k] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parse(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INPUT if exc.code else EXIT_OK
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, DatasetError, length_skl.MissingCameraError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, np.linalg.LinAlgError, geometry.DegenerateConfigurationError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
