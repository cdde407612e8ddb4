"""``mvslam`` command line.

Exit codes: 0 success, 2 configuration error (bad flags, config keys, missing
dataset parts), 3 data error (unreadable or inconsistent files, estimation
that cannot proceed on the given data).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import Config, load_config, parse_overrides
from .dataset import Dataset, frame_paths, write_dataset
from .errors import ConfigError, DataError, InvalidArgument, SlamError
from .formats import load_depth, load_trajectory
from .metrics import (
    ALIGN_MODES,
    DEPTH_KEYS,
    Report,
    depth_metrics,
    depth_reports,
    evaluate_trajectory,
    read_samples_csv,
    write_samples_csv,
)
from .pipeline import new_volume, run_slam, write_outputs
from .stats import jarque_bera, two_sample_ttest, variance_equality_test
from .synth import GEOMETRIES, PATHS, generate_sequence, make_scene
from .trajectory import associate_by_time
from .tsdf import extract_surface, integrate, write_ply

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

log = logging.getLogger("mvslam")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _config(args) -> Config:
    return load_config(getattr(args, "config", None), parse_overrides(getattr(args, "set", None)))


def _emit(report: Report, path) -> None:
    text = report.text()
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth_gen(args) -> int:
    try:
        scene = make_scene(args.scene, args.path, args.frames, args.width, args.height, args.focal)
        seq = generate_sequence(scene, seed=args.seed, workers=args.workers)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from None
    write_dataset(args.out, seq.rgb, seq.depth, seq.trajectory, seq.intrinsics, args.depth_format)
    log.info("wrote %d frames to %s", len(seq), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    extra = {}
    if args.dataset:
        extra["dataset.path"] = args.dataset
    if args.out:
        extra["output.dir"] = args.out
    cfg = _config(args).updated(extra)
    if not cfg["dataset.path"]:
        raise ConfigError("no dataset: pass --dataset or set dataset.path")
    # opening the dataset validates it before anything is written
    dataset = Dataset(cfg["dataset.path"])
    result = run_slam(cfg, dataset)
    paths = write_outputs(result, cfg["output.dir"], save_tsdf=args.save_volume)
    for name, p in paths.items():
        log.info("%s: %s", name, p)
    return EXIT_OK


def cmd_eval_traj(args) -> int:
    est, gt = load_trajectory(args.est), load_trajectory(args.gt)
    e, g = associate_by_time(est, gt, args.max_dt)
    res = evaluate_trajectory(e, g, args.align, args.delta)
    n = len(res.frame_ids)
    pad = np.full(n - res.rte.count, math.nan)
    header = {
        "pairs": n,
        "align": res.align_mode,
        "scale": res.alignment.scale,
        "delta": res.delta,
    }
    if args.csv:
        cols = {
            "ate_m": res.ate.samples,
            "rte_m": np.concatenate([res.rte.samples, pad]),
            "rre_deg": np.concatenate([res.rre.samples, pad]),
        }
        write_samples_csv(args.csv, list(res.frame_ids), cols)
    _emit(Report(header, {"ate_m": res.ate, "rte_m": res.rte, "rre_deg": res.rre}), args.report)
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    pred, gt = frame_paths(args.pred), frame_paths(args.gt)
    if len(pred) != len(gt):
        raise DataError(f"{len(pred)} predicted maps for {len(gt)} reference maps")
    per_frame = [depth_metrics(load_depth(a), load_depth(b), args.scaling) for a, b in zip(pred, gt)]
    reports = depth_reports(per_frame)
    if args.csv:
        cols = {k: reports[k].samples for k in DEPTH_KEYS}
        cols["scale"] = np.array([d.scale for d in per_frame])
        write_samples_csv(args.csv, list(range(len(per_frame))), cols)
    header = {"frames": len(per_frame), "scaling": args.scaling}
    _emit(Report(header, reports), args.report)
    return EXIT_OK


def cmd_compare(args) -> int:
    _, a = read_samples_csv(args.a)
    _, b = read_samples_csv(args.b)
    names = args.column or [c for c in a if c in b]
    if not names:
        raise ConfigError("the two CSV files share no column")
    header: dict = {}
    for c in names:
        if c not in a or c not in b:
            raise ConfigError(f"column {c!r} is missing from one of the CSV files")
        xa, xb = a[c][~np.isnan(a[c])], b[c][~np.isnan(b[c])]
        t = two_sample_ttest(xa, xb)
        f = variance_equality_test(xa, xb)
        ja, jb = jarque_bera(xa), jarque_bera(xb)
        header.update(
            {
                f"{c}.n_a": len(xa),
                f"{c}.n_b": len(xb),
                f"{c}.mean_a": float(xa.mean()),
                f"{c}.mean_b": float(xb.mean()),
                f"{c}.t": t.t,
                f"{c}.t_df": t.df,
                f"{c}.t_p": t.p,
                f"{c}.f": f.f,
                f"{c}.f_df_num": f.df_num,
                f"{c}.f_df_den": f.df_den,
                f"{c}.f_p": f.p,
                f"{c}.jb_a": ja.jb,
                f"{c}.jb_p_a": ja.p,
                f"{c}.jb_b": jb.jb,
                f"{c}.jb_p_b": jb.p,
            }
        )
    _emit(Report(header), args.report)
    return EXIT_OK


def cmd_fuse(args) -> int:
    cfg = _config(args)
    dataset = Dataset(args.dataset)
    traj = load_trajectory(args.trajectory)
    if len(traj) != len(dataset):
        raise DataError(f"trajectory has {len(traj)} poses for {len(dataset)} frames")
    if args.depth_dir:
        depth_paths = frame_paths(args.depth_dir)
        if len(depth_paths) != len(dataset):
            raise DataError(f"{len(depth_paths)} depth maps for {len(dataset)} frames")
    elif not dataset.has_depth:
        raise ConfigError("dataset has no depth maps; pass --depth-dir")
    k = dataset.intrinsics
    vol = new_volume(cfg, center=traj.poses[0].translation)
    for i, pose in enumerate(traj.poses):
        d = load_depth(depth_paths[i]) if args.depth_dir else dataset.depth(i)
        img = dataset.rgb(i) if vol.has_color else None
        integrate(vol, d, pose, k, color=img, inplace=True)
    cloud = extract_surface(vol)
    write_ply(args.out, cloud)
    _emit(Report({"frames": len(traj), "surface_points": len(cloud), "clipped_points": int(vol.clipped_points)}), None)
    return EXIT_OK


def cmd_config_dump(args) -> int:
    sys.stdout.write(_config(args).dump(with_help=not args.bare))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_config_flags(p) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mvslam", description="Monocular SLAM backend with metric scale recovery and TSDF fusion.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-gen", help="render a synthetic sequence in the dataset layout")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--scene", default="sphere", choices=sorted(GEOMETRIES))
    p.add_argument("--path", default="arc", choices=sorted(PATHS), help="camera path")
    p.add_argument("--frames", type=_positive_int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=_positive_int, default=320)
    p.add_argument("--height", type=_positive_int, default=240)
    p.add_argument("--focal", type=float, default=260.0, help="focal length in pixels")
    p.add_argument("--depth-format", default="pfm", choices=("pfm", "png"))
    p.add_argument("--workers", type=_positive_int, default=1, help="render threads")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("run", help="full pipeline: trajectory.txt, surface.ply, stats.txt")
    _add_config_flags(p)
    p.add_argument("--dataset", help="dataset directory (overrides dataset.path)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--save-volume", action="store_true", help="also write volume.tsdf")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval-traj", help="ATE, RTE and RRE of an estimate against ground truth")
    p.add_argument("--est", required=True, help="estimated TUM trajectory")
    p.add_argument("--gt", required=True, help="ground-truth TUM trajectory")
    p.add_argument("--align", default="sim3", choices=ALIGN_MODES)
    p.add_argument("--delta", type=_positive_int, default=1, help="frame gap for relative errors")
    p.add_argument("--max-dt", type=float, default=0.01, help="timestamp association tolerance (s)")
    p.add_argument("--csv", help="per-frame samples: frame_id,ate_m,rte_m,rre_deg")
    p.add_argument("--report", help="also write the key=value report here")
    p.set_defaults(func=cmd_eval_traj)

    p = sub.add_parser("eval-depth", help="depth error suite over two directories of depth maps")
    p.add_argument("--pred", required=True, help="directory of predicted %%06d.png/.pfm maps")
    p.add_argument("--gt", required=True, help="directory of reference maps")
    p.add_argument("--scaling", default="none", choices=("none", "median"))
    p.add_argument("--csv", help="per-frame samples: frame_id," + ",".join(DEPTH_KEYS) + ",scale")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("compare", help="t-test and F-test between two sample CSV files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--column", action="append", help="column to compare (repeatable; default all shared)")
    p.add_argument("--report")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fuse", help="fuse dataset depth along a metric trajectory into a PLY")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--trajectory", required=True, help="metric TUM trajectory, one pose per frame")
    p.add_argument("--depth-dir", help="depth maps to fuse instead of the dataset's")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("config-dump", help="print every configuration key with its value")
    _add_config_flags(p)
    p.add_argument("--bare", action="store_true", help="omit the help comments")
    p.set_defaults(func=cmd_config_dump)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"mvslam: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mvslam: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SlamError, OSError) as exc:
        print(f"mvslam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
