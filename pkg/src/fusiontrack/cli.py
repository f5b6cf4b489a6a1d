"""Command-line entry point: ``fusiontrack track|evaluate|simulate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .errors import FusionTrackError
from .metrics import distance_buckets, evaluate
from .simulator import generate
from .tracker import TrackerParams, run

log = logging.getLogger("fusiontrack")


def _cmd_track(args) -> int:
    params = io.read_config(args.config)
    frames = io.read_detections(args.detections, camera=params.camera)
    outputs = run(frames, params)
    io.write_tracks(args.output, io.outputs_to_records(outputs), n_frames=len(frames))
    log.info("tracked %d frames -> %s", len(frames), args.output)
    return 0


def _cmd_evaluate(args) -> int:
    hyp = io.read_annotations(args.tracks, "tracks")
    gt = io.read_annotations(args.gt, "gt", n_frames=len(hyp))
    if len(hyp) < len(gt):
        hyp += [[] for _ in range(len(gt) - len(hyp))]
    report = evaluate(gt, hyp, args.mode, args.iou_threshold)
    if args.mode == "3d":
        report.buckets = distance_buckets(gt, hyp, report.iou_threshold)
    print(report.summary())
    for b in report.buckets:
        print("  " + b.summary())
    if args.json:
        Path(args.json).write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return 0


def _cmd_simulate(args) -> int:
    cfg = io.read_scenario_config(args.scenario)
    scenario = generate(cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    io.write_detections(out / "detections.txt", scenario.frames)
    io.write_tracks(out / "gt.txt", io.annotations_to_records(scenario.ground_truth),
                    n_frames=cfg.num_frames, kind="gt")
    params = TrackerParams(noise=cfg.matched_noise(), camera=cfg.camera, default_dt=cfg.dt)
    io.write_config(out / "tracker.cfg", params)
    log.info("wrote %d frames to %s", cfg.num_frames, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fusiontrack", description="Camera 2D/3D fusion multi-object tracker.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="run the tracker over a detection file")
    t.add_argument("config")
    t.add_argument("detections")
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=_cmd_track)

    e = sub.add_parser("evaluate", help="CLEAR-MOT metrics of tracks against ground truth")
    e.add_argument("gt")
    e.add_argument("tracks")
    e.add_argument("--mode", choices=("2d", "3d"), default="3d")
    e.add_argument("--iou-threshold", type=float, default=None)
    e.add_argument("--json", help="also write the report as JSON to this path")
    e.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("scenario")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FusionTrackError, OSError, ValueError) as e:
        print(f"fusiontrack {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
