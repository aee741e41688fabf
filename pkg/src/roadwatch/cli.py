"""Command-line entry points for the batch anomaly-detection pipeline."""

from __future__ import annotations

import argparse
import os
import sys

import cv2
import numpy as np

from . import background, detections, pipeline, roadmask, scoring, stabilize, synth
from .config import load_config
from .imops import GrayFrame, RawFrameWriter


def _add_config_arg(p):
    p.add_argument("--config", default=None, help="pipeline config file")


def _frames(path, fps=30.0):
    return pipeline.load_frames(path, fps)


def cmd_stabilize(args):
    cfg = load_config(args.config).stabilize
    frames = _frames(args.input)
    transforms = stabilize.estimate_video_transforms(
        frames, max_corners=cfg.max_corners, quality=cfg.quality,
        min_distance=cfg.min_distance, downscale=cfg.downscale,
        redetect_every=cfg.redetect_every)
    verdict = stabilize.classify_shaky(transforms, cfg.delta_t, cfg.delta_avg)
    if args.report:
        acc = 0.0
        with open(args.report, "w") as fh:
            for i, t in enumerate(transforms):
                acc += t.magnitude()
                fh.write(f"{i}\t{t.dx:.4f}\t{t.dy:.4f}\t{t.dangle:.6f}\t{acc:.4f}\n")
    print(f"accumulated={verdict.accumulated:.2f} average={verdict.average:.4f} "
          f"shaky={verdict.is_shaky}")
    if args.output:
        out = stabilize.smooth_and_correct(frames, transforms, cfg.smooth_window,
                                           cfg.ema_alpha) if verdict.is_shaky \
            else [frames[i] for i in range(len(frames))]
        f0 = frames[0]
        with RawFrameWriter(args.output, f0.width, f0.height, getattr(frames, "fps", 30.0)) as wr:
            for f in out:
                wr.append(f.data)
    return 0


def cmd_background(args):
    cfg = load_config(args.config).background
    frames = _frames(args.input)
    interval = args.interval or cfg.sample_interval
    seq = background.model_background(
        frames, args.direction, sample_interval=interval, alpha=cfg.alpha,
        components=cfg.components, var_floor=cfg.var_floor, bg_ratio=cfg.bg_ratio,
        match_sigma=cfg.match_sigma, init_var=cfg.init_var,
        backend=cfg.backend or None)
    os.makedirs(args.output, exist_ok=True)
    with open(os.path.join(args.output, "index.txt"), "w") as fh:
        for i, f in enumerate(seq.frames):
            name = f"bg_{i:05d}.png"
            cv2.imwrite(os.path.join(args.output, name), f.data)
            fh.write(f"{name}\t{f.frame_index}\t{f.timestamp:.4f}\n")
    print(f"{len(seq.frames)} backgrounds ({args.direction}, every {interval} frames)")
    return 0


def cmd_detect(args):
    cfg = load_config(args.config).detect
    if args.mode == "file":
        stream = detections.read_detections(args.file_a)
    elif args.mode == "fused":
        stream = detections.fuse_detectors(detections.read_detections(args.file_a),
                                           detections.read_detections(args.file_b),
                                           cfg.nms_threshold)
    else:
        bg = cv2.imread(args.background, cv2.IMREAD_GRAYSCALE)
        ref = cv2.imread(args.reference, cv2.IMREAD_GRAYSCALE)
        if bg is None or ref is None:
            print("unreadable background/reference image", file=sys.stderr)
            return 2
        boxes = detections.blob_detect(bg, ref, cfg.diff_threshold, cfg.min_area)
        stream = detections.DetectionStream(
            [detections.DetectionRecord(args.video_id, args.frame, b.box, b.score, "blob")
             for b in boxes])
    detections.write_detections(stream, args.output)
    print(f"{len(stream)} detections -> {args.output}")
    return 0


def cmd_mask(args):
    cfg = load_config(args.config).mask
    stream = detections.read_detections(args.detections)
    shape = (args.height, args.width)
    total = args.total_frames or (stream.frames()[-1] + 1 if len(stream) else 1)
    motion = roadmask.motion_mask(stream, shape, total, cfg.freq_threshold)
    tracks = roadmask.track_vehicles(stream)
    traj = roadmask.trajectory_mask(tracks, shape, cfg.min_len,
                                    cfg.min_displacement, cfg.angle_threshold)
    fused = roadmask.fuse_masks(motion, traj)
    roadmask.save_mask(fused, args.output)
    print(f"mask covers {int(fused.sum())} px -> {args.output}")
    return 0


def cmd_synth(args):
    spec = synth.parse_scene(args.spec)
    raw = synth.write_scene(spec, args.seed, args.output, args.video_id)
    print(f"scene -> {raw}")
    return 0


def cmd_score(args):
    preds = scoring.read_predictions(args.predictions)
    gts = scoring.read_ground_truth(args.truth)
    cfg = load_config(args.config).eval
    report = scoring.evaluate(preds, gts, cfg.tp_window, cfg.rmse_cap)
    sys.stdout.write(scoring.format_report(report))
    return 0


def _run_stages(args, until: str | None):
    cfg = load_config(args.config)
    videos = []
    for item in args.videos:
        vid, sep, path = item.partition("=")
        if not sep:
            vid, path = os.path.basename(item).split(".")[0], item
        videos.append((vid, path))
    results, report = pipeline.run_pipeline(cfg, videos, args.output, args.truth)
    for r in results:
        for e in r.events:
            print(f"{r.video_id}\t{e.submission_time():.2f}\t{e.confidence:.3f}")
    if report is not None:
        sys.stdout.write(scoring.format_report(report))
    return 0


def cmd_run(args):
    return _run_stages(args, None)


def _add_run_like(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("videos", nargs="+",
                   help="video_id=frames_path (raw store or image directory)")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--truth", default=None)
    _add_config_arg(p)
    p.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="roadwatch",
                                 description="stalled-vehicle/crash detection for "
                                             "fixed-camera traffic video")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stabilize", help="estimate camera motion and correct shake")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", default=None)
    p.add_argument("--report", default=None)
    _add_config_arg(p)
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("background", help="emit sampled mixture-model backgrounds")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--direction", choices=["forward", "backward"], default="forward")
    p.add_argument("--interval", type=int, default=None)
    _add_config_arg(p)
    p.set_defaults(func=cmd_background)

    p = sub.add_parser("detect", help="produce or fuse detection streams")
    p.add_argument("--mode", choices=["blob", "file", "fused"], default="blob")
    p.add_argument("--background", default=None)
    p.add_argument("--reference", default=None)
    p.add_argument("--file-a", dest="file_a", default=None)
    p.add_argument("--file-b", dest="file_b", default=None)
    p.add_argument("--video-id", default="video")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", dest="output", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("mask", help="build the road mask from detections")
    p.add_argument("--detections", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--total-frames", type=int, default=None)
    p.add_argument("--out", dest="output", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_mask)

    _add_run_like(sub, "track", "run through pixel tracking and print candidates")
    _add_run_like(sub, "tubes", "run through tube judgment and print events")
    _add_run_like(sub, "postproc", "run the full pipeline with refinement")

    p = sub.add_parser("score", help="score predictions against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", help="render a synthetic ground-truthed scene")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--video-id", default="scene")
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_synth)

    _add_run_like(sub, "run", "execute the whole pipeline end to end")

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
