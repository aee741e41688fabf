"""End-to-end batch pipeline: stabilize, model backgrounds, detect, mask,
pixel-track, judge tubes, post-process, and score.

Expensive stages (stabilization transforms, background modeling) can be
cached on disk keyed by a content hash of the input frames plus the stage
configuration, so re-runs over unchanged inputs skip straight to the cheap
stages.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import background, pixeltrack, postproc, roadmask, scoring, stabilize, tubes
from .background import MogModel
from .config import PipelineConfig, config_fingerprint
from .detections import (DetectionRecord, DetectionStream, blob_detect,
                         fuse_detectors, read_detections)
from .imops import BoundingBox, GrayFrame, RawFrameStore, iou, read_frame_dir
from .pixeltrack import BacktrackParams, PixelStateGrid
from .postproc import AnomalyEvent
from .scoring import PredictionEvent


def content_key(frames) -> str:
    """Stable identity of a frame source, cheap where the source allows it."""
    if hasattr(frames, "content_key"):
        return frames.content_key()
    if isinstance(frames, RawFrameStore):
        h = hashlib.sha256()
        with open(frames.path, "rb") as fh:
            while True:
                chunk = fh.read(1 << 20)
                if not chunk:
                    break
                h.update(chunk)
        return "raw:" + h.hexdigest()
    h = hashlib.sha256()
    for i in range(len(frames)):
        h.update(frames[i].data.tobytes())
    return "mem:" + h.hexdigest()


class StageCache:
    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, key: str) -> str:
        return os.path.join(self.root, hashlib.sha256(key.encode()).hexdigest() + ".npz")

    def load(self, key: str):
        path = self._path(key)
        if not os.path.exists(path):
            return None
        with np.load(path) as data:
            return {k: data[k] for k in data.files}

    def save(self, key: str, **arrays):
        path = self._path(key)
        np.savez_compressed(path + ".tmp.npz", **arrays)
        os.replace(path + ".tmp.npz", path)


@dataclass
class VideoResult:
    video_id: str
    events: list[AnomalyEvent]
    predictions: list[PredictionEvent]
    shake: stabilize.ShakeVerdict | None = None
    notes: list[str] = field(default_factory=list)


def _frames_to_stack(frames):
    return (np.stack([f.data for f in frames]),
            np.array([f.frame_index for f in frames], np.int64),
            np.array([f.timestamp for f in frames], np.float64))


def _stack_to_frames(stack, indices, timestamps):
    return [GrayFrame(stack[i], frame_index=int(indices[i]), timestamp=float(timestamps[i]))
            for i in range(len(stack))]


def _stabilize_stage(frames, cfg: PipelineConfig, cache, key, notes):
    s = cfg.stabilize
    if not s.enabled or len(frames) < 2:
        return frames, None
    cached = cache.load(key) if cache else None
    if cached is not None:
        arr = cached["transforms"]
        transforms = [stabilize.RigidTransform(*row) for row in arr]
    else:
        transforms = stabilize.estimate_video_transforms(
            frames, max_corners=s.max_corners, quality=s.quality,
            min_distance=s.min_distance, downscale=s.downscale,
            redetect_every=s.redetect_every)
        if cache:
            cache.save(key, transforms=np.array(
                [[t.dx, t.dy, t.dangle] for t in transforms], np.float64))
    verdict = stabilize.classify_shaky(transforms, s.delta_t, s.delta_avg)
    if verdict.is_shaky:
        notes.append("stabilized: shaky per accumulated/average thresholds")
        frames = stabilize.smooth_and_correct(frames, transforms,
                                              window=s.smooth_window,
                                              ema_alpha=s.ema_alpha)
    return frames, verdict


def _model_forward(frames, cfg: PipelineConfig):
    """One forward pass: sampled backgrounds plus per-interval foreground
    unions (every pixel labeled foreground at least once in the interval)."""
    b = cfg.background
    first = frames[0]
    model = MogModel(first.height, first.width, alpha=b.alpha,
                     components=b.components, var_floor=b.var_floor,
                     bg_ratio=b.bg_ratio, match_sigma=b.match_sigma,
                     init_var=b.init_var, backend=b.backend or None)
    bgs, fgs = [], []
    acc = np.zeros((first.height, first.width), bool)
    n = len(frames)
    for i in range(n):
        f = frames[i]
        fg = model.update(f.data)
        if i + 1 > b.sample_interval:
            # labels during the first interval are burn-in noise: every pixel
            # starts out foreground until the model has seen the road
            acc |= fg > 0
        if (i + 1) % b.sample_interval == 0:
            bgs.append(GrayFrame(model.background_image(),
                                 frame_index=f.frame_index, timestamp=f.timestamp))
            # opening strips the isolated single-pixel flickers sensor noise
            # accumulates over an interval, keeping only coherent motion
            opened = cv2.morphologyEx(acc.astype(np.uint8), cv2.MORPH_OPEN,
                                      np.ones((3, 3), np.uint8))
            fgs.append(GrayFrame(opened, frame_index=f.frame_index,
                                 timestamp=f.timestamp))
            acc = np.zeros_like(acc)
    return bgs, fgs


def _background_stage(frames, cfg: PipelineConfig, cache, key_base):
    b = cfg.background
    cached = cache.load(key_base + ":forward") if cache else None
    if cached is not None:
        bgs = _stack_to_frames(cached["bg"], cached["idx"], cached["ts"])
        fgs = _stack_to_frames(cached["fg"], cached["idx"], cached["ts"])
    else:
        bgs, fgs = _model_forward(frames, cfg)
        if cache and bgs:
            stack, idx, ts = _frames_to_stack(bgs)
            fstack, _, _ = _frames_to_stack(fgs)
            cache.save(key_base + ":forward", bg=stack, fg=fstack, idx=idx, ts=ts)
    bwd = None
    if cfg.postproc.refine_enabled:
        cached = cache.load(key_base + ":backward") if cache else None
        if cached is not None:
            bwd = background.BackgroundSequence(
                _stack_to_frames(cached["bg"], cached["idx"], cached["ts"]),
                b.sample_interval, "backward")
        else:
            bwd = background.model_background(
                frames, "backward", sample_interval=b.sample_interval, alpha=b.alpha,
                components=b.components, var_floor=b.var_floor, bg_ratio=b.bg_ratio,
                match_sigma=b.match_sigma, init_var=b.init_var,
                backend=b.backend or None)
            if cache and bwd.frames:
                stack, idx, ts = _frames_to_stack(bwd.frames)
                cache.save(key_base + ":backward", bg=stack, idx=idx, ts=ts)
    return bgs, fgs, bwd


def _detect_stage(bgs, video_id, cfg: PipelineConfig) -> DetectionStream:
    """Static-object detections on background frames vs the earliest one."""
    d = cfg.detect
    if d.mode in ("file", "fused"):
        stream = read_detections(d.file_a)
        if d.mode == "fused":
            stream = fuse_detectors(stream, read_detections(d.file_b), d.nms_threshold)
        return stream
    if not bgs:
        return DetectionStream([])
    reference = bgs[0]
    records = []
    for bg in bgs[1:]:
        for sb in blob_detect(bg, reference, d.diff_threshold, d.min_area):
            records.append(DetectionRecord(video_id, bg.frame_index, sb.box,
                                           sb.score, "blob"))
    return DetectionStream(records)


def _mask_stage(frames, reference, video_id, cfg: PipelineConfig):
    m = cfg.mask
    if not m.enabled:
        return None
    d = cfg.detect
    records = []
    sampled = range(0, len(frames), m.stride)
    for i in sampled:
        f = frames[i]
        for sb in blob_detect(f.data, reference.data, d.diff_threshold, d.min_area):
            records.append(DetectionRecord(video_id, f.frame_index, sb.box,
                                           sb.score, "moving"))
    stream = DetectionStream(records)
    shape = (frames[0].height, frames[0].width)
    motion = roadmask.motion_mask(stream, shape, total_frames=len(sampled),
                                  freq_threshold=m.freq_threshold)
    tracks = roadmask.track_vehicles(stream)
    traj = roadmask.trajectory_mask(tracks, shape, min_len=m.min_len,
                                    min_displacement=m.min_displacement,
                                    angle_threshold=m.angle_threshold)
    return roadmask.fuse_masks(motion, traj)


def _track_stage(bgs, stream, mask, cfg: PipelineConfig):
    t = cfg.track
    b = cfg.background
    first = bgs[0]
    interval_s = (bgs[1].timestamp - bgs[0].timestamp) if len(bgs) > 1 else 4.0
    grid = PixelStateGrid(first.height, first.width, interval_s,
                          suspicious_time=t.suspicious_time,
                          abnormal_time=t.abnormal_time,
                          reset_misses=t.reset_misses, min_hits=t.min_hits)
    by_frame = stream.by_frame()
    for bg in bgs:
        dets = by_frame.get(bg.frame_index, [])
        pixeltrack.update_grid(grid, dets, mask, bg.timestamp)
    seeds = pixeltrack.extract_candidates(grid, bgs[-1].timestamp, t.min_area)
    params = BacktrackParams(t.t_iou, t.t_iou_relaxed, t.t_psnr, t.t_psnr_relaxed,
                             t.t_color, t.t_color_relaxed, t.t_ratio_relaxed,
                             t.t_time, t.ratio_window)
    starts = [pixeltrack.backtrack_start(s, stream, bgs, params) for s in seeds]
    return seeds, starts


def _build_tube(seed, tube_id, stream, bgs, min_iou: float = 0.1):
    by_frame = stream.by_frame()
    regions = []
    for bg in bgs:
        dets = by_frame.get(bg.frame_index, [])
        best, best_v = None, min_iou
        for det in dets:
            v = iou(seed.region, det.box)
            if v > best_v:
                best, best_v = det, v
        if best is not None:
            try:
                crop = tubes.make_crop(bg.data, best.box)
            except ValueError:
                continue
            regions.append(tubes.TubeRegion(bg.frame_index, bg.timestamp,
                                            best.box, crop))
    if not regions:
        crop = tubes.make_crop(bgs[-1].data, seed.region)
        regions = [tubes.TubeRegion(bgs[-1].frame_index, bgs[-1].timestamp,
                                    seed.region, crop)]
    return tubes.Tube(tube_id, regions)


def _union_box(boxes):
    return BoundingBox(min(b.x_min for b in boxes), min(b.y_min for b in boxes),
                       max(b.x_max for b in boxes), max(b.y_max for b in boxes))


def process_video(frames, video_id: str, cfg: PipelineConfig,
                  cache: StageCache | None = None) -> VideoResult:
    notes: list[str] = []
    if cache is None and cfg.cache_dir:
        cache = StageCache(cfg.cache_dir)
    key = None
    if cache:
        key = content_key(frames)

    frames, shake = _stabilize_stage(
        frames, cfg, cache,
        key and f"stabilize:{key}:{config_fingerprint(cfg.stabilize)}", notes)
    bgs, fgs, bwd = _background_stage(
        frames, cfg, cache,
        key and f"background:{key}:{config_fingerprint(cfg.background)}" or "")
    if not bgs:
        return VideoResult(video_id, [], [], shake, notes + ["no background samples"])

    stream = _detect_stage(bgs, video_id, cfg)
    mask = _mask_stage(frames, bgs[0], video_id, cfg)
    seeds, starts = _track_stage(bgs, stream, mask, cfg)

    tube_list = [_build_tube(s, i, stream, bgs) for i, s in enumerate(seeds)]
    fused = tubes.inter_tube_fuse(tube_list, cfg.tube.fuse_psnr)

    events = []
    for ft in fused:
        members = [i for i, t in enumerate(tube_list)
                   if t.regions and t.regions[0] in ft.regions]
        if not members:
            members = [ft.tube_id]
        stop = min(seeds[i].stop_time for i in members)
        start = min(starts[i] for i in members)
        region = _union_box([seeds[i].region for i in members])
        conf = min(1.0, max(seeds[i].peak_score for i in members))
        verdict = tubes.intra_tube_judge(ft, cfg.tube.sim_threshold,
                                         cfg.tube.lower_bound, cfg.tube.duration_ratio)
        event = AnomalyEvent(video_id, region, stop, start, conf)
        if not verdict.accepted:
            event.confidence = conf * 0.5
            event.notes.append("tube judged inconsistent; confidence halved")
        if cfg.postproc.collision_enabled:
            p = cfg.postproc
            event.crash_time = postproc.detect_collision(
                event, fgs, bgs, p.ring_width, p.fg_threshold,
                p.bg_sim_threshold, p.settle_margin)
        if cfg.postproc.refine_enabled and bwd is not None:
            postproc.refine_boundaries(event, bwd, cfg.postproc.appearance_sim)
        events.append(event)

    events.sort(key=lambda e: e.submission_time())
    preds = [PredictionEvent(video_id, e.submission_time(), round(e.confidence, 4))
             for e in events]
    return VideoResult(video_id, events, preds, shake, notes)


def load_frames(path: str, fps: float = 30.0):
    """Frame source from a raw planar store or a directory of images."""
    if os.path.isdir(path):
        return read_frame_dir(path, fps)
    return RawFrameStore(path)


def _process_path(args):
    video_id, path, cfg = args
    frames = load_frames(path)
    return process_video(frames, video_id, cfg)


def run_pipeline(cfg: PipelineConfig, videos: list[tuple[str, str]], out_dir: str,
                 truth_path: str | None = None):
    """Process (video_id, frames_path) pairs and write reports under out_dir.

    Emits `events.tsv` (full event dump), `predictions.txt` (submission
    lines `video_id time confidence`), and, when truth is supplied,
    `report.txt` with the score breakdown. Returns (results, report|None).
    """
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(vid, path, cfg) for vid, path in videos]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_process_path, jobs))
    else:
        results = [_process_path(j) for j in jobs]

    all_events = [e for r in results for e in r.events]
    all_preds = [p for r in results for p in r.predictions]
    postproc.write_event_report(all_events, os.path.join(out_dir, "events.tsv"))
    scoring.write_predictions(all_preds, os.path.join(out_dir, "predictions.txt"))

    report = None
    if truth_path:
        gts = scoring.read_ground_truth(truth_path)
        report = scoring.evaluate(all_preds, gts, cfg.eval.tp_window, cfg.eval.rmse_cap)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(scoring.format_report(report))
    return results, report
