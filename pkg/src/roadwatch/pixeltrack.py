"""Per-pixel anomaly state tracking on sampled background frames.

Six aligned matrices accumulate detection evidence per pixel: consecutive
hit/miss counters, summed confidence, a three-state label, and the first/last
timestamps of the current run. Candidates are connected abnormal components;
their start times are then walked backward along the detection history.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import cv2
import numpy as np

from .imops import BoundingBox, GrayFrame, color_hist_similarity, iou, psnr

STATE_NORMAL = 0
STATE_SUSPICIOUS = 1
STATE_ABNORMAL = 2

SUSPICIOUS_TIME = 20.0   # seconds of sustained coverage before suspicious
ABNORMAL_TIME = 30.0     # seconds before abnormal
RESET_MISSES = 3         # consecutive miss frames that clear a run
MIN_HITS = 3             # consecutive hit frames required for suspicious
CANDIDATE_MIN_AREA = 64  # pixels; smaller abnormal components are noise

CROP_SIZE = 64


@dataclass
class PixelStateGrid:
    """State arrays share the frame's height x width shape."""

    height: int
    width: int
    sample_interval_s: float
    suspicious_time: float = SUSPICIOUS_TIME
    abnormal_time: float = ABNORMAL_TIME
    reset_misses: int = RESET_MISSES
    min_hits: int = MIN_HITS

    def __post_init__(self):
        shape = (self.height, self.width)
        self.v_undetected = np.zeros(shape, np.int32)
        self.v_detected = np.zeros(shape, np.int32)
        self.v_score = np.zeros(shape, np.float64)
        self.v_state = np.zeros(shape, np.uint8)
        self.v_start = np.zeros(shape, np.float64)
        self.v_end = np.zeros(shape, np.float64)


def _center_in_mask(box: BoundingBox, mask: np.ndarray | None) -> bool:
    if mask is None:
        return True
    cx, cy = box.center
    x, y = int(cx), int(cy)
    if not (0 <= y < mask.shape[0] and 0 <= x < mask.shape[1]):
        return False
    return bool(mask[y, x])


def update_grid(grid: PixelStateGrid, detections, mask: np.ndarray | None,
                t: float) -> PixelStateGrid:
    """Advance the grid by one background frame at time t (seconds).

    `detections` is a sequence of objects carrying .box and .score; those
    whose box center falls outside the mask are ignored entirely.
    """
    shape = (grid.height, grid.width)
    hit = np.zeros(shape, bool)
    score = np.zeros(shape, np.float64)
    for det in detections:
        if not _center_in_mask(det.box, mask):
            continue
        x0 = max(0, int(det.box.x_min))
        y0 = max(0, int(det.box.y_min))
        x1 = min(grid.width, int(math.ceil(det.box.x_max)))
        y1 = min(grid.height, int(math.ceil(det.box.y_max)))
        if x1 > x0 and y1 > y0:
            hit[y0:y1, x0:x1] = True
            np.maximum(score[y0:y1, x0:x1], det.score, out=score[y0:y1, x0:x1])

    fresh = hit & (grid.v_detected == 0)
    grid.v_start[fresh] = t
    grid.v_detected[hit] += 1
    grid.v_undetected[hit] = 0
    grid.v_score[hit] += score[hit]

    miss = ~hit
    grid.v_undetected[miss] += 1
    reset = miss & (grid.v_undetected >= grid.reset_misses)
    grid.v_detected[reset] = 0
    grid.v_score[reset] = 0.0
    grid.v_state[reset] = STATE_NORMAL

    # Each hit covers one sampling interval, so a run beginning at v_start
    # has spanned (t - v_start + interval) seconds by the current update.
    duration = t - grid.v_start + grid.sample_interval_s
    promote1 = (hit & (grid.v_state == STATE_NORMAL)
                & (duration >= grid.suspicious_time)
                & (grid.v_detected >= grid.min_hits))
    grid.v_state[promote1] = STATE_SUSPICIOUS
    promote2 = hit & (grid.v_state == STATE_SUSPICIOUS) & (duration >= grid.abnormal_time)
    grid.v_state[promote2] = STATE_ABNORMAL

    grid.v_end[grid.v_state != STATE_NORMAL] = t
    return grid


@dataclass(frozen=True)
class TubeSeed:
    region: BoundingBox
    stop_time: float
    last_seen: float
    peak_score: float

    def __post_init__(self):
        if self.stop_time > self.last_seen:
            raise ValueError("stop_time after last_seen")


def extract_candidates(grid: PixelStateGrid, t: float,
                       min_area: int = CANDIDATE_MIN_AREA) -> list[TubeSeed]:
    """Connected abnormal components at time t, one seed per component."""
    abnormal = (grid.v_state == STATE_ABNORMAL).astype(np.uint8)
    n, labels, stats, _cent = cv2.connectedComponentsWithStats(abnormal, connectivity=8)
    seeds = []
    for i in range(1, n):
        x, y, w, h, area = stats[i]
        if area < min_area:
            continue
        sel = labels == i
        stop = float(grid.v_start[sel].min())
        last = float(grid.v_end[sel].max())
        hits = np.maximum(grid.v_detected[sel], 1)
        peak = float((grid.v_score[sel] / hits).max())
        seeds.append(TubeSeed(BoundingBox(float(x), float(y), float(x + w), float(y + h)),
                              stop, max(last, stop), min(1.0, peak)))
    seeds.sort(key=lambda s: (s.stop_time, s.region.x_min, s.region.y_min))
    return seeds


@dataclass(frozen=True)
class BacktrackParams:
    t_iou: float = 0.3
    t_iou_relaxed: float = 0.5
    t_psnr: float = 18.0
    t_psnr_relaxed: float = 20.0
    t_color: float = 0.88
    t_color_relaxed: float = 0.9
    t_ratio_relaxed: float = 0.6
    t_time: float = 30.0
    ratio_window: int = 10


def _crop64(image: np.ndarray, box: BoundingBox) -> np.ndarray | None:
    patch = box.clipped(image.shape[1], image.shape[0]).crop(image)
    if patch.shape[0] < 2 or patch.shape[1] < 2:
        return None
    return cv2.resize(patch, (CROP_SIZE, CROP_SIZE), interpolation=cv2.INTER_LINEAR)


def backtrack_start(seed: TubeSeed, detections, frames,
                    params: BacktrackParams = BacktrackParams()) -> float:
    """Walk the detection history backward from seed.stop_time.

    `frames` are the background frames the detections were computed on
    (GrayFrame with frame_index/timestamp); `detections` is a DetectionStream
    over the same frame indices. Returns the earliest timestamp reachable
    through an IoU/appearance-consistent chain, else seed.stop_time.
    """
    by_frame = detections.by_frame()
    history = sorted(((f.frame_index, f.timestamp, f.data) for f in frames),
                     key=lambda x: -x[0])
    anchor_box = seed.region
    anchor_crop = None
    for fi, ts, img in history:
        if ts <= seed.stop_time:
            anchor_crop = _crop64(img, anchor_box)
            break
    earliest = seed.stop_time
    recent: deque[bool] = deque(maxlen=params.ratio_window)
    for fi, ts, img in history:
        if ts > seed.stop_time:
            continue
        dets = by_frame.get(fi, [])
        accepted = False
        if dets and anchor_crop is not None:
            best = max(dets, key=lambda d: iou(anchor_box, d.box))
            overlap = iou(anchor_box, best.box)
            crop = _crop64(img, best.box)
            if crop is not None:
                if overlap > params.t_iou_relaxed:
                    accepted = True
                elif overlap >= params.t_iou:
                    accepted = (psnr(crop, anchor_crop) >= params.t_psnr
                                and color_hist_similarity(crop, anchor_crop) >= params.t_color)
                else:
                    ratio = (sum(recent) / len(recent)) if recent else 1.0
                    accepted = (ratio >= params.t_ratio_relaxed
                                and psnr(crop, anchor_crop) >= params.t_psnr_relaxed
                                and color_hist_similarity(crop, anchor_crop) >= params.t_color_relaxed)
            if accepted:
                anchor_box = best.box
                anchor_crop = crop
                earliest = min(earliest, ts)
        recent.append(accepted)
        if not accepted and (seed.stop_time - ts) > params.t_time:
            break
    return earliest
