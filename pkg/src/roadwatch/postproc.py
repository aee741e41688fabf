"""Event-time refinement: collision-instant detection from ring evidence,
and start/end tightening against backward-modeled backgrounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .imops import SSIM_WINDOW, BoundingBox, GrayFrame, ssim, ssim_map

RING_WIDTH = 50          # pixels around the stopped box
FG_THRESHOLD = 1000      # foreground pixels in the ring marking a disturbance
BG_SIM_THRESHOLD = 0.9   # ring backgrounds less similar than this confirm a crash
SETTLE_MARGIN = 2        # background intervals past stop for the "after" crop
APPEARANCE_SIM = 0.8

CROP_SIZE = 64


@dataclass
class AnomalyEvent:
    video_id: str
    region: BoundingBox
    stop_time: float
    start_time: float
    confidence: float
    crash_time: float | None = None
    refined_start: float | None = None
    refined_end: float | None = None
    notes: list[str] = field(default_factory=list)

    def submission_time(self) -> float:
        """Crash instant when one was confirmed, else the tracked start."""
        return self.crash_time if self.crash_time is not None else self.start_time


def ring_mask(box: BoundingBox, shape: tuple[int, int],
              ring_width: int = RING_WIDTH) -> np.ndarray:
    """Annulus of ring_width pixels around the box, clipped to the frame."""
    h, w = shape
    outer = np.zeros(shape, bool)
    x0 = max(0, int(box.x_min) - ring_width)
    y0 = max(0, int(box.y_min) - ring_width)
    x1 = min(w, int(np.ceil(box.x_max)) + ring_width)
    y1 = min(h, int(np.ceil(box.y_max)) + ring_width)
    outer[y0:y1, x0:x1] = True
    ix0, iy0 = max(0, int(box.x_min)), max(0, int(box.y_min))
    ix1, iy1 = min(w, int(np.ceil(box.x_max))), min(h, int(np.ceil(box.y_max)))
    outer[iy0:iy1, ix0:ix1] = False
    return outer


def _ring_similarity(bg_a: np.ndarray, bg_b: np.ndarray, ring: np.ndarray) -> float:
    """Mean SSIM restricted to ring pixels (interior windows only)."""
    smap = ssim_map(bg_a, bg_b)
    m = SSIM_WINDOW // 2
    sel = ring[m:-m, m:-m]
    if not sel.any():
        return 1.0
    return float(smap[sel].mean())


def detect_collision(event: AnomalyEvent, fg_masks: list[GrayFrame],
                     backgrounds: list[GrayFrame], ring_width: int = RING_WIDTH,
                     fg_threshold: int = FG_THRESHOLD,
                     bg_sim_threshold: float = BG_SIM_THRESHOLD,
                     settle_margin: int = SETTLE_MARGIN) -> float | None:
    """Scan backward from the stop time for the collision instant.

    fg_masks carry the per-pixel foreground labels at each background sample;
    backgrounds are the matching emitted background images. A sample is a
    candidate when the ring around the stopped box holds more than
    fg_threshold foreground pixels; it is confirmed when the ring's
    background there no longer resembles the settled-scene background.
    Returns the earliest confirmed candidate time, or None.
    """
    if not fg_masks or not backgrounds:
        event.notes.append("collision: no history")
        return None
    shape = fg_masks[0].data.shape
    ring = ring_mask(event.region, shape, ring_width)
    bgs = sorted(backgrounds, key=lambda f: f.timestamp)
    masks = sorted(fg_masks, key=lambda f: f.timestamp)

    after_idx = None
    for i, bg in enumerate(bgs):
        if bg.timestamp >= event.stop_time:
            after_idx = min(i + settle_margin, len(bgs) - 1)
            break
    if after_idx is None:
        after_idx = len(bgs) - 1
    after_bg = bgs[after_idx].data

    confirmed = None
    for mask in masks:
        if mask.timestamp > event.stop_time:
            continue
        count = int(np.count_nonzero(mask.data[ring]))
        if count <= fg_threshold:
            continue
        bg_at = min(bgs, key=lambda b: abs(b.timestamp - mask.timestamp)).data
        if _ring_similarity(bg_at, after_bg, ring) < bg_sim_threshold:
            if confirmed is None or mask.timestamp < confirmed:
                confirmed = mask.timestamp
    return confirmed


def _region_crop(image: np.ndarray, box: BoundingBox) -> np.ndarray | None:
    patch = box.clipped(image.shape[1], image.shape[0]).crop(image)
    if patch.shape[0] < 2 or patch.shape[1] < 2:
        return None
    return cv2.resize(patch, (CROP_SIZE, CROP_SIZE), interpolation=cv2.INTER_LINEAR)


def refine_boundaries(event: AnomalyEvent, backward_backgrounds,
                      appearance_sim_threshold: float = APPEARANCE_SIM
                      ) -> tuple[float, float]:
    """Tighten event start/end against backgrounds modeled in reverse time.

    Reverse-time backgrounds show a stopped vehicle all the way back to its
    true arrival, so the earliest sample whose event-region crop still looks
    like the stopped vehicle marks the real start. Refinement only ever
    widens the event window.
    """
    frames = backward_backgrounds.frames if hasattr(backward_backgrounds, "frames") \
        else list(backward_backgrounds)
    frames = sorted(frames, key=lambda f: f.timestamp)
    start, end = event.start_time, max(event.stop_time, event.start_time)
    if not frames:
        return start, end
    anchor_frame = min(frames, key=lambda f: abs(f.timestamp - event.stop_time))
    anchor = _region_crop(anchor_frame.data, event.region)
    if anchor is None:
        return start, end
    matched = []
    for f in frames:
        crop = _region_crop(f.data, event.region)
        if crop is not None and ssim(crop, anchor) >= appearance_sim_threshold:
            matched.append(f.timestamp)
    if matched:
        start = min(start, min(matched))
        end = max(end, max(matched))
    event.refined_start, event.refined_end = start, end
    return start, end


def write_event_report(events: list[AnomalyEvent], path: str):
    """Tab-separated event dump with the refinement columns appended."""
    def fmt(v):
        return f"{v:.3f}" if v is not None else "-"

    with open(path, "w") as fh:
        for e in events:
            b = e.region
            fh.write(f"{e.video_id}\t{e.start_time:.3f}\t{e.stop_time:.3f}"
                     f"\t{e.confidence:.4f}\t{b.x_min:g}\t{b.y_min:g}\t{b.x_max:g}"
                     f"\t{b.y_max:g}\t{fmt(e.crash_time)}\t{fmt(e.refined_start)}"
                     f"\t{fmt(e.refined_end)}\n")
