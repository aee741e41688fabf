"""Road-mask generation: motion-frequency mask, trajectory mask with
direction clustering, and their fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .detections import DetectionStream
from .imops import BoundingBox, iou

TRACK_IOU_THRESHOLD = 0.3
TRACK_MAX_MISSED = 10
MOTION_FREQ_THRESHOLD = 0.002
TRAJ_MIN_LEN = 5
TRAJ_MIN_DISPLACEMENT = 50.0
TRAJ_ANGLE_THRESHOLD = 0.8  # radians of |arctan dy/dx| distance to the dominant cluster


@dataclass
class TrajectoryTrack:
    track_id: int
    samples: list[tuple[int, BoundingBox]] = field(default_factory=list)

    @property
    def displacement(self) -> float:
        (x0, y0) = self.samples[0][1].center
        (x1, y1) = self.samples[-1][1].center
        return math.hypot(x1 - x0, y1 - y0)

    @property
    def direction_angle(self) -> float:
        """Angle of the net first-to-last motion vector; only meaningful when
        displacement > 0."""
        (x0, y0) = self.samples[0][1].center
        (x1, y1) = self.samples[-1][1].center
        return math.atan2(y1 - y0, x1 - x0)

    @property
    def abs_incline(self) -> float:
        """|arctan(dy/dx)| of the net motion, in [0, pi/2]."""
        (x0, y0) = self.samples[0][1].center
        (x1, y1) = self.samples[-1][1].center
        return math.atan2(abs(y1 - y0), abs(x1 - x0))


class _OpenTrack:
    def __init__(self, track_id, frame, box):
        self.track_id = track_id
        self.samples = [(frame, box)]
        self.velocity = (0.0, 0.0)

    @property
    def last_frame(self):
        return self.samples[-1][0]

    def predicted(self, frame) -> BoundingBox:
        f0, box = self.samples[-1]
        dt = frame - f0
        dx, dy = self.velocity[0] * dt, self.velocity[1] * dt
        return BoundingBox(box.x_min + dx, box.y_min + dy, box.x_max + dx, box.y_max + dy)

    def extend(self, frame, box):
        f0, prev = self.samples[-1]
        dt = frame - f0
        if dt > 0:
            (px, py), (cx, cy) = prev.center, box.center
            self.velocity = ((cx - px) / dt, (cy - py) / dt)
        self.samples.append((frame, box))


def track_vehicles(stream: DetectionStream, iou_threshold: float = TRACK_IOU_THRESHOLD,
                   max_missed: int = TRACK_MAX_MISSED) -> list[TrajectoryTrack]:
    """Constant-velocity + greedy-IoU association over a sorted stream."""
    open_tracks: list[_OpenTrack] = []
    closed: list[TrajectoryTrack] = []
    next_id = 0
    by_frame = stream.by_frame()
    for frame in sorted(by_frame):
        still_open = []
        for tr in open_tracks:
            if frame - tr.last_frame > max_missed:
                closed.append(TrajectoryTrack(tr.track_id, tr.samples))
            else:
                still_open.append(tr)
        open_tracks = still_open

        dets = [r.box for r in by_frame[frame]]
        pairs = []
        for ti, tr in enumerate(open_tracks):
            pred = tr.predicted(frame)
            for di, box in enumerate(dets):
                v = iou(pred, box)
                if v >= iou_threshold:
                    pairs.append((v, ti, di))
        pairs.sort(key=lambda p: -p[0])
        used_t, used_d = set(), set()
        for v, ti, di in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            open_tracks[ti].extend(frame, dets[di])
        for di, box in enumerate(dets):
            if di not in used_d:
                open_tracks.append(_OpenTrack(next_id, frame, box))
                next_id += 1
    closed.extend(TrajectoryTrack(tr.track_id, tr.samples) for tr in open_tracks)
    return [t for t in sorted(closed, key=lambda t: t.track_id) if len(t.samples) >= 2]


def _paint_boxes(shape, boxes) -> np.ndarray:
    mask = np.zeros(shape, np.uint8)
    h, w = shape
    for b in boxes:
        x0, y0 = max(0, int(b.x_min)), max(0, int(b.y_min))
        x1, y1 = min(w, int(math.ceil(b.x_max))), min(h, int(math.ceil(b.y_max)))
        if x1 > x0 and y1 > y0:
            mask[y0:y1, x0:x1] = 1
    return mask


def motion_mask(stream: DetectionStream, shape: tuple[int, int],
                total_frames: int | None = None,
                freq_threshold: float = MOTION_FREQ_THRESHOLD) -> np.ndarray:
    """Pixels covered by detections in at least freq_threshold of all frames."""
    if len(stream) == 0:
        return np.zeros(shape, bool)
    if total_frames is None:
        total_frames = stream.frames()[-1] + 1
    h, w = shape
    counts = np.zeros((h, w), np.int64)
    for _frame, recs in stream.by_frame().items():
        counts += _paint_boxes(shape, [r.box for r in recs])
    mask = (counts / float(total_frames) >= freq_threshold).astype(np.uint8)
    kernel5 = np.ones((5, 5), np.uint8)
    mask = cv2.morphologyEx(mask, cv2.MORPH_CLOSE, kernel5)
    mask = cv2.morphologyEx(mask, cv2.MORPH_OPEN, kernel5)
    return mask.astype(bool)


def _two_means(values: np.ndarray, iters: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 1-D 2-means; returns (centers[2], assignment)."""
    c = np.array([values.min(), values.max()], np.float64)
    assign = np.zeros(len(values), np.int64)
    for _ in range(iters):
        assign = (np.abs(values - c[1]) < np.abs(values - c[0])).astype(np.int64)
        new = c.copy()
        for k in (0, 1):
            sel = values[assign == k]
            if len(sel):
                new[k] = sel.mean()
        if np.allclose(new, c):
            break
        c = new
    return c, assign


def trajectory_mask(tracks, shape: tuple[int, int], min_len: int = TRAJ_MIN_LEN,
                    min_displacement: float = TRAJ_MIN_DISPLACEMENT,
                    angle_threshold: float = TRAJ_ANGLE_THRESHOLD) -> np.ndarray:
    """Union of boxes of tracks moving along the dominant road direction."""
    kept = [t for t in tracks
            if len(t.samples) >= min_len and t.displacement >= min_displacement]
    if not kept:
        return np.zeros(shape, bool)
    angles = np.array([t.abs_incline for t in kept])
    centers, assign = _two_means(angles)
    counts = np.bincount(assign, minlength=2)
    dominant = int(np.argmax(counts))
    primary = [t for t, a in zip(kept, angles)
               if abs(a - centers[dominant]) <= angle_threshold]
    boxes = [b for t in primary for _f, b in t.samples]
    return _paint_boxes(shape, boxes).astype(bool)


def fuse_masks(motion: np.ndarray, trajectory: np.ndarray) -> np.ndarray:
    """Pixelwise OR then a 7x7 morphological closing."""
    if motion.shape != trajectory.shape:
        raise ValueError(f"dimension mismatch: {motion.shape} vs {trajectory.shape}")
    fused = (motion.astype(bool) | trajectory.astype(bool)).astype(np.uint8)
    fused = cv2.morphologyEx(fused, cv2.MORPH_CLOSE, np.ones((7, 7), np.uint8))
    return fused.astype(bool)


def save_mask(mask: np.ndarray, path: str):
    cv2.imwrite(path, mask.astype(np.uint8) * 255)


def load_mask(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ValueError(f"unreadable mask {path}")
    return img > 127
