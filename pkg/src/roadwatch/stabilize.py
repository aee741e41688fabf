"""Camera-motion estimation, shake classification, and warp correction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .imops import GrayFrame

DELTA_T = 17200.0    # accumulated |dx|+|dy| threshold
DELTA_AVG = 0.645    # per-frame average threshold
SMOOTH_WINDOW = 31
EMA_ALPHA = 0.9      # weight on the current sample

LK_WIN = (21, 21)
LK_MAX_LEVEL = 2     # 3 pyramid levels


@dataclass(frozen=True)
class RigidTransform:
    dx: float = 0.0
    dy: float = 0.0
    dangle: float = 0.0

    def magnitude(self) -> float:
        return abs(self.dx) + abs(self.dy)


@dataclass(frozen=True)
class ShakeVerdict:
    accumulated: float
    average: float
    is_shaky: bool


def detect_corners(frame, max_corners: int = 200, quality: float = 0.01,
                   min_distance: float = 10.0) -> np.ndarray:
    """Shi-Tomasi (min-eigenvalue) corners, strongest first. (N, 2) float32."""
    img = frame.data if isinstance(frame, GrayFrame) else np.asarray(frame)
    if max_corners < 1:
        raise ValueError("max_corners must be >= 1")
    pts = cv2.goodFeaturesToTrack(img, maxCorners=max_corners, qualityLevel=quality,
                                  minDistance=min_distance)
    if pts is None:
        return np.empty((0, 2), np.float32)
    return pts.reshape(-1, 2)


def track_points(prev, cur, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pyramidal Lucas-Kanade; returns (points, matched_points, valid)."""
    a = prev.data if isinstance(prev, GrayFrame) else np.asarray(prev)
    b = cur.data if isinstance(cur, GrayFrame) else np.asarray(cur)
    if a.shape != b.shape:
        raise ValueError("frames must share dimensions")
    points = np.asarray(points, np.float32).reshape(-1, 2)
    if len(points) == 0:
        return points, points.copy(), np.zeros(0, bool)
    nxt, status, _err = cv2.calcOpticalFlowPyrLK(
        a, b, points.reshape(-1, 1, 2), None, winSize=LK_WIN, maxLevel=LK_MAX_LEVEL)
    nxt = nxt.reshape(-1, 2)
    valid = status.ravel().astype(bool)
    h, w = b.shape
    inside = (nxt[:, 0] >= 0) & (nxt[:, 0] < w) & (nxt[:, 1] >= 0) & (nxt[:, 1] < h)
    return points, nxt, valid & inside


def estimate_transform(src, dst) -> tuple[RigidTransform, bool]:
    """Least-squares rigid fit (rotation + translation) with one round of
    2-sigma residual rejection. Returns (transform, degraded)."""
    src = np.asarray(src, np.float64).reshape(-1, 2)
    dst = np.asarray(dst, np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("point sets must pair up")
    if len(src) < 3:
        return RigidTransform(), True

    def fit(s, d):
        cs, cd = s.mean(axis=0), d.mean(axis=0)
        h = (s - cs).T @ (d - cd)
        u, _sv, vt = np.linalg.svd(h)
        r = vt.T @ u.T
        if np.linalg.det(r) < 0:
            vt[-1] *= -1
            r = vt.T @ u.T
        t = cd - r @ cs
        return r, t

    r, t = fit(src, dst)
    resid = np.linalg.norm(src @ r.T + t - dst, axis=1)
    keep = resid <= resid.mean() + 2.0 * resid.std() + 1e-12
    if keep.sum() >= 3:
        r, t = fit(src[keep], dst[keep])
    angle = math.atan2(r[1, 0], r[0, 0])
    return RigidTransform(float(t[0]), float(t[1]), angle), False


def estimate_video_transforms(frames, max_corners: int = 200, quality: float = 0.01,
                              min_distance: float = 10.0, downscale: int = 1,
                              redetect_every: int = 10, min_points: int = 30
                              ) -> list[RigidTransform]:
    """Frame-to-frame rigid transforms for a whole sequence.

    Corners are re-detected periodically and tracked in between; `downscale`
    trades accuracy for speed (dx/dy are reported at full resolution).
    """
    n = len(frames)
    if n < 2:
        return []

    def prep(i):
        img = frames[i].data if isinstance(frames[i], GrayFrame) else np.asarray(frames[i])
        if downscale > 1:
            img = cv2.resize(img, (img.shape[1] // downscale, img.shape[0] // downscale),
                             interpolation=cv2.INTER_AREA)
        return img

    out: list[RigidTransform] = []
    prev = prep(0)
    pts = detect_corners(prev, max_corners, quality, min_distance)
    for i in range(1, n):
        cur = prep(i)
        if len(pts) < min_points or (i - 1) % redetect_every == 0:
            pts = detect_corners(prev, max_corners, quality, min_distance)
        if len(pts) < 3:
            out.append(RigidTransform())
            prev = cur
            pts = np.empty((0, 2), np.float32)
            continue
        p0, p1, ok = track_points(prev, cur, pts)
        tf, _deg = estimate_transform(p0[ok], p1[ok])
        out.append(RigidTransform(tf.dx * downscale, tf.dy * downscale, tf.dangle))
        prev = cur
        pts = p1[ok]
    return out


def classify_shaky(transforms, delta_t: float = DELTA_T,
                   delta_avg: float = DELTA_AVG) -> ShakeVerdict:
    if len(transforms) == 0:
        raise ValueError("empty transform sequence")
    accumulated = float(sum(t.magnitude() for t in transforms))
    average = accumulated / len(transforms)
    return ShakeVerdict(accumulated, average,
                        accumulated > delta_t and average > delta_avg)


def cumulative_trajectory(transforms) -> np.ndarray:
    """(n+1, 3) prefix sums of (dx, dy, dangle); row 0 is the origin."""
    arr = np.array([[t.dx, t.dy, t.dangle] for t in transforms], np.float64)
    traj = np.zeros((len(transforms) + 1, 3))
    if len(transforms):
        traj[1:] = np.cumsum(arr, axis=0)
    return traj


def smooth_trajectory(traj: np.ndarray, window: int = SMOOTH_WINDOW,
                      ema_alpha: float = EMA_ALPHA) -> np.ndarray:
    """Hybrid filter: centered moving average (edge-truncated) then light
    exponential smoothing weighted ema_alpha on the current sample."""
    traj = np.asarray(traj, np.float64)
    n = len(traj)
    half = window // 2
    csum = np.concatenate([np.zeros((1, traj.shape[1])), np.cumsum(traj, axis=0)])
    out = np.empty_like(traj)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = (csum[hi] - csum[lo]) / (hi - lo)
    sm = np.empty_like(out)
    sm[0] = out[0]
    for i in range(1, n):
        sm[i] = ema_alpha * out[i] + (1.0 - ema_alpha) * sm[i - 1]
    return sm


def correction_for(raw: np.ndarray, smoothed: np.ndarray) -> np.ndarray:
    return smoothed - raw


def warp_frame(frame: np.ndarray, dx: float, dy: float, dangle: float) -> np.ndarray:
    if abs(dx) < 1e-9 and abs(dy) < 1e-9 and abs(dangle) < 1e-9:
        return frame.copy()
    h, w = frame.shape
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), math.degrees(dangle), 1.0)
    m[0, 2] += dx
    m[1, 2] += dy
    return cv2.warpAffine(frame, m, (w, h), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_REPLICATE)


def smooth_and_correct(frames, transforms, window: int = SMOOTH_WINDOW,
                       ema_alpha: float = EMA_ALPHA) -> list[GrayFrame]:
    """Warp every frame so the camera trajectory follows its smoothed version."""
    if len(transforms) != len(frames) - 1:
        raise ValueError("need exactly one transform per frame pair")
    raw = cumulative_trajectory(transforms)
    corr = correction_for(raw, smooth_trajectory(raw, window, ema_alpha))
    out = []
    for i in range(len(frames)):
        f = frames[i]
        img = f.data if isinstance(f, GrayFrame) else np.asarray(f)
        warped = warp_frame(img, corr[i, 0], corr[i, 1], corr[i, 2])
        idx = f.frame_index if isinstance(f, GrayFrame) else i
        ts = f.timestamp if isinstance(f, GrayFrame) else float(i)
        out.append(GrayFrame(warped, frame_index=idx, timestamp=ts))
    return out
