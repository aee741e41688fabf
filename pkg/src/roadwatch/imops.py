"""Shared image and geometry primitives: frames, SSIM, PSNR, histograms, IoU, NMS."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import cv2
import numpy as np

PSNR_MAX = 100.0  # dB sentinel for zero-MSE pairs

# Standard SSIM constants for 8-bit dynamic range.
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class GrayFrame:
    """Single-channel 8-bit frame with its position on the video timeline."""

    data: np.ndarray
    frame_index: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError("frame data must be a non-empty HxW array")
        if self.data.dtype != np.uint8:
            self.data = np.clip(np.rint(self.data), 0, 255).astype(np.uint8)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def clipped(self, width: int, height: int) -> "BoundingBox":
        return BoundingBox(
            max(0.0, self.x_min), max(0.0, self.y_min),
            min(float(width), self.x_max), min(float(height), self.y_max),
        )

    def crop(self, image: np.ndarray) -> np.ndarray:
        x0, y0 = int(round(self.x_min)), int(round(self.y_min))
        x1, y1 = int(round(self.x_max)), int(round(self.y_max))
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, image.shape[1]), min(y1, image.shape[0])
        return image[y0:y1, x0:x1]


@dataclass(frozen=True)
class ScoredBox:
    box: BoundingBox
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def _as_array(frame) -> np.ndarray:
    if isinstance(frame, GrayFrame):
        return frame.data
    return np.asarray(frame)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Convert a color (BGR or RGB-agnostic 3-channel) image to 8-bit luma."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(np.uint8, copy=False)
    r, g, b = LUMA_WEIGHTS
    gray = image[..., 0] * r + image[..., 1] * g + image[..., 2] * b
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def ssim_map(a, b) -> np.ndarray:
    """Per-window SSIM over fully interior 11x11 Gaussian windows.

    Output is smaller than the input by the window margin (5 px per side).
    """
    x = _as_array(a).astype(np.float64)
    y = _as_array(b).astype(np.float64)
    _check_same_shape(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    kernel = cv2.getGaussianKernel(SSIM_WINDOW, SSIM_SIGMA)

    def blur(img):
        full = cv2.sepFilter2D(img, cv2.CV_64F, kernel, kernel, borderType=cv2.BORDER_REFLECT)
        m = SSIM_WINDOW // 2
        return full[m:-m, m:-m]

    mu_x = blur(x)
    mu_y = blur(y)
    sxx = blur(x * x) - mu_x * mu_x
    syy = blur(y * y) - mu_y * mu_y
    sxy = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Global mean SSIM, Gaussian-window variant (11x11, sigma 1.5)."""
    return float(np.mean(ssim_map(a, b)))


def psnr(a, b) -> float:
    x = _as_array(a).astype(np.float64)
    y = _as_array(b).astype(np.float64)
    _check_same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_MAX
    return 10.0 * np.log10(255.0 ** 2 / mse)


def color_hist_similarity(a, b) -> float:
    """Histogram intersection over 256 gray bins; 1.0 for identical distributions."""
    x = _as_array(a)
    y = _as_array(b)
    if x.size == 0 or y.size == 0:
        raise ValueError("empty input")
    hx = np.bincount(x.ravel(), minlength=256).astype(np.float64) / x.size
    hy = np.bincount(y.ravel(), minlength=256).astype(np.float64) / y.size
    return float(np.minimum(hx, hy).sum())


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(boxes: list[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    """Greedy score-descending suppression; keeps boxes whose IoU with every
    higher-scored survivor is <= iou_threshold. Output sorted by score."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    pending = sorted(boxes, key=lambda sb: -sb.score)
    kept: list[ScoredBox] = []
    for cand in pending:
        if all(iou(cand.box, k.box) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# Frame ingest: numbered image directory, or raw planar file + sidecar config.

_SIDECAR_KEYS = ("width", "height", "fps", "count")


class RawFrameStore:
    """Memory-mapped raw planar 8-bit frame file with a text sidecar.

    The sidecar (``<file>.cfg``) holds ``width``, ``height``, ``fps`` and
    ``count`` as ``key = value`` lines.
    """

    def __init__(self, path: str):
        self.path = path
        meta = read_sidecar(path + ".cfg")
        self.width = int(meta["width"])
        self.height = int(meta["height"])
        self.fps = float(meta["fps"])
        self.count = int(meta["count"])
        self._mm = np.memmap(path, dtype=np.uint8, mode="r",
                             shape=(self.count, self.height, self.width))

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> GrayFrame:
        if index < 0:
            index += self.count
        if not 0 <= index < self.count:
            raise IndexError(index)
        return GrayFrame(np.asarray(self._mm[index]), frame_index=index,
                         timestamp=index / self.fps)


def read_sidecar(path: str) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    missing = [k for k in _SIDECAR_KEYS if k not in meta]
    if missing:
        raise ValueError(f"sidecar {path} missing keys: {missing}")
    return meta


def write_sidecar(path: str, width: int, height: int, fps: float, count: int):
    with open(path, "w") as fh:
        fh.write(f"width = {width}\nheight = {height}\nfps = {fps}\ncount = {count}\n")


class RawFrameWriter:
    def __init__(self, path: str, width: int, height: int, fps: float):
        self.path = path
        self.width, self.height, self.fps = width, height, fps
        self.count = 0
        self._fh = open(path, "wb")

    def append(self, frame: np.ndarray):
        frame = _as_array(frame)
        if frame.shape != (self.height, self.width):
            raise ValueError("frame shape does not match store")
        self._fh.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())
        self.count += 1

    def close(self):
        self._fh.close()
        write_sidecar(self.path + ".cfg", self.width, self.height, self.fps, self.count)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_FRAME_NUM = re.compile(r"(\d+)")


def read_frame_dir(path: str, fps: float = 30.0) -> list[GrayFrame]:
    """Load a directory of numbered PNG/PGM frames, ordered by embedded number."""
    names = [n for n in os.listdir(path) if n.lower().endswith((".png", ".pgm"))]
    if not names:
        raise ValueError(f"no PNG/PGM frames under {path}")

    def key(name):
        m = _FRAME_NUM.search(name)
        return (int(m.group(1)) if m else 0, name)

    frames = []
    for i, name in enumerate(sorted(names, key=key)):
        img = cv2.imread(os.path.join(path, name), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise ValueError(f"unreadable frame {name}")
        frames.append(GrayFrame(img, frame_index=i, timestamp=i / fps))
    return frames
