"""Adaptive mixture-of-Gaussians background modeling, forward or backward in time.

The per-pixel update is the pipeline's hot loop. A compiled kernel
(roadwatch._mog, Cython) is used when available, with a pure-numpy fallback;
set ROADWATCH_MOG_BACKEND=numpy or =native to force one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .imops import GrayFrame
from . import _mog_np

_backend_env = os.environ.get("ROADWATCH_MOG_BACKEND", "")
if _backend_env == "numpy":
    _kernel = _mog_np
else:
    try:
        from . import _mog as _kernel  # type: ignore[no-redef]
    except ImportError:
        if _backend_env == "native":
            raise ImportError(
                "ROADWATCH_MOG_BACKEND=native but the compiled roadwatch._mog "
                "extension is not built; run `pip install -e . --no-build-isolation`"
            )
        _kernel = _mog_np

BACKEND = _kernel.BACKEND

K_COMPONENTS = 5
DEFAULT_ALPHA = 0.002          # canonical adaptive-MOG rate (history ~500 frames)
VAR_FLOOR = 4.0
VAR_INIT = 225.0
BG_RATIO = 0.9                 # cumulative-weight share reserved for background
MATCH_SIGMA = 2.5
DEFAULT_SAMPLE_INTERVAL = 120  # frames between emitted backgrounds (4 s at 30 fps)


def kernel_for(backend: str):
    """Return the update_frame callable for an explicit backend name."""
    if backend == "numpy":
        return _mog_np.update_frame
    if backend == "native":
        from . import _mog
        return _mog.update_frame
    raise ValueError(f"unknown MOG backend {backend!r}")


@dataclass
class PixelMixture:
    """Mixture state of a single pixel, components in fitness order."""

    weights: np.ndarray = field(default_factory=lambda: np.zeros(K_COMPONENTS, np.float32))
    means: np.ndarray = field(default_factory=lambda: np.zeros(K_COMPONENTS, np.float32))
    variances: np.ndarray = field(default_factory=lambda: np.full(K_COMPONENTS, VAR_INIT, np.float32))
    learning_rate: float = DEFAULT_ALPHA


def update_pixel(m: PixelMixture, value: float) -> tuple[PixelMixture, bool]:
    """Pure single-pixel mixture update; returns the new state and the
    foreground verdict for this observation."""
    w = m.weights.reshape(1, 1, -1).astype(np.float32).copy()
    mu = m.means.reshape(1, 1, -1).astype(np.float32).copy()
    var = m.variances.reshape(1, 1, -1).astype(np.float32).copy()
    fg = np.zeros((1, 1), np.uint8)
    frame = np.full((1, 1), int(round(value)), np.uint8)
    _kernel.update_frame(w, mu, var, frame, m.learning_rate, VAR_FLOOR,
                         BG_RATIO, MATCH_SIGMA ** 2, VAR_INIT, fg)
    out = PixelMixture(w.ravel(), mu.ravel(), var.ravel(), m.learning_rate)
    return out, bool(fg[0, 0])


class MogModel:
    """Whole-frame mixture model; one instance per video per direction."""

    def __init__(self, height: int, width: int, alpha: float = DEFAULT_ALPHA,
                 components: int = K_COMPONENTS, var_floor: float = VAR_FLOOR,
                 bg_ratio: float = BG_RATIO, match_sigma: float = MATCH_SIGMA,
                 init_var: float = VAR_INIT, backend: str | None = None):
        self.alpha = float(alpha)
        self.var_floor = float(var_floor)
        self.bg_ratio = float(bg_ratio)
        self.gate2 = float(match_sigma) ** 2
        self.init_var = float(init_var)
        self.w = np.zeros((height, width, components), np.float32)
        self.mu = np.zeros((height, width, components), np.float32)
        self.var = np.full((height, width, components), self.init_var, np.float32)
        self.fg = np.zeros((height, width), np.uint8)
        self._update = kernel_for(backend) if backend else _kernel.update_frame

    def update(self, frame: np.ndarray) -> np.ndarray:
        """Advance the model by one frame; returns the foreground mask (view)."""
        self._update(self.w, self.mu, self.var, np.ascontiguousarray(frame, np.uint8),
                     self.alpha, self.var_floor, self.bg_ratio, self.gate2,
                     self.init_var, self.fg)
        return self.fg

    def background_image(self) -> np.ndarray:
        """Mean of the heaviest background-set component, per pixel (sharp, no blend)."""
        prefix = np.cumsum(self.w, axis=2) - self.w
        eligible = np.where(prefix < self.bg_ratio, self.w, -1.0)
        k = np.argmax(eligible, axis=2)
        means = np.take_along_axis(self.mu, k[:, :, None], axis=2)[:, :, 0]
        return np.clip(np.rint(means), 0, 255).astype(np.uint8)


@dataclass
class BackgroundSequence:
    frames: list[GrayFrame]
    sample_interval: int
    direction: str  # "forward" | "backward"

    def timestamps(self) -> list[float]:
        return [f.timestamp for f in self.frames]


def model_background(frames, direction: str = "forward",
                     sample_interval: int = DEFAULT_SAMPLE_INTERVAL,
                     alpha: float = DEFAULT_ALPHA, fps: float | None = None,
                     **model_kw) -> BackgroundSequence:
    """Run the mixture over a frame sequence and emit sampled backgrounds.

    `frames` is any sequence of GrayFrame (lazy stores work). Backward
    direction processes the reversed sequence but reports each emitted
    background under the source frame's original index and timestamp.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    n = len(frames)
    if n == 0:
        raise ValueError("empty frame sequence")
    first = frames[0]
    model = MogModel(first.height, first.width, alpha=alpha, **model_kw)
    order = range(n) if direction == "forward" else range(n - 1, -1, -1)
    out: list[GrayFrame] = []
    for step, idx in enumerate(order, start=1):
        src = frames[idx]
        model.update(src.data)
        if step % sample_interval == 0:
            out.append(GrayFrame(model.background_image(),
                                 frame_index=src.frame_index,
                                 timestamp=src.timestamp))
    return BackgroundSequence(out, sample_interval, direction)
