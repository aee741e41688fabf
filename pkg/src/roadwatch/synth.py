"""Ground-truthed synthetic traffic scenes.

Scenes are textured rectangles moving on horizontal lanes over a speckled
road plate, with programmable stall and crash events, optional camera
jitter, and per-frame sensor noise. Rendering is closed-form per frame, so
frames can be produced lazily and reproduced bit-identically from
(spec, seed).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .detections import DetectionRecord, DetectionStream
from .imops import BoundingBox, GrayFrame, RawFrameWriter
from .scoring import GroundTruthEvent, write_ground_truth

NOISE_POOL = 16          # precomputed noise planes, cycled per frame
CRASH_SLIDE_PX = 40.0    # post-contact travel before the wreck settles
DEBRIS_COUNT = 12
DEBRIS_W, DEBRIS_H = 8, 7


@dataclass(frozen=True)
class LaneSpec:
    y: int                 # top of the lane band
    speed: float           # px/frame, sign gives direction
    spawn_period_s: float
    vehicle_w: int = 30
    vehicle_h: int = 14


@dataclass(frozen=True)
class EventSpec:
    kind: str              # "stall" | "crash"
    time_s: float
    x: int                 # vehicle top-left at the event instant
    y: int
    vehicle_w: int = 44
    vehicle_h: int = 22
    speed: float = 2.0     # approach speed, px/frame
    settle_s: float = 20.0  # crash only: slide duration after contact


@dataclass
class SceneSpec:
    width: int = 480
    height: int = 270
    fps: float = 30.0
    duration_s: float = 120.0
    lanes: list[LaneSpec] = field(default_factory=list)
    events: list[EventSpec] = field(default_factory=list)
    jitter_px: float = 0.0
    noise_sigma: float = 2.0

    @property
    def frame_count(self) -> int:
        return int(round(self.duration_s * self.fps))


def _event_final_x(ev: EventSpec) -> float:
    return ev.x + (CRASH_SLIDE_PX if ev.kind == "crash" else 0.0)


def validate(spec: SceneSpec) -> list[str]:
    """Collect every reason the spec cannot be rendered faithfully."""
    problems = []
    if spec.width < 64 or spec.height < 64:
        problems.append("frame smaller than 64x64")
    for i, lane in enumerate(spec.lanes):
        if not 0 <= lane.y <= spec.height - lane.vehicle_h:
            problems.append(f"lane {i} band leaves the frame")
        if lane.speed == 0:
            problems.append(f"lane {i} has zero speed")
        else:
            gap = abs(lane.speed) * lane.spawn_period_s * spec.fps
            if gap <= lane.vehicle_w:
                problems.append(f"lane {i} spawns vehicles that overlap "
                                f"(gap {gap:.0f} px <= width {lane.vehicle_w})")
    for i, ev in enumerate(spec.events):
        if ev.kind not in ("stall", "crash"):
            problems.append(f"event {i} has unknown kind {ev.kind!r}")
            continue
        settle = ev.settle_s if ev.kind == "crash" else 0.0
        if ev.time_s + settle >= spec.duration_s:
            problems.append(f"event {i} does not settle before the scene ends")
        fx = _event_final_x(ev)
        if not (0 <= ev.x and fx + ev.vehicle_w <= spec.width
                and 0 <= ev.y <= spec.height - ev.vehicle_h):
            problems.append(f"event {i} location leaves the frame")
        # collision evidence lives in a ring around the stopped box; keep
        # ambient traffic out of it so ring statistics are attributable
        ring_top, ring_bot = ev.y - 50, ev.y + ev.vehicle_h + 50
        for k, lane in enumerate(spec.lanes):
            if lane.y + lane.vehicle_h > ring_top and lane.y < ring_bot:
                problems.append(f"event {i} ring overlaps lane {k} band")
        for k in range(i + 1, len(spec.events)):
            other = spec.events[k]
            if (abs(ev.y - other.y) < ev.vehicle_h + other.vehicle_h + 100
                    and abs(ev.x - other.x) < ev.vehicle_w + other.vehicle_w + 100):
                problems.append(f"events {i} and {k} rings overlap")
    return problems


class _Vehicle:
    """Closed-form horizontal motion: position is a pure function of frame."""

    def __init__(self, texture: np.ndarray, y: int, x0: float, v0_frame: int,
                 speed: float):
        self.texture = texture
        self.h, self.w = texture.shape
        self.y = y
        self.x0 = x0
        self.v0_frame = v0_frame
        self.speed = speed
        self.stop_frame: int | None = None       # frozen from here on
        self.slide: tuple[int, int, float] | None = None  # (start, n_frames, dist)

    def x_at(self, frame: int) -> float | None:
        if frame < self.v0_frame:
            return None
        if self.slide is not None:
            s0, n, dist = self.slide
            if frame >= s0:
                p = min(1.0, (frame - s0) / n)
                # decelerating ease-out from the contact point
                return self._base_x(s0) + dist * (1.0 - (1.0 - p) ** 2)
        if self.stop_frame is not None and frame >= self.stop_frame:
            return self._base_x(self.stop_frame)
        return self._base_x(frame)

    def _base_x(self, frame: int) -> float:
        return self.x0 + (frame - self.v0_frame) * self.speed

    def box_at(self, frame: int, width: int, height: int) -> BoundingBox | None:
        x = self.x_at(frame)
        if x is None:
            return None
        x0, y0 = x, float(self.y)
        x1, y1 = x + self.w, y0 + self.h
        if x1 <= 0 or x0 >= width or y1 <= 0 or y0 >= height:
            return None
        return BoundingBox(x0, y0, x1, y1)


def _texture(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    base = rng.integers(120, 221)
    tex = base + rng.normal(0.0, 30.0, size=(h, w))
    return np.clip(np.rint(tex), 0, 255).astype(np.uint8)


class SceneFrames:
    """Lazy frame sequence; index access renders the frame on demand."""

    def __init__(self, spec: SceneSpec, seed: int):
        problems = validate(spec)
        if problems:
            raise ValueError("invalid scene spec: " + "; ".join(problems))
        self.spec = spec
        self.seed = seed
        self.width, self.height, self.fps = spec.width, spec.height, spec.fps
        rng = np.random.default_rng(seed)

        plate = 60.0 + 40.0 * (np.arange(spec.height)[:, None] / max(1, spec.height - 1))
        plate = plate + rng.normal(0.0, 6.0, size=(spec.height, spec.width))
        self.base = np.clip(np.rint(plate), 0, 255).astype(np.uint8)

        self.vehicles: list[_Vehicle] = []
        for lane in spec.lanes:
            crossing = (spec.width + lane.vehicle_w) / abs(lane.speed)
            n_spawn = int(spec.duration_s / lane.spawn_period_s) + 2
            for k in range(n_spawn):
                f0 = int(round(k * lane.spawn_period_s * spec.fps))
                if f0 >= spec.frame_count:
                    break
                x0 = -float(lane.vehicle_w) if lane.speed > 0 else float(spec.width)
                self.vehicles.append(_Vehicle(
                    _texture(rng, lane.vehicle_w, lane.vehicle_h),
                    lane.y, x0, f0, lane.speed))

        self.debris: list[tuple[int, int, int, np.ndarray]] = []  # (frame, x, y, patch)
        self.truth: list[GroundTruthEvent] = []
        for ev in spec.events:
            fe = int(round(ev.time_s * spec.fps))
            travel = (ev.x + ev.vehicle_w) / ev.speed  # frames to reach ev.x from off-frame
            v0 = fe - int(math.ceil(travel))
            veh = _Vehicle(_texture(rng, ev.vehicle_w, ev.vehicle_h), ev.y,
                           -float(ev.vehicle_w), v0, ev.speed)
            # land exactly on ev.x at the event frame
            veh.x0 = ev.x - (fe - v0) * ev.speed
            if ev.kind == "stall":
                veh.stop_frame = fe
            else:
                n = max(1, int(round(ev.settle_s * spec.fps)))
                veh.slide = (fe, n, CRASH_SLIDE_PX)
                self._scatter_debris(rng, ev, fe)
            self.vehicles.append(veh)
            self.truth.append(GroundTruthEvent("", ev.time_s))

        sigma = max(spec.noise_sigma, 0.0)
        self.noise = [np.rint(rng.normal(0.0, sigma, size=self.base.shape)).astype(np.int16)
                      for _ in range(NOISE_POOL)]
        if spec.jitter_px > 0:
            self.jitter = [(float(rng.uniform(-spec.jitter_px, spec.jitter_px)),
                            float(rng.uniform(-spec.jitter_px, spec.jitter_px)))
                           for _ in range(spec.frame_count)]
        else:
            self.jitter = None

    def _scatter_debris(self, rng: np.random.Generator, ev: EventSpec, frame: int):
        fx = int(round(_event_final_x(ev)))
        spots = []
        for side in (-1, +1):
            for k in range(DEBRIS_COUNT // 2):
                x = fx - 20 + k * ((ev.vehicle_w + int(CRASH_SLIDE_PX) + 40)
                                   // (DEBRIS_COUNT // 2))
                dy = int(rng.integers(12, 36))
                y = ev.y - dy - DEBRIS_H if side < 0 else ev.y + ev.vehicle_h + dy
                spots.append((x, y))
        for x, y in spots:
            x = int(np.clip(x, 0, self.width - DEBRIS_W))
            y = int(np.clip(y, 0, self.height - DEBRIS_H))
            patch = np.clip(np.rint(200 + rng.normal(0, 20, (DEBRIS_H, DEBRIS_W))),
                            0, 255).astype(np.uint8)
            self.debris.append((frame, x, y, patch))

    def __len__(self) -> int:
        return self.spec.frame_count

    def content_key(self) -> str:
        # rendering is a pure function of (spec, seed)
        return f"scene:{self.spec!r}:{self.seed}"

    def _paste(self, canvas: np.ndarray, tex: np.ndarray, x: float, y: float):
        xi, yi = int(round(x)), int(round(y))
        h, w = tex.shape
        x0, y0 = max(0, xi), max(0, yi)
        x1, y1 = min(self.width, xi + w), min(self.height, yi + h)
        if x1 > x0 and y1 > y0:
            canvas[y0:y1, x0:x1] = tex[y0 - yi:y1 - yi, x0 - xi:x1 - xi]

    def __getitem__(self, index: int) -> GrayFrame:
        if index < 0:
            index += len(self)
        if not 0 <= index < len(self):
            raise IndexError(index)
        canvas = self.base.copy()
        for frame0, x, y, patch in self.debris:
            if index >= frame0:
                self._paste(canvas, patch, x, y)
        for veh in self.vehicles:
            x = veh.x_at(index)
            if x is not None and -veh.w < x < self.width:
                self._paste(canvas, veh.texture, x, veh.y)
        out = canvas.astype(np.int16) + self.noise[index % NOISE_POOL]
        out = np.clip(out, 0, 255).astype(np.uint8)
        if self.jitter is not None:
            dx, dy = self.jitter[index]
            m = np.float32([[1, 0, dx], [0, 1, dy]])
            out = cv2.warpAffine(out, m, (self.width, self.height),
                                 flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
        return GrayFrame(out, frame_index=index, timestamp=index / self.fps)

    def oracle_detections(self, video_id: str = "scene") -> DetectionStream:
        records = []
        for i in range(len(self)):
            for veh in self.vehicles:
                box = veh.box_at(i, self.width, self.height)
                if box is not None:
                    records.append(DetectionRecord(video_id, i,
                                                   box.clipped(self.width, self.height),
                                                   1.0, "oracle"))
        return DetectionStream(records)

    def ground_truth(self, video_id: str = "scene") -> list[GroundTruthEvent]:
        return [GroundTruthEvent(video_id, g.true_time) for g in self.truth]


def generate(spec: SceneSpec, seed: int, video_id: str = "scene"):
    """Returns (frames, ground truth events, oracle detection stream)."""
    frames = SceneFrames(spec, seed)
    return frames, frames.ground_truth(video_id), frames.oracle_detections(video_id)


def write_scene(spec: SceneSpec, seed: int, out_dir: str, video_id: str = "scene"):
    """Persist a scene in the formats the pipeline ingests."""
    from .detections import write_detections

    frames, truth, oracle = generate(spec, seed, video_id)
    os.makedirs(out_dir, exist_ok=True)
    raw = os.path.join(out_dir, "frames.raw")
    with RawFrameWriter(raw, spec.width, spec.height, spec.fps) as wr:
        for i in range(len(frames)):
            wr.append(frames[i].data)
    write_ground_truth(truth, os.path.join(out_dir, "truth.txt"))
    write_detections(oracle, os.path.join(out_dir, "oracle.tsv"))
    return raw


# ---------------------------------------------------------------------------
# Scene config files: `key = value` lines plus repeated lane/event lines.
#   lane = y speed spawn_period [w h]
#   event = {stall|crash} time x y [w h speed settle]

def parse_scene(path: str) -> SceneSpec:
    kw = {}
    lanes, events = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected `key = value`")
            key, parts = key.strip(), value.split()
            try:
                if key == "lane":
                    args = [float(v) for v in parts]
                    lanes.append(LaneSpec(int(args[0]), args[1], args[2],
                                          *[int(a) for a in args[3:5]]))
                elif key == "event":
                    kind = parts[0]
                    args = [float(v) for v in parts[1:]]
                    extra = {}
                    if len(args) >= 5:
                        extra["vehicle_w"], extra["vehicle_h"] = int(args[3]), int(args[4])
                    if len(args) >= 6:
                        extra["speed"] = args[5]
                    if len(args) >= 7:
                        extra["settle_s"] = args[6]
                    events.append(EventSpec(kind, args[0], int(args[1]), int(args[2]),
                                            **extra))
                elif key in ("width", "height"):
                    kw[key] = int(parts[0])
                elif key in ("fps", "duration", "jitter", "noise"):
                    name = {"duration": "duration_s", "jitter": "jitter_px",
                            "noise": "noise_sigma"}.get(key, key)
                    kw[name] = float(parts[0])
                else:
                    raise ValueError(f"unknown key {key!r}")
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return SceneSpec(lanes=lanes, events=events, **kw)
