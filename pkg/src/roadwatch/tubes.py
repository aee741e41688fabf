"""Candidate anomaly tubes: locating the true start inside a tube and
merging tubes that show the same vehicle."""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .imops import BoundingBox, psnr, ssim

CROP_SIZE = 64
SIM_THRESHOLD = 0.6      # a region this similar to the tube mean matches it
SIM_LOWER_BOUND = 0.25   # everything-similar floor for noisy uniform tubes
DURATION_RATIO = 0.3     # matching run must persist this share of the tube span
FUSE_PSNR = 18.0


def make_crop(image: np.ndarray, box: BoundingBox) -> np.ndarray:
    patch = box.clipped(image.shape[1], image.shape[0]).crop(image)
    if patch.shape[0] < 2 or patch.shape[1] < 2:
        raise ValueError(f"region {box} degenerate after clipping")
    return cv2.resize(patch, (CROP_SIZE, CROP_SIZE), interpolation=cv2.INTER_LINEAR)


@dataclass(frozen=True, eq=False)
class TubeRegion:
    frame_index: int
    timestamp: float
    box: BoundingBox
    crop: np.ndarray  # CROP_SIZE x CROP_SIZE uint8

    def __post_init__(self):
        if self.crop.shape != (CROP_SIZE, CROP_SIZE):
            raise ValueError(f"crop must be {CROP_SIZE}x{CROP_SIZE}, got {self.crop.shape}")


@dataclass
class Tube:
    tube_id: int
    regions: list[TubeRegion] = field(default_factory=list)

    def __post_init__(self):
        self.regions.sort(key=lambda r: r.frame_index)

    @property
    def start(self) -> float:
        return self.regions[0].timestamp

    @property
    def end(self) -> float:
        return self.regions[-1].timestamp


@dataclass(frozen=True)
class TubeVerdict:
    anomaly_start: float
    accepted: bool
    similarity_trace: tuple  # per-region mean-subtracted similarity


def tube_mean(tube: Tube) -> np.ndarray:
    """Pixelwise mean of all region crops."""
    if not tube.regions:
        raise ValueError("empty tube")
    acc = np.zeros((CROP_SIZE, CROP_SIZE), np.float64)
    for r in tube.regions:
        acc += r.crop
    mean = acc / len(tube.regions)
    return np.clip(np.rint(mean), 0, 255).astype(np.uint8)


def intra_tube_judge(tube: Tube, sim_threshold: float = SIM_THRESHOLD,
                     lower_bound: float = SIM_LOWER_BOUND,
                     duration_ratio: float = DURATION_RATIO) -> TubeVerdict:
    """Find where the tube's dominant (stopped) appearance takes over.

    Each region crop is compared against the tube mean; a region matches
    when its similarity exceeds sim_threshold. The anomaly starts at the
    first region of a matching run lasting at least duration_ratio of the
    tube span. A tube whose regions all sit above lower_bound but never
    reach the threshold is treated as one vehicle throughout.
    """
    if len(tube.regions) < 1:
        raise ValueError("empty tube")
    mean = tube_mean(tube)
    sims = np.array([ssim(r.crop, mean) for r in tube.regions])
    trace = tuple(float(v) for v in sims - sims.mean())
    if len(tube.regions) == 1:
        return TubeVerdict(tube.start, True, trace)

    span = tube.end - tube.start
    needed = duration_ratio * span
    matched = sims > sim_threshold
    times = [r.timestamp for r in tube.regions]
    i = 0
    n = len(matched)
    while i < n:
        if matched[i]:
            j = i
            while j + 1 < n and matched[j + 1]:
                j += 1
            if times[j] - times[i] >= needed or (j == n - 1 and tube.end - times[i] >= needed):
                return TubeVerdict(times[i], True, trace)
            i = j + 1
        else:
            i += 1
    if np.all(sims > lower_bound):
        return TubeVerdict(tube.start, True, trace)
    return TubeVerdict(tube.start, False, trace)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def inter_tube_fuse(tubes: list[Tube], psnr_threshold: float = FUSE_PSNR) -> list[Tube]:
    """Merge tubes whose mean crops look like the same vehicle.

    Grouping is transitive (union-find fixpoint); a merged tube keeps the
    smallest id, concatenates regions in time order, and spans min-start
    to max-end by construction.
    """
    if len(tubes) <= 1:
        return list(tubes)
    means = [tube_mean(t) for t in tubes]
    uf = _UnionFind(len(tubes))
    for i in range(len(tubes)):
        for k in range(i + 1, len(tubes)):
            if psnr(means[i], means[k]) >= psnr_threshold:
                uf.union(i, k)
    groups: dict[int, list[Tube]] = {}
    for i, t in enumerate(tubes):
        groups.setdefault(uf.find(i), []).append(t)
    out = []
    for members in groups.values():
        regions = [r for t in members for r in t.regions]
        out.append(Tube(min(t.tube_id for t in members), regions))
    out.sort(key=lambda t: t.tube_id)
    return out


def write_tube_report(tubes: list[Tube], verdicts: list[TubeVerdict], path: str):
    with open(path, "w") as fh:
        for t, v in zip(tubes, verdicts):
            fh.write(f"{t.tube_id}\t{t.start:.3f}\t{t.end:.3f}"
                     f"\t{v.anomaly_start:.3f}\t{int(v.accepted)}\n")
