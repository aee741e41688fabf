"""Per-frame detection streams: TSV ingest, two-detector fusion, blob fallback.

File format, one record per line (tab-separated):
    video_id  frame  x_min  y_min  x_max  y_max  score  source
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .imops import BoundingBox, ScoredBox, nms

FUSE_NMS_THRESHOLD = 0.8
BLOB_DIFF_THRESHOLD = 30
BLOB_MIN_AREA = 64


@dataclass(frozen=True)
class DetectionRecord:
    video_id: str
    frame_index: int
    box: BoundingBox
    score: float
    source: str = ""

    def scored_box(self) -> ScoredBox:
        return ScoredBox(self.box, self.score)


@dataclass
class DetectionStream:
    records: list[DetectionRecord] = field(default_factory=list)

    def __post_init__(self):
        self.records.sort(key=lambda r: (r.video_id, r.frame_index))

    def __len__(self) -> int:
        return len(self.records)

    def video_ids(self) -> list[str]:
        return sorted({r.video_id for r in self.records})

    def frames(self) -> list[int]:
        return sorted({r.frame_index for r in self.records})

    def by_frame(self) -> dict[int, list[DetectionRecord]]:
        out: dict[int, list[DetectionRecord]] = {}
        for r in self.records:
            out.setdefault(r.frame_index, []).append(r)
        return out

    def for_video(self, video_id: str) -> "DetectionStream":
        return DetectionStream([r for r in self.records if r.video_id == video_id])


def read_detections(path: str) -> DetectionStream:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 tab-separated fields, "
                                 f"got {len(parts)}")
            try:
                vid, frame, x0, y0, x1, y1, score, source = parts
                box = BoundingBox(float(x0), float(y0), float(x1), float(y1))
                rec = DetectionRecord(vid, int(frame), box, float(score), source)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            records.append(rec)
    return DetectionStream(records)


def write_detections(stream: DetectionStream, path: str):
    with open(path, "w") as fh:
        for r in stream.records:
            b = r.box
            fh.write(f"{r.video_id}\t{r.frame_index}\t{b.x_min:g}\t{b.y_min:g}"
                     f"\t{b.x_max:g}\t{b.y_max:g}\t{r.score:g}\t{r.source}\n")


def fuse_detectors(a: DetectionStream, b: DetectionStream,
                   nms_threshold: float = FUSE_NMS_THRESHOLD) -> DetectionStream:
    """Per-frame union of two streams followed by NMS."""
    vids = set(a.video_ids()) | set(b.video_ids())
    if len(vids) > 1:
        raise ValueError(f"streams mix videos: {sorted(vids)}")
    vid = next(iter(vids)) if vids else ""
    fa, fb = a.by_frame(), b.by_frame()
    out = []
    for frame in sorted(set(fa) | set(fb)):
        merged = fa.get(frame, []) + fb.get(frame, [])
        kept = nms([r.scored_box() for r in merged], nms_threshold)
        # map survivors back to their records, preserving source tags
        pool = list(merged)
        for sb in kept:
            for i, r in enumerate(pool):
                if r.box == sb.box and r.score == sb.score:
                    out.append(pool.pop(i))
                    break
    return DetectionStream(out)


def blob_detect(background, reference, diff_threshold: int = BLOB_DIFF_THRESHOLD,
                min_area: int = BLOB_MIN_AREA) -> list[ScoredBox]:
    """Connected bright/dark blobs of |background - reference| as scored boxes."""
    bg = np.asarray(background.data if hasattr(background, "data") else background)
    ref = np.asarray(reference.data if hasattr(reference, "data") else reference)
    if bg.shape != ref.shape:
        raise ValueError(f"dimension mismatch: {bg.shape} vs {ref.shape}")
    diff = cv2.absdiff(bg, ref)
    mask = (diff >= diff_threshold).astype(np.uint8)
    n, _labels, stats, _cent = cv2.connectedComponentsWithStats(mask, connectivity=8)
    boxes = []
    for i in range(1, n):
        x, y, w, h, area = stats[i]
        if area < min_area:
            continue
        score = min(1.0, area / (4.0 * min_area))
        boxes.append(ScoredBox(BoundingBox(float(x), float(y), float(x + w), float(y + h)),
                               score))
    boxes.sort(key=lambda sb: (-sb.score, sb.box.x_min, sb.box.y_min))
    return boxes
