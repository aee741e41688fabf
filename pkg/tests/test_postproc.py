import numpy as np
import pytest

from roadwatch.imops import BoundingBox, GrayFrame
from roadwatch.postproc import (AnomalyEvent, detect_collision,
                                refine_boundaries, ring_mask,
                                write_event_report)

INTERVAL = 4.0
SHAPE = (160, 240)
BOX = BoundingBox(100, 60, 140, 100)

rng = np.random.default_rng(23)


def road():
    return np.full(SHAPE, 70, np.uint8)


def frame(img, i):
    return GrayFrame(img, frame_index=i, timestamp=i * INTERVAL)


def event(stop=5 * INTERVAL, start=3 * INTERVAL):
    return AnomalyEvent("v1", BOX, stop, start, 0.9)


class TestRingMask:
    def test_geometry(self):
        ring = ring_mask(BOX, SHAPE, ring_width=10)
        assert ring[55, 120] and ring[105, 120]    # above / below the box
        assert ring[80, 95] and ring[80, 145]      # left / right flanks
        assert not ring[80, 120]                   # interior excluded
        assert not ring[40, 120] and not ring[80, 160]  # beyond the ring

    def test_clipped_at_frame_edge(self):
        ring = ring_mask(BoundingBox(0, 0, 30, 30), SHAPE, ring_width=10)
        assert ring.shape == SHAPE
        assert ring[35, 10] and not ring[10, 10]

    def test_area_matches_annulus(self):
        ring = ring_mask(BOX, SHAPE, ring_width=10)
        assert int(ring.sum()) == 60 * 60 - 40 * 40


def make_history(n, debris_from=None, sweep_at=None, sweep_px=1600):
    """Backgrounds plus per-interval foreground unions for a staged scene.

    debris_from: first index whose background carries ring debris.
    sweep_at: index whose foreground union holds a ring disturbance.
    """
    tex = rng.integers(150, 250, size=SHAPE).astype(np.uint8)
    bgs, fgs = [], []
    for i in range(n):
        img = road()
        if debris_from is not None and i >= debris_from:
            img[105:145, 95:145] = tex[105:145, 95:145]  # below the box
        bgs.append(frame(img, i))
        fg = np.zeros(SHAPE, np.uint8)
        if sweep_at == i:
            side = int(np.sqrt(sweep_px))
            fg[104:104 + side, 100:100 + side] = 1
        fgs.append(frame(fg, i))
    return bgs, fgs


class TestDetectCollision:
    def test_crash_confirmed_at_disturbance(self):
        bgs, fgs = make_history(10, debris_from=4, sweep_at=3)
        ev = event(stop=5 * INTERVAL)
        t = detect_collision(ev, fgs, bgs)
        assert t == 3 * INTERVAL

    def test_stall_without_scene_change_unconfirmed(self):
        # the sweep fires the candidate but the background never changes
        bgs, fgs = make_history(10, debris_from=None, sweep_at=3)
        assert detect_collision(event(), fgs, bgs) is None

    def test_no_ring_activity(self):
        bgs, fgs = make_history(10, debris_from=4, sweep_at=None)
        assert detect_collision(event(), fgs, bgs) is None

    def test_candidates_after_stop_ignored(self):
        bgs, fgs = make_history(10, debris_from=4, sweep_at=8)
        assert detect_collision(event(stop=5 * INTERVAL), fgs, bgs) is None

    def test_threshold_respected(self):
        bgs, fgs = make_history(10, debris_from=4, sweep_at=3, sweep_px=900)
        assert detect_collision(event(), fgs, bgs) is None

    def test_empty_history(self):
        ev = event()
        assert detect_collision(ev, [], []) is None
        assert ev.notes


def backward_backgrounds(n, vehicle_from):
    """Reverse-time modeling shows the stopped vehicle from its arrival on."""
    tex = rng.integers(150, 250, size=SHAPE).astype(np.uint8)
    frames = []
    for i in range(n):
        img = road()
        if i >= vehicle_from:
            img[60:100, 100:140] = tex[60:100, 100:140]
        frames.append(frame(img, i))
    return frames


class TestRefineBoundaries:
    def test_start_pulled_back_to_arrival(self):
        frames = backward_backgrounds(12, vehicle_from=2)
        ev = event(stop=5 * INTERVAL, start=4 * INTERVAL)
        start, end = refine_boundaries(ev, frames)
        assert start == 2 * INTERVAL
        assert end == 11 * INTERVAL
        assert ev.refined_start == start and ev.refined_end == end

    def test_only_widens(self):
        frames = backward_backgrounds(12, vehicle_from=6)
        ev = event(stop=9 * INTERVAL, start=3 * INTERVAL)
        start, end = refine_boundaries(ev, frames)
        assert start <= ev.start_time
        assert end >= ev.stop_time
        assert start == 3 * INTERVAL   # tracked start already earlier

    def test_no_match_keeps_bounds(self):
        # anchor crop is flat road; every frame matches it, which still
        # cannot narrow the window below the tracked start
        frames = [frame(road(), i) for i in range(6)]
        ev = event(stop=4 * INTERVAL, start=2 * INTERVAL)
        start, end = refine_boundaries(ev, frames)
        assert start <= 2 * INTERVAL and end >= 4 * INTERVAL

    def test_empty_frames(self):
        ev = event()
        start, end = refine_boundaries(ev, [])
        assert (start, end) == (ev.start_time, ev.stop_time)


class TestEvent:
    def test_submission_prefers_crash_instant(self):
        ev = event(stop=20.0, start=12.0)
        assert ev.submission_time() == 12.0
        ev.crash_time = 16.0
        assert ev.submission_time() == 16.0

    def test_report_format(self, tmp_path):
        ev = event(stop=20.0, start=12.0)
        ev.crash_time = 16.0
        p = tmp_path / "events.tsv"
        write_event_report([ev, event()], str(p))
        lines = p.read_text().splitlines()
        assert len(lines) == 2
        first = lines[0].split("\t")
        assert first[0] == "v1" and first[8] == "16.000"
        assert lines[1].split("\t")[8:] == ["-", "-", "-"]
