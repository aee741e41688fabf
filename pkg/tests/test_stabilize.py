import math

import cv2
import numpy as np
import pytest

from roadwatch.stabilize import (RigidTransform, classify_shaky,
                                 cumulative_trajectory, detect_corners,
                                 estimate_transform, estimate_video_transforms,
                                 smooth_and_correct, smooth_trajectory,
                                 track_points, warp_frame)

rng = np.random.default_rng(5)


def textured(h=120, w=160, seed=0):
    r = np.random.default_rng(seed)
    img = r.integers(0, 256, size=(h // 8, w // 8)).astype(np.uint8)
    return cv2.resize(img, (w, h), interpolation=cv2.INTER_NEAREST)


class TestCorners:
    def test_uniform_image_empty(self):
        assert len(detect_corners(np.full((64, 64), 128, np.uint8))) == 0

    def test_square_corners(self):
        img = np.zeros((100, 100), np.uint8)
        img[30:70, 30:70] = 255
        pts = detect_corners(img, max_corners=10, min_distance=5)
        assert len(pts) >= 4
        vertices = [(30, 30), (30, 69), (69, 30), (69, 69)]
        found = 0
        for vx, vy in vertices:
            if any(abs(p[0] - vx) <= 2 and abs(p[1] - vy) <= 2 for p in pts):
                found += 1
        assert found == 4

    def test_min_distance_spacing(self):
        img = np.zeros((100, 100), np.uint8)
        img[10:30, 10:30] = 255
        img[60:80, 60:80] = 255
        pts = detect_corners(img, max_corners=20, min_distance=200)
        assert len(pts) == 1

    def test_bad_max_corners(self):
        with pytest.raises(ValueError):
            detect_corners(np.zeros((10, 10), np.uint8), max_corners=0)


class TestTrackPoints:
    def test_identity_flow(self):
        img = textured()
        pts = detect_corners(img, 50)
        p0, p1, ok = track_points(img, img, pts)
        assert ok.sum() >= len(pts) * 0.9
        assert np.max(np.abs(p1[ok] - p0[ok])) < 0.25

    def test_translation_recovered(self):
        img = textured()
        shifted = np.roll(img, 3, axis=1)
        pts = detect_corners(img, 80)
        p0, p1, ok = track_points(img, shifted, pts)
        flow = p1[ok] - p0[ok]
        good = np.sum((np.abs(flow[:, 0] - 3) <= 0.5) & (np.abs(flow[:, 1]) <= 0.5))
        assert good >= 0.9 * ok.sum()

    def test_empty_points(self):
        img = textured()
        p0, p1, ok = track_points(img, img, np.empty((0, 2), np.float32))
        assert len(p0) == len(p1) == len(ok) == 0


class TestEstimateTransform:
    def test_identity(self):
        pts = rng.uniform(0, 100, size=(20, 2))
        tf, degraded = estimate_transform(pts, pts)
        assert not degraded
        assert (tf.dx, tf.dy, tf.dangle) == pytest.approx((0, 0, 0), abs=1e-9)

    def test_pure_translation(self):
        pts = rng.uniform(0, 100, size=(20, 2))
        tf, _ = estimate_transform(pts, pts + [5.0, -2.0])
        assert tf.dx == pytest.approx(5.0, abs=1e-6)
        assert tf.dy == pytest.approx(-2.0, abs=1e-6)
        assert tf.dangle == pytest.approx(0.0, abs=1e-9)

    def test_pure_rotation(self):
        angle = 0.01
        c, s = math.cos(angle), math.sin(angle)
        center = np.array([50.0, 50.0])
        pts = rng.uniform(0, 100, size=(30, 2))
        dst = (pts - center) @ np.array([[c, -s], [s, c]]).T + center
        tf, _ = estimate_transform(pts, dst)
        assert tf.dangle == pytest.approx(angle, abs=1e-6)

    def test_outlier_rejected(self):
        pts = rng.uniform(0, 100, size=(30, 2))
        dst = pts + [2.0, 0.0]
        dst[0] += [60.0, -40.0]  # one gross outlier
        tf, _ = estimate_transform(pts, dst)
        assert tf.dx == pytest.approx(2.0, abs=0.05)
        assert tf.dy == pytest.approx(0.0, abs=0.05)

    def test_too_few_pairs_degraded(self):
        tf, degraded = estimate_transform([[0, 0], [1, 1]], [[0, 0], [1, 1]])
        assert degraded and tf == RigidTransform()


class TestClassifyShaky:
    def test_zero_motion(self):
        v = classify_shaky([RigidTransform()] * 10)
        assert v.accumulated == 0 and not v.is_shaky

    def test_above_both_thresholds(self):
        v = classify_shaky([RigidTransform(0.4, 0.3)] * 27000)
        assert v.accumulated == pytest.approx(18900)
        assert v.average == pytest.approx(0.7)
        assert v.is_shaky

    def test_below_accumulated(self):
        v = classify_shaky([RigidTransform(0.5, 0.0)] * 27000)
        assert v.accumulated == pytest.approx(13500)
        assert not v.is_shaky

    def test_high_average_short_clip_not_shaky(self):
        v = classify_shaky([RigidTransform(3.0, 3.0)] * 100)
        assert v.average > 0.645 and not v.is_shaky

    def test_monotone_accumulation(self):
        seq = [RigidTransform(float(rng.uniform(0, 2)), 0.0) for _ in range(50)]
        accs = [classify_shaky(seq[:i + 1]).accumulated for i in range(len(seq))]
        assert all(b >= a for a, b in zip(accs, accs[1:]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classify_shaky([])


class TestSmoothing:
    def test_jitter_flattened(self):
        # alternating +-2 px per-frame jitter around a fixed camera
        transforms = [RigidTransform(4.0 * (-1) ** i, 0.0) for i in range(200)]
        transforms[0] = RigidTransform(2.0, 0.0)
        raw = cumulative_trajectory(transforms)
        sm = smooth_trajectory(raw)
        mid = sm[20:-20, 0]
        assert np.ptp(mid) < 0.4
        assert np.var(mid) * 25 <= np.var(raw[20:-20, 0])

    def test_drift_preserved(self):
        transforms = [RigidTransform(1.0, 0.0)] * 200
        raw = cumulative_trajectory(transforms)
        sm = smooth_trajectory(raw)
        mid = slice(40, 160)
        assert np.max(np.abs(sm[mid, 0] - raw[mid, 0])) < 1.5

    def test_identity_on_motionless(self):
        img = textured()
        frames = [img.copy() for _ in range(5)]
        out = smooth_and_correct(frames, [RigidTransform()] * 4)
        for f, o in zip(frames, out):
            assert np.array_equal(f, o.data)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            smooth_and_correct([textured()] * 3, [RigidTransform()])


class TestWarp:
    def test_zero_is_copy(self):
        img = textured()
        out = warp_frame(img, 0, 0, 0)
        assert np.array_equal(out, img) and out is not img

    def test_translation_moves_content(self):
        img = textured()
        out = warp_frame(img, 10.0, 0.0, 0.0)
        assert np.array_equal(out[:, 20:], img[:, 10:-10])


class TestVideoTransforms:
    def test_recovers_injected_translation(self):
        base = textured(160, 200, seed=3)
        frames = [base]
        for dx in (2.0, -1.0, 3.0):
            m = np.float32([[1, 0, dx], [0, 1, 0]])
            frames.append(cv2.warpAffine(frames[-1], m, (200, 160),
                                         borderMode=cv2.BORDER_REPLICATE))
        tfs = estimate_video_transforms(frames, downscale=1)
        assert [round(t.dx) for t in tfs] == [2, -1, 3]
