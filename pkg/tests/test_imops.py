import numpy as np
import pytest

from roadwatch.imops import (PSNR_MAX, BoundingBox, GrayFrame, RawFrameStore,
                             RawFrameWriter, ScoredBox, color_hist_similarity,
                             iou, nms, psnr, read_frame_dir, ssim, ssim_map,
                             to_gray)
from oracles import hist_oracle, iou_oracle, nms_oracle, psnr_oracle, ssim_oracle

rng = np.random.default_rng(42)


def rand_img(h=24, w=24):
    return rng.integers(0, 256, size=(h, w), dtype=np.uint8)


class TestSsim:
    def test_identity(self):
        x = rand_img()
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_one_hot_pixel_matches_oracle(self):
        a = np.full((32, 32), 128, np.uint8)
        b = a.copy()
        b[16, 16] = 255
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_opposite_constants_floor(self):
        a = np.zeros((32, 32), np.uint8)
        b = np.full((32, 32), 255, np.uint8)
        val = ssim(a, b)
        assert val == pytest.approx(ssim_oracle(a, b), abs=1e-6)
        assert val < 0.01

    def test_random_pairs_match_oracle(self):
        for _ in range(20):
            a, b = rand_img(), rand_img()
            assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_symmetric(self):
        for _ in range(10):
            a, b = rand_img(), rand_img()
            assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ssim(rand_img(24, 24), rand_img(24, 25))

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(rand_img(8, 8), rand_img(8, 8))

    def test_map_shape(self):
        m = ssim_map(rand_img(30, 20), rand_img(30, 20))
        assert m.shape == (20, 10)

    def test_accepts_grayframe(self):
        x = rand_img()
        assert ssim(GrayFrame(x), GrayFrame(x)) == pytest.approx(1.0)


class TestPsnr:
    def test_identity_sentinel(self):
        x = rand_img()
        assert psnr(x, x) == PSNR_MAX

    def test_unit_difference(self):
        a = np.full((16, 16), 100, np.uint8)
        b = np.full((16, 16), 101, np.uint8)
        assert psnr(a, b) == pytest.approx(20 * np.log10(255), abs=1e-9)

    def test_max_difference(self):
        a = np.zeros((16, 16), np.uint8)
        b = np.full((16, 16), 255, np.uint8)
        assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_random_pairs_match_oracle(self):
        for _ in range(20):
            a, b = rand_img(), rand_img()
            assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            psnr(rand_img(4, 4), rand_img(4, 5))


class TestHistSimilarity:
    def test_identical(self):
        x = rand_img()
        assert color_hist_similarity(x, x) == pytest.approx(1.0)

    def test_disjoint(self):
        a = np.zeros((8, 8), np.uint8)
        b = np.full((8, 8), 255, np.uint8)
        assert color_hist_similarity(a, b) == 0.0

    def test_half_overlap(self):
        a = np.zeros((2, 8), np.uint8)
        a[1] = 255
        b = np.zeros((2, 8), np.uint8)
        assert color_hist_similarity(a, b) == pytest.approx(0.5)

    def test_random_pairs_match_oracle(self):
        for _ in range(20):
            a, b = rand_img(), rand_img()
            got = color_hist_similarity(a, b)
            assert got == pytest.approx(hist_oracle(a, b), abs=1e-9)
            assert got == pytest.approx(color_hist_similarity(b, a), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            color_hist_similarity(np.zeros((0,), np.uint8), np.zeros((0,), np.uint8))


class TestBoxes:
    def test_iou_identity(self):
        b = BoundingBox(1, 2, 5, 9)
        assert iou(b, b) == 1.0

    def test_iou_disjoint(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0

    def test_iou_hand_geometry(self):
        a = BoundingBox(0, 0, 10, 10)
        b = BoundingBox(5, 0, 15, 10)
        assert iou(a, b) == pytest.approx(1 / 3)

    def test_iou_random_matches_oracle(self):
        for _ in range(50):
            vals = rng.uniform(0, 50, size=8)
            a = BoundingBox(vals[0], vals[1], vals[0] + vals[2] + 1, vals[1] + vals[3] + 1)
            b = BoundingBox(vals[4], vals[5], vals[4] + vals[6] + 1, vals[5] + vals[7] + 1)
            assert iou(a, b) == pytest.approx(iou_oracle(a, b), abs=1e-9)
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 5, 10)

    def test_clip_and_crop(self):
        img = rand_img(20, 30)
        box = BoundingBox(-5, -5, 12, 40)
        assert box.clipped(30, 20) == BoundingBox(0, 0, 12, 20)
        assert box.crop(img).shape == (20, 12)


def _rand_scored_boxes(n):
    out = []
    for _ in range(n):
        x, y = rng.uniform(0, 40, size=2)
        w, h = rng.uniform(2, 20, size=2)
        out.append(ScoredBox(BoundingBox(x, y, x + w, y + h), float(rng.uniform(0, 1))))
    return out


class TestNms:
    def test_single_box(self):
        boxes = _rand_scored_boxes(1)
        assert nms(boxes, 0.5) == boxes

    def test_identical_boxes_keep_stronger(self):
        b = BoundingBox(0, 0, 10, 10)
        kept = nms([ScoredBox(b, 0.9), ScoredBox(b, 0.8)], 0.8)
        assert len(kept) == 1 and kept[0].score == 0.9

    def test_random_matches_oracle(self):
        for _ in range(50):
            boxes = _rand_scored_boxes(int(rng.integers(2, 12)))
            thr = float(rng.uniform(0.1, 0.9))
            got = nms(boxes, thr)
            want = nms_oracle(boxes, thr)
            assert [(g.box, g.score) for g in got] == [(w.box, w.score) for w in want]

    def test_survivor_pairs_below_threshold(self):
        boxes = _rand_scored_boxes(15)
        kept = nms(boxes, 0.4)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou(kept[i].box, kept[j].box) <= 0.4

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            nms([], 1.5)


class TestFrameIO:
    def test_to_gray_luma(self):
        img = np.zeros((2, 2, 3), np.uint8)
        img[..., 1] = 100  # second channel weighted 0.587
        assert to_gray(img)[0, 0] == round(0.587 * 100)

    def test_raw_store_round_trip(self, tmp_path):
        path = str(tmp_path / "clip.raw")
        frames = [rand_img(12, 16) for _ in range(5)]
        with RawFrameWriter(path, 16, 12, 30.0) as wr:
            for f in frames:
                wr.append(f)
        store = RawFrameStore(path)
        assert len(store) == 5
        assert store[3].timestamp == pytest.approx(3 / 30)
        for i, f in enumerate(frames):
            assert np.array_equal(store[i].data, f)

    def test_frame_dir_numeric_order(self, tmp_path):
        import cv2
        for i in (2, 0, 10):
            cv2.imwrite(str(tmp_path / f"f_{i}.png"), rand_img(8, 8))
        frames = read_frame_dir(str(tmp_path))
        assert [f.frame_index for f in frames] == [0, 1, 2]

    def test_grayframe_validates(self):
        with pytest.raises(ValueError):
            GrayFrame(np.zeros((0, 4), np.uint8))
