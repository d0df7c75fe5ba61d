import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsrnet.data import DatasetIndex, ImagePair, degrade
from adsrnet.metrics import (
    EvalProtocol,
    EvalResult,
    bicubic_upscaler,
    evaluate,
    gaussian_window,
    psnr,
    score_pair,
    ssim,
)

from conftest import smooth_image


def loop_ssim(a, b, peak=255.0):
    """Direct per-window SSIM with an explicit 11x11 Gaussian."""
    x = np.arange(11) - 5.0
    g1 = np.exp(-x * x / (2 * 1.5**2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPSNR:
    def test_unit_mse(self):
        a = np.zeros((4, 4))
        b = a.copy()
        b[::2] = 1.0
        b[1::2] = -1.0
        assert psnr(a, b) == pytest.approx(48.1308036, abs=1e-6)

    def test_full_scale_error_is_zero_db(self):
        assert psnr(np.zeros((3, 3)), np.full((3, 3), 255.0)) == pytest.approx(0.0, abs=1e-12)

    def test_identical_is_infinite(self):
        assert psnr(np.ones((2, 2)), np.ones((2, 2))) == math.inf

    def test_symmetric(self, rng):
        a, b = rng.random((5, 6)) * 255, rng.random((5, 6)) * 255
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_error(self, rng):
        a = rng.random((8, 8)) * 255
        noise = rng.normal(size=(8, 8))
        values = [psnr(a, a + k * noise) for k in (0.5, 1.0, 2.0, 4.0)]
        assert values == sorted(values, reverse=True)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSSIM:
    def test_identical_is_one(self, rng):
        a = rng.random((16, 20)) * 255
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 255), st.integers(0, 255))
    def test_constant_images_closed_form(self, p, q):
        c1 = (0.01 * 255) ** 2
        expected = (2 * p * q + c1) / (p * p + q * q + c1)
        got = ssim(np.full((12, 13), float(p)), np.full((12, 13), float(q)))
        assert got == pytest.approx(expected, abs=1e-9)

    def test_matches_window_loop(self, rng):
        a = smooth_image(17, 19, 3)[:, :, 0].astype(np.float64)
        b = np.clip(a + rng.normal(0, 12, a.shape), 0, 255)
        assert ssim(a, b) == pytest.approx(loop_ssim(a, b), abs=1e-9)

    def test_window_normalised(self):
        g = gaussian_window()
        assert len(g) == 11 and g.sum() == pytest.approx(1.0)
        assert g[5] == g.max()

    def test_too_small(self):
        with pytest.raises(ValueError, match="11x11"):
            ssim(np.zeros((10, 30)), np.zeros((10, 30)))


class TestScorePair:
    def test_crop_changes_score(self, rng):
        hr = smooth_image(40, 40, 1)
        sr = hr.copy()
        sr[:2] = 0
        with_crop = score_pair(sr, hr, 2)
        without = score_pair(sr, hr, 2, EvalProtocol(border_crop=0))
        assert with_crop[0] == math.inf and with_crop[1] == pytest.approx(1.0)
        assert without[0] < 40

    def test_y_versus_rgb(self, rng):
        hr = smooth_image(32, 32, 2)
        sr = np.clip(hr.astype(int) + rng.integers(-3, 4, hr.shape), 0, 255).astype(np.uint8)
        y = score_pair(sr, hr, 2)
        rgb = score_pair(sr, hr, 2, EvalProtocol(channel="rgb"))
        assert y != rgb

    def test_crop_too_large(self):
        img = smooth_image(8, 8)
        with pytest.raises(ValueError, match="too large"):
            score_pair(img, img, 4)

    def test_invalid_protocol(self):
        with pytest.raises(ValueError):
            EvalProtocol(channel="lab")
        with pytest.raises(ValueError):
            EvalProtocol(border_crop=-1)


class TestEvaluate:
    def test_identity_gives_infinite_psnr(self, toy_split):
        degrade(toy_split / "HR", 2, toy_split / "LR_x2")
        result = evaluate(DatasetIndex.from_dir(toy_split, 2), None, 2)
        assert [r[0] for r in result.rows] == ["a.png", "b.png"]
        assert all(r[1] == math.inf and r[2] == pytest.approx(1.0) for r in result.rows)
        assert result.to_tsv().splitlines()[-1] == "mean\tinf\t1.000000"

    def test_bicubic_baseline_finite(self, toy_split):
        degrade(toy_split / "HR", 2, toy_split / "LR_x2")
        result = evaluate(DatasetIndex.from_dir(toy_split, 2), bicubic_upscaler, 2)
        assert 15 < result.mean_psnr < 60
        assert 0 < result.mean_ssim < 1

    def test_tsv_layout(self):
        result = EvalResult(2, EvalProtocol(), rows=[("x.png", 30.123456, 0.9), ("y.png", 32.0, 0.8)], skipped=["z.png"])
        assert result.to_tsv() == (
            "image\tpsnr\tssim\nx.png\t30.1235\t0.900000\ny.png\t32.0000\t0.800000\n"
            "mean\t31.0617\t0.850000\n# skipped\tz.png\n"
        )

    def test_wrong_shape_skipped(self):
        pair = ImagePair.from_hr(smooth_image(32, 32), 2)
        result = evaluate([pair], lambda lr, s: lr, 2)
        assert result.rows == [] and result.skipped == ["image000"]
        assert math.isnan(result.mean_psnr)
