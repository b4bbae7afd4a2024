"""Tests for separation metrics."""

import numpy as np
import pytest

from utils.errors import ShapeMismatchError
from utils.metrics import DB_CAP, evaluate_estimates, psnr, sdr, si_sdr, ssim


class TestPsnr:
    def test_known_value(self):
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)

    def test_exact_match_is_capped(self):
        image = np.random.default_rng(0).uniform(size=(5, 5))
        assert psnr(image, image) == DB_CAP

    def test_peak(self):
        assert psnr(np.zeros(4), np.full(4, 0.2), peak=2.0) == pytest.approx(20.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros(3), np.zeros(4))


class TestSsim:
    def test_identical_images(self, rng):
        image = rng.uniform(size=(16, 16))
        assert ssim(image, image) == pytest.approx(1.0)

    def test_degrades_with_noise(self, rng):
        image = rng.uniform(size=(16, 16))
        noisy = image + rng.normal(0, 0.3, size=image.shape)
        assert ssim(noisy, image) < 0.9

    def test_within_bounds(self, rng):
        value = ssim(rng.uniform(size=(12, 12)), 1.0 - rng.uniform(size=(12, 12)))
        assert -1.0 <= value <= 1.0

    def test_constant_shift_matches_closed_form(self):
        gt = np.full((16, 16), 0.3)
        est = gt + 0.5
        mu_est, mu_gt = est[0, 0], gt[0, 0]
        c1 = (0.01 * 1.0) ** 2
        expected = (2 * mu_est * mu_gt + c1) / (mu_est ** 2 + mu_gt ** 2 + c1)
        assert ssim(est, gt) == pytest.approx(expected, rel=1e-9)

    def test_anti_correlated_pattern_is_negative(self):
        checker = np.where(np.indices((11, 11)).sum(axis=0) % 2 == 0, 0.4, -0.4)
        assert ssim(0.5 + checker, 0.5 - checker) < 0.0

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestSdr:
    def test_known_value(self):
        assert sdr(np.array([0.9, 0.0]), np.array([1.0, 0.0])) == pytest.approx(20.0)

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            sdr(np.ones(3), np.zeros(3))

    def test_si_sdr_ignores_scale(self, rng):
        gt = rng.normal(size=100)
        est = gt + rng.normal(0, 0.1, size=100)
        assert si_sdr(3.0 * est, gt) == pytest.approx(si_sdr(est, gt))

    def test_si_sdr_of_scaled_reference_is_capped(self, rng):
        gt = rng.normal(size=50)
        assert si_sdr(0.5 * gt, gt) == pytest.approx(DB_CAP)

    def test_sdr_penalizes_scale(self, rng):
        gt = rng.normal(size=50)
        assert sdr(0.5 * gt, gt) == pytest.approx(10 * np.log10(4.0))


class TestEvaluateEstimates:
    def test_const_baseline_psnr_matches_direct(self, rng):
        x = rng.uniform(size=(3, 16, 16))
        y = x + rng.uniform(size=(3, 16, 16))
        report = evaluate_estimates(y, x)
        expected = np.mean([psnr(y[i], x[i]) for i in range(3)])
        assert report.aggregate()['psnr_mean'] == pytest.approx(expected)
        assert report.aggregate()['count'] == 3

    def test_small_samples_skip_ssim(self, rng):
        x = rng.uniform(size=(2, 6, 6))
        report = evaluate_estimates(x, x)
        assert report.ssim == [None, None]
        assert report.aggregate()['ssim_mean'] is None

    def test_zero_reference_skips_sdr(self):
        truth = np.zeros((2, 12, 12))
        truth[1, 0, 0] = 1.0
        report = evaluate_estimates(np.zeros_like(truth), truth)
        assert report.sdr[0] is None
        assert report.sdr[1] == pytest.approx(0.0)

    def test_rows(self, rng):
        x = rng.uniform(size=(2, 4))
        rows = evaluate_estimates(x, x).rows('nes', iteration=3)
        assert [r['sample'] for r in rows] == [0, 1]
        assert rows[0]['iteration'] == 3 and rows[0]['method'] == 'nes'
