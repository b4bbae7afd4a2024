"""
Evaluation metrics: PSNR, SSIM, SDR and SI-SDR, plus per-method reports.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from utils.errors import ShapeMismatchError

logger = logging.getLogger(__name__)

DB_CAP = 100.0


def _check_shapes(est: np.ndarray, gt: np.ndarray) -> None:
    if est.shape != gt.shape:
        raise ShapeMismatchError(f"Estimate shape {est.shape} does not match ground truth {gt.shape}")


def _capped_db(numerator: float, denominator: float) -> float:
    if denominator <= 0.0:
        return DB_CAP if numerator > 0.0 else -DB_CAP
    if numerator <= 0.0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(numerator / denominator), -DB_CAP, DB_CAP))


def psnr(est: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at +100 dB for exact matches."""
    est, gt = np.asarray(est, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(est, gt)
    mse = float(np.mean((est - gt) ** 2))
    return _capped_db(peak * peak, mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian window."""
    axis = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    kernel = np.exp(-0.5 * (axis / sigma) ** 2)
    kernel /= kernel.sum()
    return np.outer(kernel, kernel)


def _local_mean(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    patches = np.lib.stride_tricks.sliding_window_view(image, window.shape)
    return np.einsum('ijkl,kl->ij', patches, window)


def ssim(est: np.ndarray, gt: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """
    Mean structural similarity over all valid Gaussian-window positions.

    Args:
        est: 2-D estimate
        gt: 2-D reference
        window: Window extent
        sigma: Gaussian window standard deviation
        k1, k2: Stabilizing constants
        data_range: Dynamic range L

    Returns:
        Mean local SSIM in [-1, 1]
    """
    est, gt = np.asarray(est, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(est, gt)
    if est.ndim != 2:
        raise ShapeMismatchError(f"SSIM needs 2-D inputs, got shape {est.shape}")
    if min(est.shape) < window:
        raise ValueError(f"Input {est.shape} is smaller than the {window}x{window} SSIM window")

    weights = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    mu_x = _local_mean(est, weights)
    mu_y = _local_mean(gt, weights)
    var_x = _local_mean(est * est, weights) - mu_x ** 2
    var_y = _local_mean(gt * gt, weights) - mu_y ** 2
    cov = _local_mean(est * gt, weights) - mu_x * mu_y

    numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denominator = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.clip(np.mean(numerator / denominator), -1.0, 1.0))


def sdr(est: np.ndarray, gt: np.ndarray) -> float:
    """Plain energy-ratio SDR: 10*log10(|gt|^2 / |gt - est|^2)."""
    est, gt = np.asarray(est, dtype=np.float64).ravel(), np.asarray(gt, dtype=np.float64).ravel()
    _check_shapes(est, gt)
    signal = float(gt @ gt)
    if signal == 0.0:
        raise ValueError("SDR is undefined for an all-zero ground truth")
    error = gt - est
    return _capped_db(signal, float(error @ error))


def si_sdr(est: np.ndarray, gt: np.ndarray) -> float:
    """Scale-invariant SDR: est is first projected onto gt."""
    est, gt = np.asarray(est, dtype=np.float64).ravel(), np.asarray(gt, dtype=np.float64).ravel()
    _check_shapes(est, gt)
    energy = float(gt @ gt)
    if energy == 0.0:
        raise ValueError("SI-SDR is undefined for an all-zero ground truth")
    target = (float(est @ gt) / energy) * gt
    noise = est - target
    return _capped_db(float(target @ target), float(noise @ noise))


@dataclass
class MetricReport:
    """Per-sample scores and their aggregates."""

    psnr: List[float] = field(default_factory=list)
    ssim: List[Optional[float]] = field(default_factory=list)
    sdr: List[Optional[float]] = field(default_factory=list)
    si_sdr: List[Optional[float]] = field(default_factory=list)

    def aggregate(self) -> Dict[str, Optional[float]]:
        def _stat(values: List[Optional[float]], reducer) -> Optional[float]:
            present = [v for v in values if v is not None]
            return float(reducer(present)) if present else None

        return {
            'psnr_mean': _stat(self.psnr, np.mean),
            'ssim_mean': _stat(self.ssim, np.mean),
            'sdr_median': _stat(self.sdr, np.median),
            'si_sdr_median': _stat(self.si_sdr, np.median),
            'psnr_median': _stat(self.psnr, np.median),
            'sdr_mean': _stat(self.sdr, np.mean),
            'count': len(self.psnr),
        }

    def to_dict(self, include_samples: bool = False) -> Dict[str, Any]:
        result: Dict[str, Any] = {'aggregate': self.aggregate()}
        if include_samples:
            result['samples'] = {
                'psnr': self.psnr, 'ssim': self.ssim, 'sdr': self.sdr, 'si_sdr': self.si_sdr,
            }
        return result

    def rows(self, method: str, iteration: Optional[int] = None) -> List[Dict[str, Any]]:
        """Flat rows (one per sample) for CSV export."""
        return [
            {'method': method, 'iteration': '' if iteration is None else iteration, 'sample': index,
             'psnr': self.psnr[index], 'ssim': self.ssim[index],
             'sdr': self.sdr[index], 'si_sdr': self.si_sdr[index]}
            for index in range(len(self.psnr))
        ]


def evaluate_estimates(estimates: np.ndarray, truth: np.ndarray, peak: float = 1.0) -> MetricReport:
    """
    Score stacked estimates against stacked references.

    SSIM is skipped (None) for samples that are not 2-D or are smaller than
    the window; SDR/SI-SDR are skipped for all-zero references.
    """
    if estimates.shape != truth.shape:
        raise ShapeMismatchError(f"Estimates {estimates.shape} and truth {truth.shape} differ")

    report = MetricReport()
    for est, gt in zip(estimates, truth):
        report.psnr.append(psnr(est, gt, peak))
        report.ssim.append(ssim(est, gt) if gt.ndim == 2 and min(gt.shape) >= 11 else None)
        if np.any(gt != 0.0):
            report.sdr.append(sdr(est, gt))
            report.si_sdr.append(si_sdr(est, gt))
        else:
            report.sdr.append(None)
            report.si_sdr.append(None)
    return report
