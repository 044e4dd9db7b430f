"""Frame-quality metrics (MSE / PSNR / SSIM on the 0-255 scale) and
per-horizon aggregation across a test set."""

from dataclasses import dataclass

import numpy as np

PIXEL_MAX = 255.0
PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * PIXEL_MAX) ** 2
SSIM_C2 = (0.03 * PIXEL_MAX) ** 2


def mse(pred, truth):
    """Per-pixel mean squared error with both frames scaled to [0, 255]."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    d = (a - b) * PIXEL_MAX
    return float(np.mean(d * d))


def psnr_from_mse(m):
    if m == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(PIXEL_MAX**2 / m))


def psnr(pred, truth):
    """10 log10(255^2 / MSE) in dB; identical frames report the 100 dB cap."""
    return psnr_from_mse(mse(pred, truth))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img, window):
    k = window.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(win, window, axes=([2, 3], [0, 1]))


def _ssim_single(a, b, window):
    mu1 = _windowed_mean(a, window)
    mu2 = _windowed_mean(b, window)
    s11 = _windowed_mean(a * a, window) - mu1 * mu1
    s22 = _windowed_mean(b * b, window) - mu2 * mu2
    s12 = _windowed_mean(a * b, window) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * s12 + SSIM_C2)
    den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
    return float(np.mean(num / den))


def ssim(pred, truth):
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) on the
    0-255 scale; multi-channel frames average the per-channel values."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.shape[-2] < SSIM_WINDOW or a.shape[-1] < SSIM_WINDOW:
        raise ValueError(f"ssim: frame {a.shape[-2:]} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = _gaussian_window()
    vals = [_ssim_single(a[c] * PIXEL_MAX, b[c] * PIXEL_MAX, window) for c in range(a.shape[0])]
    return float(np.mean(vals))


@dataclass
class MetricReport:
    frame_mse: np.ndarray
    frame_psnr: np.ndarray
    frame_ssim: np.ndarray
    mean_mse: float
    mean_psnr: float
    mean_ssim: float


def sequence_report(pred_frames, true_frames):
    """Per-horizon metrics for one sequence of (P, C, H, W) frames in [0,1]."""
    p = pred_frames.shape[0]
    fm = np.array([mse(pred_frames[i], true_frames[i]) for i in range(p)])
    fs = np.array([ssim(pred_frames[i], true_frames[i]) for i in range(p)])
    fp = np.array([psnr_from_mse(m) for m in fm])
    return MetricReport(fm, fp, fs, float(fm.mean()), psnr_from_mse(float(fm.mean())), float(fs.mean()))


def aggregate(reports):
    """Frame-index-wise means over sequences plus the grand mean.

    PSNR entries are recomputed from the aggregated MSE so the
    PSNR = 10 log10(255^2 / MSE) identity holds for every row.
    """
    if not reports:
        raise ValueError("aggregate: empty report set")
    fm = np.mean([r.frame_mse for r in reports], axis=0)
    fs = np.mean([r.frame_ssim for r in reports], axis=0)
    fp = np.array([psnr_from_mse(m) for m in fm])
    mean_mse = float(fm.mean())
    return MetricReport(fm, fp, fs, mean_mse, psnr_from_mse(mean_mse), float(fs.mean()))


def write_report_csv(report, path):
    """CSV with one row per horizon step (frame_index starts at 1) and a
    final ``mean`` row."""
    with open(path, "w") as f:
        f.write("frame_index,mse,psnr,ssim\n")
        for i in range(len(report.frame_mse)):
            f.write(
                f"{i + 1},{float(report.frame_mse[i])!r},"
                f"{float(report.frame_psnr[i])!r},{float(report.frame_ssim[i])!r}\n"
            )
        f.write(f"mean,{report.mean_mse!r},{report.mean_psnr!r},{report.mean_ssim!r}\n")
