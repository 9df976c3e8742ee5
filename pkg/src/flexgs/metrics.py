"""Image quality and compression-ratio metrics.

Images are float arrays of shape (H, W, 3) in [0, 1]. PSNR uses MAX = 1 and
is capped at 100 dB; SSIM uses an 11x11 Gaussian window (sigma 1.5) over
valid window positions, per channel, averaged. Multi-view quality is the
per-view mean (PSNR averaged in dB, not via pooled MSE).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

# Nominal PSNR of an uncompressed model against ground truth; used to turn
# render-vs-render error into an expected ground-truth PSNR drop.
DEFAULT_REFERENCE_PSNR = 27.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2)) if a.size else 0.0


def psnr_from_mse(m: float) -> float:
    if m < MSE_FLOOR:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / m)


def psnr(a, b) -> float:
    return psnr_from_mse(mse(a, b))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    g = gaussian_window()
    pad = SSIM_WINDOW // 2

    def blur(x):
        y = correlate1d(x, g, axis=0, mode="constant")
        y = correlate1d(y, g, axis=1, mode="constant")
        return y[pad : h - pad, pad : w - pad]

    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx, my = blur(x), blur(y)
        sxx = blur(x * x) - mx * mx
        syy = blur(y * y) - my * my
        sxy = blur(x * y) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class QualityReport:
    psnr: float
    ssim: float
    mse: float
    lpips: float | None = None
    psnr_views: list = field(default_factory=list, repr=False)
    mse_views: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("psnr_views")
        d.pop("mse_views")
        return d


def _report(pairs) -> QualityReport:
    if not pairs:
        raise ValueError("need at least one view")
    mses = [mse(a, b) for a, b in pairs]
    psnrs = [psnr_from_mse(m) for m in mses]
    ssims = [ssim(a, b) for a, b in pairs]
    return QualityReport(float(np.mean(psnrs)), float(np.mean(ssims)), float(np.mean(mses)), None, psnrs, mses)


def compare_to_renders(baseline, model, cameras) -> QualityReport:
    """Render ``model`` for each camera and score it against ``baseline`` images."""
    from .renderer import render

    if len(baseline) != len(cameras):
        raise ValueError("one baseline image per camera is required")
    return _report([(ref, render(model, cam)[0]) for ref, cam in zip(baseline, cameras)])


def mean_quality(model_a, model_b, cameras) -> QualityReport:
    from .renderer import render_views

    if not cameras:
        raise ValueError("need at least one camera")
    return compare_to_renders(render_views(model_a, cameras), model_b, cameras)


def expected_psnr_drop(mse_views, reference_psnr: float = DEFAULT_REFERENCE_PSNR) -> float:
    """Expected ground-truth PSNR loss caused by extra error ``mse_views``.

    Models the uncompressed render as having error ``10**(-reference_psnr/10)``
    against ground truth and the compression error as independent of it, so
    each view loses ``10*log10(1 + mse / mse_ref)`` dB; views are averaged.
    """
    mse_ref = 10.0 ** (-reference_psnr / 10.0)
    return float(np.mean([10.0 * math.log10(1.0 + m / mse_ref) for m in mse_views]))


def compression_ratio(original_bytes: int, compressed_bytes: int) -> float:
    if original_bytes <= 0 or compressed_bytes <= 0:
        raise ValueError("sizes must be positive")
    return original_bytes / compressed_bytes


def reduction_pct(original_bytes: int, compressed_bytes: int) -> float:
    if original_bytes <= 0 or compressed_bytes <= 0:
        raise ValueError("sizes must be positive")
    return 100.0 * (1.0 - compressed_bytes / original_bytes)
