"""Quality metrics and rate-distortion curve comparison.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with
c1 = (0.01*255)^2 and c2 = (0.03*255)^2; borders are handled by symmetric
reflection and the score is the mean of the local map over all pixels.
MS-SSIM is the usual 5-scale variant with the published exponents.
BD-rate follows the cubic-fit-of-log-rate convention: negative numbers mean
the second curve needs fewer bits at equal quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .imaging import ImageGray, gaussian_window

SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_DIM = 176  # 11 * 2^(scales-1)

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class RDPoint:
    """One operating point of a codec: rate in bits per pixel, quality value."""

    rate: float
    quality: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be > 0")


def _pixels(img) -> np.ndarray:
    a = img.pixels if isinstance(img, ImageGray) else np.asarray(img)
    return a.astype(np.float64)


def _check_same_shape(z: np.ndarray, x: np.ndarray) -> None:
    if z.shape != x.shape:
        raise ValueError(f"image shapes differ: {z.shape} vs {x.shape}")


def mse(z, x) -> float:
    z, x = _pixels(z), _pixels(x)
    _check_same_shape(z, x)
    return float(np.mean((z - x) ** 2))


def wmse(z, x, q) -> float:
    """Weighted MSE (1/n) sum q_i (z_i - x_i)^2. With q = 1 this is the MSE."""
    z, x = _pixels(z), _pixels(x)
    _check_same_shape(z, x)
    qa = np.asarray(getattr(q, "q", q), dtype=np.float64)
    if qa.size != z.size:
        raise ValueError(f"weight map size {qa.size} does not match image size {z.size}")
    return float(np.mean(qa.reshape(z.shape) * (z - x) ** 2))


def psnr(z, x) -> float:
    """Peak signal-to-noise ratio against a 255 peak, capped at 99 dB."""
    m = mse(z, x)
    if m == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0**2 / m))


def _ssim_maps(z: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Local luminance and contrast-structure maps."""
    k = gaussian_window()
    mu_z = correlate(z, k, mode="reflect")
    mu_x = correlate(x, k, mode="reflect")
    zz = correlate(z * z, k, mode="reflect") - mu_z**2
    xx = correlate(x * x, k, mode="reflect") - mu_x**2
    zx = correlate(z * x, k, mode="reflect") - mu_z * mu_x
    lum = (2 * mu_z * mu_x + SSIM_C1) / (mu_z**2 + mu_x**2 + SSIM_C1)
    cs = (2 * zx + SSIM_C2) / (zz + xx + SSIM_C2)
    return lum, cs


def ssim(z, x) -> float:
    """Mean structural similarity between a distorted and a reference image."""
    z, x = _pixels(z), _pixels(x)
    _check_same_shape(z, x)
    lum, cs = _ssim_maps(z, x)
    return float(np.mean(lum * cs))


def _downsample2(a: np.ndarray) -> np.ndarray:
    # 2x2 mean low-pass then dyadic subsample, matching common MS-SSIM code
    h2, w2 = a.shape[0] // 2, a.shape[1] // 2
    a = a[: 2 * h2, : 2 * w2]
    return (a[0::2, 0::2] + a[0::2, 1::2] + a[1::2, 0::2] + a[1::2, 1::2]) / 4.0


def _ms_ssim_components(z: np.ndarray, x: np.ndarray) -> tuple[list[float], float]:
    """Per-scale mean contrast-structure values and the final-scale SSIM."""
    mcs = []
    n_scales = len(MS_SSIM_WEIGHTS)
    for scale in range(n_scales):
        lum, cs = _ssim_maps(z, x)
        if scale == n_scales - 1:
            return mcs, float(np.mean(lum * cs))
        mcs.append(float(np.mean(cs)))
        z, x = _downsample2(z), _downsample2(x)
    raise AssertionError("unreachable")


def ms_ssim(z, x) -> float:
    """Five-scale multi-scale SSIM with the standard exponents.

    Requires min(height, width) >= 176 so the coarsest scale still covers
    the 11x11 window.
    """
    z, x = _pixels(z), _pixels(x)
    _check_same_shape(z, x)
    if min(z.shape) < MS_SSIM_MIN_DIM:
        raise ValueError(
            f"image too small for 5-scale MS-SSIM: min dim {min(z.shape)} < {MS_SSIM_MIN_DIM}"
        )
    mcs, last = _ms_ssim_components(z, x)
    out = last ** MS_SSIM_WEIGHTS[-1]
    for v, w in zip(mcs, MS_SSIM_WEIGHTS[:-1]):
        out *= v**w
    return float(out)


def bd_rate(curve_a: list[RDPoint], curve_b: list[RDPoint]) -> float:
    """Average percent rate difference of curve_b against curve_a.

    Fits cubic polynomials to log-rate as a function of quality and
    integrates both over the overlapping quality range. Negative values
    mean curve_b achieves the same quality at lower rate.
    """
    ra, qa = _curve_arrays(curve_a)
    rb, qb = _curve_arrays(curve_b)
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    if not hi > lo:
        raise ValueError("quality ranges of the two curves do not overlap")
    pa = np.polyfit(qa, np.log(ra), 3)
    pb = np.polyfit(qb, np.log(rb), 3)
    int_a = np.polyval(np.polyint(pa), hi) - np.polyval(np.polyint(pa), lo)
    int_b = np.polyval(np.polyint(pb), hi) - np.polyval(np.polyint(pb), lo)
    avg_log_diff = (int_b - int_a) / (hi - lo)
    return float((math.exp(avg_log_diff) - 1.0) * 100.0)


def _curve_arrays(curve: list[RDPoint]) -> tuple[np.ndarray, np.ndarray]:
    if len(curve) < 4:
        raise ValueError(f"need >= 4 RD points, got {len(curve)}")
    pts = sorted(curve, key=lambda p: p.quality)
    q = np.array([p.quality for p in pts])
    r = np.array([p.rate for p in pts])
    if np.any(np.diff(q) <= 0):
        raise ValueError("curve quality values must be strictly monotone")
    return r, q
