"""Image-quality and regression metrics used by the evaluation commands.

Image metrics operate on arrays in [0, 1], grayscale ``(H, W)`` or color
``(H, W, 3)``; metrics defined on intensity use the Rec.601 luminance of
color inputs.  Scale-sensitive constants follow the published reference
implementations, which assume a [0, 255] dynamic range; inputs are rescaled
internally, so callers always pass [0, 1] data.

The set-level Fréchet distance ships with a seeded random-projection
embedding: deterministic, dependency-free, and sufficient to separate
distributions at small scale.  Sample sets smaller than ``dim + 1`` get
diagonal covariance shrinkage and an ``unreliable`` flag instead of a hard
failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import signal as sps
from scipy import stats as spstats

# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")


_PREWITT_X = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0
_PREWITT_Y = _PREWITT_X.T


def _prewitt_magnitude(img: np.ndarray) -> np.ndarray:
    gx = sps.convolve2d(img, _PREWITT_X, mode="same", boundary="symm")
    gy = sps.convolve2d(img, _PREWITT_Y, mode="same", boundary="symm")
    return np.sqrt(gx * gx + gy * gy)


def _avg_pool2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] - img.shape[0] % 2, img.shape[1] - img.shape[1] % 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax * ax) / (2 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with the standard 11x11 Gaussian window
    (sigma 1.5), K1=0.01, K2=0.03 on unit dynamic range."""
    _check_pair(a, b)
    x = _luminance(a)
    y = _luminance(b)
    if min(x.shape) < 11:
        raise ValueError("image too small for the 11x11 SSIM window")
    window = _gaussian_window()
    c1 = 0.01**2
    c2 = 0.03**2

    def filt(img):
        return sps.convolve2d(img, window, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    xx = filt(x * x) - mu_x * mu_x
    yy = filt(y * y) - mu_y * mu_y
    xy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# GMSD
# ---------------------------------------------------------------------------


def gmsd(a: np.ndarray, b: np.ndarray) -> float:
    """Gradient-magnitude-similarity deviation (0 = identical; higher = worse).

    Both images are average-pooled by 2, gradients are Prewitt, and the
    stability constant T=170 assumes a [0, 255] range.
    """
    _check_pair(a, b)
    x = _avg_pool2(_luminance(a) * 255.0)
    y = _avg_pool2(_luminance(b) * 255.0)
    gx = _prewitt_magnitude(x)
    gy = _prewitt_magnitude(y)
    t = 170.0
    gms = (2 * gx * gy + t) / (gx * gx + gy * gy + t)
    return float(np.std(gms))


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio on unit range, capped at 99 dB."""
    _check_pair(a, b)
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    mse_val = float(np.mean((x - y) ** 2))
    if mse_val <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * math.log10(1.0 / mse_val)))


# ---------------------------------------------------------------------------
# MDSI
# ---------------------------------------------------------------------------


def mdsi(a: np.ndarray, b: np.ndarray) -> float:
    """Mean deviation similarity index (0 = identical; higher = worse).

    Gradient similarity on luminance with an edge-consistency correction
    through the average image, chromaticity similarity on two opponent
    channels, combined with alpha=0.6 and deviation-pooled with
    exponent 1/4.  Constants (C1=140, C2=55, C3=550) assume [0, 255].
    """
    _check_pair(a, b)
    x = np.asarray(a, dtype=np.float64) * 255.0
    y = np.asarray(b, dtype=np.float64) * 255.0
    if x.ndim == 2:
        x = np.repeat(x[:, :, None], 3, axis=2)
        y = np.repeat(y[:, :, None], 3, axis=2)

    # average-pool so the shorter side is at most ~256 (no-op at desk scale)
    f = max(1, round(min(x.shape[0], x.shape[1]) / 256))
    def pool(img):
        for _ in range(int(math.log2(f)) if f > 1 else 0):
            img = np.stack([_avg_pool2(img[:, :, c]) for c in range(3)], axis=2)
        return img
    x = pool(x)
    y = pool(y)

    def lum(img):
        return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]

    def chroma_h(img):
        return 0.30 * img[:, :, 0] + 0.04 * img[:, :, 1] - 0.35 * img[:, :, 2]

    def chroma_m(img):
        return 0.34 * img[:, :, 0] - 0.60 * img[:, :, 1] + 0.17 * img[:, :, 2]

    lx, ly = lum(x), lum(y)
    lf = 0.5 * (lx + ly)
    g1 = _prewitt_magnitude(lx)
    g2 = _prewitt_magnitude(ly)
    g3 = _prewitt_magnitude(lf)

    c1, c2, c3 = 140.0, 55.0, 550.0
    gs = (2 * g1 * g2 + c1) / (g1 * g1 + g2 * g2 + c1)
    gs13 = (2 * g1 * g3 + c2) / (g1 * g1 + g3 * g3 + c2)
    gs23 = (2 * g2 * g3 + c2) / (g2 * g2 + g3 * g3 + c2)
    gs_total = gs + gs23 - gs13

    hx, hy = chroma_h(x), chroma_h(y)
    mx, my = chroma_m(x), chroma_m(y)
    cs = (2 * (hx * hy + mx * my) + c3) / (hx * hx + hy * hy + mx * mx + my * my + c3)

    alpha = 0.6
    gcs = alpha * gs_total + (1 - alpha) * cs
    pooled = np.power(np.clip(gcs, 0.0, None), 0.25)
    return float(np.mean(np.abs(pooled - pooled.mean())) ** 0.25)


# ---------------------------------------------------------------------------
# Frechet distance between feature distributions
# ---------------------------------------------------------------------------


@dataclass
class FrechetResult:
    value: float
    unreliable: bool  # a sample set was smaller than dim + 1 (shrinkage applied)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> FrechetResult:
    """Frechet (2-Wasserstein, Gaussian) distance between two feature sets.

    ``||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`` with the matrix
    square root via eigendecomposition of ``A Sb A`` where ``A = Sa^(1/2)``;
    eigenvalues below 1e-10 are clipped to zero.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"expected (N, D) feature arrays with equal D, got {a.shape} and {b.shape}")
    dim = a.shape[1]
    unreliable = a.shape[0] < dim + 1 or b.shape[0] < dim + 1

    def stats(f):
        mu = f.mean(axis=0)
        centered = f - mu
        cov = centered.T @ centered / max(f.shape[0] - 1, 1)
        if f.shape[0] < dim + 1:
            cov = cov + (1e-3 * max(np.trace(cov), 1e-12) / dim) * np.eye(dim)
        return mu, cov

    mu_a, cov_a = stats(a)
    mu_b, cov_b = stats(b)
    root_a = _sqrtm_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    vals = np.where(vals < 1e-10, 0.0, vals)
    cross = 2.0 * np.sum(np.sqrt(vals))
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - cross)
    return FrechetResult(value=max(value, 0.0), unreliable=unreliable)


def embed_images(images: np.ndarray, dim: int = 64, seed: int = 77) -> np.ndarray:
    """Seeded random-projection embedding of an image stack.

    ``images`` is (N, H, W) or (N, H, W, 3) in [0, 1]; every image is
    converted to luminance, resized to 64x64, flattened, and projected with
    a fixed Gaussian matrix (scaled by 1/sqrt(input dim)).
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 4:
        images = 0.299 * images[..., 0] + 0.587 * images[..., 1] + 0.114 * images[..., 2]
    if images.ndim != 3:
        raise ValueError(f"expected (N, H, W[, 3]) image stack, got {images.shape}")
    tens = torch.from_numpy(np.ascontiguousarray(images))[:, None]
    if tens.shape[-2:] != (64, 64):
        tens = torch.nn.functional.interpolate(tens, size=(64, 64), mode="bilinear", align_corners=False)
    flat = tens[:, 0].reshape(images.shape[0], -1).numpy()
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((flat.shape[1], dim)) / math.sqrt(flat.shape[1])
    return flat @ proj


# ---------------------------------------------------------------------------
# regression metrics
# ---------------------------------------------------------------------------


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def rms(pred: np.ndarray, target: np.ndarray) -> float:
    """Root of the mean squared error."""
    return math.sqrt(mse(pred, target))


def smape(pred: np.ndarray, target: np.ndarray, eps: float = 1e-8) -> float:
    """Symmetric mean absolute percentage error, in percent."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(100.0 * np.mean(2.0 * np.abs(pred - target) / (np.abs(pred) + np.abs(target) + eps)))


def spearman_per_channel(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Spearman rank correlation per column, average ranks for ties.

    Columns where either side is constant have no defined rank correlation
    and yield NaN (the caller-visible sentinel).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ValueError(f"expected matching (N, C) arrays, got {pred.shape} and {target.shape}")
    out = np.full(pred.shape[1], np.nan)
    for c in range(pred.shape[1]):
        rp = spstats.rankdata(pred[:, c])
        rt = spstats.rankdata(target[:, c])
        sp, st_ = rp.std(), rt.std()
        if sp == 0.0 or st_ == 0.0:
            continue
        out[c] = float(np.mean((rp - rp.mean()) * (rt - rt.mean())) / (sp * st_))
    return out


def pooled_spearman(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Median of the per-channel Spearman coefficients (NaN channels excluded).

    Returns ``(pooled, per_channel)``; pooled is NaN if no channel is valid.
    """
    per_channel = spearman_per_channel(pred, target)
    valid = per_channel[~np.isnan(per_channel)]
    pooled = float(np.median(valid)) if valid.size else float("nan")
    return pooled, per_channel


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation of a metric column."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std())
