"""PSNR and SSIM (scalar and per-pixel map) for single-channel images."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .imaging import gaussian_kernel

__all__ = [
    "SsimConfig",
    "ComparisonRow",
    "psnr",
    "ssim_map",
    "ssim",
    "compare",
    "average_rows",
]


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and positive, got {self.window_size}")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window_sigma <= 0 or self.dynamic_range <= 0:
            raise ValueError("window_sigma and dynamic_range must be positive")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` for identical images."""
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak}")
    a, b = _pair(a, b)
    d = a - b
    mse = float(np.mean(d * d))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _window(img, kernel):
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def ssim_map(a, b, config: SsimConfig = SsimConfig()) -> Tuple[float, np.ndarray]:
    """Gaussian-windowed SSIM at every pixel (clamp-to-edge windows).

    Returns the mean over all pixels and the full-size map.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"expected 2-D images, got shape {a.shape}")
    if min(a.shape) < config.window_size:
        raise ValueError(f"image {a.shape} is smaller than the {config.window_size}-pixel window")
    kernel = gaussian_kernel(config.window_sigma, config.window_size // 2)
    c1 = (config.k1 * config.dynamic_range) ** 2
    c2 = (config.k2 * config.dynamic_range) ** 2
    mu_a = _window(a, kernel)
    mu_b = _window(b, kernel)
    var_a = _window(a * a, kernel) - mu_a * mu_a
    var_b = _window(b * b, kernel) - mu_b * mu_b
    cov = _window(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = num / den
    return float(np.mean(smap)), smap


def ssim(a, b, config: SsimConfig = SsimConfig()) -> float:
    return ssim_map(a, b, config)[0]


class ComparisonRow(NamedTuple):
    name: str
    psnr: float
    ssim: float


def average_rows(rows: Sequence[ComparisonRow], name: str = "Average") -> ComparisonRow:
    return ComparisonRow(
        name,
        float(np.mean([r.psnr for r in rows])),
        float(np.mean([r.ssim for r in rows])),
    )


def compare(reference, candidates, peak: float = 1.0,
            config: SsimConfig = SsimConfig()) -> List[ComparisonRow]:
    """One row per ``(name, image)`` candidate followed by an ``Average`` row."""
    rows = [ComparisonRow(name, psnr(reference, img, peak), ssim(reference, img, config))
            for name, img in candidates]
    if rows:
        rows.append(average_rows(rows))
    return rows
