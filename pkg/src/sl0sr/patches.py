"""Overlapping patch grids: extraction, mean handling and overlap-averaged merging.

Patches are stored as rows of a ``(count, p*p)`` array in row-major pixel
order; patch ``k`` belongs to ``grid.positions[k]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

__all__ = [
    "PatchGrid",
    "plan_grid",
    "extract",
    "remove_mean",
    "add_mean",
    "merge",
    "coverage",
    "zero_mean_basis",
    "is_zero_mean",
]


def _anchors(length: int, patch_size: int, stride: int) -> Tuple[int, ...]:
    last = length - patch_size
    anchors = list(range(0, last + 1, stride))
    if anchors[-1] != last:
        anchors.append(last)
    return tuple(anchors)


@dataclass(frozen=True)
class PatchGrid:
    """Top-left anchors of a product grid of square patches.

    ``rows`` and ``cols`` hold the per-axis anchors; positions are their
    row-major product.
    """

    image_width: int
    image_height: int
    patch_size: int
    stride: int
    rows: Tuple[int, ...]
    cols: Tuple[int, ...]

    @property
    def overlap(self) -> int:
        return self.patch_size - self.stride

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.image_height, self.image_width)

    @property
    def positions(self) -> List[Tuple[int, int]]:
        return [(r, c) for r in self.rows for c in self.cols]

    def __len__(self):
        return len(self.rows) * len(self.cols)

    def scaled(self, scale: int) -> "PatchGrid":
        """The same grid on an image ``scale`` times larger (anchors, size and stride scaled)."""
        return PatchGrid(
            self.image_width * scale,
            self.image_height * scale,
            self.patch_size * scale,
            self.stride * scale,
            tuple(r * scale for r in self.rows),
            tuple(c * scale for c in self.cols),
        )


def plan_grid(width: int, height: int, patch_size: int, overlap: int) -> PatchGrid:
    """Anchors ``0, s, 2s, ...`` per axis plus a flush anchor at ``dim - p``."""
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    if patch_size > min(width, height):
        raise ValueError(f"patch size {patch_size} exceeds image {width}x{height}")
    if not 0 <= overlap < patch_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < patch_size, got {overlap}")
    stride = patch_size - overlap
    return PatchGrid(
        width,
        height,
        patch_size,
        stride,
        _anchors(height, patch_size, stride),
        _anchors(width, patch_size, stride),
    )


def _check_grid(shape, grid: PatchGrid):
    if tuple(shape) != grid.shape:
        raise ValueError(f"image shape {tuple(shape)} does not match grid shape {grid.shape}")


def extract(image, grid: PatchGrid) -> np.ndarray:
    """Patch vectors, one row per grid position, pixels in row-major order."""
    img = np.asarray(image, dtype=np.float64)
    _check_grid(img.shape, grid)
    p = grid.patch_size
    windows = np.lib.stride_tricks.sliding_window_view(img, (p, p))
    picked = windows[np.ix_(np.asarray(grid.rows), np.asarray(grid.cols))]
    return picked.reshape(len(grid), p * p).copy()


def remove_mean(patches):
    """Subtract each patch's mean; returns ``(centered, means)``.

    Works on a single vector or on rows of a 2-D array.
    """
    v = np.asarray(patches, dtype=np.float64)
    means = v.mean(axis=-1)
    return v - means[..., None], means


def add_mean(patches, means):
    """Inverse of :func:`remove_mean`."""
    v = np.asarray(patches, dtype=np.float64)
    return v + np.asarray(means, dtype=np.float64)[..., None]


def _scatter(values, grid: PatchGrid, fn):
    p = grid.patch_size
    rows = np.asarray(grid.rows)
    cols = np.asarray(grid.cols)
    block = values.reshape(len(rows), len(cols), p, p)
    for di in range(p):
        for dj in range(p):
            fn(np.ix_(rows + di, cols + dj), block[:, :, di, dj])


def coverage(grid: PatchGrid) -> np.ndarray:
    """Number of patches covering each pixel."""
    count = np.zeros(grid.shape, dtype=np.int64)
    ones = np.ones((len(grid), grid.patch_size ** 2), dtype=np.int64)

    def add(idx, v):
        count[idx] += v

    _scatter(ones, grid, add)
    return count


def merge(patches, grid: PatchGrid, clamp: bool = True) -> np.ndarray:
    """Average overlapping patches back into an image.

    Each pixel is the arithmetic mean of every patch value covering it.
    Values are accumulated as offsets from one covering patch, so a set of
    mutually consistent patches reproduces its source exactly.
    """
    values = np.asarray(patches, dtype=np.float64)
    p = grid.patch_size
    if values.shape != (len(grid), p * p):
        raise ValueError(
            f"expected patches of shape {(len(grid), p * p)}, got {values.shape}"
        )
    ref = np.zeros(grid.shape)

    def assign(idx, v):
        ref[idx] = v

    _scatter(values, grid, assign)

    acc = np.zeros(grid.shape)
    count = np.zeros(grid.shape)

    def accumulate(idx, v):
        acc[idx] += v - ref[idx]
        count[idx] += 1.0

    _scatter(values, grid, accumulate)
    if np.any(count == 0):
        raise ValueError("grid leaves pixels uncovered")
    out = ref + acc / count
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def zero_mean_basis(dim: int) -> np.ndarray:
    """Orthonormal ``dim x (dim - 1)`` basis of the vectors whose entries sum to zero."""
    centering = np.eye(dim) - 1.0 / dim
    q, _ = np.linalg.qr(centering[:, :dim - 1])
    return q


def is_zero_mean(vectors, axis: int = 0, tol: float = 1e-9) -> bool:
    """True when every slice along ``axis`` sums to (numerically) zero."""
    v = np.asarray(vectors, dtype=np.float64)
    scale = max(float(np.max(np.abs(v), initial=0.0)), 1e-300)
    return bool(np.all(np.abs(v.sum(axis=axis)) <= tol * scale * v.shape[axis]))
