"""Single-channel images, file I/O, bicubic resampling and the ``Y = S H X`` model.

Images are plain 2-D ``float64`` arrays (rows x columns) with intensities
in [0, 1]. ``H`` is a separable truncated Gaussian with clamp-to-edge
boundaries and ``S`` keeps the top-left sample of every ``scale x scale``
block.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .errors import FormatError

__all__ = [
    "DegradationConfig",
    "as_image",
    "read_pgm",
    "write_pgm",
    "read_image",
    "write_image",
    "to_luminance",
    "bicubic_resize",
    "gaussian_kernel",
    "gaussian_blur",
    "blur_adjoint",
    "decimate",
    "zero_insert",
    "degrade",
    "degrade_adjoint",
    "center_crop_to_multiple",
]


@dataclass(frozen=True)
class DegradationConfig:
    """Blur-then-decimate operator parameters.

    ``blur_radius`` defaults to ``ceil(3 * blur_sigma)``.
    """

    scale: int = 2
    blur_sigma: float = 0.8
    blur_radius: Optional[int] = None

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError(f"scale must be a positive integer, got {self.scale}")
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be non-negative, got {self.blur_sigma}")
        if self.blur_radius is not None and self.blur_radius < 0:
            raise ValueError(f"blur_radius must be non-negative, got {self.blur_radius}")

    @property
    def radius(self) -> int:
        if self.blur_radius is not None:
            return int(self.blur_radius)
        return int(math.ceil(3.0 * self.blur_sigma))

    def kernel(self) -> np.ndarray:
        return gaussian_kernel(self.blur_sigma, self.radius)


def as_image(pixels, clamp: bool = False) -> np.ndarray:
    """Validate and convert to a 2-D float64 image."""
    img = np.array(pixels, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"image must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if clamp:
        np.clip(img, 0.0, 1.0, out=img)
    return img


# --- file I/O -----------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _parse_pgm_header(data: bytes):
    if not data.startswith(b"P"):
        raise FormatError("not a PNM file (missing 'P' magic)")
    magic = data[:2]
    if magic != b"P5":
        raise FormatError(f"unsupported PNM format {magic.decode('latin-1')!r}; only binary P5 is supported")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"truncated PGM header: missing {name}")
        token = m.group(1)
        if not token.isdigit():
            raise FormatError(f"bad PGM {name}: {token[:16]!r}")
        fields.append(int(token))
        pos = m.end()
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError("truncated PGM header: missing separator before pixel data")
    return fields, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255; bytes map to ``b / 255``."""
    with open(path, "rb") as fh:
        data = fh.read()
    (width, height, maxval), offset = _parse_pgm_header(data)
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}; only 255 is supported")
    if width < 1 or height < 1:
        raise FormatError(f"bad PGM dimensions {width}x{height}")
    payload = data[offset:offset + width * height]
    if len(payload) != width * height:
        raise FormatError(
            f"truncated PGM payload: expected {width * height} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / 255.0


def _to_bytes(image) -> np.ndarray:
    img = as_image(image)
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(image, path) -> None:
    """Write a binary P5 PGM, mapping ``v`` to ``round(v * 255)``."""
    pixels = _to_bytes(image)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(pixels.tobytes())


def to_luminance(rgb) -> np.ndarray:
    """ITU-R BT.601 luma of an ``(..., 3)`` array."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def read_image(path) -> np.ndarray:
    """Read PGM directly, anything else through Pillow, as grayscale [0, 1]."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head in (b"P1", b"P2", b"P4", b"P5"):
        return read_pgm(path)
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("L", "P", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
            elif im.mode in ("I;16", "I;16B", "I", "F"):
                raise FormatError(f"unsupported image mode {im.mode!r}; 8-bit only")
            else:
                arr = to_luminance(np.asarray(im.convert("RGB"), dtype=np.float64))
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from exc
    return np.clip(arr / 255.0, 0.0, 1.0)


def write_image(image, path) -> None:
    """Write ``.pgm`` natively and ``.png`` (8-bit grayscale) through Pillow."""
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        from PIL import Image as PILImage

        PILImage.fromarray(_to_bytes(image), mode="L").save(path)
    else:
        write_pgm(image, path)


# --- resampling ---------------------------------------------------------

def _keys(t, a=-0.5):
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Output sample i sits at input coordinate i * n_in / n_out, so sample 0
    # of both grids coincide, matching top-left decimation.
    pos = np.arange(n_out) * (n_in / n_out)
    base = np.floor(pos).astype(int)
    frac = pos - base
    W = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, n_in - 1)
        np.add.at(W, (rows, idx), _keys(frac - tap))
    return W


def bicubic_resize(image, out_width: int, out_height: int) -> np.ndarray:
    """Keys bicubic (a = -0.5) resampling with clamped edge coordinates."""
    img = as_image(image)
    if out_width < 1 or out_height < 1:
        raise ValueError(f"output dimensions must be >= 1, got {out_width}x{out_height}")
    h, w = img.shape
    Wr = _bicubic_matrix(h, out_height)
    Wc = _bicubic_matrix(w, out_width)
    return np.clip(Wr @ img @ Wc.T, 0.0, 1.0)


# --- degradation operators ------------------------------------------------

def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Truncated, unit-sum 1-D Gaussian taps on ``[-radius, radius]``."""
    if sigma == 0 or radius == 0:
        return np.ones(1)
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur(img, kernel):
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def gaussian_blur(image, config: DegradationConfig = DegradationConfig(), clamp: bool = True) -> np.ndarray:
    """Apply ``H``: separable Gaussian correlation with clamp-to-edge borders.

    ``clamp=False`` keeps the operator strictly linear for iterates that may
    leave [0, 1].
    """
    img = as_image(image)
    kernel = config.kernel()
    if kernel.size == 1:
        return img
    out = _blur(img, kernel)
    return np.clip(out, 0.0, 1.0, out=out) if clamp else out


def _blur_adjoint_axis(img, kernel, axis):
    r = kernel.size // 2
    n = img.shape[axis]
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    # Scatter into the extended domain, then fold the overhang back onto
    # the edge samples that the clamped forward operator read from.
    ext = correlate1d(np.pad(img, pad), kernel[::-1], axis=axis, mode="constant")
    ext = np.moveaxis(ext, axis, 0)
    out = ext[r:r + n].copy()
    out[0] += ext[:r].sum(axis=0)
    out[-1] += ext[r + n:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def blur_adjoint(image, config: DegradationConfig = DegradationConfig()) -> np.ndarray:
    """Exact transpose of the clamp-to-edge blur (no clamping of values)."""
    img = np.asarray(image, dtype=np.float64)
    kernel = config.kernel()
    if kernel.size == 1:
        return img.copy()
    return _blur_adjoint_axis(_blur_adjoint_axis(img, kernel, 0), kernel, 1)


def decimate(image, scale: int) -> np.ndarray:
    """Apply ``S``: keep pixel ``(scale*i, scale*j)``."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h % scale or w % scale:
        raise ValueError(f"image {w}x{h} is not divisible by scale {scale}; crop first")
    return img[::scale, ::scale].copy()


def zero_insert(image, scale: int) -> np.ndarray:
    """Apply ``S^T``: place each sample at ``(scale*i, scale*j)``, zeros elsewhere."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    out = np.zeros((h * scale, w * scale))
    out[::scale, ::scale] = img
    return out


def degrade(image, config: DegradationConfig = DegradationConfig(), clamp: bool = True) -> np.ndarray:
    """``Y = S H X``."""
    return decimate(gaussian_blur(image, config, clamp), config.scale)


def degrade_adjoint(y, hr_shape: Tuple[int, int], config: DegradationConfig = DegradationConfig()) -> np.ndarray:
    """``H^T S^T y`` for an HR grid of shape ``hr_shape`` (rows, cols).

    The result is a gradient quantity and is not clamped.
    """
    y = np.asarray(y, dtype=np.float64)
    s = config.scale
    if tuple(hr_shape) != (y.shape[0] * s, y.shape[1] * s):
        raise ValueError(
            f"HR shape {tuple(hr_shape)} inconsistent with LR shape {y.shape} at scale {s}"
        )
    return blur_adjoint(zero_insert(y, s), config)


def center_crop_to_multiple(image, scale: int):
    """Crop to dimensions divisible by ``scale``, removing rows/cols evenly.

    Returns the cropped image and the ``(top, bottom, left, right)`` margins.
    """
    img = np.asarray(image)
    h, w = img.shape
    dh, dw = h % scale, w % scale
    top, left = dh // 2, dw // 2
    bottom, right = dh - top, dw - left
    return img[top:h - bottom, left:w - right], (top, bottom, left, right)
