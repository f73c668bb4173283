"""Core raster types, deterministic image filters, compositing, and PNG I/O.

Images are float arrays in [0,1], stored row-major as (height, width, channels)
with 1 or 3 channels. All filters clamp to the border by edge replication and
are pure functions: the same input always yields bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, fallback kept for safety
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class RasterImage:
    """H x W x C float image in [0,1], the universal pixel container."""

    data: np.ndarray  # (H, W, C) float64

    def __post_init__(self):
        d = self.data
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, 1|3), got shape {d.shape}")
        d = np.ascontiguousarray(d, dtype=np.float64)
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite samples")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("image samples must lie in [0,1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_gray(self) -> "RasterImage":
        """Luma-weighted grayscale (Rec. 601); identity for 1-channel images."""
        if self.channels == 1:
            return self
        g = self.data @ np.array([0.299, 0.587, 0.114])
        return RasterImage(np.clip(g, 0.0, 1.0))

    def to_rgb(self) -> "RasterImage":
        if self.channels == 3:
            return self
        return RasterImage(np.repeat(self.data, 3, axis=2))


@dataclass(frozen=True)
class BinaryMask:
    """One boolean per pixel; true marks the editable region."""

    bits: np.ndarray  # (H, W) bool

    def __post_init__(self):
        b = self.bits
        if b.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {b.shape}")
        object.__setattr__(self, "bits", np.ascontiguousarray(b, dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())

    def require_nonempty(self):
        if not self.bits.any():
            raise ValueError("mask has no set bits but an edit region is required")


def _check_same_size(a, b, what: str):
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"{what}: dimensions differ, {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def median_filter(img: RasterImage, kernel: int) -> RasterImage:
    """Per-channel median over a kernel x kernel window, borders replicated."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return img
    r = kernel // 2
    padded = np.pad(img.data, ((r, r), (r, r), (0, 0)), mode="edge")
    h, w, c = img.data.shape
    windows = np.empty((h, w, c, kernel * kernel), dtype=np.float64)
    i = 0
    for dy in range(kernel):
        for dx in range(kernel):
            windows[:, :, :, i] = padded[dy : dy + h, dx : dx + w, :]
            i += 1
    return RasterImage(np.median(windows, axis=3))


def _spatial_table(radius: int, inv2sd: float) -> np.ndarray:
    """exp(-(dx^2+dy^2)/2sd^2) for every window offset, computed once."""
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) * inv2sd)


def _bilateral_pass_numpy(data: np.ndarray, table: np.ndarray, radius: int, inv2sr: float) -> np.ndarray:
    padded = np.pad(data, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    h, w, _ = data.shape
    acc = np.zeros_like(data)
    norm = np.zeros_like(data)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w, :]
            di = (shifted - data) * 255.0
            wgt = table[radius + dy, radius + dx] * np.exp(-di * di * inv2sr)
            acc += wgt * shifted
            norm += wgt
    return acc / norm


if _HAVE_NUMBA:

    @njit(cache=True)
    def _bilateral_pass_numba(data, table, radius, inv2sr):  # pragma: no cover - numba
        h, w, c = data.shape
        out = np.empty_like(data)
        for y in range(h):
            for x in range(w):
                for ch in range(c):
                    center = data[y, x, ch]
                    acc = 0.0
                    norm = 0.0
                    for dy in range(-radius, radius + 1):
                        yy = y + dy
                        if yy < 0:
                            yy = 0
                        elif yy >= h:
                            yy = h - 1
                        for dx in range(-radius, radius + 1):
                            xx = x + dx
                            if xx < 0:
                                xx = 0
                            elif xx >= w:
                                xx = w - 1
                            v = data[yy, xx, ch]
                            di = (v - center) * 255.0
                            wgt = table[radius + dy, radius + dx] * math.exp(-di * di * inv2sr)
                            acc += wgt * v
                            norm += wgt
                    out[y, x, ch] = acc / norm
        return out


def bilateral_window_radius(sigma_domain: float) -> int:
    """Window truncation radius: 2 sigma, part of the operation's contract."""
    return int(math.ceil(2.0 * sigma_domain))


def bilateral_filter(
    img: RasterImage,
    sigma_range: float,
    sigma_domain: float,
    iterations: int = 1,
) -> RasterImage:
    """Edge-preserving smoothing, applied `iterations` times sequentially.

    sigma_range is measured on the 0-255 intensity scale; the range weight for
    each channel is exp(-dI^2 / 2 sigma_r^2) with dI the per-channel sample
    difference rescaled to 0-255. The spatial weight is exp(-dx^2 / 2 sigma_d^2)
    over window offsets, with the window truncated at radius 2 sigma_d and
    borders replicated.
    """
    if sigma_range <= 0 or sigma_domain <= 0:
        raise ValueError(f"sigmas must be positive, got ({sigma_range}, {sigma_domain})")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    radius = bilateral_window_radius(sigma_domain)
    inv2sd = 1.0 / (2.0 * sigma_domain * sigma_domain)
    inv2sr = 1.0 / (2.0 * sigma_range * sigma_range)
    table = _spatial_table(radius, inv2sd)
    data = img.data
    for _ in range(iterations):
        if _HAVE_NUMBA:
            data = _bilateral_pass_numba(data, table, radius, inv2sr)
        else:
            data = _bilateral_pass_numpy(data, table, radius, inv2sr)
    return RasterImage(np.clip(data, 0.0, 1.0))


def resize(img: RasterImage, w: int, h: int) -> RasterImage:
    """Bilinear resampling with half-pixel centers."""
    if w < 1 or h < 1:
        raise ValueError(f"target dimensions must be >= 1, got {w}x{h}")
    src_h, src_w = img.height, img.width
    sx = (np.arange(w) + 0.5) * (src_w / w) - 0.5
    sy = (np.arange(h) + 0.5) * (src_h / h) - 0.5
    sx = np.clip(sx, 0.0, src_w - 1.0)
    sy = np.clip(sy, 0.0, src_h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]
    d = img.data
    top = d[y0[:, None], x0[None, :], :] * (1 - fx) + d[y0[:, None], x1[None, :], :] * fx
    bot = d[y1[:, None], x0[None, :], :] * (1 - fx) + d[y1[:, None], x1[None, :], :] * fx
    out = top * (1 - fy) + bot * fy
    return RasterImage(np.clip(out, 0.0, 1.0))


def composite(original: RasterImage, generated: RasterImage, mask: BinaryMask) -> RasterImage:
    """Generated inside the mask, original outside; bit-exact outside."""
    _check_same_size(original, generated, "composite")
    _check_same_size(original, mask, "composite")
    if original.channels != generated.channels:
        raise ValueError(
            f"composite: channel mismatch, {original.channels} vs {generated.channels}"
        )
    out = np.where(mask.bits[:, :, None], generated.data, original.data)
    return RasterImage(out)


def load_image(path) -> RasterImage:
    """Read an 8-bit PNG (gray or RGB) as floats in [0,1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return RasterImage(arr)


def save_image(img: RasterImage, path):
    """Write an 8-bit PNG; floats quantized by round(v*255)."""
    q = np.round(img.data * 255.0).astype(np.uint8)
    if img.channels == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(q, mode="RGB").save(path, format="PNG")


def load_mask(path) -> BinaryMask:
    """Read a mask file: single-channel image, samples > 127 are true."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return BinaryMask(arr > 127)


def save_mask(mask: BinaryMask, path):
    q = np.where(mask.bits, 255, 0).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path, format="PNG")
