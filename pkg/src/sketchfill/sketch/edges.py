"""Pluggable edge detectors producing soft edge maps in [0,1].

Both detectors are derivative-based, so the map is invariant to adding a
constant to the input. Responses are scaled so an ideal unit step peaks at
strength 1.0; the scale is calibrated numerically on a synthetic 1-D step
for the given sigmas.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from ..raster import RasterImage

DETECTORS = ("xdog", "canny")


@dataclass(frozen=True)
class EdgeMap:
    """Per-pixel edge strength in [0,1]."""

    strength: np.ndarray  # (H, W) float64

    def __post_init__(self):
        s = self.strength
        if s.ndim != 2:
            raise ValueError(f"edge map must be 2-D, got shape {s.shape}")
        object.__setattr__(self, "strength", np.ascontiguousarray(s, dtype=np.float64))

    @property
    def height(self) -> int:
        return self.strength.shape[0]

    @property
    def width(self) -> int:
        return self.strength.shape[1]


def _unit_step(n: int = 257) -> np.ndarray:
    s = np.zeros(n)
    s[n // 2 :] = 1.0
    return s


@lru_cache(maxsize=32)
def _xdog_scale(sigma: float, sigma_k: float) -> float:
    step = _unit_step()
    d = ndimage.gaussian_filter1d(step, sigma, mode="nearest") - ndimage.gaussian_filter1d(
        step, sigma * sigma_k, mode="nearest"
    )
    return 1.0 / np.abs(d).max()


@lru_cache(maxsize=32)
def _canny_scale(sigma: float) -> float:
    step = _unit_step()
    g = ndimage.gaussian_filter1d(step, sigma, order=1, mode="nearest")
    return 1.0 / np.abs(g).max()


def _xdog(gray: np.ndarray, sigma: float, sigma_k: float) -> np.ndarray:
    d = ndimage.gaussian_filter(gray, sigma, mode="nearest") - ndimage.gaussian_filter(
        gray, sigma * sigma_k, mode="nearest"
    )
    r = np.abs(d)
    # the response of a difference of Gaussians is zero exactly on the edge;
    # a 3x3 maximum fills that trough so edge pixels carry the ridge strength,
    # giving thick soft boundaries that the tracing stage later thins
    r = ndimage.maximum_filter(r, size=3, mode="nearest")
    return r * _xdog_scale(sigma, sigma_k)


def _canny(gray: np.ndarray, sigma: float) -> np.ndarray:
    gy = ndimage.gaussian_filter(gray, sigma, order=(1, 0), mode="nearest")
    gx = ndimage.gaussian_filter(gray, sigma, order=(0, 1), mode="nearest")
    # gradient magnitude only; non-maximum suppression is deliberately left to
    # the skeletonization in the tracing stage
    return np.hypot(gx, gy) * _canny_scale(sigma)


def detect_edges(
    img: RasterImage,
    detector: str = "xdog",
    sigma: float = 1.0,
    sigma_k: float = 1.6,
) -> EdgeMap:
    """Run the named detector; 3-channel input is converted to grayscale."""
    gray = img.to_gray().data[:, :, 0]
    if detector == "xdog":
        r = _xdog(gray, float(sigma), float(sigma_k))
    elif detector == "canny":
        r = _canny(gray, float(sigma))
    else:
        raise ValueError(f"unknown detector id: {detector!r} (expected one of {DETECTORS})")
    return EdgeMap(np.clip(r, 0.0, 1.0))
