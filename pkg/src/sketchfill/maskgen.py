"""Training mask sampling and user mask cleanup.

Training masks are filled rectangles with random center, size, and a random
tilt up to 45 degrees; tilting teaches the model edit regions whose borders
are not axis-aligned. A pixel belongs to the mask when its center falls
inside the rectangle under a half-open rule (left/top edges excluded), which
keeps an axis-aligned WxH rectangle at exactly W*H pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import BinaryMask


@dataclass(frozen=True)
class MaskSpec:
    """Geometry of one rectangular edit region."""

    center: tuple  # (x, y) px
    width: float
    height: float
    angle: float  # degrees in [0, 45]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"mask sides must be positive, got {self.width}x{self.height}")
        if not 0.0 <= self.angle <= 45.0:
            raise ValueError(f"angle must be in [0,45] degrees, got {self.angle}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    def to_floats(self) -> np.ndarray:
        return np.array(
            [self.center[0], self.center[1], self.width, self.height, self.angle],
            dtype=np.float64,
        )

    @classmethod
    def from_floats(cls, v) -> "MaskSpec":
        v = np.asarray(v, dtype=np.float64).reshape(5)
        return cls(center=(v[0], v[1]), width=v[2], height=v[3], angle=v[4])


def rasterize_spec(spec: MaskSpec, width: int, height: int) -> BinaryMask:
    """Pixel centers strictly right of / below the low edges, inclusive high."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dx = xx - spec.center[0]
    dy = yy - spec.center[1]
    t = np.deg2rad(spec.angle)
    rx = dx * np.cos(t) + dy * np.sin(t)
    ry = -dx * np.sin(t) + dy * np.cos(t)
    hw, hh = spec.width / 2.0, spec.height / 2.0
    bits = (rx > -hw) & (rx <= hw) & (ry > -hh) & (ry <= hh)
    return BinaryMask(bits)


def sample_mask(
    width: int,
    height: int,
    rng_seed: int,
    axis_aligned_only: bool = False,
    min_frac: float = 0.25,
    max_frac: float = 0.5,
) -> tuple:
    """Draw one random rectangle: center anywhere, sides as a fraction of the
    image side, tilt uniform in [0, 45] degrees (0 when axis_aligned_only).

    Deterministic per seed; draw order is center x/y, width, height, angle.
    """
    if width < 32 or height < 32:
        raise ValueError(f"image must be at least 32x32, got {width}x{height}")
    if not 0 < min_frac <= max_frac <= 1:
        raise ValueError(f"bad size fractions [{min_frac}, {max_frac}]")
    rng = np.random.default_rng(rng_seed)
    side = min(width, height)
    cx = rng.uniform(0.0, width)
    cy = rng.uniform(0.0, height)
    w = rng.uniform(min_frac, max_frac) * side
    h = rng.uniform(min_frac, max_frac) * side
    angle = float(rng.uniform(0.0, 45.0))
    if axis_aligned_only:
        angle = 0.0
    spec = MaskSpec(center=(cx, cy), width=w, height=h, angle=angle)
    return spec, rasterize_spec(spec, width, height)


def normalize_user_mask(raw: BinaryMask) -> BinaryMask:
    """3x3 morphological closing; fills pinholes without growing the blob.

    Erosion treats the outside as set so regions touching the border are not
    eaten there.
    """
    raw.require_nonempty()
    structure = np.ones((3, 3), dtype=bool)
    dilated = ndimage.binary_dilation(raw.bits, structure=structure)
    closed = ndimage.binary_erosion(dilated, structure=structure, border_value=1)
    return BinaryMask(closed)


def local_crop_box(mask: BinaryMask, crop: int) -> tuple:
    """crop x crop box centered on the mask centroid, clamped inside.

    Returns (x0, y0, x1, y1), end-exclusive.
    """
    if crop > mask.width or crop > mask.height:
        raise ValueError(
            f"crop {crop} exceeds mask raster {mask.width}x{mask.height}"
        )
    mask.require_nonempty()
    ys, xs = np.nonzero(mask.bits)
    cx = float(xs.mean())
    cy = float(ys.mean())
    x0 = int(round(cx - crop / 2.0))
    y0 = int(round(cy - crop / 2.0))
    x0 = min(max(x0, 0), mask.width - crop)
    y0 = min(max(y0, 0), mask.height - crop)
    return (x0, y0, x0 + crop, y0 + crop)
