"""Color conditioning: smoothed color maps, synthetic strokes, iris disks.

The color map is built at a fixed 128x128 working resolution. Synthetic
strokes are drawn at map scale with colors sampled from the map itself, so
every stroke pixel carries an exact map value; the dataset stage upsamples
the finished layer to the training resolution with nearest-neighbor so that
property survives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask, RasterImage, bilateral_filter, median_filter, resize

MAP_SIDE = 128

# disk radius for user-style iris dots, defined at a 512px image and scaled
# proportionally for other sizes
IRIS_RADIUS_AT_512 = 10.0

# eye boxes are normalized to this height before the fixed-radius median
# circle is applied
EYE_BOX_NORM = 64.0


class NoPupilError(ValueError):
    """Raised when a search box carries no gradient signal at all."""


@dataclass(frozen=True)
class ColorMap:
    """Heavily smoothed 3-channel image at the fixed working resolution."""

    image: RasterImage

    def __post_init__(self):
        img = self.image
        if img.channels != 3:
            raise ValueError(f"color map must have 3 channels, got {img.channels}")
        if (img.height, img.width) != (MAP_SIDE, MAP_SIDE):
            raise ValueError(
                f"color map must be {MAP_SIDE}x{MAP_SIDE}, got {img.width}x{img.height}"
            )

    def at(self, x: int, y: int) -> np.ndarray:
        return self.image.data[y, x].copy()


@dataclass(frozen=True)
class ColorLayer:
    """Sparse color constraints: rgb values plus a validity mask.

    rgb is exactly zero wherever valid is false; that pairing is what the
    model input encodes, so it is enforced at construction.
    """

    rgb: np.ndarray  # (H, W, 3) float64 in [0,1]
    valid: BinaryMask

    def __post_init__(self):
        rgb = np.ascontiguousarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"rgb must be (H, W, 3), got shape {rgb.shape}")
        if rgb.shape[:2] != self.valid.bits.shape:
            raise ValueError(
                f"rgb {rgb.shape[:2]} and valid {self.valid.bits.shape} sizes differ"
            )
        if not np.isfinite(rgb).all():
            raise ValueError("rgb contains non-finite samples")
        if rgb.min() < 0.0 or rgb.max() > 1.0:
            raise ValueError("rgb samples must lie in [0,1]")
        if np.any(rgb[~self.valid.bits] != 0.0):
            raise ValueError("rgb must be zero outside the valid mask")
        object.__setattr__(self, "rgb", rgb)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def is_empty(self) -> bool:
        return not self.valid.bits.any()

    @classmethod
    def empty(cls, width: int, height: int) -> "ColorLayer":
        return cls(np.zeros((height, width, 3)), BinaryMask(np.zeros((height, width), bool)))

    def scaled_to(self, width: int, height: int) -> "ColorLayer":
        """Nearest-neighbor resample keeping colors exact and validity binary."""
        if (width, height) == (self.width, self.height):
            return self
        ys = np.clip(
            np.floor((np.arange(height) + 0.5) * self.height / height), 0, self.height - 1
        ).astype(int)
        xs = np.clip(
            np.floor((np.arange(width) + 0.5) * self.width / width), 0, self.width - 1
        ).astype(int)
        return ColorLayer(
            self.rgb[np.ix_(ys, xs)], BinaryMask(self.valid.bits[np.ix_(ys, xs)])
        )


@dataclass(frozen=True)
class IrisEstimate:
    center: tuple  # (x, y) pixels
    color: np.ndarray  # RGB triple
    radius: float  # px of the median sampling circle

    def __post_init__(self):
        c = np.asarray(self.color, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "color", c)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


def build_color_map(
    img: RasterImage, labels: np.ndarray | None = None, iterations: int = 40
) -> ColorMap:
    """Downsample to the working resolution, median-clean, then flatten.

    A 3x3 median kills salt noise, and repeated bilateral passes (range sigma
    25 on the 0-255 scale, domain sigma 7) drive each region toward a nearly
    constant color while keeping region boundaries. With a label raster,
    the labeled regions (1=hair, 2=lips, 3=teeth, 4=brows) are replaced
    outright by their per-channel median map color.
    """
    rgb = img.to_rgb()
    small = resize(rgb, MAP_SIDE, MAP_SIDE)
    small = median_filter(small, 3)
    small = bilateral_filter(small, sigma_range=25.0, sigma_domain=7.0, iterations=iterations)
    data = small.data.copy()
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (img.height, img.width):
            raise ValueError(
                f"label raster {labels.shape} does not match image "
                f"{(img.height, img.width)}"
            )
        ys = np.clip(
            np.floor((np.arange(MAP_SIDE) + 0.5) * img.height / MAP_SIDE), 0, img.height - 1
        ).astype(int)
        xs = np.clip(
            np.floor((np.arange(MAP_SIDE) + 0.5) * img.width / MAP_SIDE), 0, img.width - 1
        ).astype(int)
        small_labels = labels[np.ix_(ys, xs)]
        for region in (1, 2, 3, 4):
            sel = small_labels == region
            if sel.any():
                data[sel] = np.median(data[sel], axis=0)
    return ColorMap(RasterImage(data))


def _unit_gradients(gray: np.ndarray):
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ok = mag > 1e-12
    ux = np.where(ok, gx / np.where(ok, mag, 1.0), 0.0)
    uy = np.where(ok, gy / np.where(ok, mag, 1.0), 0.0)
    return ux, uy


def locate_pupil(img: RasterImage, search_box: tuple) -> IrisEstimate:
    """Find the pupil inside search_box = (x0, y0, x1, y1), end-exclusive.

    Scores every candidate center c by mean_i (d_i . g_i)^2 where d_i is the
    unit displacement from c to pixel i and g_i the unit image gradient at i;
    gradient-free pixels contribute zero. Radial gradient fields peak at
    their center regardless of polarity because of the squaring.
    """
    x0, y0, x1, y1 = (int(v) for v in search_box)
    if not (0 <= x0 < x1 <= img.width and 0 <= y0 < y1 <= img.height):
        raise ValueError(f"search box {search_box} outside image {img.width}x{img.height}")
    if x1 - x0 < 8 or y1 - y0 < 8:
        raise ValueError(f"search box must be at least 8x8, got {search_box}")

    gray = img.to_gray().data[y0:y1, x0:x1, 0]
    ux, uy = _unit_gradients(gray)
    if not (np.abs(ux) + np.abs(uy)).any():
        raise NoPupilError(f"no gradients inside search box {search_box}")

    h, w = gray.shape
    yy, xx = np.mgrid[0:h, 0:w]
    px = xx.ravel().astype(np.float64)
    py = yy.ravel().astype(np.float64)
    gx = ux.ravel()
    gy = uy.ravel()
    n = len(px)

    best = -1.0
    best_idx = 0
    chunk = 256
    for start in range(0, n, chunk):
        cx = px[start : start + chunk, None]
        cy = py[start : start + chunk, None]
        dx = px[None, :] - cx
        dy = py[None, :] - cy
        dist = np.sqrt(dx * dx + dy * dy)
        ok = dist > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, dist, 1.0), 0.0)
        dot = (dx * gx[None, :] + dy * gy[None, :]) * inv
        score = (dot * dot).mean(axis=1)
        i = int(np.argmax(score))
        if score[i] > best:
            best = float(score[i])
            best_idx = start + i
    if best <= 0.0:
        raise NoPupilError(f"flat objective inside search box {search_box}")

    center = (x0 + float(px[best_idx]), y0 + float(py[best_idx]))
    radius = IRIS_RADIUS_AT_512 * (y1 - y0) / EYE_BOX_NORM
    radius = max(radius, 1.0)
    cyi, cxi = int(round(center[1])), int(round(center[0]))
    ys, xs = np.mgrid[
        max(0, cyi - int(np.ceil(radius))) : min(img.height, cyi + int(np.ceil(radius)) + 1),
        max(0, cxi - int(np.ceil(radius))) : min(img.width, cxi + int(np.ceil(radius)) + 1),
    ]
    inside = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius * radius
    pixels = img.to_rgb().data[ys[inside], xs[inside]]
    if len(pixels) == 0:
        pixels = img.to_rgb().data[cyi : cyi + 1, cxi : cxi + 1].reshape(1, 3)
    color = np.median(pixels, axis=0)
    return IrisEstimate(center=center, color=color, radius=radius)


def _fill_disk(rgb: np.ndarray, valid: np.ndarray, cx: float, cy: float, radius: float, color):
    h, w = valid.shape
    r = int(np.ceil(radius))
    ylo, yhi = max(0, int(round(cy)) - r), min(h, int(round(cy)) + r + 1)
    xlo, xhi = max(0, int(round(cx)) - r), min(w, int(round(cx)) + r + 1)
    if ylo >= yhi or xlo >= xhi:
        return
    ys, xs = np.mgrid[ylo:yhi, xlo:xhi]
    inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
    rgb[ys[inside], xs[inside]] = color
    valid[ys[inside], xs[inside]] = True


def synth_strokes(
    color_map: ColorMap,
    rng_seed: int,
    stroke_count_range: tuple = (0, 8),
    thickness_range: tuple = (2.0, 8.0),
    deviation_threshold: float = 0.1,
    length_range: tuple = (8.0, 64.0),
    jitter: float = 2.0,
) -> ColorLayer:
    """Random strokes at map scale, each painted in its start pixel's color.

    A stroke walks in 1px steps from its start toward a sampled endpoint with
    orthogonal jitter. It stops early the moment the map color under the
    walk deviates from the start color by more than deviation_threshold in
    any channel, and also when the walk leaves the map. Deterministic per
    seed: the draw order is count, then per stroke start/angle/length/
    thickness followed by all jitter offsets.
    """
    if stroke_count_range[0] > stroke_count_range[1] or stroke_count_range[0] < 0:
        raise ValueError(f"bad stroke count range {stroke_count_range}")
    if thickness_range[0] > thickness_range[1] or thickness_range[0] <= 0:
        raise ValueError(f"bad thickness range {thickness_range}")
    if deviation_threshold <= 0:
        raise ValueError(f"deviation threshold must be positive, got {deviation_threshold}")

    rng = np.random.default_rng(rng_seed)
    side = MAP_SIDE
    rgb = np.zeros((side, side, 3))
    valid = np.zeros((side, side), dtype=bool)
    count = int(rng.integers(stroke_count_range[0], stroke_count_range[1] + 1))
    for _ in range(count):
        start = rng.uniform(0.0, side - 1.0, size=2)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        length = rng.uniform(*length_range)
        thickness = rng.uniform(*thickness_range)
        steps = int(np.ceil(length))
        offsets = rng.uniform(-jitter, jitter, size=steps)
        direction = np.array([np.cos(angle), np.sin(angle)])
        orth = np.array([-direction[1], direction[0]])

        sx, sy = int(round(start[0])), int(round(start[1]))
        color = color_map.at(sx, sy)
        _fill_disk(rgb, valid, start[0], start[1], thickness / 2.0, color)
        for k in range(1, steps + 1):
            p = start + k * direction + offsets[k - 1] * orth
            ix, iy = int(round(p[0])), int(round(p[1]))
            if not (0 <= ix < side and 0 <= iy < side):
                break
            if np.max(np.abs(color_map.at(ix, iy) - color)) > deviation_threshold:
                break
            _fill_disk(rgb, valid, p[0], p[1], thickness / 2.0, color)
    return ColorLayer(rgb, BinaryMask(valid))


def iris_draw_radius(width: int, height: int) -> float:
    """Iris disk radius for a layer of this size: 10px at 512, proportional."""
    return IRIS_RADIUS_AT_512 * min(width, height) / 512.0


def draw_iris(layer: ColorLayer, iris: IrisEstimate) -> ColorLayer:
    """Stamp a filled iris-colored disk; center is in layer coordinates."""
    cx, cy = iris.center
    if not (0 <= cx < layer.width and 0 <= cy < layer.height):
        raise ValueError(f"iris center {iris.center} outside {layer.width}x{layer.height}")
    rgb = layer.rgb.copy()
    valid = layer.valid.bits.copy()
    _fill_disk(rgb, valid, cx, cy, iris_draw_radius(layer.width, layer.height), iris.color)
    return ColorLayer(rgb, BinaryMask(valid))


def maybe_drop_color(layer: ColorLayer, rng_seed: int) -> ColorLayer:
    """Half the time (seeded), replace the layer with an empty one."""
    rng = np.random.default_rng(rng_seed)
    if rng.random() < 0.5:
        return ColorLayer.empty(layer.width, layer.height)
    return layer
