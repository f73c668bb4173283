"""Inference-time editing: user strokes to 9-channel input, generate, paste.

The channel stack matches training exactly: [masked rgb x3, sketch, color
x3, mask, noise]. The user mask is cleaned by morphological closing first
(closing is extensive, so nothing the user marked is ever dropped), all
conditioning is restricted to the cleaned mask, and the final composite
copies original pixels outside it untouched, which is what makes edits
out-of-mask bit-exact regardless of checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rngs
from .autodiff import Tensor, checkpoint_hash, load_checkpoint, no_grad
from .colordomain import MAP_SIDE, build_color_map
from .config import Config
from .maskgen import normalize_user_mask
from .model import GeneratorConfig, generator_forward, generator_param_shapes
from .raster import BinaryMask, RasterImage, composite
from .sketch import SketchConfig, make_sketch, rasterize_polylines


def _check_points(points: np.ndarray, width: int, height: int, what: str) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValueError(f"{what}: points must be (N,2), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{what}: non-finite coordinates")
    if (pts[:, 0] < 0).any() or (pts[:, 0] > width - 1).any() or (pts[:, 1] < 0).any() or (
        pts[:, 1] > height - 1
    ).any():
        raise ValueError(f"{what}: coordinates outside {width}x{height} image")
    return pts


def _check_rgb(rgb, what: str) -> np.ndarray:
    c = np.asarray(rgb, dtype=np.float64).reshape(-1)
    if c.shape != (3,) or not np.isfinite(c).all() or c.min() < 0 or c.max() > 1:
        raise ValueError(f"{what}: color must be 3 floats in [0,1]")
    return c


@dataclass(frozen=True)
class PenStroke:
    points: np.ndarray  # (N,2) float (x,y)
    erase: bool = False


@dataclass(frozen=True)
class ColorStroke:
    points: np.ndarray
    rgb: tuple
    thickness: float = 4.0


@dataclass(frozen=True)
class IrisCircle:
    center: tuple  # (x, y)
    radius: float
    rgb: tuple


@dataclass(frozen=True)
class EditRequest:
    image: RasterImage
    mask: BinaryMask
    pen_strokes: tuple = ()
    color_strokes: tuple = ()
    iris_circles: tuple = ()
    noise_seed: int = 0

    def __post_init__(self):
        w, h = self.image.width, self.image.height
        if self.mask.width != w or self.mask.height != h:
            raise ValueError(f"mask {self.mask.width}x{self.mask.height} vs image {w}x{h}")
        self.mask.require_nonempty()
        for s in self.pen_strokes:
            _check_points(s.points, w, h, "pen stroke")
        for s in self.color_strokes:
            _check_points(s.points, w, h, "color stroke")
            _check_rgb(s.rgb, "color stroke")
            if not (s.thickness > 0):
                raise ValueError(f"color stroke thickness must be > 0, got {s.thickness}")
        for c in self.iris_circles:
            cx, cy = (float(v) for v in c.center)
            if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
                raise ValueError(f"iris center {c.center} outside {w}x{h} image")
            if not (c.radius > 0):
                raise ValueError(f"iris radius must be > 0, got {c.radius}")
            _check_rgb(c.rgb, "iris circle")

    def effective_mask(self) -> BinaryMask:
        return normalize_user_mask(self.mask)


def _stamp_disks(bits: np.ndarray, pts: np.ndarray, radius: float):
    h, w = bits.shape
    r = int(np.ceil(radius))
    for x, y in pts:
        xi, yi = int(round(x)), int(round(y))
        x0, x1 = max(xi - r, 0), min(xi + r + 1, w)
        y0, y1 = max(yi - r, 0), min(yi + r + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        bits[y0:y1, x0:x1] |= (xs - x) ** 2 + (ys - y) ** 2 <= radius * radius


def _densify(pts: np.ndarray, max_step=0.5) -> np.ndarray:
    if len(pts) == 1:
        return pts
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(int(np.ceil(np.linalg.norm(b - a) / max_step)), 1)
        t = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a + t * (b - a))
    return np.vstack(out)


def _stack(
    image: RasterImage, mask: np.ndarray, sketch: np.ndarray, color: np.ndarray, valid: np.ndarray, noise_seed: int
) -> np.ndarray:
    """Assemble the (9,S,S) float32 generator input, restricting the
    conditioning to the mask and zeroing the rgb channels inside it."""
    h, w = mask.shape
    sketch = sketch & mask
    valid = valid & mask
    color = np.where(valid[:, :, None], color, 0.0)
    rgb = image.to_rgb().data
    noise = rngs.rng_for(noise_seed, rngs.EDIT_NOISE).standard_normal((h, w))
    out = np.empty((9, h, w), dtype=np.float32)
    out[0:3] = np.where(mask[:, :, None], 0.0, rgb).transpose(2, 0, 1)
    out[3] = sketch
    out[4:7] = color.transpose(2, 0, 1)
    out[7] = mask
    out[8] = noise
    return out


def rasterize_user_input(req: EditRequest, config: Config) -> np.ndarray:
    """Build the generator input from user strokes.

    Pen strokes apply in order, erase clearing exactly the bits an
    identical draw stroke would set. Color strokes apply last-writer-wins,
    iris disks after them.
    """
    w, h = req.image.width, req.image.height
    stroke_width = float(config.get_float("sketch.stroke_width"))

    sketch = np.zeros((h, w), dtype=bool)
    for s in req.pen_strokes:
        pts = np.asarray(s.points, dtype=np.float64)
        stamp = rasterize_polylines([pts], w, h, stroke_width=stroke_width).bits
        if s.erase:
            sketch &= ~stamp
        else:
            sketch |= stamp

    color = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    for s in req.color_strokes:
        stamp = np.zeros((h, w), dtype=bool)
        _stamp_disks(stamp, _densify(np.asarray(s.points, dtype=np.float64)), s.thickness / 2.0)
        color[stamp] = _check_rgb(s.rgb, "color stroke")
        valid |= stamp
    for c in req.iris_circles:
        stamp = np.zeros((h, w), dtype=bool)
        cx, cy = (float(v) for v in c.center)
        _stamp_disks(stamp, np.array([[cx, cy]]), float(c.radius))
        color[stamp] = _check_rgb(c.rgb, "iris circle")
        valid |= stamp

    return _stack(req.image, req.effective_mask().bits, sketch, color, valid, req.noise_seed)


@dataclass(frozen=True)
class LoadedModel:
    """A checkpoint bound to its generator config, ready for inference."""

    gen_cfg: GeneratorConfig
    params: dict
    content_hash: str


def load_model(path, config: Config) -> LoadedModel:
    gen_cfg = GeneratorConfig.from_config(config)
    _, arrays = load_checkpoint(path)
    params = {}
    for name, shape in generator_param_shapes(gen_cfg).items():
        if name not in arrays:
            raise ValueError(f"{path}: checkpoint is missing {name}; config mismatch?")
        if arrays[name].shape != shape:
            raise ValueError(
                f"{path}: {name} has shape {arrays[name].shape}, config wants {shape}"
            )
        params[name] = Tensor(arrays[name].copy(), name=name)
    return LoadedModel(gen_cfg=gen_cfg, params=params, content_hash=checkpoint_hash(path))


forward_calls = 0  # test hook: generator forwards performed by this module


def _generate(model: LoadedModel, stack: np.ndarray, original: RasterImage, mask: BinaryMask) -> RasterImage:
    """Shared tail of edit and copy_paste: forward, clamp, composite."""
    global forward_calls
    side = model.gen_cfg.side
    if stack.shape != (9, side, side):
        raise ValueError(f"input stack {stack.shape} does not match model side {side}")
    forward_calls += 1
    with no_grad():
        raw = generator_forward(model.gen_cfg, model.params, Tensor(stack[None]))
    patch = np.clip(raw.data[0].transpose(1, 2, 0).astype(np.float64), 0.0, 1.0)
    return composite(original.to_rgb(), RasterImage(patch), mask)


def edit(req: EditRequest, model: LoadedModel, config: Config) -> RasterImage:
    """Run the generator on the user's conditioning and paste the result.

    Deterministic in (req, checkpoint); out-of-mask pixels are returned
    bit-exact from the original.
    """
    side = model.gen_cfg.side
    if req.image.width != side or req.image.height != side:
        raise ValueError(f"image {req.image.width}x{req.image.height}, model wants {side}x{side}")
    stack = rasterize_user_input(req, config)
    return _generate(model, stack, req.image, req.effective_mask())


def edit_from_layers(
    image: RasterImage,
    mask: BinaryMask,
    model: LoadedModel,
    *,
    sketch: np.ndarray | None = None,
    color: np.ndarray | None = None,
    valid: np.ndarray | None = None,
    noise_seed: int = 0,
) -> RasterImage:
    """Edit with prerasterized conditioning layers instead of strokes.

    `sketch` and `valid` are boolean rasters, `color` an (H,W,3) float
    image; omitted layers default to empty, giving pure completion.
    """
    side = model.gen_cfg.side
    if image.width != side or image.height != side:
        raise ValueError(f"image {image.width}x{image.height}, model wants {side}x{side}")
    if mask.width != image.width or mask.height != image.height:
        raise ValueError(f"mask {mask.width}x{mask.height} vs image {image.width}x{image.height}")
    mask.require_nonempty()
    h, w = image.height, image.width
    if sketch is None:
        sketch = np.zeros((h, w), dtype=bool)
    if color is None:
        color = np.zeros((h, w, 3))
    if valid is None:
        valid = np.zeros((h, w), dtype=bool)
    for name, layer, shape in (("sketch", sketch, (h, w)), ("valid", valid, (h, w)), ("color", color, (h, w, 3))):
        if layer.shape != shape:
            raise ValueError(f"{name} layer has shape {layer.shape}, want {shape}")
    eff = normalize_user_mask(mask)
    stack = _stack(image, eff.bits, sketch.astype(bool), np.asarray(color, dtype=np.float64), valid.astype(bool), noise_seed)
    return _generate(model, stack, image, eff)


@dataclass(frozen=True)
class CopyPasteRequest:
    source: RasterImage
    source_mask: BinaryMask
    target: RasterImage
    offset: tuple = (0, 0)  # (dx, dy) px
    noise_seed: int = 0

    def __post_init__(self):
        if self.source_mask.width != self.source.width or self.source_mask.height != self.source.height:
            raise ValueError("source mask does not match source image size")
        self.source_mask.require_nonempty()
        dx, dy = (int(v) for v in self.offset)
        ys, xs = np.nonzero(self.source_mask.bits)
        if (
            xs.min() + dx < 0
            or xs.max() + dx >= self.target.width
            or ys.min() + dy < 0
            or ys.max() + dy >= self.target.height
        ):
            raise ValueError(
                f"source region translated by {self.offset} falls outside the "
                f"{self.target.width}x{self.target.height} target"
            )
        object.__setattr__(self, "offset", (dx, dy))


def _translate_bits(bits: np.ndarray, dx: int, dy: int, width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    ys, xs = np.nonzero(bits)
    out[ys + dy, xs + dx] = True
    return out

COPY_PASTE_STAMP_RADIUS = 1.5  # px; disk stamped per sampled sketch point


def copy_paste_conditioning(req: CopyPasteRequest, config: Config) -> np.ndarray:
    """The (9,S,S) input a copy-paste request turns into.

    The sketch domain travels verbatim (bits translated by the offset); the
    color channels are synthesized by sampling the source's color map at
    each source sketch point and stamping small disks at the translated
    position, so the pasted region keeps the source's palette without
    copying raw pixels.
    """
    dx, dy = req.offset
    w, h = req.target.width, req.target.height

    mask = _translate_bits(req.source_mask.bits, dx, dy, w, h)
    sketch_src = make_sketch(req.source, SketchConfig.from_config(config)).bits & req.source_mask.bits
    sketch = _translate_bits(sketch_src, dx, dy, w, h)

    color = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    if sketch_src.any():
        cmap = build_color_map(req.source, iterations=config.get_int("color.bilateral_iters"))
        scale = MAP_SIDE / req.source.width
        ys, xs = np.nonzero(sketch_src)
        for x, y in zip(xs, ys):
            mx = min(int(round(x * scale)), MAP_SIDE - 1)
            my = min(int(round(y * scale)), MAP_SIDE - 1)
            stamp = np.zeros((h, w), dtype=bool)
            _stamp_disks(stamp, np.array([[x + dx, y + dy]], dtype=np.float64), COPY_PASTE_STAMP_RADIUS)
            color[stamp] = cmap.at(mx, my)
            valid |= stamp
    return _stack(req.target, mask, sketch, color, valid, req.noise_seed)


def copy_paste(req: CopyPasteRequest, model: LoadedModel, config: Config) -> RasterImage:
    """Carry a source region's sketch into the target and regenerate there."""
    side = model.gen_cfg.side
    for name, img in (("source", req.source), ("target", req.target)):
        if img.width != side or img.height != side:
            raise ValueError(f"{name} is {img.width}x{img.height}, model wants {side}x{side}")
    stack = copy_paste_conditioning(req, config)
    dx, dy = req.offset
    mask = BinaryMask(_translate_bits(req.source_mask.bits, dx, dy, req.target.width, req.target.height))
    return _generate(model, stack, req.target, mask)
