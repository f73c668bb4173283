"""Sample assembly and serialization: aligned faces in, 9-channel tensors out.

Channel layout of every training input, fixed and validated at construction:
    0-2  masked RGB (ground truth with the edit region zeroed)
    3    sketch (binary strokes)
    4-6  color strokes RGB
    7    mask
    8    noise
Conditioning (sketch, color) is restricted to the mask interior unless the
full-frame ablation flag is set. Shards store raw little-endian float32, so
round-trips preserve exact bit patterns.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import rngs
from .colordomain import (
    MAP_SIDE,
    ColorLayer,
    ColorMap,
    IrisEstimate,
    NoPupilError,
    build_color_map,
    draw_iris,
    locate_pupil,
    maybe_drop_color,
    synth_strokes,
)
from .config import Config
from .maskgen import MaskSpec, rasterize_spec, sample_mask
from .raster import RasterImage
from .sketch import SketchConfig, make_sketch

SHARD_MAGIC = b"FSDS"
SHARD_VERSION = 1

# canonical eye positions after alignment, as fractions of the output side:
# eyes level on the horizontal midline, a quarter of the side apart
EYE_LEFT_FRAC = (0.375, 0.5)
EYE_RIGHT_FRAC = (0.625, 0.5)


class ShardFormatError(ValueError):
    """Malformed shard file; the message names the failing byte offset."""


@dataclass(frozen=True)
class EyeAnnotation:
    file: str
    left: tuple  # (x, y) px in the source image
    right: tuple

    def __post_init__(self):
        lx, ly = (float(v) for v in self.left)
        rx, ry = (float(v) for v in self.right)
        if (lx, ly) == (rx, ry):
            raise ValueError(f"{self.file}: eye positions coincide at ({lx}, {ly})")
        object.__setattr__(self, "left", (lx, ly))
        object.__setattr__(self, "right", (rx, ry))


def read_annotations(path) -> list:
    """Parse `file,lx,ly,rx,ry` lines; a leading header row is skipped."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            if lineno == 1 and parts[0] == "file":
                continue
            try:
                lx, ly, rx, ry = (float(v) for v in parts[1:])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: non-numeric coordinate") from e
            out.append(EyeAnnotation(parts[0], (lx, ly), (rx, ry)))
    return out


def align_and_crop(img: RasterImage, ann: EyeAnnotation, out_size: int) -> RasterImage:
    """Similarity-warp so the eyes land on their canonical positions.

    The unique rotation+scale+translation taking the annotated eye segment
    onto the canonical horizontal segment is applied by inverse warping with
    bilinear sampling; samples falling outside the source are filled with
    the source mean color.
    """
    if not (0 <= ann.left[0] < img.width and 0 <= ann.left[1] < img.height):
        raise ValueError(f"{ann.file}: left eye {ann.left} outside source image")
    if not (0 <= ann.right[0] < img.width and 0 <= ann.right[1] < img.height):
        raise ValueError(f"{ann.file}: right eye {ann.right} outside source image")
    a = complex(*ann.left)
    b = complex(*ann.right)
    if abs(b - a) < 1e-9:
        raise ValueError(f"{ann.file}: eyes coincide, alignment undefined")
    target_l = complex(EYE_LEFT_FRAC[0] * out_size, EYE_LEFT_FRAC[1] * out_size)
    target_r = complex(EYE_RIGHT_FRAC[0] * out_size, EYE_RIGHT_FRAC[1] * out_size)
    w = (target_r - target_l) / (b - a)

    src = img.to_rgb().data
    h, wid = src.shape[:2]
    yy, xx = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    z = a + (xx + 1j * yy - target_l) / w
    sx, sy = z.real, z.imag

    valid = (sx >= 0) & (sx <= wid - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = np.clip(np.floor(sx), 0, wid - 2).astype(int)
    y0 = np.clip(np.floor(sy), 0, h - 2).astype(int)
    fx = np.clip(sx - x0, 0.0, 1.0)[:, :, None]
    fy = np.clip(sy - y0, 0.0, 1.0)[:, :, None]
    p00 = src[y0, x0]
    p01 = src[y0, x0 + 1]
    p10 = src[y0 + 1, x0]
    p11 = src[y0 + 1, x0 + 1]
    out = (1 - fy) * ((1 - fx) * p00 + fx * p01) + fy * ((1 - fx) * p10 + fx * p11)
    fill = src.reshape(-1, 3).mean(axis=0)
    out[~valid] = fill
    return RasterImage(np.clip(out, 0.0, 1.0))


@dataclass(frozen=True)
class TrainingSample:
    """One (target, 9-channel input, mask geometry) record, all float32."""

    target: np.ndarray  # (3, S, S) float32 in [0,1]
    input: np.ndarray  # (9, S, S) float32
    mask_spec: MaskSpec

    def __post_init__(self):
        t = np.ascontiguousarray(self.target, dtype=np.float32)
        x = np.ascontiguousarray(self.input, dtype=np.float32)
        if t.ndim != 3 or t.shape[0] != 3 or t.shape[1] != t.shape[2]:
            raise ValueError(f"target must be (3, S, S), got {t.shape}")
        if x.shape != (9, t.shape[1], t.shape[2]):
            raise ValueError(f"input must be (9, {t.shape[1]}, {t.shape[2]}), got {x.shape}")
        if not np.isfinite(t).all() or not np.isfinite(x).all():
            raise ValueError("sample contains non-finite values")
        if t.min() < 0.0 or t.max() > 1.0:
            raise ValueError("target values must lie in [0,1]")
        mask = x[7]
        if not np.isin(mask, (np.float32(0.0), np.float32(1.0))).all():
            raise ValueError("mask channel must be binary")
        if np.abs(x[0:3][:, mask > 0]).max(initial=0.0) != 0.0:
            raise ValueError("masked RGB channels must be zero inside the mask")
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "input", x)

    @property
    def side(self) -> int:
        return self.target.shape[1]

    @property
    def mask_bits(self) -> np.ndarray:
        return self.input[7] > 0.5


def eye_search_boxes(side: int) -> tuple:
    """Square search boxes around the canonical eye positions."""
    half = max(4, int(round(0.075 * side)))
    boxes = []
    for fx, fy in (EYE_LEFT_FRAC, EYE_RIGHT_FRAC):
        cx, cy = fx * side, fy * side
        x0 = int(round(cx)) - half
        y0 = int(round(cy)) - half
        x0 = min(max(x0, 0), side - 2 * half)
        y0 = min(max(y0, 0), side - 2 * half)
        boxes.append((x0, y0, x0 + 2 * half, y0 + 2 * half))
    return tuple(boxes)


def _synth_color_layer(
    img: RasterImage,
    rng_seed: int,
    config: Config,
    labels: np.ndarray | None,
    color_map: ColorMap | None,
) -> ColorLayer:
    cmap = color_map
    if cmap is None:
        cmap = build_color_map(img, labels, iterations=config.get_int("color.bilateral_iters"))
    layer = synth_strokes(
        cmap,
        rngs.subseed(rng_seed, rngs.STROKES),
        stroke_count_range=(0, config.get_int("color.strokes.max")),
        deviation_threshold=config.get_float("color.deviation_threshold"),
    )
    if config.get_bool("color.iris"):
        scale = MAP_SIDE / img.width
        for box in eye_search_boxes(img.width):
            try:
                est = locate_pupil(img, box)
            except NoPupilError:
                continue
            center = (est.center[0] * scale, est.center[1] * scale)
            cx, cy = center
            if 0 <= cx < MAP_SIDE and 0 <= cy < MAP_SIDE:
                layer = draw_iris(
                    layer, IrisEstimate(center=center, color=est.color, radius=est.radius)
                )
    return maybe_drop_color(layer, rngs.subseed(rng_seed, rngs.COLOR_DROP))


def assemble_sample(
    img: RasterImage,
    rng_seed: int,
    config: Config,
    labels: np.ndarray | None = None,
    *,
    sketch_bits: np.ndarray | None = None,
    color_map: ColorMap | None = None,
) -> TrainingSample:
    """Forge the full conditional record for one aligned image.

    sketch_bits and color_map are pure functions of the image; callers
    forging many seeds from the same image pass them in precomputed so the
    filter stack runs once per image instead of once per sample.
    """
    side = config.get_int("size")
    if img.width != side or img.height != side:
        raise ValueError(f"image must be {side}x{side} per config, got {img.width}x{img.height}")
    rgb = img.to_rgb().data

    spec, _ = sample_mask(
        side,
        side,
        rngs.subseed(rng_seed, rngs.MASK),
        axis_aligned_only=config.get_bool("mask.axis_aligned"),
        min_frac=config.get_float("mask.min_frac"),
        max_frac=config.get_float("mask.max_frac"),
    )
    # store at shard precision and rasterize from the stored geometry so a
    # round-tripped spec regenerates the identical mask
    spec = MaskSpec.from_floats(spec.to_floats().astype(np.float32))
    mask = rasterize_spec(spec, side, side).bits

    full_frame = config.get_bool("model.full_frame_conditioning")
    sketch = sketch_bits
    if sketch is None:
        sketch = make_sketch(img, SketchConfig.from_config(config)).bits
    if sketch.shape != (side, side):
        raise ValueError(f"sketch_bits shape {sketch.shape} does not match side {side}")
    if not full_frame:
        sketch = sketch & mask

    color = np.zeros((side, side, 3))
    if config.get_bool("color.enable"):
        layer = _synth_color_layer(img, rng_seed, config, labels, color_map).scaled_to(side, side)
        cvalid = layer.valid.bits if full_frame else (layer.valid.bits & mask)
        color = np.where(cvalid[:, :, None], layer.rgb, 0.0)

    dist = config.get_str("noise.dist")
    if dist != "normal":
        raise ValueError(f"unsupported noise distribution: {dist!r}")
    noise = rngs.rng_for(rng_seed, rngs.NOISE).standard_normal((side, side))

    inp = np.empty((9, side, side), dtype=np.float32)
    inp[0:3] = np.where(mask[:, :, None], 0.0, rgb).transpose(2, 0, 1)
    inp[3] = sketch
    inp[4:7] = color.transpose(2, 0, 1)
    inp[7] = mask
    inp[8] = noise
    return TrainingSample(rgb.transpose(2, 0, 1).astype(np.float32), inp, spec)


def write_shard(samples: list, path):
    """Serialize samples; written to a temp file then renamed into place."""
    if not samples:
        raise ValueError("refusing to write an empty shard")
    side = samples[0].side
    for s in samples:
        if s.side != side:
            raise ValueError(f"mixed sample sides in shard: {side} vs {s.side}")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<IIH", SHARD_VERSION, len(samples), side))
        for s in samples:
            fh.write(np.ascontiguousarray(s.target, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(s.input, dtype="<f4").tobytes())
            fh.write(s.mask_spec.to_floats().astype("<f4").tobytes())
    os.replace(tmp, path)


def read_shard(path) -> list:
    """Parse one shard; any structural defect raises with its byte offset."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != SHARD_MAGIC:
        raise ShardFormatError(f"{path}: bad magic at byte 0")
    if len(data) < 14:
        raise ShardFormatError(f"{path}: truncated header at byte {len(data)}")
    version, count, side = struct.unpack_from("<IIH", data, 4)
    if version != SHARD_VERSION:
        raise ShardFormatError(f"{path}: unsupported version {version} at byte 4")
    if side < 1:
        raise ShardFormatError(f"{path}: invalid side {side} at byte 12")
    offset = 14
    per_plane = side * side * 4
    sample_bytes = 3 * per_plane + 9 * per_plane + 5 * 4
    samples = []
    for i in range(count):
        if len(data) < offset + sample_bytes:
            raise ShardFormatError(
                f"{path}: sample {i} truncated, file ends at byte {len(data)} "
                f"but needs {offset + sample_bytes}"
            )
        target = np.frombuffer(data, dtype="<f4", count=3 * side * side, offset=offset)
        target = target.reshape(3, side, side)
        offset += 3 * per_plane
        inp = np.frombuffer(data, dtype="<f4", count=9 * side * side, offset=offset)
        inp = inp.reshape(9, side, side)
        offset += 9 * per_plane
        spec = MaskSpec.from_floats(np.frombuffer(data, dtype="<f4", count=5, offset=offset))
        offset += 5 * 4
        samples.append(TrainingSample(target.copy(), inp.copy(), spec))
    if offset != len(data):
        raise ShardFormatError(f"{path}: {len(data) - offset} trailing bytes at byte {offset}")
    return samples


@dataclass(frozen=True)
class Batch:
    targets: np.ndarray  # (B, 3, S, S) float32
    inputs: np.ndarray  # (B, 9, S, S) float32
    specs: tuple  # of MaskSpec


class Loader:
    """Deterministic shuffled batcher.

    Each epoch is a seeded permutation of the whole dataset; the tail that
    does not fill a batch is dropped. batch_at(step) is a pure function of
    (samples, seed, step), which is what makes training resumable.
    """

    def __init__(self, samples: list, batch: int, rng_seed: int):
        if batch < 1:
            raise ValueError(f"batch must be >= 1, got {batch}")
        if not samples:
            raise ValueError("empty dataset")
        if len(samples) < batch:
            raise ValueError(f"dataset has {len(samples)} samples, fewer than batch {batch}")
        self._samples = list(samples)
        self.batch = batch
        self.seed = rng_seed
        self.batches_per_epoch = len(samples) // batch

    @classmethod
    def from_shards(cls, paths, batch: int, rng_seed: int) -> "Loader":
        samples = []
        for p in paths:
            samples.extend(read_shard(p))
        return cls(samples, batch, rng_seed)

    def __len__(self):
        return len(self._samples)

    def batch_at(self, step: int) -> Batch:
        epoch, k = divmod(step, self.batches_per_epoch)
        perm = rngs.rng_for(self.seed, rngs.EPOCH_PERM, epoch).permutation(len(self._samples))
        idx = perm[k * self.batch : (k + 1) * self.batch]
        return Batch(
            targets=np.stack([self._samples[i].target for i in idx]),
            inputs=np.stack([self._samples[i].input for i in idx]),
            specs=tuple(self._samples[i].mask_spec for i in idx),
        )

    def __iter__(self):
        step = 0
        while True:
            yield self.batch_at(step)
            step += 1
