"""Completion generator and global+local discriminator pair.

The generator is an encoder-decoder: a stem, three stride-2 downsamplings,
a dilated block (rates 2,4,8,16), three more full-width layers, then three
transposed-conv upsamplings back to full resolution. After every upsampling
the feature map is concatenated with the last encoder layer of the same
spatial size. Channel widths double per downsampling and are capped; the
default table at base 64 / cap 512 gives 23 conv layers, and the desk table
at base 8 / cap 64 keeps the identical topology. Channel-RMS normalization
(lrn) runs after layers 1..14 only; the output layer is linear.

Both discriminator branches are alternating strided/plain 3x3 convs with no
normalization anywhere, ending at 1x1 spatial with feature_dim channels;
the two feature vectors are concatenated into one learned linear scalar.
At side 512 this yields 17 global and 16 local layers.

All convs are 3x3 (the stem and output included); plain layers pad to
preserve size, dilated layers pad by their rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import Config

LRN_EPS = 1e-8


def lrn(a: Tensor) -> Tensor:
    """Divide each value by the RMS over channels at its spatial location."""
    ms = ad.mean(ad.mul(a, a), axis=1, keepdims=True)
    return ad.mul(a, ad.pow_const(ad.add(ms, LRN_EPS), -0.5))


@dataclass(frozen=True)
class GenLayer:
    name: str
    kind: str  # "conv" | "tconv"
    in_ch: int
    out_ch: int
    stride: int = 1
    dilation: int = 1
    lrn: bool = False
    skip_from: int | None = None  # index into the layer-output list, pre-concat
    linear: bool = False


@dataclass(frozen=True)
class GeneratorConfig:
    side: int = 64
    in_channels: int = 9
    base: int = 8
    max_width: int = 64
    downsamples: int = 3
    dilated: int = 4
    skips: bool = True
    noise_channel: bool = True
    lrn_split: int = 14
    leaky_slope: float = 0.2
    channel_table: tuple | None = None  # optional per-layer out-channel override

    def __post_init__(self):
        if self.side % (1 << self.downsamples) != 0:
            raise ValueError(f"side {self.side} not divisible by 2^{self.downsamples}")
        if self.base < 1 or self.max_width < self.base:
            raise ValueError(f"bad widths: base {self.base}, cap {self.max_width}")
        n = self.layer_count
        if not (0 <= self.lrn_split <= n):
            raise ValueError(f"lrn_split {self.lrn_split} outside 0..{n}")
        if self.channel_table is not None and len(self.channel_table) != n:
            raise ValueError(
                f"channel_table has {len(self.channel_table)} entries, need {n}"
            )

    @property
    def layer_count(self) -> int:
        # stem + 2 per downsample + dilated block + 3 mid + 3 per upsample
        # (the last upsample carries one conv instead of two) + output
        return 4 + 5 * self.downsamples + self.dilated

    @classmethod
    def from_config(cls, cfg: Config) -> "GeneratorConfig":
        return cls(
            side=cfg.get_int("size"),
            base=cfg.get_int("model.base_channels"),
            max_width=cfg.get_int("model.max_width"),
            skips=cfg.get_bool("model.skips"),
            noise_channel=cfg.get_bool("model.noise_channel"),
        )


def generator_layers(cfg: GeneratorConfig) -> list:
    """The per-layer table; index i names layer i+1."""
    cap = cfg.max_width
    width = lambda k: min(cfg.base << k, cap)  # noqa: E731
    table = []
    last_at_level = {}  # downsample level -> layer index with that output size

    def push(**kw):
        idx = len(table)
        n = cfg.layer_count
        split = cfg.lrn_split
        table.append(
            GenLayer(name=f"l{idx + 1:02d}", lrn=(idx + 1 <= split and idx + 1 < n), **kw)
        )
        return idx

    prev = cfg.in_channels
    last_at_level[0] = push(kind="conv", in_ch=prev, out_ch=width(0))
    prev = width(0)
    for k in range(1, cfg.downsamples + 1):
        push(kind="conv", in_ch=prev, out_ch=width(k), stride=2)
        prev = width(k)
        last_at_level[k] = push(kind="conv", in_ch=prev, out_ch=width(k))
    for j in range(cfg.dilated):
        push(kind="conv", in_ch=prev, out_ch=prev, dilation=2 << j)
    for _ in range(3):
        push(kind="conv", in_ch=prev, out_ch=prev)
    for k in range(cfg.downsamples - 1, -1, -1):
        push(kind="tconv", in_ch=prev, out_ch=width(k))
        prev = width(k)
        skip = last_at_level[k]
        skip_ch = table[skip].out_ch if cfg.skips else 0
        push(kind="conv", in_ch=prev + skip_ch, out_ch=prev, skip_from=skip if cfg.skips else None)
        if k > 0:
            push(kind="conv", in_ch=prev, out_ch=prev)
    push(kind="conv", in_ch=prev, out_ch=3, linear=True)

    if cfg.channel_table is not None:
        resized = []
        outs = list(cfg.channel_table)
        prev = cfg.in_channels
        for spec, out in zip(table, outs):
            skip_ch = outs[spec.skip_from] if spec.skip_from is not None else 0
            resized.append(
                GenLayer(
                    name=spec.name, kind=spec.kind, in_ch=prev + skip_ch, out_ch=int(out),
                    stride=spec.stride, dilation=spec.dilation, lrn=spec.lrn,
                    skip_from=spec.skip_from, linear=spec.linear,
                )
            )
            prev = int(out)
        table = resized
    assert len(table) == cfg.layer_count
    return table


def generator_param_shapes(cfg: GeneratorConfig) -> dict:
    shapes = {}
    for spec in generator_layers(cfg):
        if spec.kind == "tconv":
            shapes[f"gen/{spec.name}/w"] = (spec.in_ch, spec.out_ch, 3, 3)
        else:
            shapes[f"gen/{spec.name}/w"] = (spec.out_ch, spec.in_ch, 3, 3)
        shapes[f"gen/{spec.name}/b"] = (spec.out_ch,)
    return shapes


def generator_forward(cfg: GeneratorConfig, params: dict, x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels:
        raise ValueError(f"generator input must be (N,{cfg.in_channels},S,S), got {x.data.shape}")
    if not cfg.noise_channel:
        keep = np.ones((1, cfg.in_channels, 1, 1), dtype=x.data.dtype)
        keep[0, -1] = 0.0
        x = ad.mul(x, Tensor(keep))
    feats = []
    for spec in generator_layers(cfg):
        if spec.skip_from is not None:
            x = ad.concat([x, feats[spec.skip_from]], axis=1)
        w = params[f"gen/{spec.name}/w"]
        b = params[f"gen/{spec.name}/b"]
        if spec.kind == "tconv":
            x = ad.conv2d_transpose(x, w, b, stride=2, padding=1, output_padding=1)
        elif spec.stride == 2:
            x = ad.conv2d(x, w, b, stride=2, padding=1)
        else:
            x = ad.conv2d(x, w, b, stride=1, padding=spec.dilation, dilation=spec.dilation)
        if spec.lrn:
            x = lrn(x)
        if not spec.linear:
            x = ad.leaky_relu(x, cfg.leaky_slope)
        feats.append(x)
    return x


@dataclass(frozen=True)
class DiscLayer:
    name: str
    in_ch: int
    out_ch: int
    stride: int


@dataclass(frozen=True)
class DiscriminatorConfig:
    side: int = 64
    in_channels: int = 8
    base: int = 8
    max_width: int = 64
    feature_dim: int = 64
    mask_input: bool = True
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.side < 8 or self.side & (self.side - 1):
            raise ValueError(f"side must be a power of two >= 8, got {self.side}")
        for branch, downs in (("global", self._downs(self.side)), ("local", self._downs(self.side // 2))):
            final = min(self.base << (downs - 1), self.max_width)
            if final != self.feature_dim:
                raise ValueError(
                    f"{branch} branch ends at {final} channels, feature_dim says {self.feature_dim}"
                )

    @staticmethod
    def _downs(side: int) -> int:
        return int(side).bit_length() - 1  # log2 for powers of two

    @property
    def local_side(self) -> int:
        return self.side // 2

    @property
    def global_layer_count(self) -> int:
        return 2 * self._downs(self.side) - 1

    @property
    def local_layer_count(self) -> int:
        return 2 * self._downs(self.local_side)

    @classmethod
    def from_config(cls, cfg: Config) -> "DiscriminatorConfig":
        return cls(
            side=cfg.get_int("size"),
            base=cfg.get_int("model.disc_base_channels"),
            max_width=cfg.get_int("model.max_width"),
            feature_dim=cfg.get_int("model.feature_dim"),
            mask_input=cfg.get_bool("model.mask_to_disc"),
        )


def discriminator_layers(cfg: DiscriminatorConfig, branch: str) -> list:
    """Alternating strided/plain table; global drops the final plain layer."""
    side = cfg.side if branch == "global" else cfg.local_side
    downs = DiscriminatorConfig._downs(side)
    table = []
    prev = cfg.in_channels
    for k in range(downs):
        out = min(cfg.base << k, cfg.max_width)
        table.append(DiscLayer(name=f"l{len(table) + 1:02d}", in_ch=prev, out_ch=out, stride=2))
        prev = out
        if branch == "global" and k == downs - 1:
            break
        table.append(DiscLayer(name=f"l{len(table) + 1:02d}", in_ch=prev, out_ch=out, stride=1))
    return table


def discriminator_param_shapes(cfg: DiscriminatorConfig) -> dict:
    shapes = {}
    for branch in ("global", "local"):
        for spec in discriminator_layers(cfg, branch):
            shapes[f"disc/{branch}/{spec.name}/w"] = (spec.out_ch, spec.in_ch, 3, 3)
            shapes[f"disc/{branch}/{spec.name}/b"] = (spec.out_ch,)
    shapes["disc/fuse/w"] = (2 * cfg.feature_dim, 1)
    shapes["disc/fuse/b"] = (1,)
    return shapes


def _branch_forward(cfg: DiscriminatorConfig, params: dict, branch: str, x: Tensor) -> Tensor:
    for spec in discriminator_layers(cfg, branch):
        w = params[f"disc/{branch}/{spec.name}/w"]
        b = params[f"disc/{branch}/{spec.name}/b"]
        x = ad.conv2d(x, w, b, stride=spec.stride, padding=1)
        x = ad.leaky_relu(x, cfg.leaky_slope)
    n = x.data.shape[0]
    return ad.reshape(x, (n, cfg.feature_dim))


def _check_box(cfg: DiscriminatorConfig, box):
    x0, y0, x1, y1 = (int(v) for v in box)
    if x1 - x0 != cfg.local_side or y1 - y0 != cfg.local_side:
        raise ValueError(f"crop box {box} is not {cfg.local_side}x{cfg.local_side}")
    if x0 < 0 or y0 < 0 or x1 > cfg.side or y1 > cfg.side:
        raise ValueError(f"crop box {box} outside {cfg.side}x{cfg.side} input")
    return x0, y0, x1, y1


def discriminator_forward(cfg: DiscriminatorConfig, params: dict, full: Tensor, crop_box) -> Tensor:
    """Score a batch: global branch sees the full 8-channel tensor, local
    branch the crop_box region; returns one scalar per sample, shape (N,).

    crop_box is either one (x0,y0,x1,y1) for the whole batch or a sequence
    of per-sample boxes (masks land in different places per sample).
    """
    if full.data.ndim != 4 or full.data.shape[1] != cfg.in_channels:
        raise ValueError(f"discriminator input must be (N,{cfg.in_channels},S,S), got {full.data.shape}")
    if full.data.shape[2] != cfg.side or full.data.shape[3] != cfg.side:
        raise ValueError(f"discriminator expects side {cfg.side}, got {full.data.shape}")
    n = full.data.shape[0]
    if not cfg.mask_input:
        keep = np.ones((1, cfg.in_channels, 1, 1), dtype=full.data.dtype)
        keep[0, 7] = 0.0
        full = ad.mul(full, Tensor(keep))
    if len(crop_box) == 4 and not hasattr(crop_box[0], "__len__"):
        x0, y0, x1, y1 = _check_box(cfg, crop_box)
        local_in = full[:, :, y0:y1, x0:x1]
    else:
        boxes = [_check_box(cfg, b) for b in crop_box]
        if len(boxes) != n:
            raise ValueError(f"{len(boxes)} crop boxes for batch of {n}")
        local_in = ad.concat(
            [full[i : i + 1, :, y0:y1, x0:x1] for i, (x0, y0, x1, y1) in enumerate(boxes)],
            axis=0,
        )
    g = _branch_forward(cfg, params, "global", full)
    l = _branch_forward(cfg, params, "local", local_in)
    feats = ad.concat([g, l], axis=1)
    score = ad.add(ad.matmul(feats, params["disc/fuse/w"]), params["disc/fuse/b"])
    return ad.reshape(score, (n,))


def build_params(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, seed: int) -> dict:
    """All trainable tensors, fan-in normal init, biases zero."""
    from . import rngs

    shapes = {}
    shapes.update(generator_param_shapes(gen_cfg))
    shapes.update(discriminator_param_shapes(disc_cfg))
    rng = rngs.rng_for(seed, rngs.PARAM_INIT)
    return ad.init_params(shapes, rng)
