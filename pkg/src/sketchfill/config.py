"""Flat key-value configuration document shared by every CLI command.

Format: one `key = value` per line, `#` starts a comment, keys may be dotted
(`mask.min_frac`). Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

DEFAULTS = {
    # dataset assembly
    "size": "64",
    "seed": "0",
    "noise.dist": "normal",
    # training masks
    "mask.min_frac": "0.25",
    "mask.max_frac": "0.5",
    "mask.axis_aligned": "false",
    # sketch domain
    "sketch.detector": "xdog",
    "sketch.sigma": "1.0",
    "sketch.sigma_k": "1.6",
    "sketch.threshold": "0.35",
    "sketch.max_error": "1.0",
    "sketch.min_bbox_area": "auto",  # 64 px^2 at 512x512, scaled with image area
    "sketch.smooth": "2",
    "sketch.stroke_width": "1",
    "sketch.raw_edges": "false",
    # color domain
    "color.enable": "true",
    "color.drop_prob": "0.5",
    "color.deviation_threshold": "0.1",
    "color.strokes.max": "8",
    "color.bilateral_iters": "40",
    "color.iris": "true",
    # model (desk-scale defaults)
    "model.base_channels": "8",
    "model.max_width": "64",
    "model.disc_base_channels": "8",
    "model.feature_dim": "64",
    "model.skips": "true",
    "model.noise_channel": "true",
    "model.mask_to_disc": "true",
    "model.full_frame_conditioning": "false",
    # training
    "train.lr": "2e-4",
    "train.alpha": "1e-3",
    "train.lambda": "100.0",
    "train.epsilon_drift": "1e-3",
    "train.gan_variant": "wgan_gp",
    "train.n_critic": "1",
    "train.batch": "4",
    "train.checkpoint_every": "500",
}


class Config:
    """Typed view over a flat string-to-string key table with defaults."""

    def __init__(self, values: dict[str, str] | None = None):
        self._values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                if k not in DEFAULTS:
                    raise KeyError(f"unknown config key: {k!r}")
                self._values[k] = v

    @classmethod
    def load(cls, path) -> "Config":
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                k, v = line.split("=", 1)
                values[k.strip()] = v.strip()
        return cls(values)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for k in sorted(self._values):
                fh.write(f"{k} = {self._values[k]}\n")

    def raw(self, key: str) -> str:
        return self._values[key]

    def get_int(self, key: str) -> int:
        return int(self._values[key])

    def get_float(self, key: str) -> float:
        return float(self._values[key])

    def get_bool(self, key: str) -> bool:
        v = self._values[key].lower()
        if v in ("true", "1", "yes", "on"):
            return True
        if v in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: not a boolean: {v!r}")

    def get_str(self, key: str) -> str:
        return self._values[key]

    def with_overrides(self, **overrides) -> "Config":
        values = dict(self._values)
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise KeyError(f"unknown config key: {key!r}")
            values[key] = str(v)
        return Config(values)

    def min_bbox_area(self, side: int) -> float:
        """Prune threshold: 64 px^2 at 512x512, scaled with image area."""
        raw = self._values["sketch.min_bbox_area"]
        if raw == "auto":
            return 64.0 * (side / 512.0) ** 2
        return float(raw)
