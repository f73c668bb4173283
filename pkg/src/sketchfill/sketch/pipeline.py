"""End-to-end sketch extraction: image in, binary stroke layer out."""

from __future__ import annotations

from dataclasses import dataclass

from ..config import Config
from ..raster import RasterImage
from .bezier import (
    SketchLayer,
    fit_splines,
    prune_small,
    rasterize,
    rasterize_polylines,
    smooth_controls,
)
from .edges import detect_edges
from .trace import trace


@dataclass(frozen=True)
class SketchConfig:
    """Knobs for every stage of the sketch pipeline.

    min_bbox_area of None means scale-with-image: 64 px^2 at 512x512,
    proportional to pixel count. raw_edges skips fitting, pruning and
    smoothing entirely and stamps the traced skeleton chains as-is.
    """

    detector: str = "xdog"
    sigma: float = 1.0
    sigma_k: float = 1.6
    threshold: float = 0.35
    max_error: float = 1.0
    min_bbox_area: float | None = None
    smooth: int = 2
    stroke_width: float = 1.0
    raw_edges: bool = False

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")
        if self.max_error <= 0.0:
            raise ValueError(f"max_error must be positive, got {self.max_error}")
        if self.smooth < 0:
            raise ValueError(f"smooth must be >= 0, got {self.smooth}")
        if self.stroke_width < 1.0:
            raise ValueError(f"stroke_width must be >= 1, got {self.stroke_width}")
        if self.min_bbox_area is not None and self.min_bbox_area < 0:
            raise ValueError(f"min_bbox_area must be >= 0, got {self.min_bbox_area}")

    @classmethod
    def from_config(cls, cfg: Config) -> "SketchConfig":
        raw_area = cfg.raw("sketch.min_bbox_area")
        return cls(
            detector=cfg.get_str("sketch.detector"),
            sigma=cfg.get_float("sketch.sigma"),
            sigma_k=cfg.get_float("sketch.sigma_k"),
            threshold=cfg.get_float("sketch.threshold"),
            max_error=cfg.get_float("sketch.max_error"),
            min_bbox_area=None if raw_area == "auto" else float(raw_area),
            smooth=cfg.get_int("sketch.smooth"),
            stroke_width=cfg.get_float("sketch.stroke_width"),
            raw_edges=cfg.get_bool("sketch.raw_edges"),
        )

    def resolve_min_bbox_area(self, width: int, height: int) -> float:
        if self.min_bbox_area is not None:
            return self.min_bbox_area
        return 64.0 * (width * height) / (512.0 * 512.0)


def make_sketch(img: RasterImage, config: SketchConfig) -> SketchLayer:
    """detect edges -> trace -> fit -> prune -> smooth -> rasterize."""
    edges = detect_edges(img, config.detector, config.sigma, config.sigma_k)
    chains = trace(edges, config.threshold)
    if config.raw_edges:
        return rasterize_polylines(chains, img.width, img.height, config.stroke_width)
    paths = [fit_splines(chain, config.max_error) for chain in chains]
    paths = prune_small(paths, config.resolve_min_bbox_area(img.width, img.height))
    paths = [smooth_controls(path, config.smooth) for path in paths]
    return rasterize(paths, img.width, img.height, config.stroke_width)
