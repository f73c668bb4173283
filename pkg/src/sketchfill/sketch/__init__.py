from .edges import EdgeMap, detect_edges
from .trace import trace
from .bezier import (
    SplinePath,
    fit_splines,
    prune_small,
    smooth_controls,
    rasterize,
    rasterize_polylines,
)
from .pipeline import SketchLayer, SketchConfig, make_sketch

__all__ = [
    "EdgeMap",
    "detect_edges",
    "trace",
    "SplinePath",
    "fit_splines",
    "prune_small",
    "smooth_controls",
    "rasterize",
    "rasterize_polylines",
    "SketchLayer",
    "SketchConfig",
    "make_sketch",
]
