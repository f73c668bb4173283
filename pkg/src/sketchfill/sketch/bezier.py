"""Cubic Bézier paths: least-squares fitting, pruning, smoothing, rasterizing.

Fitting follows the classic least-squares-with-subdivision scheme: fit one
cubic to the whole chain, Newton-step the parameterization a few times, and
if the worst deviation still exceeds the tolerance split at the worst point
and recurse. Accepted segments therefore keep every data point within
`max_error` of the curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..raster import BinaryMask

_EPS = 1e-12


@dataclass(frozen=True)
class SketchLayer(BinaryMask):
    """Binary stroke raster, the shape-conditioning channel."""


@dataclass(frozen=True)
class SplinePath:
    """Chain of cubic segments, C0 at the joints."""

    segments: np.ndarray  # (n, 4, 2) float64 control points, (x, y)
    closed: bool = False

    def __post_init__(self):
        s = np.ascontiguousarray(self.segments, dtype=np.float64)
        if s.ndim != 3 or s.shape[1] != 4 or s.shape[2] != 2 or s.shape[0] < 1:
            raise ValueError(f"segments must be (n>=1, 4, 2), got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValueError("control points must be finite")
        if s.shape[0] > 1 and not np.allclose(s[:-1, 3], s[1:, 0], atol=1e-9):
            raise ValueError("consecutive segments must share an endpoint")
        object.__setattr__(self, "segments", s)

    def bbox(self):
        """Control-point bounds as (xmin, ymin, xmax, ymax)."""
        pts = self.segments.reshape(-1, 2)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def bbox_area(self) -> float:
        x0, y0, x1, y1 = self.bbox()
        return (x1 - x0) * (y1 - y0)

    def joints(self) -> np.ndarray:
        """On-curve points: each segment start plus the final endpoint."""
        return np.concatenate([self.segments[:, 0], self.segments[-1:, 3]], axis=0)

    def sample(self, max_step: float = 0.25) -> np.ndarray:
        """Dense (N, 2) polyline along the path, spacing <= max_step.

        Per-segment step count is sized by control-polygon length, which
        bounds arc length from above.
        """
        out = []
        for seg in self.segments:
            poly_len = float(np.linalg.norm(np.diff(seg, axis=0), axis=1).sum())
            n = max(2, int(np.ceil(poly_len / max_step)) + 1)
            out.append(_eval_cubic(seg, np.linspace(0.0, 1.0, n)))
        return np.concatenate(out, axis=0)


def _eval_cubic(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)[:, None]
    s = 1.0 - t
    return (
        s * s * s * ctrl[0]
        + 3.0 * s * s * t * ctrl[1]
        + 3.0 * s * t * t * ctrl[2]
        + t * t * t * ctrl[3]
    )


def _eval_bezier(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    """de Casteljau for arbitrary degree, used for derivative curves."""
    pts = [np.broadcast_to(c, (len(t), 2)).copy() for c in ctrl]
    tt = np.asarray(t, dtype=np.float64)[:, None]
    while len(pts) > 1:
        pts = [(1.0 - tt) * a + tt * b for a, b in zip(pts[:-1], pts[1:])]
    return pts[0]


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < _EPS:
        return np.array([1.0, 0.0])
    return v / n


def _chord_params(pts: np.ndarray) -> np.ndarray:
    d = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    return d / d[-1]


def _generate(pts: np.ndarray, u: np.ndarray, t_left: np.ndarray, t_right: np.ndarray):
    """Least-squares cubic through the endpoints with the given tangents.

    t_left points into the curve from the first point, t_right points into
    the curve from the last point (i.e. backward).
    """
    p0, p3 = pts[0], pts[-1]
    s = 1.0 - u
    b0 = s * s * s
    b1 = 3.0 * u * s * s
    b2 = 3.0 * u * u * s
    b3 = u * u * u
    a0 = b1[:, None] * t_left
    a1 = b2[:, None] * t_right
    tmp = pts - (b0 + b1)[:, None] * p0 - (b2 + b3)[:, None] * p3
    c00 = float((a0 * a0).sum())
    c01 = float((a0 * a1).sum())
    c11 = float((a1 * a1).sum())
    x0 = float((a0 * tmp).sum())
    x1 = float((a1 * tmp).sum())
    det = c00 * c11 - c01 * c01
    if abs(det) > _EPS:
        alpha_l = (x0 * c11 - x1 * c01) / det
        alpha_r = (c00 * x1 - c01 * x0) / det
    else:
        alpha_l = alpha_r = -1.0
    dist = float(np.linalg.norm(p3 - p0))
    # reject degenerate or runaway handle lengths and fall back to thirds
    limit = 4.0 * dist + _EPS
    if not (np.isfinite(alpha_l) and np.isfinite(alpha_r)):
        alpha_l = alpha_r = dist / 3.0
    elif alpha_l < _EPS or alpha_r < _EPS or alpha_l > limit or alpha_r > limit:
        alpha_l = alpha_r = dist / 3.0
    return np.stack([p0, p0 + t_left * alpha_l, p3 + t_right * alpha_r, p3])


def _max_deviation(pts: np.ndarray, ctrl: np.ndarray, u: np.ndarray):
    d = np.linalg.norm(_eval_cubic(ctrl, u) - pts, axis=1)
    idx = int(np.argmax(d))
    return float(d[idx]), min(max(idx, 1), len(pts) - 2)

def _reparameterize(pts: np.ndarray, ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    d1 = 3.0 * np.diff(ctrl, axis=0)
    d2 = 2.0 * np.diff(d1, axis=0)
    q = _eval_cubic(ctrl, u)
    q1 = _eval_bezier(d1, u)
    q2 = _eval_bezier(d2, u)
    diff = q - pts
    num = (diff * q1).sum(axis=1)
    den = (q1 * q1).sum(axis=1) + (diff * q2).sum(axis=1)
    step = np.where(np.abs(den) > _EPS, num / np.where(np.abs(den) > _EPS, den, 1.0), 0.0)
    return np.clip(u - step, 0.0, 1.0)


def fit_splines(polyline: np.ndarray, max_error: float) -> SplinePath:
    """Fit a chain of cubics so every input point stays within max_error.

    A chain whose last point coincides with its first is fitted as a closed
    path. Coincident-point degenerate input yields a single zero-length
    segment.
    """
    if max_error <= 0.0:
        raise ValueError(f"max_error must be positive, got {max_error}")
    raw = np.asarray(polyline, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != 2 or raw.shape[0] < 2:
        raise ValueError(f"polyline must be (n>=2, 2), got shape {raw.shape}")
    closed = bool(raw.shape[0] >= 3 and np.allclose(raw[0], raw[-1], atol=1e-9))

    keep = [0]
    for i in range(1, len(raw)):
        if np.linalg.norm(raw[i] - raw[keep[-1]]) > _EPS:
            keep.append(i)
    pts = raw[keep]
    if len(pts) == 1:
        seg = np.broadcast_to(pts[0], (1, 4, 2)).copy()
        return SplinePath(seg, closed=False)
    if closed and not np.allclose(pts[0], pts[-1], atol=1e-9):
        pts = np.concatenate([pts, pts[:1]], axis=0)

    segments = []
    t_first = _normalize(pts[1] - pts[0])
    t_last = _normalize(pts[-2] - pts[-1])
    stack = [(0, len(pts) - 1, t_first, t_last)]
    while stack:
        first, last, t_left, t_right = stack.pop()
        chunk = pts[first : last + 1]
        if len(chunk) == 2:
            dist3 = float(np.linalg.norm(chunk[1] - chunk[0])) / 3.0
            segments.append(
                np.stack(
                    [chunk[0], chunk[0] + t_left * dist3, chunk[1] + t_right * dist3, chunk[1]]
                )
            )
            continue
        u = _chord_params(chunk)
        ctrl = _generate(chunk, u, t_left, t_right)
        dev, split = _max_deviation(chunk, ctrl, u)
        if dev > max_error and dev < 4.0 * max_error:
            for _ in range(4):
                u = _reparameterize(chunk, ctrl, u)
                ctrl = _generate(chunk, u, t_left, t_right)
                dev, split = _max_deviation(chunk, ctrl, u)
                if dev <= max_error:
                    break
        if dev <= max_error:
            segments.append(ctrl)
            continue
        mid = first + split
        v1 = (chunk[split - 1] - chunk[split]) + (chunk[split] - chunk[split + 1])
        if np.linalg.norm(v1) < _EPS:
            v1 = chunk[split - 1] - chunk[split + 1]
        t_center = _normalize(v1)
        stack.append((mid, last, -t_center, t_right))
        stack.append((first, mid, t_left, t_center))

    return SplinePath(np.stack(segments), closed=closed)


def prune_small(paths: list, min_bbox_area: float) -> list:
    """Drop paths whose control-point bounding box is smaller than the cutoff."""
    if min_bbox_area < 0:
        raise ValueError(f"min_bbox_area must be >= 0, got {min_bbox_area}")
    return [p for p in paths if p.bbox_area() >= min_bbox_area]


# arc distance to a joint's averaging neighbors; a couple of pixels smooths
# away trace staircase noise while leaving large shapes essentially in place
_NEIGHBOR_ARC = 3.0


def _arc_polyline(path: SplinePath):
    """Dense polyline, cumulative arc length, and each joint's sample index."""
    pts = []
    joint_idx = [0]
    total = 0
    for seg in path.segments:
        poly_len = float(np.linalg.norm(np.diff(seg, axis=0), axis=1).sum())
        n = max(2, int(np.ceil(poly_len / 0.25)) + 1)
        p = _eval_cubic(seg, np.linspace(0.0, 1.0, n))
        if pts:
            p = p[1:]  # the joint is already the previous segment's last sample
        pts.append(p)
        total += len(p)
        joint_idx.append(total - 1)
    dense = np.concatenate(pts, axis=0)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    return dense, s, np.array(joint_idx)


def _point_at(dense: np.ndarray, s: np.ndarray, q: float, closed: bool) -> np.ndarray:
    total = s[-1]
    if closed:
        q = q % total
    else:
        q = min(max(q, 0.0), total)
    i = int(np.searchsorted(s, q))
    if i <= 0:
        return dense[0]
    if i >= len(s):
        return dense[-1]
    span = s[i] - s[i - 1]
    if span < _EPS:
        return dense[i]
    t = (q - s[i - 1]) / span
    return dense[i - 1] + t * (dense[i] - dense[i - 1])


def _smooth_once(path: SplinePath) -> SplinePath:
    dense, s, joint_idx = _arc_polyline(path)
    total = s[-1]
    if total < _EPS:
        return path
    joints = path.joints()
    joint_s = s[joint_idx]
    new_joints = joints.copy()
    for k in range(len(joints)):
        if not path.closed and k in (0, len(joints) - 1):
            continue  # open endpoints stay put
        if path.closed and k == len(joints) - 1:
            new_joints[k] = new_joints[0]
            continue
        before = _point_at(dense, s, joint_s[k] - _NEIGHBOR_ARC, path.closed)
        after = _point_at(dense, s, joint_s[k] + _NEIGHBOR_ARC, path.closed)
        new_joints[k] = (before + joints[k] + after) / 3.0

    # each handle keeps its offset from the joint it belongs to and rides
    # along with that joint's displacement; the triple (in-handle, joint,
    # out-handle) translates rigidly, so tangent continuity at every joint is
    # preserved exactly and segments spanning wide arcs keep their optimized
    # handle lengths
    delta = new_joints - joints
    segs = path.segments.copy()
    segs[:, 0] = new_joints[:-1]
    segs[:, 3] = new_joints[1:]
    segs[:, 1] += delta[:-1]
    segs[:, 2] += delta[1:]
    return SplinePath(segs, closed=path.closed)


def smooth_controls(path: SplinePath, strength: int) -> SplinePath:
    """Pull each joint toward the path running through its neighborhood.

    One pass replaces every joint with the average of itself and the two
    curve points a fixed arc distance to either side, then re-derives the
    handles from the moved joints (central-difference tangents, one-sided at
    open ends) so adjacent segments stay tangent-continuous. `strength`
    passes are applied. Open-path endpoints never move; single-segment paths
    have no interior joints and are returned unchanged.
    """
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    if strength == 0 or path.segments.shape[0] < 2:
        return path
    for _ in range(strength):
        path = _smooth_once(path)
    return path


def _stamp(bits: np.ndarray, pts: np.ndarray, radius: float):
    """Set every pixel whose center lies within `radius` of any point."""
    if len(pts) == 0:
        return
    h, w = bits.shape
    px = np.round(pts[:, 0]).astype(np.int64)
    py = np.round(pts[:, 1]).astype(np.int64)
    reach = int(np.ceil(radius + 0.5))
    r2 = radius * radius + 1e-9
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            ix = px + dx
            iy = py + dy
            keep = (
                (ix >= 0)
                & (ix < w)
                & (iy >= 0)
                & (iy < h)
                & ((ix - pts[:, 0]) ** 2 + (iy - pts[:, 1]) ** 2 <= r2)
            )
            bits[iy[keep], ix[keep]] = True


def _stroke_radius(stroke_width: float) -> float:
    # a pixel-corner point sits sqrt(2)/2 from every adjacent pixel center, so
    # that is the minimum radius guaranteeing each curve point lands on a set
    # pixel; wider strokes use their nominal half-width
    return max(stroke_width / 2.0, np.sqrt(2.0) / 2.0)


def rasterize(paths: list, width: int, height: int, stroke_width: float = 1.0) -> SketchLayer:
    """Stamp the curves into a binary layer of the given size."""
    if stroke_width < 1.0:
        raise ValueError(f"stroke_width must be >= 1, got {stroke_width}")
    bits = np.zeros((height, width), dtype=bool)
    radius = _stroke_radius(stroke_width)
    for path in paths:
        _stamp(bits, path.sample(max_step=0.25), radius)
    return SketchLayer(bits)


def _densify_polyline(poly: np.ndarray, max_step: float) -> np.ndarray:
    out = [poly[:1]]
    for a, b in zip(poly[:-1], poly[1:]):
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / max_step)))
        t = np.linspace(0.0, 1.0, n + 1)[1:, None]
        out.append(a + t * (b - a))
    return np.concatenate(out, axis=0)


def rasterize_polylines(
    polylines: list, width: int, height: int, stroke_width: float = 1.0
) -> SketchLayer:
    """Stamp straight point chains directly, bypassing curve fitting."""
    if stroke_width < 1.0:
        raise ValueError(f"stroke_width must be >= 1, got {stroke_width}")
    bits = np.zeros((height, width), dtype=bool)
    radius = _stroke_radius(stroke_width)
    for poly in polylines:
        p = np.asarray(poly, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
            raise ValueError(f"polyline must be (n, 2), got shape {p.shape}")
        _stamp(bits, _densify_polyline(p, 0.25), radius)
    return SketchLayer(bits)
