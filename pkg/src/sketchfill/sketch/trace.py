"""Turn a soft edge map into 1-pixel-wide point chains.

Pipeline: binarize at a strength threshold, thin to a skeleton, then walk the
skeleton as a graph. Chains run node-to-node where a node is an endpoint or a
junction (degree != 2); junctions therefore split strokes. Skeleton cycles
with no node on them come out as closed chains whose first and last points
coincide.
"""

from __future__ import annotations

import numpy as np

from .edges import EdgeMap

# 8-neighbor offsets in (dy, dx), clockwise from north; fixed order keeps the
# walk deterministic
_NBRS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _shifted_neighbors(img: np.ndarray):
    p = np.pad(img, 1)
    # P2..P9 in the classic thinning notation: N, NE, E, SE, S, SW, W, NW
    return (
        p[:-2, 1:-1],
        p[:-2, 2:],
        p[1:-1, 2:],
        p[2:, 2:],
        p[2:, 1:-1],
        p[2:, :-2],
        p[1:-1, :-2],
        p[:-2, :-2],
    )


def thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning of a boolean mask down to an 8-connected skeleton."""
    img = mask.astype(np.uint8)
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            nb = _shifted_neighbors(img)
            count = np.zeros(img.shape, dtype=np.int32)
            for n in nb:
                count += n
            ring = list(nb) + [nb[0]]
            transitions = np.zeros(img.shape, dtype=np.int32)
            for a, b in zip(ring[:-1], ring[1:]):
                transitions += (a == 0) & (b == 1)
            if step == 0:
                c1 = nb[0] * nb[2] * nb[4] == 0
                c2 = nb[2] * nb[4] * nb[6] == 0
            else:
                c1 = nb[0] * nb[2] * nb[6] == 0
                c2 = nb[0] * nb[4] * nb[6] == 0
            remove = (
                (img == 1) & (count >= 2) & (count <= 6) & (transitions == 1) & c1 & c2
            )
            if remove.any():
                img[remove] = 0
                changed = True
    return img.astype(bool)


def _adjacency(skel: np.ndarray) -> dict:
    """Pixel graph of the skeleton with redundant diagonal links dropped.

    A diagonal link is redundant when either of its two orthogonal corner
    pixels is itself on the skeleton; dropping those avoids spurious
    one-pixel triangles in the graph.
    """
    h, w = skel.shape
    adj: dict = {}
    ys, xs = np.nonzero(skel)
    pixels = list(zip(ys.tolist(), xs.tolist()))
    on = set(pixels)
    for p in pixels:
        py, px = p
        links = []
        for dy, dx in _NBRS:
            q = (py + dy, px + dx)
            if q not in on:
                continue
            if dy != 0 and dx != 0 and ((py + dy, px) in on or (py, px + dx) in on):
                continue
            links.append(q)
        adj[p] = links
    return adj


def trace(edges: EdgeMap, threshold: float = 0.35) -> list:
    """Extract point chains from an edge map.

    Returns a list of (N, 2) float arrays of (x, y) pixel coordinates, N >= 2.
    Closed chains repeat their first point at the end; isolated skeleton
    pixels are dropped.
    """
    skel = thin(edges.strength >= threshold)
    adj = _adjacency(skel)
    visited = set()

    def walk(start, first):
        pts = [start]
        visited.add((start, first))
        visited.add((first, start))
        prev, cur = start, first
        while True:
            pts.append(cur)
            links = adj[cur]
            if len(links) != 2 or cur == start:
                break
            nxt = links[0] if links[1] == prev else links[1]
            visited.add((cur, nxt))
            visited.add((nxt, cur))
            prev, cur = cur, nxt
        return pts

    chains = []
    for p in sorted(adj):
        if len(adj[p]) == 2:
            continue
        for q in adj[p]:
            if (p, q) not in visited:
                chains.append(walk(p, q))
    # whatever is left untouched sits on pure cycles
    for p in sorted(adj):
        if len(adj[p]) == 2 and all((p, q) not in visited for q in adj[p]):
            chains.append(walk(p, adj[p][0]))

    return [
        np.array([(float(x), float(y)) for (y, x) in pts], dtype=np.float64)
        for pts in chains
        if len(pts) >= 2
    ]
