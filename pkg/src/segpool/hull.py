"""Convex hulls of segments and the hull-vertex distance between segments."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError


class Hull(NamedTuple):
    vertices: np.ndarray  # (h, 3) extreme points
    degenerate: bool


def convex_hull(points: np.ndarray) -> Hull:
    """Extreme points of ``points`` via Qhull (QuickHull).

    Sets that are coplanar, collinear or have fewer than 4 points have no
    3D hull; they come back whole with ``degenerate=True``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 4:
        return Hull(pts.copy(), True)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return Hull(pts.copy(), True)
    return Hull(pts[np.sort(hull.vertices)], False)


def mtd(hull_a: np.ndarray, hull_b: np.ndarray) -> float:
    """Minimum distance over all pairs of hull vertices of two segments."""
    diff = hull_a[:, None, :] - hull_b[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=-1).min()))


def mtd_matrix(hulls: list) -> np.ndarray:
    """Symmetric (m, m) matrix of pairwise hull distances, zero diagonal."""
    m = len(hulls)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = mtd(hulls[i], hulls[j])
    return out
