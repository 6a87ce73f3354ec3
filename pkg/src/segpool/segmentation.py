"""Ground removal and Euclidean clustering of a frame into segments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import ParameterError
from .ingest import PointCloudFrame

log = logging.getLogger(__name__)


@dataclass
class SegmentationConfig:
    cluster_distance: float = 0.2
    min_points: int = 100
    max_points: int = 15000
    max_range: float = 60.0
    ransac_iterations: int = 200
    ransac_threshold: float = 0.3
    ransac_max_tilt_deg: float = 30.0
    ransac_min_inlier_fraction: float = 0.15
    ransac_score_points: int = 4096
    fallback_percentile: float = 5.0
    seed: int = 0


@dataclass
class Segment:
    """A Euclidean cluster. ``indices`` point back into the source frame."""

    points: np.ndarray
    id: int = 0
    indices: Optional[np.ndarray] = None
    ground_plane: Optional[np.ndarray] = None
    label: Optional[int] = None
    centroid: np.ndarray = field(init=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.centroid = self.points.mean(axis=0)

    def __len__(self) -> int:
        return len(self.points)

    def height_above_ground(self) -> float:
        if self.ground_plane is None:
            return float(self.centroid[2])
        return float(self.ground_plane[:3] @ self.centroid + self.ground_plane[3])


@dataclass
class SegmentSet:
    segments: list
    source_frame_index: int = 0

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    @property
    def centroids(self) -> np.ndarray:
        if not self.segments:
            return np.zeros((0, 3))
        return np.array([s.centroid for s in self.segments])

    def permuted(self, order) -> "SegmentSet":
        """Reordered copy with ids reassigned to the new positions."""
        segs = []
        for new_id, old in enumerate(order):
            s = self.segments[old]
            segs.append(Segment(s.points, new_id, s.indices, s.ground_plane, s.label))
        return SegmentSet(segs, self.source_frame_index)


def _canonical_order(points: np.ndarray) -> np.ndarray:
    # keys invariant to point order and to rotation about z
    r = np.hypot(points[:, 0], points[:, 1])
    return np.lexsort((r, points[:, 2]))


def fit_ground_plane(points: np.ndarray, cfg: SegmentationConfig) -> tuple[Optional[np.ndarray], np.ndarray]:
    """RANSAC a near-horizontal plane. Returns (plane or None, inlier mask).

    Hypotheses are scored on an evenly strided subsample of at most
    ``ransac_score_points`` points in canonical order; the final inlier mask
    uses every point.
    """
    n = len(points)
    order = _canonical_order(points)
    step = max(1, n // cfg.ransac_score_points)
    pts = points[order[::step]]
    rng = np.random.default_rng(cfg.seed)
    idx = np.array([rng.choice(len(pts), size=3, replace=False) for _ in range(cfg.ransac_iterations)])
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms >= 1e-12
    normals[ok] /= norms[ok, None]
    normals[normals[:, 2] < 0] *= -1
    ok &= normals[:, 2] >= np.cos(np.radians(cfg.ransac_max_tilt_deg))
    if not ok.any():
        return None, np.zeros(n, dtype=bool)
    normals, a = normals[ok], a[ok]
    offsets = -np.einsum("ij,ij->i", normals, a)
    counts = np.count_nonzero(np.abs(pts @ normals.T + offsets) <= cfg.ransac_threshold, axis=0)
    best = int(np.argmax(counts))  # first hypothesis wins ties
    if counts[best] < cfg.ransac_min_inlier_fraction * len(pts):
        return None, np.zeros(n, dtype=bool)
    plane = np.append(normals[best], offsets[best])
    mask = np.abs(points @ plane[:3] + plane[3]) <= cfg.ransac_threshold
    return plane, mask


def ground_mask(frame: PointCloudFrame, cfg: Optional[SegmentationConfig] = None) -> tuple[np.ndarray, np.ndarray]:
    """Classify ground points. Returns (plane (a, b, c, d), boolean ground mask).

    Falls back to cutting a slab above the 5th-percentile height when no
    near-horizontal plane holds enough of the points.
    """
    cfg = cfg or SegmentationConfig()
    if not frame.valid:
        raise ParameterError(f"frame {frame.frame_index} is empty")
    pts = frame.points
    plane, ground = fit_ground_plane(pts, cfg) if len(pts) >= 3 else (None, None)
    if plane is None:
        level = np.percentile(pts[:, 2], cfg.fallback_percentile) + cfg.ransac_threshold
        ground = pts[:, 2] < level
        plane = np.array([0.0, 0.0, 1.0, -level])
        log.debug("frame %d: no ground plane found, slab fallback at z=%.3f", frame.frame_index, level)
    return plane, ground


def remove_ground(frame: PointCloudFrame, cfg: Optional[SegmentationConfig] = None) -> PointCloudFrame:
    """Drop ground points; the fitted plane is kept on the returned frame."""
    plane, ground = ground_mask(frame, cfg)
    out = frame.subset(~ground)
    out.ground_plane = plane
    return out


def connected_clusters(points: np.ndarray, distance: float) -> np.ndarray:
    """Component label per point for the graph linking points within ``distance``."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(points).query_pairs(distance, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def extract_segments(frame: PointCloudFrame, cfg: Optional[SegmentationConfig] = None,
                     index_map: Optional[np.ndarray] = None) -> SegmentSet:
    """Cluster a ground-removed frame into segments of [min_points, max_points] points.

    Segment ids follow discovery order, i.e. the order of each component's
    first point in the frame.
    """
    cfg = cfg or SegmentationConfig()
    pts = frame.points
    keep = np.flatnonzero(np.linalg.norm(pts, axis=1) <= cfg.max_range)
    pts = pts[keep]
    labels = connected_clusters(pts, cfg.cluster_distance)
    if len(labels) == 0:
        return SegmentSet([], frame.frame_index)
    comp_ids, first, counts = np.unique(labels, return_index=True, return_counts=True)
    segments = []
    order = np.argsort(first, kind="stable")
    point_order = np.argsort(labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)])
    for c in order:
        if counts[c] < cfg.min_points:
            continue
        if counts[c] > cfg.max_points:
            log.debug("frame %d: dropping oversized component of %d points", frame.frame_index, counts[c])
            continue
        members = point_order[starts[c]:starts[c + 1]]
        src = keep[members]
        if index_map is not None:
            src = index_map[src]
        seg_label = None
        if frame.labels is not None:
            vals, cnt = np.unique(frame.labels[keep[members]], return_counts=True)
            seg_label = int(vals[np.argmax(cnt)])
        segments.append(Segment(pts[members], len(segments), src, frame.ground_plane, seg_label))
    return SegmentSet(segments, frame.frame_index)


def segment_frame(frame: PointCloudFrame, cfg: Optional[SegmentationConfig] = None) -> SegmentSet:
    """Ground removal followed by clustering; segment indices refer to ``frame``."""
    cfg = cfg or SegmentationConfig()
    if not frame.valid:
        return SegmentSet([], frame.frame_index)
    plane, ground = ground_mask(frame, cfg)
    kept = np.flatnonzero(~ground)
    cleaned = frame.subset(kept)
    cleaned.ground_plane = plane
    return extract_segments(cleaned, cfg, index_map=kept)
