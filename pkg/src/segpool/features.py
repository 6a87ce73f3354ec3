"""Per-segment structural-appearance features.

Extractors map a :class:`SegmentSet` to an ``(m, d)`` array of unit-norm rows.
Two ship with the package: :class:`DefaultExtractor`, a handcrafted
rotation-invariant descriptor, and :class:`ImportedExtractor`, which reads
features computed elsewhere (for example by a learned network) from text files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import FormatError, ParameterError
from .segmentation import Segment, SegmentSet

FEATURE_DIM = 64
GRID_SHAPE = (32, 32, 16)
MIN_VOXEL = 0.1

# relative weight of each feature group before the final normalization
_W_SHAPE = 1.0
_W_EXTENT = 1.0
_W_COUNT = 0.25
_W_HEIGHT = 0.5
_W_BLOCKS = 1.0
_W_PROFILES = 0.6


@dataclass
class StructuralFeature:
    values: np.ndarray
    degenerate: bool = False


@runtime_checkable
class DescriptorExtractor(Protocol):
    name: str
    dimension: int

    def extract(self, segments: SegmentSet) -> np.ndarray:
        """Return an ``(len(segments), dimension)`` array of unit-norm features."""
        ...


def principal_axes(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenvalues (descending), sign-fixed axes (columns) and centroid.

    Each axis points toward the half-space holding more points; on a tie it
    points toward +z (world up).
    """
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0.0, None)
    axes = evecs[:, ::-1].copy()
    proj = centered @ axes
    for k in range(3):
        pos = np.count_nonzero(proj[:, k] > 0)
        neg = np.count_nonzero(proj[:, k] < 0)
        if neg > pos or (neg == pos and axes[2, k] < 0):
            axes[:, k] = -axes[:, k]
    return evals, axes, centroid


def eigen_shape_features(evals: np.ndarray) -> np.ndarray:
    """Linearity, planarity, scattering, omnivariance, anisotropy, eigenentropy, change of curvature."""
    total = evals.sum()
    if total <= 0:
        return np.zeros(7)
    e1, e2, e3 = evals / total
    logs = np.log(np.where(evals > 0, evals / total, 1.0))
    return np.array([
        (e1 - e2) / e1,
        (e2 - e3) / e1,
        e3 / e1,
        np.cbrt(e1 * e2 * e3),
        (e1 - e3) / e1,
        -np.sum((evals / total) * logs),
        e3,
    ])


def voxel_counts(local: np.ndarray) -> np.ndarray:
    """Point counts on the 32x32x16 grid centred on the segment's PCA box.

    Voxels are 0.1 m unless the segment is too long on an axis, in which case
    that axis is stretched to fit.
    """
    shape = np.array(GRID_SHAPE)
    lo_pt, hi_pt = local.min(axis=0), local.max(axis=0)
    size = np.maximum(MIN_VOXEL, (hi_pt - lo_pt) / shape)
    lo = 0.5 * (lo_pt + hi_pt) - 0.5 * shape * size
    idx = np.clip(np.floor((local - lo) / size).astype(np.int64), 0, shape - 1)
    flat = np.ravel_multi_index(idx.T, GRID_SHAPE)
    return np.bincount(flat, minlength=int(np.prod(shape))).reshape(GRID_SHAPE).astype(np.float64)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def occupancy_histogram(local: np.ndarray) -> np.ndarray:
    """52 pooled cells of the 32x32x16 grid, as fractions of the segment's points.

    32 block cells (4x4x2 blocks of 8x8x8 voxels) followed by profiles along
    each principal axis: 8 + 8 + 4 bins.
    """
    grid = voxel_counts(local) / len(local)
    blocks = grid.reshape(4, 8, 4, 8, 2, 8).sum(axis=(1, 3, 5)).ravel()
    p1 = grid.sum(axis=(1, 2)).reshape(8, 4).sum(axis=1)
    p2 = grid.sum(axis=(0, 2)).reshape(8, 4).sum(axis=1)
    p3 = grid.sum(axis=(0, 1)).reshape(4, 4).sum(axis=1)
    return np.concatenate([
        _W_BLOCKS * _unit(blocks),
        _W_PROFILES * _unit(p1),
        _W_PROFILES * _unit(p2),
        _W_PROFILES * _unit(p3),
    ])


def extract_default(segment: Segment) -> StructuralFeature:
    """Handcrafted 64-d feature, invariant to point order and rigid rotation.

    Layout: 7 eigenvalue shape features, 3 log extents, log point count,
    height above ground, 52 occupancy cells. Segments whose covariance has
    rank < 2 get zeroed shape features and are flagged degenerate.
    """
    pts = segment.points
    evals, axes, centroid = principal_axes(pts)
    degenerate = evals[0] <= 0 or evals[1] <= 1e-12 * max(evals[0], 1e-300)
    shape = np.zeros(7) if degenerate else eigen_shape_features(evals)
    local = (pts - centroid) @ axes
    extents = np.sort(np.log1p(local.max(axis=0) - local.min(axis=0)))[::-1]
    count = np.log10(len(pts))
    height = np.arcsinh(segment.height_above_ground())
    values = np.concatenate([
        _W_SHAPE * shape,
        _W_EXTENT * extents,
        [_W_COUNT * count, _W_HEIGHT * height],
        occupancy_histogram(local),
    ])
    norm = np.linalg.norm(values)
    return StructuralFeature(values / norm, bool(degenerate))


class DefaultExtractor:
    name = "default"
    dimension = FEATURE_DIM

    def extract(self, segments: SegmentSet) -> np.ndarray:
        if len(segments) == 0:
            return np.zeros((0, self.dimension))
        return np.array([extract_default(s).values for s in segments])


def import_features(path, segment_count: int, dimension: int = FEATURE_DIM) -> np.ndarray:
    """Load ``segment_count`` whitespace-separated rows; each row is re-normalized."""
    try:
        rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read feature file {path}: {exc}") from exc
    if len(rows) != segment_count:
        raise FormatError(f"{path}: {len(rows)} feature rows for {segment_count} segments")
    out = np.zeros((segment_count, dimension))
    for i, row in enumerate(rows):
        if len(row) != dimension:
            raise FormatError(f"{path}: row {i} has {len(row)} values, expected {dimension}")
        try:
            v = np.array([float(x) for x in row])
        except ValueError as exc:
            raise FormatError(f"{path}: row {i}: {exc}") from exc
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0:
            raise FormatError(f"{path}: row {i} (segment {i}) cannot be normalized")
        out[i] = v / norm
    return out


class ImportedExtractor:
    """Features read from per-frame files, e.g. ``feats/{frame:06d}.txt``."""

    name = "import"

    def __init__(self, pattern: str, dimension: int = FEATURE_DIM):
        self.pattern = pattern
        self.dimension = dimension

    def extract(self, segments: SegmentSet) -> np.ndarray:
        path = self.pattern.format(frame=segments.source_frame_index)
        return import_features(path, len(segments), self.dimension)


def make_extractor(spec: str) -> DescriptorExtractor:
    """``"default"`` or ``"import:<pattern with {frame}>"``."""
    if spec == "default":
        return DefaultExtractor()
    if spec.startswith("import:"):
        return ImportedExtractor(spec[len("import:"):])
    raise ParameterError(f"unknown extractor {spec!r}")
