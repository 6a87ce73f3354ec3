"""Dataset access: KITTI odometry layout readers and the core frame/pose types.

KITTI layout expected by :func:`load_kitti_sequence`::

    <root>/sequences/<seq>/velodyne/000000.bin
    <root>/sequences/<seq>/times.txt         (optional)
    <root>/poses/<seq>.txt  or  <root>/sequences/<seq>/poses.txt
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence as SequenceT, Union

import numpy as np

from .errors import FormatError

PathLike = Union[str, os.PathLike]

KITTI_FRAME_PERIOD = 0.1  # seconds, 10 Hz sweep rate

_VELO_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class Pose:
    """Rigid world<-sensor transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def relative_to(self, other: "Pose") -> "Pose":
        """Transform taking this pose's sensor coordinates into ``other``'s."""
        return other.inverse() @ self


@dataclass
class PointCloudFrame:
    """One LiDAR sweep in sensor coordinates.

    ``intensity`` is carried only so a decoded file can be re-encoded
    byte-for-byte; nothing downstream reads it. ``labels`` holds per-point
    object ids for synthetic frames (-1 marks ground). ``ground_plane`` is
    set by ground removal as (a, b, c, d) with a unit normal and c > 0.
    """

    points: np.ndarray
    timestamp: float = 0.0
    frame_index: int = 0
    intensity: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    ground_plane: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise FormatError(f"points must have shape (N, 3), got {pts.shape}")
        self.points = pts

    @property
    def valid(self) -> bool:
        return len(self.points) > 0

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask_or_index) -> "PointCloudFrame":
        """New frame keeping the selected points (and their side arrays)."""
        return PointCloudFrame(
            points=self.points[mask_or_index],
            timestamp=self.timestamp,
            frame_index=self.frame_index,
            intensity=None if self.intensity is None else self.intensity[mask_or_index],
            labels=None if self.labels is None else self.labels[mask_or_index],
            ground_plane=self.ground_plane,
        )

    def with_points(self, points: np.ndarray) -> "PointCloudFrame":
        return PointCloudFrame(
            points=points,
            timestamp=self.timestamp,
            frame_index=self.frame_index,
            intensity=self.intensity,
            labels=self.labels,
            ground_plane=self.ground_plane,
        )


@dataclass
class Sequence:
    """Ordered frames with one pose and one ground-truth position per frame.

    ``frames`` may be any indexable container; KITTI sequences use a lazy
    reader so a full drive never has to sit in memory.
    """

    frames: SequenceT[PointCloudFrame]
    poses: list[Pose]
    ground_truth_positions: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.ground_truth_positions is None:
            self.ground_truth_positions = np.array([p.translation for p in self.poses]).reshape(-1, 3)
        if not (len(self.frames) == len(self.poses) == len(self.ground_truth_positions)):
            raise FormatError(
                f"frame/pose/position counts differ: {len(self.frames)}, "
                f"{len(self.poses)}, {len(self.ground_truth_positions)}"
            )

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[PointCloudFrame]:
        for i in range(len(self.frames)):
            yield self.frames[i]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([self.frames[i].timestamp for i in range(len(self.frames))])


def read_kitti_frame(path: PathLike, timestamp: float = 0.0, frame_index: int = 0) -> PointCloudFrame:
    """Decode a KITTI velodyne ``.bin`` file of packed float32 (x, y, z, intensity)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read velodyne file {path}: {exc}") from exc
    if len(raw) % 16:
        raise FormatError(f"{path}: byte length {len(raw)} is not a multiple of 16")
    data = np.frombuffer(raw, dtype=_VELO_DTYPE).reshape(-1, 4)
    return PointCloudFrame(
        points=data[:, :3].astype(np.float64),
        timestamp=timestamp,
        frame_index=frame_index,
        intensity=data[:, 3].copy(),
    )


def encode_kitti_frame(frame: PointCloudFrame) -> bytes:
    n = len(frame.points)
    out = np.zeros((n, 4), dtype=_VELO_DTYPE)
    out[:, :3] = frame.points
    if frame.intensity is not None:
        out[:, 3] = frame.intensity
    return out.tobytes()


def write_kitti_frame(path: PathLike, frame: PointCloudFrame) -> None:
    Path(path).write_bytes(encode_kitti_frame(frame))


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def read_poses(path: PathLike, orthonormal_tol: float = 1e-3) -> list[Pose]:
    """Read a KITTI poses file (12 numbers per line, row-major 3x4).

    Poses in the public files are printed to ~7 significant digits, so the
    rotation block is projected onto SO(3); blocks further than
    ``orthonormal_tol`` from a rotation are rejected.
    """
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise FormatError(f"{path}:{lineno}: expected 12 numbers, got {len(tokens)}")
            try:
                m = np.array([float(t) for t in tokens]).reshape(3, 4)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            rot = m[:, :3]
            if np.abs(rot.T @ rot - np.eye(3)).max() > orthonormal_tol or np.linalg.det(rot) <= 0:
                raise FormatError(f"{path}:{lineno}: rotation block is not a rotation")
            poses.append(Pose(_nearest_rotation(rot), m[:, 3]))
    return poses


def write_poses(path: PathLike, poses: SequenceT[Pose]) -> None:
    with open(path, "w") as fh:
        for p in poses:
            m = np.hstack([p.rotation, p.translation[:, None]])
            fh.write(" ".join(repr(float(v)) for v in m.ravel()) + "\n")


def read_times(path: PathLike) -> np.ndarray:
    with open(path) as fh:
        try:
            return np.array([float(line) for line in fh if line.strip()])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def write_times(path: PathLike, times) -> None:
    with open(path, "w") as fh:
        for t in times:
            fh.write(f"{float(t)!r}\n")


class LazyFrames:
    """List-like view over velodyne files; frames are decoded on access."""

    def __init__(self, paths: list[Path], times: np.ndarray):
        self.paths = paths
        self.times = times

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int) -> PointCloudFrame:
        if i < 0:
            i += len(self.paths)
        try:
            return read_kitti_frame(self.paths[i], float(self.times[i]), i)
        except (OSError, FormatError) as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc


def load_kitti_sequence(root: PathLike, sequence: str = "00", limit: Optional[int] = None) -> Sequence:
    """Open a KITTI odometry sequence; point clouds are read lazily."""
    root = Path(root)
    seq_dir = root / "sequences" / sequence
    velo_dir = seq_dir / "velodyne"
    paths = sorted(velo_dir.glob("*.bin"))
    if not paths:
        raise FileNotFoundError(f"no velodyne files under {velo_dir}")
    for candidate in (root / "poses" / f"{sequence}.txt", seq_dir / "poses.txt"):
        if candidate.exists():
            poses = read_poses(candidate)
            break
    else:
        raise FileNotFoundError(f"no poses file for sequence {sequence} under {root}")
    if len(poses) != len(paths):
        raise FormatError(f"{len(paths)} velodyne files but {len(poses)} poses")
    times_path = seq_dir / "times.txt"
    if times_path.exists():
        times = read_times(times_path)
        if len(times) != len(paths):
            raise FormatError(f"{len(paths)} velodyne files but {len(times)} timestamps")
    else:
        times = KITTI_FRAME_PERIOD * np.arange(len(paths))
    if limit is not None:
        paths, poses, times = paths[:limit], poses[:limit], times[:limit]
    return Sequence(LazyFrames(paths, times), poses)


def write_sequence(root: PathLike, seq: Sequence, sequence: str = "00") -> Path:
    """Write a sequence in KITTI layout (used by the ``synth`` command)."""
    seq_dir = Path(root) / "sequences" / sequence
    velo_dir = seq_dir / "velodyne"
    velo_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq):
        write_kitti_frame(velo_dir / f"{i:06d}.bin", frame)
    write_poses(seq_dir / "poses.txt", seq.poses)
    write_times(seq_dir / "times.txt", seq.timestamps)
    return seq_dir
