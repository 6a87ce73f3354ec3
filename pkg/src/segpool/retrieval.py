"""Descriptor database with top-1 cosine retrieval and a recency exclusion window."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .aggregation import read_descriptors, write_descriptors
from .errors import FormatError, OrderingError

EXCLUSION_SECONDS = 30.0


@dataclass(frozen=True)
class DatabaseEntry:
    descriptor: np.ndarray
    timestamp: float
    position: np.ndarray
    frame_index: int


@dataclass(frozen=True)
class QueryResult:
    matched_index: Optional[int]  # frame_index of the best entry
    distance: Optional[float]  # cosine distance, 1 - <q, g>
    positive: bool

    @property
    def has_match(self) -> bool:
        return self.matched_index is not None


class Database:
    """Time-ordered descriptor store. Search is an exact linear scan."""

    def __init__(self, dim: Optional[int] = None, exclusion_seconds: float = EXCLUSION_SECONDS):
        self.dim = dim
        self.exclusion_seconds = exclusion_seconds
        self._desc: list = []
        self._times: list = []
        self._pos: list = []
        self._frames: list = []
        self._stacked: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._desc)

    def insert(self, entry: DatabaseEntry) -> None:
        if self._times and entry.timestamp < self._times[-1]:
            raise OrderingError(
                f"frame {entry.frame_index} at t={entry.timestamp} precedes last entry t={self._times[-1]}"
            )
        g = np.asarray(entry.descriptor, dtype=np.float64)
        if self.dim is None:
            self.dim = len(g)
        elif len(g) != self.dim:
            raise FormatError(f"descriptor length {len(g)} != database dimension {self.dim}")
        self._desc.append(g)
        self._times.append(float(entry.timestamp))
        self._pos.append(np.asarray(entry.position, dtype=np.float64))
        self._frames.append(int(entry.frame_index))
        self._stacked = None

    def add(self, descriptor, timestamp, position, frame_index) -> None:
        self.insert(DatabaseEntry(descriptor, timestamp, position, frame_index))

    @property
    def descriptors(self) -> np.ndarray:
        if self._stacked is None:
            self._stacked = np.array(self._desc).reshape(len(self._desc), -1)
        return self._stacked

    @property
    def timestamps(self) -> np.ndarray:
        return np.array(self._times)

    @property
    def positions(self) -> np.ndarray:
        return np.array(self._pos).reshape(-1, 3)

    @property
    def frame_indices(self) -> np.ndarray:
        return np.array(self._frames, dtype=np.int64)

    def eligible(self, t_query: float) -> int:
        """Number of leading entries at least ``exclusion_seconds`` older than ``t_query``."""
        return int(np.searchsorted(self.timestamps, t_query - self.exclusion_seconds, side="right"))

    def nearest(self, q: np.ndarray, t_query: float) -> tuple[Optional[int], Optional[float]]:
        """(row, cosine distance) of the best eligible entry; earliest wins ties."""
        n = self.eligible(t_query)
        if n == 0:
            return None, None
        dist = 1.0 - self.descriptors[:n] @ np.asarray(q, dtype=np.float64)
        row = int(np.argmin(dist))
        return row, float(dist[row])

    def query(self, q: np.ndarray, t_query: float, tau: float) -> QueryResult:
        row, dist = self.nearest(q, t_query)
        if row is None:
            return QueryResult(None, None, False)
        return QueryResult(self._frames[row], dist, dist < tau)

    def save(self, path, d: int) -> None:
        """Descriptor file plus a ``.index`` sidecar of (frame, time, x, y, z) lines."""
        path = Path(path)
        write_descriptors(path, self.descriptors if len(self) else np.zeros((0, d * d)), d)
        with open(path.with_suffix(".index"), "w") as fh:
            for f, t, p in zip(self._frames, self._times, self._pos):
                fh.write(f"{int(f)} {float(t)!r} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")

    @classmethod
    def load(cls, path, exclusion_seconds: float = EXCLUSION_SECONDS) -> "Database":
        path = Path(path)
        desc = read_descriptors(path)
        rows = [line.split() for line in path.with_suffix(".index").read_text().splitlines() if line.strip()]
        if len(rows) != len(desc):
            raise FormatError(f"{path}: {len(desc)} descriptors but {len(rows)} index lines")
        db = cls(desc.shape[1] if len(desc) else None, exclusion_seconds)
        for g, row in zip(desc, rows):
            if len(row) != 5:
                raise FormatError(f"{path.with_suffix('.index')}: expected 5 fields, got {len(row)}")
            db.add(g, float(row[1]), [float(v) for v in row[2:]], int(row[0]))
        return db
