"""Spatial and temporal pooling of structural features.

Spatial pooling averages each segment's nearest neighbours (by hull distance)
inside one frame. Temporal pooling averages the segment's matches in the
previous ``k_t`` frames, found by chaining frame-to-frame correspondences.
Both use softmax weights ``exp(-beta * distance)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ingest import Pose

ABLATION_MODES = ("structural", "spatial", "temporal", "spatiotemporal")


@dataclass
class PoolingConfig:
    k_s: int = 5
    k_t: int = 3
    beta: float = 0.1
    radius_r: float = 1.0
    knn_feature_k: int = 8


@dataclass
class SegmentGraph:
    """Directed kNN graph; ``neighbors[i]`` is ordered nearest first."""

    neighbors: list
    distances: list
    k_s: int = 5

    @property
    def num_vertices(self) -> int:
        return len(self.neighbors)

    @property
    def edges(self) -> list:
        return [(i, int(j), float(d)) for i, (nb, ds) in enumerate(zip(self.neighbors, self.distances))
                for j, d in zip(nb, ds)]


def softmax_weights(distances: np.ndarray, beta: float) -> np.ndarray:
    """exp(-beta * d) normalized to sum to one."""
    d = np.asarray(distances, dtype=np.float64)
    e = np.exp(-beta * (d - d.min()))
    return e / e.sum()


def weighted_mean(weights: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``weights @ rows`` anchored at the first row, so identical rows come back exactly."""
    return rows[0] + weights @ (rows - rows[0])


def build_spatial_graph(distance_matrix: np.ndarray, k_s: int = 5) -> SegmentGraph:
    """Connect each vertex to its ``k_s`` nearest others; ties go to the lower id."""
    m = len(distance_matrix)
    neighbors, distances = [], []
    ids = np.arange(m)
    for i in range(m):
        others = ids[ids != i]
        d = distance_matrix[i, others]
        order = np.lexsort((others, d))[: min(k_s, m - 1)]
        neighbors.append(others[order])
        distances.append(d[order])
    return SegmentGraph(neighbors, distances, k_s)


def spatial_pool(graph: SegmentGraph, feats: np.ndarray, beta: float = 0.1,
                 weights_out: Optional[list] = None) -> np.ndarray:
    """Softmax-weighted neighbour average; an isolated vertex keeps its own feature."""
    phi = np.empty_like(feats)
    for i, (nb, d) in enumerate(zip(graph.neighbors, graph.distances)):
        if len(nb) == 0:
            phi[i] = feats[i]
            continue
        w = softmax_weights(d, beta)
        if weights_out is not None:
            weights_out.append(w)
        phi[i] = weighted_mean(w, feats[nb])
    return phi


def correspond_frames(prev_feats: np.ndarray, prev_centroids: np.ndarray,
                      feats: np.ndarray, centroids: np.ndarray,
                      relative_pose: Pose, cfg: Optional[PoolingConfig] = None) -> np.ndarray:
    """Match each current segment to one in the previous frame, or -1.

    Candidates must be among the ``knn_feature_k`` nearest previous features
    and have a centroid within ``radius_r`` of the current centroid mapped into
    the previous sensor frame. The winner has the smallest feature distance,
    then the smallest centroid distance, then the lowest id.
    """
    cfg = cfg or PoolingConfig()
    m = len(feats)
    out = np.full(m, -1, dtype=np.int64)
    if m == 0 or len(prev_feats) == 0:
        return out
    prev_ids = np.arange(len(prev_feats))
    moved = relative_pose.apply(centroids)
    fdist = np.linalg.norm(feats[:, None, :] - prev_feats[None, :, :], axis=-1)
    cdist = np.linalg.norm(moved[:, None, :] - prev_centroids[None, :, :], axis=-1)
    k = min(cfg.knn_feature_k, len(prev_feats))
    for i in range(m):
        knn = np.lexsort((prev_ids, fdist[i]))[:k]
        cand = knn[cdist[i, knn] <= cfg.radius_r]
        if len(cand) == 0:
            continue
        best = np.lexsort((cand, cdist[i, cand], fdist[i, cand]))[0]
        out[i] = cand[best]
    return out


@dataclass
class FrameState:
    frame_index: int
    features: np.ndarray
    centroids: np.ndarray
    pose: Pose
    links: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


class FrameWindow:
    """The current frame plus up to ``k_t`` predecessors, with their links.

    ``links`` of a state maps its segments to segments of the state before it.
    Frames must be pushed in order; empty frames are pushed too so that
    correspondences break across them.
    """

    def __init__(self, cfg: Optional[PoolingConfig] = None):
        self.cfg = cfg or PoolingConfig()
        self.states: deque = deque(maxlen=self.cfg.k_t + 1)

    def __len__(self) -> int:
        return len(self.states)

    def push(self, frame_index: int, features: np.ndarray, centroids: np.ndarray,
             pose: Optional[Pose] = None) -> FrameState:
        pose = pose or Pose.identity()
        state = FrameState(frame_index, features, centroids, pose)
        if self.states:
            prev = self.states[-1]
            state.links = correspond_frames(prev.features, prev.centroids, features, centroids,
                                            pose.relative_to(prev.pose), self.cfg)
        else:
            state.links = np.full(len(features), -1, dtype=np.int64)
        self.states.append(state)
        return state

    def correspond(self, frame_l: int) -> np.ndarray:
        """Stored correspondence map from frame ``frame_l`` to its predecessor."""
        for st in self.states:
            if st.frame_index == frame_l:
                return st.links
        raise KeyError(f"frame {frame_l} is not in the window")

    def chains(self) -> list:
        """For each segment of the newest frame: [(age, segment id), ...], age 1 = previous frame."""
        newest_first = list(reversed(self.states))
        out = []
        for i in range(len(newest_first[0].features)):
            chain = []
            idx = i
            for age in range(1, len(newest_first)):
                j = newest_first[age - 1].links[idx] if len(newest_first[age - 1].links) else -1
                if j < 0:
                    break
                chain.append((age, int(j)))
                idx = j
            out.append(chain)
        return out


def temporal_pool(window: FrameWindow, chains: Optional[list] = None, beta: float = 0.1,
                  weights_out: Optional[list] = None) -> np.ndarray:
    """Softmax (over feature distance) average of each segment's chained matches.

    A segment without any match keeps its own feature.
    """
    newest_first = list(reversed(window.states))
    feats = newest_first[0].features
    chains = window.chains() if chains is None else chains
    psi = np.empty_like(feats)
    for i, chain in enumerate(chains):
        if not chain:
            psi[i] = feats[i]
            continue
        matched = np.array([newest_first[age].features[j] for age, j in chain])
        d = np.linalg.norm(matched - feats[i], axis=1)
        w = softmax_weights(d, beta)
        if weights_out is not None:
            weights_out.append(w)
        psi[i] = weighted_mean(w, matched)
    return psi


def spatiotemporal_feature(phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return (phi + psi) / 2


def pooled_features(mode: str, f_a: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """The f_b used for each ablation mode."""
    if mode == "structural":
        return f_a
    if mode == "spatial":
        return phi
    if mode == "temporal":
        return psi
    if mode == "spatiotemporal":
        return spatiotemporal_feature(phi, psi)
    raise ValueError(f"unknown mode {mode!r}; expected one of {ABLATION_MODES}")
