"""Frame-by-frame description: segments -> features -> pooling -> global descriptor.

The per-frame part (segmentation, structural features, hulls) is stateless and
may run in worker processes; the temporal window is advanced in frame order.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .aggregation import global_descriptor
from .config import PipelineConfig
from .features import DescriptorExtractor, make_extractor
from .hull import convex_hull, mtd_matrix
from .ingest import PointCloudFrame, Pose, Sequence
from .segmentation import SegmentSet, segment_frame
from .spatiotemporal import (FrameWindow, build_spatial_graph, pooled_features, spatial_pool,
                             temporal_pool)


@dataclass
class PreparedFrame:
    frame_index: int
    timestamp: float
    segments: SegmentSet
    features: np.ndarray
    hulls: list
    timings: dict = field(default_factory=dict)


@dataclass
class FrameResult:
    frame_index: int
    timestamp: float
    num_segments: int
    descriptors: dict  # mode -> unit vector; empty when the frame has no segments
    timings: dict
    segments: Optional[SegmentSet] = None
    features: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    links: Optional[np.ndarray] = None

    @property
    def empty(self) -> bool:
        return self.num_segments == 0


def prepare_segments(segments: SegmentSet, extractor: DescriptorExtractor, timestamp: float = 0.0,
                     timings: Optional[dict] = None) -> PreparedFrame:
    timings = dict(timings or {})
    t0 = time.perf_counter()
    feats = extractor.extract(segments)
    t1 = time.perf_counter()
    hulls = [convex_hull(s.points).vertices for s in segments]
    timings["features"] = t1 - t0
    timings["hulls"] = time.perf_counter() - t1
    return PreparedFrame(segments.source_frame_index, timestamp, segments, feats, hulls, timings)


def prepare_frame(frame: PointCloudFrame, cfg: PipelineConfig,
                  extractor: Optional[DescriptorExtractor] = None) -> PreparedFrame:
    extractor = extractor or make_extractor(cfg.features.extractor)
    t0 = time.perf_counter()
    segments = segment_frame(frame, cfg.segmentation)
    timings = {"segmentation": time.perf_counter() - t0}
    return prepare_segments(segments, extractor, frame.timestamp, timings)


def _prepare_worker(args):
    frame, cfg = args
    return prepare_frame(frame, cfg)


class Describer:
    """Stateful describer; feed frames in order with :meth:`step`."""

    def __init__(self, cfg: Optional[PipelineConfig] = None, modes: Iterable[str] = ("spatiotemporal",),
                 extractor: Optional[DescriptorExtractor] = None, keep_intermediate: bool = False,
                 collect_weights: bool = False):
        self.cfg = cfg or PipelineConfig()
        self.modes = tuple(modes)
        self.extractor = extractor or make_extractor(self.cfg.features.extractor)
        self.keep_intermediate = keep_intermediate
        self.collect_weights = collect_weights
        self.spatial_weights: list = []
        self.temporal_weights: list = []
        self.reset()

    def reset(self) -> None:
        self.window = FrameWindow(self.cfg.pooling)

    def step(self, prep: PreparedFrame, pose: Optional[Pose] = None) -> FrameResult:
        pc = self.cfg.pooling
        timings = dict(prep.timings)
        t0 = time.perf_counter()
        feats = prep.features
        segs = prep.segments
        self.window.push(prep.frame_index, feats, segs.centroids, pose)
        descriptors = {}
        phi = psi = None
        if len(segs):
            graph = build_spatial_graph(mtd_matrix(prep.hulls), pc.k_s)
            phi = spatial_pool(graph, feats, pc.beta, self.spatial_weights if self.collect_weights else None)
            psi = temporal_pool(self.window, beta=pc.beta,
                                weights_out=self.temporal_weights if self.collect_weights else None)
            t1 = time.perf_counter()
            timings["pooling"] = t1 - t0
            for mode in self.modes:
                f_b = pooled_features(mode, feats, phi, psi)
                descriptors[mode] = global_descriptor(feats, f_b, self.cfg.aggregation.alpha)
            timings["aggregation"] = time.perf_counter() - t1
        else:
            timings["pooling"] = time.perf_counter() - t0
            timings["aggregation"] = 0.0
        res = FrameResult(prep.frame_index, prep.timestamp, len(segs), descriptors, timings)
        if self.keep_intermediate:
            res.segments, res.features, res.phi, res.psi = segs, feats, phi, psi
            res.links = self.window.states[-1].links
        return res

    def describe(self, frame: PointCloudFrame, pose: Optional[Pose] = None) -> FrameResult:
        return self.step(prepare_frame(frame, self.cfg, self.extractor), pose)

    def describe_sequence(self, seq: Sequence,
                          transform: Optional[Callable[[int, PointCloudFrame, Pose], tuple]] = None,
                          progress: Optional[Callable[[FrameResult], None]] = None) -> list:
        """Describe every frame in order.

        ``transform(k, frame, pose) -> (frame, pose)`` perturbs inputs before
        description (used by the robustness tests).
        """
        self.reset()

        def inputs():
            for k in range(len(seq)):
                frame, pose = seq.frames[k], seq.poses[k]
                if transform is not None:
                    frame, pose = transform(k, frame, pose)
                yield frame, pose

        results = []
        workers = self.cfg.workers
        if workers > 1 and self.cfg.features.extractor == "default":
            poses = []

            def tagged():
                for frame, pose in inputs():
                    poses.append(pose)
                    yield frame, self.cfg

            with ProcessPoolExecutor(max_workers=workers) as ex:
                for k, prep in enumerate(ex.map(_prepare_worker, tagged(), chunksize=4)):
                    results.append(self.step(prep, poses[k]))
                    if progress:
                        progress(results[-1])
        else:
            for frame, pose in inputs():
                results.append(self.step(prepare_frame(frame, self.cfg, self.extractor), pose))
                if progress:
                    progress(results[-1])
        return results
