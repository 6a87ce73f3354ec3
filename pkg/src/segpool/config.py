"""Pipeline configuration: one YAML/JSON file, sections mirroring the modules.

Every method constant lives here as a default. Unknown keys are rejected and
``section.key=value`` overrides (from the command line) are applied on top.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import yaml

from .errors import ParameterError
from .segmentation import SegmentationConfig
from .spatiotemporal import ABLATION_MODES, PoolingConfig

OCCLUSION_ANGLES = [0.0, 30.0, 45.0, 90.0, 135.0, 180.0]


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # "synthetic" or "kitti"
    root: Optional[str] = None
    sequence: str = "00"
    limit: Optional[int] = None
    scene: Optional[dict] = None  # SceneSpec fields; None selects the looped benchmark scene
    scene_file: Optional[str] = None
    seed: int = 0


@dataclass
class FeatureConfig:
    extractor: str = "default"


@dataclass
class AggregationConfig:
    alpha: float = 0.5


@dataclass
class RetrievalConfig:
    exclusion_seconds: float = 30.0


@dataclass
class EvaluationConfig:
    tp_distance: float = 3.0
    fp_distance: float = 20.0
    modes: list = field(default_factory=lambda: list(ABLATION_MODES))
    occlusion_angles: list = field(default_factory=lambda: list(OCCLUSION_ANGLES))
    rotation: bool = True
    seed: int = 0


@dataclass
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    pooling: PoolingConfig = field(default_factory=PoolingConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str = "out"
    database: Optional[str] = None
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> "PipelineConfig":
        s, p = self.segmentation, self.pooling
        checks = [
            (s.cluster_distance > 0, "segmentation.cluster_distance must be > 0"),
            (0 < s.min_points <= s.max_points, "segmentation needs 0 < min_points <= max_points"),
            (s.max_range > 0, "segmentation.max_range must be > 0"),
            (s.ransac_iterations > 0, "segmentation.ransac_iterations must be > 0"),
            (s.ransac_threshold > 0, "segmentation.ransac_threshold must be > 0"),
            (0 <= s.ransac_max_tilt_deg <= 90, "segmentation.ransac_max_tilt_deg must be in [0, 90]"),
            (0 <= s.ransac_min_inlier_fraction <= 1, "segmentation.ransac_min_inlier_fraction must be in [0, 1]"),
            (p.k_s >= 1, "pooling.k_s must be >= 1"),
            (p.k_t >= 0, "pooling.k_t must be >= 0"),
            (p.beta >= 0, "pooling.beta must be >= 0"),
            (p.radius_r > 0, "pooling.radius_r must be > 0"),
            (p.knn_feature_k >= 1, "pooling.knn_feature_k must be >= 1"),
            (self.aggregation.alpha > 0, "aggregation.alpha must be > 0"),
            (self.retrieval.exclusion_seconds >= 0, "retrieval.exclusion_seconds must be >= 0"),
            (0 < self.evaluation.tp_distance <= self.evaluation.fp_distance,
             "evaluation needs 0 < tp_distance <= fp_distance"),
            (set(self.evaluation.modes) <= set(ABLATION_MODES), f"evaluation.modes must be among {ABLATION_MODES}"),
            (all(0 <= a <= 360 for a in self.evaluation.occlusion_angles),
             "evaluation.occlusion_angles must be in [0, 360]"),
            (self.dataset.kind in ("synthetic", "kitti"), "dataset.kind must be 'synthetic' or 'kitti'"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParameterError(msg)
        return self


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ParameterError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ParameterError(f"unknown keys in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value or {}, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: Optional[dict]) -> PipelineConfig:
    return _build(PipelineConfig, data or {}, "").validate()


def load_config(path) -> PipelineConfig:
    return config_from_dict(yaml.safe_load(Path(path).read_text()) or {})


def apply_overrides(cfg: PipelineConfig, overrides: list) -> PipelineConfig:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ParameterError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ParameterError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ParameterError(f"unknown config key {key!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return config_from_dict(data)
