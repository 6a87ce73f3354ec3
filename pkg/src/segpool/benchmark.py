"""End-to-end runs: ablation benchmark and robustness sweeps over one sequence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .evaluation import (EvalReport, collect_queries, occlude_frame, rotate_frame, rotate_pose, save_report,
                         sweep)
from .ingest import Sequence
from .pipeline import Describer
from .retrieval import Database

log = logging.getLogger(__name__)


def build_database(results: list, seq: Sequence, mode: str, exclusion_seconds: float) -> Database:
    db = Database(exclusion_seconds=exclusion_seconds)
    for res in results:
        if mode in res.descriptors:
            db.add(res.descriptors[mode], res.timestamp, seq.ground_truth_positions[res.frame_index],
                   res.frame_index)
    return db


def evaluate_results(results: list, seq: Sequence, cfg: PipelineConfig, mode: str) -> EvalReport:
    ev = cfg.evaluation
    db = build_database(results, seq, mode, cfg.retrieval.exclusion_seconds)
    kept = [r for r in results if mode in r.descriptors]  # empty frames are skipped, not queried
    descriptors = {r.frame_index: r.descriptors[mode] for r in kept}
    frames = [r.frame_index for r in kept]
    records = collect_queries(db, descriptors, frames, [r.timestamp for r in kept],
                              seq.ground_truth_positions[frames], ev.tp_distance)
    return sweep(records, ev.tp_distance, ev.fp_distance)


def evaluate_database(db: Database, cfg: PipelineConfig) -> EvalReport:
    """Score a stored database, querying every entry against the older ones."""
    ev = cfg.evaluation
    frames = [int(f) for f in db.frame_indices]
    descriptors = dict(zip(frames, db.descriptors))
    records = collect_queries(db, descriptors, frames, db.timestamps, db.positions, ev.tp_distance)
    return sweep(records, ev.tp_distance, ev.fp_distance)


@dataclass
class BenchmarkResult:
    reports: dict  # mode -> EvalReport
    results: list = field(default_factory=list, repr=False)

    def f1(self, mode: str) -> float:
        return self.reports[mode].f1_max


def run_benchmark(seq: Sequence, cfg: Optional[PipelineConfig] = None, out_dir=None,
                  modes=None, transform=None, describer: Optional[Describer] = None) -> BenchmarkResult:
    """Describe ``seq`` once and score every requested feature mode."""
    cfg = cfg or PipelineConfig()
    modes = tuple(modes or cfg.evaluation.modes)
    describer = describer or Describer(cfg, modes=modes)
    results = describer.describe_sequence(seq, transform=transform)
    reports = {}
    for mode in modes:
        reports[mode] = evaluate_results(results, seq, cfg, mode)
        log.info("%s: F1max=%.4f EP=%.4f", mode, reports[mode].f1_max, reports[mode].ep)
        if out_dir is not None:
            save_report(out_dir, mode, reports[mode])
    return BenchmarkResult(reports, results)


def occlusion_transform(theta: float, seed: int):
    def transform(k, frame, pose):
        start = np.random.default_rng([seed, 7, k]).uniform(0.0, 360.0)
        return occlude_frame(frame, theta, start), pose
    return transform


def rotation_transform(seed: int):
    """Random z-rotation per frame; the pose is rotated to match."""
    def transform(k, frame, pose):
        angle = np.random.default_rng([seed, 11, k]).uniform(-np.pi, np.pi)
        return rotate_frame(frame, angle), rotate_pose(pose, angle)
    return transform


@dataclass
class RobustnessResult:
    mode: str
    baseline: EvalReport
    occlusion: dict  # theta -> EvalReport
    rotation: Optional[EvalReport] = None

    @property
    def rotation_delta(self) -> Optional[float]:
        return None if self.rotation is None else self.rotation.f1_max - self.baseline.f1_max

    def table(self) -> str:
        base = self.baseline.f1_max
        lines = [f"mode {self.mode}", "theta_occ_deg  f1_max  change_pct"]
        for theta, rep in sorted(self.occlusion.items()):
            pct = 100.0 * (rep.f1_max - base) / base if base else float("nan")
            lines.append(f"{theta:13.1f}  {rep.f1_max:.4f}  {pct:+.2f}")
        if self.rotation is not None:
            lines.append(f"rotation f1_max {self.rotation.f1_max:.4f} delta {self.rotation_delta:+.4f}")
        return "\n".join(lines)


def run_robustness(seq: Sequence, cfg: Optional[PipelineConfig] = None, mode: str = "spatiotemporal",
                   baseline: Optional[EvalReport] = None, out_dir=None) -> RobustnessResult:
    cfg = cfg or PipelineConfig()
    ev = cfg.evaluation
    if baseline is None:
        baseline = run_benchmark(seq, cfg, modes=[mode]).reports[mode]
    occl = {}
    for theta in ev.occlusion_angles:
        if theta == 0:
            occl[0.0] = baseline
            continue
        occl[float(theta)] = run_benchmark(seq, cfg, modes=[mode],
                                           transform=occlusion_transform(theta, ev.seed)).reports[mode]
        log.info("occlusion %.0f deg: F1max=%.4f", theta, occl[float(theta)].f1_max)
    rot = None
    if ev.rotation:
        rot = run_benchmark(seq, cfg, modes=[mode], transform=rotation_transform(ev.seed)).reports[mode]
    result = RobustnessResult(mode, baseline, occl, rot)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "robustness.txt").write_text(result.table() + "\n")
        with open(out / "occlusion.csv", "w") as fh:
            fh.write("theta_occ,f1_max,ep\n")
            for theta, rep in sorted(occl.items()):
                fh.write(f"{theta!r},{rep.f1_max!r},{rep.ep!r}\n")
    return result
