"""Command-line entry point: ``segpool <command> [-c config.yaml] [--set key=value ...]``.

Commands
  synth       render a synthetic sequence to disk in KITTI layout
  describe    describe a sequence; write descriptor databases and a timing log
  evaluate    score every ablation mode (from a stored database or on the fly)
  robustness  occlusion sweep and random-rotation test

Every run writes ``manifest_<command>.json`` to the output directory with the
resolved config, its hash, library versions, seeds and skipped frames.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .benchmark import evaluate_database, evaluate_results, run_robustness
from .config import PipelineConfig, apply_overrides, config_from_dict, load_config
from .errors import SegpoolError
from .evaluation import save_report
from .ingest import Sequence, load_kitti_sequence, write_sequence
from .pipeline import Describer
from .retrieval import Database
from .synthetic import SceneSpec, generate_synthetic_sequence, looped_benchmark_spec

log = logging.getLogger("segpool")

TIMING_FIELDS = ("segmentation", "features", "hulls", "pooling", "aggregation")


def scene_spec(cfg: PipelineConfig) -> SceneSpec:
    ds = cfg.dataset
    if ds.scene_file:
        spec = SceneSpec.load(ds.scene_file)
    elif ds.scene:
        spec = SceneSpec.from_dict(ds.scene)
    else:
        spec = looped_benchmark_spec()
    if ds.limit is not None:
        spec = replace(spec, num_frames=min(spec.num_frames, ds.limit))
    spec.validate()
    return spec


def load_dataset(cfg: PipelineConfig) -> Sequence:
    ds = cfg.dataset
    if ds.kind == "kitti":
        if not ds.root:
            raise SegpoolError("dataset.root is required for kitti datasets")
        return load_kitti_sequence(ds.root, ds.sequence, ds.limit)
    return generate_synthetic_sequence(scene_spec(cfg), seed=ds.seed)


def database_path(directory, mode: str) -> Path:
    return Path(directory) / f"descriptors_{mode}.bin"


def write_manifest(out: Path, command: str, cfg: PipelineConfig, **extra) -> Path:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "versions": {
            "segpool": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seeds": {
            "dataset": cfg.dataset.seed,
            "segmentation": cfg.segmentation.seed,
            "evaluation": cfg.evaluation.seed,
        },
    }
    manifest.update(extra)
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def write_timings(path: Path, results: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "num_segments", *TIMING_FIELDS, "total"])
        for r in results:
            t = [r.timings.get(k, 0.0) for k in TIMING_FIELDS]
            w.writerow([r.frame_index, r.num_segments, *(f"{v:.6f}" for v in t), f"{sum(t):.6f}"])


def _describe(cfg: PipelineConfig, seq: Sequence, modes) -> list:
    def progress(res):
        if res.empty:
            log.warning("frame %d has no segments; skipped", res.frame_index)
        elif res.frame_index % 50 == 0:
            log.info("frame %d: %d segments", res.frame_index, res.num_segments)

    return Describer(cfg, modes=modes).describe_sequence(seq, progress=progress)


def cmd_synth(cfg: PipelineConfig, out: Path) -> dict:
    spec = scene_spec(cfg)
    seq = generate_synthetic_sequence(spec, seed=cfg.dataset.seed)
    seq_dir = write_sequence(out, seq, cfg.dataset.sequence)
    spec.save(out / "scene.yaml")
    log.info("wrote %d frames to %s", len(seq), seq_dir)
    return {"frames": len(seq), "sequence_dir": str(seq_dir)}


def cmd_describe(cfg: PipelineConfig, out: Path) -> dict:
    seq = load_dataset(cfg)
    modes = cfg.evaluation.modes
    results = _describe(cfg, seq, modes)
    target = Path(cfg.database) if cfg.database else out
    target.mkdir(parents=True, exist_ok=True)
    d = Describer(cfg).extractor.dimension
    for mode in modes:
        db = Database(exclusion_seconds=cfg.retrieval.exclusion_seconds)
        for r in results:
            if mode in r.descriptors:
                db.add(r.descriptors[mode], r.timestamp, seq.ground_truth_positions[r.frame_index], r.frame_index)
        db.save(database_path(target, mode), d)
    write_timings(out / "timings.csv", results)
    skipped = [r.frame_index for r in results if r.empty]
    return {"frames": len(results), "skipped_frames": skipped, "database": str(target)}


def cmd_evaluate(cfg: PipelineConfig, out: Path) -> dict:
    reports = {}
    skipped = None
    if cfg.database:
        for mode in cfg.evaluation.modes:
            path = database_path(cfg.database, mode)
            if not path.exists():
                raise FileNotFoundError(f"database not found: {path}")
            reports[mode] = evaluate_database(Database.load(path, cfg.retrieval.exclusion_seconds), cfg)
    else:
        seq = load_dataset(cfg)
        results = _describe(cfg, seq, cfg.evaluation.modes)
        skipped = [r.frame_index for r in results if r.empty]
        for mode in cfg.evaluation.modes:
            reports[mode] = evaluate_results(results, seq, cfg, mode)
    for mode, rep in reports.items():
        save_report(out, mode, rep)
        print(f"{mode:15s} F1max {rep.f1_max:.4f}  EP {rep.ep:.4f}")
    (out / "summary.json").write_text(
        json.dumps({m: r.summary() for m, r in reports.items()}, indent=2, sort_keys=True) + "\n")
    extra = {"modes": list(reports)}
    if skipped is not None:
        extra["skipped_frames"] = skipped
    return extra


def cmd_robustness(cfg: PipelineConfig, out: Path, mode: str) -> dict:
    seq = load_dataset(cfg)
    res = run_robustness(seq, cfg, mode=mode, out_dir=out)
    print(res.table())
    return {"mode": mode, "rotation_delta": res.rotation_delta}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML or JSON config file (defaults apply when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set pooling.k_s=7 (repeatable; wins over the file)")
    common.add_argument("-o", "--output-dir", help="output directory (overrides output_dir)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="segpool", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"segpool {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic sequence in KITTI layout")
    p = sub.add_parser("describe", parents=[common], help="describe a sequence into descriptor databases")
    p.add_argument("--database", help="directory for the descriptor databases (default: output dir)")
    p = sub.add_parser("evaluate", parents=[common], help="PR curves, F1max and EP per ablation mode")
    p.add_argument("--database", help="directory with databases from 'describe'; omit to describe on the fly")
    p = sub.add_parser("robustness", parents=[common], help="occlusion sweep and rotation test")
    p.add_argument("--mode", default="spatiotemporal", help="feature mode to test (default: spatiotemporal)")
    sub.add_parser("show-config", parents=[common], help="print the resolved config as YAML")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    if getattr(args, "database", None):
        overrides.append(f"database={args.database}")
    return apply_overrides(cfg, overrides)


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "show-config":
            print(yaml.safe_dump(cfg.to_dict(), sort_keys=False), end="")
            return 0
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            extra = cmd_synth(cfg, out)
        elif args.command == "describe":
            extra = cmd_describe(cfg, out)
        elif args.command == "evaluate":
            extra = cmd_evaluate(cfg, out)
        else:
            extra = cmd_robustness(cfg, out, args.mode)
        write_manifest(out, args.command, cfg, **extra)
    except (SegpoolError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
