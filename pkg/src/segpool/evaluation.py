"""Retrieval scoring (PR curve, F1max, extended precision) and input perturbations.

A top-1 retrieval with distance below the threshold is a positive. A positive
whose match lies within ``tp_distance`` of the query is a true positive and one
beyond ``fp_distance`` a false positive; positives in between count as neither.
A negative is a false negative when an eligible database entry lay within
``tp_distance`` (a revisit), else a true negative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NoRevisitError
from .ingest import PointCloudFrame, Pose
from .retrieval import Database, QueryResult

TP_DISTANCE = 3.0
FP_DISTANCE = 20.0


class Label(str, Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"
    TN = "TN"
    IGNORED = "ignored"


def label_query(result: QueryResult, q_pos, db: Database, t_query: float,
                tp_distance: float = TP_DISTANCE, fp_distance: float = FP_DISTANCE) -> Label:
    q_pos = np.asarray(q_pos, dtype=np.float64)
    if result.positive:
        row = int(np.flatnonzero(db.frame_indices == result.matched_index)[0])
        d = np.linalg.norm(db.positions[row] - q_pos)
        if d <= tp_distance:
            return Label.TP
        if d > fp_distance:
            return Label.FP
        return Label.IGNORED
    n = db.eligible(t_query)
    revisit = n > 0 and np.linalg.norm(db.positions[:n] - q_pos, axis=1).min() <= tp_distance
    return Label.FN if revisit else Label.TN


@dataclass
class QueryRecord:
    """Top-1 outcome of one query, independent of the threshold."""

    frame_index: int
    position: np.ndarray
    distance: Optional[float]  # None when there was no candidate
    match_frame: Optional[int] = None
    match_error: Optional[float] = None  # meters between query and match
    revisit: bool = False


@dataclass
class PRCurve:
    taus: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def rows(self):
        return zip(self.taus, self.precision, self.recall)


@dataclass
class EvalReport:
    f1_max: float
    ep: float
    pr: PRCurve
    tau_f1: float
    counts: dict  # TP/FP/FN/TN/ignored at the F1max threshold
    precision_r0: float
    recall_p100: float
    tau_p100: float
    decisions: list = field(default_factory=list)  # (frame, x, y, label) at tau_p100
    num_queries: int = 0
    num_revisits: int = 0

    def summary(self) -> dict:
        return {
            "f1_max": self.f1_max,
            "ep": self.ep,
            "precision_r0": self.precision_r0,
            "recall_p100": self.recall_p100,
            "tau_f1": self.tau_f1,
            "tau_p100": self.tau_p100,
            "counts_at_f1": self.counts,
            "num_queries": self.num_queries,
            "num_revisits": self.num_revisits,
        }


def collect_queries(db: Database, descriptors: dict, frames: list, timestamps, positions,
                    tp_distance: float = TP_DISTANCE) -> list:
    """Run top-1 retrieval for every frame against ``db``.

    ``descriptors`` maps frame index to descriptor; frames missing from it
    (no segments) become queries without a candidate.
    """
    records = []
    db_pos = db.positions
    for k, t, pos in zip(frames, timestamps, positions):
        pos = np.asarray(pos, dtype=np.float64)
        n = db.eligible(t)
        revisit = bool(n > 0 and np.linalg.norm(db_pos[:n] - pos, axis=1).min() <= tp_distance)
        g = descriptors.get(k)
        if g is None or n == 0:
            records.append(QueryRecord(k, pos, None, None, None, revisit))
            continue
        row, dist = db.nearest(g, t)
        records.append(QueryRecord(k, pos, dist, int(db.frame_indices[row]),
                                   float(np.linalg.norm(db_pos[row] - pos)), revisit))
    return records


def _label_arrays(records: list, taus: np.ndarray, tp_distance: float, fp_distance: float):
    n = len(records)
    dist = np.array([np.inf if r.distance is None else r.distance for r in records])
    err = np.array([np.inf if r.match_error is None else r.match_error for r in records])
    revisit = np.array([r.revisit for r in records], dtype=bool)
    positive = dist[None, :] < taus[:, None]  # (n_tau, n)
    near = err <= tp_distance
    far = err > fp_distance
    tp = positive & near
    fp = positive & far
    ignored = positive & ~near & ~far
    fn = ~positive & revisit
    tn = ~positive & ~revisit
    assert n == 0 or np.all(tp.astype(int) + fp + ignored + fn + tn == 1)
    return tp, fp, fn, tn, ignored


def sweep(records: list, tp_distance: float = TP_DISTANCE, fp_distance: float = FP_DISTANCE) -> EvalReport:
    """Score every threshold that changes a decision.

    Thresholds are the distinct top-1 distances plus one just above the
    largest (everything positive); a distance equal to the threshold is a
    negative. Precision with no labeled positives is taken as 1.
    """
    if not any(r.revisit for r in records):
        raise NoRevisitError("sequence has no revisits; recall is undefined (use a sequence with loops)")
    finite = np.array([r.distance for r in records if r.distance is not None], dtype=np.float64)
    taus = np.unique(finite)
    top = np.nextafter(taus[-1], np.inf) if len(taus) else 0.0
    taus = np.append(taus, top)

    tp, fp, fn, tn, ignored = _label_arrays(records, taus, tp_distance, fp_distance)
    ntp, nfp, nfn = tp.sum(1), fp.sum(1), fn.sum(1)
    pred = ntp + nfp
    precision = np.where(pred > 0, ntp / np.maximum(pred, 1), 1.0)
    recall = np.where(ntp + nfn > 0, ntp / np.maximum(ntp + nfn, 1), 0.0)
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1), 0.0)

    best = int(np.argmax(f1))
    first_pos = np.flatnonzero(pred > 0)
    p_r0 = float(precision[first_pos[0]]) if len(first_pos) else 0.0
    perfect = np.flatnonzero((nfp == 0) & (pred > 0))
    if len(perfect):
        i100 = int(perfect[np.argmax(recall[perfect])])
        r_p100 = float(recall[i100])
    else:
        i100, r_p100 = 0, 0.0

    def counts_at(i):
        return {"TP": int(ntp[i]), "FP": int(nfp[i]), "FN": int(nfn[i]),
                "TN": int(tn[i].sum()), "ignored": int(ignored[i].sum())}

    names = np.array(["TP", "FP", "FN", "TN", "ignored"])
    stacked = np.stack([tp[i100], fp[i100], fn[i100], tn[i100], ignored[i100]])
    decisions = [(r.frame_index, float(r.position[0]), float(r.position[1]), str(names[stacked[:, j]][0]))
                 for j, r in enumerate(records)]

    return EvalReport(
        f1_max=float(f1[best]),
        ep=(p_r0 + r_p100) / 2,
        pr=PRCurve(taus, precision, recall),
        tau_f1=float(taus[best]),
        counts=counts_at(best),
        precision_r0=p_r0,
        recall_p100=r_p100,
        tau_p100=float(taus[i100]),
        decisions=decisions,
        num_queries=len(records),
        num_revisits=int(sum(r.revisit for r in records)),
    )


def f1_scores(report: EvalReport) -> np.ndarray:
    p, r = report.pr.precision, report.pr.recall
    d = p + r
    return np.where(d > 0, 2 * p * r / np.where(d > 0, d, 1), 0.0)


# ----------------------------------------------------------------------------
# perturbations


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_frame(frame: PointCloudFrame, angle: float) -> PointCloudFrame:
    """Rotate every point about the sensor z axis by ``angle`` radians."""
    if angle == 0:
        return frame.with_points(frame.points.copy())
    return frame.with_points(frame.points @ rotation_z(angle).T)


def rotate_pose(pose: Pose, angle: float) -> Pose:
    """Sensor pose that matches a frame rotated by ``angle`` (world points unchanged)."""
    return pose @ Pose(rotation_z(-angle), np.zeros(3))


def occlude_frame(frame: PointCloudFrame, theta_occ: float, azimuth_start: float) -> PointCloudFrame:
    """Remove points with azimuth in [start, start + theta_occ) degrees (mod 360)."""
    if not 0 <= theta_occ <= 360:
        raise ValueError(f"theta_occ must be in [0, 360], got {theta_occ}")
    if theta_occ == 0:
        return frame.subset(slice(None))
    if theta_occ >= 360:
        return frame.subset(np.zeros(len(frame.points), dtype=bool))
    az = np.degrees(np.arctan2(frame.points[:, 1], frame.points[:, 0]))
    rel = np.mod(az - azimuth_start, 360.0)
    return frame.subset(rel >= theta_occ)


# ----------------------------------------------------------------------------
# output files


def write_pr_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "precision", "recall"])
        for row in report.pr.rows():
            w.writerow([repr(float(v)) for v in row])


def write_decisions_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "x", "y", "label"])
        for row in report.decisions:
            w.writerow(row)


def format_report(name: str, report: EvalReport) -> str:
    c = report.counts
    return "\n".join([
        f"[{name}]",
        f"F1max        {report.f1_max:.4f}  (tau={report.tau_f1:.6f})",
        f"EP           {report.ep:.4f}",
        f"P@R0         {report.precision_r0:.4f}",
        f"R@P100       {report.recall_p100:.4f}  (tau={report.tau_p100:.6f})",
        f"queries      {report.num_queries}  revisits {report.num_revisits}",
        f"at F1max     TP={c['TP']} FP={c['FP']} FN={c['FN']} TN={c['TN']} ignored={c['ignored']}",
    ])


def save_report(out_dir, name: str, report: EvalReport) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{name}.txt").write_text(format_report(name, report) + "\n")
    write_pr_csv(out / f"pr_{name}.csv", report)
    write_decisions_csv(out / f"decisions_{name}.csv", report)
