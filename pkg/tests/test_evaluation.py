import numpy as np
import pytest
from hypothesis import given, strategies as st

from segpool.errors import NoRevisitError
from segpool.evaluation import (Label, QueryRecord, f1_scores, label_query, occlude_frame, rotate_frame,
                                rotate_pose, sweep, write_decisions_csv, write_pr_csv)
from segpool.ingest import PointCloudFrame, Pose
from segpool.retrieval import Database, QueryResult


def _db_with_entry(pos):
    db = Database()
    db.add(np.array([1.0, 0.0]), 0.0, pos, 0)
    return db


@pytest.mark.parametrize("offset,label", [(1.0, Label.TP), (25.0, Label.FP), (10.0, Label.IGNORED),
                                          (3.0, Label.TP), (20.0, Label.IGNORED)])
def test_positive_labels_by_distance(offset, label):
    db = _db_with_entry([offset, 0, 0])
    assert label_query(QueryResult(0, 0.01, True), [0, 0, 0], db, 100.0) == label


def test_negative_labels():
    db = _db_with_entry([1.0, 0, 0])
    assert label_query(QueryResult(0, 0.5, False), [0, 0, 0], db, 100.0) == Label.FN
    assert label_query(QueryResult(0, 0.5, False), [10, 0, 0], db, 100.0) == Label.TN
    # the nearby entry is too recent to count as a revisit
    assert label_query(QueryResult(None, None, False), [0, 0, 0], db, 10.0) == Label.TN


def rec(i, dist, err, revisit):
    return QueryRecord(i, np.array([float(i), 0.0, 0.0]), dist, None if dist is None else 0, err, revisit)


# ten scripted queries: (top-1 distance, match error in m, revisit)
TABLE = [
    (0.10, 1.0, True), (0.20, 2.0, True), (0.25, 30.0, True), (0.30, 0.5, True), (0.35, 10.0, True),
    (0.40, 50.0, False), (0.50, 1.5, True), (0.60, 40.0, False), (None, None, False), (0.70, 2.5, True),
]


def oracle_curve(table, tp=3.0, fp=20.0):
    """Independent per-threshold loop over the scripted table."""
    dists = sorted({d for d, _, _ in table if d is not None})
    taus = dists + [np.nextafter(dists[-1], np.inf)]
    rows = []
    for tau in taus:
        ntp = nfp = nfn = 0
        for d, err, revisit in table:
            if d is not None and d < tau:
                if err <= tp:
                    ntp += 1
                elif err > fp:
                    nfp += 1
            elif revisit:
                nfn += 1
        p = ntp / (ntp + nfp) if ntp + nfp else 1.0
        r = ntp / (ntp + nfn) if ntp + nfn else 0.0
        rows.append((tau, p, r, ntp + nfp, nfp))
    return rows


def test_scripted_table_hand_values():
    report = sweep([rec(i, *row) for i, row in enumerate(TABLE)])
    # worked by hand: best F1 at the top threshold, TP=5 FP=3 FN=0
    assert report.f1_max == pytest.approx(10 / 13, abs=1e-15)
    # first positive is a TP (P_R0 = 1); widest zero-FP threshold recalls 2 of 7
    assert report.precision_r0 == 1.0
    assert report.recall_p100 == pytest.approx(2 / 7, abs=1e-15)
    assert report.ep == pytest.approx(9 / 14, abs=1e-15)
    assert report.counts == {"TP": 5, "FP": 3, "FN": 0, "TN": 1, "ignored": 1}


def test_scripted_table_matches_oracle_curve():
    report = sweep([rec(i, *row) for i, row in enumerate(TABLE)])
    rows = oracle_curve(TABLE)
    assert np.array_equal(report.pr.taus, [r[0] for r in rows])
    assert np.array_equal(report.pr.precision, [r[1] for r in rows])
    assert np.array_equal(report.pr.recall, [r[2] for r in rows])
    f1 = [2 * p * r / (p + r) if p + r else 0.0 for _, p, r, _, _ in rows]
    assert report.f1_max == max(f1)
    assert np.allclose(f1_scores(report), f1, rtol=0, atol=1e-15)


def test_perfect_separability():
    table = [(0.1, 1.0, True), (0.2, 0.5, True), (0.6, 50.0, False), (0.7, 40.0, False), (None, None, False)]
    report = sweep([rec(i, *row) for i, row in enumerate(table)])
    assert report.f1_max == 1.0 and report.ep == 1.0


def test_extended_precision_arithmetic():
    # P_R0 = 1.0 and R_P100 = 0.8 -> EP = 0.9
    table = [(0.1, 1.0, True), (0.2, 1.0, True), (0.3, 1.0, True), (0.4, 1.0, True), (0.5, 50.0, False),
             (0.6, 1.0, True)]
    report = sweep([rec(i, *row) for i, row in enumerate(table)])
    assert report.precision_r0 == 1.0 and report.recall_p100 == 0.8
    assert report.ep == pytest.approx(0.9, abs=1e-15)


def test_no_revisits_rejected():
    with pytest.raises(NoRevisitError):
        sweep([rec(0, 0.1, 50.0, False), rec(1, None, None, False)])


def test_decisions_at_p100_threshold(tmp_path):
    report = sweep([rec(i, *row) for i, row in enumerate(TABLE)])
    labels = [d[3] for d in report.decisions]
    assert labels[:2] == ["TP", "TP"] and labels[2] == "FN"
    write_pr_csv(tmp_path / "pr.csv", report)
    write_decisions_csv(tmp_path / "dec.csv", report)
    assert (tmp_path / "pr.csv").read_text().splitlines()[0] == "tau,precision,recall"
    assert len((tmp_path / "dec.csv").read_text().splitlines()) == 11


@given(st.lists(st.tuples(st.one_of(st.none(), st.floats(0, 2)), st.floats(0, 60), st.booleans()),
                min_size=1, max_size=30))
def test_sweep_invariants(rows):
    rows = [(d, None if d is None else e, r) for d, e, r in rows]
    if not any(r for _, _, r in rows):
        rows.append((None, None, True))
    report = sweep([rec(i, *row) for i, row in enumerate(rows)])
    assert 0.0 <= report.f1_max <= 1.0 and 0.0 <= report.ep <= 1.0
    assert np.all((report.pr.precision >= 0) & (report.pr.precision <= 1))
    assert np.all(np.diff(report.pr.recall) >= -1e-15)  # recall grows with tau
    assert report.f1_max == pytest.approx(max(f1_scores(report)))


# ----------------------------------------------------------------------------
# perturbations


def test_rotation_zero_is_identity():
    f = PointCloudFrame(np.random.default_rng(0).normal(size=(10, 3)))
    assert np.array_equal(rotate_frame(f, 0.0).points, f.points)


def test_rotation_pi_twice():
    f = PointCloudFrame(np.random.default_rng(1).normal(size=(10, 3)))
    back = rotate_frame(rotate_frame(f, np.pi), np.pi)
    assert np.allclose(back.points, f.points, rtol=0, atol=1e-9)


def test_rotation_quarter_turn():
    out = rotate_frame(PointCloudFrame(np.array([[1.0, 0.0, 0.0]])), np.pi / 2).points[0]
    assert np.allclose(out, [0, 1, 0], rtol=0, atol=1e-12)


def test_rotated_pose_keeps_world_points():
    pts = np.random.default_rng(2).normal(size=(5, 3))
    pose = Pose.from_yaw(0.4, (3.0, 1.0, 1.8))
    f = rotate_frame(PointCloudFrame(pts), 1.1)
    assert np.allclose(rotate_pose(pose, 1.1).apply(f.points), pose.apply(pts))


def _uniform_ring(n=20000):
    rng = np.random.default_rng(3)
    ang = rng.uniform(-np.pi, np.pi, n)
    r = rng.uniform(2, 20, n)
    return PointCloudFrame(np.column_stack([r * np.cos(ang), r * np.sin(ang), rng.uniform(-1, 1, n)]))


def test_occlusion_zero_and_full():
    f = _uniform_ring(100)
    assert np.array_equal(occlude_frame(f, 0, 123.0).points, f.points)
    assert len(occlude_frame(f, 360, 0.0)) == 0


def test_occlusion_half_removes_half():
    f = _uniform_ring()
    kept = len(occlude_frame(f, 180, 37.0)) / len(f)
    assert abs((1 - kept) - 0.5) <= 0.02


def test_occlusion_removes_the_sector():
    f = _uniform_ring(2000)
    out = occlude_frame(f, 90, 350.0)
    az = np.mod(np.degrees(np.arctan2(out.points[:, 1], out.points[:, 0])), 360)
    assert not np.any((az >= 350) | (az < 80))


def test_occlusion_rejects_bad_angle():
    with pytest.raises(ValueError):
        occlude_frame(_uniform_ring(10), 400, 0.0)
