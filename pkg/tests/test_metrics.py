import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgrid.geo import AffineGeoref, Point, PointAnnotations, Polyline, PolylineSet
from pgrid.metrics import (
    MetricsError,
    MetricsReport,
    average_precision,
    confusion,
    dmap,
    evaluate_poles,
    match_all,
    match_strict,
    pixel_line_metrics,
    prf,
    reports_to_csv,
)

from oracles import greedy_strict_counts, point_segment_distance


def pts(xy, conf=None):
    return PointAnnotations(tuple(Point(i, float(x), float(y), confidence=None if conf is None else conf[i])
                                  for i, (x, y) in enumerate(xy)))


def test_prf_values():
    p, r, f = prf(7, 3, 0)
    assert (p, r) == (0.7, 1.0) and f == pytest.approx(0.823529, abs=1e-6)
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)
    p, r, f = prf(5, 0, 5)
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(0.666667, abs=1e-6)
    with pytest.raises(MetricsError):
        prf(-1, 0, 0)


def test_single_match():
    m = match_strict(pts([(0, 0)]), pts([(3, 0)]), 5)
    assert (m.tp, m.fp, m.fn) == (1, 0, 0)


def test_one_gt_two_preds():
    gt, pred = pts([(0, 0)]), pts([(2, 0), (0, 4)])
    s = match_strict(gt, pred, 5)
    assert (s.tp, s.fp, s.fn) == (1, 1, 0)
    assert s.pairs == [(0, 0, 2.0)]  # the closer prediction wins
    a = match_all(gt, pred, 5)
    assert (a.tp, a.fp, a.fn) == (2, 0, 0)


def test_all_match_counts():
    a = match_all(pts([(0, 0)]), pts([(1, 0), (0, 1), (-2, 0)]), 5)
    assert (a.tp, a.fp, a.fn) == (3, 0, 0)
    a = match_all(pts([(0, 0), (50, 0)]), pts([]), 5)
    assert (a.tp, a.fp, a.fn) == (0, 0, 2)


def test_bad_threshold():
    with pytest.raises(MetricsError):
        match_strict(pts([]), pts([]), 0)


def random_instance(rng, n_max=20):
    gt = rng.uniform(0, 60, size=(rng.integers(0, n_max + 1), 2))
    pred = rng.uniform(0, 60, size=(rng.integers(0, n_max + 1), 2))
    return gt, pred


@given(st.integers(0, 2**31 - 1), st.floats(1.0, 20.0))
def test_strict_matches_greedy_oracle(seed, th):
    gt, pred = random_instance(np.random.default_rng(seed))
    m = match_strict(pts(gt), pts(pred), th)
    assert (m.tp, m.fp, m.fn) == greedy_strict_counts(gt, pred, th)
    assert len({g for g, _, _ in m.pairs}) == len({p for _, p, _ in m.pairs}) == m.tp
    assert all(d <= th for _, _, d in m.pairs)


def test_matching_properties_over_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        gt, pred = random_instance(rng)
        rows = evaluate_poles(pts(gt), pts(pred), (5.0, 7.0, 10.0))
        for row in rows:
            assert row["P_A"] >= row["P_S"]
            assert row["F1_A"] >= row["F1_S"] - 1e-12
        rs = [row["R"] for row in rows]
        ra = [row["R_A"] for row in rows]
        assert rs == sorted(rs) and ra == sorted(ra)


@given(st.integers(0, 2**31 - 1), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_translation_invariance(seed, dx, dy):
    gt, pred = random_instance(np.random.default_rng(seed), 8)
    a = evaluate_poles(pts(gt), pts(pred), (7.0,))[0]
    b = evaluate_poles(pts(gt + (dx, dy)), pts(pred + (dx, dy)), (7.0,))[0]
    assert (a["tp_S"], a["tp_A"], a["fn_S"]) == (b["tp_S"], b["tp_A"], b["fn_S"])


@given(st.integers(0, 2**31 - 1))
def test_report_f1_is_harmonic_mean(seed):
    gt, pred = random_instance(np.random.default_rng(seed), 10)
    for row in evaluate_poles(pts(gt), pts(pred)):
        for f, p in (("F1_S", "P_S"), ("F1_A", "P_A")):
            P, R = row[p], row["R"]
            assert row[f] == pytest.approx(2 * P * R / (P + R) if P + R else 0.0, abs=1e-9)
            assert 0 <= row[f] <= 1


def staircase():
    gt = pts([(0, 0), (100, 0), (200, 0)])
    pred = pts([(1, 0), (50, 50), (101, 0), (3, 0), (199, 0)], conf=[0.9, 0.8, 0.7, 0.6, 0.5])
    return gt, pred


def test_ap_hand_staircase():
    # ranks: hit, miss, hit, duplicate, hit -> recall steps at ranks 1, 3, 5
    # precision envelopes 1, 2/3, 3/5 -> AP = (1 + 2/3 + 3/5) / 3 = 34/45
    gt, pred = staircase()
    assert average_precision(gt, pred, 5.0) == pytest.approx(34 / 45, abs=1e-12)


def test_ap_edge_cases():
    gt = pts([(0, 0), (10, 0)])
    assert average_precision(gt, pts([(0, 1), (10, 1)], conf=[0.2, 0.9]), 5) == 1.0
    assert average_precision(pts([(0, 0)]), pts([(90, 0)], conf=[0.9]), 5) == 0.0
    with pytest.raises(MetricsError):
        average_precision(gt, pts([(0, 0)]), 5)
    gt, pred = staircase()
    assert dmap([(gt, pred), (gt, pred)], 5.0) == pytest.approx(34 / 45)


@given(st.integers(0, 2**31 - 1))
def test_adding_lowest_confidence_hit_never_hurts(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 100, (5, 2))
    pred = rng.uniform(0, 100, (6, 2))
    conf = list(rng.uniform(0.1, 1.0, 6))
    base = average_precision(pts(gt), pts(pred, conf), 10)
    extra = np.vstack([pred, gt[0] + 0.5])
    more = average_precision(pts(gt), pts(extra, conf + [0.01]), 10)
    assert more >= base - 1e-12
    assert 0 <= base <= 1


def test_confusion_oracle(rng):
    g = AffineGeoref.north_up(0.0, 6.4, 0.1)
    lines = PolylineSet((Polyline(0, [(0.5, 1.0), (5.5, 5.0)]),))
    pred = rng.uniform(size=(64, 64)) > 0.7
    got = pixel_line_metrics(pred, g, lines, buffer_m=1.0)
    tp = fp = fn = tn = 0
    for r in range(64):
        for c in range(64):
            x, y = (c + 0.5) * 0.1, 6.4 - (r + 0.5) * 0.1
            inside = point_segment_distance(x, y, 0.5, 1.0, 5.5, 5.0) <= 1.0
            tp += pred[r, c] and inside
            fp += pred[r, c] and not inside
            fn += (not pred[r, c]) and inside
            tn += not (pred[r, c] or inside)
    assert got["iou_line"] == pytest.approx(tp / (tp + fp + fn))
    assert got["miou"] == pytest.approx((tp / (tp + fp + fn) + tn / (tn + fp + fn)) / 2)
    assert got["p"] == pytest.approx(tp / (tp + fp)) and got["r"] == pytest.approx(tp / (tp + fn))


def test_line_metrics_trivial_cases():
    g = AffineGeoref.north_up(0.0, 6.4, 0.1)
    lines = PolylineSet((Polyline(0, [(0.5, 3.0), (6.0, 3.0)]),))
    from pgrid.rasterops import buffer_polylines
    gt = buffer_polylines(lines, 2.0, g, (64, 64))
    perfect = pixel_line_metrics(gt, g, lines)
    assert perfect["miou"] == 1.0 and perfect["f1"] == 1.0
    empty = pixel_line_metrics(np.zeros((64, 64), bool), g, lines)
    assert empty["iou_line"] == 0 and empty["miou"] == pytest.approx(empty["iou_background"] / 2)
    assert confusion(gt, gt) == (int(gt.sum()), 0, 0, int((~gt).sum()))


def test_line_metrics_errors():
    g = AffineGeoref.north_up(0.0, 6.4, 0.1)
    with pytest.raises(MetricsError, match="CRS"):
        pixel_line_metrics(np.zeros((64, 64)), g, PolylineSet((Polyline(0, [(1, 1), (2, 2)]),), epsg=32637))
    with pytest.raises(MetricsError):
        pixel_line_metrics(np.zeros((64, 64)), g, PolylineSet((Polyline(0, [(500, 500), (600, 600)]),)))


def test_report_json_and_csv():
    rows = evaluate_poles(pts([(0, 0)]), pts([(2, 0), (0, 4)]))
    rep = MetricsReport("r1", rows, {"miou": 0.5, "p": 1, "r": 0.5, "f1": 0.6}, 0.75)
    assert '"region": "r1"' in rep.to_json()
    table = list(csv.DictReader(io.StringIO(reports_to_csv([rep]))))
    assert [row["th"] for row in table] == ["5.0", "7.0", "10.0"]
    assert float(table[0]["P_S"]) == 0.5 and float(table[0]["P_A"]) == 1.0
