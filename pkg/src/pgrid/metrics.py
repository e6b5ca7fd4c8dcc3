"""Distance-thresholded pole matching, detection metrics and buffered line metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from pgrid.geo import AffineGeoref, PointAnnotations, PolylineSet, world_to_pixel
from pgrid.rasterops import buffer_polylines

STRICT, ALL = "strict", "all"
DEFAULT_THRESHOLDS = (5.0, 7.0, 10.0)
DEFAULT_DMAP_THRESHOLD = 10.0


class MetricsError(ValueError):
    pass


@dataclass
class MatchResult:
    th: float
    variant: str
    pairs: list  # (gt id, pred id, distance)
    tp: int
    fp: int
    fn: int


def _distances(gt: PointAnnotations, pred: PointAnnotations) -> np.ndarray:
    a, b = gt.xy(), pred.xy()
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)))
    return np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])


def _sort_key(v):
    # ids may mix ints and strings; order ints numerically before strings
    return (isinstance(v, str), v if not isinstance(v, str) else 0, str(v))


def match_strict(gt: PointAnnotations, pred: PointAnnotations, th: float) -> MatchResult:
    """Greedy one-to-one matching, nearest pairs first."""
    if th <= 0:
        raise MetricsError("distance threshold must be positive")
    d = _distances(gt, pred)
    gi, pi = np.nonzero(d <= th)
    gids, pids = gt.ids, pred.ids
    cand = sorted(zip(d[gi, pi].tolist(), gi.tolist(), pi.tolist()),
                  key=lambda t: (t[0], _sort_key(gids[t[1]]), _sort_key(pids[t[2]])))
    used_g, used_p = set(), set()
    pairs = []
    for dist, g, p in cand:
        if g in used_g or p in used_p:
            continue
        used_g.add(g)
        used_p.add(p)
        pairs.append((gids[g], pids[p], dist))
    tp = len(pairs)
    return MatchResult(th, STRICT, pairs, tp, len(pred) - tp, len(gt) - tp)


def match_all(gt: PointAnnotations, pred: PointAnnotations, th: float) -> MatchResult:
    """One-to-many matching: every prediction within ``th`` of some ground truth is a TP.

    ``tp`` counts matched predictions; ``fn`` counts ground truths with no
    prediction in range.
    """
    if th <= 0:
        raise MetricsError("distance threshold must be positive")
    d = _distances(gt, pred)
    gids, pids = gt.ids, pred.ids
    pairs = []
    if d.size:
        within = d <= th
        for p in range(len(pred)):
            hits = np.nonzero(within[:, p])[0]
            if hits.size:
                g = min(hits, key=lambda i: (d[i, p], _sort_key(gids[i])))
                pairs.append((gids[g], pids[p], float(d[g, p])))
        detected = int(within.any(axis=1).sum())
    else:
        detected = 0
    tp = len(pairs)
    return MatchResult(th, ALL, pairs, tp, len(pred) - tp, len(gt) - detected)


def prf(tp: int, fp: int, fn: int):
    """Precision, recall and F1 with 0/0 taken as 0."""
    if min(tp, fp, fn) < 0:
        raise MetricsError("counts must be non-negative")
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def match(gt, pred, th, variant=STRICT) -> MatchResult:
    if variant == STRICT:
        return match_strict(gt, pred, th)
    if variant == ALL:
        return match_all(gt, pred, th)
    raise MetricsError(f"unknown matching variant {variant!r}")


def evaluate_poles(gt: PointAnnotations, pred: PointAnnotations, thresholds=DEFAULT_THRESHOLDS) -> list:
    """One block per threshold: P_S, P_A, R (strict), F1_S, F1_A, plus raw counts."""
    rows = []
    for th in thresholds:
        s = match_strict(gt, pred, th)
        a = match_all(gt, pred, th)
        ps, rs, f1s = prf(s.tp, s.fp, s.fn)
        pa, ra, _ = prf(a.tp, a.fp, a.fn)
        # all-variant F1 pairs its precision with the shared (strict) recall column
        f1a = 2 * pa * rs / (pa + rs) if pa + rs else 0.0
        rows.append({
            "th": float(th), "P_S": ps, "P_A": pa, "R": rs, "F1_S": f1s, "F1_A": f1a,
            "R_A": ra, "tp_S": s.tp, "fp_S": s.fp, "fn_S": s.fn, "tp_A": a.tp, "fp_A": a.fp, "fn_A": a.fn,
        })
    return rows


def average_precision(gt: PointAnnotations, pred: PointAnnotations, th: float = DEFAULT_DMAP_THRESHOLD,
                      variant: str = STRICT) -> float:
    """All-point interpolated AP over predictions ranked by confidence.

    Recall at each rank is made non-decreasing (running maximum) before the
    precision envelope is taken.
    """
    missing = [p.id for p in pred if p.confidence is None]
    if missing:
        raise MetricsError(f"predictions without confidence: {missing}")
    if not len(gt):
        return 0.0
    ranked = sorted(pred.points, key=lambda p: (-p.confidence, _sort_key(p.id)))
    precisions, recalls = [], []
    for k in range(1, len(ranked) + 1):
        m = match(gt, PointAnnotations(tuple(ranked[:k]), pred.epsg), th, variant)
        p, r, _ = prf(m.tp, m.fp, m.fn)
        precisions.append(p)
        recalls.append(r)
    if not recalls:
        return 0.0
    rec = np.maximum.accumulate(np.array(recalls))
    prec = np.array(precisions)
    env = np.maximum.accumulate(prec[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], rec]))
    return float(np.sum(steps * env))


def dmap(regions: Sequence, th: float = DEFAULT_DMAP_THRESHOLD, variant: str = STRICT) -> float:
    """Unweighted mean AP over ``(gt, pred)`` region pairs."""
    if not regions:
        return 0.0
    return float(np.mean([average_precision(g, p, th, variant) for g, p in regions]))


def _same_grid_extent(lines: PolylineSet, georef: AffineGeoref, shape) -> bool:
    segs = lines.segments()
    if not len(segs):
        return True
    xs = np.concatenate([segs[:, 0], segs[:, 2]])
    ys = np.concatenate([segs[:, 1], segs[:, 3]])
    cols, rows = world_to_pixel(georef, xs, ys)
    h, w = shape
    return bool(np.any((cols >= 0) & (cols <= w) & (rows >= 0) & (rows <= h)))


def confusion(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, fn, tn


def line_metrics_from_masks(pred: np.ndarray, gt: np.ndarray) -> dict:
    tp, fp, fn, tn = confusion(pred, gt)
    iou_line = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    iou_bg = tn / (tn + fp + fn) if tn + fp + fn else 0.0
    p, r, f1 = prf(tp, fp, fn)
    return {"miou": (iou_line + iou_bg) / 2, "iou_line": iou_line, "iou_background": iou_bg,
            "p": p, "r": r, "f1": f1}


def pixel_line_metrics(pred_mask: np.ndarray, georef: AffineGeoref, gt_lines: PolylineSet,
                       buffer_m: float = 2.0) -> dict:
    """Pixel metrics of a predicted line mask against ground truth buffered by ``buffer_m``."""
    pred_mask = np.asarray(pred_mask).astype(bool)
    if pred_mask.ndim == 3:
        pred_mask = pred_mask[0]
    if gt_lines.epsg != georef.epsg:
        raise MetricsError(f"CRS mismatch: mask EPSG {georef.epsg}, lines EPSG {gt_lines.epsg}")
    if not _same_grid_extent(gt_lines, georef, pred_mask.shape):
        raise MetricsError("ground-truth lines do not overlap the prediction raster extent")
    gt = buffer_polylines(gt_lines, buffer_m, georef, pred_mask.shape)
    return line_metrics_from_masks(pred_mask, gt)


# ---------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    region: str
    thresholds: list = field(default_factory=list)
    lines: Optional[dict] = None
    dmap: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"region": self.region, "thresholds": self.thresholds}
        if self.lines is not None:
            out["lines"] = self.lines
        if self.dmap is not None:
            out["dmap"] = self.dmap
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


CSV_COLUMNS = ("region", "th", "P_S", "P_A", "R", "F1_S", "F1_A", "miou", "p", "r", "f1", "dmap")


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        lines = rep.lines or {}
        base = {"region": rep.region, "dmap": "" if rep.dmap is None else rep.dmap,
                **{k: lines.get(k, "") for k in ("miou", "p", "r", "f1")}}
        rows = rep.thresholds or [{}]
        for row in rows:
            w.writerow({**base, **{k: row.get(k, "") for k in ("th", "P_S", "P_A", "R", "F1_S", "F1_A")}})
    return buf.getvalue()
