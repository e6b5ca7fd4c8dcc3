"""Independent brute-force references used by the tests.

Nothing here imports the package's raster code; each routine is written
directly from the definition it checks.
"""

import math
from collections import deque

import numpy as np

N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
N8 = N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def flood_fill_labels(mask, connectivity=8):
    """BFS labelling, numbered in row-major order of each component's first pixel."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    nbrs = N8 if connectivity == 8 else N4
    lab = np.zeros((h, w), dtype=int)
    n = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and not lab[r, c]:
                n += 1
                lab[r, c] = n
                q = deque([(r, c)])
                while q:
                    y, x = q.popleft()
                    for dy, dx in nbrs:
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not lab[yy, xx]:
                            lab[yy, xx] = n
                            q.append((yy, xx))
    return lab, n


def point_segment_distance(px, py, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    ll = dx * dx + dy * dy
    t = 0.0 if ll == 0 else max(0.0, min(1.0, ((px - x0) * dx + (py - y0) * dy) / ll))
    return math.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def bilinear_at(src, y, x):
    """Bilinear sample of a 2-D array at fractional (y, x), clamped to the grid."""
    h, w = src.shape
    y = min(max(y, 0.0), h - 1)
    x = min(max(x, 0.0), w - 1)
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    return ((1 - fy) * ((1 - fx) * src[y0, x0] + fx * src[y0, x1])
            + fy * ((1 - fx) * src[y1, x0] + fx * src[y1, x1]))


def greedy_strict_counts(gt_xy, pred_xy, th):
    """Sort every in-range pair by (distance, gt index, pred index) and accept greedily."""
    pairs = []
    for i, (gx, gy) in enumerate(gt_xy):
        for j, (px, py) in enumerate(pred_xy):
            d = math.hypot(gx - px, gy - py)
            if d <= th:
                pairs.append((d, i, j))
    pairs.sort()
    used_g, used_p = set(), set()
    for _, i, j in pairs:
        if i not in used_g and j not in used_p:
            used_g.add(i)
            used_p.add(j)
    tp = len(used_g)
    return tp, len(pred_xy) - tp, len(gt_xy) - tp


def central_difference_check(evaluate, Z, grad, h=1e-4, floor=1e-6):
    """Compare ``grad`` with central differences at every coordinate of ``Z``.

    ``evaluate(Z)`` returns ``(loss, key)`` where ``key`` is the discrete
    state of a piecewise loss; coordinates whose two perturbed points have
    a different key from the base point are skipped. Returns
    ``(max_relative_error, checked, skipped)``.
    """
    Z = np.array(Z, dtype=np.float64)
    _, key = evaluate(Z)
    worst, checked, skipped = 0.0, 0, 0
    for idx in np.ndindex(Z.shape):
        vals = []
        same = True
        for sgn in (1.0, -1.0):
            Zp = Z.copy()
            Zp[idx] += sgn * h
            v, k = evaluate(Zp)
            same = same and k == key
            vals.append(v)
        if not same:
            skipped += 1
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        a = grad[idx]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), floor))
        checked += 1
    return worst, checked, skipped


def watershed_violations(labels, ridge, seeds, mask):
    """Every way a (labels, ridge) pair breaks the one-seed-per-region contract."""
    bad = []
    if (ridge & (labels > 0)).any():
        bad.append("pixel both labelled and ridge")
    if (((labels > 0) | ridge) & ~mask).any():
        bad.append("output outside mask")
    reach, _ = flood_fill_labels(mask, 8)
    seeded = {reach[r, c] for r, c in seeds}
    if not np.array_equal((labels > 0) | ridge, np.isin(reach, list(seeded)) & mask):
        bad.append("seeded component not fully covered")
    for k, (r, c) in enumerate(seeds, start=1):
        if labels[r, c] != k:
            bad.append(f"seed {k} not in region {k}")
        if flood_fill_labels(labels == k, 8)[1] != 1:
            bad.append(f"region {k} not connected")
    p = np.pad(labels, 1)
    for r, c in zip(*np.nonzero(ridge)):
        if len({int(v) for v in p[r:r + 3, c:c + 3].ravel() if v > 0}) < 2:
            bad.append(f"ridge pixel ({r}, {c}) touches fewer than two regions")
    return bad
