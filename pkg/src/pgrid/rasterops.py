"""Morphological and geometric raster primitives.

All functions take and return plain numpy arrays indexed ``[row, col]``;
georeferenced variants take an :class:`~pgrid.geo.AffineGeoref` alongside.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import ndimage

from pgrid.geo import (
    AffineGeoref,
    PointAnnotations,
    Polygon,
    PolygonSet,
    Polyline,
    PolylineSet,
    pixel_centers,
    pixel_to_world,
    world_to_pixel,
)

_STRUCT = {4: ndimage.generate_binary_structure(2, 1), 8: ndimage.generate_binary_structure(2, 2)}
_N8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class RasterOpError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BlobLabels:
    labels: np.ndarray
    blob_count: int
    areas: np.ndarray  # index i -> area of blob i + 1
    bboxes: tuple  # (row0, col0, row1, col1), end-exclusive
    point_counts: Optional[np.ndarray] = None

    def blob_pixels(self, label: int):
        r0, c0, r1, c1 = self.bboxes[label - 1]
        rr, cc = np.nonzero(self.labels[r0:r1, c0:c1] == label)
        return rr + r0, cc + c0


def connected_components(mask: np.ndarray, connectivity: int = 8, points=None) -> BlobLabels:
    """Label connected foreground components in row-major first-pixel order.

    ``points`` is an optional sequence of (row, col) pixels; when given,
    ``point_counts[i]`` is the number of points falling inside blob ``i + 1``.
    """
    if connectivity not in _STRUCT:
        raise RasterOpError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask).astype(bool)
    raw, n = ndimage.label(mask, structure=_STRUCT[connectivity])
    if n:
        # relabel by first pixel in row-major scan
        flat = raw.ravel()
        nz = np.flatnonzero(flat)
        _, first = np.unique(flat[nz], return_index=True)
        order = np.argsort(nz[first])
        remap = np.zeros(n + 1, dtype=np.int32)
        remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
        labels = remap[raw]
    else:
        labels = raw.astype(np.int32)
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    slices = ndimage.find_objects(labels, max_label=n)
    bboxes = tuple((s[0].start, s[1].start, s[0].stop, s[1].stop) for s in slices)
    counts = None
    if points is not None:
        counts = np.zeros(n, dtype=np.int64)
        for r, c in points:
            lab = labels[r, c]
            if lab:
                counts[lab - 1] += 1
    return BlobLabels(labels, int(n), areas, bboxes, counts)


# ---------------------------------------------------------------- watershed


def watershed(topography: np.ndarray, seeds: Sequence, region_mask: np.ndarray, seed_ids=None):
    """Seeded priority-flood watershed with one-pixel ridges.

    Pixels are flooded in ascending (topography, row-major index) order with
    8-connectivity. A pixel whose labelled neighbours carry two or more
    distinct labels becomes ridge and stops the flood there. If part of the
    mask is then reachable only through ridge, the lowest ridge pixel
    bordering it joins its smallest adjacent label and flooding resumes, so
    every masked pixel connected to a seed ends up labelled or ridge.

    Returns ``(labels, ridge)``: labels are 1..len(seeds) in seed order, 0
    elsewhere; ridge is a boolean mask.
    """
    topo = np.asarray(topography, dtype=np.float64)
    mask = np.asarray(region_mask).astype(bool)
    h, w = topo.shape
    if mask.shape != topo.shape:
        raise RasterOpError("topography and region_mask shapes differ")
    if seed_ids is None:
        seed_ids = list(range(len(seeds)))
    state = np.zeros((h, w), dtype=np.int32)  # >0 label, -1 ridge, 0 unreached
    for k, (sid, (r, c)) in enumerate(zip(seed_ids, seeds)):
        if not (0 <= r < h and 0 <= c < w) or not mask[r, c]:
            raise RasterOpError(f"seed {sid!r} at pixel ({r}, {c}) lies outside the region mask")
        if state[r, c]:
            raise RasterOpError(f"seed {sid!r} duplicates another seed pixel ({r}, {c})")
        state[r, c] = k + 1
    seeded = state > 0
    queued = seeded.copy()
    topo_flat = np.ascontiguousarray(topo.ravel())
    mask_flat = np.ascontiguousarray(mask.ravel())
    state_flat = state.ravel()
    queued_flat = queued.ravel()

    starts = np.array([r * w + c for r, c in seeds], dtype=np.int64)
    _flood(topo_flat, mask_flat, state_flat, queued_flat, h, w, starts)
    reach = None
    while True:
        pending = mask & (state == 0)
        if not pending.any():
            break
        if reach is None:
            reach = _seeded_components(mask, seeded)
        pending &= reach
        if not pending.any():
            break
        near = ndimage.binary_dilation(pending, structure=_STRUCT[8]) & (state == -1)
        rr, cc = np.nonzero(near)
        first = np.lexsort((rr * w + cc, topo[rr, cc]))[0]
        r, c = int(rr[first]), int(cc[first])
        state[r, c] = min(
            int(state[r + dr, c + dc])
            for dr, dc in _N8
            if 0 <= r + dr < h and 0 <= c + dc < w and state[r + dr, c + dc] > 0
        )
        _flood(topo_flat, mask_flat, state_flat, queued_flat, h, w,
               np.array([r * w + c], dtype=np.int64))

    return np.maximum(state, 0), state == -1


@numba.njit(cache=True)
def _flood(topo, mask, state, queued, h, w, starts):
    # starts are already labelled; they only seed the queue
    heap = [(topo[starts[0]], starts[0])]
    heap.pop()
    for s in starts:
        heapq.heappush(heap, (topo[s], s))
    while len(heap):
        _, idx = heapq.heappop(heap)
        r = idx // w
        c = idx % w
        if state[idx] == 0:
            lab = 0
            conflict = False
            for dr in range(-1, 2):
                for dc in range(-1, 2):
                    rr = r + dr
                    cc = c + dc
                    if (dr or dc) and 0 <= rr < h and 0 <= cc < w:
                        s = state[rr * w + cc]
                        if s > 0:
                            if lab == 0:
                                lab = s
                            elif s != lab:
                                conflict = True
            if conflict or lab == 0:
                state[idx] = -1
                continue
            state[idx] = lab
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                rr = r + dr
                cc = c + dc
                if (dr or dc) and 0 <= rr < h and 0 <= cc < w:
                    n = rr * w + cc
                    if mask[n] and not queued[n]:
                        queued[n] = True
                        heapq.heappush(heap, (topo[n], n))


def _seeded_components(mask, seed_labels):
    lab, _ = ndimage.label(mask, structure=_STRUCT[8])
    keep = np.unique(lab[seed_labels > 0])
    return np.isin(lab, keep[keep > 0])


# ---------------------------------------------------------------- thinning


def _neighbours(img):
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) for every pixel of a zero-padded image."""
    p = np.pad(img, 1)
    h, w = img.shape
    return [
        p[0:h, 1:w + 1], p[0:h, 2:w + 2], p[1:h + 1, 2:w + 2], p[2:h + 2, 2:w + 2],
        p[2:h + 2, 1:w + 1], p[2:h + 2, 0:w], p[1:h + 1, 0:w], p[0:h, 0:w],
    ]


def _zs_candidates(img, first: bool):
    n = _neighbours(img)
    p2, p3, p4, p5, p6, p7, p8, p9 = n
    count = sum(x.astype(np.uint8) for x in n)
    seq = n + [p2]
    trans = sum(((~a) & b).astype(np.uint8) for a, b in zip(seq, seq[1:]))
    cond = img & (count >= 2) & (count <= 6) & (trans == 1)
    if first:
        cond &= ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
    else:
        cond &= ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
    return cond


def _is_simple(img, r, c) -> bool:
    """8/4 simple-point test on the 3x3 neighbourhood of (r, c)."""
    h, w = img.shape
    nb = np.zeros((3, 3), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                nb[dr + 1, dc + 1] = img[rr, cc]
    nb[1, 1] = False
    fg, nfg = ndimage.label(nb, structure=_STRUCT[8])
    if nfg != 1:
        return False
    bg = ~nb
    bg[1, 1] = False
    lab, _ = ndimage.label(bg, structure=_STRUCT[4])
    touching = {lab[0, 1], lab[1, 0], lab[1, 2], lab[2, 1]} - {0}
    return len(touching) == 1


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen thinning to a one-pixel-wide, 8-connected skeleton.

    Two guards keep the classic algorithm honest: a component whose every
    pixel is a deletion candidate keeps its first row-major pixel (plain
    Zhang-Suen erases 2x2 squares), and leftover 2x2 blocks are broken by
    deleting a simple point.
    """
    img = np.asarray(mask).astype(bool).copy()
    while True:
        changed = False
        for first in (True, False):
            cand = _zs_candidates(img, first)
            if not cand.any():
                continue
            lab, n = ndimage.label(img, structure=_STRUCT[8])
            total = np.bincount(lab.ravel(), minlength=n + 1)
            gone = np.bincount(lab[cand], minlength=n + 1)
            doomed = np.nonzero((gone == total) & (total > 0))[0]
            doomed = doomed[doomed > 0]
            for d in doomed:
                idx = np.flatnonzero(lab.ravel() == d)[0]
                cand.flat[idx] = False
            if cand.any():
                img &= ~cand
                changed = True
        if not changed:
            break
    _break_square_blocks(img)
    prune_staircases(img)
    return img


def _neighbour_count(img):
    h, w = img.shape
    p = np.pad(img, 1).astype(np.uint8)
    return sum(p[1 + dr:h + 1 + dr, 1 + dc:w + 1 + dc] for dr, dc in _N8)


def prune_staircases(img: np.ndarray) -> np.ndarray:
    """Drop redundant staircase corners in place.

    On a thinned curve a non-endpoint pixel that is also a simple point only
    duplicates a diagonal link between its neighbours. Removing every such
    pixel leaves true junctions as the only pixels with three or more
    8-neighbours.
    """
    h, w = img.shape
    while True:
        rr, cc = np.nonzero(img & (_neighbour_count(img) >= 2))
        removed = False
        for r, c in zip(rr, cc):
            n = sum(img[r + dr, c + dc] for dr, dc in _N8 if 0 <= r + dr < h and 0 <= c + dc < w)
            if n >= 2 and _is_simple(img, r, c):
                img[r, c] = False
                removed = True
        if not removed:
            return img


def _break_square_blocks(img):
    while True:
        blocks = img[:-1, :-1] & img[:-1, 1:] & img[1:, :-1] & img[1:, 1:]
        rr, cc = np.nonzero(blocks)
        progress = False
        for r, c in zip(rr, cc):
            if not (img[r, c] and img[r, c + 1] and img[r + 1, c] and img[r + 1, c + 1]):
                continue
            for pr, pc in ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)):
                if _is_simple(img, pr, pc):
                    img[pr, pc] = False
                    progress = True
                    break
        if not progress:
            return


def has_square_block(mask: np.ndarray) -> bool:
    m = np.asarray(mask).astype(bool)
    return bool((m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]).any())


# ---------------------------------------------------------------- buffering


def segment_distance(px, py, x0, y0, x1, y1):
    """Euclidean distance from points (px, py) to the segment (x0, y0)-(x1, y1)."""
    dx, dy = x1 - x0, y1 - y0
    ll = dx * dx + dy * dy
    if ll == 0.0:
        return np.hypot(px - x0, py - y0)
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / ll, 0.0, 1.0)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def buffer_polylines(lines: PolylineSet, radius: float, georef: AffineGeoref, shape) -> np.ndarray:
    """Rasterize a buffer: pixel is set iff its center is within ``radius`` of a polyline.

    ``shape`` is (height, width) of the target grid.
    """
    if radius <= 0:
        raise RasterOpError("buffer radius must be positive")
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    segs = lines.segments()
    if not len(segs):
        return out
    # pad the pixel window by the radius in pixel units
    pad = radius / min(abs(georef.px_w), abs(georef.px_h)) + 2 if georef.rot_x == georef.rot_y == 0 else None
    for x0, y0, x1, y1 in segs:
        if pad is not None:
            c0, r0 = world_to_pixel(georef, x0, y0)
            c1, r1 = world_to_pixel(georef, x1, y1)
            ra = max(int(np.floor(min(r0, r1) - pad)), 0)
            rb = min(int(np.ceil(max(r0, r1) + pad)) + 1, h)
            ca = max(int(np.floor(min(c0, c1) - pad)), 0)
            cb = min(int(np.ceil(max(c0, c1) + pad)) + 1, w)
            if ra >= rb or ca >= cb:
                continue
        else:
            ra, rb, ca, cb = 0, h, 0, w
        rows, cols = np.mgrid[ra:rb, ca:cb]
        px, py = pixel_to_world(georef, cols + 0.5, rows + 0.5)
        out[ra:rb, ca:cb] |= segment_distance(px, py, x0, y0, x1, y1) <= radius
    return out


def vector_buffer(lines: PolylineSet, radius: float) -> PolygonSet:
    """Flat-capped, round-joined corridor polygon around each polyline."""
    from shapely.geometry import LineString

    if radius <= 0:
        raise RasterOpError("buffer radius must be positive")
    polys = []
    for ln in lines:
        geom = LineString(ln.vertices).buffer(radius, cap_style="flat", join_style="round", quad_segs=8)
        if geom.geom_type == "MultiPolygon":
            geom = max(geom.geoms, key=lambda g: g.area)
        polys.append(Polygon(
            ln.id,
            tuple(geom.exterior.coords),
            tuple(tuple(r.coords) for r in geom.interiors),
            (("skeleton_id", ln.id),),
        ))
    return PolygonSet(tuple(polys), lines.epsg)


def rasterize_polygons(polygons: PolygonSet, georef: AffineGeoref, shape) -> np.ndarray:
    """Pixel is set iff its center lies inside any polygon (even-odd per polygon)."""
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    if not len(polygons):
        return out
    px, py = pixel_centers(georef, h, w)
    for pg in polygons:
        inside = _point_in_ring(px, py, pg.exterior)
        for hole in pg.holes:
            inside &= ~_point_in_ring(px, py, hole)
        out |= inside
    return out


def _point_in_ring(px, py, ring):
    v = np.asarray(ring)
    inside = np.zeros(np.shape(px), dtype=bool)
    for (x0, y0), (x1, y1) in zip(v[:-1], v[1:]):
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xi)
    return inside


# ---------------------------------------------------------------- resampling


def bilinear_resample(data: np.ndarray, out_height: int, out_width: int, scale=None) -> np.ndarray:
    """Bilinear resampling with the align-corners-false convention.

    ``data`` is (H, W) or (C, H, W). Output pixel ``j`` samples source
    coordinate ``(j + 0.5) / scale - 0.5`` clamped to the source grid, where
    ``scale`` defaults to out/in per axis (pass an explicit (sy, sx) to treat
    source cells as fixed-size patches).
    """
    src = np.asarray(data, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[None]
    _, h, w = src.shape
    sy, sx = scale if scale is not None else (out_height / h, out_width / w)
    ys = np.clip((np.arange(out_height) + 0.5) / sy - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_width) + 0.5) / sx - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[:, y0][:, :, x0] * (1 - fx) + src[:, y0][:, :, x1] * fx
    bot = src[:, y1][:, :, x0] * (1 - fx) + src[:, y1][:, :, x1] * fx
    out = top * (1 - fy) + bot * fy
    # keep results inside the source range despite rounding
    out = np.clip(out, src.min(), src.max())
    return out[0] if squeeze else out


# ---------------------------------------------------------------- vectorization


def trace_outer_boundary(blob: np.ndarray):
    """Outer boundary of one 8-connected blob as pixel-corner (col, row) vertices.

    Walks directed pixel edges with the blob on the right-hand side; at
    pinch corners (diagonal-only contact) the walk turns so that diagonal
    pixels stay on one ring, matching 8-connectivity.
    """
    b = np.pad(np.asarray(blob).astype(bool), 1)
    h, w = b.shape
    # directed edges between corners; corner (r, c) is top-left of padded pixel (r, c)
    out_edges = {}
    rr, cc = np.nonzero(b)
    for r, c in zip(rr, cc):
        if not b[r - 1, c]:
            out_edges.setdefault((r, c), []).append((r, c + 1))
        if not b[r, c + 1]:
            out_edges.setdefault((r, c + 1), []).append((r + 1, c + 1))
        if not b[r + 1, c]:
            out_edges.setdefault((r + 1, c + 1), []).append((r + 1, c))
        if not b[r, c - 1]:
            out_edges.setdefault((r + 1, c), []).append((r, c))
    start = min(out_edges)  # top-most, left-most corner lies on the outer ring
    ring = [start]
    prev_dir = (0, 1)
    cur = start
    used = set()
    while True:
        options = [n for n in out_edges[cur] if (cur, n) not in used]
        if len(options) > 1:
            # the blob is on the right, so a left turn crosses over to the diagonal pixel
            def turn_rank(n, d=prev_dir):
                nd = (n[0] - cur[0], n[1] - cur[1])
                cross = d[0] * nd[1] - d[1] * nd[0]
                return 0 if cross > 0 else 1

            options.sort(key=turn_rank)
        nxt = options[0]
        used.add((cur, nxt))
        prev_dir = (nxt[0] - cur[0], nxt[1] - cur[1])
        cur = nxt
        if cur == start:
            break
        ring.append(cur)
    ring = _drop_collinear(ring)
    return [(c - 1, r - 1) for r, c in ring]


def _drop_collinear(ring):
    n = len(ring)
    keep = []
    for i in range(n):
        a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            keep.append(b)
    return keep


def polygonize(mask: np.ndarray, georef: AffineGeoref, epsg: Optional[int] = None) -> PolygonSet:
    """Outer-boundary polygons of the 8-connected blobs of ``mask``, in world coordinates."""
    blobs = connected_components(mask, 8)
    polys = []
    for k in range(1, blobs.blob_count + 1):
        r0, c0, r1, c1 = blobs.bboxes[k - 1]
        ring = trace_outer_boundary(blobs.labels[r0:r1, c0:c1] == k)
        cols = np.array([v[0] for v in ring], dtype=float) + c0
        rows = np.array([v[1] for v in ring], dtype=float) + r0
        xs, ys = pixel_to_world(georef, cols, rows)
        polys.append(Polygon(k, tuple(zip(xs.tolist(), ys.tolist())), (), (("area_px", int(blobs.areas[k - 1])),)))
    return PolygonSet(tuple(polys), georef.epsg if epsg is None else epsg)


def skeleton_to_polylines(skeleton: np.ndarray, georef: AffineGeoref, min_pixels: int = 2) -> PolylineSet:
    """Walk a one-pixel-wide skeleton into polylines split at junctions.

    Junction pixels (three or more 8-neighbours) are merged into junction
    clusters; every branch ends at the center of the cluster it touches.
    Branches with fewer than ``min_pixels`` plain pixels are dropped unless
    they link two junctions.
    """
    sk = np.asarray(skeleton).astype(bool)
    if has_square_block(sk):
        raise RasterOpError("skeleton_to_polylines needs a one-pixel-wide skeleton (found a 2x2 block)")
    sk = prune_staircases(sk.copy())
    h, w = sk.shape
    p = np.pad(sk, 1).astype(np.uint8)
    nbr = sum(p[1 + dr:h + 1 + dr, 1 + dc:w + 1 + dc] for dr, dc in _N8) * sk
    junction = sk & (nbr >= 3)
    jlab, nj = ndimage.label(junction, structure=_STRUCT[8])
    centers = {}
    for k in range(1, nj + 1):
        rr, cc = np.nonzero(jlab == k)
        centers[k] = (rr.mean(), cc.mean())

    def neighbours(r, c):
        for dr, dc in _N8:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and sk[rr, cc]:
                yield rr, cc

    visited = np.zeros_like(sk)
    chains = []  # (vertices as (row, col), plain pixel count, junction ends)

    def walk(start):
        path = [start]
        visited[start] = True
        cur = start
        while True:
            free = [n for n in sorted(neighbours(*cur)) if not junction[n] and not visited[n]]
            if not free:
                break
            # prefer 4-neighbours so staircase corners are not skipped
            straight = [n for n in free if n[0] == cur[0] or n[1] == cur[1]]
            cur = (straight or free)[0]
            visited[cur] = True
            path.append(cur)
        return path

    def end_junction(path, exclude=None):
        hits = sorted({int(jlab[n]) for n in neighbours(*path[-1]) if junction[n]} - {exclude})
        if not hits and exclude is not None and len(path) > 1:
            hits = sorted({int(jlab[n]) for n in neighbours(*path[-1]) if junction[n]})
        return hits[0] if hits else None

    for k in range(1, nj + 1):
        rr, cc = np.nonzero(jlab == k)
        for jr, jc in zip(rr, cc):
            for n in sorted(neighbours(jr, jc)):
                if junction[n] or visited[n]:
                    continue
                path = walk(n)
                verts = [centers[k], (jr, jc)] + path
                ends = 1
                other = end_junction(path, exclude=k)
                if other is not None:
                    verts.append(centers[other])
                    ends = 2
                chains.append((verts, len(path), ends))
    linked = set()
    for k in range(1, nj + 1):
        rr, cc = np.nonzero(jlab == k)
        for jr, jc in zip(rr, cc):
            for n in neighbours(jr, jc):
                other = int(jlab[n])
                if other and other != k and (min(k, other), max(k, other)) not in linked:
                    linked.add((min(k, other), max(k, other)))
                    chains.append(([centers[k], centers[other]], 0, 2))
    rr, cc = np.nonzero(sk & ~junction)
    for s in [(r, c) for r, c in zip(rr, cc) if nbr[r, c] <= 1]:
        if not visited[s]:
            path = walk(s)
            chains.append((path, len(path), 0))
    for s in zip(*np.nonzero(sk & ~junction & ~visited)):
        if visited[s]:
            continue
        path = walk(s)
        if len(path) > 2:
            path.append(path[0])
        chains.append((path, len(path), 0))

    lines = []
    for verts, n_plain, ends in chains:
        if n_plain < min_pixels and ends < 2:
            continue
        clean = []
        for v in verts:
            v = (float(v[0]), float(v[1]))
            if not clean or clean[-1] != v:
                clean.append(v)
        clean = _simplify_collinear(clean)
        if len(clean) < 2:
            continue
        rows = np.array([v[0] for v in clean]) + 0.5
        cols = np.array([v[1] for v in clean]) + 0.5
        xs, ys = pixel_to_world(georef, cols, rows)
        lines.append(Polyline(len(lines) + 1, tuple(zip(xs.tolist(), ys.tolist()))))
    return PolylineSet(tuple(lines), georef.epsg)


def _simplify_collinear(verts):
    if len(verts) < 3:
        return verts
    out = [verts[0]]
    for i in range(1, len(verts) - 1):
        a, b, c = out[-1], verts[i], verts[i + 1]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            out.append(b)
    out.append(verts[-1])
    return out


def points_to_pixels(points: PointAnnotations, georef: AffineGeoref, shape):
    """Pixel (row, col) containing each point; raises for points off the grid."""
    h, w = shape
    out = []
    for p in points:
        col, row = world_to_pixel(georef, p.x, p.y)
        r, c = int(np.floor(row)), int(np.floor(col))
        if not (0 <= r < h and 0 <= c < w):
            raise RasterOpError(f"point {p.id!r} at ({p.x}, {p.y}) falls outside the raster")
        out.append((r, c))
    return out
