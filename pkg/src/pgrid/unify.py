"""Turn pole and line probability rasters into a vector grid layout."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from pgrid.geo import (
    POLE,
    GeoError,
    GridLayout,
    Point,
    PointAnnotations,
    PolygonSet,
    PolylineSet,
    RasterGrid,
    pixel_to_world,
    read_vectors,
    write_vectors,
)
from pgrid.rasterops import (
    connected_components,
    segment_distance,
    skeleton_to_polylines,
    skeletonize,
    vector_buffer,
)

DEFAULT_MIN_AREA_PX = 8
DEFAULT_BUFFER_M = 2.0
LAYER_SUFFIXES = {"poles": ".poles.geojson", "skeletons": ".lines.geojson", "corridors": ".corridors.geojson"}


def _pole_channel(prob) -> np.ndarray:
    if isinstance(prob, RasterGrid):
        return prob.data[1] if prob.channels == 2 else prob.data[0]
    return np.asarray(prob)


def extract_poles(prob: RasterGrid, threshold: float = 0.5, min_area_px: int = DEFAULT_MIN_AREA_PX) -> PointAnnotations:
    """Blob centroids of the thresholded pole channel, with blob-max confidence."""
    pole = _pole_channel(prob).astype(np.float64)
    blobs = connected_components(pole >= threshold, 8)
    points = []
    for k in range(1, blobs.blob_count + 1):
        if blobs.areas[k - 1] < min_area_px:
            continue
        rr, cc = blobs.blob_pixels(k)
        x, y = pixel_to_world(prob.georef, cc.mean() + 0.5, rr.mean() + 0.5)
        conf = float(np.clip(pole[rr, cc].max(), 0.0, 1.0))
        points.append(Point(len(points) + 1, float(x), float(y), POLE, conf))
    return PointAnnotations(tuple(points), prob.georef.epsg)


def douglas_peucker(vertices, tol: float):
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3 or tol <= 0:
        return [tuple(p) for p in v]
    keep = np.zeros(len(v), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(v) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = segment_distance(v[i + 1:j, 0], v[i + 1:j, 1], v[i, 0], v[i, 1], v[j, 0], v[j, 1])
        k = int(np.argmax(d))
        if d[k] > tol:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return [tuple(p) for p in v[keep]]


def extract_lines(line_prob: RasterGrid, threshold: float = 0.5, buffer_m: float = DEFAULT_BUFFER_M,
                  simplify_px: float = 1.0):
    """Binarize, thin, trace and buffer line predictions.

    Returns ``(skeletons, corridors)``. Skeleton polylines are simplified with
    Douglas-Peucker at ``simplify_px`` pixels; polylines covering fewer than
    two skeleton pixels are dropped.
    """
    from pgrid.geo import Polyline

    band = _pole_channel(line_prob) if line_prob.channels == 1 else line_prob.data[1]
    mask = np.asarray(band, dtype=np.float64) >= threshold
    skel = skeletonize(mask)
    raw = skeleton_to_polylines(skel, line_prob.georef, min_pixels=2)
    tol = simplify_px * line_prob.georef.pixel_size
    lines = []
    for ln in raw:
        verts = douglas_peucker(ln.vertices, tol)
        if len(verts) >= 2:
            lines.append(Polyline(len(lines) + 1, verts))
    skeletons = PolylineSet(tuple(lines), line_prob.georef.epsg)
    return skeletons, vector_buffer(skeletons, buffer_m)


def unify(poles: PointAnnotations, lines, provenance: Optional[dict] = None) -> GridLayout:
    """Bundle pole points and line layers into one layout; poles and lines stay unjoined."""
    skeletons, corridors = lines
    epsgs = {poles.epsg, skeletons.epsg, corridors.epsg}
    if len(epsgs) != 1:
        raise GeoError(f"CRS mismatch between layers: EPSG codes {sorted(epsgs)}")
    return GridLayout(poles, skeletons, corridors, dict(provenance or {}))


def layout_paths(stem) -> dict:
    stem = str(stem)
    return {k: Path(stem + suffix) for k, suffix in LAYER_SUFFIXES.items()}


def write_layout(layout: GridLayout, stem) -> dict:
    paths = layout_paths(stem)
    Path(paths["poles"]).parent.mkdir(parents=True, exist_ok=True)
    write_vectors(layout.poles, paths["poles"])
    write_vectors(layout.line_skeletons, paths["skeletons"])
    write_vectors(layout.line_polygons, paths["corridors"])
    if layout.provenance:
        Path(str(stem) + ".provenance.json").write_text(json.dumps(layout.provenance, indent=1, sort_keys=True) + "\n")
    return paths


def read_layout(stem) -> GridLayout:
    paths = layout_paths(stem)
    poles = read_vectors(paths["poles"])
    skeletons = read_vectors(paths["skeletons"])
    corridors = read_vectors(paths["corridors"])
    if not isinstance(skeletons, PolylineSet):
        skeletons = PolylineSet((), poles.epsg)
    if not isinstance(corridors, PolygonSet):
        corridors = PolygonSet((), poles.epsg)
    prov_path = Path(str(stem) + ".provenance.json")
    prov = json.loads(prov_path.read_text()) if prov_path.exists() else {}
    return GridLayout(poles, skeletons, corridors, prov)


def _polyline_positions(vertices, px, py):
    """Distance from points to a polyline and the arc length of the closest point."""
    v = np.asarray(vertices, dtype=float)
    best_d = np.full(len(px), np.inf)
    best_s = np.zeros(len(px))
    start = 0.0
    for (x0, y0), (x1, y1) in zip(v[:-1], v[1:]):
        dx, dy = x1 - x0, y1 - y0
        ll = dx * dx + dy * dy
        t = np.clip(((px - x0) * dx + (py - y0) * dy) / ll, 0.0, 1.0)
        d = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
        better = d < best_d
        best_d[better] = d[better]
        best_s[better] = start + t[better] * np.sqrt(ll)
        start += np.sqrt(ll)
    return best_d, best_s


def _id_key(v):
    # ints sort numerically and before string ids
    return (1, 0, v) if isinstance(v, str) else (0, v, "")


def snap_graph(layout: GridLayout, tol: float = 1.5) -> list:
    """Pole-to-pole edges recovered from skeleton polylines (experimental).

    Poles within ``tol`` of a polyline are ordered by their position along
    it and consecutive poles are joined. A polyline whose endpoints both lie
    within ``tol`` of distinct poles yields exactly that edge when no other
    pole sits along it. Returns sorted, de-duplicated (id_a, id_b) pairs.
    """
    if tol <= 0:
        raise ValueError("snap tolerance must be positive")
    poles = layout.poles
    if not len(poles):
        return []
    xy = poles.xy()
    ids = poles.ids
    edges = set()
    for ln in layout.line_skeletons:
        d, s = _polyline_positions(ln.vertices, xy[:, 0], xy[:, 1])
        near = np.nonzero(d <= tol)[0]
        if near.size < 2:
            continue
        order = near[np.lexsort((near, s[near]))]
        for a, b in zip(order, order[1:]):
            if ids[a] != ids[b]:
                edges.add(tuple(sorted((ids[a], ids[b]), key=_id_key)))
    return sorted(edges, key=lambda e: (_id_key(e[0]), _id_key(e[1])))
