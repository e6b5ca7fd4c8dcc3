"""Grid-cell occupancy of a layout and comparison against an external dataset."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from pgrid.geo import GridLayout, PointAnnotations, PolygonSet, PolylineSet
from pgrid.rasterops import _point_in_ring

DEFAULT_CELL_SIZE = 250.0


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class CellGrid:
    cell_size: float
    origin: tuple
    occupied: frozenset = field(default_factory=frozenset)
    source: str = ""

    def cell_of(self, x: float, y: float) -> tuple:
        return (math.floor((x - self.origin[0]) / self.cell_size), math.floor((y - self.origin[1]) / self.cell_size))


def segment_hits_cell(x0, y0, x1, y1, bx0, by0, bx1, by1) -> bool:
    """Does the segment meet the half-open box [bx0, bx1) x [by0, by1)?"""
    t0, t1 = 0.0, 1.0
    dx, dy = x1 - x0, y1 - y0
    for p, q in ((-dx, x0 - bx0), (dx, bx1 - x0), (-dy, y0 - by0), (dy, by1 - y0)):
        if p == 0:
            if q < 0:
                return False
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    tm = 0.5 * (t0 + t1)
    mx, my = x0 + tm * dx, y0 + tm * dy
    return mx < bx1 and my < by1


def layer_bounds(layers):
    xs, ys = [], []
    for layer in layers:
        if isinstance(layer, PointAnnotations):
            a = layer.xy()
            xs.extend(a[:, 0])
            ys.extend(a[:, 1])
        elif isinstance(layer, PolylineSet):
            for ln in layer:
                xs.extend(v[0] for v in ln.vertices)
                ys.extend(v[1] for v in ln.vertices)
        elif isinstance(layer, PolygonSet):
            for pg in layer:
                xs.extend(v[0] for v in pg.exterior)
                ys.extend(v[1] for v in pg.exterior)
    if not xs:
        return None
    return min(xs), min(ys), max(xs), max(ys)


def default_origin(layers, cell_size: float = DEFAULT_CELL_SIZE) -> tuple:
    b = layer_bounds(layers)
    if b is None:
        return (0.0, 0.0)
    return (math.floor(b[0] / cell_size) * cell_size, math.floor(b[1] / cell_size) * cell_size)


def _layers(obj):
    if isinstance(obj, GridLayout):
        return [obj.poles, obj.line_skeletons, obj.line_polygons]
    if isinstance(obj, (PointAnnotations, PolylineSet, PolygonSet)):
        return [obj]
    return list(obj)


def _cells_for_segment(grid_origin, cs, x0, y0, x1, y1):
    ox, oy = grid_origin
    i0 = math.floor((min(x0, x1) - ox) / cs)
    i1 = math.floor((max(x0, x1) - ox) / cs)
    j0 = math.floor((min(y0, y1) - oy) / cs)
    j1 = math.floor((max(y0, y1) - oy) / cs)
    # endpoints use the point rule, so a segment always covers the cells of its own ends
    yield (math.floor((x0 - ox) / cs), math.floor((y0 - oy) / cs))
    yield (math.floor((x1 - ox) / cs), math.floor((y1 - oy) / cs))
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            if segment_hits_cell(x0, y0, x1, y1, ox + i * cs, oy + j * cs, ox + (i + 1) * cs, oy + (j + 1) * cs):
                yield (i, j)


def gridify(layout, cell_size: float = DEFAULT_CELL_SIZE, origin=None, source: str = "") -> CellGrid:
    """Cells touched by any pole, skeleton segment or corridor polygon.

    ``layout`` may be a :class:`GridLayout`, a single vector layer, or a list
    of layers (used for external datasets).
    """
    if cell_size <= 0:
        raise CoverageError("cell size must be positive")
    layers = _layers(layout)
    if origin is None:
        origin = default_origin(layers, cell_size)
    origin = (float(origin[0]), float(origin[1]))
    cs = float(cell_size)
    grid = CellGrid(cs, origin, frozenset(), source)
    occ = set()
    for layer in layers:
        if isinstance(layer, PointAnnotations):
            occ.update(grid.cell_of(p.x, p.y) for p in layer)
        elif isinstance(layer, PolylineSet):
            for x0, y0, x1, y1 in layer.segments():
                occ.update(_cells_for_segment(origin, cs, x0, y0, x1, y1))
        elif isinstance(layer, PolygonSet):
            for pg in layer:
                ring = np.asarray(pg.exterior)
                for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
                    occ.update(_cells_for_segment(origin, cs, x0, y0, x1, y1))
                # cells lying wholly inside the polygon
                i0, j0 = grid.cell_of(ring[:, 0].min(), ring[:, 1].min())
                i1, j1 = grid.cell_of(ring[:, 0].max(), ring[:, 1].max())
                ii, jj = np.mgrid[i0:i1 + 1, j0:j1 + 1]
                cx = origin[0] + (ii + 0.5) * cs
                cy = origin[1] + (jj + 0.5) * cs
                inside = _point_in_ring(cx, cy, pg.exterior)
                for hole in pg.holes:
                    inside &= ~_point_in_ring(cx, cy, hole)
                occ.update(zip(ii[inside].tolist(), jj[inside].tolist()))
        else:
            raise CoverageError(f"cannot gridify {type(layer).__name__}")
    return CellGrid(cs, origin, frozenset(occ), source)


def compare(ours: CellGrid, external: CellGrid) -> dict:
    if ours.cell_size != external.cell_size or tuple(ours.origin) != tuple(external.origin):
        raise CoverageError(
            f"lattices differ: cell {ours.cell_size} @ {ours.origin} vs {external.cell_size} @ {external.origin}"
        )
    a, b = set(ours.occupied), set(external.occupied)
    both = a & b
    only_ours = a - b
    only_ext = b - a
    return {
        "both": both,
        "only_ours": only_ours,
        "newly_mapped": only_ours,
        "only_external": only_ext,
        "counts": {"ours": len(a), "external": len(b), "both": len(both),
                   "newly_mapped": len(only_ours), "only_external": len(only_ext)},
    }


def coverage_report(ours: CellGrid, external: CellGrid) -> dict:
    cmp = compare(ours, external)
    return {
        "cell_size": ours.cell_size,
        "origin": list(ours.origin),
        "n_ours": len(ours.occupied),
        "n_external": len(external.occupied),
        "n_both": len(cmp["both"]),
        "n_newly_mapped": len(cmp["newly_mapped"]),
        "newly_mapped_cells": [list(c) for c in sorted(cmp["newly_mapped"])],
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"
