"""Georeferenced data types and file I/O (PGRD rasters, GeoJSON vectors)."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

POLE = "pole"
HARD_NEGATIVE = "hard_negative"
POLARITIES = (POLE, HARD_NEGATIVE)

PGRD_MAGIC = b"PGRD"
PGRD_VERSION = 1
# magic, version, dtype, channels, width, height, 6 affine terms, epsg, nodata flag, nodata value
_HEADER = struct.Struct("<4sBBHII6dIBd")
_DTYPES = {0: np.dtype("<u1"), 1: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype("uint8"): 0, np.dtype("float32"): 1}


class GeoError(ValueError):
    pass


class PgrdFormatError(GeoError):
    """Malformed PGRD container; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VectorFormatError(GeoError):
    def __init__(self, message: str, feature_ids: Sequence = ()):
        if feature_ids:
            message = f"{message}: {list(feature_ids)}"
        super().__init__(message)
        self.feature_ids = list(feature_ids)


@dataclass(frozen=True)
class AffineGeoref:
    origin_x: float = 0.0
    origin_y: float = 0.0
    px_w: float = 1.0
    px_h: float = -1.0
    rot_x: float = 0.0
    rot_y: float = 0.0
    epsg: int = 0

    def __post_init__(self):
        if self.determinant == 0.0:
            raise GeoError("affine georef is singular (zero determinant)")

    @property
    def determinant(self) -> float:
        return self.px_w * self.px_h - self.rot_x * self.rot_y

    @property
    def pixel_size(self) -> float:
        """Mean ground sampling distance in meters (sqrt of pixel area)."""
        return math.sqrt(abs(self.determinant))

    @classmethod
    def north_up(cls, origin_x: float, origin_y: float, resolution: float, epsg: int = 0) -> "AffineGeoref":
        return cls(origin_x, origin_y, resolution, -resolution, 0.0, 0.0, epsg)

    def shifted(self, col: int, row: int) -> "AffineGeoref":
        """Georef of a window whose top-left pixel is (col, row) of this grid."""
        x, y = pixel_to_world(self, col, row)
        return AffineGeoref(x, y, self.px_w, self.px_h, self.rot_x, self.rot_y, self.epsg)


def pixel_to_world(georef: AffineGeoref, col, row):
    """Map fractional pixel coordinates (edge convention) to world meters.

    Pixel centers sit at ``col + 0.5, row + 0.5``. Works elementwise on arrays.
    """
    x = georef.origin_x + georef.px_w * col + georef.rot_x * row
    y = georef.origin_y + georef.rot_y * col + georef.px_h * row
    return x, y


def world_to_pixel(georef: AffineGeoref, x, y):
    dx = np.asarray(x, dtype=float) - georef.origin_x
    dy = np.asarray(y, dtype=float) - georef.origin_y
    det = georef.determinant
    col = (georef.px_h * dx - georef.rot_x * dy) / det
    row = (-georef.rot_y * dx + georef.px_w * dy) / det
    if np.ndim(col) == 0:
        return float(col), float(row)
    return col, row


def pixel_centers(georef: AffineGeoref, height: int, width: int):
    """World coordinates of every pixel center as two (height, width) arrays."""
    rows, cols = np.mgrid[0:height, 0:width]
    return pixel_to_world(georef, cols + 0.5, rows + 0.5)


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Channel-planar raster: ``data`` has shape (channels, height, width)."""

    data: np.ndarray
    georef: AffineGeoref = field(default_factory=AffineGeoref)
    nodata: Optional[float] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise GeoError(f"raster data must be 2-D or 3-D, got shape {data.shape}")
        if data.dtype not in _DTYPE_CODES:
            raise GeoError(f"unsupported raster dtype {data.dtype}; use uint8 or float32")
        data = np.array(data, order="C")  # own copy, so freezing never touches the caller's array
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def band(self, i: int = 0) -> np.ndarray:
        return self.data[i]

    def extent(self):
        """(xmin, ymin, xmax, ymax) of the raster footprint in world coordinates."""
        cols = np.array([0, self.width, 0, self.width])
        rows = np.array([0, 0, self.height, self.height])
        xs, ys = pixel_to_world(self.georef, cols, rows)
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (
            self.georef == other.georef
            and _nodata_equal(self.nodata, other.nodata)
            and self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def _nodata_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return struct.pack("<d", a) == struct.pack("<d", b)


def check_probability_map(raster: RasterGrid, tol: float = 1e-6) -> None:
    if raster.channels != 2:
        raise GeoError(f"probability map needs 2 channels, got {raster.channels}")
    d = raster.data.astype(np.float64)
    if np.any(d < 0) or np.any(d > 1):
        raise GeoError("probability values outside [0, 1]")
    if np.max(np.abs(d.sum(axis=0) - 1.0)) > tol:
        raise GeoError("probability channels do not sum to 1")


@dataclass(frozen=True)
class Point:
    id: Union[int, str]
    x: float
    y: float
    polarity: str = POLE
    confidence: Optional[float] = None


@dataclass(frozen=True)
class PointAnnotations:
    points: tuple = ()
    epsg: int = 0

    def __post_init__(self):
        pts = tuple(self.points)
        ids = [p.id for p in pts]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1}, key=str)
            raise VectorFormatError("duplicate point ids", dup)
        bad = [p.id for p in pts if p.polarity not in POLARITIES]
        if bad:
            raise VectorFormatError("unknown polarity", bad)
        bad = [p.id for p in pts if p.confidence is not None and not 0.0 <= p.confidence <= 1.0]
        if bad:
            raise VectorFormatError("confidence outside [0, 1]", bad)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def of_polarity(self, polarity: str) -> "PointAnnotations":
        return PointAnnotations(tuple(p for p in self.points if p.polarity == polarity), self.epsg)

    def xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=float).reshape(-1, 2)

    @property
    def ids(self) -> list:
        return [p.id for p in self.points]


@dataclass(frozen=True)
class Polyline:
    id: Union[int, str]
    vertices: tuple
    confidence: Optional[float] = None

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 2:
            raise VectorFormatError("polyline needs at least 2 vertices", [self.id])
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise VectorFormatError("polyline has repeated consecutive vertices", [self.id])
        object.__setattr__(self, "vertices", verts)

    def length(self) -> float:
        v = np.asarray(self.vertices)
        return float(np.hypot(*np.diff(v, axis=0).T).sum())


@dataclass(frozen=True)
class PolylineSet:
    lines: tuple = ()
    epsg: int = 0

    def __post_init__(self):
        lines = tuple(self.lines)
        ids = [ln.id for ln in lines]
        if len(set(ids)) != len(ids):
            raise VectorFormatError("duplicate polyline ids", sorted({i for i in ids if ids.count(i) > 1}, key=str))
        object.__setattr__(self, "lines", lines)

    def __len__(self):
        return len(self.lines)

    def __iter__(self):
        return iter(self.lines)

    def segments(self) -> np.ndarray:
        """All segments as an (n, 4) array of x0, y0, x1, y1."""
        segs = [
            (a[0], a[1], b[0], b[1])
            for ln in self.lines
            for a, b in zip(ln.vertices, ln.vertices[1:])
        ]
        return np.array(segs, dtype=float).reshape(-1, 4)


@dataclass(frozen=True)
class Polygon:
    """Polygon with an exterior ring and optional holes; rings are closed."""

    id: Union[int, str]
    exterior: tuple
    holes: tuple = ()
    properties: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "exterior", _close_ring(self.exterior, self.id))
        object.__setattr__(self, "holes", tuple(_close_ring(h, self.id) for h in self.holes))
        object.__setattr__(self, "properties", tuple(sorted(dict(self.properties).items())))

    def area(self) -> float:
        a = abs(_ring_area(self.exterior))
        return a - sum(abs(_ring_area(h)) for h in self.holes)


def _close_ring(ring, fid):
    ring = tuple((float(x), float(y)) for x, y in ring)
    if len(ring) and ring[0] != ring[-1]:
        ring = ring + (ring[0],)
    if len(ring) < 4:
        raise VectorFormatError("polygon ring needs at least 3 distinct vertices", [fid])
    return ring


def _ring_area(ring) -> float:
    v = np.asarray(ring)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


@dataclass(frozen=True)
class PolygonSet:
    polygons: tuple = ()
    epsg: int = 0

    def __post_init__(self):
        object.__setattr__(self, "polygons", tuple(self.polygons))

    def __len__(self):
        return len(self.polygons)

    def __iter__(self):
        return iter(self.polygons)


@dataclass(frozen=True)
class GridLayout:
    poles: PointAnnotations
    line_skeletons: PolylineSet
    line_polygons: PolygonSet
    provenance: dict = field(default_factory=dict)

    @property
    def epsg(self) -> int:
        return self.poles.epsg


# ---------------------------------------------------------------- PGRD raster I/O


def encode_raster(raster: RasterGrid) -> bytes:
    g = raster.georef
    has_nodata = raster.nodata is not None
    header = _HEADER.pack(
        PGRD_MAGIC,
        PGRD_VERSION,
        _DTYPE_CODES[raster.dtype],
        raster.channels,
        raster.width,
        raster.height,
        g.origin_x, g.px_w, g.rot_x, g.origin_y, g.rot_y, g.px_h,
        g.epsg,
        int(has_nodata),
        float(raster.nodata) if has_nodata else 0.0,
    )
    return header + raster.data.astype(_DTYPES[_DTYPE_CODES[raster.dtype]], copy=False).tobytes()


def decode_raster(buf: bytes) -> RasterGrid:
    if len(buf) < 4 or buf[:4] != PGRD_MAGIC:
        raise PgrdFormatError(f"bad magic {bytes(buf[:4])!r}, expected {PGRD_MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise PgrdFormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf))
    (_, version, dcode, channels, width, height,
     ox, pw, rx, oy, ry, ph, epsg, nd_flag, nd_value) = _HEADER.unpack_from(buf)
    if version != PGRD_VERSION:
        raise PgrdFormatError(f"unsupported version {version}", 4)
    if dcode not in _DTYPES:
        raise PgrdFormatError(f"unsupported dtype code {dcode}", 5)
    if nd_flag not in (0, 1):
        raise PgrdFormatError(f"nodata flag must be 0 or 1, got {nd_flag}", _HEADER.size - 9)
    if nd_flag == 0 and struct.pack("<d", nd_value) != bytes(8):
        raise PgrdFormatError("nodata value set while nodata flag is 0", _HEADER.size - 8)
    dtype = _DTYPES[dcode]
    expected = channels * width * height * dtype.itemsize
    payload = buf[_HEADER.size:]
    if len(payload) < expected:
        raise PgrdFormatError(
            f"truncated payload: {len(payload)} of {expected} bytes", _HEADER.size + len(payload)
        )
    if len(payload) > expected:
        raise PgrdFormatError(f"{len(payload) - expected} trailing bytes after payload", _HEADER.size + expected)
    try:
        georef = AffineGeoref(ox, oy, pw, ph, rx, ry, epsg)
    except GeoError as e:
        raise PgrdFormatError(str(e), 12) from None
    data = np.frombuffer(payload, dtype=dtype).reshape(channels, height, width)
    data = data.astype(dtype.newbyteorder("="), copy=True)
    return RasterGrid(data, georef, nd_value if nd_flag else None)


def write_raster(raster: RasterGrid, path) -> None:
    Path(path).write_bytes(encode_raster(raster))


def read_raster(path) -> RasterGrid:
    return decode_raster(Path(path).read_bytes())


def payload_size(width: int, height: int, channels: int, dtype) -> int:
    return width * height * channels * np.dtype(dtype).itemsize


# ---------------------------------------------------------------- GeoJSON vector I/O


def _props(extra: dict, **kw) -> dict:
    out = {k: v for k, v in kw.items() if v is not None}
    out.update(extra)
    return out


def to_geojson(layer) -> dict:
    feats = []
    if isinstance(layer, PointAnnotations):
        for p in layer:
            feats.append({
                "type": "Feature",
                "id": p.id,
                "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
                "properties": _props({}, id=p.id, polarity=p.polarity, confidence=p.confidence),
            })
    elif isinstance(layer, PolylineSet):
        for ln in layer:
            feats.append({
                "type": "Feature",
                "id": ln.id,
                "geometry": {"type": "LineString", "coordinates": [list(v) for v in ln.vertices]},
                "properties": _props({}, id=ln.id, confidence=ln.confidence),
            })
    elif isinstance(layer, PolygonSet):
        for pg in layer:
            rings = [pg.exterior, *pg.holes]
            feats.append({
                "type": "Feature",
                "id": pg.id,
                "geometry": {"type": "Polygon", "coordinates": [[list(v) for v in r] for r in rings]},
                "properties": _props(dict(pg.properties), id=pg.id),
            })
    else:
        raise TypeError(f"cannot encode {type(layer).__name__} as GeoJSON")
    return {"type": "FeatureCollection", "epsg": layer.epsg, "features": feats}


def from_geojson(doc: dict):
    if doc.get("type") != "FeatureCollection":
        raise VectorFormatError("expected a GeoJSON FeatureCollection")
    epsg = int(doc.get("epsg", 0))
    feats = doc.get("features", [])
    fids = [_feature_id(f, i) for i, f in enumerate(feats)]
    kinds = [f.get("geometry", {}).get("type") for f in feats]
    if not feats:
        # an empty layer carries its kind in a foreign member when written by us
        kind = doc.get("layer_kind", "Point")
    else:
        kind = kinds[0]
        if any(k != kind for k in kinds):
            offending = [fid for fid, k in zip(fids, kinds) if k != kind]
            raise VectorFormatError(f"mixed geometry types in layer (first is {kind})", offending)
    if kind == "Point":
        pts = []
        for fid, f in zip(fids, feats):
            props = f.get("properties") or {}
            x, y = f["geometry"]["coordinates"][:2]
            conf = props.get("confidence")
            pts.append(Point(fid, float(x), float(y), props.get("polarity", POLE),
                             None if conf is None else float(conf)))
        return PointAnnotations(tuple(pts), epsg)
    if kind == "LineString":
        lines = []
        for fid, f in zip(fids, feats):
            props = f.get("properties") or {}
            conf = props.get("confidence")
            coords = [tuple(c[:2]) for c in f["geometry"]["coordinates"]]
            lines.append(Polyline(fid, coords, None if conf is None else float(conf)))
        return PolylineSet(tuple(lines), epsg)
    if kind == "Polygon":
        polys = []
        for fid, f in zip(fids, feats):
            props = dict(f.get("properties") or {})
            props.pop("id", None)
            rings = [[tuple(c[:2]) for c in r] for r in f["geometry"]["coordinates"]]
            polys.append(Polygon(fid, rings[0], tuple(rings[1:]), tuple(props.items())))
        return PolygonSet(tuple(polys), epsg)
    raise VectorFormatError(f"unsupported geometry type {kind!r}", fids)


def _feature_id(f: dict, index: int):
    fid = f.get("id")
    if fid is None:
        fid = (f.get("properties") or {}).get("id", index)
    return fid


def write_vectors(layer, path) -> None:
    doc = to_geojson(layer)
    doc["layer_kind"] = {PointAnnotations: "Point", PolylineSet: "LineString", PolygonSet: "Polygon"}[type(layer)]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_vectors(path):
    return from_geojson(json.loads(Path(path).read_text()))
