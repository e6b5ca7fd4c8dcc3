"""Synthetic overhead scenes with known poles, lines, distractors and network graph.

Scenes are rendered in local metric coordinates (EPSG 0) with a north-up
georef whose origin is the top-left corner of the extent.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.stats import norm

from pgrid.geo import (
    HARD_NEGATIVE,
    POLE,
    AffineGeoref,
    Point,
    PointAnnotations,
    Polyline,
    PolylineSet,
    RasterGrid,
    read_raster,
    read_vectors,
    write_raster,
    write_vectors,
)
from pgrid.rasterops import segment_distance

# Shadow-length calibration targets: P(L < 5 m) and P(L <= 10 m).
SHADOW_TARGETS = ((5.0, 0.28), (10.0, 0.90))


class SynthError(ValueError):
    pass


def lognormal_from_quantiles(targets=SHADOW_TARGETS):
    """(mu, sigma) of a lognormal whose CDF passes through two (length, probability) targets."""
    (l1, p1), (l2, p2) = targets
    z1, z2 = norm.ppf(p1), norm.ppf(p2)
    sigma = (math.log(l2) - math.log(l1)) / (z2 - z1)
    mu = math.log(l1) - sigma * z1
    return mu, sigma


@dataclass
class SceneConfig:
    extent: tuple = (150.0, 150.0)  # width, height in meters
    resolution: float = 0.06  # meters per pixel
    pole_spacing: tuple = (25.0, 40.0)
    n_branches: int = 3
    max_poles: int = 60
    min_clearance: float = 12.0  # meters between a new span and unrelated spans
    margin: float = 6.0
    shadow_azimuth_deg: float = 135.0  # clockwise from north
    shadow_targets: tuple = SHADOW_TARGETS
    shadow_width_px: float = 2.0
    line_visibility: float = 0.9
    line_width_px: tuple = (1, 2)
    pole_diameter_px: tuple = (3, 5)
    fence_density: float = 0.0  # fences per hectare
    fence_post_spacing: float = 3.0
    tree_density: float = 0.0  # trees per hectare
    lone_pole_density: float = 0.0  # poles without lines per hectare
    noise_level: float = 0.03
    seed: int = 0

    def __post_init__(self):
        self.extent = tuple(float(v) for v in self.extent)
        self.pole_spacing = tuple(float(v) for v in self.pole_spacing)
        self.line_width_px = tuple(int(v) for v in self.line_width_px)
        self.pole_diameter_px = tuple(float(v) for v in self.pole_diameter_px)
        self.shadow_targets = tuple(tuple(float(x) for x in t) for t in self.shadow_targets)
        if self.resolution <= 0:
            raise SynthError("resolution must be positive")
        for name in ("fence_density", "tree_density", "lone_pole_density", "noise_level"):
            if getattr(self, name) < 0:
                raise SynthError(f"{name} must be non-negative")
        if not 0.0 <= self.line_visibility <= 1.0:
            raise SynthError("line_visibility must lie in [0, 1]")
        lo, hi = self.pole_spacing
        if not 0 < lo <= hi:
            raise SynthError("pole_spacing must be an increasing positive range")

    @property
    def shape(self) -> tuple:
        return (int(round(self.extent[1] / self.resolution)), int(round(self.extent[0] / self.resolution)))

    @property
    def georef(self) -> AffineGeoref:
        return AffineGeoref.north_up(0.0, self.extent[1], self.resolution)

    def shadow_params(self):
        return lognormal_from_quantiles(self.shadow_targets)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**d)


def sample_shadow_lengths(config: SceneConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    mu, sigma = config.shadow_params()
    return rng.lognormal(mu, sigma, size=n)


@dataclass
class Span:
    line_id: int
    a: int  # pole id
    b: int
    visible: bool
    width_px: int


@dataclass(eq=False)
class Scene:
    image: RasterGrid
    poles: PointAnnotations
    lines: PolylineSet
    negatives: PointAnnotations
    spans: list
    config: SceneConfig
    seed: int
    pole_diameters: dict = field(default_factory=dict)

    @property
    def edges(self) -> list:
        return sorted(tuple(sorted((s.a, s.b))) for s in self.spans)


# ---------------------------------------------------------------- network layout


def _segments_clear(seg, segs, clearance, skip=()):
    (x0, y0), (x1, y1) = seg
    for k, ((a0, b0), (a1, b1)) in enumerate(segs):
        if k in skip:
            continue
        # segment-segment distance via endpoint-to-segment distances (exact unless they cross)
        d = min(
            segment_distance(x0, y0, a0, b0, a1, b1), segment_distance(x1, y1, a0, b0, a1, b1),
            segment_distance(a0, b0, x0, y0, x1, y1), segment_distance(a1, b1, x0, y0, x1, y1),
        )
        if d < clearance or _cross(seg, ((a0, b0), (a1, b1))):
            return False
    return True


def _cross(s, t):
    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    (p1, p2), (q1, q2) = s, t
    return orient(p1, p2, q1) * orient(p1, p2, q2) < 0 and orient(q1, q2, p1) * orient(q1, q2, p2) < 0


def _grow_network(cfg: SceneConfig, rng: np.random.Generator):
    W, H = cfg.extent
    lo, hi = cfg.pole_spacing
    m = cfg.margin
    if W - 2 * m < hi or H - 2 * m < hi:
        raise SynthError(f"extent {cfg.extent} too small for one span of up to {hi} m with {m} m margins")

    def inside(x, y):
        return m <= x <= W - m and m <= y <= H - m

    poles = []  # (x, y)
    edges = []  # (parent idx, child idx)
    seg_of_edge = []
    pole_edges = {}

    def extend_chain(start, heading, max_steps):
        cur, ang = start, heading
        for _ in range(max_steps):
            if len(poles) >= cfg.max_poles:
                return
            placed = False
            for _attempt in range(8):
                step = rng.uniform(lo, hi)
                a = ang + rng.normal(0.0, 0.15)
                x = poles[cur][0] + step * math.cos(a)
                y = poles[cur][1] + step * math.sin(a)
                if not inside(x, y):
                    continue
                seg = (poles[cur], (x, y))
                skip = set(pole_edges.get(cur, ()))
                if not _segments_clear(seg, seg_of_edge, cfg.min_clearance, skip):
                    continue
                if any(math.hypot(x - px, y - py) < lo * 0.8 for px, py in poles):
                    continue
                poles.append((x, y))
                child = len(poles) - 1
                edges.append((cur, child))
                seg_of_edge.append(seg)
                pole_edges.setdefault(cur, []).append(len(edges) - 1)
                pole_edges.setdefault(child, []).append(len(edges) - 1)
                cur, ang = child, a
                placed = True
                break
            if not placed:
                return

    # trunk: start near one edge and head across
    for _ in range(50):
        x0, y0 = rng.uniform(m, W - m), rng.uniform(m, H - m)
        heading = math.atan2(H / 2 - y0, W / 2 - x0) + rng.normal(0, 0.3)
        poles.clear()
        edges.clear()
        seg_of_edge.clear()
        pole_edges.clear()
        poles.append((x0, y0))
        # walk backwards to the boundary first so the trunk spans the extent
        extend_chain(0, heading, 1000)
        if len(poles) >= 2:
            break
    if len(poles) < 2:
        raise SynthError(f"could not place a single span inside extent {cfg.extent}")
    for _ in range(cfg.n_branches):
        parent = int(rng.integers(0, len(poles)))
        pe = pole_edges.get(parent, [])
        base = math.atan2(*(np.subtract(seg_of_edge[pe[0]][1], seg_of_edge[pe[0]][0])[::-1])) if pe else 0.0
        heading = base + rng.choice([-1, 1]) * rng.uniform(math.radians(60), math.radians(120))
        extend_chain(parent, heading, 1000)
    return poles, edges


# ---------------------------------------------------------------- rendering


def _window(georef, shape, x0, y0, x1, y1, pad_m):
    h, w = shape
    res = georef.px_w
    c0 = max(int(math.floor((min(x0, x1) - pad_m - georef.origin_x) / res)), 0)
    c1 = min(int(math.ceil((max(x0, x1) + pad_m - georef.origin_x) / res)) + 1, w)
    r0 = max(int(math.floor((georef.origin_y - max(y0, y1) - pad_m) / res)), 0)
    r1 = min(int(math.ceil((georef.origin_y - min(y0, y1) + pad_m) / res)) + 1, h)
    return r0, r1, c0, c1


def stroke_mask(georef: AffineGeoref, shape, x0, y0, x1, y1, width_px: float, out=None):
    """Pixels whose centers lie within ``width_px / 2`` pixels of a segment."""
    if out is None:
        out = np.zeros(shape, dtype=bool)
    radius = 0.5 * width_px * georef.px_w
    r0, r1, c0, c1 = _window(georef, shape, x0, y0, x1, y1, radius + georef.px_w)
    if r0 >= r1 or c0 >= c1:
        return out
    rows, cols = np.mgrid[r0:r1, c0:c1]
    px = georef.origin_x + (cols + 0.5) * georef.px_w
    py = georef.origin_y + (rows + 0.5) * georef.px_h
    out[r0:r1, c0:c1] |= segment_distance(px, py, x0, y0, x1, y1) <= radius
    return out


def disc_mask(georef: AffineGeoref, shape, x, y, diameter_px: float, out=None):
    return stroke_mask(georef, shape, x, y, x, y, diameter_px, out)


def _paint(img, mask, color, alpha=1.0):
    for c in range(3):
        img[c][mask] = (1 - alpha) * img[c][mask] + alpha * color[c]


SOIL = (0.58, 0.50, 0.40)
LINE = (0.12, 0.12, 0.14)
SHADOW = (0.22, 0.19, 0.16)
POLE_HEAD = (0.93, 0.93, 0.90)
FENCE_WIRE = (0.35, 0.30, 0.25)
FENCE_POST = (0.90, 0.82, 0.70)  # near-white so posts can pass for pole heads
TREE = (0.18, 0.33, 0.14)


def generate_scene(config: Optional[SceneConfig] = None, seed: Optional[int] = None) -> Scene:
    cfg = config or SceneConfig()
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    georef = cfg.georef
    h, w = cfg.shape
    res = cfg.resolution

    pole_xy, edges = _grow_network(cfg, rng)

    # background texture: smooth field plus pixel noise
    img = np.empty((3, h, w), dtype=np.float64)
    smooth = ndimage.gaussian_filter(rng.normal(0, 1, size=(h, w)), sigma=max(2.0 / res, 1.0), mode="reflect")
    smooth /= max(np.abs(smooth).max(), 1e-9)
    for c in range(3):
        img[c] = SOIL[c] + 0.05 * smooth

    area_ha = cfg.extent[0] * cfg.extent[1] / 1e4
    W, H = cfg.extent
    negatives = []

    def neg(x, y, kind):
        negatives.append(Point(f"neg{len(negatives) + 1}", float(x), float(y), HARD_NEGATIVE))

    # trees
    n_trees = rng.poisson(cfg.tree_density * area_ha)
    for _ in range(n_trees):
        x, y = rng.uniform(0, W), rng.uniform(0, H)
        r_m = rng.uniform(1.5, 4.0)
        _paint(img, disc_mask(georef, (h, w), x, y, 2 * r_m / res), TREE, 0.9)
        neg(x, y, "tree")

    # shadows of poles (real and lone) are drawn before lines and heads
    mu, sigma = cfg.shadow_params()
    az = math.radians(cfg.shadow_azimuth_deg)
    sdx, sdy = math.sin(az), math.cos(az)  # clockwise from north; +y is north
    n_lone = rng.poisson(cfg.lone_pole_density * area_ha)
    lone_xy = [(rng.uniform(cfg.margin, W - cfg.margin), rng.uniform(cfg.margin, H - cfg.margin)) for _ in range(n_lone)]
    all_heads = list(pole_xy) + lone_xy
    shadow_len = rng.lognormal(mu, sigma, size=len(all_heads))
    for (x, y), L in zip(all_heads, shadow_len):
        m = stroke_mask(georef, (h, w), x, y, x + L * sdx, y + L * sdy, cfg.shadow_width_px)
        _paint(img, m, SHADOW, 0.8)

    # power lines
    spans = []
    line_px = np.zeros((h, w), dtype=bool)
    polylines = []
    for k, (a, b) in enumerate(edges):
        visible = bool(rng.random() < cfg.line_visibility)
        width = int(rng.integers(cfg.line_width_px[0], cfg.line_width_px[1] + 1))
        spans.append(Span(k + 1, a + 1, b + 1, visible, width))
        polylines.append(Polyline(k + 1, (pole_xy[a], pole_xy[b])))
        if visible:
            (x0, y0), (x1, y1) = pole_xy[a], pole_xy[b]
            stroke_mask(georef, (h, w), x0, y0, x1, y1, width, out=line_px)
    _paint(img, line_px, LINE, 0.9)

    # fences with periodic bright posts
    n_fences = rng.poisson(cfg.fence_density * area_ha)
    for _ in range(n_fences):
        x0, y0 = rng.uniform(0, W), rng.uniform(0, H)
        ang = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(20.0, 60.0)
        x1, y1 = x0 + length * math.cos(ang), y0 + length * math.sin(ang)
        _paint(img, stroke_mask(georef, (h, w), x0, y0, x1, y1, 1), FENCE_WIRE, 0.7)
        n_posts = int(length // cfg.fence_post_spacing) + 1
        for t in np.linspace(0.0, 1.0, n_posts):
            px, py = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
            if 0 <= px < W and 0 <= py < H:
                d = rng.uniform(cfg.pole_diameter_px[0], cfg.pole_diameter_px[1])
                _paint(img, disc_mask(georef, (h, w), px, py, d), FENCE_POST)
                neg(px, py, "fence_post")

    # pole heads last so they sit on top of their lines
    diameters = {}
    for i, (x, y) in enumerate(all_heads):
        d = rng.uniform(cfg.pole_diameter_px[0], cfg.pole_diameter_px[1])
        _paint(img, disc_mask(georef, (h, w), x, y, d), POLE_HEAD)
        if i < len(pole_xy):
            diameters[i + 1] = float(d)
        else:
            neg(x, y, "lone_pole")

    img += rng.normal(0, cfg.noise_level, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)

    poles = PointAnnotations(tuple(Point(i + 1, float(x), float(y), POLE) for i, (x, y) in enumerate(pole_xy)), georef.epsg)
    return Scene(
        image=RasterGrid(img.astype(np.float32), georef),
        poles=poles,
        lines=PolylineSet(tuple(polylines), georef.epsg),
        negatives=PointAnnotations(tuple(negatives), georef.epsg),
        spans=spans,
        config=cfg,
        seed=seed,
        pole_diameters=diameters,
    )


def rendered_line_mask(scene: Scene) -> np.ndarray:
    g = scene.image.georef
    shape = (scene.image.height, scene.image.width)
    out = np.zeros(shape, dtype=bool)
    xy = {p.id: (p.x, p.y) for p in scene.poles}
    for s in scene.spans:
        if s.visible:
            (x0, y0), (x1, y1) = xy[s.a], xy[s.b]
            stroke_mask(g, shape, x0, y0, x1, y1, s.width_px, out=out)
    return out


def oracle_predictions(scene: Scene, radius_px: float = 2.0, eps: float = 1e-3):
    """Noiseless predictions: pole map set within ``radius_px`` of each pole, line map on rendered lines.

    Returns ``(pole probability RasterGrid (2 ch), line probability RasterGrid (1 ch))``.
    """
    g = scene.image.georef
    shape = (scene.image.height, scene.image.width)
    pole = np.zeros(shape, dtype=bool)
    for p in scene.poles:
        disc_mask(g, shape, p.x, p.y, 2 * radius_px, out=pole)
    fg = (eps + (1 - 2 * eps) * pole).astype(np.float32)
    bg = (1.0 - fg.astype(np.float64)).astype(np.float32)
    line = rendered_line_mask(scene).astype(np.float32)
    return RasterGrid(np.stack([bg, fg]), g), RasterGrid(line[None], g)


# ---------------------------------------------------------------- scene bundles


def write_scene(scene: Scene, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_raster(scene.image, out / "image.pgr")
    write_vectors(scene.poles, out / "poles.geojson")
    write_vectors(scene.lines, out / "lines.geojson")
    write_vectors(scene.negatives, out / "negatives.geojson")
    edges = {
        "edges": [list(e) for e in scene.edges],
        "spans": [asdict(s) for s in scene.spans],
        "pole_diameters_px": {str(k): v for k, v in sorted(scene.pole_diameters.items())},
    }
    (out / "edges.json").write_text(json.dumps(edges, indent=1, sort_keys=True) + "\n")
    cfg = {"seed": scene.seed, "scene": scene.config.to_dict()}
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    return out


def read_scene(bundle_dir) -> Scene:
    d = Path(bundle_dir)
    cfg = json.loads((d / "config.json").read_text())
    edges = json.loads((d / "edges.json").read_text())
    return Scene(
        image=read_raster(d / "image.pgr"),
        poles=read_vectors(d / "poles.geojson"),
        lines=read_vectors(d / "lines.geojson"),
        negatives=read_vectors(d / "negatives.geojson"),
        spans=[Span(**s) for s in edges["spans"]],
        config=SceneConfig.from_dict(cfg["scene"]),
        seed=cfg["seed"],
        pole_diameters={int(k): v for k, v in edges.get("pole_diameters_px", {}).items()},
    )
