import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from pgrid.geo import AffineGeoref, PolylineSet, Polyline
from pgrid.rasterops import (
    RasterOpError,
    bilinear_resample,
    buffer_polylines,
    connected_components,
    has_square_block,
    polygonize,
    rasterize_polygons,
    skeleton_to_polylines,
    skeletonize,
    vector_buffer,
    watershed,
)

from oracles import bilinear_at, flood_fill_labels, point_segment_distance, watershed_violations

masks = arrays(np.bool_, st.tuples(st.integers(1, 14), st.integers(1, 14)))


def test_empty_mask_has_no_blobs():
    assert connected_components(np.zeros((5, 5)), 8).blob_count == 0


def test_diagonal_pair_connectivity():
    m = np.array([[1, 0], [0, 1]])
    assert connected_components(m, 4).blob_count == 2
    assert connected_components(m, 8).blob_count == 1


@given(masks, st.sampled_from([4, 8]))
def test_components_match_flood_fill(mask, conn):
    ref, n = flood_fill_labels(mask, conn)
    got = connected_components(mask, conn)
    assert got.blob_count == n
    assert np.array_equal(got.labels, ref)
    assert got.areas.tolist() == [int((ref == k).sum()) for k in range(1, n + 1)]


def test_point_counts():
    m = np.zeros((6, 6), bool)
    m[0:2, 0:2] = m[4:6, 4:6] = True
    b = connected_components(m, 8, points=[(0, 0), (1, 1), (5, 5), (3, 3)])
    assert b.point_counts.tolist() == [2, 1]


def test_single_seed_floods_mask():
    topo = np.random.default_rng(0).uniform(size=(10, 10))
    mask = np.ones((10, 10), bool)
    labels, ridge = watershed(topo, [(4, 4)], mask)
    assert (labels == 1).all() and not ridge.any()


def test_symmetric_valleys_ridge_on_axis():
    rows = np.abs(np.arange(9) - 4)[:, None] * np.ones((1, 7))
    topo = 10.0 - rows  # valleys at rows 0 and 8, crest on row 4
    labels, ridge = watershed(topo, [(0, 3), (8, 3)], np.ones((9, 7), bool))
    assert ridge[4].all()
    assert not ridge[:4].any() and not ridge[5:].any()
    assert (labels[:4] == 1).all() and (labels[5:] == 2).all()


def test_seed_outside_mask_names_seed():
    mask = np.zeros((4, 4), bool)
    mask[:2] = True
    with pytest.raises(RasterOpError, match="'pole-7'"):
        watershed(np.zeros((4, 4)), [(0, 0), (3, 3)], mask, seed_ids=["p1", "pole-7"])


@given(st.integers(0, 2**31 - 1))
def test_watershed_partition_properties(seed):
    rng = np.random.default_rng(seed)
    topo = ndimage.gaussian_filter(rng.normal(size=(32, 32)), 2.0)
    mask = ndimage.gaussian_filter(rng.normal(size=(32, 32)), 3.0) > -0.05
    pix = np.argwhere(mask)
    pick = rng.choice(len(pix), 3, replace=False)
    seeds = [tuple(map(int, pix[i])) for i in pick]
    labels, ridge = watershed(topo, seeds, mask)
    assert watershed_violations(labels, ridge, seeds, mask) == []


def test_skeleton_thin_line_fixed_point():
    m = np.zeros((9, 20), bool)
    m[4, 2:18] = True
    assert np.array_equal(skeletonize(m), m)
    d = np.zeros((12, 12), bool)
    d[np.arange(1, 11), np.arange(1, 11)] = True
    assert np.array_equal(skeletonize(d), d)


def test_skeleton_bar():
    m = np.zeros((11, 60), bool)
    m[3:8, 5:55] = True
    sk = skeletonize(m)
    assert sk.sum() >= 40
    assert np.all(sk.sum(axis=0) <= 1)
    assert connected_components(sk, 8).blob_count == 1


def test_skeleton_empty_and_square():
    assert not skeletonize(np.zeros((5, 5), bool)).any()
    sq = np.zeros((4, 4), bool)
    sq[1:3, 1:3] = True
    assert skeletonize(sq).sum() == 1


@given(st.integers(0, 2**31 - 1))
def test_skeleton_properties(seed):
    rng = np.random.default_rng(seed)
    m = ndimage.gaussian_filter(rng.normal(size=(40, 40)), 2.5) > 0.05
    sk = skeletonize(m)
    assert not (sk & ~m).any()
    assert not has_square_block(sk)
    assert connected_components(sk, 8).blob_count == connected_components(m, 8).blob_count


def test_corridor_height():
    g = AffineGeoref.north_up(0.0, 12.0, 0.06)
    lines = PolylineSet((Polyline(1, [(1.0, 6.0), (11.0, 6.0)]),))
    out = buffer_polylines(lines, 2.0, g, (200, 200))
    col = out[:, 100]
    assert 66 <= col.sum() <= 68


def test_small_radius_hits_line_pixels_only():
    g = AffineGeoref.north_up(0.0, 10.0, 1.0)
    lines = PolylineSet((Polyline(1, [(0.5, 4.5), (8.5, 4.5)]),))
    out = buffer_polylines(lines, 0.1, g, (10, 10))
    expect = np.zeros((10, 10), bool)
    expect[5, 0:9] = True
    assert np.array_equal(out, expect)


def test_empty_lines_zero_raster():
    assert not buffer_polylines(PolylineSet(), 2.0, AffineGeoref(), (5, 5)).any()


@given(st.lists(st.tuples(*[st.floats(0, 20, allow_nan=False)] * 4), min_size=1, max_size=3),
       st.floats(0.3, 4.0))
def test_buffer_matches_exact_distance(segs, radius):
    segs = [s for s in segs if (s[0], s[1]) != (s[2], s[3])]
    if not segs:
        return
    g = AffineGeoref.north_up(0.0, 20.0, 1.0)
    lines = PolylineSet(tuple(Polyline(i, [(a, b), (c, d)]) for i, (a, b, c, d) in enumerate(segs)))
    out = buffer_polylines(lines, radius, g, (20, 20))
    for r in range(20):
        for c in range(20):
            x, y = c + 0.5, 20.0 - (r + 0.5)
            d = min(point_segment_distance(x, y, *s) for s in segs)
            if abs(d - radius) > 1e-9:
                assert out[r, c] == (d <= radius)


def test_vector_buffer_agrees_with_raster():
    g = AffineGeoref.north_up(0.0, 30.0, 0.1)
    lines = PolylineSet((Polyline(1, [(5.0, 5.0), (20.0, 12.0), (25.0, 25.0)]),))
    ras = buffer_polylines(lines, 2.0, g, (300, 300))
    vec = rasterize_polygons(vector_buffer(lines, 2.0), g, (300, 300))
    # the vector buffer has flat caps; ignore the end discs
    yy, xx = np.mgrid[0:300, 0:300]
    x, y = (xx + 0.5) * 0.1, 30.0 - (yy + 0.5) * 0.1
    caps = (np.hypot(x - 5, y - 5) <= 2.1) | (np.hypot(x - 25, y - 25) <= 2.1)
    assert not (vec & ~ras).any()
    diff = (ras ^ vec) & ~caps
    edge = ras ^ ndimage.binary_erosion(ras)
    edge = ndimage.binary_dilation(edge | (vec ^ ndimage.binary_erosion(vec)))
    assert not (diff & ~edge).any()
    assert vector_buffer(lines, 2.0).polygons[0].properties == (("skeleton_id", 1),)


def test_bilinear_constant():
    out = bilinear_resample(np.full((128, 128), 0.7), 512, 512)
    assert np.allclose(out, 0.7)


def test_bilinear_ramp_monotone():
    out = bilinear_resample(np.array([[0.0, 1.0]]), 4, 8)
    assert np.all(np.diff(out[0]) >= 0)
    assert out.min() >= 0 and out.max() <= 1


def test_bilinear_matches_formula(rng):
    src = rng.uniform(size=(8, 8))
    out = bilinear_resample(src, 32, 32)
    for j in range(32):
        for i in range(32):
            ref = bilinear_at(src, (j + 0.5) / 4 - 0.5, (i + 0.5) / 4 - 0.5)
            assert out[j, i] == pytest.approx(ref, abs=1e-12)


def test_polygonize_square():
    m = np.zeros((6, 6), bool)
    m[1:4, 2:5] = True
    g = AffineGeoref.north_up(0.0, 6.0, 0.5)
    polys = polygonize(m, g)
    assert len(polys) == 1
    pg = polys.polygons[0]
    assert len(pg.exterior) == 5  # four corners, closed
    assert pg.area() == pytest.approx(9 * 0.25)


def test_polygonize_empty():
    assert len(polygonize(np.zeros((3, 3), bool), AffineGeoref())) == 0
    assert len(skeleton_to_polylines(np.zeros((3, 3), bool), AffineGeoref())) == 0


@given(arrays(np.bool_, st.tuples(st.integers(1, 10), st.integers(1, 10))))
def test_polygonize_covers_filled_blobs(m):
    g = AffineGeoref.north_up(0.0, float(m.shape[0]), 1.0)
    back = rasterize_polygons(polygonize(m, g), g, m.shape)
    assert np.array_equal(back, ndimage.binary_fill_holes(m))


def test_plus_skeleton_splits_at_junction():
    sk = np.zeros((11, 11), bool)
    sk[5, 1:10] = True
    sk[1:10, 5] = True
    g = AffineGeoref.north_up(0.0, 11.0, 1.0)
    lines = skeleton_to_polylines(sk, g)
    assert len(lines) == 4
    centre = (5.5, 11.0 - 5.5)
    assert all(centre in (ln.vertices[0], ln.vertices[-1]) for ln in lines)


def test_thick_skeleton_rejected():
    with pytest.raises(RasterOpError):
        skeleton_to_polylines(np.ones((3, 3), bool), AffineGeoref())
