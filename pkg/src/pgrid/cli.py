"""Command-line entry point: ``pgrid <subcommand> ...``.

Every subcommand reads files, writes files, and exits 0 on success. Failures
print a one-line JSON error object to stderr and exit 1. Log verbosity comes
from the ``PGRID_LOG`` environment variable (DEBUG, INFO, WARNING, ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("pgrid")

DEFAULTS_NOTE = "defaults: sf=4, buffer=2 m, thresholds 5/7/10 m"


class CliError(Exception):
    pass


def _dump(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CliError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None


def _floats(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _map(fn, items, jobs):
    from pgrid.scorer import _map as ordered_map

    return ordered_map(fn, list(items), jobs)


# ---------------------------------------------------------------- subcommands


def cmd_synth(a):
    from pgrid.synth import SceneConfig, generate_scene, oracle_predictions, write_scene
    from pgrid.geo import write_raster

    cfg = SceneConfig.from_dict(_load_json(a.config)) if a.config else SceneConfig()
    seeds = [a.seed + i for i in range(a.count)]
    out = Path(a.out)

    def one(seed):
        scene = generate_scene(cfg, seed=seed)
        d = out if a.count == 1 else out / f"scene_{seed:05d}"
        write_scene(scene, d)
        if a.oracle:
            pp, lp = oracle_predictions(scene)
            write_raster(pp, d / "oracle_poles.pgr")
            write_raster(lp, d / "oracle_lines.pgr")
        return str(d)

    for d in _map(one, seeds, a.jobs):
        print(d)


def _training_pairs(a):
    """(image, poles, negatives) triples from --scene bundles and --pair files."""
    from pgrid.geo import PointAnnotations, read_raster, read_vectors

    out = []
    for d in a.scene or []:
        d = Path(d)
        negs = read_vectors(d / "negatives.geojson") if (d / "negatives.geojson").exists() else None
        out.append((read_raster(d / "image.pgr"), read_vectors(d / "poles.geojson"), negs))
    for img, pts in a.pair or []:
        points = read_vectors(pts)
        if not isinstance(points, PointAnnotations):
            raise CliError(f"{pts}: expected a point layer")
        out.append((read_raster(img), points.of_polarity("pole"), points.of_polarity("hard_negative")))
    if not out:
        raise CliError("no training data: give --scene and/or --pair")
    return out


def _train_config(a):
    from pgrid.scorer import TrainConfig

    d = _load_json(a.config) if a.config else {}
    d.setdefault("seed", a.seed)
    if a.epochs is not None:
        d["epochs"] = a.epochs
    if a.lr is not None:
        d["lr"] = a.lr
    return TrainConfig.from_dict(d)


def cmd_train_poles(a):
    from pgrid.experiment import training_tiles
    from pgrid.geo import PointAnnotations
    from pgrid.scorer import PoleSample, train_poles

    cfg = _train_config(a)
    if not a.hard_negatives:
        cfg.lambda_hard_neg = 0.0
    rng = np.random.default_rng(cfg.seed)
    samples = []
    for image, poles, negs in _training_pairs(a):
        negs = negs if negs is not None else PointAnnotations((), poles.epsg)
        if a.tile:
            samples += training_tiles(image, poles, negs, a.tile, rng, a.hard_negatives, a.max_negative_tiles)
        else:
            both = PointAnnotations(tuple(poles) + (tuple(negs) if a.hard_negatives else ()), poles.epsg)
            samples.append(PoleSample.from_annotations(image, both))
    weights, curve = train_poles(samples, cfg, jobs=a.jobs)
    weights.save(a.out)
    if a.curve:
        _dump({"loss": curve}, a.curve)
    print(json.dumps({"epochs": len(curve), "final_loss": curve[-1] if curve else None}))


def cmd_detect_poles(a):
    from pgrid.geo import read_raster, write_raster, write_vectors
    from pgrid.scorer import ScorerWeights, predict_poles
    from pgrid.unify import extract_poles

    probs = predict_poles(read_raster(a.image), ScorerWeights.load(a.weights))
    write_raster(probs, a.out)
    if a.points:
        write_vectors(extract_poles(probs, a.threshold, a.min_area), a.points)


def cmd_train_lines(a):
    from pgrid.geo import read_raster, read_vectors
    from pgrid.lineseg import LineSample, train_lines

    cfg = _train_config(a)
    samples = []
    for d in a.scene or []:
        d = Path(d)
        samples.append(LineSample.from_lines(read_raster(d / "image.pgr"), read_vectors(d / "lines.geojson")))
    for img, lines in a.pair or []:
        samples.append(LineSample.from_lines(read_raster(img), read_vectors(lines)))
    if not samples:
        raise CliError("no training data: give --scene and/or --pair")
    weights, curve = train_lines(samples, a.sf, cfg, jobs=a.jobs)
    weights.save(a.out)
    if a.curve:
        _dump({"loss": curve}, a.curve)
    print(json.dumps({"epochs": len(curve), "final_loss": curve[-1] if curve else None}))


def cmd_segment_lines(a):
    from pgrid.geo import read_raster, write_raster
    from pgrid.lineseg import predict_lines
    from pgrid.scorer import ScorerWeights

    weights = ScorerWeights.load(a.weights)
    sf = a.sf if a.sf is not None else int(weights.metadata.get("sf", 4))
    write_raster(predict_lines(read_raster(a.image), weights, sf), a.out)


def _points(path):
    from pgrid.geo import PointAnnotations, read_vectors

    layer = read_vectors(path)
    if not isinstance(layer, PointAnnotations):
        raise CliError(f"{path}: expected a point layer")
    return layer.of_polarity("pole")


def cmd_eval_poles(a):
    from pgrid.metrics import MetricsReport, evaluate_poles, reports_to_csv

    rows = evaluate_poles(_points(a.gt), _points(a.pred), a.th)
    keep = {"strict": ("P_S", "F1_S"), "all": ("P_A", "F1_A"), "both": ("P_S", "P_A", "F1_S", "F1_A")}[a.match]
    thresholds = [{k: r[k] for k in ("th", "R") + keep} for r in rows]
    blocks = []
    for r in rows:
        for variant, suffix in (("strict", "S"), ("all", "A")):
            if a.match in (variant, "both"):
                blocks.append({"th": r["th"], "variant": variant, "P": r[f"P_{suffix}"], "R": r["R"],
                               "F1": r[f"F1_{suffix}"], "tp": r[f"tp_{suffix}"], "fp": r[f"fp_{suffix}"],
                               "fn": r[f"fn_{suffix}"]})
    rep = MetricsReport(a.region, thresholds, metadata={"blocks": blocks, "match": a.match})
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Path(a.out).write_text(rep.to_json())
    if a.csv:
        Path(a.csv).write_text(reports_to_csv([rep]))


def cmd_eval_lines(a):
    from pgrid.geo import PolylineSet, read_raster, read_vectors
    from pgrid.metrics import MetricsReport, pixel_line_metrics, reports_to_csv
    from pgrid.rasterops import buffer_polylines

    gt = read_vectors(a.gt)
    if not isinstance(gt, PolylineSet):
        raise CliError(f"{a.gt}: expected a line layer")
    if str(a.pred).endswith(".geojson"):
        if not a.grid:
            raise CliError("vector predictions need --grid RASTER to define the evaluation grid")
        grid = read_raster(a.grid)
        pred_lines = read_vectors(a.pred)
        if not isinstance(pred_lines, PolylineSet):
            raise CliError(f"{a.pred}: expected a line layer")
        georef, shape = grid.georef, (grid.height, grid.width)
        mask = buffer_polylines(pred_lines, a.buffer, georef, shape) if len(pred_lines) else np.zeros(shape, bool)
    else:
        pred = read_raster(a.pred)
        band = pred.data[-1].astype(np.float64)
        georef, mask = pred.georef, band >= a.threshold
    lines = pixel_line_metrics(mask, georef, gt, a.buffer)
    rep = MetricsReport(a.region, [], lines=lines, metadata={"buffer_m": a.buffer})
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Path(a.out).write_text(rep.to_json())
    if a.csv:
        Path(a.csv).write_text(reports_to_csv([rep]))


def cmd_dmap(a):
    from pgrid.metrics import average_precision

    regions = [(_points(g), _points(p)) for g, p in a.pair]
    aps = [average_precision(g, p, a.th, a.match) for g, p in regions]
    _dump({"th": a.th, "variant": a.match, "ap": aps, "dmap": float(np.mean(aps)) if aps else 0.0}, a.out)


def cmd_unify(a):
    from pgrid.geo import read_raster
    from pgrid.unify import extract_lines, extract_poles, unify, write_layout

    pole_probs = read_raster(a.pole_probs)
    line_probs = read_raster(a.line_probs)
    poles = extract_poles(pole_probs, a.threshold, a.min_area)
    lines = extract_lines(line_probs, a.threshold, a.buffer)
    prov = {"pole_probs": Path(a.pole_probs).name, "line_probs": Path(a.line_probs).name,
            "threshold": a.threshold, "min_area_px": a.min_area, "buffer_m": a.buffer}
    for p in write_layout(unify(poles, lines, prov), a.out).values():
        print(p)


def cmd_snap_graph(a):
    from pgrid.unify import read_layout, snap_graph

    edges = snap_graph(read_layout(a.layout), a.tol)
    _dump({"tol": a.tol, "edges": [list(e) for e in edges]}, a.out)


def cmd_coverage(a):
    from pgrid.coverage import coverage_report, default_origin, gridify, report_json, _layers
    from pgrid.geo import read_vectors
    from pgrid.unify import read_layout

    ours = read_layout(a.ours)
    external = [read_vectors(p) for p in a.external]
    origin = a.origin
    if origin is None:
        origin = default_origin(_layers(ours) + external, a.cell_size)
    g_ours = gridify(ours, a.cell_size, origin, "ours")
    g_ext = gridify(external, a.cell_size, origin, "external")
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    Path(a.out).write_text(report_json(coverage_report(g_ours, g_ext)))


def cmd_gradcheck(a):
    from pgrid.experiment import training_tiles
    from pgrid.geo import PointAnnotations, read_raster, read_vectors
    from pgrid.scorer import PoleSample, ScorerWeights, gradcheck, n_features

    rng = np.random.default_rng(a.seed)
    if a.scene:
        d = Path(a.scene)
        image = read_raster(d / "image.pgr")
        poles = read_vectors(d / "poles.geojson")
        negs = read_vectors(d / "negatives.geojson") if (d / "negatives.geojson").exists() \
            else PointAnnotations((), poles.epsg)
        sample = training_tiles(image, poles, negs, a.tile, rng, True, 1)[0]
    else:
        img = rng.uniform(0.0, 1.0, size=(3, a.tile, a.tile))
        pts = [tuple(int(v) for v in rng.integers(0, a.tile, 2)) for _ in range(3)]
        sample = PoleSample(img, pts[:2], pts[2:])
    if a.weights:
        weights = ScorerWeights.load(a.weights)
    else:
        weights = ScorerWeights.zeros(n_features(sample.image.shape[0]))
        weights.W[:] = rng.normal(0.0, 0.5, size=weights.W.shape)
    rep = gradcheck(weights, sample, a.h).to_dict()
    rep["pass"] = bool(rep["max_rel_error"] <= a.tol)
    if a.out:
        _dump(rep, a.out)
    print(json.dumps(rep, sort_keys=True))
    if not rep["pass"]:
        raise CliError(f"gradient check failed: max relative error {rep['max_rel_error']:.3g} > {a.tol:g}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    common.add_argument("--jobs", type=int, default=1, help="worker threads; outputs equal --jobs 1")

    p = argparse.ArgumentParser(prog="pgrid", description="Power-grid layout reconstruction from overhead rasters. "
                                + DEFAULTS_NOTE + ".", formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text, formatter_class=fmt)
        sp.set_defaults(fn=fn)
        return sp

    s = add("synth", cmd_synth, "Generate synthetic scene bundles (image.pgr, poles/lines/negatives.geojson, "
            "edges.json, config.json).")
    s.add_argument("--config", help="scene config JSON (SceneConfig fields); defaults used if omitted")
    s.add_argument("--count", type=int, default=1, help="number of scenes, seeds seed..seed+count-1")
    s.add_argument("--oracle", action="store_true", help="also write oracle_poles.pgr and oracle_lines.pgr")
    s.add_argument("--out", required=True, help="output directory")

    def training_inputs(sp, what):
        sp.add_argument("--scene", nargs="+", help="scene bundle directories")
        sp.add_argument("--pair", nargs=2, action="append", metavar=("IMAGE", what),
                        help=f"image raster and {what.lower()} GeoJSON; repeatable")
        sp.add_argument("--config", help="training config JSON (lr, epochs, momentum, seed, augment, ...)")
        sp.add_argument("--epochs", type=int, help="override config epochs")
        sp.add_argument("--lr", type=float, help="override config learning rate")
        sp.add_argument("--out", required=True, help="weights JSON output")
        sp.add_argument("--curve", help="optional loss-curve JSON output")

    s = add("train-poles", cmd_train_poles, "Train the pole scorer on the composite point-supervised loss.")
    training_inputs(s, "POINTS")
    s.add_argument("--hard-negatives", action=argparse.BooleanOptionalAction, default=True,
                   help="mine hard negatives (negative tiles plus the negative loss term)")
    s.add_argument("--tile", type=int, default=64, help="tile size in pixels around points; 0 trains on whole images")
    s.add_argument("--max-negative-tiles", type=int, default=8, help="negative tiles per image")

    s = add("detect-poles", cmd_detect_poles, "Score an image into a 2-channel pole probability raster.")
    s.add_argument("--image", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True, help="probability raster (.pgr)")
    s.add_argument("--points", help="optionally also write extracted pole points (GeoJSON)")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--min-area", type=int, default=8, help="minimum blob area in pixels")

    s = add("train-lines", cmd_train_lines, "Train the patch line scorer (default sf=4).")
    training_inputs(s, "LINES")
    s.add_argument("--sf", type=int, default=4, help="patch scaling factor")

    s = add("segment-lines", cmd_segment_lines, "Predict a full-resolution line probability raster.")
    s.add_argument("--image", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--sf", type=int, default=None, help="scaling factor; default is the one stored in the weights (4)")
    s.add_argument("--out", required=True)

    s = add("eval-poles", cmd_eval_poles, "Distance-thresholded pole metrics (default thresholds 5/7/10 m).")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--th", type=_floats, default=(5.0, 7.0, 10.0), help="comma list of thresholds in meters")
    s.add_argument("--match", choices=("strict", "all", "both"), default="both")
    s.add_argument("--region", default="region")
    s.add_argument("--out", required=True, help="report JSON")
    s.add_argument("--csv", help="optional CSV mirror of the report")

    s = add("eval-lines", cmd_eval_lines, "Pixel line metrics against ground truth buffered by 2 m.")
    s.add_argument("--gt", required=True, help="ground-truth lines GeoJSON")
    s.add_argument("--pred", required=True, help="line probability raster (.pgr) or predicted lines (.geojson)")
    s.add_argument("--grid", help="raster defining the grid when --pred is GeoJSON")
    s.add_argument("--buffer", type=float, default=2.0, help="buffer radius in meters (each side)")
    s.add_argument("--threshold", type=float, default=0.5, help="binarization threshold for raster predictions")
    s.add_argument("--region", default="region")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")

    s = add("dmap", cmd_dmap, "Distance-based mean average precision over regions.")
    s.add_argument("--pair", nargs=2, action="append", required=True, metavar=("GT", "PRED"),
                   help="ground truth and scored predictions for one region; repeatable")
    s.add_argument("--th", type=float, default=10.0, help="distance threshold in meters")
    s.add_argument("--match", choices=("strict", "all"), default="strict")
    s.add_argument("--out", required=True)

    s = add("unify", cmd_unify, "Vectorize pole and line probabilities into a three-layer grid layout "
            "(<out>.poles/.lines/.corridors.geojson).")
    s.add_argument("--pole-probs", required=True)
    s.add_argument("--line-probs", required=True)
    s.add_argument("--buffer", type=float, default=2.0, help="corridor half-width in meters")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--min-area", type=int, default=8, help="minimum pole blob area in pixels")
    s.add_argument("--out", required=True, help="output stem")

    s = add("snap-graph", cmd_snap_graph, "Experimental: join poles along skeleton polylines into edges.")
    s.add_argument("--layout", required=True, help="layout stem written by unify")
    s.add_argument("--tol", type=float, default=1.5, help="snap tolerance in meters")
    s.add_argument("--out", required=True)

    s = add("coverage", cmd_coverage, "Grid-cell coverage of a layout against an external dataset.")
    s.add_argument("--ours", required=True, help="layout stem")
    s.add_argument("--external", nargs="+", required=True, help="external GeoJSON layers")
    s.add_argument("--cell-size", type=float, default=250.0, help="cell size in meters")
    s.add_argument("--origin", type=_floats, default=None,
                   help="lattice origin x,y; default is the joint bounding-box minimum snapped to the cell size")
    s.add_argument("--out", required=True)

    s = add("gradcheck", cmd_gradcheck, "Compare analytic and finite-difference gradients of the scorer.")
    s.add_argument("--weights", help="weights JSON; default random weights from --seed")
    s.add_argument("--scene", help="scene bundle to crop a fixture from; default is a random fixture")
    s.add_argument("--tile", type=int, default=16)
    s.add_argument("--h", type=float, default=1e-4, help="finite-difference step in [1e-6, 1e-3]")
    s.add_argument("--tol", type=float, default=1e-4, help="maximum accepted relative error")
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    level = os.environ.get("PGRID_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print(json.dumps({"error": "CliError", "message": "--jobs must be >= 1"}), file=sys.stderr)
        return 1
    try:
        args.fn(args)
    except (CliError, ValueError, KeyError, OSError) as e:
        msg = str(e) if not isinstance(e, KeyError) else f"missing key {e}"
        print(json.dumps({"error": type(e).__name__, "message": msg}), file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
