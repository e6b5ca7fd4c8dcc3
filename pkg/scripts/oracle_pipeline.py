"""Oracle predictions through extraction, unification and graph snapping on one synthetic scene."""

import argparse
import time

import numpy as np

from pgrid.metrics import evaluate_poles, pixel_line_metrics
from pgrid.rasterops import buffer_polylines
from pgrid.synth import SceneConfig, generate_scene, oracle_predictions
from pgrid.unify import extract_lines, extract_poles, snap_graph, unify


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--extent", type=float, default=150.0, help="square scene side in meters")
    ap.add_argument("--seed", type=int, default=2)
    args = ap.parse_args()
    t0 = time.perf_counter()
    scene = generate_scene(SceneConfig(extent=(args.extent, args.extent), line_visibility=1.0), seed=args.seed)
    pole_prob, line_prob = oracle_predictions(scene)
    poles = extract_poles(pole_prob)
    skel, corr = extract_lines(line_prob)
    grid, shape = scene.image.georef, (scene.image.height, scene.image.width)
    row = evaluate_poles(scene.poles, poles, (5.0,))[0]
    lines = pixel_line_metrics(buffer_polylines(skel, 2.0, grid, shape), grid, scene.lines, 2.0)
    edges = snap_graph(unify(poles, (skel, corr)))
    print(f"poles: {len(poles)} predicted / {len(scene.poles)} true, F1_S@5m {row['F1_S']:.3f}")
    print(f"lines: F1 {lines['f1']:.4f}")
    print(f"edges: {len(edges)} snapped / {len(scene.edges)} true")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
