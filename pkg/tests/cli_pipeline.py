"""Run every CLI subcommand once over a small synthetic workspace."""

import json
from pathlib import Path

from pgrid.cli import main

SCENE_CONFIG = {"extent": [70.0, 70.0], "fence_density": 4.0, "tree_density": 4.0, "line_visibility": 1.0}


def run(*argv):
    code = main([str(a) for a in argv])
    if code != 0:
        raise AssertionError(f"pgrid {' '.join(map(str, argv))} exited {code}")


def run_pipeline(work, jobs=1, seed=7):
    w = Path(work)
    w.mkdir(parents=True, exist_ok=True)
    cfg = w / "scene.json"
    cfg.write_text(json.dumps(SCENE_CONFIG))
    j = ["--jobs", jobs]
    run("synth", "--config", cfg, "--seed", seed, "--count", 2, "--oracle", "--out", w / "scenes", *j)
    s0, s1 = w / "scenes" / f"scene_{seed:05d}", w / "scenes" / f"scene_{seed + 1:05d}"
    run("train-poles", "--scene", s0, s1, "--epochs", 3, "--seed", seed, "--out", w / "poles.json",
        "--curve", w / "poles_curve.json", *j)
    run("detect-poles", "--image", s0 / "image.pgr", "--weights", w / "poles.json", "--out", w / "det.pgr",
        "--points", w / "det.geojson", "--min-area", 1)
    run("train-lines", "--scene", s0, s1, "--epochs", 2, "--seed", seed, "--out", w / "lines.json", *j)
    run("segment-lines", "--image", s0 / "image.pgr", "--weights", w / "lines.json", "--out", w / "seg.pgr")
    run("eval-poles", "--gt", s0 / "poles.geojson", "--pred", w / "det.geojson", "--out", w / "eval_poles.json",
        "--csv", w / "eval_poles.csv")
    run("eval-lines", "--gt", s0 / "lines.geojson", "--pred", w / "seg.pgr", "--out", w / "eval_lines.json")
    for name, s in (("g0", s0), ("g1", s1)):
        run("unify", "--pole-probs", s / "oracle_poles.pgr", "--line-probs", s / "oracle_lines.pgr",
            "--out", w / "grid" / name)
    run("eval-poles", "--gt", s0 / "poles.geojson", "--pred", w / "grid" / "g0.poles.geojson",
        "--out", w / "eval_oracle.json")
    run("eval-lines", "--gt", s0 / "lines.geojson", "--pred", w / "grid" / "g0.lines.geojson",
        "--grid", s0 / "oracle_lines.pgr", "--out", w / "eval_oracle_lines.json")
    run("snap-graph", "--layout", w / "grid" / "g0", "--out", w / "edges.json")
    run("dmap", "--pair", s0 / "poles.geojson", w / "grid" / "g0.poles.geojson",
        "--pair", s1 / "poles.geojson", w / "grid" / "g1.poles.geojson", "--out", w / "dmap.json")
    run("coverage", "--ours", w / "grid" / "g0", "--external", s1 / "lines.geojson", s1 / "poles.geojson",
        "--cell-size", 25, "--out", w / "coverage.json")
    run("gradcheck", "--scene", s0, "--seed", seed, "--out", w / "gradcheck.json")
    return w


def output_bytes(work):
    """Relative path -> file bytes for every file the pipeline wrote."""
    w = Path(work)
    return {str(p.relative_to(w)): p.read_bytes() for p in sorted(w.rglob("*")) if p.is_file()}
