"""How much line ground truth survives patch downscaling, for a few scaling factors.

Reports, per sf, the share of label pixels covered after upsampling the patch
grid back (always 1) and the share of extra pixels the coarse grid claims.
"""

import argparse

import numpy as np

from pgrid.lineseg import downscale_labels
from pgrid.synth import SceneConfig, generate_scene, rendered_line_mask


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sf", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    scene = generate_scene(SceneConfig(extent=(100.0, 100.0), line_visibility=1.0), seed=args.seed)
    mask = rendered_line_mask(scene)
    print(f"line pixels: {int(mask.sum())} of {mask.size}")
    for sf in args.sf:
        h, w = (np.array(mask.shape) // sf) * sf
        m = mask[:h, :w]
        up = np.kron(downscale_labels(m, sf).grid, np.ones((sf, sf), bool))
        kept = (m & up).sum() / max(m.sum(), 1)
        extra = (up & ~m).sum() / max(up.sum(), 1)
        print(f"sf={sf:2d}  kept {kept:.3f}  coarse-only share {extra:.3f}")


if __name__ == "__main__":
    main()
