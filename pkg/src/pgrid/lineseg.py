"""Patch-level line segmentation: label downscaling, patch BCE, bilinear upsampling."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from pgrid.geo import PolylineSet, RasterGrid
from pgrid.rasterops import bilinear_resample, buffer_polylines
from pgrid.scorer import (
    Augment,
    FeatureScaling,
    ScorerWeights,
    TrainConfig,
    _map,
    extract_features,
    n_features,
)

log = logging.getLogger(__name__)

DEFAULT_SF = 4


class LineSegError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PatchLabelGrid:
    sf: int
    grid: np.ndarray
    source_shape: tuple


def _pad_to_patches(a: np.ndarray, sf: int, fill=0):
    h, w = a.shape[-2:]
    hp, wp = -(-h // sf), -(-w // sf)
    pad = [(0, 0)] * (a.ndim - 2) + [(0, hp * sf - h), (0, wp * sf - w)]
    return np.pad(a, pad, constant_values=fill), hp, wp


def downscale_labels(mask: np.ndarray, sf: int = DEFAULT_SF) -> PatchLabelGrid:
    """A patch is positive iff any of its source pixels is positive."""
    if sf < 1:
        raise LineSegError("scaling factor must be >= 1")
    m = np.asarray(mask).astype(bool)
    padded, hp, wp = _pad_to_patches(m, sf)
    grid = padded.reshape(hp, sf, wp, sf).any(axis=(1, 3))
    return PatchLabelGrid(sf, grid, m.shape)


def pool_patches(features: np.ndarray, sf: int) -> np.ndarray:
    """Mean of each sf x sf patch over its in-bounds pixels; (F, H, W) -> (F, Hp, Wp)."""
    f = np.asarray(features, dtype=np.float64)
    padded, hp, wp = _pad_to_patches(f, sf)
    ones, _, _ = _pad_to_patches(np.ones(f.shape[-2:]), sf)
    sums = padded.reshape(f.shape[0], hp, sf, wp, sf).sum(axis=(2, 4))
    counts = ones.reshape(hp, sf, wp, sf).sum(axis=(1, 3))
    return sums / counts


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def patch_bce_loss(patch_logits: np.ndarray, patch_labels: np.ndarray, eps: float = 1e-7):
    """Mean binary cross-entropy over patches.

    ``patch_logits`` is the line-vs-background logit per patch. Returns
    ``(loss, grad_logits, probs)``.
    """
    z = np.asarray(patch_logits, dtype=np.float64)
    y = np.asarray(patch_labels, dtype=np.float64)
    if z.shape != y.shape:
        raise LineSegError(f"logit shape {z.shape} does not match label shape {y.shape}")
    p = sigmoid(z)
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p >= eps) & (p <= 1.0 - eps)
    n = z.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n
    dp = np.where(inside, (-y / pc + (1.0 - y) / (1.0 - pc)), 0.0)
    grad = dp * p * (1.0 - p) / n
    return float(loss), grad, p


def bce_from_probs(probs: np.ndarray, labels: np.ndarray, eps: float = 1e-7) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise LineSegError(f"probability shape {p.shape} does not match label shape {y.shape}")
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def upsample_predictions(patch_probs: np.ndarray, sf: int, out_shape) -> np.ndarray:
    """Bilinear upsampling treating patch values as samples at patch centers."""
    h, w = out_shape
    hp, wp = patch_probs.shape
    if (hp, wp) != (-(-h // sf), -(-w // sf)):
        raise LineSegError(f"patch grid {patch_probs.shape} does not match {out_shape} at sf={sf}")
    out = bilinear_resample(patch_probs, h, w, scale=(sf, sf))
    return np.clip(out, 0.0, 1.0)


def patch_logits(pooled: np.ndarray, weights: ScorerWeights) -> np.ndarray:
    w = weights.W[:, 1] - weights.W[:, 0]
    return np.einsum("f,fhw->hw", w, pooled) + (weights.b[1] - weights.b[0])


def rasterize_training_lines(lines: PolylineSet, image: RasterGrid) -> np.ndarray:
    """One-pixel line rendering: pixels whose centers lie within half a pixel of a line."""
    if not len(lines):
        return np.zeros((image.height, image.width), dtype=bool)
    return buffer_polylines(lines, 0.5 * image.georef.pixel_size, image.georef, (image.height, image.width))


@dataclass
class LineSample:
    image: np.ndarray  # (C, H, W)
    mask: np.ndarray  # (H, W) bool

    @classmethod
    def from_lines(cls, image: RasterGrid, lines: PolylineSet) -> "LineSample":
        return cls(image.data.astype(np.float64), rasterize_training_lines(lines, image))


def line_loss_and_grad(weights: ScorerWeights, sample: LineSample, sf: int, aug: Optional[Augment] = None):
    image, mask = sample.image, sample.mask
    if aug is not None:
        image = aug.apply_image(image)
        mask = Augment(aug.flip_h, aug.flip_v, aug.rot90).apply_image(mask[None].astype(np.float64))[0] > 0.5
    pooled = pool_patches(extract_features(image), sf)
    labels = downscale_labels(mask, sf).grid
    loss, g, _ = patch_bce_loss(patch_logits(pooled, weights), labels)
    d1 = np.einsum("fhw,hw->f", pooled, g)
    dW = np.stack([-d1, d1], axis=1)
    db = np.array([-g.sum(), g.sum()])
    return loss, dW, db


def train_lines(dataset: Sequence, sf: int = DEFAULT_SF, config: Optional[TrainConfig] = None,
                weights: Optional[ScorerWeights] = None, jobs: int = 1):
    """Train the pooled-patch line head; returns ``(weights, loss_curve)``."""
    cfg = config or TrainConfig()
    samples = [s if isinstance(s, LineSample) else LineSample.from_lines(*s) for s in dataset]
    if not samples:
        raise LineSegError("training dataset is empty")
    channels = samples[0].image.shape[0]
    if weights is None:
        weights = ScorerWeights.zeros(n_features(channels))
        weights.b[1] = cfg.init_pole_bias
    weights = weights.copy()
    scaling = FeatureScaling.fit([pool_patches(extract_features(x.image), sf) for x in samples]) \
        if cfg.precondition else FeatureScaling.identity(weights.W.shape[0])
    rng = np.random.default_rng(cfg.seed)
    vW = np.zeros_like(weights.W)
    vb = np.zeros_like(weights.b)
    curve = []
    diverged = False
    for epoch in range(cfg.epochs):
        augs = [Augment.draw(rng, channels, cfg.brightness_jitter) if cfg.augment else None for _ in samples]
        results = _map(lambda a: line_loss_and_grad(weights, a[0], sf, a[1]), list(zip(samples, augs)), jobs)
        n = len(samples)
        mean = sum(r[0] for r in results) / n
        gW = np.zeros_like(weights.W)
        gb = np.zeros_like(weights.b)
        for _, dW, db in results:
            gW += dW
            gb += db
        if not (math.isfinite(mean) and np.all(np.isfinite(gW))):
            log.warning("line loss diverged at epoch %d; keeping last finite weights", epoch)
            diverged = True
            break
        curve.append(mean)
        sW, sb = scaling.standard_grad(gW / n, gb / n)
        vW = cfg.momentum * vW - cfg.lr * sW
        vb = cfg.momentum * vb - cfg.lr * sb
        dW, db = scaling.raw_step(vW, vb)
        weights.W, weights.b = weights.W + dW, weights.b + db
    weights.metadata = {
        "iterations": len(curve),
        "final_loss": curve[-1] if curve else None,
        "seed": cfg.seed,
        "diverged": diverged,
        "sf": sf,
        "config": asdict(cfg),
    }
    return weights, curve


def predict_lines(image: RasterGrid, weights: ScorerWeights, sf: int = DEFAULT_SF) -> RasterGrid:
    """Full-resolution line probability raster (1 channel, float32)."""
    pooled = pool_patches(extract_features(image), sf)
    probs = sigmoid(patch_logits(pooled, weights))
    full = upsample_predictions(probs, sf, (image.height, image.width))
    return RasterGrid(full.astype(np.float32)[None], image.georef)
