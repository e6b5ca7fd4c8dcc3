"""Fixed-feature per-pixel classifier trained on the composite pole loss.

Feature channel order (``F = C + 5`` for a C-channel image):

    0..C-1   raw image channels
    C        luminance blurred with a Gaussian, sigma = 1 px
    C+1      luminance blurred, sigma = 2 px
    C+2      luminance blurred, sigma = 4 px
    C+3      Sobel gradient magnitude of luminance
    C+4      local standard deviation of luminance over a 5x5 window

Luminance is the channel mean. All filters use half-sample symmetric
reflection at the borders (``d c b a | a b c d``).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from pgrid.geo import PointAnnotations, RasterGrid
from pgrid.poleloss import LossConfig, composite_loss, softmax
from pgrid.rasterops import points_to_pixels

log = logging.getLogger(__name__)

FEATURE_BANK_VERSION = 1
BLUR_SIGMAS = (1.0, 2.0, 4.0)
STD_WINDOW = 5


class ScorerError(ValueError):
    pass


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def n_features(channels: int) -> int:
    return channels + len(BLUR_SIGMAS) + 2


def extract_features(image) -> np.ndarray:
    """Feature raster of shape (F, H, W) for an image RasterGrid or (C, H, W) array."""
    data = image.data if isinstance(image, RasterGrid) else np.asarray(image)
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3 or data.shape[0] < 1:
        raise ScorerError("image needs at least one channel")
    data = data.astype(np.float64)
    lum = data.mean(axis=0)
    feats = [c for c in data]
    feats += [_blur(lum, s) for s in BLUR_SIGMAS]
    gx = ndimage.sobel(lum, axis=1, mode="reflect")
    gy = ndimage.sobel(lum, axis=0, mode="reflect")
    feats.append(np.hypot(gx, gy))
    mean = ndimage.uniform_filter(lum, STD_WINDOW, mode="reflect")
    sq = ndimage.uniform_filter(lum * lum, STD_WINDOW, mode="reflect")
    feats.append(np.sqrt(np.maximum(sq - mean * mean, 0.0)))
    return np.stack(feats)


@dataclass(eq=False)
class ScorerWeights:
    W: np.ndarray  # (F, 2)
    b: np.ndarray  # (2,)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64).reshape(-1, 2)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ScorerError("weights must be finite")

    @classmethod
    def zeros(cls, n_feat: int) -> "ScorerWeights":
        return cls(np.zeros((n_feat, 2)), np.zeros(2))

    def copy(self) -> "ScorerWeights":
        return ScorerWeights(self.W.copy(), self.b.copy(), json.loads(json.dumps(self.metadata)))

    def to_dict(self) -> dict:
        return {
            "feature_bank_version": FEATURE_BANK_VERSION,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerWeights":
        if d.get("feature_bank_version") != FEATURE_BANK_VERSION:
            raise ScorerError(f"unsupported feature bank version {d.get('feature_bank_version')!r}")
        return cls(np.array(d["W"], dtype=np.float64), np.array(d["b"], dtype=np.float64), d.get("metadata", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ScorerWeights":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, ScorerWeights):
            return NotImplemented
        return (self.W.tobytes() == other.W.tobytes() and self.b.tobytes() == other.b.tobytes()
                and self.metadata == other.metadata)


def score_logits(features: np.ndarray, weights: ScorerWeights) -> np.ndarray:
    if features.shape[0] != weights.W.shape[0]:
        raise ScorerError(f"feature count {features.shape[0]} does not match weight rows {weights.W.shape[0]}")
    return np.einsum("fk,fhw->khw", weights.W, features) + weights.b[:, None, None]


def score(features: np.ndarray, weights: ScorerWeights) -> np.ndarray:
    """Per-pixel class probabilities (2, H, W): background, pole."""
    return softmax(score_logits(features, weights))


def weight_gradient(features: np.ndarray, grad_logits: np.ndarray):
    """Chain d/d(logits) back to (dW, db) for the per-pixel affine head."""
    dW = np.einsum("fhw,khw->fk", features, grad_logits)
    db = grad_logits.sum(axis=(1, 2))
    return dW, db


# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class Augment:
    flip_h: bool = False
    flip_v: bool = False
    rot90: int = 0
    gains: tuple = ()

    @classmethod
    def draw(cls, rng: np.random.Generator, channels: int, jitter: float = 0.1) -> "Augment":
        flip_h, flip_v = (bool(v) for v in rng.integers(0, 2, size=2))
        k = int(rng.integers(0, 4))
        gains = tuple(float(g) for g in rng.uniform(1 - jitter, 1 + jitter, size=channels))
        return cls(flip_h, flip_v, k, gains)

    def apply_image(self, data: np.ndarray) -> np.ndarray:
        out = data
        if self.gains:
            out = out * np.asarray(self.gains)[:, None, None]
        if self.flip_h:
            out = out[:, :, ::-1]
        if self.flip_v:
            out = out[:, ::-1, :]
        if self.rot90:
            out = np.rot90(out, self.rot90, axes=(1, 2))
        return np.ascontiguousarray(out)

    def apply_pixels(self, pixels, shape):
        """Move (row, col) pixels the same way :meth:`apply_image` moves the raster."""
        h, w = shape
        out = []
        for r, c in pixels:
            hh, ww = h, w
            if self.flip_h:
                c = ww - 1 - c
            if self.flip_v:
                r = hh - 1 - r
            for _ in range(self.rot90):
                # np.rot90 (counter-clockwise): new[i, j] = old[j, ww - 1 - i]
                r, c = ww - 1 - c, r
                hh, ww = ww, hh
            out.append((r, c))
        return out


# ---------------------------------------------------------------- training


@dataclass(frozen=True, eq=False)
class FeatureScaling:
    """Per-feature mean and spread used to precondition gradient descent.

    Training steps are taken on standardized features and mapped back to the
    raw-feature head, so stored weights always act on raw features. The raw
    bank is badly conditioned (raw channels and blurs all track luminance).
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: Sequence[np.ndarray]) -> "FeatureScaling":
        f = len(features[0])
        total = sum(x.reshape(f, -1).sum(axis=1) for x in features)
        count = sum(x[0].size for x in features)
        mean = total / count
        var = sum(((x.reshape(f, -1) - mean[:, None]) ** 2).sum(axis=1) for x in features) / count
        scale = np.sqrt(var)
        scale[scale < 1e-12] = 1.0
        return cls(mean, scale)

    @classmethod
    def identity(cls, f: int) -> "FeatureScaling":
        return cls(np.zeros(f), np.ones(f))

    def standard_grad(self, gW: np.ndarray, gb: np.ndarray):
        return (gW - self.mean[:, None] * gb[None, :]) / self.scale[:, None], gb

    def raw_step(self, dW: np.ndarray, db: np.ndarray):
        dW_raw = dW / self.scale[:, None]
        return dW_raw, db - self.mean @ dW_raw


@dataclass
class TrainConfig:
    lr: float = 1e-2  # deep backbones use ~1e-6; this head is a linear map on fixed features
    epochs: int = 50
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    lambda_hard_neg: float = 1.0
    fg_threshold: float = 0.5
    init_pole_bias: float = -4.0  # start near "background everywhere" so the false-positive term is small
    brightness_jitter: float = 0.1
    precondition: bool = True  # descend on standardized features

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ScorerError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def loss_config(self) -> LossConfig:
        return LossConfig(fg_threshold=self.fg_threshold, lambda_hard_neg=self.lambda_hard_neg)


@dataclass
class PoleSample:
    """One training image with pole and hard-negative pixels as (row, col)."""

    image: np.ndarray  # (C, H, W) float
    poles: list
    negatives: list = field(default_factory=list)

    @classmethod
    def from_annotations(cls, image: RasterGrid, points: PointAnnotations) -> "PoleSample":
        shape = (image.height, image.width)
        poles = points_to_pixels(points.of_polarity("pole"), image.georef, shape)
        negs = points_to_pixels(points.of_polarity("hard_negative"), image.georef, shape)
        return cls(image.data.astype(np.float64), poles, negs)


def _as_samples(dataset) -> list:
    out = []
    for item in dataset:
        if isinstance(item, PoleSample):
            out.append(item)
        else:
            image, points = item
            out.append(PoleSample.from_annotations(image, points))
    return out


def sample_loss_and_grad(weights: ScorerWeights, sample: PoleSample, loss_cfg: LossConfig,
                         aug: Optional[Augment] = None):
    image, poles, negs = sample.image, sample.poles, sample.negatives
    if aug is not None:
        shape = image.shape[1:]
        image = aug.apply_image(image)
        poles = aug.apply_pixels(poles, shape)
        negs = aug.apply_pixels(negs, shape)
    feats = extract_features(image)
    br = composite_loss(score_logits(feats, weights), poles, negs, loss_cfg)
    dW, db = weight_gradient(feats, br.grad_logits)
    return br, dW, db


def train_poles(dataset: Sequence, config: Optional[TrainConfig] = None, weights: Optional[ScorerWeights] = None,
                jobs: int = 1):
    """Gradient descent (with momentum) on the epoch-mean composite loss.

    ``dataset`` holds :class:`PoleSample` items or ``(RasterGrid, PointAnnotations)``
    pairs. Returns ``(weights, loss_curve)`` with one mean loss per epoch,
    measured before that epoch's update.
    """
    cfg = config or TrainConfig()
    samples = _as_samples(dataset)
    if not samples:
        raise ScorerError("training dataset is empty")
    channels = samples[0].image.shape[0]
    if weights is None:
        weights = ScorerWeights.zeros(n_features(channels))
        weights.b[1] = cfg.init_pole_bias
    weights = weights.copy()
    loss_cfg = cfg.loss_config()
    scaling = FeatureScaling.fit([extract_features(x.image) for x in samples]) if cfg.precondition \
        else FeatureScaling.identity(weights.W.shape[0])
    rng = np.random.default_rng(cfg.seed)
    vW = np.zeros_like(weights.W)
    vb = np.zeros_like(weights.b)
    curve = []
    diverged = False
    for epoch in range(cfg.epochs):
        augs = [Augment.draw(rng, channels, cfg.brightness_jitter) if cfg.augment else None for _ in samples]
        results = _map(lambda a: sample_loss_and_grad(weights, a[0], loss_cfg, a[1]), list(zip(samples, augs)), jobs)
        total = 0.0
        gW = np.zeros_like(weights.W)
        gb = np.zeros_like(weights.b)
        for br, dW, db in results:  # fixed reduction order
            total += br.total
            gW += dW
            gb += db
        n = len(samples)
        mean = total / n
        if not (math.isfinite(mean) and np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            log.warning("loss diverged at epoch %d; keeping last finite weights", epoch)
            diverged = True
            break
        curve.append(mean)
        sW, sb = scaling.standard_grad(gW / n, gb / n)
        vW = cfg.momentum * vW - cfg.lr * sW
        vb = cfg.momentum * vb - cfg.lr * sb
        dW, db = scaling.raw_step(vW, vb)
        new_W, new_b = weights.W + dW, weights.b + db
        if not (np.all(np.isfinite(new_W)) and np.all(np.isfinite(new_b))):
            diverged = True
            break
        weights.W, weights.b = new_W, new_b
        log.debug("epoch %d mean loss %.6f", epoch, mean)
    weights.metadata = {
        "iterations": len(curve),
        "final_loss": curve[-1] if curve else None,
        "seed": cfg.seed,
        "diverged": diverged,
        "config": asdict(cfg),
    }
    return weights, curve


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))  # map preserves order


def predict_poles(image, weights: ScorerWeights) -> RasterGrid:
    """Pole probability map (2-channel float32 raster) for an image."""
    probs = score(extract_features(image), weights)
    georef = image.georef if isinstance(image, RasterGrid) else None
    data = probs.astype(np.float32)
    # renormalise after the float32 cast so channels still sum to one
    data[0] = (1.0 - data[1].astype(np.float64)).astype(np.float32)
    return RasterGrid(data, georef) if georef is not None else RasterGrid(data)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradcheckReport:
    max_rel_error: float
    max_abs_error: float
    checked: int
    skipped: int
    worst_index: Optional[tuple] = None

    def to_dict(self) -> dict:
        return asdict(self)


def relative_error(a, b, floor: float = 1e-8) -> float:
    return float(abs(a - b) / max(abs(a), abs(b), floor))


def gradcheck(weights: ScorerWeights, sample: PoleSample, h: float = 1e-4,
              loss_cfg: Optional[LossConfig] = None) -> GradcheckReport:
    """Analytic d(total)/d(W, b) against central finite differences per weight.

    Coordinates whose perturbation moves the loss onto a different smooth
    piece (argmax pixel, foreground mask or ridge set changes) are skipped.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ScorerError("finite-difference step must lie in [1e-6, 1e-3]")
    loss_cfg = loss_cfg or LossConfig()
    feats = extract_features(sample.image)

    def evaluate(w: ScorerWeights):
        return composite_loss(score_logits(feats, w), sample.poles, sample.negatives, loss_cfg)

    base = evaluate(weights)
    dW, db = weight_gradient(feats, base.grad_logits)
    key = (base.argmax, base.blob_mask.tobytes(), base.ridge.tobytes())
    worst = (0.0, 0.0, None)
    checked = skipped = 0
    coords = [("W", i, k) for i in range(weights.W.shape[0]) for k in range(2)] + [("b", 0, k) for k in range(2)]
    for which, i, k in coords:
        vals = []
        same = True
        for sgn in (1.0, -1.0):
            w = weights.copy()
            if which == "W":
                w.W[i, k] += sgn * h
            else:
                w.b[k] += sgn * h
            br = evaluate(w)
            same &= (br.argmax, br.blob_mask.tobytes(), br.ridge.tobytes()) == key
            vals.append(br.total)
        if not same:
            skipped += 1
            continue
        fd = (vals[0] - vals[1]) / (2 * h)
        an = dW[i, k] if which == "W" else db[k]
        checked += 1
        rel = relative_error(an, fd)
        if rel >= worst[0]:
            worst = (rel, max(worst[1], abs(an - fd)), (which, i, k))
        else:
            worst = (worst[0], max(worst[1], abs(an - fd)), worst[2])
    return GradcheckReport(worst[0], worst[1], checked, skipped, worst[2])
