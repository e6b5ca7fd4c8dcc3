"""Point-supervised pole localization loss with analytic gradients.

Every component returns ``(loss, grad)`` where ``grad`` is d(loss)/dS, the
derivative with respect to the two-channel probability map (channel 0 is
background, channel 1 is pole). :func:`composite_loss` chains these through
the per-pixel softmax to get d(total)/d(logits).

Points are passed as pixel ``(row, col)`` pairs. Blob membership, the
image-level argmax and watershed ridges are treated as constants when
differentiating, so gradients are exact inside each piece of the
piecewise-smooth loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from pgrid.rasterops import connected_components, watershed

BG, FG = 0, 1


class PoleLossError(ValueError):
    pass


@dataclass
class LossConfig:
    fg_threshold: float = 0.5
    lambda_hard_neg: float = 1.0
    epsilon: float = 1e-7

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PoleLossError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class LossBreakdown:
    l_image: float
    l_point: float
    l_split: float
    l_fp: float
    l_hard_neg: float
    total: float
    grad_logits: np.ndarray
    ridge: Optional[np.ndarray] = None
    argmax: Optional[int] = None
    blob_mask: Optional[np.ndarray] = field(default=None, repr=False)

    def components(self) -> dict:
        return {
            "l_image": self.l_image,
            "l_point": self.l_point,
            "l_split": self.l_split,
            "l_fp": self.l_fp,
            "l_hard_neg": self.l_hard_neg,
        }


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_backward(S: np.ndarray, grad_S: np.ndarray) -> np.ndarray:
    """d/dZ from d/dS for a per-pixel softmax over axis 0."""
    return S * (grad_S - (grad_S * S).sum(axis=0, keepdims=True))


def _nll(p: np.ndarray, eps: float):
    """-log(clamp(p)) and its derivative (zero where the clamp is active)."""
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p >= eps) & (p <= 1.0 - eps)
    return -np.log(pc), np.where(inside, -1.0 / pc, 0.0)


def _check_points(points, shape, kind="point"):
    h, w = shape
    for k, (r, c) in enumerate(points):
        if not (0 <= r < h and 0 <= c < w):
            raise PoleLossError(f"{kind} {k} at pixel ({r}, {c}) is outside the {h}x{w} raster")


def image_level_loss(S: np.ndarray, has_pole: bool, eps: float = 1e-7):
    pole = S[FG]
    idx = int(np.argmax(pole))  # first maximum in row-major order
    r, c = divmod(idx, pole.shape[1])
    m = pole[r, c]
    grad = np.zeros_like(S)
    if has_pole:
        loss, d = _nll(np.array(m), eps)
        grad[FG, r, c] = d
    else:
        loss, d = _nll(np.array(1.0 - m), eps)
        grad[FG, r, c] = -d
    return float(loss), grad


def _pointwise_nll(S, channel, points, eps):
    grad = np.zeros_like(S)
    if not len(points):
        return 0.0, grad
    rr, cc = np.asarray(points, dtype=np.int64).T
    l, d = _nll(S[channel, rr, cc], eps)
    np.add.at(grad[channel], (rr, cc), d)
    return float(l.sum()), grad


def point_level_loss(S: np.ndarray, points: Sequence, eps: float = 1e-7):
    _check_points(points, S.shape[1:])
    return _pointwise_nll(S, FG, points, eps)


def _blobs(S, points, fg_threshold):
    return connected_components(S[FG] >= fg_threshold, 8, points=points)


def split_level_loss(S: np.ndarray, points: Sequence, fg_threshold: float = 0.5,
                     eps: float = 1e-7, blobs=None):
    """Ridge background NLL for blobs holding two or more points, weighted by the point count.

    Returns ``(loss, grad, ridge_mask)``.
    """
    _check_points(points, S.shape[1:])
    if blobs is None:
        blobs = _blobs(S, points, fg_threshold)
    grad = np.zeros_like(S)
    ridge_all = np.zeros(S.shape[1:], dtype=bool)
    loss = 0.0
    topo = 1.0 - S[FG]
    for k in np.nonzero(blobs.point_counts >= 2)[0] + 1:
        n_b = int(blobs.point_counts[k - 1])
        r0, c0, r1, c1 = blobs.bboxes[k - 1]
        sub_mask = blobs.labels[r0:r1, c0:c1] == k
        seeds = sorted({(r - r0, c - c0) for r, c in points if blobs.labels[r, c] == k})
        if len(seeds) < 2:
            continue
        _, ridge = watershed(topo[r0:r1, c0:c1], seeds, sub_mask)
        rr, cc = np.nonzero(ridge)
        rr, cc = rr + r0, cc + c0
        ridge_all[rr, cc] = True
        l, d = _nll(S[BG, rr, cc], eps)
        loss += n_b * float(l.sum())
        grad[BG, rr, cc] += n_b * d
    return loss, grad, ridge_all


def false_positive_loss(S: np.ndarray, points: Sequence, fg_threshold: float = 0.5,
                        eps: float = 1e-7, blobs=None):
    _check_points(points, S.shape[1:])
    if blobs is None:
        blobs = _blobs(S, points, fg_threshold)
    grad = np.zeros_like(S)
    if blobs.blob_count == 0:
        return 0.0, grad
    empty = np.zeros(blobs.blob_count + 1, dtype=bool)
    empty[1:] = blobs.point_counts == 0
    sel = empty[blobs.labels]
    l, d = _nll(S[BG][sel], eps)
    grad[BG][sel] = d
    return float(l.sum()), grad


def hard_negative_loss(S: np.ndarray, negatives: Sequence, weight: float = 1.0, eps: float = 1e-7):
    _check_points(negatives, S.shape[1:], kind="hard negative")
    if weight == 0.0:
        return 0.0, np.zeros_like(S)
    loss, grad = _pointwise_nll(S, BG, negatives, eps)
    return weight * loss, weight * grad


def composite_loss(logits: np.ndarray, points: Sequence = (), negatives: Sequence = (),
                   config: Optional[LossConfig] = None) -> LossBreakdown:
    cfg = config or LossConfig()
    Z = np.asarray(logits, dtype=np.float64)
    if Z.ndim != 3 or Z.shape[0] != 2:
        raise PoleLossError(f"logits must have shape (2, H, W), got {Z.shape}")
    points = [tuple(map(int, p)) for p in points]
    negatives = [tuple(map(int, p)) for p in negatives]
    _check_points(points, Z.shape[1:])
    _check_points(negatives, Z.shape[1:], kind="hard negative")
    S = softmax(Z)
    eps = cfg.epsilon
    blobs = _blobs(S, points, cfg.fg_threshold)

    l_img, g = image_level_loss(S, bool(points), eps)
    grad_S = g
    l_pt, g = point_level_loss(S, points, eps)
    grad_S = grad_S + g
    l_sp, g, ridge = split_level_loss(S, points, cfg.fg_threshold, eps, blobs=blobs)
    grad_S = grad_S + g
    l_fp, g = false_positive_loss(S, points, cfg.fg_threshold, eps, blobs=blobs)
    grad_S = grad_S + g
    l_hn, g = hard_negative_loss(S, negatives, cfg.lambda_hard_neg, eps)
    grad_S = grad_S + g

    total = l_img + l_pt + l_sp + l_fp + l_hn
    return LossBreakdown(
        l_image=l_img, l_point=l_pt, l_split=l_sp, l_fp=l_fp, l_hard_neg=l_hn,
        total=total,
        grad_logits=softmax_backward(S, grad_S),
        ridge=ridge,
        argmax=int(np.argmax(S[FG])),
        blob_mask=blobs.labels > 0,
    )


def structure_key(logits: np.ndarray, points: Sequence, config: Optional[LossConfig] = None):
    """Discrete state the loss depends on: argmax pixel, foreground mask and ridge set.

    Two logit rasters with equal keys lie in the same smooth piece of the loss.
    """
    b = composite_loss(logits, points, (), config)
    return b.argmax, b.blob_mask.tobytes(), b.ridge.tobytes()
