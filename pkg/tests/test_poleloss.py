import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgrid.poleloss import (
    LossConfig,
    PoleLossError,
    composite_loss,
    false_positive_loss,
    hard_negative_loss,
    image_level_loss,
    point_level_loss,
    softmax,
    split_level_loss,
)
from pgrid.rasterops import connected_components

from oracles import central_difference_check

LOG2 = 0.693147


def prob_map(pole):
    pole = np.asarray(pole, dtype=float)
    return np.stack([1.0 - pole, pole])


def test_softmax_is_a_probability_map(rng):
    S = softmax(rng.normal(scale=20, size=(2, 9, 9)))
    assert np.all((S >= 0) & (S <= 1))
    assert np.allclose(S.sum(axis=0), 1.0, atol=1e-12)


def test_image_level_values():
    pole = np.full((4, 4), 0.2)
    pole[2, 1] = 0.5
    loss, grad = image_level_loss(prob_map(pole), has_pole=False)
    assert loss == pytest.approx(LOG2, abs=1e-6)
    assert np.count_nonzero(grad) == 1 and grad[1, 2, 1] != 0
    loss, _ = image_level_loss(prob_map(np.full((3, 3), 1 - 1e-7)), has_pole=True)
    assert loss == pytest.approx(0.0, abs=1e-6)


def test_image_level_tie_breaks_row_major():
    loss, grad = image_level_loss(prob_map(np.full((5, 5), 0.5)), has_pole=True)
    assert loss == pytest.approx(LOG2, abs=1e-6)
    assert np.argwhere(grad != 0).tolist() == [[1, 0, 0]]


def test_point_level_values():
    pole = np.full((6, 6), 0.9)
    assert point_level_loss(prob_map(pole), [])[0] == 0.0
    loss, grad = point_level_loss(prob_map(pole), [(1, 1), (4, 2)])
    assert loss == pytest.approx(0.210721, abs=1e-6)
    assert np.count_nonzero(grad) == 2
    pole[0, 0] = 0.0
    loss, _ = point_level_loss(prob_map(pole), [(0, 0)])
    assert loss == pytest.approx(-math.log(1e-7))


def test_out_of_bounds_point_names_it():
    with pytest.raises(PoleLossError, match="point 1"):
        point_level_loss(prob_map(np.zeros((4, 4))), [(0, 0), (4, 0)])
    with pytest.raises(PoleLossError, match="hard negative 0"):
        composite_loss(np.zeros((2, 4, 4)), [], [(-1, 2)])


def dumbbell():
    pole = np.full((7, 15), 0.05)
    pole[1:6, 1:6] = 0.95
    pole[1:6, 9:14] = 0.95
    pole[3, 6:9] = 0.5  # neck, exactly at the threshold
    return pole, [(3, 3), (3, 11)]


def test_split_dumbbell():
    pole, pts = dumbbell()
    loss, grad, ridge = split_level_loss(prob_map(pole), pts)
    k = int(ridge.sum())
    assert k >= 1
    assert ridge[3, 6:9].sum() == k  # ridge sits in the neck
    assert loss == pytest.approx(2 * k * LOG2, abs=1e-5)
    # the ridge cuts the blob in two, one seed each
    parts = connected_components((pole >= 0.5) & ~ridge, 8)
    assert parts.blob_count == 2
    assert parts.labels[3, 3] != parts.labels[3, 11]
    assert np.all(grad[1] == 0) and np.count_nonzero(grad[0]) == k


def test_split_decreases_with_ridge_background():
    pole, pts = dumbbell()
    base, _, ridge = split_level_loss(prob_map(pole), pts)
    S = prob_map(pole)
    S[0][ridge] = 0.7
    lower, _, _ = split_level_loss(S, pts, blobs=connected_components(pole >= 0.5, 8, points=pts))
    assert lower < base


def test_split_zero_with_one_point_per_blob():
    pole, _ = dumbbell()
    assert split_level_loss(prob_map(pole), [(3, 3)])[0] == 0.0
    pole[3, 6:9] = 0.05
    assert split_level_loss(prob_map(pole), [(3, 3), (3, 11)])[0] == 0.0


def test_false_positive_values():
    pole = np.full((8, 8), 0.05)
    assert false_positive_loss(prob_map(pole), [])[0] == 0.0
    # a blob with background 0.8 needs a threshold below 0.2
    pole[2, 1:6] = 0.2
    loss, grad = false_positive_loss(prob_map(pole), [], fg_threshold=0.15)
    assert loss == pytest.approx(1.115718, abs=1e-6)
    assert np.count_nonzero(grad) == 5
    assert false_positive_loss(prob_map(pole), [(2, 3)], fg_threshold=0.15)[0] == 0.0


def test_false_positive_ignores_pointed_blob_values(rng):
    pole = np.full((10, 10), 0.05)
    pole[1:4, 1:4] = 0.9
    pole[6:9, 6:9] = 0.7
    base = false_positive_loss(prob_map(pole), [(2, 2)])[0]
    pole[1:4, 1:4] = rng.uniform(0.5, 1.0, size=(3, 3))
    assert false_positive_loss(prob_map(pole), [(2, 2)])[0] == pytest.approx(base, rel=0, abs=0)


def test_hard_negative_values():
    S = prob_map(np.full((5, 5), 0.1))
    assert hard_negative_loss(S, [])[0] == 0.0
    loss, _ = hard_negative_loss(S, [(0, 0), (1, 1), (2, 2)])
    assert loss == pytest.approx(0.316082, abs=1e-6)
    assert hard_negative_loss(S, [(0, 0)], weight=0.0)[0] == 0.0


def test_lambda_zero_removes_term():
    Z = np.zeros((2, 6, 6))
    b = composite_loss(Z, [(1, 1)], [(4, 4)], LossConfig(lambda_hard_neg=0.0))
    assert b.l_hard_neg == 0.0
    assert b.total == pytest.approx(composite_loss(Z, [(1, 1)]).total)


def test_confident_background_is_nearly_free():
    Z = np.zeros((2, 12, 12))
    Z[0] = 30.0
    assert composite_loss(Z).total == pytest.approx(0.0, abs=1e-6)


def test_config_round_trip_and_unknown_keys():
    cfg = LossConfig(0.4, 2.0, 1e-6)
    import json
    assert LossConfig.from_dict(json.loads(cfg.to_json())) == cfg
    with pytest.raises(PoleLossError):
        LossConfig.from_dict({"lambda": 1})


def random_case(seed, size=16):
    rng = np.random.default_rng(seed)
    Z = rng.normal(scale=2.0, size=(2, size, size))
    pts = sorted({tuple(map(int, p)) for p in rng.integers(0, size, (rng.integers(0, 6), 2))})
    neg = [tuple(map(int, p)) for p in rng.integers(0, size, (rng.integers(0, 4), 2))]
    return Z, pts, neg


def loss_evaluator(pts, neg):
    def evaluate(Z):
        b = composite_loss(Z, pts, neg)
        return b.total, (b.argmax, b.blob_mask.tobytes(), b.ridge.tobytes())
    return evaluate


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1))
def test_composite_gradient_matches_finite_differences(seed):
    Z, pts, neg = random_case(seed, size=8)
    b = composite_loss(Z, pts, neg)
    err, checked, _ = central_difference_check(loss_evaluator(pts, neg), Z, b.grad_logits)
    assert checked > 0
    assert err <= 1e-4


@given(st.integers(0, 2**31 - 1))
def test_components_nonnegative_and_sum(seed):
    Z, pts, neg = random_case(seed)
    Z *= 10
    b = composite_loss(Z, pts, neg)
    parts = b.components()
    assert all(np.isfinite(v) and v >= 0 for v in parts.values())
    assert abs(b.total - sum(parts.values())) <= 1e-9
    assert b.grad_logits.shape == Z.shape
    assert np.all(np.isfinite(b.grad_logits))


def test_loss_is_deterministic():
    Z, pts, neg = random_case(3)
    a, b = composite_loss(Z, pts, neg), composite_loss(Z, pts, neg)
    assert a.total == b.total
    assert np.array_equal(a.grad_logits, b.grad_logits)
