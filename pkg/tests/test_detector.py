import math

import numpy as np
import pytest

from oracles import cam_closed_form, finite_difference_grad, kink_free_draw, loss_of_flat, relative_error
from prle import detector
from prle.cam import compute_cam
from prle.data import SyntheticConfig, generate_synthetic_dataset, patch_mask
from prle.detector import BCE_EPS, DetectorParams, backward, bce_loss, extract_cam_inputs, forward


def zero_params(k=2, side=5):
    return DetectorParams(np.zeros((k, 1, 3, 3)), np.zeros(k), np.zeros(k), 0.0, side)


def test_zero_params_score_half():
    img = np.random.default_rng(0).random((5, 5))
    assert forward(zero_params(), img).score == 0.5


def test_constant_activation_hand_example():
    p = DetectorParams(np.zeros((1, 1, 3, 3)), [1.0], [1.0], 0.0, 4)
    tr = forward(p, np.random.default_rng(1).random((4, 4)))
    assert np.all(tr.activations == 1.0)
    assert tr.pooled.tolist() == [1.0]
    assert tr.logit == 1.0
    assert tr.score == pytest.approx(0.7310585786300049, abs=1e-12)


def test_linear_bias_shifts_logit():
    rng = np.random.default_rng(2)
    p, img, _ = kink_free_draw(rng)
    q = p.copy()
    q.linear_bias += 0.75
    assert forward(q, img).logit - forward(p, img).logit == pytest.approx(0.75, abs=1e-12)


def test_forward_rejects_wrong_size():
    with pytest.raises(ValueError):
        forward(zero_params(side=5), np.zeros((4, 4)))


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    p, img, _ = kink_free_draw(rng)
    a, b = forward(p, img), forward(p, img)
    assert np.array_equal(a.activations, b.activations) and a.score == b.score


def test_params_validation():
    with pytest.raises(ValueError):
        DetectorParams(np.zeros((2, 1, 3, 3)), np.zeros(3), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        DetectorParams(np.full((1, 1, 3, 3), np.inf), np.zeros(1), np.zeros(1), 0.0)


def test_init_scaling_and_seed():
    p = DetectorParams.init(8, seed=4)
    assert np.all(np.abs(p.conv_weights) <= 0.5 / 3)
    assert np.all(np.abs(p.linear_weights) <= 0.5 / math.sqrt(8))
    assert p == DetectorParams.init(8, seed=4)
    assert p != DetectorParams.init(8, seed=5)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p, img, y = kink_free_draw(rng)
    grads, _ = backward(p, img, y)
    fn = lambda v: loss_of_flat(DetectorParams, v, p.channels, p.input_side, img[None], [y])
    num = finite_difference_grad(fn, p.flat())
    assert relative_error(grads.flat(), num).max() < 1e-4


def test_weighted_batch_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    while True:
        p, _, _ = kink_free_draw(rng, sides=(5, 5))
        imgs = rng.random((3, 5, 5))
        if np.abs(detector._forward_batch(p, imgs)[1]).min() > 1e-3:
            break
    labels, wts = [1, 0, 1], [1.0, 2.0, 0.5]
    _, grads, _ = detector.batch_gradients(p, imgs, labels, wts)
    fn = lambda v: loss_of_flat(DetectorParams, v, p.channels, 5, imgs, labels, wts)
    assert relative_error(grads.flat(), finite_difference_grad(fn, p.flat())).max() < 1e-4


def test_feature_grads_closed_form():
    rng = np.random.default_rng(6)
    p, img, y = kink_free_draw(rng)
    _, fg = backward(p, img, y)
    s = forward(p, img).score
    expected = s * (1 - s) * p.linear_weights / img.size
    for k in range(p.channels):
        assert np.all(fg[k] == fg[k, 0, 0])
        assert fg[k, 0, 0] == pytest.approx(expected[k], rel=1e-12)


def test_loss_gradient_vanishes_near_perfect_prediction():
    p = DetectorParams(np.zeros((1, 1, 3, 3)), [0.0], [0.0], 0.0, 3)
    img = np.zeros((3, 3))
    mags = []
    for b in (2.0, 8.0, 20.0):
        p.linear_bias = b
        g, _ = backward(p, img, 1)
        mags.append(abs(g.linear_bias))
    assert mags[0] > mags[1] > mags[2] and mags[2] < 1e-8


def test_bce_examples():
    assert bce_loss(1 - BCE_EPS, 1) == pytest.approx(0.0, abs=1e-11)
    assert bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    for s in (0.1, 0.37, 0.9):
        assert bce_loss(s, 1) == pytest.approx(bce_loss(1 - s, 0), rel=1e-12)
    assert np.isfinite(bce_loss(0.0, 1)) and np.isfinite(bce_loss(1.0, 0))


def test_cam_inputs_shapes_and_closed_form():
    rng = np.random.default_rng(8)
    p, img, _ = kink_free_draw(rng)
    feats, grads = extract_cam_inputs(p, img)
    assert feats.shape == grads.shape == (p.channels,) + img.shape
    assert np.abs(compute_cam(feats, grads) - cam_closed_form(p, img)).max() <= 1e-12


def test_zero_linear_weights_zero_cam():
    rng = np.random.default_rng(9)
    p, img, _ = kink_free_draw(rng)
    p.linear_weights[:] = 0
    assert not compute_cam(*extract_cam_inputs(p, img)).any()


def test_cam_batch_matches_single():
    p = DetectorParams.init(4, seed=1, input_side=8)
    imgs = np.random.default_rng(1).random((5, 8, 8))
    batch = detector.cam_batch(p, imgs)
    for i in range(5):
        np.testing.assert_allclose(batch[i], compute_cam(*extract_cam_inputs(p, imgs[i])), atol=1e-15)


def test_flat_roundtrip():
    p = DetectorParams.init(3, seed=2)
    assert DetectorParams.from_flat(p.flat(), 3) == p


# synthetic data


def test_rho_one_patch_exactly_on_positives():
    cfg = SyntheticConfig(n_examples=200, rho=1.0, seed=1)
    ds = generate_synthetic_dataset(cfg)
    assert np.array_equal(ds.has_patch, ds.labels == 1)
    pm = patch_mask(cfg)
    assert np.all(ds.images[ds.labels == 1][:, pm] == 1.0)


def test_rho_half_patch_uninformative():
    ds = generate_synthetic_dataset(SyntheticConfig(n_examples=20000, side=8, patch_side=2, rho=0.5, seed=3))
    joint = np.histogram2d(ds.labels, ds.has_patch.astype(int), bins=2)[0] / len(ds)
    py, pp = joint.sum(1), joint.sum(0)
    mi = sum(
        joint[i, j] * math.log(joint[i, j] / (py[i] * pp[j])) for i in range(2) for j in range(2) if joint[i, j] > 0
    )
    assert mi < 1e-3


def test_dataset_deterministic_and_balanced():
    cfg = SyntheticConfig(n_examples=101, seed=42)
    a, b = generate_synthetic_dataset(cfg), generate_synthetic_dataset(cfg)
    assert a.images.tobytes() == b.images.tobytes() and np.array_equal(a.labels, b.labels)
    assert abs(int(a.labels.sum()) - 50) <= 1
    assert a.images.min() >= 0 and a.images.max() <= 1
    ex = a[0]
    assert ex.label in (0, 1) and ex.image.shape == (32, 32)


def test_patch_out_of_bounds_rejected():
    with pytest.raises(ValueError):
        generate_synthetic_dataset(SyntheticConfig(patch_origin=(28, 4)))
    with pytest.raises(ValueError):
        generate_synthetic_dataset(SyntheticConfig(rho=1.5))
