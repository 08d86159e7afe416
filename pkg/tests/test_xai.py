"""
Tests for Grad-CAM weights, maps, normalization and activation summaries
"""

import math

import numpy as np
import pytest

from cxr_agent.exceptions import EmptyTensor, ShapeMismatch
from cxr_agent.xai import (
    Tensor3,
    gradcam_map,
    gradcam_summary,
    gradcam_weights,
    normalize_map,
    summarize_activation,
)


def test_weights_are_spatial_means():
    grads = np.zeros((2, 2, 3))
    grads[0] = 1.0
    grads[1] = [[0.0, 3.0, 0.0], [3.0, 0.0, 0.0]]
    np.testing.assert_allclose(gradcam_weights(grads), [1.0, 1.0])


def test_map_is_relu_of_weighted_sum():
    acts = np.array([[[1.0, -2.0]], [[0.5, 0.5]]])
    cam = gradcam_map([2.0, -1.0], acts)
    np.testing.assert_allclose(cam, [[1.5, 0.0]])
    assert (cam >= 0).all()


def test_map_weight_count_must_match_channels():
    with pytest.raises(ShapeMismatch):
        gradcam_map([1.0, 2.0, 3.0], np.ones((2, 3, 3)))


def test_normalize_linear_ramp():
    result = normalize_map(np.array([[0.0, 2.0, 4.0]]))
    np.testing.assert_allclose(result.values, [[0.0, 0.5, 1.0]])
    assert not result.degenerate


def test_normalize_constant_map_is_degenerate():
    result = normalize_map(np.full((3, 3), 7.0))
    assert result.degenerate
    assert (result.values == 0.0).all()


def test_normalize_is_scale_and_shift_invariant(rng):
    cam = rng.uniform(size=(6, 5))
    base = normalize_map(cam).values
    np.testing.assert_allclose(normalize_map(3.0 * cam + 11.0).values, base, atol=1e-12)


def test_normalized_map_spans_unit_interval(rng):
    values = normalize_map(rng.normal(size=(8, 8))).values
    assert values.min() == 0.0
    assert values.max() == 1.0


def test_summary_uniform_map_has_full_entropy():
    summary = summarize_activation(np.ones((4, 4)), 0.25)
    assert summary.mean == 1.0
    assert summary.max == 1.0
    assert summary.entropy == pytest.approx(1.0)
    assert summary.top_mass == pytest.approx(0.25)


def test_summary_single_spike():
    cam = np.zeros((10, 10))
    cam[3, 4] = 1.0
    summary = summarize_activation(cam, 0.1)
    assert summary.entropy == 0.0
    assert summary.top_mass == 1.0
    assert summary.mean == pytest.approx(0.01)


def test_summary_top_mass_uses_ceil_of_fraction():
    """A 10% fraction of 100 cells takes exactly ten cells."""
    cam = np.zeros((10, 10))
    cam.flat[:20] = 1.0
    assert summarize_activation(cam, 0.1).top_mass == pytest.approx(0.5)
    # 15% of 10 cells rounds up to two
    row = np.array([[1.0, 1.0, 1.0, 1.0, 0, 0, 0, 0, 0, 0]])
    assert summarize_activation(row, 0.15).top_mass == pytest.approx(0.5)


def test_summary_all_zero_map():
    summary = summarize_activation(np.zeros((3, 3)), 0.1, degenerate=True)
    assert summary.vector().tolist() == [0.0, 0.0, 0.0, 0.0]
    assert summary.degenerate


def test_summary_entropy_matches_formula(rng):
    cam = rng.uniform(size=(5, 7))
    p = cam.ravel() / cam.sum()
    expected = -sum(x * math.log(x) for x in p) / math.log(cam.size)
    assert summarize_activation(cam, 0.1).entropy == pytest.approx(expected)


def test_gradcam_summary_in_unit_range(rng):
    for _ in range(50):
        acts = np.abs(rng.normal(size=(4, 7, 7)))
        grads = rng.normal(size=(4, 7, 7))
        summary = gradcam_summary(acts, grads, 0.1)
        for value in summary.vector():
            assert 0.0 <= value <= 1.0
        if not summary.degenerate:
            assert summary.max == 1.0


def test_gradcam_summary_all_negative_weights_is_degenerate():
    acts = np.ones((2, 3, 3))
    grads = -np.ones((2, 3, 3))
    summary = gradcam_summary(acts, grads, 0.1)
    assert summary.degenerate
    assert summary.max == 0.0


def test_gradcam_summary_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        gradcam_summary(np.ones((2, 3, 3)), np.ones((3, 3, 3)), 0.1)


def test_empty_tensor_rejected():
    with pytest.raises(EmptyTensor):
        gradcam_weights(np.zeros((0, 3, 3)))


def test_tensor3_round_trip_and_validation(rng):
    arr = rng.normal(size=(2, 3, 4))
    tensor = Tensor3.from_array(arr)
    assert (tensor.channels, tensor.height, tensor.width) == (2, 3, 4)
    np.testing.assert_array_equal(tensor.to_array(), arr)
    with pytest.raises(ValueError):
        Tensor3(channels=1, height=1, width=2, values=(1.0,))
    with pytest.raises(ShapeMismatch):
        Tensor3.from_array(np.ones((3, 3)))


def test_gradcam_summary_accepts_tensor3(rng):
    acts = np.abs(rng.normal(size=(3, 5, 5)))
    grads = rng.normal(size=(3, 5, 5))
    direct = gradcam_summary(acts, grads, 0.1)
    wrapped = gradcam_summary(Tensor3.from_array(acts), Tensor3.from_array(grads), 0.1)
    assert direct == wrapped


def loop_gradcam(acts, grads):
    k, h, w = acts.shape
    alpha = [sum(grads[c, i, j] for i in range(h) for j in range(w)) / (h * w) for c in range(k)]
    cam = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            total = sum(alpha[c] * acts[c, i, j] for c in range(k))
            cam[i, j] = total if total > 0.0 else 0.0
    return np.asarray(alpha), cam


def test_gradcam_matches_loop_computation(rng):
    for _ in range(100):
        shape = tuple(int(v) for v in (rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 9)))
        acts = rng.normal(size=shape)
        grads = rng.normal(size=shape)
        expected_alpha, expected_cam = loop_gradcam(acts, grads)
        alpha = gradcam_weights(grads)
        np.testing.assert_allclose(alpha, expected_alpha, rtol=0, atol=1e-12)
        np.testing.assert_allclose(gradcam_map(alpha, acts), expected_cam, rtol=0, atol=1e-12)


def test_summary_invariant_under_positive_scaling(rng):
    acts = np.abs(rng.normal(size=(3, 6, 6)))
    grads = rng.normal(size=(3, 6, 6))
    base = gradcam_summary(acts, grads, 0.1)
    for scale in (0.01, 2.5, 1000.0):
        scaled = gradcam_summary(scale * acts, grads, 0.1)
        np.testing.assert_allclose(scaled.vector(), base.vector(), atol=1e-12)
    cam = rng.uniform(size=(5, 7))
    plain = summarize_activation(cam, 0.2)
    halved = summarize_activation(0.5 * cam, 0.2)
    assert halved.entropy == pytest.approx(plain.entropy, abs=1e-12)
    assert halved.top_mass == pytest.approx(plain.top_mass, abs=1e-12)


def test_summary_invariant_under_transpose(rng):
    for _ in range(20):
        cam = rng.uniform(size=(int(rng.integers(1, 9)), int(rng.integers(1, 9))))
        np.testing.assert_allclose(
            summarize_activation(cam.T, 0.1).vector(),
            summarize_activation(cam, 0.1).vector(),
            atol=1e-12,
        )


def test_top_mass_matches_sorted_prefix(rng):
    for _ in range(100):
        cam = rng.uniform(size=(int(rng.integers(1, 9)), int(rng.integers(1, 9))))
        fraction = float(rng.uniform(0.01, 1.0))
        values = sorted(cam.ravel().tolist(), reverse=True)
        k = max(1, math.ceil(fraction * len(values)))
        expected = sum(values[:k]) / sum(values)
        assert summarize_activation(cam, fraction).top_mass == pytest.approx(expected, abs=1e-12)


def test_spreading_spike_raises_entropy_and_lowers_top_mass():
    summaries = []
    for side in (1, 2, 4, 8, 16):
        cam = np.zeros((16, 16))
        cam[:side, :side] = 1.0
        summaries.append(summarize_activation(cam, 0.1))
    entropies = [s.entropy for s in summaries]
    top_masses = [s.top_mass for s in summaries]
    assert all(a < b for a, b in zip(entropies, entropies[1:]))
    assert all(a >= b for a, b in zip(top_masses, top_masses[1:]))
    assert entropies[-1] == pytest.approx(1.0)
    assert top_masses[-1] == pytest.approx(26 / 256)
