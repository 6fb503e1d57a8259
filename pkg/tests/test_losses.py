import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gazekit.losses import (
    MetricError,
    angles_error_deg,
    angles_to_vector,
    angular_error_deg,
    eye_recon_loss,
    gaze_loss,
    region_recon_loss,
    total_loss,
    vector_to_angles,
)
from gazekit.tensor import Tape, Tensor, backward


def rand(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


# ---------------------------------------------------------------------------
# reconstruction losses

def test_eye_loss_perfect_reconstruction():
    img = Tensor(rand((1, 3, 4, 4), 1))
    assert eye_recon_loss(img, img, Tensor(img.data.copy()), Tensor(img.data.copy())).item() == 0.0


def test_eye_loss_unit_residual():
    zeros = Tensor(np.zeros((1, 3, 4, 4)))
    ones = Tensor(np.ones((1, 3, 4, 4)))
    assert eye_recon_loss(zeros, zeros, ones, ones).item() == 2.0


def test_eye_loss_vs_scalar_loop():
    rl, rr = rand((2, 3, 2, 2), 2), rand((2, 3, 2, 2), 3)
    tl, tr = rand((2, 3, 2, 2), 4), rand((2, 3, 2, 2), 5)

    def loop_mse(a, b):
        acc, n = 0.0, 0
        for x, y in zip(a.flat, b.flat):
            acc += (x - y) ** 2
            n += 1
        return acc / n

    got = eye_recon_loss(Tensor(rl), Tensor(rr), Tensor(tl), Tensor(tr)).item()
    np.testing.assert_allclose(got, loop_mse(rl, tl) + loop_mse(rr, tr), atol=1e-12)


def test_region_loss_perfect():
    regions = [Tensor(rand((1, 3, 2, 4), s)) for s in range(3)]
    copies = [Tensor(r.data.copy()) for r in regions]
    assert region_recon_loss(regions, copies).item() == 0.0


def test_region_loss_one_region_off_by_one():
    base = [np.zeros((1, 3, 2, 2)) for _ in range(3)]
    recons = [Tensor(b.copy()) for b in base]
    targets = [Tensor(b.copy()) for b in base]
    targets[1] = Tensor(np.ones((1, 3, 2, 2)))
    assert region_recon_loss(recons, targets).item() == 1.0


def test_region_loss_vs_loop():
    recons = [rand((1, 2, 3, 3), s + 10) for s in range(3)]
    targets = [rand((1, 2, 3, 3), s + 20) for s in range(3)]
    want = sum(np.mean((r - t) ** 2) for r, t in zip(recons, targets))
    got = region_recon_loss([Tensor(r) for r in recons], [Tensor(t) for t in targets]).item()
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---------------------------------------------------------------------------
# gaze loss

def test_gaze_loss_zero_at_truth():
    p = Tensor(rand((4, 2), 6))
    assert gaze_loss(p, Tensor(p.data.copy())).item() == 0.0


def test_gaze_loss_single_sample():
    pred = Tensor(np.array([[0.1, 0.2]]))
    truth = Tensor(np.zeros((1, 2)))
    np.testing.assert_allclose(gaze_loss(pred, truth).item(), 0.3, atol=1e-15)


def test_gaze_loss_vs_scalar_loop():
    pred, truth = rand((3, 2), 7), rand((3, 2), 8)
    want = sum(abs(pred[i, 0] - truth[i, 0]) + abs(pred[i, 1] - truth[i, 1]) for i in range(3)) / 3.0
    np.testing.assert_allclose(gaze_loss(Tensor(pred), Tensor(truth)).item(), want, atol=1e-12)


# ---------------------------------------------------------------------------
# total loss

def test_total_loss_degenerate_weights():
    lg, l1, l2 = Tensor(np.asarray(0.7)), Tensor(np.asarray(2.0)), Tensor(np.asarray(3.0))
    assert total_loss(lg, l1, l2, 0.0, 0.0).item() == 0.7


def test_total_loss_unit_weights():
    one = lambda: Tensor(np.asarray(1.0))
    assert total_loss(one(), one(), one()).item() == 3.0


def test_total_loss_gradients_are_weights():
    lg = Tensor(np.asarray(0.5), requires_grad=True)
    l1 = Tensor(np.asarray(0.5), requires_grad=True)
    l2 = Tensor(np.asarray(0.5), requires_grad=True)
    with Tape():
        backward(total_loss(lg, l1, l2, 0.3, 0.7))
    assert lg.grad == 1.0 and l1.grad == 0.3 and l2.grad == 0.7


def test_losses_nonnegative_and_zero_iff_equal():
    a, b = rand((2, 2), 30), rand((2, 2), 31)
    assert gaze_loss(Tensor(a), Tensor(b)).item() > 0.0


# ---------------------------------------------------------------------------
# angle conversions

def test_forward_axis():
    np.testing.assert_allclose(angles_to_vector(0.0, 0.0), [0.0, 0.0, 1.0], atol=1e-15)


def test_pole():
    v = angles_to_vector(np.pi / 2, 1.234)
    np.testing.assert_allclose(v, [0.0, 1.0, 0.0], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.4, 1.4), st.floats(-np.pi, np.pi))
def test_unit_norm_and_roundtrip(pitch, yaw):
    v = angles_to_vector(pitch, yaw)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12
    p2, y2 = vector_to_angles(v)
    assert abs(p2 - pitch) < 1e-10
    # yaw wraps at +/- pi; compare on the circle
    dy = (y2 - yaw + np.pi) % (2 * np.pi) - np.pi
    assert abs(dy) < 1e-10


# ---------------------------------------------------------------------------
# angular error

def test_identical_vectors_zero_error():
    g = np.array([0.3, -0.2, 0.9])
    assert angular_error_deg(g, g) == 0.0


def test_orthogonal_vectors():
    np.testing.assert_allclose(angular_error_deg([1.0, 0, 0], [0, 1.0, 0]), 90.0)


def test_forty_five_degrees():
    got = angular_error_deg([1.0, 0, 0], np.array([1.0, 1.0, 0]) / np.sqrt(2))
    np.testing.assert_allclose(got, 45.0, atol=1e-10)


def test_zero_vector_rejected():
    with pytest.raises(MetricError):
        angular_error_deg([0.0, 0.0, 0.0], [1.0, 0, 0])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.floats(0.1, 10.0),
)
def test_angular_error_symmetric_scale_invariant_bounded(a, b, s):
    g1, g2 = np.asarray(a), np.asarray(b)
    if np.linalg.norm(g1) < 1e-6 or np.linalg.norm(g2) < 1e-6:
        return
    e = angular_error_deg(g1, g2)
    assert 0.0 <= e <= 180.0
    assert e == angular_error_deg(g2, g1)
    # arccos near +/-1 amplifies ulp noise to ~1e-6 degrees
    np.testing.assert_allclose(angular_error_deg(s * g1, g2), e, atol=1e-5)


def test_angles_error_deg_batch():
    p = np.array([0.0, 0.1])
    y = np.array([0.0, -0.2])
    errs = angles_error_deg(p, y, p, y)
    np.testing.assert_array_equal(errs, [0.0, 0.0])
