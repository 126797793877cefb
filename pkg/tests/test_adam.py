"""Adam steps and global-norm clipping."""

import numpy as np
import pytest

from score_guided_planning.adam import (
    AdamState,
    adam_step,
    clip_global_norm,
    optimizer_arrays,
    optimizer_metadata,
    restore_optimizer,
)
from score_guided_planning.errors import NumericError, ShapeError


def test_first_step_moves_by_lr_against_the_gradient_sign():
    # Bias correction makes the first step lr * g / (|g| + eps)
    params = [np.array([1.0, -1.0, 0.0])]
    grads = [np.array([2.0, -0.5, 3.0])]
    new, state = adam_step(params, grads, AdamState(lr=0.1))
    np.testing.assert_allclose(new[0], [0.9, -0.9, -0.1], atol=1e-7)
    assert state.t == 1
    # inputs untouched
    np.testing.assert_array_equal(params[0], [1.0, -1.0, 0.0])


def test_descends_a_quadratic():
    p, state = [np.array([5.0, -3.0])], AdamState(lr=0.1)
    for _ in range(500):
        p, state = adam_step(p, [2.0 * p[0]], state)
    assert np.linalg.norm(p[0]) < 5e-2


def test_rejects_non_finite_gradients():
    with pytest.raises(NumericError, match="Non-finite"):
        adam_step([np.zeros(2)], [np.array([np.nan, 0.0])], AdamState())


def test_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [], AdamState())


def test_clip_global_norm():
    # joint norm of (3, 4) is 5
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose([clipped[0][0], clipped[1][0]], [0.6, 0.8])
    unchanged, _ = clip_global_norm(grads, 10.0)
    assert unchanged[0] is grads[0]
    same, _ = clip_global_norm(grads, None)
    np.testing.assert_array_equal(same[1], grads[1])


def test_optimizer_state_survives_a_save_restore_cycle():
    p = [np.ones((2, 2)), np.zeros(2)]
    _, state = adam_step(p, [np.ones((2, 2)), np.ones(2)], AdamState(lr=0.05))
    arrays = dict(optimizer_arrays(state))
    assert sorted(arrays) == ["adam.m0", "adam.m1", "adam.v0", "adam.v1"]
    restored = restore_optimizer(optimizer_metadata(state), arrays)
    assert restored.t == 1 and restored.lr == 0.05
    np.testing.assert_array_equal(restored.m[0], state.m[0])
    np.testing.assert_array_equal(restored.v[1], state.v[1])


def test_restore_without_saved_state_is_fresh():
    state = restore_optimizer(None, {})
    assert state.t == 0 and state.m == ()
    assert optimizer_arrays(None) == [] and optimizer_metadata(None) is None
