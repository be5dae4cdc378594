import numpy as np
import pytest

from dpla.losses import ce_loss
from dpla.model import (
    PARAM_NAMES,
    SGD,
    Adam,
    backward,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    step,
)
from dpla.numerics import grad_check, softmax


@pytest.fixture
def small():
    state = init_model(4, 7, 5, 6, seed=2)
    state.params["b1"] = np.random.default_rng(0).normal(0, 0.3, 7)
    x = np.random.default_rng(1).normal(size=(8, 4))
    return state, x


def test_init_deterministic_and_zero_bias():
    a, b = init_model(3, 16, 8, 4, seed=9), init_model(3, 16, 8, 4, seed=9)
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert all(np.all(a.params[f"b{i}"] == 0) for i in (1, 2, 3))


def test_init_weight_scale():
    s = init_model(100, 100, 8, 4, seed=0)
    assert abs(s.params["W1"].std() - 0.1) / 0.1 < 0.10
    assert abs(s.params["W1"].mean()) < 0.01


def test_init_rejects_zero_dim():
    with pytest.raises(ValueError):
        init_model(0, 4, 4, 2)


def test_forward_zero_weights_uniform():
    s = init_model(3, 4, 4, 5)
    s.params = {k: np.zeros_like(v) for k, v in s.params.items()}
    _, f = forward(s, np.ones((2, 3)))
    assert np.all(f == 0)
    np.testing.assert_allclose(softmax(f), np.full((2, 5), 0.2))


def test_forward_shapes_and_rowwise(small):
    state, x = small
    z, f = forward(state, x)
    assert z.shape == (8, 5) and f.shape == (8, 6)
    for i in range(8):
        np.testing.assert_allclose(forward(state, x[i])[1][0], f[i], atol=1e-12)
    perm = np.random.default_rng(0).permutation(8)
    np.testing.assert_array_equal(forward(state, x[perm])[1], f[perm])


def test_forward_dimension_mismatch(small):
    state, _ = small
    with pytest.raises(ValueError):
        forward(state, np.zeros((2, 3)))


def test_backward_zero_grad(small):
    state, x = small
    grads = backward(state, x, np.zeros((8, 6)))
    assert all(np.all(g == 0) for g in grads.values())
    with pytest.raises(ValueError):
        backward(state, x, np.zeros((8, 5)))


def test_backward_matches_finite_differences(small):
    state, x = small
    y = np.array([0, 1, 2, 3, 4, 5, 0, 1])
    _, f = forward(state, x)
    grads = backward(state, x, ce_loss(f, y).grad)
    analytic = np.concatenate([grads[k].ravel() for k in PARAM_NAMES])

    def fn(flat):
        return ce_loss(forward(state.with_flat_params(flat), x)[1], y).value

    assert grad_check(fn, state.flat_params(), analytic, 1e-5) <= 1e-5


def test_backward_is_sum_of_per_sample(small):
    state, x = small
    g = np.random.default_rng(5).normal(size=(8, 6))
    batch = backward(state, x, g)
    for k in PARAM_NAMES:
        summed = sum(backward(state, x[i:i + 1], g[i:i + 1])[k] for i in range(8))
        np.testing.assert_allclose(batch[k], summed, atol=1e-10)


def _one_param_state(value):
    s = init_model(1, 1, 1, 1)
    s.params = {k: np.zeros_like(v) for k, v in s.params.items()}
    s.params["b3"] = np.array([value])
    return s


def _grads_for(state, b3):
    g = {k: np.zeros_like(v) for k, v in state.params.items()}
    g["b3"] = np.array([b3])
    return g


def test_sgd_step():
    s = _one_param_state(1.0)
    new = step(s, _grads_for(s, 2.0), SGD(lr=0.1, momentum=0.0))
    assert new.params["b3"][0] == pytest.approx(0.8)
    assert s.params["b3"][0] == 1.0


def test_sgd_momentum_accumulates():
    s = _one_param_state(0.0)
    opt = SGD(lr=1.0, momentum=0.5)
    s = step(s, _grads_for(s, 1.0), opt)
    s = step(s, _grads_for(s, 1.0), opt)
    assert s.params["b3"][0] == pytest.approx(-2.5)


@pytest.mark.parametrize("g", [3.0, -0.02])
def test_adam_first_step(g):
    s = _one_param_state(1.0)
    new = step(s, _grads_for(s, g), Adam(lr=0.01))
    # m_hat = g, v_hat = g^2 on the first step
    assert new.params["b3"][0] == pytest.approx(1.0 - 0.01 * np.sign(g), abs=1e-7)


def test_zero_gradient_and_zero_lr_are_identity(small):
    state, x = small
    zero = {k: np.zeros_like(v) for k, v in state.params.items()}
    for opt in (SGD(0.1, 0.9), Adam(0.1)):
        new = step(state, zero, opt)
        for k in PARAM_NAMES:
            np.testing.assert_array_equal(new.params[k], state.params[k])
    _, f = forward(state, x)
    grads = backward(state, x, f)
    new = step(state, grads, Adam(0.0))
    for k in PARAM_NAMES:
        np.testing.assert_array_equal(new.params[k], state.params[k])


def test_step_rejects_nonfinite(small):
    state, _ = small
    bad = {k: np.zeros_like(v) for k, v in state.params.items()}
    bad["W2"][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        step(state, bad, SGD(0.1))


def test_checkpoint_round_trip(tmp_path, small):
    state, x = small
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    back = load_checkpoint(path)
    assert forward(back, x)[1].tobytes() == forward(state, x)[1].tobytes()
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(path)
