import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmcsc.errors import CacheError, DegenerateInputError, ShapeError
from fmcsc.nncore import (
    Dense,
    MlpParams,
    adam_init,
    adam_step,
    cosine_similarity,
    init_mlp,
    mlp_backward,
    mlp_forward,
)


def _single(weight, activation):
    w = np.asarray(weight, dtype=np.float64)
    layer = Dense(w, np.zeros((1, w.shape[1])), activation)
    if activation == "relu":
        # a relu layer followed by a fixed identity layer keeps the final-identity invariant
        eye = np.eye(w.shape[1])
        return MlpParams((layer, Dense(eye, np.zeros((1, w.shape[1])), "identity")))
    return MlpParams((layer,))


def test_identity_layer_forward():
    out, _ = mlp_forward(_single(np.eye(2), "identity"), np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_relu_layer_forward():
    out, _ = mlp_forward(_single(np.eye(2), "relu"), np.array([[-1.0, 3.0]]))
    np.testing.assert_array_equal(out, [[0.0, 3.0]])


def _hand_forward(params, row):
    # pure-python matrix arithmetic, no numpy matmul
    x = [float(v) for v in row]
    for layer in params.layers:
        w, b = layer.weight.tolist(), layer.bias[0].tolist()
        y = [sum(x[i] * w[i][j] for i in range(len(x))) + b[j] for j in range(len(b))]
        if layer.activation == "relu":
            y = [max(v, 0.0) for v in y]
        x = y
    return x


def test_forward_matches_hand_computation():
    params = init_mlp([2, 3, 2], np.random.default_rng(42), dtype=np.float64)
    params = params.with_arrays([a + 0.1 for a in params.arrays()])  # nonzero biases
    out, _ = mlp_forward(params, np.array([[0.5, -0.5]]))
    np.testing.assert_allclose(out[0], _hand_forward(params, [0.5, -0.5]), rtol=1e-12)


def test_forward_shape_error_names_layer():
    params = init_mlp([3, 4, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError) as exc:
        mlp_forward(params, np.zeros((1, 5), dtype=np.float32))
    assert exc.value.layer == 0


def test_layers_must_chain():
    rng = np.random.default_rng(0)
    a = init_mlp([3, 4], rng).layers[0]
    b = init_mlp([5, 2], rng).layers[0]
    with pytest.raises(ShapeError) as exc:
        MlpParams((Dense(a.weight, a.bias, "relu"), b))
    assert exc.value.layer == 1


def test_zero_grad_output_gives_zero_grads():
    params = init_mlp([4, 8, 4], np.random.default_rng(1), dtype=np.float64)
    x = np.random.default_rng(2).normal(size=(5, 4))
    out, cache = mlp_forward(params, x)
    gin, grads = mlp_backward(params, cache, np.zeros_like(out))
    assert not gin.any()
    assert all(not g.any() for g in grads.arrays())


def test_linear_layer_closed_form_gradient():
    rng = np.random.default_rng(3)
    params = init_mlp([3, 2], rng, dtype=np.float64)
    x = rng.normal(size=(1, 3))
    y = rng.normal(size=(1, 2))
    out, cache = mlp_forward(params, x)
    _, grads = mlp_backward(params, cache, 2 * (out - y))
    w = params.layers[0].weight
    # loss = ||x W - y||^2 in row-vector convention: dL/dW = x^T 2(xW - y)
    np.testing.assert_allclose(grads.layers[0].weight, x.T @ (2 * (x @ w - y)), rtol=1e-12)


def test_stale_cache_rejected():
    rng = np.random.default_rng(0)
    params = init_mlp([3, 4, 2], rng, dtype=np.float64)
    out, cache = mlp_forward(params, rng.normal(size=(2, 3)))
    other = params.copy()
    with pytest.raises(CacheError):
        mlp_backward(other, cache, np.ones_like(out))
    with pytest.raises(CacheError):
        mlp_backward(params, cache, np.ones((3, 2)))


def fd_check_mlp(params, x, target, h=1e-5):
    """Max relative error between backprop and central differences for
    loss = sum((f(x) - target)^2) over every parameter and the input."""

    def loss(p, xx):
        out, _ = mlp_forward(p, xx)
        return float(((out - target) ** 2).sum())

    out, cache = mlp_forward(params, x)
    gin, grads = mlp_backward(params, cache, 2 * (out - target))
    worst = 0.0
    arrays = params.arrays()
    for idx, analytic in enumerate(grads.arrays()):
        for pos in np.ndindex(arrays[idx].shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[idx][pos] += h
            minus[idx][pos] -= h
            num = (loss(params.with_arrays(plus), x) - loss(params.with_arrays(minus), x)) / (2 * h)
            worst = max(worst, abs(num - analytic[pos]) / max(1e-6, abs(num) + abs(analytic[pos])))
    for pos in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[pos] += h
        xm[pos] -= h
        num = (loss(params, xp) - loss(params, xm)) / (2 * h)
        worst = max(worst, abs(num - gin[pos]) / max(1e-6, abs(num) + abs(gin[pos])))
    return worst


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("dims", [[4, 8, 4], [3, 6, 5, 2]])
def test_backward_matches_finite_differences(seed, dims):
    rng = np.random.default_rng(seed)
    params = init_mlp(dims, rng, dtype=np.float64)
    params = params.with_arrays([a + rng.normal(scale=0.1, size=a.shape) for a in params.arrays()])
    x = rng.normal(size=(3, dims[0]))
    target = rng.normal(size=(3, dims[-1]))
    assert fd_check_mlp(params, x, target) < 1e-4


def test_forward_backward_deterministic():
    params = init_mlp([4, 8, 4], np.random.default_rng(5))
    x = np.random.default_rng(6).normal(size=(7, 4)).astype(np.float32)
    a, ca = mlp_forward(params, x)
    b, cb = mlp_forward(params, x)
    assert a.tobytes() == b.tobytes()
    ga = mlp_backward(params, ca, a)[1].arrays()
    gb = mlp_backward(params, cb, b)[1].arrays()
    assert all(p.tobytes() == q.tobytes() for p, q in zip(ga, gb))


def test_glorot_init_range_and_zero_bias():
    params = init_mlp([10, 30, 5], np.random.default_rng(0))
    for layer in params.layers:
        limit = math.sqrt(6 / (layer.in_dim + layer.out_dim))
        assert np.abs(layer.weight).max() <= limit
        assert not layer.bias.any()
        assert layer.weight.dtype == np.float32
    assert params.layers[-1].activation == "identity"


def test_adam_zero_gradient_is_fixed_point():
    params = init_mlp([3, 4, 2], np.random.default_rng(0))
    new, state = adam_step(adam_init(params), params, params.zeros_like(), 0.1)
    assert state.step == 1
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), new.arrays()))


def test_adam_first_step_is_signed_lr():
    params = init_mlp([3, 4, 2], np.random.default_rng(0), dtype=np.float64)
    rng = np.random.default_rng(1)
    grads = params.with_arrays([rng.normal(size=a.shape) for a in params.arrays()])
    new, _ = adam_step(adam_init(params), params, grads, 0.01)
    for p, q, g in zip(params.arrays(), new.arrays(), grads.arrays()):
        np.testing.assert_allclose(q - p, -0.01 * np.sign(g), rtol=1e-5, atol=1e-12)


def _scalar_adam_trace(w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(w)
    return out


def test_adam_matches_scalar_trace_on_quadratic():
    params = MlpParams((Dense(np.array([[1.0]]), np.zeros((1, 1)), "identity"),))
    state = adam_init(params)
    trace = []
    for _ in range(2):
        w = params.layers[0].weight
        grads = params.with_arrays([2 * w, np.zeros((1, 1))])
        params, state = adam_step(state, params, grads, 0.1)
        trace.append(float(params.layers[0].weight[0, 0]))
    expected = _scalar_adam_trace(1.0, 0.1, 2)
    np.testing.assert_allclose(trace, expected, rtol=1e-12)
    assert state.step == 2


def test_cosine_examples():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert cosine_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_cosine_zero_norm_raises():
    with pytest.raises(DegenerateInputError):
        cosine_similarity(np.zeros(3), np.ones(3))


vectors = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: sum(x * x for x in v) > 1e-6
)


@settings(max_examples=100, deadline=None)
@given(vectors, vectors, st.floats(1e-3, 1e3))
def test_cosine_symmetric_and_scale_invariant(a, b, c):
    a, b = np.array(a), np.array(b)
    assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)
    assert cosine_similarity(a, c * a) == pytest.approx(1.0, abs=1e-12)
    assert -1.0 <= cosine_similarity(a, b) <= 1.0
