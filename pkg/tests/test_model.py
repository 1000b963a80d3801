import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aodbench.nn import (
    AdamState, BatchNorm, Conv2d, Dense, Dropout, Model, ModelFormatError, ReLU,
    ScalingParams, ShapeError, StaleCacheError, adam_step, default_architecture,
    deserialize_model, mse_loss, model_adam_step, serialize_model,
)
from aodbench.nn.gradcheck import check_model, numeric_grad, relative_error


def single_unit(w=2.0, b=0.0):
    d = Dense(1, 1)
    d.params["W"][:] = w
    d.params["b"][:] = b
    return Model([d])


def test_mse_hand_values():
    loss, grad = mse_loss([1.0, 2.0], [0.0, 0.0])
    assert loss == 2.5
    assert grad.tolist() == [1.0, 2.0]


def test_mse_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    pred, target = rng.standard_normal(7), rng.standard_normal(7)
    _, grad = mse_loss(pred, target)
    num = numeric_grad(lambda: mse_loss(pred, target)[0], pred)
    assert relative_error(grad, num) < 1e-8


def test_backward_single_dense_unit():
    m = single_unit(2.0)
    pred, cache = m.forward([[3.0]], train=True)
    _, g = mse_loss(pred, [[0.0]])  # L = (2*3)^2, dL/dw = 2*6*3
    grads = m.backward(cache, g)
    assert grads["0.W"][0, 0] == pytest.approx(36.0)
    assert grads["0.b"][0] == pytest.approx(12.0)


def test_zero_loss_gradient_gives_zero_param_gradients():
    m = default_architecture(1, dropout_p=0.0)
    x = np.random.default_rng(0).random((4, 1, 30, 30))
    pred, cache = m.forward(x, train=True)
    grads = m.backward(cache, np.zeros_like(pred))
    assert all(not np.any(g) for g in grads.values())


def test_stale_cache_rejected():
    m = single_unit()
    pred, cache = m.forward([[1.0]], train=True)
    grads = m.backward(cache, mse_loss(pred, [[0.0]])[1])
    model_adam_step(m, grads, AdamState())
    with pytest.raises(StaleCacheError):
        m.backward(cache, np.ones((1, 1)))
    with pytest.raises(StaleCacheError):
        m.backward(None, np.ones((1, 1)))


def test_adam_first_step_closed_form():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    adam_step(p, {"w": np.array([0.7, -3.0, 1e-3])}, AdamState())
    np.testing.assert_allclose(p["w"], [1.0 - 0.003, -2.0 + 0.003, 0.5 - 0.003], atol=1.5e-7)


def test_adam_zero_gradient_is_stationary():
    p = {"w": np.array([1.0, 2.0])}
    state = AdamState()
    for _ in range(5):
        adam_step(p, {"w": np.zeros(2)}, state)
    assert p["w"].tolist() == [1.0, 2.0]


def test_adam_descends_quadratic_bowl():
    p = {"w": np.array([3.0, -4.0])}
    state = AdamState(lr=0.1)
    start = float(np.sum(p["w"] ** 2))
    for _ in range(100):
        adam_step(p, {"w": 2 * p["w"]}, state)
    assert np.sum(p["w"] ** 2) < 0.01 * start


def test_adam_rejects_bad_gradients():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, AdamState())


def test_forward_zero_weights_is_zero():
    m = default_architecture(0)
    for _, p in m.named_params():
        p[:] = 0.0
    x = np.random.default_rng(0).random((3, 1, 30, 30))
    assert np.array_equal(m.predict(x), np.zeros(3))


def test_forward_deterministic_in_inference():
    m = default_architecture(5)
    x = np.random.default_rng(1).random((2, 1, 30, 30))
    assert np.array_equal(m.predict(x), m.predict(x))


def test_default_architecture_shape():
    m = default_architecture(0)
    assert len(m.layers) == 20
    conv = [(1, 16), (16, 32), (32, 64)]
    by_hand = sum(o * i * 9 + o + 2 * o for i, o in conv)
    by_hand += 576 * 128 + 128 + 128 * 32 + 32 + 32 + 1
    assert m.param_count() == by_hand == 101537
    trace = m.shape_trace((1, 1, 30, 30))
    assert trace[-1] == (1, 1)
    assert (1, 64, 3, 3) in trace and (1, 576) in trace


def test_default_architecture_seeded():
    a, b, c = default_architecture(3), default_architecture(3), default_architecture(4)
    assert all(np.array_equal(a.params()[k], b.params()[k]) for k in a.params())
    assert not np.array_equal(a.params()["0.W"], c.params()["0.W"])
    w = a.params()["0.W"]
    assert np.max(np.abs(w)) <= np.sqrt(6 / 9)
    assert not np.any(a.params()["0.b"])


def test_shape_error_names_layer():
    m = default_architecture(0)
    with pytest.raises(ShapeError, match="layer 0"):
        m.predict(np.zeros((1, 2, 30, 30)))
    with pytest.raises(ShapeError, match="layer 13"):
        m.predict(np.zeros((1, 1, 32, 32)))


def test_model_gradcheck_small():
    rng = np.random.default_rng(0)
    m = default_architecture(2, channels=(2, 3), dense=(5,), dropout_p=0.0, input_size=8)
    x = rng.random((4, 1, 8, 8))
    errs = check_model(m, x, rng.random((4, 1)), rng, per_tensor=6)
    assert max(errs.values()) < 1e-5


def trained_like(seed):
    m = default_architecture(seed)
    rng = np.random.default_rng(seed)
    for layer in m.layers:
        if isinstance(layer, BatchNorm):
            layer.params["gamma"] = rng.random(layer.channels) + 0.5
            layer.buffers["running_var"] = rng.random(layer.channels) + 0.1
            layer.buffers["running_mean"] = rng.standard_normal(layer.channels)
    m.scaler = ScalingParams(float(rng.random()), 2.0 + rng.random())
    m.meta = {"regime": "all", "seed": seed}
    return m


@pytest.mark.parametrize("seed", range(5))
def test_serialize_round_trip(seed):
    m = trained_like(seed)
    back = deserialize_model(serialize_model(m))
    x = np.random.default_rng(seed).random((2, 1, 30, 30))
    assert np.array_equal(m.predict(x), back.predict(x))
    assert back.scaler == m.scaler and back.meta == m.meta
    assert serialize_model(back) == serialize_model(m)


def test_deserialize_rejects_tampering():
    text = serialize_model(default_architecture(0))
    doc = json.loads(text)
    with pytest.raises(ModelFormatError):
        deserialize_model(json.dumps({**doc, "layer_count": 19}))
    with pytest.raises(ModelFormatError, match="no layers"):
        deserialize_model(json.dumps({**doc, "layers": []}))
    with pytest.raises(ModelFormatError, match="format"):
        deserialize_model(json.dumps({**doc, "format": "aodcnn-v0"}))
    layers = list(doc["layers"])
    layers[0] = {**layers[0], "kind": "Mystery"}
    with pytest.raises(ModelFormatError, match="unknown kind"):
        deserialize_model(json.dumps({**doc, "layers": layers}))
    with pytest.raises(ModelFormatError):
        deserialize_model(json.dumps({**doc, "layers": doc["layers"][:-1],
                                      "layer_count": len(doc["layers"]) - 1}))
    with pytest.raises(ModelFormatError):
        deserialize_model("{not json")


def test_deserialize_rejects_shape_mismatch():
    doc = json.loads(serialize_model(Model([Dense(2, 3), ReLU(), Dense(3, 1)])))
    doc["layers"][0]["params"]["W"]["shape"] = [3, 3]
    with pytest.raises(ModelFormatError, match="shape"):
        deserialize_model(json.dumps(doc))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=4, max_size=4))
def test_serialized_floats_exact(ws):
    d = Dense(2, 2)
    d.params["W"] = np.array(ws).reshape(2, 2)
    m = Model([Conv2d(1, 1, 1, 1, 0), Dropout(0.1), Dense(1, 2), d, Dense(2, 1)])
    back = deserialize_model(serialize_model(m))
    assert np.array_equal(back.layers[3].params["W"], d.params["W"])
