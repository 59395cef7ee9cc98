import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowrating import nn
from lowrating.nn import LayerSpec as L


def _spec(input_shape, *layers, feature=None):
    layers = tuple(layers)
    return nn.ModelSpec(tuple(input_shape), layers, feature if feature is not None else len(layers) - 2)


def _data(rng, spec, b=12, classes=2):
    x = rng.standard_normal((b, *spec.input_shape))
    y = rng.integers(0, classes, b)
    y[:classes] = np.arange(classes)
    return x, y


LAYER_CASES = {
    "dense": _spec((6,), L("dense", 5), L("output", 3)),
    "batchnorm": _spec((6,), L("dense", 5), L("batchnorm"), L("output", 3)),
    "tanh": _spec((6,), L("dense", 5), L("tanh"), L("output", 3)),
    "conv": _spec((3, 9), L("conv", 4, 5), L("output", 3), feature=0),
    "output": _spec((6,), L("dense", 4), L("output", 2), feature=0),
}


@pytest.mark.parametrize("kind", sorted(LAYER_CASES))
def test_layer_gradients(kind):
    spec = LAYER_CASES[kind]
    rng = np.random.default_rng(1)
    params = nn.init_params(spec, 1)
    x, y = _data(rng, spec, classes=spec.classes)
    assert nn.gradient_check(spec, params, x, y) < 1e-4


def test_input_gradient_through_conv():
    spec = LAYER_CASES["conv"]
    rng = np.random.default_rng(4)
    params = nn.init_params(spec, 4)
    x, y = _data(rng, spec, classes=3)
    res = nn.forward(spec, params, x, mode="train")
    _, dl = nn.cross_entropy(res.probs, y)
    _, dx = nn.backward(spec, params, res.cache, dl, want_input=True)
    h = 1e-5
    for idx in [(0, 0, 0), (3, 2, 8), (7, 1, 4)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (nn.loss_of(spec, params, xp, y) - nn.loss_of(spec, params, xm, y)) / (2 * h)
        assert nn.relative_error(dx[idx], num) < 1e-4


@pytest.mark.parametrize("build", [
    lambda: nn.exec_spec(12, hidden=(16, 16), feature=8, width=6),
    lambda: nn.ui_spec(10, feature=8, width=6),
    lambda: nn.fusion_spec(16, hidden=(12, 6)),
    lambda: nn.bow_dense_spec(12, hidden=(10,), feature=6, first=14),
])
def test_small_model_gradients(build):
    spec = build()
    rng = np.random.default_rng(2)
    params = nn.init_params(spec, 2)
    x, y = _data(rng, spec, b=10)
    assert nn.gradient_check(spec, params, x, y) < 1e-4


def test_relative_error_floor():
    assert nn.relative_error(0.0, 0.0) == 0.0
    assert nn.relative_error(1e-9, 0.0) == pytest.approx(1e-3)
    assert nn.relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_default_architectures_shapes():
    e = nn.exec_spec(41)
    assert e.input_shape == (3, 41)
    assert [l.kind for l in e.layers][:3] == ["conv", "batchnorm", "tanh"]
    assert e.layers[e.feature_index - 2].size == 50
    assert nn.shapes(e)[0] == (10 * 22,)
    assert nn.shapes(nn.ui_spec(26))[0] == (10 * 7,)
    assert nn.bow_conv_spec(41).input_shape == (1, 41)
    f = nn.fusion_spec()
    assert [l.size for l in f.layers if l.kind == "dense"] == [100, 20]


@pytest.mark.parametrize("layers, feature, msg", [
    ((L("dense", 3),), 0, "last layer"),
    ((L("dense", 3), L("conv", 2), L("output", 2)), 0, "first layer"),
    ((L("dense", 3), L("output", 2)), 1, "hidden"),
    ((L("output", 2), L("output", 2)), 0, "exactly one"),
])
def test_invalid_specs(layers, feature, msg):
    with pytest.raises(nn.ShapeError, match=msg):
        nn.ModelSpec((4,), layers, feature)


def test_narrow_conv_input_is_rejected():
    with pytest.raises(nn.ShapeError, match="narrower"):
        nn.ModelSpec((3, 5), (L("conv", 2, 6), L("output", 2)), 0)


def test_forward_shape_mismatch():
    spec = LAYER_CASES["dense"]
    with pytest.raises(nn.ShapeError):
        nn.forward(spec, nn.init_params(spec, 0), np.zeros((2, 7)))


def test_narrow_conv_batches_are_zero_padded():
    spec = _spec((2, 8), L("conv", 2, 4), L("output", 2), feature=0)
    params = nn.init_params(spec, 0)
    x = np.ones((3, 2, 6))
    pad = np.concatenate([x, np.zeros((3, 2, 2))], axis=2)
    assert np.array_equal(nn.forward(spec, params, x).probs, nn.forward(spec, params, pad).probs)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_softmax_shift_invariance(seed, c):
    z = np.random.default_rng(seed).standard_normal((4, 5)) * 10
    p = nn.softmax(z)
    assert np.allclose(p, nn.softmax(z + c), atol=1e-12)
    assert np.allclose(p.sum(axis=1), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
def test_batchnorm_train_output_is_normalized(seed, b):
    rng = np.random.default_rng(seed)
    spec = _spec((5,), L("dense", 6), L("batchnorm"), L("output", 2), feature=1)
    params = nn.init_params(spec, seed)
    x = rng.standard_normal((b, 5)) * 30 + rng.standard_normal(5) * 10
    res = nn.forward(spec, params, x, mode="train")
    f = res.features
    var = res.batch_stats[1][1]
    assert np.allclose(f.mean(axis=0), 0, atol=1e-9)
    # eps shrinks the spread to sqrt(var / (var + eps)); close to 1 once var >> eps
    assert np.allclose(f.std(axis=0), np.sqrt(var / (var + spec.eps)), rtol=1e-9, atol=1e-12)
    wide = var > 10.0
    assert np.allclose(f.std(axis=0)[wide], 1, atol=1e-6)


def test_batchnorm_running_stats_update():
    spec = _spec((3,), L("dense", 4), L("batchnorm"), L("output", 2), feature=1)
    params = nn.init_params(spec, 0)
    x = np.random.default_rng(0).standard_normal((8, 3))
    res = nn.forward(spec, params, x, mode="train")
    mu, var = res.batch_stats[1]
    new = nn.with_running_stats(spec, params, res.batch_stats)
    assert np.allclose(new[1]["running_mean"], 0.1 * mu)
    assert np.allclose(new[1]["running_var"], 0.9 + 0.1 * var)
    assert params[1]["running_mean"].sum() == 0  # original untouched


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inference_is_batch_independent(seed):
    spec = nn.exec_spec(12, hidden=(8,), feature=6, width=5)
    rng = np.random.default_rng(seed)
    params = nn.init_params(spec, seed)
    x = rng.standard_normal((7, 3, 12))
    whole = nn.forward(spec, params, x)
    for i in range(7):
        one = nn.forward(spec, params, x[i:i + 1])
        assert np.allclose(one.probs[0], whole.probs[i], atol=1e-12)
        assert np.allclose(one.features[0], whole.features[i], atol=1e-12)


def test_features_lie_in_open_unit_interval():
    spec = nn.exec_spec(12, hidden=(8,), feature=6, width=5)
    x = np.random.default_rng(0).standard_normal((20, 3, 12)) * 5
    f = nn.forward(spec, nn.init_params(spec, 0), x).features
    assert f.shape == (20, 6)
    assert (np.abs(f) < 1).all()


def test_cross_entropy_gradient_and_floor():
    p = np.array([[0.25, 0.75], [1.0, 0.0]])
    loss, g = nn.cross_entropy(p, [1, 1])
    assert loss == pytest.approx((-np.log(0.75) - np.log(1e-12)) / 2)
    assert np.allclose(g, [[0.125, -0.125], [0.5, -0.5]])


def _blobs(rng, n=200, d=6):
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, d)) + 2.0 * y[:, None]
    return x, y


def test_training_learns_separable_data():
    rng = np.random.default_rng(0)
    x, y = _blobs(rng)
    spec = _spec((6,), L("dense", 8), L("batchnorm"), L("tanh"), L("output", 2), feature=2)
    res = nn.train(spec, x, y, nn.Hyper(batch_size=32, epochs=15, lr=0.05, seed=3))
    assert res.losses[-1] < res.losses[0]
    xt, yt = _blobs(np.random.default_rng(1))
    assert nn.accuracy(spec, res.params, xt, yt) > 0.9


def test_training_is_deterministic_and_audited():
    rng = np.random.default_rng(0)
    x, y = _blobs(rng, n=50)
    spec = _spec((6,), L("dense", 4), L("tanh"), L("output", 2), feature=1)
    seen = []
    a = nn.train(spec, x, y, nn.Hyper(batch_size=16, epochs=2, seed=9), audit=seen.append)
    b = nn.train(spec, x, y, nn.Hyper(batch_size=16, epochs=2, seed=9))
    assert a.losses == b.losses
    assert len(seen) == 8 and sorted(np.concatenate(seen[:4]).tolist()) == list(range(50))


def test_train_rejects_bad_input():
    spec = LAYER_CASES["output"]
    with pytest.raises(ValueError, match="empty"):
        nn.train(spec, np.zeros((0, 6)), np.zeros(0))
    with pytest.raises(ValueError, match="labels"):
        nn.train(spec, np.zeros((2, 6)), np.array([0, 5]))


def test_model_text_round_trip_is_bit_exact():
    spec = nn.exec_spec(12, hidden=(8,), feature=6, width=5)
    rng = np.random.default_rng(0)
    params = nn.init_params(spec, 0)
    params[0]["W"] += rng.standard_normal(params[0]["W"].shape) * 1e-7  # awkward decimals
    model = nn.Model(spec, params, 5, rng.standard_normal((3, 12)), rng.random((3, 12)) + 0.1, {"kind": "exec"})
    text = nn.model_to_text(model)
    back = nn.model_from_text(text)
    assert nn.model_to_text(back) == text
    for p, q in zip(model.params, back.params):
        for k in p:
            assert np.array_equal(p[k], q[k])
    assert back.spec == spec
    x = rng.standard_normal((4, 3, 12))
    assert np.array_equal(model.run(x).probs, back.run(x).probs)


def test_model_text_version_check():
    with pytest.raises(ValueError, match="lowrating-model"):
        nn.model_from_text("something else\n{}")


# ---------------------------------------------------------------- small exact cases


def test_zero_logits_give_uniform_probs():
    assert np.array_equal(nn.softmax(np.zeros((1, 2))), [[0.5, 0.5]])


def test_identity_dense_passes_input_through():
    spec = _spec((3,), L("dense", 3), L("output", 2), feature=0)
    params = nn.init_params(spec, 0)
    params[0]["W"] = np.eye(3)
    x = np.array([[1.0, -2.0, 3.5]])
    assert np.array_equal(nn.forward(spec, params, x).features, x)


def test_all_ones_conv_window_sums_to_60():
    spec = _spec((3, 20), L("conv", 1, 20), L("output", 2), feature=0)
    params = nn.init_params(spec, 0)
    params[0]["W"] = np.ones((1, 3, 20))
    params[0]["b"] = np.zeros(1)
    assert nn.forward(spec, params, np.ones((1, 3, 20))).features.tolist() == [[60.0]]


def test_cross_entropy_examples():
    assert nn.cross_entropy(np.array([[0.5, 0.5]]), [0])[0] == pytest.approx(np.log(2))
    assert nn.cross_entropy(np.array([[1.0, 0.0]]), [0])[0] == 0.0
    assert nn.cross_entropy(np.array([[0.9, 0.1]]), [1])[0] == pytest.approx(2.302585, abs=1e-6)


def test_dense_softmax_gradient_by_hand():
    # logits z = x W + b, dL/dW = x^T (p - onehot) / B
    spec = _spec((2,), L("dense", 2), L("output", 2), feature=0)
    params = nn.init_params(spec, 0)
    params[0]["W"] = np.eye(2)
    params[1]["W"] = np.array([[1.0, -1.0], [0.5, 2.0]])
    params[1]["b"] = np.array([0.1, -0.2])
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    y = np.array([0, 1])
    res = nn.forward(spec, params, x, mode="train")
    _, dl = nn.cross_entropy(res.probs, y)
    grads = nn.backward(spec, params, res.cache, dl)
    z = x @ params[1]["W"] + params[1]["b"]
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    d = (p - np.eye(2)[y]) / 2
    assert np.allclose(grads[1]["W"], x.T @ d, atol=1e-14)
    assert np.allclose(grads[1]["b"], d.sum(axis=0), atol=1e-14)
    assert np.allclose(grads[0]["W"], x.T @ (d @ params[1]["W"].T), atol=1e-14)


def test_zero_loss_gradient_gives_zero_parameter_gradients():
    spec = nn.exec_spec(12, hidden=(8,), feature=6, width=5)
    params = nn.init_params(spec, 0)
    res = nn.forward(spec, params, np.random.default_rng(0).standard_normal((4, 3, 12)), mode="train")
    grads = nn.backward(spec, params, res.cache, np.zeros((4, 2)))
    assert all(not g.any() for layer in grads for g in layer.values())


def test_separable_toy_set_is_learned_in_ten_epochs():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (400, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    spec = _spec((2,), L("dense", 8), L("batchnorm"), L("tanh"), L("output", 2), feature=2)
    res = nn.train(spec, x, y, nn.Hyper(batch_size=16, epochs=10, lr=0.1, seed=1))
    assert nn.accuracy(spec, res.params, x, y) >= 0.99


def test_dataset_smaller_than_batch():
    spec = _spec((2,), L("dense", 3), L("output", 2), feature=0)
    seen = []
    res = nn.train(spec, np.eye(2), [0, 1], nn.Hyper(epochs=3), audit=seen.append)
    assert len(res.losses) == 3 and [len(s) for s in seen] == [2, 2, 2]
