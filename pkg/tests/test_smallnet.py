import io
import math

import numpy as np
import pytest
from helpers import gradient_check

from react_ood.core import NumericError, ReactError, ShapeError
from react_ood.featureio import FeaturePack
from react_ood.scoring import msp_scores
from react_ood.smallnet import (
    BatchNorm,
    BnMode,
    MlpModel,
    TrainConfig,
    accuracy,
    backward,
    extract_features,
    forward,
    gradients,
    init_mlp,
    load_model,
    odin_perturb,
    read_model,
    save_model,
    train,
    write_model,
)
from react_ood.synthdata import BlobSpec, gen_id_blobs


def hand_model(**kw) -> MlpModel:
    # weights stored (fan_in, fan_out): hidden = x @ W1 + b1
    w1 = np.array([[1.0, 2.0], [-1.0, 0.5]])
    w2 = np.diag([1.0, 2.0])
    return MlpModel((2, 2, 2), [w1, w2], [np.array([0.0, 0.5]), np.array([0.1, -0.1])], **kw)


def random_bn_model(seed: int, dims=(3, 5, 4, 2)) -> MlpModel:
    rng = np.random.default_rng(seed)
    model = init_mlp(dims, seed=seed)
    for bn in model.bn:
        bn.gamma[:] = rng.uniform(0.5, 1.5, bn.gamma.shape)
        bn.beta[:] = rng.normal(0, 0.3, bn.beta.shape)
        bn.running_mean[:] = rng.normal(0, 0.5, bn.running_mean.shape)
        bn.running_var[:] = rng.uniform(0.5, 2.0, bn.running_var.shape)
    return model


# --- forward -----------------------------------------------------------------------


def test_hand_forward():
    # x=[1,2]: pre = [1-2, 2+1] + [0, .5] = [-1, 3.5] -> relu [0, 3.5]
    # logits = [0*1 + .1, 3.5*2 - .1] = [0.1, 6.9]
    out = forward(hand_model(), [[1.0, 2.0]])
    np.testing.assert_array_equal(out.hidden[0], [[0.0, 3.5]])
    np.testing.assert_allclose(out.logits, [[0.1, 6.9]], rtol=0, atol=1e-15)


def test_hand_forward_with_clip():
    out = forward(hand_model(clip_layer=0, clip_c=1.0), [[1.0, 2.0]])
    np.testing.assert_array_equal(out.penultimate, [[0.0, 1.0]])
    np.testing.assert_allclose(out.logits, [[0.1, 1.9]], atol=1e-15)


def test_batchnorm_identity_on_standardized_input(rng):
    w = np.eye(3)
    model = MlpModel((3, 3, 2), [w, rng.normal(size=(3, 2))], [None, np.zeros(2)], [BatchNorm.identity(3)])
    x = rng.normal(size=(200, 3))
    x = (x - x.mean(0)) / x.std(0)
    pre = forward(model, x).cache.post_bn[0]
    np.testing.assert_allclose(pre, x / math.sqrt(1 + 1e-5), rtol=1e-14)
    np.testing.assert_allclose(pre, x, atol=1e-5 * np.abs(x).max())
    batch = forward(model, x, bn_mode="batch_true_ood").cache.post_bn[0]
    np.testing.assert_allclose(batch, pre, rtol=1e-12)


def test_infinite_clip_is_bit_identical(rng):
    model = random_bn_model(1)
    x = rng.normal(size=(16, 3))
    plain = forward(model, x)
    for layer in range(model.n_hidden):
        clipped = forward(model.with_clip(layer, math.inf), x)
        np.testing.assert_array_equal(plain.logits, clipped.logits)
        np.testing.assert_array_equal(plain.penultimate, clipped.penultimate)


def test_clip_only_touches_its_layer(rng):
    model = random_bn_model(2)
    x = rng.normal(size=(16, 3))
    plain = forward(model, x)
    clipped = forward(model.with_clip(0, 0.2), x)
    np.testing.assert_array_equal(clipped.hidden[0], np.minimum(plain.hidden[0], 0.2))
    assert clipped.hidden[0].max() <= 0.2


def test_train_mode_updates_running_stats(rng):
    model = random_bn_model(3)
    x = rng.normal(size=(32, 3))
    before = model.bn[0].running_mean.copy()
    pre = x @ model.weights[0]
    forward(model, x, train=True)
    np.testing.assert_allclose(model.bn[0].running_mean, 0.9 * before + 0.1 * pre.mean(0), rtol=1e-14)
    snapshot = model.copy()
    forward(model, x, bn_mode="batch_true_ood")
    np.testing.assert_array_equal(model.bn[0].running_mean, snapshot.bn[0].running_mean)


def test_eval_is_pure(rng):
    model = random_bn_model(4)
    x = rng.normal(size=(10, 3))
    a = forward(model, x).logits
    b = forward(model, x).logits
    np.testing.assert_array_equal(a, b)
    # rows are independent under running statistics
    np.testing.assert_array_equal(forward(model, x[:3]).logits, a[:3])


def test_batch_true_ood_needs_two_rows(rng):
    model = random_bn_model(5)
    with pytest.raises(ReactError):
        forward(model, rng.normal(size=(1, 3)), bn_mode=BnMode.BATCH_TRUE_OOD)
    forward(model, rng.normal(size=(1, 3)))


def test_input_width_mismatch():
    with pytest.raises(ShapeError):
        forward(hand_model(), [[1.0, 2.0, 3.0]])


def test_model_invariants():
    with pytest.raises(ValueError):
        hand_model(clip_layer=1)
    with pytest.raises(ValueError):
        hand_model(clip_c=0.0)
    bad = BatchNorm.identity(2)
    bad.running_var[0] = 0.0
    with pytest.raises(ValueError):
        MlpModel((2, 2, 2), [np.eye(2), np.eye(2)], [None, np.zeros(2)], [bad])


# --- gradients ---------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences_train_mode(seed):
    rng = np.random.default_rng(100 + seed)
    model = random_bn_model(seed)
    x = rng.normal(size=(8, 3))
    y = rng.integers(0, 2, 8)
    errors = gradient_check(model, x, y, train=True)
    assert max(errors.values()) < 1e-5, errors


def test_gradients_eval_mode_and_no_bn():
    rng = np.random.default_rng(7)
    model = random_bn_model(7)
    x, y = rng.normal(size=(6, 3)), rng.integers(0, 2, 6)
    assert max(gradient_check(model, x, y, train=False).values()) < 1e-5
    plain = init_mlp((3, 6, 4, 3), seed=8, batchnorm=False)
    plain.biases[0][:] = rng.normal(size=6)
    plain.biases[1][:] = rng.normal(size=4)  # keeps every pre-activation off the relu kink
    y3 = rng.integers(0, 3, 6)
    assert max(gradient_check(plain, x, y3, train=False).values()) < 1e-5


def test_gradients_through_clip():
    rng = np.random.default_rng(9)
    model = random_bn_model(9).with_clip(1, 0.5)
    x, y = rng.normal(size=(8, 3)), rng.integers(0, 2, 8)
    out = forward(model, x, train=True, update_stats=False)
    assert np.any(out.cache.post_bn[1] > 0.5)  # the clip is active somewhere
    assert max(gradient_check(model, x, y, train=True).values()) < 1e-5


def test_clipped_units_pass_no_gradient():
    model = hand_model(clip_layer=0, clip_c=1.0)
    out = forward(model, [[1.0, 2.0]])
    grads = backward(model, out.cache, np.ones((1, 2)))
    # second hidden unit (3.5 > c) and first (dead relu) both block
    np.testing.assert_array_equal(grads.inputs, [[0.0, 0.0]])
    np.testing.assert_array_equal(grads.weights[0], np.zeros((2, 2)))


def test_zero_input_symmetric_logits_zero_input_grad():
    model = init_mlp((3, 4, 2), seed=0, batchnorm=False)
    model.weights[-1][:] = 1.0  # both classes see the same logit
    _, grads = gradients(model, np.zeros((2, 3)), np.array([0, 1]), train=False)
    np.testing.assert_array_equal(grads.inputs, np.zeros((2, 3)))


# --- training ------------------------------------------------------------------------


def two_blobs(seed=0):
    spec = BlobSpec(n_classes=2, dim=2, samples_per_class=100, std=0.3, means=np.array([[-2.0, 0.0], [2.0, 0.0]]), seed=seed)
    return gen_id_blobs(spec, seed=seed + 1)


def test_train_separable_blobs():
    data = two_blobs()
    result = train(init_mlp((2, 8, 8, 2), seed=1), data, TrainConfig(epochs=50, batch_size=32, seed=2))
    assert result.train_accuracy >= 0.99
    assert accuracy(result.model, data.features, data.labels) == result.train_accuracy
    assert len(result.losses) == 50


def test_loss_decreases_first_epochs():
    data = two_blobs(3)
    result = train(init_mlp((2, 8, 8, 2), seed=4), data, TrainConfig(epochs=5, batch_size=32, seed=5))
    assert result.losses[-1] < result.losses[0]


def test_zero_learning_rate_keeps_weights():
    data = two_blobs()
    model = init_mlp((2, 8, 2), seed=1)
    out = train(model, data, TrainConfig(epochs=3, learning_rate=0.0, seed=0)).model
    for a, b in zip(model.weights, out.weights):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(model.bn[0].gamma, out.bn[0].gamma)


def test_training_is_deterministic():
    data = two_blobs()
    cfg = TrainConfig(epochs=4, batch_size=16, seed=11)
    a = train(init_mlp((2, 8, 2), seed=1), data, cfg)
    b = train(init_mlp((2, 8, 2), seed=1), data, cfg)
    buf_a, buf_b = io.BytesIO(), io.BytesIO()
    write_model(a.model, buf_a)
    write_model(b.model, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()
    assert a.losses == b.losses


def test_train_requires_labels():
    with pytest.raises(ReactError):
        train(init_mlp((2, 4, 2)), FeaturePack(np.zeros((4, 2))), TrainConfig(epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_aborts_on_divergence():
    model = init_mlp((2, 8, 2), seed=0, batchnorm=False)
    model.weights[-1][:] = 1e308  # logits overflow to inf, softmax shift gives nan
    with pytest.raises(NumericError, match="non-finite loss at epoch 0"):
        train(model, two_blobs(), TrainConfig(epochs=2))


def test_lr_schedule():
    cfg = TrainConfig(epochs=20, learning_rate=0.1)
    assert cfg.decay_epochs() == [10, 15, 18]
    assert cfg.lr_at(0) == 0.1
    assert cfg.lr_at(10) == pytest.approx(0.01)
    assert cfg.lr_at(19) == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


# --- ODIN / features -------------------------------------------------------------------


def test_odin_zero_epsilon_is_identity(blob_model):
    model, data = blob_model
    np.testing.assert_array_equal(odin_perturb(model, data.features, 0.0), data.features)


def test_odin_sign_structure(blob_model):
    model, data = blob_model
    eps = 0.01
    delta = odin_perturb(model, data.features, eps) - data.features
    assert np.all(np.isclose(np.abs(delta), eps, rtol=0, atol=1e-12) | (delta == 0))


def test_odin_raises_msp(blob_model):
    model, data = blob_model
    before = msp_scores(forward(model, data.features).logits, 1000.0).mean()
    x_t = odin_perturb(model, data.features, 0.002, 1000.0)
    after = msp_scores(forward(model, x_t).logits, 1000.0).mean()
    assert after >= before


def test_odin_rejects_negative_epsilon(blob_model):
    with pytest.raises(ValueError):
        odin_perturb(blob_model[0], blob_model[1].features, -0.1)


def test_extract_features_shape_and_values(rng):
    model = init_mlp((2, 4, 3), seed=0)
    x = rng.normal(size=(5, 2))
    pack = extract_features(model, x, tag="tap")
    assert pack.features.shape == (5, 4)
    assert pack.tag == "tap"
    manual = np.maximum((x @ model.weights[0]) / math.sqrt(1 + 1e-5), 0)
    np.testing.assert_allclose(pack.features, manual, rtol=1e-15)
    with pytest.raises(ValueError):
        extract_features(model, x, layer=1)


def test_extract_features_reflects_clip(rng):
    model = random_bn_model(12).with_clip(0, 0.3)
    pack = extract_features(model, rng.normal(size=(20, 3)), layer=0)
    assert pack.features.max() <= 0.3


# --- checkpoints -------------------------------------------------------------------------


@pytest.mark.parametrize("batchnorm", [True, False])
def test_checkpoint_roundtrip(tmp_path, rng, batchnorm):
    model = init_mlp((3, 5, 4, 2), seed=3, batchnorm=batchnorm).with_clip(1, 0.75)
    if batchnorm:
        model.bn[1].running_var[:] = rng.uniform(0.5, 2, 4)
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    loaded = load_model(path)
    x = rng.normal(size=(7, 3))
    np.testing.assert_array_equal(forward(model, x).logits, forward(loaded, x).logits)
    assert loaded.clip_layer == 1 and loaded.clip_c == 0.75
    buf = io.BytesIO()
    write_model(loaded, buf)
    assert buf.getvalue() == path.read_bytes()


def test_checkpoint_infinite_clip_roundtrip():
    buf = io.BytesIO()
    write_model(init_mlp((2, 3, 2)), buf)
    buf.seek(0)
    loaded = read_model(buf)
    assert loaded.clip_layer is None and loaded.clip_c == math.inf
