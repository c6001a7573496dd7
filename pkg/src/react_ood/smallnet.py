"""Small numpy MLP: Linear -> BatchNorm -> ReLU hidden blocks and a linear head.

Optional ReAct clipping ``min(h, clip_c)`` after the ReLU of one hidden layer
(``clip_layer``). Hidden linear layers carry no bias when BatchNorm follows
them, since the BatchNorm shift makes it redundant.

BatchNorm conventions: batch variance uses divisor N, running statistics
update as ``running <- (1 - momentum) * running + momentum * batch``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from react_ood.core import NumericError, ReactError, ShapeError, as_matrix, make_rng
from react_ood.featureio import ClassifierHead, FeaturePack, FormatError, read_pack, write_pack

logger = logging.getLogger(__name__)


class BnMode(str, enum.Enum):
    RUNNING_ID = "running_id"
    BATCH_TRUE_OOD = "batch_true_ood"


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def identity(cls, width: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width), momentum, eps)

    def copy(self) -> "BatchNorm":
        return BatchNorm(
            self.gamma.copy(),
            self.beta.copy(),
            self.running_mean.copy(),
            self.running_var.copy(),
            self.momentum,
            self.eps,
        )


@dataclass
class MlpModel:
    """Weights are stored (fan_in, fan_out) so a layer computes ``h @ W + b``."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray | None]
    bn: list[BatchNorm] | None = None
    clip_layer: int | None = None
    clip_c: float = math.inf

    def __post_init__(self) -> None:
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 3:
            raise ValueError("need input, at least one hidden layer, and output dims")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError(f"expected {n_layers} weight/bias entries")
        for i, w in enumerate(self.weights):
            expected = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != expected:
                raise ShapeError(f"layer {i} weight has shape {w.shape}, expected {expected}", w.shape)
        if self.biases[-1] is None:
            raise ValueError("output layer needs a bias")
        if self.bn is not None:
            if len(self.bn) != self.n_hidden:
                raise ValueError("one BatchNorm per hidden layer")
            if any(np.any(b.running_var <= 0) for b in self.bn):
                raise ValueError("running variances must be positive")
        if self.clip_layer is not None and not 0 <= self.clip_layer < self.n_hidden:
            raise ValueError(f"clip_layer {self.clip_layer} outside 0..{self.n_hidden - 1}")
        if math.isnan(self.clip_c) or self.clip_c <= 0:
            raise ValueError(f"clip_c must be positive, got {self.clip_c}")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_dims) - 2

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def head(self) -> ClassifierHead:
        return ClassifierHead(self.weights[-1].copy(), self.biases[-1].copy())

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
            None if self.bn is None else [b.copy() for b in self.bn],
            self.clip_layer,
            self.clip_c,
        )

    def with_clip(self, layer: int | None, c: float = math.inf) -> "MlpModel":
        """Same parameters (shared, not copied) with a different clip setting."""
        return MlpModel(self.layer_dims, self.weights, self.biases, self.bn, layer, c)


def init_mlp(layer_dims, seed: int = 0, batchnorm: bool = True) -> MlpModel:
    """He-normal weights, zero biases, identity BatchNorm."""
    rng = make_rng(seed)
    dims = tuple(int(d) for d in layer_dims)
    weights, biases = [], []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1])))
        hidden = i < n_layers - 1
        biases.append(None if hidden and batchnorm else np.zeros(dims[i + 1]))
    bn = [BatchNorm.identity(d) for d in dims[1:-1]] if batchnorm else None
    return MlpModel(dims, weights, biases, bn)


@dataclass
class _Cache:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)  # linear outputs
    xhat: list[np.ndarray | None] = field(default_factory=list)
    inv_std: list[np.ndarray | None] = field(default_factory=list)
    batch_stats: list[bool] = field(default_factory=list)
    post_bn: list[np.ndarray] = field(default_factory=list)
    hidden: list[np.ndarray] = field(default_factory=list)  # after ReLU (and clip)


@dataclass
class ForwardResult:
    logits: np.ndarray
    penultimate: np.ndarray
    hidden: list[np.ndarray]
    cache: _Cache


def forward(
    model: MlpModel,
    inputs,
    train: bool = False,
    bn_mode: BnMode | str = BnMode.RUNNING_ID,
    update_stats: bool | None = None,
) -> ForwardResult:
    """Run the network.

    ``train=True`` normalizes with batch statistics and (unless
    ``update_stats=False``) updates the running statistics in place.
    In eval mode, ``bn_mode="batch_true_ood"`` normalizes with the statistics
    of the presented batch instead of the stored running ones.
    """
    x = as_matrix(inputs, "inputs")
    if x.shape[1] != model.layer_dims[0]:
        raise ShapeError(
            f"input width {x.shape[1]} != model input dim {model.layer_dims[0]}", x.shape
        )
    bn_mode = BnMode(bn_mode)
    use_batch = train or bn_mode is BnMode.BATCH_TRUE_OOD
    if update_stats is None:
        update_stats = train
    if model.bn is not None and use_batch and x.shape[0] < 2:
        raise ReactError("batch statistics need a batch of at least 2 samples")

    cache = _Cache(inputs=x)
    h = x
    for layer in range(model.n_hidden):
        a = h @ model.weights[layer]
        if model.biases[layer] is not None:
            a = a + model.biases[layer]
        cache.pre.append(a)
        if model.bn is not None:
            bn = model.bn[layer]
            if use_batch:
                mean = a.mean(axis=0)
                var = a.var(axis=0)
                if update_stats:
                    bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mean
                    bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var
            else:
                mean, var = bn.running_mean, bn.running_var
            inv_std = 1.0 / np.sqrt(var + bn.eps)
            xhat = (a - mean) * inv_std
            a = xhat * bn.gamma + bn.beta
            cache.xhat.append(xhat)
            cache.inv_std.append(inv_std)
            cache.batch_stats.append(use_batch)
        else:
            cache.xhat.append(None)
            cache.inv_std.append(None)
            cache.batch_stats.append(False)
        cache.post_bn.append(a)
        h = np.maximum(a, 0.0)
        if model.clip_layer == layer and math.isfinite(model.clip_c):
            h = np.minimum(h, model.clip_c)
        cache.hidden.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    return ForwardResult(logits, h, list(cache.hidden), cache)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray | None]
    gamma: list[np.ndarray] | None
    beta: list[np.ndarray] | None
    inputs: np.ndarray


def backward(model: MlpModel, cache: _Cache, dlogits: np.ndarray) -> Gradients:
    """Backpropagate ``dL/dlogits`` through a cached forward pass."""
    n_hidden = model.n_hidden
    dw: list[np.ndarray] = [None] * (n_hidden + 1)  # type: ignore[list-item]
    db: list[np.ndarray | None] = [None] * (n_hidden + 1)
    dgamma = [None] * n_hidden if model.bn is not None else None
    dbeta = [None] * n_hidden if model.bn is not None else None

    h_last = cache.hidden[-1]
    dw[-1] = h_last.T @ dlogits
    db[-1] = dlogits.sum(axis=0)
    dh = dlogits @ model.weights[-1].T
    for layer in reversed(range(n_hidden)):
        a_bn = cache.post_bn[layer]
        # ReLU'(0) = 0; clip passes gradient only where relu(a) <= c
        mask = a_bn > 0
        if model.clip_layer == layer and math.isfinite(model.clip_c):
            mask &= a_bn <= model.clip_c
        da = dh * mask
        if model.bn is not None:
            bn = model.bn[layer]
            xhat = cache.xhat[layer]
            inv_std = cache.inv_std[layer]
            dgamma[layer] = (da * xhat).sum(axis=0)
            dbeta[layer] = da.sum(axis=0)
            dxhat = da * bn.gamma
            if cache.batch_stats[layer]:
                n = dxhat.shape[0]
                da = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                da = dxhat * inv_std
        h_prev = cache.hidden[layer - 1] if layer > 0 else cache.inputs
        dw[layer] = h_prev.T @ da
        if model.biases[layer] is not None:
            db[layer] = da.sum(axis=0)
        dh = da @ model.weights[layer].T
    return Gradients(dw, db, dgamma, dbeta, dh)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    n = logits.shape[0]
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def loss_value(model: MlpModel, batch, labels, train: bool = True) -> float:
    result = forward(model, batch, train=train, update_stats=False)
    return cross_entropy(result.logits, np.asarray(labels))[0]


def gradients(model: MlpModel, batch, labels, train: bool = True) -> tuple[float, Gradients]:
    """Loss and exact gradients for every parameter and the inputs.

    Uses batch statistics when ``train`` (running statistics are not touched).
    """
    labels = np.asarray(labels)
    result = forward(model, batch, train=train, update_stats=False)
    loss, dlogits = cross_entropy(result.logits, labels)
    return loss, backward(model, result.cache, dlogits)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    lr_decay_fractions: tuple[float, ...] = (0.5, 0.75, 0.9)
    lr_decay_factor: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 2:
            raise ValueError("epochs must be >= 0 and batch_size >= 2")
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be >= 0 and momentum in [0, 1)")

    def decay_epochs(self) -> list[int]:
        return sorted({int(round(f * self.epochs)) for f in self.lr_decay_fractions})

    def lr_at(self, epoch: int) -> float:
        n_decays = sum(epoch >= e for e in self.decay_epochs())
        return self.learning_rate * self.lr_decay_factor**n_decays


@dataclass
class TrainResult:
    model: MlpModel
    losses: list[float]
    train_accuracy: float


def _param_slots(model: MlpModel):
    """(container, index) pairs for every trainable array, in a fixed order."""
    slots = []
    for i in range(len(model.weights)):
        slots.append(("weights", i))
        if model.biases[i] is not None:
            slots.append(("biases", i))
    if model.bn is not None:
        for i in range(model.n_hidden):
            slots.append(("gamma", i))
            slots.append(("beta", i))
    return slots


def _get(model: MlpModel, slot):
    kind, i = slot
    if kind == "weights":
        return model.weights[i]
    if kind == "biases":
        return model.biases[i]
    return getattr(model.bn[i], kind)


def _grad(grads: Gradients, slot):
    kind, i = slot
    return {"weights": grads.weights, "biases": grads.biases, "gamma": grads.gamma, "beta": grads.beta}[kind][i]


def train(model: MlpModel, data: FeaturePack, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Minibatch SGD with heavy-ball momentum on softmax cross-entropy.

    Works on a copy; returns the trained model and the mean loss per epoch.
    """
    if data.labels is None:
        raise ReactError("training data needs labels")
    model = model.copy()
    rng = make_rng(cfg.seed)
    x, y = data.features, data.labels
    slots = _param_slots(model)
    velocity = {slot: np.zeros_like(_get(model, slot)) for slot in slots}
    losses = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(x.shape[0])
        epoch_loss, seen = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue
            result = forward(model, x[idx], train=True)
            loss, dlogits = cross_entropy(result.logits, y[idx])
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}, lr={lr}"
                )
            grads = backward(model, result.cache, dlogits)
            for slot in slots:
                v = velocity[slot]
                v *= cfg.momentum
                v -= lr * _grad(grads, slot)
                _get(model, slot)[...] += v
            epoch_loss += loss * idx.size
            seen += idx.size
        losses.append(epoch_loss / max(seen, 1))
        logger.debug("epoch %d lr %.4g loss %.5f", epoch, lr, losses[-1])
    acc = accuracy(model, x, y)
    return TrainResult(model, losses, acc)


def predict(model: MlpModel, inputs, bn_mode: BnMode | str = BnMode.RUNNING_ID) -> np.ndarray:
    return forward(model, inputs, bn_mode=bn_mode).logits.argmax(axis=1)


def accuracy(model: MlpModel, inputs, labels) -> float:
    return float(np.mean(predict(model, inputs) == np.asarray(labels)))


def odin_perturb(model: MlpModel, inputs, epsilon: float, temperature: float = 1000.0) -> np.ndarray:
    """Step each input against the gradient of ``-log max_k softmax(f(x)/T)_k``.

    Eval mode with running statistics, so rows are perturbed independently.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    x = as_matrix(inputs, "inputs")
    if epsilon == 0:
        return x.copy()
    result = forward(model, x)
    z = result.logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    top = result.logits.argmax(axis=1)
    dlogits = probs
    dlogits[np.arange(x.shape[0]), top] -= 1.0
    dlogits /= temperature
    grad_x = backward(model, result.cache, dlogits).inputs
    return x - epsilon * np.sign(grad_x)


def extract_features(
    model: MlpModel,
    inputs,
    layer: int | None = None,
    bn_mode: BnMode | str = BnMode.RUNNING_ID,
    tag: str = "",
) -> FeaturePack:
    """Post-activation values of hidden ``layer`` (default: penultimate), eval mode."""
    if layer is None:
        layer = model.n_hidden - 1
    if not 0 <= layer < model.n_hidden:
        raise ValueError(f"layer {layer} outside 0..{model.n_hidden - 1}")
    result = forward(model, inputs, bn_mode=bn_mode)
    return FeaturePack(result.hidden[layer], tag=tag)


# --- checkpoints ---------------------------------------------------------------
#
# A checkpoint is a sequence of FPK1 records:
#   1. tag "smallnet-manifest", one row:
#        [L, d_0, ..., d_{L-1}, has_bn, clip_layer (-1 = none), clip_c (0 = inf),
#         bn_momentum, bn_eps]
#   2. for each hidden layer i:  "hidden{i}.weight" (d_i x d_{i+1}), then either
#        "hidden{i}.bn" (4 x d_{i+1}: gamma, beta, running_mean, running_var)
#        or "hidden{i}.bias" (1 x d_{i+1})
#   3. "out.weight", "out.bias"

MANIFEST_TAG = "smallnet-manifest"


def write_model(model: MlpModel, sink: BinaryIO) -> None:
    dims = list(model.layer_dims)
    bn0 = model.bn[0] if model.bn else BatchNorm.identity(1)
    manifest = [
        len(dims),
        *dims,
        1.0 if model.bn is not None else 0.0,
        -1.0 if model.clip_layer is None else float(model.clip_layer),
        model.clip_c if math.isfinite(model.clip_c) else 0.0,
        bn0.momentum,
        bn0.eps,
    ]
    write_pack(FeaturePack(np.array([manifest], dtype=np.float64), tag=MANIFEST_TAG), sink)
    for i in range(model.n_hidden):
        write_pack(FeaturePack(model.weights[i], tag=f"hidden{i}.weight"), sink)
        if model.bn is not None:
            bn = model.bn[i]
            stacked = np.vstack([bn.gamma, bn.beta, bn.running_mean, bn.running_var])
            write_pack(FeaturePack(stacked, tag=f"hidden{i}.bn"), sink)
        else:
            write_pack(FeaturePack(model.biases[i][None, :], tag=f"hidden{i}.bias"), sink)
    write_pack(FeaturePack(model.weights[-1], tag="out.weight"), sink)
    write_pack(FeaturePack(model.biases[-1][None, :], tag="out.bias", n_classes=model.n_classes), sink)


def read_model(source: BinaryIO) -> MlpModel:
    def expect(tag: str) -> np.ndarray:
        pack = read_pack(source)
        if pack.tag != tag:
            raise FormatError(f"expected record {tag!r}, found {pack.tag!r}")
        return pack.features

    row = expect(MANIFEST_TAG)[0]
    n_dims = int(row[0])
    dims = tuple(int(d) for d in row[1 : 1 + n_dims])
    has_bn, clip_layer, clip_c, momentum, bn_eps = row[1 + n_dims : 6 + n_dims]
    weights, biases, bns = [], [], []
    for i in range(n_dims - 2):
        weights.append(expect(f"hidden{i}.weight").copy())
        if has_bn:
            g, b, rm, rv = expect(f"hidden{i}.bn").copy()
            bns.append(BatchNorm(g, b, rm, rv, float(momentum), float(bn_eps)))
            biases.append(None)
        else:
            biases.append(expect(f"hidden{i}.bias")[0].copy())
    weights.append(expect("out.weight").copy())
    biases.append(expect("out.bias")[0].copy())
    return MlpModel(
        dims,
        weights,
        biases,
        bns if has_bn else None,
        None if clip_layer < 0 else int(clip_layer),
        math.inf if clip_c == 0 else float(clip_c),
    )


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        write_model(model, fh)


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        return read_model(fh)
