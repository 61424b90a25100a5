"""Shared feature extractor: a small ReLU MLP trained by mini-batch SGD.

Everything is float64 and functional: parameter containers are treated as
immutable snapshots, and each SGD step returns fresh arrays. Backprop is
exact; the classification head is either a frozen generative classifier
(whose parameters receive no gradient) or a trainable linear layer for the
discriminative baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import GenerativeClassifier


@dataclass(frozen=True, eq=False)
class TrainHyper:
    lr: float = 0.01
    momentum: float = 0.5
    weight_decay: float = 5e-4
    batch_size: int = 50
    epochs: int = 5

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass(eq=False)
class MlpParams:
    """Per-layer weight matrices (fan_out, fan_in) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass(eq=False)
class ParamBlocks:
    """Gradient or velocity blocks with the same shapes as MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass(eq=False)
class ForwardCache:
    inputs: list[np.ndarray]  # activation entering each layer
    pre: list[np.ndarray]  # pre-activation of each layer


@dataclass(eq=False)
class FeatureLog:
    """Feature/label pairs collected during the latest local training pass."""

    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(eq=False)
class LinearHead:
    """Trainable discriminative output layer for the FedAvg baselines."""

    weights: np.ndarray  # (C, d)
    biases: np.ndarray  # (C,)

    def copy(self) -> "LinearHead":
        return LinearHead(self.weights.copy(), self.biases.copy())


def init_mlp(layer_dims: list[int], rng: np.random.Generator) -> MlpParams:
    """Gaussian init: N(0, 2/fan_in) on hidden layers, N(0, 1/fan_in) on the output layer, zero biases."""
    if len(layer_dims) < 2:
        raise ValueError("layer_dims needs at least input and output sizes")
    num_layers = len(layer_dims) - 1
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for layer in range(num_layers):
        fan_in, fan_out = layer_dims[layer], layer_dims[layer + 1]
        gain = 2.0 if layer < num_layers - 1 else 1.0
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def init_linear_head(feature_dim: int, num_classes: int, rng: np.random.Generator) -> LinearHead:
    return LinearHead(rng.normal(0.0, np.sqrt(1.0 / feature_dim), size=(num_classes, feature_dim)), np.zeros(num_classes))


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Batch forward pass; the cache holds everything backprop needs."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != params.weights[0].shape[1]:
        raise ValueError("input must be (n, input_dim)")
    inputs: list[np.ndarray] = []
    pre: list[np.ndarray] = []
    last = params.num_layers - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = z if layer == last else np.maximum(z, 0.0)
    return a, ForwardCache(inputs, pre)


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _backprop(params: MlpParams, cache: ForwardCache, d_features: np.ndarray) -> ParamBlocks:
    grads_w: list[np.ndarray | None] = [None] * params.num_layers
    grads_b: list[np.ndarray | None] = [None] * params.num_layers
    delta = d_features
    for layer in reversed(range(params.num_layers)):
        grads_w[layer] = delta.T @ cache.inputs[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (cache.pre[layer - 1] > 0)
    return ParamBlocks(grads_w, grads_b)  # type: ignore[arg-type]


def _head_error(head_w: np.ndarray, head_b: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = features.shape[0]
    probs = _softmax_rows(features @ head_w.T + head_b)
    probs[np.arange(n), labels] -= 1.0
    return probs / n


def backward_ce(params: MlpParams, cache: ForwardCache, clf: GenerativeClassifier, labels: np.ndarray) -> ParamBlocks:
    """Exact gradients of the mean cross-entropy under a frozen classifier head."""
    labels = np.asarray(labels, dtype=np.int64)
    features = cache.pre[-1]
    err = _head_error(clf.weights, clf.biases, features, labels)
    return _backprop(params, cache, err @ clf.weights)


def backward_ce_trainable_head(
    params: MlpParams, cache: ForwardCache, head: LinearHead, labels: np.ndarray
) -> tuple[ParamBlocks, np.ndarray, np.ndarray]:
    """Joint gradients for backbone and a trainable linear head."""
    labels = np.asarray(labels, dtype=np.int64)
    features = cache.pre[-1]
    err = _head_error(head.weights, head.biases, features, labels)
    grads = _backprop(params, cache, err @ head.weights)
    return grads, err.T @ features, err.sum(axis=0)


def zero_velocity(params: MlpParams) -> ParamBlocks:
    return ParamBlocks([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


def _sgd_update(p: np.ndarray, g: np.ndarray, v: np.ndarray, hyper: TrainHyper) -> tuple[np.ndarray, np.ndarray]:
    v_new = hyper.momentum * v + (g + hyper.weight_decay * p)
    return p - hyper.lr * v_new, v_new


def sgd_step(
    params: MlpParams, grads: ParamBlocks, velocity: ParamBlocks, hyper: TrainHyper
) -> tuple[MlpParams, ParamBlocks]:
    """One momentum-SGD step: v <- m*v + (g + wd*p); p <- p - lr*v."""
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for p, g, v in zip(params.weights, grads.weights, velocity.weights):
        p2, v2 = _sgd_update(p, g, v, hyper)
        new_w.append(p2)
        vel_w.append(v2)
    for p, g, v in zip(params.biases, grads.biases, velocity.biases):
        p2, v2 = _sgd_update(p, g, v, hyper)
        new_b.append(p2)
        vel_b.append(v2)
    return MlpParams(new_w, new_b), ParamBlocks(vel_w, vel_b)


@dataclass(eq=False)
class TrainResult:
    params: MlpParams
    log: FeatureLog
    velocity: ParamBlocks


def train_local(
    params: MlpParams,
    clf: GenerativeClassifier,
    x: np.ndarray,
    y: np.ndarray,
    hyper: TrainHyper,
    rng: np.random.Generator,
    velocity: ParamBlocks | None = None,
) -> TrainResult:
    """E epochs of shuffled mini-batch SGD under a frozen classifier.

    The feature log holds every sample of the final epoch, recorded in
    encounter order from the forward pass that trained on it. With zero
    epochs the parameters are untouched and the log comes from a single
    plain forward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty shard")
    if velocity is None:
        velocity = zero_velocity(params)
    if hyper.epochs == 0:
        z, _ = forward(params, x)
        return TrainResult(params.copy(), FeatureLog(z, y.copy()), velocity)
    feats: list[np.ndarray] = []
    labs: list[np.ndarray] = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        final_epoch = epoch == hyper.epochs - 1
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            z, cache = forward(params, x[idx])
            if final_epoch:
                feats.append(z)
                labs.append(y[idx])
            grads = backward_ce(params, cache, clf, y[idx])
            params, velocity = sgd_step(params, grads, velocity, hyper)
    return TrainResult(params, FeatureLog(np.concatenate(feats), np.concatenate(labs)), velocity)


@dataclass(eq=False)
class JointTrainResult:
    params: MlpParams
    head: LinearHead
    velocity: ParamBlocks
    head_velocity: tuple[np.ndarray, np.ndarray]


def train_local_joint(
    params: MlpParams,
    head: LinearHead,
    x: np.ndarray,
    y: np.ndarray,
    hyper: TrainHyper,
    rng: np.random.Generator,
    velocity: ParamBlocks | None = None,
    head_velocity: tuple[np.ndarray, np.ndarray] | None = None,
) -> JointTrainResult:
    """Same loop as train_local but with a jointly trained linear head."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty shard")
    head = head.copy()
    if velocity is None:
        velocity = zero_velocity(params)
    if head_velocity is None:
        head_velocity = (np.zeros_like(head.weights), np.zeros_like(head.biases))
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            _, cache = forward(params, x[idx])
            grads, gw, gb = backward_ce_trainable_head(params, cache, head, y[idx])
            params, velocity = sgd_step(params, grads, velocity, hyper)
            w2, vw2 = _sgd_update(head.weights, gw, head_velocity[0], hyper)
            b2, vb2 = _sgd_update(head.biases, gb, head_velocity[1], hyper)
            head = LinearHead(w2, b2)
            head_velocity = (vw2, vb2)
    return JointTrainResult(params, head, velocity, head_velocity)
