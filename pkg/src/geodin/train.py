"""Desk-scale supervised training of extractor + decomposed head.

The feature extractor first projects inputs onto the unit sphere (zero
inputs pass through unchanged) and then applies a small fully connected net
whose every layer, including the output, is rectified, so features are
nonnegative by construction.  The normalization makes the extractor respond
to input direction rather than magnitude: activations, and with them the
feature norm, fall off as an input rotates away from the training manifold,
which is what the norm-based covariate score measures.

Optimization is plain SGD with momentum, weight decay and per-step cosine
learning-rate annealing.  All randomness (init order, then one shuffle
permutation per epoch) flows from a single seeded generator, and batch
gradients are accumulated by numpy's fixed pairwise reductions, so a
(config, dataset) pair reproduces the model bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .head import (
    HeadParams,
    HeadVariant,
    head_backward_batch,
    head_forward_batch,
    softmax_cross_entropy_batch,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    variant: HeadVariant = HeadVariant.ALPHA_BETA
    decay_heads: bool = True  # weight decay on alpha/beta head parameters
    hidden: tuple[int, ...] = (64, 64)
    feature_dim: int = 16

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed}")
        if self.feature_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("layer widths must be >= 1")


@dataclass
class ExtractorParams:
    """Fully connected rectified layers; the last one emits the feature."""

    layers: list[tuple[np.ndarray, np.ndarray]]  # (W out x in, b out)

    @classmethod
    def initial(
        cls, d_in: int, hidden: Sequence[int], d_feature: int, rng: np.random.Generator
    ) -> "ExtractorParams":
        dims = [d_in, *hidden, d_feature]
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
        return cls(layers)

    @property
    def d_in(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def d_feature(self) -> int:
        return self.layers[-1][0].shape[0]

    def copy(self) -> "ExtractorParams":
        return ExtractorParams([(W.copy(), b.copy()) for W, b in self.layers])


@dataclass
class Model:
    extractor: ExtractorParams
    head: HeadParams
    meta: dict
    history: list = field(default_factory=list)  # per-epoch log, not serialized


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at total_steps."""
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def unit_rows(X: np.ndarray) -> np.ndarray:
    """Project rows onto the unit sphere; rows with ~zero norm pass through."""
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, norms, out=X.astype(np.float64).copy(), where=norms >= 1e-12)


def extractor_forward(params: ExtractorParams, X: np.ndarray):
    """Rectified forward pass; returns the feature batch and the layer cache."""
    a = unit_rows(X)
    cache = []  # (input, pre-activation) per layer
    for W, b in params.layers:
        z = a @ W.T + b
        cache.append((a, z))
        a = np.maximum(z, 0.0)
    return a, cache


def extractor_backward(params: ExtractorParams, cache, grad_F: np.ndarray):
    """Backprop grad wrt features through the rectified layers."""
    grads = [None] * len(params.layers)
    g = grad_F
    for i in range(len(params.layers) - 1, -1, -1):
        a_in, z = cache[i]
        dz = g * (z > 0)
        grads[i] = (dz.T @ a_in, dz.sum(axis=0))
        if i > 0:
            g = dz @ params.layers[i][0]
    return grads


def init_model(config: TrainConfig, d_in: int, n_classes: int) -> Model:
    """Untrained model with the documented parameter draw order."""
    config.validate()
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(config.seed)
    extractor = ExtractorParams.initial(d_in, config.hidden, config.feature_dim, rng)
    head = HeadParams.initial(config.feature_dim, n_classes, config.variant, rng)
    meta = {
        "seed": int(config.seed),
        "variant": HeadVariant(config.variant).value,
        "d_in": int(d_in),
        "hidden": [int(h) for h in config.hidden],
        "feature_dim": int(config.feature_dim),
        "n_classes": int(n_classes),
        "trained": False,
    }
    return Model(extractor, head, meta)


def _check_inputs(model: Model, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.extractor.d_in:
        raise ShapeError(f"input batch shape {X.shape} does not match model d_in {model.extractor.d_in}")
    return X


def extract_features(model: Model, inputs) -> np.ndarray:
    """Feature batch for a 2-D input batch (or one 1-D sample)."""
    X = np.asarray(inputs, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    F, _ = extractor_forward(model.extractor, _check_inputs(model, X))
    return F[0] if single else F


def model_logits(model: Model, X) -> np.ndarray:
    F = extract_features(model, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return head_forward_batch(F, model.head).logits


def predict(model: Model, X) -> np.ndarray:
    return np.argmax(model_logits(model, X), axis=1)


def accuracy(model: Model, X, y) -> float:
    return float(np.mean(predict(model, X) == np.asarray(y)))


def loss_and_grads(model: Model, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and gradients for every parameter group."""
    X = _check_inputs(model, X)
    F, cache = extractor_forward(model.extractor, X)
    trace = head_forward_batch(F, model.head)
    loss, grad_logits = softmax_cross_entropy_batch(trace.logits, y)
    hg = head_backward_batch(trace, F, model.head, grad_logits)
    eg = extractor_backward(model.extractor, cache, hg.f)
    return loss, {"extractor": eg, "head": hg}


def _param_groups(model: Model, decay_heads: bool):
    """(array, gradient key, weight-decayed) triples in update order."""
    groups = []
    for i, (W, b) in enumerate(model.extractor.layers):
        groups.append((W, ("extractor", i, 0), True))
        groups.append((b, ("extractor", i, 1), True))
    head = model.head
    groups.append((head.W, ("head", "W"), True))
    if head.variant.has_alpha:
        groups.append((head.alpha_w, ("head", "alpha_w"), decay_heads))
        groups.append(("alpha_b", ("head", "alpha_b"), decay_heads))
    if head.variant.has_beta:
        groups.append((head.beta_w, ("head", "beta_w"), decay_heads))
        groups.append(("beta_b", ("head", "beta_b"), decay_heads))
    return groups


def _grad_lookup(grads, key):
    if key[0] == "extractor":
        return grads["extractor"][key[1]][key[2]]
    return getattr(grads["head"], key[1])


def train(config: TrainConfig, train_set, n_classes: int | None = None) -> Model:
    """Train a fresh model on (X, y); deterministic given (config, dataset)."""
    config.validate()
    X, y = train_set
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigError(f"train set must be a nonempty 2-D batch, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match inputs {X.shape}")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ConfigError("labels out of range")

    model = init_model(config, X.shape[1], n_classes)
    # Shuffle stream is separate from the init stream (seed, then seed+tag).
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    n = X.shape[0]
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * steps_per_epoch

    velocity = {}
    step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for bi in range(steps_per_epoch):
            idx = perm[bi * config.batch_size : (bi + 1) * config.batch_size]
            lr = cosine_lr(step, total_steps, config.lr0)
            loss, grads = loss_and_grads(model, X[idx], y[idx])
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss {loss} at epoch {epoch} batch {bi} (lr={lr:.6g})"
                )
            _sgd_step(model, grads, velocity, lr, config)
            epoch_loss += loss
            step += 1
        model.history.append(
            {"epoch": epoch, "mean_loss": epoch_loss / steps_per_epoch, "lr": lr}
        )
    model.meta["trained"] = True
    model.meta["epochs"] = config.epochs
    return model


def _sgd_step(model: Model, grads, velocity, lr: float, config: TrainConfig) -> None:
    head = model.head
    for param, key, decayed in _param_groups(model, config.decay_heads):
        g = _grad_lookup(grads, key)
        scalar = isinstance(param, str)
        value = getattr(head, param) if scalar else param
        if decayed and config.weight_decay:
            g = g + config.weight_decay * value
        v = velocity.get(key, 0.0)
        v = config.momentum * v + g
        velocity[key] = v
        if scalar:
            setattr(head, param, value - lr * v)
        else:
            param -= lr * v


def full_gradient_check(model: Model, sample, eps: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-3): the
    finite-difference quotient carries ~1e-11*|loss| of float noise at
    eps=1e-5, so near-zero entries are compared absolutely.
    """
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    x, label = sample
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray([label], dtype=np.int64)

    _, grads = loss_and_grads(model, X, y)

    def loss_only() -> float:
        F, _ = extractor_forward(model.extractor, X)
        trace = head_forward_batch(F, model.head)
        loss, _ = softmax_cross_entropy_batch(trace.logits, y)
        return loss

    worst = 0.0
    for param, key, _ in _param_groups(model, decay_heads=True):
        analytic = np.atleast_1d(np.asarray(_grad_lookup(grads, key), dtype=np.float64))
        if isinstance(param, str):
            base = getattr(model.head, param)
            perturbed = np.zeros(1)
            setattr(model.head, param, base + eps)
            up = loss_only()
            setattr(model.head, param, base - eps)
            down = loss_only()
            setattr(model.head, param, base)
            perturbed[0] = (up - down) / (2 * eps)
            numeric = perturbed
        else:
            flat = param.reshape(-1)
            numeric = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_only()
                flat[i] = orig - eps
                down = loss_only()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * eps)
        a = analytic.reshape(-1)
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-3)
        worst = max(worst, float(rel.max()))
    return worst
