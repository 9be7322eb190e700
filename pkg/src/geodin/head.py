"""Final classification layer with the norm/angle-decomposed multiplier.

The plain layer produces s_i = f . w_i.  The decomposed layer rescales every
logit by the same strictly positive, input-dependent factor

    m(f) = 1/alpha(f) + beta(f) / (alpha(f) * ||f||),

with alpha = sigmoid(a . f + a0) in (0, 1) and beta = softplus(b . f + b0) > 0,
so that l_i = m * s_i = (||f||/alpha + beta/alpha) * ||w_i|| cos(phi_i).
Because m is shared across classes and positive, the ranking of the logits is
always that of the plain inner products.

Variants: ``vanilla`` (l = s), ``alpha_only`` (beta pinned to 0),
``beta_only`` (alpha pinned to 1), ``alpha_beta`` (both heads live).

Forward/backward come in a per-sample form (the reference contract) and a
batch form used by the training loops; both share one analytic core and the
backward pass is validated against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, ShapeError
from .scores import EPS_NORM, as_feature


class HeadVariant(str, Enum):
    VANILLA = "vanilla"
    ALPHA_ONLY = "alpha_only"
    BETA_ONLY = "beta_only"
    ALPHA_BETA = "alpha_beta"

    @property
    def has_alpha(self) -> bool:
        return self in (HeadVariant.ALPHA_ONLY, HeadVariant.ALPHA_BETA)

    @property
    def has_beta(self) -> bool:
        return self in (HeadVariant.BETA_ONLY, HeadVariant.ALPHA_BETA)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    out = np.logaddexp(0.0, np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


@dataclass
class HeadParams:
    """Class weights plus the alpha/beta head parameters.

    W has no bias row: the geometric factorization of the logits assumes
    pure inner products.
    """

    W: np.ndarray
    alpha_w: np.ndarray
    alpha_b: float
    beta_w: np.ndarray
    beta_b: float
    variant: HeadVariant

    @classmethod
    def initial(cls, d_feature: int, n_classes: int, variant: HeadVariant, rng: np.random.Generator) -> "HeadParams":
        """W ~ U(-1/sqrt(D), 1/sqrt(D)); zeroed heads so alpha=0.5, beta=softplus(0)."""
        bound = 1.0 / np.sqrt(d_feature)
        return cls(
            W=rng.uniform(-bound, bound, size=(n_classes, d_feature)),
            alpha_w=np.zeros(d_feature),
            alpha_b=0.0,
            beta_w=np.zeros(d_feature),
            beta_b=0.0,
            variant=HeadVariant(variant),
        )

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def d_feature(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "HeadParams":
        return HeadParams(
            W=self.W.copy(),
            alpha_w=self.alpha_w.copy(),
            alpha_b=float(self.alpha_b),
            beta_w=self.beta_w.copy(),
            beta_b=float(self.beta_b),
            variant=self.variant,
        )


@dataclass
class HeadForwardTrace:
    """Everything head_backward needs, cached from one forward pass."""

    alpha: float
    beta: float
    m: float
    logits: np.ndarray
    vanilla_logits: np.ndarray
    feature: np.ndarray
    feature_norm: float
    degenerate: bool
    params: HeadParams


@dataclass
class HeadGradients:
    W: np.ndarray
    alpha_w: np.ndarray
    alpha_b: float
    beta_w: np.ndarray
    beta_b: float
    f: np.ndarray


@dataclass
class BatchHeadTrace:
    """Batch counterpart of HeadForwardTrace (arrays over the batch axis)."""

    alpha: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    logits: np.ndarray
    vanilla_logits: np.ndarray
    feature_norm: np.ndarray
    degenerate: np.ndarray


def head_forward_batch(F: np.ndarray, params: HeadParams) -> BatchHeadTrace:
    """Forward pass for a feature batch F of shape (n, D)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != params.d_feature:
        raise ShapeError(f"feature batch shape {F.shape} does not match head dim {params.d_feature}")
    s = F @ params.W.T
    n = F.shape[0]
    fn = np.linalg.norm(F, axis=1)
    variant = params.variant
    if variant is HeadVariant.VANILLA:
        ones = np.ones(n)
        return BatchHeadTrace(ones, np.zeros(n), ones, s, s, fn, np.zeros(n, dtype=bool))
    alpha = sigmoid(F @ params.alpha_w + params.alpha_b) if variant.has_alpha else np.ones(n)
    beta = softplus(F @ params.beta_w + params.beta_b) if variant.has_beta else np.zeros(n)
    degenerate = fn < EPS_NORM
    m = np.where(degenerate, 1.0 / alpha, 1.0 / alpha + beta / (alpha * np.where(degenerate, 1.0, fn)))
    logits = m[:, None] * s
    return BatchHeadTrace(alpha, beta, m, logits, s, fn, degenerate)


def head_forward(f, params: HeadParams) -> HeadForwardTrace:
    """Forward pass for a single feature vector."""
    f = as_feature(f)
    t = head_forward_batch(f[None, :], params)
    return HeadForwardTrace(
        alpha=float(t.alpha[0]),
        beta=float(t.beta[0]),
        m=float(t.m[0]),
        logits=t.logits[0],
        vanilla_logits=t.vanilla_logits[0],
        feature=f,
        feature_norm=float(t.feature_norm[0]),
        degenerate=bool(t.degenerate[0]),
        params=params,
    )


def head_backward_batch(
    trace: BatchHeadTrace, F: np.ndarray, params: HeadParams, grad_logits: np.ndarray
) -> HeadGradients:
    """Analytic gradients of sum(grad_logits * logits) for a batch.

    Returns parameter gradients summed over the batch and per-sample feature
    gradients (rows zeroed for degenerate samples).
    """
    U = np.asarray(grad_logits, dtype=np.float64)
    if U.shape != trace.logits.shape:
        raise ShapeError(f"grad_logits shape {U.shape} does not match logits {trace.logits.shape}")
    variant = params.variant
    s = trace.vanilla_logits
    m, alpha, beta, fn = trace.m, trace.alpha, trace.beta, trace.feature_norm
    mU = m[:, None] * U

    grad_W = mU.T @ F
    grad_F = mU @ params.W

    d = trace.degenerate
    us = np.einsum("ij,ij->i", U, s)  # d(loss)/dm per sample
    us = np.where(d, 0.0, us)
    safe_fn = np.where(d, 1.0, fn)

    if variant is HeadVariant.VANILLA:
        return HeadGradients(
            W=grad_W,
            alpha_w=np.zeros(params.d_feature),
            alpha_b=0.0,
            beta_w=np.zeros(params.d_feature),
            beta_b=0.0,
            f=grad_F,
        )

    if variant.has_alpha:
        # dm/dalpha = -m/alpha, dalpha/dz = alpha(1-alpha)
        ga = us * (-m / alpha) * alpha * (1.0 - alpha)
        grad_alpha_w = F.T @ ga
        grad_alpha_b = float(ga.sum())
        grad_F += ga[:, None] * params.alpha_w[None, :]
    else:
        grad_alpha_w = np.zeros(params.d_feature)
        grad_alpha_b = 0.0

    if variant.has_beta:
        # dm/dbeta = 1/(alpha*||f||), dbeta/dz = sigmoid(z) = 1 - exp(-beta)
        dbeta_dz = -np.expm1(-beta)
        gb = us * dbeta_dz / (alpha * safe_fn)
        gb = np.where(d, 0.0, gb)
        grad_beta_w = F.T @ gb
        grad_beta_b = float(gb.sum())
        grad_F += gb[:, None] * params.beta_w[None, :]
        # dm/d||f|| = -beta/(alpha ||f||^2), d||f||/df = f/||f||
        gn = np.where(d, 0.0, us * (-beta / (alpha * safe_fn**2)) / safe_fn)
        grad_F += gn[:, None] * F
    else:
        grad_beta_w = np.zeros(params.d_feature)
        grad_beta_b = 0.0

    grad_F[d] = 0.0
    return HeadGradients(grad_W, grad_alpha_w, grad_alpha_b, grad_beta_w, grad_beta_b, grad_F)


def head_backward(trace: HeadForwardTrace, grad_logits) -> HeadGradients:
    """Analytic gradients for a single sample's forward trace."""
    u = np.asarray(grad_logits, dtype=np.float64)
    if u.shape != trace.logits.shape:
        raise ShapeError(f"grad_logits shape {u.shape} does not match logits {trace.logits.shape}")
    bt = BatchHeadTrace(
        alpha=np.array([trace.alpha]),
        beta=np.array([trace.beta]),
        m=np.array([trace.m]),
        logits=trace.logits[None, :],
        vanilla_logits=trace.vanilla_logits[None, :],
        feature_norm=np.array([trace.feature_norm]),
        degenerate=np.array([trace.degenerate]),
    )
    g = head_backward_batch(bt, trace.feature[None, :], trace.params, u[None, :])
    return HeadGradients(g.W, g.alpha_w, g.alpha_b, g.beta_w, g.beta_b, g.f[0])


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Stabilized cross-entropy loss and its gradient wrt the logits."""
    l = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < l.size:
        raise IndexError(f"label {label} out of range for {l.size} classes")
    shifted = l - l.max()
    e = np.exp(shifted)
    p = e / e.sum()
    loss = float(np.log(e.sum()) - shifted[label])
    grad = p.copy()
    grad[label] -= 1.0
    return loss, grad


def softmax_cross_entropy_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch and gradient wrt every logit."""
    l = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if np.any(y < 0) or np.any(y >= l.shape[1]):
        raise IndexError("label out of range")
    shifted = l - l.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    esum = e.sum(axis=1)
    p = e / esum[:, None]
    n = l.shape[0]
    loss = float(np.mean(np.log(esum) - shifted[np.arange(n), y]))
    grad = p
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n
