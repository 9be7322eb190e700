"""Distribution-shift score functions from the geometric logit decomposition.

A softmax-linear classifier produces logits l_i = f . w_i, which factor as
``||f|| * ||w_i|| * cos(phi_i)``.  The gap between the winning logit and the
class-average logit,

    u = max_j l_j - mean_i l_i,

sandwiches the KL divergence from the uniform distribution to the predicted
distribution (u - ln M <= KL(U||P) <= u) and splits multiplicatively into a
covariate part g = ||f||_2 and a concept part
h = max_j ||w_j|| cos(phi_j) - mean_i ||w_i|| cos(phi_i).

All scores are oriented so that larger means more in-distribution.  MSP and
energy (log-sum-exp) baselines are included; within a :class:`ScoreSet` they
are computed from the plain inner-product logits ``W @ f`` so that every
score is a pure function of the feature and the class weights, unaffected by
any downstream recalibration of the head.

Everything here is pure and operates on float64; batch variants are provided
for the benchmark loops and agree with the per-sample path to ~1e-15.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

# Below this feature or weight norm a direction is undefined: cosines are 0
# by convention and logits fall back to the raw inner products.
EPS_NORM = 1e-12

SCORE_NAMES = ("g", "h", "u", "msp", "energy")


def as_feature(values) -> np.ndarray:
    """Validate and convert a feature vector: 1-D, finite, nonnegative float64."""
    f = np.asarray(values, dtype=np.float64)
    if f.ndim != 1 or f.size < 1:
        raise ShapeError(f"feature must be a nonempty 1-D vector, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise DomainError("feature contains non-finite entries")
    if np.any(f < 0):
        raise DomainError("feature contains negative entries (features are post-rectification)")
    return f


def _as_weights(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 2:
        raise ShapeError(f"weight matrix must be 2-D with at least 2 rows, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise DomainError("weight matrix contains non-finite entries")
    return W


@dataclass(frozen=True)
class GeometryView:
    """Per-sample decomposition of the logits into norms and angles."""

    feature_norm: float
    weight_norms: np.ndarray
    cosines: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        if np.any(np.abs(self.cosines) > 1.0 + 1e-12):
            raise DomainError("cosines exceed [-1, 1]")
        live = (self.feature_norm >= EPS_NORM) & (self.weight_norms >= EPS_NORM)
        recon = self.feature_norm * self.weight_norms * self.cosines
        if not np.allclose(recon[live], self.logits[live], rtol=1e-9, atol=1e-9):
            raise DomainError("logits inconsistent with norm/angle decomposition")


@dataclass(frozen=True)
class ScoreSet:
    """All five shift scores for one sample. Larger = more in-distribution."""

    g: float
    h: float
    u: float
    msp: float
    energy: float


def geometry_view(f, W) -> GeometryView:
    """Decompose one sample's logits into feature norm, weight norms, cosines.

    Logits are always the exact inner products ``W @ f``; cosines are set to
    0 whenever the feature or a weight row has norm below ``EPS_NORM``.
    """
    f = as_feature(f)
    W = _as_weights(W)
    if W.shape[1] != f.shape[0]:
        raise ShapeError(
            f"weight matrix has {W.shape[1]} columns but feature has length {f.shape[0]}"
        )
    logits = W @ f
    feature_norm = float(np.linalg.norm(f))
    weight_norms = np.linalg.norm(W, axis=1)
    live = (feature_norm >= EPS_NORM) & (weight_norms >= EPS_NORM)
    cosines = np.zeros_like(weight_norms)
    np.divide(logits, feature_norm * weight_norms, out=cosines, where=live)
    return GeometryView(
        feature_norm=feature_norm,
        weight_norms=weight_norms,
        cosines=cosines,
        logits=logits,
    )


def covariate_score(f) -> float:
    """Covariate shift score g: the L2 norm of the feature vector."""
    return float(np.linalg.norm(as_feature(f)))


def concept_score(view: GeometryView) -> float:
    """Concept shift score h: winning weighted cosine minus the class average.

    Nonnegative by construction (max >= mean); float rounding is clamped.
    """
    t = view.weight_norms * view.cosines
    return max(0.0, float(t.max() - t.sum() / t.size))


def combined_score(view: GeometryView) -> float:
    """Combined score u = max logit - mean logit; factors as g * h."""
    l = view.logits
    return max(0.0, float(l.max() - l.sum() / l.size))


def msp_score(logits) -> float:
    """Maximum softmax probability, computed with max-subtraction."""
    l = np.asarray(logits, dtype=np.float64)
    e = np.exp(l - l.max())
    return float(e.max() / e.sum())


def energy_score(logits) -> float:
    """Log-sum-exp of the logits (the negative free energy), max-stabilized."""
    l = np.asarray(logits, dtype=np.float64)
    m = l.max()
    return float(m + np.log(np.exp(l - m).sum()))


def kl_from_uniform(probs) -> float:
    """KL(U || P) = -sum_i (1/M) ln(M * P_i) for a discrete distribution P."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p <= 0):
        raise DomainError("probabilities must be strictly positive")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"probabilities sum to {p.sum():.12f}, not 1")
    m = p.size
    return max(0.0, float(-np.mean(np.log(m * p))))


def score_set(f, W) -> ScoreSet:
    """All five scores for one sample from its feature and the class weights."""
    view = geometry_view(f, W)
    return ScoreSet(
        g=view.feature_norm,
        h=concept_score(view),
        u=combined_score(view),
        msp=msp_score(view.logits),
        energy=energy_score(view.logits),
    )


def score_batch(F, W) -> dict[str, np.ndarray]:
    """Vectorized scores for a feature batch F (n, D) against weights W (M, D).

    Returns arrays keyed by SCORE_NAMES. Matches the per-sample functions to
    within float rounding.
    """
    F = np.asarray(F, dtype=np.float64)
    W = _as_weights(W)
    if F.ndim != 2 or F.shape[1] != W.shape[1]:
        raise ShapeError(f"feature batch shape {F.shape} does not match weights {W.shape}")
    logits = F @ W.T
    fn = np.linalg.norm(F, axis=1)
    u = np.maximum(0.0, logits.max(axis=1) - logits.mean(axis=1))
    h = np.divide(u, fn, out=np.zeros_like(u), where=fn >= EPS_NORM)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    esum = e.sum(axis=1)
    msp = e.max(axis=1) / esum
    energy = logits.max(axis=1) + np.log(esum)
    return {"g": fn, "h": h, "u": u, "msp": msp, "energy": energy}
