"""Shifted-evaluation suites and detection metrics.

Synthetic tasks are Gaussian blobs around random unit prototypes.  Covariate
shift is applied by corruptions with a fixed five-step magnitude ladder;
concept shift comes either from held-out synthetic classes whose prototypes
sit at controlled cosine similarity to the training prototypes, or from real
class-name groups built with word-embedding similarity.  Detection quality is
measured by AUROC (threshold sweep, equal to the Mann-Whitney statistic) and
TNR@TPR95.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, MissingTokenError, StateError
from .scores import SCORE_NAMES, score_batch
from .train import Model, extract_features

COVARIATE_KINDS = ("gaussian_noise", "uniform_noise", "feature_dropout", "smoothing")
CONCEPT_KIND = "concept_split"

# Severity s applies magnitude SEVERITY_LADDER[s-1] * KIND_SCALES[kind].
SEVERITY_LADDER = (0.1, 0.2, 0.4, 0.8, 1.6)
KIND_SCALES = {
    "gaussian_noise": 1.0,  # noise std
    "uniform_noise": 1.0,  # half-width of the uniform perturbation
    "feature_dropout": 0.3125,  # drop probability; 0.5 at severity 5
    "smoothing": 0.625,  # blend weight toward the width-3 moving average; 1.0 at severity 5
}
_KIND_CODE = {k: i + 1 for i, k in enumerate(COVARIATE_KINDS)}


@dataclass(frozen=True)
class ShiftSpec:
    """One shifted evaluation: corruption kind + severity, or concept group index.

    Covariate severities run 1..5; severity 0 is the no-shift control row
    (clean ID halves against each other).  For concept_split the severity
    field is the group index.
    """

    kind: str
    severity: int

    def __post_init__(self):
        if self.kind in COVARIATE_KINDS:
            if not 0 <= self.severity <= len(SEVERITY_LADDER):
                raise ConfigError(f"{self.kind} severity must be 0..5, got {self.severity}")
        elif self.kind == CONCEPT_KIND:
            if self.severity < 0:
                raise ConfigError(f"concept group index must be >= 0, got {self.severity}")
        elif self.kind == "none":
            if self.severity != 0:
                raise ConfigError("the 'none' control spec must have severity 0")
        else:
            raise ConfigError(f"unknown shift kind {self.kind!r}")


@dataclass
class SyntheticTask:
    """Gaussian blobs around unit prototypes, split into train/val/test."""

    k: int
    d_in: int
    noise: float
    seed: int
    prototypes: np.ndarray
    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class ConceptGroup:
    """Held-out classes at a controlled cosine similarity to the ID prototypes."""

    index: int
    similarity: float
    X: np.ndarray


@dataclass(frozen=True)
class SplitGroup:
    """One embedding-similarity group of held-out class names."""

    index: int
    names: tuple[str, ...]
    similarities: np.ndarray
    mean: float
    std: float


@dataclass(frozen=True)
class ReportRow:
    score: str
    shift_kind: str
    severity: int
    auroc: float
    tnr_at_tpr95: float
    n_id: int
    n_ood: int
    seed: int


@dataclass
class DetectionReport:
    rows: list[ReportRow] = field(default_factory=list)
    config: dict | None = None


def make_task(
    k: int,
    d_in: int,
    n_per_class: int,
    noise: float,
    seed: int,
    val_frac: float = 0.2,
    test_frac: float = 0.2,
) -> SyntheticTask:
    """Sample a k-class task; class c is prototype_c + N(0, noise^2 I)."""
    if k < 2:
        raise ConfigError(f"need at least 2 classes, got {k}")
    if d_in < 2:
        raise ConfigError(f"need d_in >= 2, got {d_in}")
    if n_per_class < 5:
        raise ConfigError(f"need at least 5 samples per class, got {n_per_class}")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    prototypes = rng.standard_normal((k, d_in))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    n_val = int(round(n_per_class * val_frac))
    n_test = int(round(n_per_class * test_frac))
    n_train = n_per_class - n_val - n_test
    if n_train < 1 or n_val < 1 or n_test < 1:
        raise ConfigError("split fractions leave an empty split")

    parts = {"train": [], "val": [], "test": []}
    for c in range(k):
        X = prototypes[c] + noise * rng.standard_normal((n_per_class, d_in))
        parts["train"].append((X[:n_train], np.full(n_train, c)))
        parts["val"].append((X[n_train : n_train + n_val], np.full(n_val, c)))
        parts["test"].append((X[n_train + n_val :], np.full(n_test, c)))

    def stack(ps):
        return (
            np.concatenate([x for x, _ in ps]),
            np.concatenate([y for _, y in ps]).astype(np.int64),
        )

    return SyntheticTask(
        k=k,
        d_in=d_in,
        noise=float(noise),
        seed=int(seed),
        prototypes=prototypes,
        train=stack(parts["train"]),
        val=stack(parts["val"]),
        test=stack(parts["test"]),
    )


def _max_cos(v: np.ndarray, prototypes: np.ndarray) -> float:
    return float((prototypes @ v).max() / np.linalg.norm(v))


def _mixture_direction(base: np.ndarray, anchor: np.ndarray, prototypes: np.ndarray, target: float) -> np.ndarray:
    """Unit direction between base and anchor whose max cosine to the
    prototypes is as close to target as the mixture family allows."""

    def direction(t: float) -> np.ndarray:
        v = (1.0 - t) * base + t * anchor
        return v / np.linalg.norm(v)

    # max-cos falls monotonically from 1 at t=0 toward the anchor's own value.
    if target <= _max_cos(anchor, prototypes):
        return direction(1.0)
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _max_cos(direction(mid), prototypes) > target:
            lo = mid
        else:
            hi = mid
    return direction(0.5 * (lo + hi))


def make_concept_groups(
    task: SyntheticTask,
    n_groups: int = 5,
    classes_per_group: int = 2,
    n_per_class: int = 200,
    similarities=None,
) -> list[ConceptGroup]:
    """Held-out classes on a similarity ladder; group 0 is the least similar.

    Held-out prototypes are unit-normalized mixtures of training prototypes:
    each interpolates between one base prototype and the class-centroid
    direction until its largest cosine to any training prototype hits the
    group's target.  The centroid is the ambiguity maximum, so targets below
    its own max-cosine clamp there (the achieved value is recorded in the
    group).  Mixtures stay inside the span of the training classes, so the
    shift is class ambiguity rather than input novelty; samples use the
    task's own noise scale.
    """
    if n_groups < 1:
        raise ConfigError(f"need at least one group, got {n_groups}")
    if similarities is None:
        similarities = np.linspace(0.65, 0.92, n_groups)
    similarities = np.asarray(similarities, dtype=np.float64)
    if similarities.shape != (n_groups,):
        raise ConfigError(f"need {n_groups} similarities, got {similarities.shape}")
    if np.any(similarities < 0) or np.any(similarities >= 1):
        raise ConfigError("similarities must lie in [0, 1)")
    if np.any(np.diff(similarities) <= 0):
        raise ConfigError("similarities must be strictly increasing (group 0 least similar)")
    rng = np.random.default_rng(np.random.SeedSequence([task.seed, 7]))
    blend = task.prototypes.sum(axis=0)
    blend /= np.linalg.norm(blend)
    groups = []
    for gi in range(n_groups):
        target = float(similarities[gi])
        samples = []
        achieved = []
        for _ in range(classes_per_group):
            base = task.prototypes[rng.integers(task.k)]
            proto = _mixture_direction(base, blend, task.prototypes, target)
            achieved.append(_max_cos(proto, task.prototypes))
            samples.append(proto + task.noise * rng.standard_normal((n_per_class, task.d_in)))
        groups.append(
            ConceptGroup(index=gi, similarity=float(np.mean(achieved)), X=np.concatenate(samples))
        )
    return groups


def corrupt(data, spec: ShiftSpec, seed: int):
    """Apply a covariate corruption; labels pass through unchanged.

    Deterministic per (seed, spec): the noise stream is derived from the
    dataset seed, the corruption kind and the severity.
    """
    if spec.kind == CONCEPT_KIND:
        raise DomainError("concept_split data comes from held-out groups, not corrupt()")
    if not 1 <= spec.severity <= len(SEVERITY_LADDER):
        raise DomainError(f"corrupt() needs severity 1..5, got {spec.severity}")
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    mag = SEVERITY_LADDER[spec.severity - 1] * KIND_SCALES[spec.kind]
    rng = np.random.default_rng(np.random.SeedSequence([seed, _KIND_CODE[spec.kind], spec.severity]))
    if spec.kind == "gaussian_noise":
        Xc = X + mag * rng.standard_normal(X.shape)
    elif spec.kind == "uniform_noise":
        Xc = X + rng.uniform(-mag, mag, X.shape)
    elif spec.kind == "feature_dropout":
        Xc = np.where(rng.random(X.shape) < mag, 0.0, X)
    else:  # smoothing: blend toward the width-3 moving average, reflect-padded
        padded = np.pad(X, ((0, 0), (1, 1)), mode="reflect")
        box = (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0
        Xc = (1.0 - mag) * X + mag * box
    return Xc, y


def _resolve_token(name: str, vocab) -> str | None:
    for token in name.lower().replace("_", " ").replace("-", " ").split():
        if token in vocab:
            return token
    return None


def concept_split(id_class_names, ood_class_names, embeddings, n_groups: int) -> list[SplitGroup]:
    """Group held-out class names by embedding similarity to the ID classes.

    Similarity of an OOD class is its largest inner product against any ID
    class.  Classes are ordered by ascending (similarity, name) and chunked;
    the last (highest-index, most similar) group absorbs any remainder.
    """
    id_names = list(id_class_names)
    ood_names = list(ood_class_names)
    if n_groups < 1:
        raise ConfigError(f"need at least one group, got {n_groups}")
    if len(ood_names) < n_groups:
        raise ConfigError(f"{len(ood_names)} classes cannot fill {n_groups} groups")
    missing = []
    id_vecs = []
    for name in id_names:
        tok = _resolve_token(name, embeddings)
        if tok is None:
            missing.append(name)
        else:
            id_vecs.append(embeddings[tok])
    ood_vecs = {}
    for name in ood_names:
        tok = _resolve_token(name, embeddings)
        if tok is None:
            missing.append(name)
        else:
            ood_vecs[name] = embeddings[tok]
    if missing:
        raise MissingTokenError(sorted(missing))
    sims = {name: max(float(vec @ v) for v in id_vecs) for name, vec in ood_vecs.items()}

    ordered = sorted(ood_names, key=lambda n: (sims[n], n))
    size = len(ordered) // n_groups
    groups = []
    for gi in range(n_groups):
        chunk = ordered[gi * size :] if gi == n_groups - 1 else ordered[gi * size : (gi + 1) * size]
        vals = np.array([sims[n] for n in chunk])
        groups.append(
            SplitGroup(
                index=gi,
                names=tuple(chunk),
                similarities=vals,
                mean=float(vals.mean()),
                std=float(vals.std()),
            )
        )
    return groups


def _validated_scores(id_scores, ood_scores) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(id_scores, dtype=np.float64).ravel()
    b = np.asarray(ood_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("both score sets must be nonempty")
    return a, b


def auroc(id_scores, ood_scores) -> float:
    """AUROC of separating ID (positive, higher score) from OOD.

    Threshold sweep over the pooled unique score values with trapezoidal
    integration; ties are grouped, which makes the result equal to the
    Mann-Whitney statistic P(s_id > s_ood) + 0.5 P(s_id = s_ood).
    """
    id_s, ood_s = _validated_scores(id_scores, ood_scores)
    scores = np.concatenate([id_s, ood_s])
    is_id = np.concatenate([np.ones(id_s.size), np.zeros(ood_s.size)])
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    is_id = is_id[order]
    # keep only the last index of every tie group
    last = np.append(scores[1:] != scores[:-1], True)
    tps = np.cumsum(is_id)[last]
    fps = np.cumsum(1.0 - is_id)[last]
    tpr = np.concatenate([[0.0], tps / id_s.size])
    fpr = np.concatenate([[0.0], fps / ood_s.size])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])) / 2.0)


def tnr_at_tpr95(id_scores, ood_scores) -> float:
    """Fraction of OOD rejected at the loosest threshold keeping >= 95% of ID.

    The threshold is the (floor(0.05 n_id) + 1)-th smallest ID score: the
    largest score value t with at least 95% of ID scores >= t (order
    statistic, no interpolation).  Returns the fraction of OOD scores
    strictly below t.
    """
    id_s, ood_s = _validated_scores(id_scores, ood_scores)
    j = int(0.05 * id_s.size) + 1
    t = np.partition(id_s, j - 1)[j - 1]
    return float(np.mean(ood_s < t))


def adjacent_drops(values) -> np.ndarray:
    """Positive decreases between consecutive values (trend-check helper)."""
    v = np.asarray(values, dtype=np.float64)
    return np.maximum(0.0, v[:-1] - v[1:])


def _ood_inputs(task: SyntheticTask, spec: ShiftSpec, concept_groups):
    if spec.kind == CONCEPT_KIND:
        if not concept_groups:
            raise ConfigError("concept_split specs require concept groups")
        if spec.severity >= len(concept_groups):
            raise ConfigError(
                f"concept group {spec.severity} out of range ({len(concept_groups)} groups)"
            )
        return concept_groups[spec.severity].X
    if spec.severity == 0:
        return None  # control row handled by the caller
    Xc, _ = corrupt(task.test, spec, task.seed)
    return Xc


def sweep(
    model: Model,
    task: SyntheticTask,
    score_names,
    specs,
    concept_groups=None,
    jobs: int = 1,
) -> DetectionReport:
    """AUROC and TNR@TPR95 for every (score, shift spec) cell.

    ID scores come from the clean test split.  Severity-0 specs compare the
    two halves of the clean test split as a no-shift control.
    """
    if not model.meta.get("trained"):
        raise StateError("model has not been trained")
    score_names = list(score_names)
    for name in score_names:
        if name not in SCORE_NAMES:
            raise ConfigError(f"unknown score {name!r}; known: {', '.join(SCORE_NAMES)}")
    specs = list(specs)

    X_test = task.test[0]
    F_id = extract_features(model, X_test)
    W = model.head.W
    id_all = score_batch(F_id, W)

    def cell(spec: ShiftSpec) -> list[ReportRow]:
        if spec.kind == "none" or (spec.kind != CONCEPT_KIND and spec.severity == 0):
            # class-balanced halves: the test split is ordered by class
            id_sc = {k: v[0::2] for k, v in id_all.items()}
            ood_sc = {k: v[1::2] for k, v in id_all.items()}
        else:
            id_sc = id_all
            X_ood = _ood_inputs(task, spec, concept_groups)
            ood_sc = score_batch(extract_features(model, X_ood), W)
        rows = []
        for name in score_names:
            a, b = id_sc[name], ood_sc[name]
            rows.append(
                ReportRow(
                    score=name,
                    shift_kind=spec.kind,
                    severity=spec.severity,
                    auroc=auroc(a, b),
                    tnr_at_tpr95=tnr_at_tpr95(a, b),
                    n_id=a.size,
                    n_ood=b.size,
                    seed=task.seed,
                )
            )
        return rows

    report = DetectionReport()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for rows in pool.map(cell, specs):
                report.rows.extend(rows)
    else:
        for spec in specs:
            report.rows.extend(cell(spec))
    return report
