"""The dynamic two-term training objective and prototype machinery.

Per round t the loss on one sample is

    lambda(t) * (beta/D) * ||h - p||_2  +  (1 - lambda(t)) * BCE(pred, y)

summed over the client's modalities, where p is the global prototype of
the sample's own class for that modality and lambda(t) is a logistic
schedule centered at round t0. Before the first aggregation no prototypes
exist and the alignment term is defined as exactly zero.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AggregationError, ConfigError, ProtocolError, ShapeError
from .nn import stable_sigmoid

BCE_EPS = 1e-12  # prediction clamp; keeps log() finite under saturation
L2_SINGULARITY_EPS = 1e-8  # below this distance the L2 gradient is zero


@dataclass(frozen=True)
class LossSchedule:
    """Schedule and scaling constants of the two-term objective.

    lambda_override pins the mixing weight to a constant; the baselines
    run with an override of 0.0 (pure BCE).
    """

    alpha: float
    t0: int
    beta: float
    embed_dim: int
    lambda_override: float | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"schedule alpha must be > 0, got {self.alpha}")
        if self.beta <= 0:
            raise ConfigError(f"schedule beta must be > 0, got {self.beta}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.lambda_override is not None and not 0.0 <= self.lambda_override <= 1.0:
            raise ConfigError("lambda_override must lie in [0, 1]")


def lambda_weight(t: int, schedule: LossSchedule) -> float:
    """Mixing weight 1 / (1 + exp(-alpha*(t - t0))); 0.5 exactly at t0."""
    return float(stable_sigmoid(schedule.alpha * (t - schedule.t0)))


def effective_lambda(t: int, schedule: LossSchedule) -> float:
    if schedule.lambda_override is not None:
        return schedule.lambda_override
    return lambda_weight(t, schedule)


@dataclass
class LossBreakdown:
    """One (possibly averaged) loss evaluation: raw terms plus the weight
    that combined them. total == lambda_used*l2_term + (1-lambda_used)*bce_term."""

    l2_term: float
    bce_term: float
    lambda_used: float
    total: float


def bce_loss(pred: float, label: int):
    """Binary cross-entropy and its derivative wrt the prediction.

    pred is clamped to [BCE_EPS, 1 - BCE_EPS] before the logs.
    """
    p = min(max(float(pred), BCE_EPS), 1.0 - BCE_EPS)
    y = float(label)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    dloss = -y / p + (1.0 - y) / (1.0 - p)
    return float(loss), float(dloss)


def bce_loss_batch(preds: np.ndarray, labels: np.ndarray):
    """Vectorized bce_loss: per-sample losses and dloss/dpred, both [n]."""
    p = np.clip(np.asarray(preds, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    dloss = -y / p + (1.0 - y) / (1.0 - p)
    return loss, dloss


def l2_prototype_term(h: np.ndarray, proto: np.ndarray, schedule: LossSchedule):
    """(beta/D) * ||h - proto||_2 with its gradient wrt h.

    The norm is unsquared; at the cone point (distance below
    L2_SINGULARITY_EPS) the subgradient is taken as the zero vector.
    """
    h = np.asarray(h, dtype=np.float64)
    proto = np.asarray(proto, dtype=np.float64)
    if h.shape != proto.shape or h.ndim != 1:
        raise ShapeError(f"embedding shape {h.shape} != prototype shape {proto.shape}")
    scale = schedule.beta / schedule.embed_dim
    diff = h - proto
    dist = float(np.sqrt(np.sum(diff * diff)))
    if dist < L2_SINGULARITY_EPS:
        return scale * dist, np.zeros_like(h)
    return scale * dist, (scale / dist) * diff


def l2_term_batch(H: np.ndarray, P: np.ndarray, schedule: LossSchedule):
    """Row-wise l2_prototype_term: losses [n] and gradients [n, D]."""
    diff = H - P
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    scale = schedule.beta / schedule.embed_dim
    safe = np.where(dist < L2_SINGULARITY_EPS, 1.0, dist)
    grad = (scale / safe)[:, None] * diff
    grad[dist < L2_SINGULARITY_EPS] = 0.0
    return scale * dist, grad


@dataclass
class PrototypeSet:
    """Global per-(modality, class) mean embeddings, the server's
    pseudo-labels. round_produced records the round whose aggregation
    built them."""

    entries: dict = field(default_factory=dict)  # (modality, class) -> [D]
    round_produced: int = 0

    def has(self, modality: int, label: int) -> bool:
        return (modality, label) in self.entries

    def get(self, modality: int, label: int) -> np.ndarray:
        try:
            return self.entries[(modality, label)]
        except KeyError:
            raise ProtocolError(
                f"no prototype for modality {modality}, class {label}"
            ) from None

    def class_matrix(self, modality: int, labels: np.ndarray) -> np.ndarray:
        """Stack the per-sample true-class prototypes into [n, D]."""
        p0 = self.get(modality, 0)
        p1 = self.get(modality, 1)
        return np.where(np.asarray(labels)[:, None] == 1, p1, p0)


def dynamic_loss(t, embeddings, protos, pred, label, schedule):
    """Evaluate the full objective on one sample.

    embeddings maps modality -> [D] vector; protos is a PrototypeSet or
    None (round 1). Each modality's L2 term uses the prototype of the
    sample's true label. Returns (LossBreakdown, dloss/dpred,
    {modality: dloss/dh}).

    When the effective mixing weight is exactly zero the alignment term
    (and its gradients) is skipped outright, which also makes the logged
    l2 term zero; this keeps the zero-weight trajectory identical to a
    BCE-only run.
    """
    lam = effective_lambda(t, schedule)
    bce, dbce = bce_loss(pred, label)
    l2_sum = 0.0
    dh = {}
    if protos is not None and lam != 0.0:
        for k in sorted(embeddings):
            l2, g = l2_prototype_term(embeddings[k], protos.get(k, label), schedule)
            l2_sum += l2
            dh[k] = lam * g
    else:
        for k in sorted(embeddings):
            dh[k] = np.zeros_like(np.asarray(embeddings[k], dtype=np.float64))
    total = lam * l2_sum + (1.0 - lam) * bce
    return LossBreakdown(l2_sum, bce, lam, total), (1.0 - lam) * dbce, dh


def class_mean_embeddings(embeddings: np.ndarray, labels: np.ndarray) -> dict:
    """Per-class arithmetic mean of embedding rows.

    Returns {class: (mean [D], count)}; classes with no samples are
    omitted.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or embeddings.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"{embeddings.shape[0] if embeddings.ndim == 2 else '?'} embeddings "
            f"vs {labels.shape[0]} labels"
        )
    out = {}
    for c in (0, 1):
        mask = labels == c
        n = int(mask.sum())
        if n:
            out[c] = (embeddings[mask].mean(axis=0), n)
    return out


def aggregate_prototypes(class_means, weighted: bool = False):
    """Cross-client mean of per-class mean embeddings for one modality.

    class_means is an iterable of per-client {class: (mean, count)} maps
    in ascending client-id order (the canonical reduction order). Each
    class averages only the clients that reported it; by default the mean
    is unweighted across clients, with `weighted` switching to
    sample-count weights. Returns ({class: prototype}, missing_classes).
    """
    class_means = list(class_means)
    if not class_means:
        raise AggregationError("no class-mean reports to aggregate")
    protos, missing = {}, []
    for c in (0, 1):
        entries = [cm[c] for cm in class_means if c in cm]
        if not entries:
            missing.append(c)
            continue
        if weighted:
            total = sum(n for _, n in entries)
            acc = np.zeros_like(entries[0][0])
            for mean, n in entries:
                acc += (n / total) * mean
            protos[c] = acc
        else:
            acc = np.zeros_like(entries[0][0])
            for mean, _ in entries:
                acc += mean
            protos[c] = acc / len(entries)
    return protos, missing
