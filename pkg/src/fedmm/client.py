"""One hospital: local model, joint extractor+classifier SGD under the
dynamic loss, per-round report with class-mean embeddings.

Training is batched internally, but the math is the per-sample chain:
each minibatch uses the mean gradient over its samples, so the learning
rate's meaning is independent of batch size. A report never carries
per-sample data; only weights, per-class mean embeddings, and scalar
counts leave the client.
"""

from dataclasses import dataclass

import numpy as np

from .data import HospitalDataset
from .errors import ConfigError, DataError, ShapeError
from .losses import (
    LossBreakdown,
    LossSchedule,
    bce_loss_batch,
    class_mean_embeddings,
    effective_lambda,
    l2_term_batch,
)
from .nn import MlpParams, backward, forward, sgd_step

CONCAT = "concat"
MEAN = "mean"
FUSIONS = (CONCAT, MEAN)


@dataclass
class LocalModel:
    """Per-modality extractors plus the local fusion classifier."""

    extractors: dict  # modality -> MlpParams
    classifier: MlpParams

    @property
    def mask(self) -> tuple:
        return tuple(sorted(self.extractors))

    def copy(self) -> "LocalModel":
        return LocalModel(
            {k: p.copy() for k, p in self.extractors.items()}, self.classifier.copy()
        )


@dataclass
class TrainHyper:
    local_epochs: int
    batch_size: int
    lr: float
    schedule: LossSchedule
    fusion: str = CONCAT
    prox_mu: float = 0.0
    freeze_classifier_rounds: int = 0

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.prox_mu < 0:
            raise ConfigError("prox_mu must be >= 0")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")


@dataclass
class ClientReport:
    """One client's per-round upload: extractor weights, per-class mean
    embeddings with counts, and scalar stats. Size is independent of the
    client's sample count."""

    client_id: int
    round: int
    extractors: dict  # modality -> MlpParams
    class_means: dict  # modality -> {class: (mean [D], count)}
    train_sample_count: int
    loss_stats: LossBreakdown


def fuse_embeddings(H: dict, fusion: str) -> np.ndarray:
    """Fuse per-modality embedding batches: concatenation in ascending
    modality order, or the element-wise mean."""
    mods = sorted(H)
    if fusion == CONCAT:
        return np.concatenate([H[k] for k in mods], axis=1)
    if fusion == MEAN:
        acc = np.zeros_like(H[mods[0]])
        for k in mods:
            acc += H[k]
        return acc / len(mods)
    raise ConfigError(f"unknown fusion '{fusion}'")


def split_fused_grad(grad: np.ndarray, mods, embed_dim: int, fusion: str) -> dict:
    if fusion == CONCAT:
        return {k: grad[:, i * embed_dim : (i + 1) * embed_dim] for i, k in enumerate(mods)}
    return {k: grad / len(mods) for k in mods}


def predict_batch(model: LocalModel, features: dict, fusion: str):
    """Forward the full chain on feature batches {modality: [n, d_k]}.

    Returns (preds [n], embeddings {modality: [n, D]}, traces).
    """
    mods = sorted(model.extractors)
    if sorted(features) != mods:
        raise ShapeError(
            f"sample modalities {sorted(features)} != model modalities {mods}"
        )
    H, traces = {}, {}
    for k in mods:
        H[k], traces[k] = forward(model.extractors[k], features[k])
    fused = fuse_embeddings(H, fusion)
    out, clf_trace = forward(model.classifier, fused)
    if out.shape[1] != 1:
        raise ShapeError(f"classifier must output one unit, got {out.shape[1]}")
    return out[:, 0], H, (traces, clf_trace)


def local_predict(model: LocalModel, sample: dict, fusion: str):
    """Single-sample prediction: {modality: vector} -> (pred, embeddings,
    traces)."""
    feats = {k: np.asarray(v, dtype=np.float64)[None, :] for k, v in sample.items()}
    preds, H, traces = predict_batch(model, feats, fusion)
    return float(preds[0]), {k: h[0] for k, h in H.items()}, traces


def client_update(
    model: LocalModel,
    data: HospitalDataset,
    protos,
    round_: int,
    hyper: TrainHyper,
    global_extractors=None,
    rng_seed: int = 0,
):
    """Run one round of local training and build the upload report.

    Minibatches come from a seeded shuffle per epoch (last partial batch
    kept). Per batch, the dynamic loss is backpropagated through the
    classifier and every extractor using the mean gradient over the
    batch; with prox_mu > 0 and global extractor weights present, the
    proximal pull mu*(w - w_global) is added to extractor gradients only.
    Class-mean embeddings are computed afterwards in one pass over the
    full train split with the updated extractors.
    """
    if data.n == 0:
        raise DataError(f"client {data.hospital_id}: empty train split")
    model = model.copy()
    mods = model.mask
    if tuple(sorted(data.features)) != mods:
        raise ShapeError(
            f"client {data.hospital_id}: data modalities {sorted(data.features)} "
            f"!= model modalities {list(mods)}"
        )
    sched = hyper.schedule
    lam = effective_lambda(round_, sched)
    rng = np.random.default_rng(rng_seed)
    use_l2 = protos is not None and lam != 0.0
    proto_mats = None
    if use_l2:
        proto_mats = {k: protos.class_matrix(k, data.labels) for k in mods}
    train_clf = round_ > hyper.freeze_classifier_rounds

    sum_bce = 0.0
    sum_l2 = 0.0
    n_seen = 0
    for _ in range(hyper.local_epochs):
        order = rng.permutation(data.n)
        for start in range(0, data.n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            b = len(idx)
            feats = {k: data.features[k][idx] for k in mods}
            labels = data.labels[idx]
            preds, H, (ex_traces, clf_trace) = predict_batch(model, feats, hyper.fusion)

            bce_vec, dbce = bce_loss_batch(preds, labels)
            sum_bce += float(bce_vec.sum())
            if use_l2:
                l2_grads = {}
                l2_total = np.zeros(b)
                for k in mods:
                    l2_vec, g = l2_term_batch(H[k], proto_mats[k][idx], sched)
                    l2_total += l2_vec
                    l2_grads[k] = g
                sum_l2 += float(l2_total.sum())
            n_seen += b

            # Mean gradient over the batch, weighted by the schedule.
            dpred = ((1.0 - lam) / b) * dbce
            clf_grads, dfused = backward(model.classifier, clf_trace, dpred[:, None])
            dH = split_fused_grad(dfused, mods, sched.embed_dim, hyper.fusion)
            for k in mods:
                gk = dH[k]
                if use_l2:
                    gk = gk + (lam / b) * l2_grads[k]
                ex_grads, _ = backward(model.extractors[k], ex_traces[k], gk)
                if hyper.prox_mu > 0.0 and global_extractors is not None:
                    gref = global_extractors[k]
                    for layer, lg, ref in zip(
                        model.extractors[k].layers, ex_grads.layers, gref.layers
                    ):
                        lg.d_weights += hyper.prox_mu * (layer.weights - ref.weights)
                        lg.d_bias += hyper.prox_mu * (layer.bias - ref.bias)
                model.extractors[k] = sgd_step(model.extractors[k], ex_grads, hyper.lr)
            if train_clf:
                model.classifier = sgd_step(model.classifier, clf_grads, hyper.lr)

    mean_bce = sum_bce / n_seen
    mean_l2 = sum_l2 / n_seen
    stats = LossBreakdown(
        mean_l2, mean_bce, lam, lam * mean_l2 + (1.0 - lam) * mean_bce
    )

    class_means = {}
    for k in mods:
        emb, _ = forward(model.extractors[k], data.features[k])
        class_means[k] = class_mean_embeddings(emb, data.labels)
    report = ClientReport(
        client_id=data.hospital_id,
        round=round_,
        extractors={k: model.extractors[k].copy() for k in mods},
        class_means=class_means,
        train_sample_count=data.n,
        loss_stats=stats,
    )
    return model, report


def evaluate_client(model: LocalModel, data: HospitalDataset, fusion: str):
    """Score every test sample in sample-id order."""
    if data.n == 0:
        raise DataError(f"client {data.hospital_id}: empty test split")
    preds, _, _ = predict_batch(model, {k: data.features[k] for k in model.mask}, fusion)
    return [float(p) for p in preds], [int(y) for y in data.labels]
