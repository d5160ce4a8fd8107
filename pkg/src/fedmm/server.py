"""Central coordinator: per-modality extractor aggregation, prototype
aggregation, and the synchronous round loop.

All reductions run in ascending client-id / modality order so a round's
result is independent of scheduling. Only extractors and class means are
ever aggregated; classifiers stay local.
"""

from dataclasses import dataclass, field

from .client import TrainHyper, client_update, evaluate_client
from .errors import AggregationError, ConfigError, ProtocolError
from .losses import PrototypeSet, aggregate_prototypes, effective_lambda
from .metrics import accuracy, auc
from .nn import IDENTITY, MlpParams, RELU, SIGMOID, init_params, weighted_sum_params
from .seeding import derive_seed
from . import trace as trace_mod

FEDAVG = "fedavg"
FEDAVG_WEIGHTED = "fedavg_weighted"
FEDPROX = "fedprox"
AGGREGATIONS = (FEDAVG, FEDAVG_WEIGHTED, FEDPROX)


@dataclass
class GlobalTemplate:
    """Shared architecture every client instantiates, which is what makes
    per-modality weight aggregation well defined."""

    input_dims: dict  # modality -> observed width
    extractor_hidden: list
    embed_dim: int
    activations: dict  # modality -> hidden activation name
    classifier_hidden: list

    def extractor_sizes(self, modality: int):
        return [self.input_dims[modality], *self.extractor_hidden, self.embed_dim]

    def extractor_activations(self, modality: int):
        act = self.activations.get(modality, RELU)
        # Linear embedding head; hidden layers use the modality's activation.
        return [act] * len(self.extractor_hidden) + [IDENTITY]

    def classifier_sizes(self, n_modalities: int, fusion: str):
        width = self.embed_dim * (n_modalities if fusion == "concat" else 1)
        return [width, *self.classifier_hidden, 1]

    def classifier_activations(self):
        return [RELU] * len(self.classifier_hidden) + [SIGMOID]

    def init_extractor(self, modality: int, run_seed: int) -> MlpParams:
        return init_params(
            self.extractor_sizes(modality),
            self.extractor_activations(modality),
            derive_seed(run_seed, "init", "extractor", modality),
        )

    def init_classifier(self, n_modalities: int, fusion: str, run_seed: int) -> MlpParams:
        return init_params(
            self.classifier_sizes(n_modalities, fusion),
            self.classifier_activations(),
            derive_seed(run_seed, "init", "classifier"),
        )


@dataclass
class ClientState:
    """A participating hospital: its splits and current local model."""

    client_id: int
    train: object  # HospitalDataset
    test: object
    model: object  # LocalModel


@dataclass
class RoundRow:
    """One (round, client) evaluation record."""

    round: int
    hospital_id: int
    lambda_used: float
    loss_bce: float
    loss_l2: float
    test_accuracy: float
    test_auc: float


@dataclass
class ServerState:
    round: int
    global_extractors: dict  # modality -> MlpParams
    prototypes: PrototypeSet | None
    aggregation: str
    history: list = field(default_factory=list)


def aggregate_extractors(method: str, reports, modality: int) -> MlpParams:
    """Combine the reporting clients' extractor weights for one modality.

    fedavg and fedprox average unweighted over the reporters (the
    proximal term lives client-side); fedavg_weighted weights by train
    sample count. Reports must arrive in ascending client-id order.
    """
    owners = [r for r in reports if modality in r.extractors]
    if not owners:
        raise AggregationError(f"no client reported modality {modality}")
    if method in (FEDAVG, FEDPROX):
        weights = [1.0 / len(owners)] * len(owners)
    elif method == FEDAVG_WEIGHTED:
        total = sum(r.train_sample_count for r in owners)
        weights = [r.train_sample_count / total for r in owners]
    else:
        raise ConfigError(f"unknown aggregation '{method}'")
    return weighted_sum_params(
        [(r.extractors[modality], w) for r, w in zip(owners, weights)]
    )


def broadcast(state: ServerState, clients, trace=None, overwrite_weights: bool = True):
    """Step 1 of a round: overwrite every owner's extractors with the
    global ones (skipped under warm_local) and hand out the current
    prototypes."""
    if state.prototypes is not None and state.prototypes.round_produced != state.round:
        raise ProtocolError(
            f"stale prototypes: produced at round "
            f"{state.prototypes.round_produced}, broadcasting at {state.round + 1}"
        )
    for c in clients:
        for k in c.model.mask:
            if overwrite_weights:
                c.model.extractors[k] = state.global_extractors[k].copy()
                if trace is not None:
                    trace.record_broadcast(
                        state.round + 1, c.client_id, trace_mod.EXTRACTOR_WEIGHTS, k,
                        state.global_extractors[k],
                    )
            if state.prototypes is not None and trace is not None:
                trace.record_broadcast(
                    state.round + 1, c.client_id, trace_mod.PROTOTYPES, k,
                    state.prototypes,
                )


def run_round(
    state: ServerState,
    clients,
    hyper: TrainHyper,
    rng_base_seed: int,
    trace=None,
    warm_local: bool = False,
) -> ServerState:
    """Execute one synchronous round: broadcast, local updates, upload,
    per-modality aggregation. Client models are updated in place; a new
    ServerState is returned."""
    t = state.round + 1
    broadcast(state, clients, trace, overwrite_weights=not warm_local)

    reports = []
    for c in sorted(clients, key=lambda c: c.client_id):
        seed = derive_seed(rng_base_seed, "shuffle", t, c.client_id)
        model, report = client_update(
            c.model, c.train, state.prototypes, t, hyper,
            global_extractors=state.global_extractors, rng_seed=seed,
        )
        c.model = model
        for k in report.extractors:
            if not report.extractors[k].same_shape(state.global_extractors[k]):
                raise ProtocolError(
                    f"client {c.client_id} modality {k}: report shape diverges "
                    "from the global template"
                )
            if trace is not None:
                trace.record_upload(
                    t, c.client_id, trace_mod.EXTRACTOR_WEIGHTS, k, report.extractors[k]
                )
                trace.record_upload(
                    t, c.client_id, trace_mod.CLASS_MEANS, k, report.class_means[k]
                )
        reports.append(report)

    new_extractors = {}
    proto_entries = {}
    missing_flags = []
    for k in sorted(state.global_extractors):
        new_extractors[k] = aggregate_extractors(state.aggregation, reports, k)
        owner_means = [r.class_means[k] for r in reports if k in r.class_means]
        protos_k, missing = aggregate_prototypes(owner_means)
        for c_label, emb in protos_k.items():
            proto_entries[(k, c_label)] = emb
        missing_flags.extend((k, c_label) for c_label in missing)

    history_entry = {
        "round": t,
        "loss_stats": {r.client_id: r.loss_stats for r in reports},
        "missing_prototypes": missing_flags,
    }
    return ServerState(
        round=t,
        global_extractors=new_extractors,
        prototypes=PrototypeSet(proto_entries, round_produced=t),
        aggregation=state.aggregation,
        history=state.history + [history_entry],
    )


def init_server(template: GlobalTemplate, modalities, aggregation: str, run_seed: int) -> ServerState:
    return ServerState(
        round=0,
        global_extractors={k: template.init_extractor(k, run_seed) for k in sorted(modalities)},
        prototypes=None,
        aggregation=aggregation,
    )


def evaluate_round(clients, hyper: TrainHyper, round_: int, lam: float):
    """Per-client test metrics after a round, in ascending client order."""
    rows = []
    for c in sorted(clients, key=lambda c: c.client_id):
        scores, labels = evaluate_client(c.model, c.test, hyper.fusion)
        rows.append(
            RoundRow(
                round=round_,
                hospital_id=c.client_id,
                lambda_used=lam,
                loss_bce=0.0,
                loss_l2=0.0,
                test_accuracy=accuracy(scores, labels),
                test_auc=auc(scores, labels),
            )
        )
    return rows


def run_training(
    clients,
    template: GlobalTemplate,
    hyper: TrainHyper,
    aggregation: str,
    rounds: int,
    rng_base_seed: int,
    trace=None,
    warm_local: bool = False,
):
    """Full federated run: `rounds` sequential rounds with evaluation on
    every client's test split after each one. Returns (final ServerState,
    round log rows)."""
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    modalities = sorted(template.input_dims)
    for k in modalities:
        if not any(k in c.model.mask for c in clients):
            raise AggregationError(
                f"modality {k} is declared but owned by no client"
            )
    state = init_server(template, modalities, aggregation, rng_base_seed)
    log = []
    for _ in range(rounds):
        state = run_round(state, clients, hyper, rng_base_seed, trace=trace, warm_local=warm_local)
        lam = effective_lambda(state.round, hyper.schedule)
        rows = evaluate_round(clients, hyper, state.round, lam)
        stats = state.history[-1]["loss_stats"]
        for row in rows:
            row.loss_bce = stats[row.hospital_id].bce_term
            row.loss_l2 = stats[row.hospital_id].l2_term
        log.extend(rows)
    return state, log
