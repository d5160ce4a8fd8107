"""Comparison methods: independent local training, the unified
zero-filling FedAvg baseline, and the pooled centralized-fusion
reference.

All three run pure-BCE objectives (mixing weight pinned to 0) and
consume the same rounds x local_epochs budget per client as the
federated method, so comparisons are compute-fair. Seed derivations
match the federated path, which is what makes the N=1 degeneration
identities exact.
"""

from dataclasses import replace

import numpy as np

from .client import LocalModel, TrainHyper, client_update, evaluate_client
from .data import HospitalDataset, zero_filled_view
from .errors import DataError
from .losses import LossSchedule
from .metrics import accuracy, auc
from .nn import weighted_sum_params
from .seeding import derive_seed
from .server import ClientState, GlobalTemplate, RoundRow

FEDMM = "fedmm"
LOCAL_TRAINING = "local"
MULTI_FEDAVG = "multi-fedavg"
CENTRALIZED_FUSION = "centralized"
METHODS = (FEDMM, LOCAL_TRAINING, MULTI_FEDAVG, CENTRALIZED_FUSION)

POOLED_HOSPITAL_ID = 0  # display id for the centralized pooled site


def _bce_only(hyper: TrainHyper) -> TrainHyper:
    sched = hyper.schedule
    if sched.lambda_override != 0.0:
        sched = LossSchedule(sched.alpha, sched.t0, sched.beta, sched.embed_dim, 0.0)
    return replace(hyper, schedule=sched, prox_mu=0.0)


def _training_loop(client: ClientState, rounds: int, hyper: TrainHyper, base_seed: int):
    """Shared round loop for the non-federating methods: same per-round
    seed derivation and evaluation cadence as the federated path."""
    rows = []
    for t in range(1, rounds + 1):
        seed = derive_seed(base_seed, "shuffle", t, client.client_id)
        client.model, report = client_update(
            client.model, client.train, None, t, hyper, rng_seed=seed
        )
        scores, labels = evaluate_client(client.model, client.test, hyper.fusion)
        rows.append(
            RoundRow(
                round=t,
                hospital_id=client.client_id,
                lambda_used=report.loss_stats.lambda_used,
                loss_bce=report.loss_stats.bce_term,
                loss_l2=report.loss_stats.l2_term,
                test_accuracy=accuracy(scores, labels),
                test_auc=auc(scores, labels),
            )
        )
    return rows


def local_training(client: ClientState, rounds: int, hyper: TrainHyper, base_seed: int):
    """Baseline 1: the client trains alone, no prototypes, no aggregation.

    The optimization is exactly the federated client update with the
    alignment term permanently zero, so the effective objective is
    (1 - lambda(t)) * BCE under the same schedule; only the federation is
    removed. The budget is rounds x local_epochs, matching the federated
    method's total epochs.
    """
    return _training_loop(client, rounds, hyper, base_seed)


def multi_fedavg(clients, template: GlobalTemplate, rounds: int, hyper: TrainHyper, base_seed: int):
    """Baseline 2: one unified all-modality model; clients zero-fill
    inputs for modalities they lack, and the entire weight set
    (extractors and classifier) is averaged every round.

    Returns (round rows, final per-client models, zero_fill report).
    """
    hyper = _bce_only(hyper)
    all_mods = sorted(template.input_dims)
    global_model = LocalModel(
        {k: template.init_extractor(k, base_seed) for k in all_mods},
        template.init_classifier(len(all_mods), hyper.fusion, base_seed),
    )
    zero_fill = {}
    states = []
    for c in sorted(clients, key=lambda c: c.client_id):
        missing = [k for k in all_mods if k not in c.train.modality_mask]
        if missing:
            zero_fill[c.client_id] = missing
        states.append(
            ClientState(
                client_id=c.client_id,
                train=zero_filled_view(c.train, all_mods, template.input_dims),
                test=zero_filled_view(c.test, all_mods, template.input_dims),
                model=global_model.copy(),
            )
        )

    rows = []
    for t in range(1, rounds + 1):
        stats = {}
        for s in states:
            s.model = global_model.copy()
            seed = derive_seed(base_seed, "shuffle", t, s.client_id)
            s.model, report = client_update(s.model, s.train, None, t, hyper, rng_seed=seed)
            stats[s.client_id] = report.loss_stats
        w = 1.0 / len(states)
        global_model = LocalModel(
            {
                k: weighted_sum_params([(s.model.extractors[k], w) for s in states])
                for k in all_mods
            },
            weighted_sum_params([(s.model.classifier, w) for s in states]),
        )
        for s in states:
            scores, labels = evaluate_client(s.model, s.test, hyper.fusion)
            rows.append(
                RoundRow(
                    round=t,
                    hospital_id=s.client_id,
                    lambda_used=0.0,
                    loss_bce=stats[s.client_id].bce_term,
                    loss_l2=stats[s.client_id].l2_term,
                    test_accuracy=accuracy(scores, labels),
                    test_auc=auc(scores, labels),
                )
            )
    return rows, states, zero_fill


def pool_fully_multimodal(clients, all_mods):
    """Pool the train/test splits of hospitals holding every modality.

    Returns (pooled train, pooled test, excluded sample count, seed tag).
    The pooled site inherits the smallest contributing hospital id as its
    seed-derivation tag so a single-client system degenerates exactly to
    local training.
    """
    all_mods = tuple(sorted(all_mods))
    full = [c for c in sorted(clients, key=lambda c: c.client_id)
            if tuple(sorted(c.train.modality_mask)) == all_mods]
    full_ids = {c.client_id for c in full}
    excluded = sum(c.train.n + c.test.n for c in clients if c.client_id not in full_ids)
    if not full:
        raise DataError("no hospital holds every modality; nothing to pool")

    def concat(datasets):
        return HospitalDataset(
            POOLED_HOSPITAL_ID,
            [sid for d in datasets for sid in d.sample_ids],
            np.concatenate([d.labels for d in datasets]),
            {k: np.concatenate([d.features[k] for d in datasets]) for k in all_mods},
            all_mods,
        )

    train = concat([c.train for c in full])
    test = concat([c.test for c in full])
    return train, test, excluded, full[0].client_id


def centralized_fusion(clients, template: GlobalTemplate, rounds: int, hyper: TrainHyper, base_seed: int):
    """Privacy-infeasible upper bound: single-site training on the pooled
    fully-multimodal samples.

    Returns (round rows, final model, excluded sample count).
    """
    hyper = _bce_only(hyper)
    all_mods = sorted(template.input_dims)
    train, test, excluded, seed_tag = pool_fully_multimodal(clients, all_mods)
    model = LocalModel(
        {k: template.init_extractor(k, base_seed) for k in all_mods},
        template.init_classifier(len(all_mods), hyper.fusion, base_seed),
    )
    pooled = ClientState(client_id=seed_tag, train=train, test=test, model=model)
    rows = _training_loop(pooled, rounds, hyper, base_seed)
    for r in rows:
        r.hospital_id = POOLED_HOSPITAL_ID
    return rows, pooled.model, excluded
