"""Experiment orchestration: build data, run one method over many seeds,
and assemble the deterministic CSV output tree.

Each seed runs independently (fresh split, init, and shuffles derived
from the seed); data itself comes from topology.data_seed and is shared
across seeds and methods, mirroring a fixed cohort under repeated random
splits. Seeds may execute in parallel (FEDMM_THREADS), but results are
always collected and written in ascending seed order, so the output tree
is byte-identical no matter the worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import baselines, config as cfgmod, metrics, server
from .baselines import CENTRALIZED_FUSION, FEDMM, LOCAL_TRAINING, MULTI_FEDAVG
from .client import LocalModel, evaluate_client
from .data import (
    SplitSpec,
    generate_synthetic,
    load_feature_csvs,
    modality_index,
    standardize,
    train_test_split,
)
from .errors import ConfigError
from .seeding import derive_seed
from .server import ClientState
from .trace import ProtocolTrace


def resolve_workers() -> int:
    raw = os.environ.get("FEDMM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FEDMM_THREADS must be an integer, got '{raw}'") from None
    if n < 0:
        raise ConfigError("FEDMM_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def build_datasets(cfg: dict, base_dir: str = "."):
    """Materialize the hospital datasets from the resolved config, either
    synthetically or from declared feature CSVs."""
    cfg = cfgmod.apply_modality_subset(cfg)
    topo = cfg["topology"]
    if cfgmod.uses_csv(cfg):
        dims = cfgmod.observed_dims(cfg)
        datasets = []
        for hid, h in enumerate(topo["hospitals"], start=1):
            if "csv" not in h:
                raise ConfigError(
                    f"topology.hospitals[{hid - 1}]: mixing synthetic and CSV "
                    "hospitals is not supported"
                )
            paths = {
                modality_index(m): os.path.join(base_dir, p)
                for m, p in h["csv"].items()
            }
            datasets.append(load_feature_csvs(paths, hid, dims))
        return datasets
    return generate_synthetic(cfgmod.synthetic_spec(cfg), int(topo["data_seed"]))


@dataclass
class SeedResult:
    seed: int
    rows: list  # RoundRow, with hospital ids
    final: dict  # hospital_id -> (scores, labels)
    trace: ProtocolTrace | None
    extra: dict


def _make_clients(datasets, cfg, seed, template, fusion):
    clients = []
    for ds in datasets:
        split = SplitSpec(cfg["split"]["fraction"], derive_seed(seed, "split", ds.hospital_id))
        train, test = train_test_split(ds, split)
        train, test, _ = standardize(train, test)
        model = LocalModel(
            {k: template.init_extractor(k, seed) for k in train.modality_mask},
            template.init_classifier(len(train.modality_mask), fusion, seed),
        )
        clients.append(ClientState(ds.hospital_id, train, test, model))
    return clients


def run_single(cfg: dict, method: str, seed: int, datasets, with_trace: bool = False) -> SeedResult:
    """Run one (method, seed) experiment on pre-built datasets."""
    template = cfgmod.global_template(cfgmod.apply_modality_subset(cfg))
    hyper = cfgmod.train_hyper(cfg)
    rounds = int(cfg["train"]["rounds"])
    fusion = hyper.fusion
    clients = _make_clients(datasets, cfg, seed, template, fusion)
    extra = {}
    trace = None

    if method == FEDMM:
        if with_trace:
            trace = ProtocolTrace({c.client_id: c.model.mask for c in clients})
        _, rows = server.run_training(
            clients, template, hyper, cfg["train"]["aggregation"], rounds, seed,
            trace=trace, warm_local=bool(cfg["train"]["warm_local"]),
        )
        final_clients = clients
    elif method == LOCAL_TRAINING:
        rows = []
        for c in clients:
            rows.extend(baselines.local_training(c, rounds, hyper, seed))
        final_clients = clients
    elif method == MULTI_FEDAVG:
        rows, states, zero_fill = baselines.multi_fedavg(
            clients, template, rounds, hyper, seed
        )
        extra["zero_fill"] = {
            str(cid): [str(k) for k in ks] for cid, ks in sorted(zero_fill.items())
        }
        final_clients = states
    elif method == CENTRALIZED_FUSION:
        rows, model, excluded = baselines.centralized_fusion(
            clients, template, rounds, hyper, seed
        )
        extra["excluded_samples"] = excluded
        train, test, _, seed_tag = baselines.pool_fully_multimodal(
            clients, sorted(template.input_dims)
        )
        final_clients = [ClientState(baselines.POOLED_HOSPITAL_ID, train, test, model)]
    else:
        raise ConfigError(f"unknown method '{method}'")

    final = {}
    for c in sorted(final_clients, key=lambda c: c.client_id):
        scores, labels = evaluate_client(c.model, c.test, fusion)
        final[c.client_id] = (scores, labels)
    return SeedResult(seed=seed, rows=sorted(rows, key=lambda r: (r.round, r.hospital_id)),
                      final=final, trace=trace, extra=extra)


def run_seeds(cfg: dict, method: str, seeds, datasets, with_trace: bool = False):
    """Run every seed, in parallel up to FEDMM_THREADS workers; results
    come back in ascending seed order regardless of scheduling."""
    seeds = sorted(seeds)
    workers = min(resolve_workers(), len(seeds))
    if workers <= 1:
        return [run_single(cfg, method, s, datasets, with_trace) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {s: pool.submit(run_single, cfg, method, s, datasets, with_trace) for s in seeds}
        return [futures[s].result() for s in seeds]


def assemble_outputs(out_dir: str, label: str, results):
    """Write runs.csv, rounds.csv, and the first-seed ROC curves.

    Returns (run summaries, list of written file names).
    """
    os.makedirs(out_dir, exist_ok=True)
    files = []

    round_tuples = []
    run_rows = []
    for res in results:
        for r in res.rows:
            round_tuples.append(
                (r.round, label, r.hospital_id, res.seed, r.lambda_used,
                 r.loss_bce, r.loss_l2, r.test_accuracy, r.test_auc)
            )
        for hid in sorted(res.final):
            scores, labels = res.final[hid]
            run_rows.append(
                metrics.RunSummary(
                    method=label, hospital_id=hid, seed=res.seed,
                    accuracy=metrics.accuracy(scores, labels),
                    auc=metrics.auc(scores, labels),
                )
            )
    round_tuples.sort(key=lambda t: (t[3], t[0], t[2]))
    metrics.write_rounds_csv(os.path.join(out_dir, "rounds.csv"), round_tuples)
    files.append("rounds.csv")
    run_rows.sort(key=lambda r: (r.seed, r.hospital_id))
    metrics.write_runs_csv(os.path.join(out_dir, "runs.csv"), run_rows)
    files.append("runs.csv")

    first = results[0]
    for hid in sorted(first.final):
        scores, labels = first.final[hid]
        points = metrics.roc_curve(scores, labels)
        name = f"roc_{label}_h{hid}.csv"
        metrics.write_roc_csv(os.path.join(out_dir, name), points)
        files.append(name)
    return run_rows, files
