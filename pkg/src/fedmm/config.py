"""Experiment configuration: JSON with full defaulting to the reference
hyperparameters (100 rounds, 3 local epochs, lr 0.001, batch 32,
beta 0.25, alpha 0.05, t0 30, split 0.8), so a bare
{"run": {"method": "fedmm"}} reproduces the default three-hospital
two-modality experiment on synthetic data.

Modalities are written as letters in configs and files (A, B, ...) and
handled as integer indices internally.
"""

import copy
import json
import os

from .client import TrainHyper
from .data import HospitalSpec, SyntheticSpec, modality_index
from .errors import ConfigError
from .losses import LossSchedule
from .server import AGGREGATIONS, GlobalTemplate

TOOL_VERSION = "0.1.0"

DEFAULT_CONFIG = {
    "topology": {
        "data_seed": 7,
        "latent_dim": 8,
        "class_separation": 2.0,
        "noise_sigma": 1.0,
        "observed_dims": {"A": 16, "B": 16},
        "hospitals": [
            {"modalities": ["A"], "class_counts": [199, 210]},
            {"modalities": ["A", "B"], "class_counts": [315, 285]},
            {"modalities": ["B"], "class_counts": [203, 219]},
        ],
        "modality_subset": None,  # e.g. "A" or "AB"; None keeps everything
    },
    "model": {
        "extractor_hidden": [32],
        "embed_dim": 32,
        "classifier_hidden": [],  # sigmoid head directly on the fused embedding
        "activations": {},  # per-modality letter -> relu|selu; default relu
        "fusion": "concat",
    },
    "train": {
        "rounds": 100,
        "local_epochs": 3,
        "lr": 0.001,
        "batch_size": 32,
        "beta": 0.25,
        "alpha": 0.05,
        "t0": 30,
        "aggregation": "fedavg",
        "prox_mu": None,  # defaults to 0.01 under fedprox, else 0
        "warm_local": False,
        "freeze_classifier_rounds": 0,
        "lambda_override": None,
        "proto_weighted": False,
    },
    "split": {"fraction": 0.8},
    "run": {"method": "fedmm", "seeds": None, "seed_count": 20, "out_dir": "out"},
}

_HOSPITAL_KEYS_SYNTH = {"modalities", "class_counts"}
_HOSPITAL_KEYS_CSV = {"modalities", "csv"}


def _merge(defaults, user, path=""):
    """Deep-merge user config over defaults, rejecting unknown keys."""
    if not isinstance(user, dict):
        raise ConfigError(f"config section '{path or '<root>'}' must be an object")
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key '{here}'")
        if isinstance(defaults[key], dict) and key not in ("observed_dims", "activations"):
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    cfg = _merge(DEFAULT_CONFIG, raw)
    _validate(cfg)
    return cfg


def _validate(cfg):
    topo = cfg["topology"]
    if not topo["hospitals"]:
        raise ConfigError("topology.hospitals must list at least one hospital")
    declared = {modality_index(m) for m in topo["observed_dims"]}
    for i, h in enumerate(topo["hospitals"], start=1):
        keys = set(h)
        if keys != _HOSPITAL_KEYS_SYNTH and keys != _HOSPITAL_KEYS_CSV:
            raise ConfigError(
                f"topology.hospitals[{i - 1}] needs keys {sorted(_HOSPITAL_KEYS_SYNTH)} "
                f"or {sorted(_HOSPITAL_KEYS_CSV)}, got {sorted(keys)}"
            )
        mods = {modality_index(m) for m in h["modalities"]}
        if not mods:
            raise ConfigError(f"topology.hospitals[{i - 1}].modalities is empty")
        if not mods <= declared:
            raise ConfigError(
                f"topology.hospitals[{i - 1}] uses modalities outside "
                "topology.observed_dims"
            )
    if cfg["model"]["fusion"] not in ("concat", "mean"):
        raise ConfigError("model.fusion must be 'concat' or 'mean'")
    if cfg["train"]["aggregation"] not in AGGREGATIONS:
        raise ConfigError(f"train.aggregation must be one of {AGGREGATIONS}")
    if not 0.0 < cfg["split"]["fraction"] < 1.0:
        raise ConfigError("split.fraction must be in (0, 1)")
    if cfg["run"]["method"] not in ("fedmm", "local", "multi-fedavg", "centralized"):
        raise ConfigError(
            "run.method must be fedmm | local | multi-fedavg | centralized"
        )
    subset = topo.get("modality_subset")
    if subset is not None:
        wanted = {modality_index(ch) for ch in str(subset)}
        if not wanted <= declared:
            raise ConfigError(f"topology.modality_subset '{subset}' not declared")


def apply_modality_subset(cfg: dict) -> dict:
    """Restrict the topology (and model) to the configured modality
    subset; hospitals left with no modalities are dropped."""
    subset = cfg["topology"].get("modality_subset")
    if subset is None:
        return cfg
    wanted = {modality_index(ch) for ch in str(subset)}
    cfg = copy.deepcopy(cfg)
    topo = cfg["topology"]
    topo["observed_dims"] = {
        m: d for m, d in topo["observed_dims"].items() if modality_index(m) in wanted
    }
    hospitals = []
    for h in topo["hospitals"]:
        mods = [m for m in h["modalities"] if modality_index(m) in wanted]
        if not mods:
            continue
        h2 = copy.deepcopy(h)
        h2["modalities"] = mods
        if "csv" in h2:
            h2["csv"] = {m: p for m, p in h2["csv"].items() if modality_index(m) in wanted}
        hospitals.append(h2)
    if not hospitals:
        raise ConfigError(f"modality_subset '{subset}' leaves no hospitals")
    topo["hospitals"] = hospitals
    return cfg


def observed_dims(cfg) -> dict:
    return {modality_index(m): int(d) for m, d in cfg["topology"]["observed_dims"].items()}


def synthetic_spec(cfg) -> SyntheticSpec:
    topo = cfg["topology"]
    hospitals = []
    for h in topo["hospitals"]:
        if "class_counts" not in h:
            raise ConfigError("hospital declares CSV paths; no synthetic spec")
        hospitals.append(
            HospitalSpec(
                modalities=tuple(sorted(modality_index(m) for m in h["modalities"])),
                class_counts=tuple(int(c) for c in h["class_counts"]),
            )
        )
    return SyntheticSpec(
        latent_dim=int(topo["latent_dim"]),
        observed_dims=observed_dims(cfg),
        class_separation=float(topo["class_separation"]),
        noise_sigma=float(topo["noise_sigma"]),
        hospitals=hospitals,
    )


def uses_csv(cfg) -> bool:
    return any("csv" in h for h in cfg["topology"]["hospitals"])


def global_template(cfg) -> GlobalTemplate:
    model = cfg["model"]
    acts = {modality_index(m): a for m, a in model["activations"].items()}
    return GlobalTemplate(
        input_dims=observed_dims(cfg),
        extractor_hidden=[int(w) for w in model["extractor_hidden"]],
        embed_dim=int(model["embed_dim"]),
        activations=acts,
        classifier_hidden=[int(w) for w in model["classifier_hidden"]],
    )


def loss_schedule(cfg) -> LossSchedule:
    train = cfg["train"]
    return LossSchedule(
        alpha=float(train["alpha"]),
        t0=int(train["t0"]),
        beta=float(train["beta"]),
        embed_dim=int(cfg["model"]["embed_dim"]),
        lambda_override=(
            None if train["lambda_override"] is None else float(train["lambda_override"])
        ),
    )


def train_hyper(cfg) -> TrainHyper:
    train = cfg["train"]
    prox_mu = train["prox_mu"]
    if prox_mu is None:
        prox_mu = 0.01 if train["aggregation"] == "fedprox" else 0.0
    return TrainHyper(
        local_epochs=int(train["local_epochs"]),
        batch_size=int(train["batch_size"]),
        lr=float(train["lr"]),
        schedule=loss_schedule(cfg),
        fusion=cfg["model"]["fusion"],
        prox_mu=float(prox_mu),
        freeze_classifier_rounds=int(train["freeze_classifier_rounds"]),
    )


def run_seeds(cfg) -> list:
    run = cfg["run"]
    if run["seeds"] is not None:
        return [int(s) for s in run["seeds"]]
    return list(range(int(run["seed_count"])))


def parse_seed_spec(spec: str) -> list:
    """Parse a CLI seed spec: '0..19' (inclusive), '0,3,5', or '7'."""
    s = spec.strip()
    if ".." in s:
        lo, hi = s.split("..", 1)
        try:
            lo, hi = int(lo), int(hi)
        except ValueError:
            raise ConfigError(f"bad seed range '{spec}'") from None
        if hi < lo:
            raise ConfigError(f"seed range '{spec}' is empty")
        return list(range(lo, hi + 1))
    try:
        return [int(p) for p in s.split(",") if p.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad seed list '{spec}'") from None


def write_manifest(out_dir: str, payload: dict):
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
