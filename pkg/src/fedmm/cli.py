"""Command-line entry point.

Subcommands:
    generate  write synthetic feature CSVs plus a manifest
    train     run one method over a set of seeds, emit CSV outputs
    ablation  sweep one config key, re-running train per value
    report    merge runs.csv files into a summary CSV plus figures

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric or
protocol error. FEDMM_THREADS caps seed-level parallelism (0 = auto).
"""

import argparse
import copy
import glob
import os
import sys
import time

from . import config as cfgmod
from . import data as datamod
from . import figures, harness, metrics
from .errors import ConfigError, DataError, FedmmError

SWEEP_KEYS = ("train.t0", "model.fusion", "topology.modality_subset")


def _exit_code(err: FedmmError) -> int:
    if isinstance(err, ConfigError):
        return 2
    if isinstance(err, DataError):
        return 3
    return 4


def cmd_generate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    cfg = cfgmod.apply_modality_subset(cfg)
    spec = cfgmod.synthetic_spec(cfg)
    seed = args.seed if args.seed is not None else int(cfg["topology"]["data_seed"])
    datasets = datamod.generate_synthetic(spec, seed)
    os.makedirs(args.out, exist_ok=True)
    files = datamod.write_hospital_csvs(datasets, args.out)
    datamod.write_generation_manifest(args.out, spec, seed, files)
    print(f"wrote {len(files)} feature CSVs + manifest.json to {args.out}")
    return 0


def _train_once(cfg, method, seeds, out_dir, label, with_trace, config_dir="."):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "tool_version": cfgmod.TOOL_VERSION,
        "config": cfg,
        "method": method,
        "label": label,
        "seeds": seeds,
        "budget": {
            "epochs_per_client": int(cfg["train"]["rounds"]) * int(cfg["train"]["local_epochs"])
        },
        "status": "incomplete",
        "outputs": [],
    }
    cfgmod.write_manifest(out_dir, manifest)
    t_start = time.perf_counter()
    datasets = harness.build_datasets(cfg, base_dir=config_dir)
    results = harness.run_seeds(cfg, method, seeds, datasets, with_trace=with_trace)
    run_rows, files = harness.assemble_outputs(out_dir, label, results)
    if with_trace and results[0].trace is not None:
        results[0].trace.write_csv(os.path.join(out_dir, "trace.csv"))
        files.append("trace.csv")
    for res in results:
        manifest.update(res.extra)
    manifest["status"] = "complete"
    manifest["outputs"] = sorted(files)
    cfgmod.write_manifest(out_dir, manifest)
    elapsed = time.perf_counter() - t_start
    print(f"[{label}] {len(seeds)} seed(s) -> {out_dir} ({elapsed:.1f}s)")
    return run_rows


def cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    method = args.method or cfg["run"]["method"]
    if method not in ("fedmm", "local", "multi-fedavg", "centralized"):
        raise ConfigError(f"unknown method '{method}'")
    seeds = cfgmod.parse_seed_spec(args.seeds) if args.seeds else cfgmod.run_seeds(cfg)
    out_dir = args.out or cfg["run"]["out_dir"]
    label = args.label or method
    _train_once(cfg, method, seeds, out_dir, label, args.trace,
                config_dir=os.path.dirname(os.path.abspath(args.config)))
    return 0


def _set_config_key(cfg, dotted_key, raw_value):
    cfg = copy.deepcopy(cfg)
    if dotted_key == "train.t0":
        cfg["train"]["t0"] = int(raw_value)
    elif dotted_key == "model.fusion":
        if raw_value not in ("concat", "mean"):
            raise ConfigError(f"fusion sweep value '{raw_value}' invalid")
        cfg["model"]["fusion"] = raw_value
    elif dotted_key == "topology.modality_subset":
        cfg["topology"]["modality_subset"] = raw_value
    else:
        raise ConfigError(
            f"unknown sweep key '{dotted_key}'; valid keys: {', '.join(SWEEP_KEYS)}"
        )
    return cfg


def cmd_ablation(args) -> int:
    base_cfg = cfgmod.load_config(args.config)
    if "=" not in args.sweep:
        raise ConfigError("--sweep expects key=v1,v2,...")
    key, _, raw_values = args.sweep.partition("=")
    values = [v.strip() for v in raw_values.split(",") if v.strip()]
    if key not in SWEEP_KEYS:
        raise ConfigError(
            f"unknown sweep key '{key}'; valid keys: {', '.join(SWEEP_KEYS)}"
        )
    if not values:
        raise ConfigError("--sweep needs at least one value")
    method = base_cfg["run"]["method"]
    seeds = cfgmod.parse_seed_spec(args.seeds) if args.seeds else cfgmod.run_seeds(base_cfg)
    os.makedirs(args.out, exist_ok=True)
    config_dir = os.path.dirname(os.path.abspath(args.config))
    sweep_rows = []
    for value in values:
        cfg = _set_config_key(base_cfg, key, value)
        sub = os.path.join(args.out, f"{key}={value}")
        run_rows = _train_once(cfg, method, seeds, sub, method, with_trace=False,
                               config_dir=config_dir)
        for srow in metrics.summarize(run_rows):
            sweep_rows.append(
                {
                    "sweep_value": value,
                    "hospital": srow["hospital_id"],
                    "mean_auc": srow["mean_auc"],
                    "std_auc": srow["std_auc"],
                    "mean_acc": srow["mean_accuracy"],
                    "std_acc": srow["std_accuracy"],
                }
            )
    metrics.write_sweep_csv(os.path.join(args.out, "sweep.csv"), sweep_rows)
    print(f"sweep over {key} ({len(values)} values) -> {args.out}/sweep.csv")
    return 0


def cmd_report(args) -> int:
    all_runs = []
    roc_paths = []
    for d in args.inputs:
        runs_path = os.path.join(d, "runs.csv")
        if not os.path.exists(runs_path):
            raise DataError(f"no runs.csv in {d}")
        all_runs.extend(metrics.read_runs_csv(runs_path))
        roc_paths.extend(glob.glob(os.path.join(d, "roc_*.csv")))
    summary = metrics.summarize(all_runs)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    metrics.write_summary_csv(args.out, summary)
    written = figures.render_report_figures(summary, roc_paths, args.out)
    print(f"summary -> {args.out}; figures: {', '.join(os.path.basename(w) for w in written)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fedmm",
        description="Deterministic federated multimodal training simulator",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic feature CSVs")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int, default=None, help="override topology.data_seed")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="run one method over a set of seeds")
    t.add_argument("--config", required=True)
    t.add_argument("--method", choices=["fedmm", "local", "multi-fedavg", "centralized"])
    t.add_argument("--seeds", help="e.g. '0..19' or '0,1,2' (default: config run.seeds)")
    t.add_argument("--out", help="output directory (default: config run.out_dir)")
    t.add_argument("--label", help="method label written to CSVs (default: method name)")
    t.add_argument("--trace", action="store_true", help="record and write the protocol trace")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablation", help="sweep one config key")
    a.add_argument("--config", required=True)
    a.add_argument("--sweep", required=True, help="key=v1,v2,... ; keys: " + ", ".join(SWEEP_KEYS))
    a.add_argument("--seeds")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablation)

    r = sub.add_parser("report", help="merge runs.csv files into a summary + figures")
    r.add_argument("--in", dest="inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FedmmError as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
