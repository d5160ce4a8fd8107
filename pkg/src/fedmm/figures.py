"""Report-path figure rendering: summary bar charts and ROC overlays
saved next to the merged summary CSV. Consumes only the CSV outputs, so
the training pipeline itself stays plot-free."""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _hospital_name(hid: int) -> str:
    return "pooled" if hid == 0 else f"hospital {hid}"


def render_summary_bars(summary_rows, out_path, metric: str, title: str):
    methods = sorted({r["method"] for r in summary_rows})
    hospitals = sorted({r["hospital_id"] for r in summary_rows})
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for mi, method in enumerate(methods):
        xs, ys, errs = [], [], []
        for hi, hid in enumerate(hospitals):
            row = next(
                (r for r in summary_rows if r["method"] == method and r["hospital_id"] == hid),
                None,
            )
            if row is None:
                continue
            xs.append(hi + mi * width)
            ys.append(row[f"mean_{metric}"])
            errs.append(row[f"std_{metric}"])
        ax.bar(xs, ys, width=width, yerr=errs, capsize=3, label=method)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(hospitals))])
    ax.set_xticklabels([_hospital_name(h) for h in hospitals])
    ax.set_ylabel(f"mean {metric}")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_roc_overlay(roc_paths, out_path):
    """Overlay every roc_*.csv found in the input directories."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for path in sorted(roc_paths):
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            fpr, tpr = [], []
            for row in reader:
                fpr.append(float(row["fpr"]))
                tpr.append(float(row["tpr"]))
        name = os.path.basename(path)[len("roc_") : -len(".csv")]
        ax.plot(fpr, tpr, linewidth=1.5, label=name)
    ax.plot([0, 1], [0, 1], "k--", linewidth=0.8, alpha=0.5)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("ROC curves")
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_report_figures(summary_rows, roc_paths, out_csv_path):
    """Render the report figures alongside the merged summary CSV; returns
    the list of files written."""
    stem, _ = os.path.splitext(out_csv_path)
    written = [
        render_summary_bars(summary_rows, f"{stem}_auc.png", "auc", "Test AUC by method"),
        render_summary_bars(
            summary_rows, f"{stem}_accuracy.png", "accuracy", "Test accuracy by method"
        ),
    ]
    if roc_paths:
        written.append(render_roc_overlay(roc_paths, f"{stem}_roc.png"))
    return written
