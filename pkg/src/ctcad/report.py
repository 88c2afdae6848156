"""Rendering of cross-validation reports: JSON, delimited text, figures.

Figure rendering uses the Agg backend so it works headless; files land
next to the delimited output.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ctcad.evaluation import METRIC_NAMES, CVReport

_COLUMNS = ("Accuracy", "Recall", "Precision", "F1-Score", "AUC")
_COLUMN_KEYS = ("accuracy", "recall", "precision", "f1", "auc")


def _fmt_cell(mean, std) -> str:
    """Percent-scaled 'mean(+-std)' cell, e.g. 90.61(±5.4)."""
    if mean is None:
        return "n/a"
    return f"{100.0 * mean:.2f}(±{100.0 * (std or 0.0):.1f})"


def _fmt_val(value) -> str:
    return "n/a" if value is None else f"{100.0 * value:.2f}"


def report_to_dict(report: CVReport) -> dict:
    return {
        "k": report.k,
        "seed": report.seed,
        "std_kind": report.std_kind,
        "config": {
            "nu": report.config.nu,
            "gamma": report.config.gamma,
            "max_iter": report.config.max_iter,
            "tol": report.config.tol,
        },
        "folds": [m.as_dict() for m in report.folds],
        "mean": report.mean.as_dict(),
        "std": report.std.as_dict(),
    }


def report_to_json(report: CVReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"


def report_to_table(report: CVReport) -> str:
    """Aligned summary table with 'metric(+-std)' cells plus per-fold rows."""
    header = ["Fold"] + list(_COLUMNS)
    rows = []
    for i, m in enumerate(report.folds):
        rows.append([str(i)] + [_fmt_val(getattr(m, key)) for key in _COLUMN_KEYS])
    rows.append(
        ["mean"]
        + [
            _fmt_cell(getattr(report.mean, key), getattr(report.std, key))
            for key in _COLUMN_KEYS
        ]
    )
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    lines.append("")
    lines.append(f"{report.k}-fold cross-validation, seed {report.seed}, {report.std_kind} std")
    lines.append(
        f"nu={report.config.nu} gamma={report.config.gamma} "
        f"max_iter={report.config.max_iter} tol={report.config.tol}"
    )
    return "\n".join(lines) + "\n"


def report_to_csv(report: CVReport) -> str:
    lines = ["fold," + ",".join(METRIC_NAMES)]

    def cell(v):
        return "" if v is None else repr(float(v))

    for i, m in enumerate(report.folds):
        lines.append(f"{i}," + ",".join(cell(getattr(m, k)) for k in METRIC_NAMES))
    lines.append("mean," + ",".join(cell(getattr(report.mean, k)) for k in METRIC_NAMES))
    lines.append("std," + ",".join(cell(getattr(report.std, k)) for k in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def write_report(report: CVReport, out_dir: str, figures: bool = True) -> list[str]:
    """Write report.json/report.csv/report.txt (+ figures) under out_dir.

    Output is deterministic: identical reports produce byte-identical
    files.  Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, text in (
        ("report.json", report_to_json(report)),
        ("report.csv", report_to_csv(report)),
        ("report.txt", report_to_table(report)),
    ):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)
    if figures:
        written.extend(render_report_figures(report, out_dir))
    return written


def render_report_figures(report: CVReport, out_dir: str) -> list[str]:
    """ROC curves per fold and metric variation across folds, as PNGs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    if report.curves:
        fig, ax = plt.subplots(figsize=(5.5, 5))
        for i, pts in enumerate(report.curves):
            ax.plot(pts[:, 0], pts[:, 1], lw=1.0, alpha=0.7, label=f"fold {i}")
        ax.plot([0, 1], [0, 1], "k--", lw=0.8)
        mean_auc = report.mean.auc
        title = "ROC per fold"
        if mean_auc is not None:
            title += f" (mean AUC {100 * mean_auc:.2f}%)"
        ax.set_title(title)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.legend(fontsize=7, ncol=2, loc="lower right")
        path = os.path.join(out_dir, "roc.png")
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6.5, 4))
    xs = np.arange(len(report.folds))
    for key, label in zip(_COLUMN_KEYS, _COLUMNS):
        vals = [getattr(m, key) for m in report.folds]
        if any(v is None for v in vals):
            continue
        ax.plot(xs, [100 * v for v in vals], marker="o", ms=3, lw=1.0, label=label)
    ax.set_xticks(xs)
    ax.set_xlabel("Fold")
    ax.set_ylabel("Score (%)")
    ax.set_title("Per-fold metric variation")
    ax.legend(fontsize=8)
    path = os.path.join(out_dir, "folds.png")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def render_feature_grid(grid: np.ndarray, path: str) -> str:
    """Grayscale heatmap of a reshaped feature vector."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = np.asarray(grid, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 5 * grid.shape[0] / max(grid.shape[1], 1)))
    ax.imshow(grid, cmap="gray", aspect="equal", interpolation="nearest")
    ax.set_title(f"Feature grid {grid.shape[0]}×{grid.shape[1]}")
    ax.axis("off")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
