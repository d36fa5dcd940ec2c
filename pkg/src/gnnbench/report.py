"""Aggregate finished runs into benchmark tables and figures.

Each run directory is expected to hold the files written by ``gnnbench train``:
``summary.json`` (seed aggregate) and ``run.json`` (config + dataset identity).
Rows are sorted by dataset then model.  Metric cells are rendered with
round-trip float precision so the numbers in the emitted table equal the
recomputed statistics exactly, and the same formatter feeds both the CSV and
the markdown output.
"""

import csv
import io
import json
import os
import re
from pathlib import Path

from .errors import DataError

SUMMARY_FILE = "summary.json"
RUN_FILE = "run.json"


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _pair(block):
    return (float(block["mean"]), float(block["std"]))


def collect_runs(run_dirs, mixed=False):
    """Read ``summary.json``/``run.json`` from each directory.

    Returns ``(rows, warnings)``.  A directory without a summary produces a
    warning and is skipped.  Two runs naming the same dataset but carrying
    different dataset hashes raise DataError unless ``mixed`` is set.
    """
    rows = []
    warnings = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        summary_path = run_dir / SUMMARY_FILE
        if not summary_path.is_file():
            warnings.append(f"skipping {run_dir}: no {SUMMARY_FILE}")
            continue
        summary = _load_json(summary_path)
        meta = {}
        run_path = run_dir / RUN_FILE
        if run_path.is_file():
            meta = _load_json(run_path)
        model = meta.get("model", {})
        dataset = meta.get("dataset", {})
        row = {
            "dir": str(run_dir),
            "dataset": dataset.get("name", "unknown"),
            "dataset_hash": dataset.get("hash"),
            "config_hash": meta.get("config_hash", ""),
            "model": model.get("kind", "unknown"),
            "layers": model.get("n_layers"),
            "params": summary.get("n_params"),
            "status": summary.get("status", "unknown"),
            "seeds": summary.get("n_seeds"),
            "test": {k: _pair(v) for k, v in summary.get("test", {}).items()},
            "train": {k: _pair(v) for k, v in summary.get("train", {}).items()},
            "epochs": _pair(summary["epochs"]) if "epochs" in summary else None,
            "epoch_seconds": (_pair(summary["epoch_seconds"])
                              if "epoch_seconds" in summary else None),
        }
        rows.append(row)

    if not mixed:
        seen = {}
        for row in rows:
            if row["dataset_hash"] is None:
                continue
            prior = seen.setdefault(row["dataset"], row["dataset_hash"])
            if prior != row["dataset_hash"]:
                raise DataError(
                    f"dataset {row['dataset']!r} appears with conflicting hashes "
                    f"({prior} vs {row['dataset_hash']}); pass --mixed to "
                    f"aggregate anyway")

    rows.sort(key=lambda r: (r["dataset"], r["model"], str(r["dir"])))
    return rows, warnings


def _num(x):
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(x))


def _cell(pair):
    if pair is None:
        return "-"
    mean, std = pair
    return f"{_num(mean)}±{_num(std)}"


def _columns(rows):
    test_names = sorted({name for r in rows for name in r["test"]})
    train_names = sorted({name for r in rows for name in r["train"]})
    header = (["dataset", "model", "layers", "params", "status", "seeds"]
              + [f"test_{n}" for n in test_names]
              + [f"train_{n}" for n in train_names]
              + ["epochs", "epoch_seconds", "config"])
    return header, test_names, train_names


def _cells(row, test_names, train_names):
    return ([row["dataset"], row["model"],
             "-" if row["layers"] is None else str(row["layers"]),
             "-" if row["params"] is None else str(row["params"]),
             row["status"],
             "-" if row["seeds"] is None else str(row["seeds"])]
            + [_cell(row["test"].get(n)) for n in test_names]
            + [_cell(row["train"].get(n)) for n in train_names]
            + [_cell(row["epochs"]), _cell(row["epoch_seconds"]),
               row["config_hash"] or "-"])


def render_csv(rows):
    header, test_names, train_names = _columns(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(_cells(row, test_names, train_names))
    return buf.getvalue()


def render_markdown(rows):
    header, test_names, train_names = _columns(rows)
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(_cells(row, test_names, train_names)) + " |")
    return "\n".join(lines) + "\n"


def _slug(text):
    return re.sub(r"[^A-Za-z0-9]+", "_", str(text)).strip("_") or "x"


def render_figures(rows, out_dir):
    """Bar charts (one per dataset and test metric, std as error bars) plus
    per-run validation-loss curves.  Returns the written paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    datasets = sorted({r["dataset"] for r in rows})
    for ds in datasets:
        ds_rows = [r for r in rows if r["dataset"] == ds]
        hashes = sorted({r["config_hash"] for r in ds_rows if r["config_hash"]})
        meta = {"config": ",".join(hashes)} if hashes else None
        metrics = sorted({name for r in ds_rows for name in r["test"]})
        for metric in metrics:
            picked = [r for r in ds_rows if metric in r["test"]]
            if not picked:
                continue
            labels = [r["model"] for r in picked]
            means = [r["test"][metric][0] for r in picked]
            stds = [r["test"][metric][1] for r in picked]
            fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(picked)), 3.2))
            ax.bar(range(len(picked)), means, yerr=stds, capsize=4,
                   color="#4878A8")
            ax.set_xticks(range(len(picked)))
            ax.set_xticklabels(labels, rotation=30, ha="right")
            ax.set_ylabel(f"test {metric}")
            ax.set_title(ds)
            fig.tight_layout()
            path = out_dir / f"bars_{_slug(ds)}_{_slug(metric)}.png"
            fig.savefig(path, metadata=meta)
            plt.close(fig)
            paths.append(str(path))

    for row in rows:
        curves = _val_curves(row["dir"])
        if not curves:
            continue
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for seed, losses in curves:
            ax.plot(range(len(losses)), losses, label=f"seed {seed}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation loss")
        ax.set_title(f"{row['dataset']} / {row['model']}")
        ax.legend(fontsize="small")
        fig.tight_layout()
        meta = {"config": row["config_hash"]} if row["config_hash"] else None
        path = out_dir / f"curves_{_slug(Path(row['dir']).name)}.png"
        fig.savefig(path, metadata=meta)
        plt.close(fig)
        paths.append(str(path))
    return paths


def _val_curves(run_dir):
    curves = []
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        return curves
    for entry in sorted(os.listdir(run_dir)):
        if not entry.startswith("seed_"):
            continue
        log_path = run_dir / entry / "epochs.jsonl"
        if not log_path.is_file():
            continue
        losses = []
        with open(log_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    losses.append(json.loads(line)["val_loss"])
        if losses:
            curves.append((entry[len("seed_"):], losses))
    return curves


def write_report(run_dirs, out_dir, fmt="csv", mixed=False, figures=True):
    """Aggregate runs, write the table plus figures, return a manifest dict."""
    if fmt not in ("csv", "markdown"):
        raise DataError(f"unknown report format {fmt!r}")
    rows, warnings = collect_runs(run_dirs, mixed=mixed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = render_csv(rows) if fmt == "csv" else render_markdown(rows)
    table_path = out_dir / ("report.csv" if fmt == "csv" else "report.md")
    table_path.write_text(text)
    figure_paths = render_figures(rows, out_dir) if figures and rows else []
    return {
        "rows": rows,
        "warnings": warnings,
        "table": str(table_path),
        "figures": figure_paths,
        "text": text,
    }
