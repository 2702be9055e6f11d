"""Cross-run aggregation of summary CSVs into mean/std tables, with
matplotlib figures rendered alongside the delimited output."""
from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .analytics import FluctuationProfile


def read_summary(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for row in csv.DictReader(f):
            rows.append({
                "method": row["method"],
                "seed": int(row["seed"]),
                "round": int(row["round"]),
                "graph_sparsity": float(row["graph_sparsity"]),
                "model_sparsity": float(row["model_sparsity"]),
                "test_acc": float(row["test_acc"]),
                "dense_acc": float(row["dense_acc"]),
                "is_glt": bool(int(row["is_glt"])),
            })
    return rows


def collect_rows(run_dirs: list[str]) -> list[dict]:
    rows = []
    for d in run_dirs:
        path = os.path.join(d, "summary.csv")
        if os.path.isfile(path):
            rows.extend(read_summary(path))
    return rows


def _mean_std(xs: list[float]) -> tuple[float, float]:
    arr = np.asarray(xs, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def aggregate_rounds(rows: list[dict]) -> list[dict]:
    """Per (method, round) mean and std across seeds."""
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        groups[(r["method"], r["round"])].append(r)
    out = []
    for (method, rnd), g in sorted(groups.items()):
        entry = {"method": method, "round": rnd, "n_seeds": len(g)}
        for col in ("graph_sparsity", "model_sparsity", "test_acc"):
            mean, std = _mean_std([x[col] for x in g])
            entry[f"{col}_mean"] = mean
            entry[f"{col}_std"] = std
        out.append(entry)
    return out


def aggregate_tickets(rows: list[dict]) -> list[dict]:
    """Per method: sparsity of the deepest winning round per seed, plus the
    highest accuracy both over all rounds and over winning rounds only."""
    by_method_seed: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        by_method_seed[(r["method"], r["seed"])].append(r)

    per_method: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for (method, _seed), g in sorted(by_method_seed.items()):
        winners = [r for r in g if r["is_glt"]]
        stats = per_method[method]
        stats["highest_acc"].append(max(r["test_acc"] for r in g))
        stats["glt_found"].append(1.0 if winners else 0.0)
        if winners:
            best = max(winners, key=lambda r: r["round"])
            stats["glt_graph_sparsity"].append(best["graph_sparsity"])
            stats["glt_model_sparsity"].append(best["model_sparsity"])
            stats["highest_glt_acc"].append(max(r["test_acc"] for r in winners))

    out = []
    for method, stats in sorted(per_method.items()):
        entry = {"method": method, "n_seeds": len(stats["highest_acc"]),
                 "glt_found_fraction": float(np.mean(stats["glt_found"]))}
        for col in ("glt_graph_sparsity", "glt_model_sparsity", "highest_acc", "highest_glt_acc"):
            if stats[col]:
                mean, std = _mean_std(stats[col])
            else:
                mean, std = float("nan"), float("nan")
            entry[f"{col}_mean"] = mean
            entry[f"{col}_std"] = std
        out.append(entry)
    return out


def write_dicts_csv(rows: list[dict], path: str) -> None:
    if not rows:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n")
        return
    cols = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join(_cell(r[c]) for c in cols) + "\n")


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def plot_accuracy_curves(rows: list[dict], out_path: str, x_col: str = "model_sparsity") -> None:
    """Accuracy against sparsity, one line per method with a std band."""
    agg = aggregate_rounds(rows)
    methods = sorted({r["method"] for r in agg})
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in methods:
        g = [r for r in agg if r["method"] == method]
        g.sort(key=lambda r: r["round"])
        x = np.array([r[f"{x_col}_mean"] for r in g])
        y = np.array([r["test_acc_mean"] for r in g])
        s = np.array([r["test_acc_std"] for r in g])
        ax.plot(x, y, marker="o", markersize=3, label=method)
        ax.fill_between(x, y - s, y + s, alpha=0.2)
    dense = [r["dense_acc"] for r in rows]
    if dense:
        ax.axhline(float(np.mean(dense)), color="gray", linestyle="--", linewidth=1, label="dense")
    ax.set_xlabel(x_col.replace("_", " "))
    ax.set_ylabel("test accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_fluctuation(profile: FluctuationProfile, out_path: str) -> None:
    """Quantile bands of rank drift per stage, edges and weights side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    for ax, side in zip(axes, ("edge", "weight")):
        rows = [s for s in profile.summaries if s.side == side]
        x = np.arange(len(rows))
        ax.plot(x, [s.q50 for s in rows], marker="o", markersize=3, label="median")
        ax.fill_between(x, [s.q10 for s in rows], [s.q90 for s in rows], alpha=0.25, label="q10-q90")
        ax.axhline(0.0, color="gray", linewidth=0.8)
        ax.set_xticks(x)
        ax.set_xticklabels([f"{s.stage_sparsity:.2f}" for s in rows], rotation=45, fontsize=7)
        ax.set_xlabel(f"{side} stage sparsity")
        ax.set_title(f"{side} rank fluctuation")
    axes[0].set_ylabel("rank drift vs final stage")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
