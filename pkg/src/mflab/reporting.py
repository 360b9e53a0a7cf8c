"""Figure rendering for finished runs.

Reads the delimited outputs of a run directory and renders one PNG per
experiment into ``<run_dir>/figures/``.  Figures are a presentation layer
over the CSV tables; nothing here feeds back into experiments or manifests.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _read_csv(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fig_path(run_dir: Path, name: str) -> Path:
    out = run_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _plot_chaos(run_dir: Path, name: str) -> list:
    rows = _read_csv(run_dir / name / "decay.csv")
    ns = [int(r["n"]) for r in rows]
    ds = [float(r["distance"]) for r in rows]
    es = [float(r["se"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(ns, ds, yerr=[3 * e for e in es], marker="o", capsize=3)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("particles n")
    ax.set_ylabel("path-law distance to reference")
    ax.set_title("particle approximation decay")
    ax.grid(True, which="both", alpha=0.3)
    out = _fig_path(run_dir, f"{name}_decay.png")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)

    srows = _read_csv(run_dir / name / "slices.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    by_n: dict = {}
    for r in srows:
        by_n.setdefault(int(r["n"]), []).append((float(r["t"]), float(r["w2_X"])))
    for n, curve in sorted(by_n.items()):
        curve.sort()
        ax.plot([t for t, _ in curve], [w for _, w in curve], marker=".", label=f"n={n}")
    ax.set_xlabel("t")
    ax.set_ylabel("state-space W2 (weak norm)")
    ax.set_title("time-sliced distance to the limit flow")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    out2 = _fig_path(run_dir, f"{name}_slices.png")
    fig.tight_layout()
    fig.savefig(out2, dpi=150)
    plt.close(fig)
    return [out, out2]


def _plot_value(run_dir: Path, name: str) -> list:
    rows = _read_csv(run_dir / name / "gaps.csv")
    ns = [int(r["n"]) for r in rows]
    gaps = [float(r["gap_to_limit"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ns, gaps, marker="o")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("particles n")
    ax.set_ylabel("|V^n - V^limit|")
    ax.set_title("value-function convergence")
    ax.grid(True, which="both", alpha=0.3)
    out = _fig_path(run_dir, f"{name}_gaps.png")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


def _plot_heat(run_dir: Path, name: str) -> list:
    spatial = _read_csv(run_dir / name / "spatial.csv")
    temporal = _read_csv(run_dir / name / "temporal.csv")
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    hs = [float(r["h"]) for r in spatial]
    errs = [float(r["l2_error"]) for r in spatial]
    axes[0].loglog(hs, errs, marker="o", label="measured")
    axes[0].loglog(hs, [errs[0] * (h / hs[0]) ** 2 for h in hs], "--", label="order 2")
    axes[0].set_xlabel("h")
    axes[0].set_ylabel("L2 error")
    axes[0].set_title("spatial")
    axes[0].legend(fontsize=8)
    dts = [float(r["dt"]) for r in temporal]
    terrs = [float(r["l2_error"]) for r in temporal]
    axes[1].loglog(dts, terrs, marker="o", label="measured")
    axes[1].loglog(dts, [terrs[0] * d / dts[0] for d in dts], "--", label="order 1")
    axes[1].set_xlabel("dt")
    axes[1].set_title("temporal")
    axes[1].legend(fontsize=8)
    for ax in axes:
        ax.grid(True, which="both", alpha=0.3)
    out = _fig_path(run_dir, f"{name}_orders.png")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


def _plot_hausdorff(run_dir: Path, name: str) -> list:
    rows = _read_csv(run_dir / name / "decay.csv")
    cont = _read_csv(run_dir / name / "continuity.csv")
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    labels = sorted({r["x_label"] for r in rows})
    for label in labels:
        seq = [(int(r["n"]), float(r["hausdorff"])) for r in rows if r["x_label"] == label]
        seq.sort()
        axes[0].plot([n for n, _ in seq], [h for _, h in seq], marker="o", label=label)
    axes[0].set_xscale("log", base=2)
    axes[0].set_xlabel("particles n")
    axes[0].set_ylabel("Hausdorff distance to reference set")
    axes[0].set_title("set convergence")
    axes[0].legend(fontsize=8)
    for label in sorted({r["x_label"] for r in cont}):
        seq = [(float(r["dx_h"]), float(r["hausdorff"])) for r in cont if r["x_label"] == label]
        seq.sort()
        axes[1].plot([d for d, _ in seq], [h for _, h in seq], marker="o", label=label)
    axes[1].set_xlabel("||x - x'||")
    axes[1].set_title("law-set continuity in x")
    axes[1].legend(fontsize=8)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    out = _fig_path(run_dir, f"{name}_sets.png")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


def _plot_martingale(run_dir: Path, name: str) -> list:
    rows = _read_csv(run_dir / name / "panel.csv")
    rows = [r for r in rows if r["mode"] in ("mckean", "nparticle")]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    idx = range(len(rows))
    ests = [abs(float(r["estimate"])) for r in rows]
    bands = [float(r["band"]) for r in rows]
    ax.bar(idx, ests, width=0.6, label="|estimate|")
    ax.plot(idx, bands, "r_", markersize=14, label="band (3 SE + dt bias)")
    ax.set_yscale("log")
    ax.set_xticks(list(idx))
    ax.set_xticklabels([f"{r['mode'][:2]}:{r['spec']}" for r in rows], rotation=70, fontsize=7)
    ax.set_title("martingale residual panel")
    ax.legend(fontsize=8)
    out = _fig_path(run_dir, f"{name}_panel.png")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


def _plot_conditions(run_dir: Path, name: str) -> list:
    rows = _read_csv(run_dir / name / "inequalities.csv")
    fig, ax = plt.subplots(figsize=(7, 3.5))
    labels = [f"q={r['q']}:{r['condition'][:4]}:{r['inequality'][:12]}" for r in rows]
    viol = [int(r["violations"]) for r in rows]
    colors = ["tab:red" if v > 0 else "tab:green" for v in viol]
    ax.bar(range(len(rows)), [v + 0.1 for v in viol], color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=70, fontsize=6)
    ax.set_ylabel("violations (+0.1)")
    ax.set_title("admissibility checks (green: none)")
    out = _fig_path(run_dir, f"{name}_violations.png")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


_PLOTTERS = {
    "chaos": _plot_chaos,
    "value": _plot_value,
    "heat_oracle": _plot_heat,
    "hausdorff": _plot_hausdorff,
    "martingale": _plot_martingale,
    "condition_check": _plot_conditions,
}


def render_report(run_dir: Path) -> list:
    """Render figures for every plottable experiment found in the manifest."""
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    written = []
    for entry in manifest.get("experiments", []):
        plotter = _PLOTTERS.get(entry["kind"])
        if plotter is None:
            continue
        try:
            written += plotter(run_dir, entry["name"])
        except FileNotFoundError:
            continue
    return written
