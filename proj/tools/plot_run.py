#!/usr/bin/env python3
"""Render capsim output files to PNG figures.

Usage: plot_run.py <run_dir> [...]
Looks for the known artifact names in each directory and renders whatever it
finds next to the source file.
"""

import csv
import json
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


def plot_trajectory(path):
    rows = read_csv(path)
    t = [float(r["t"]) / 3600.0 for r in rows]
    flow_cols = [c for c in rows[0] if c.startswith("flow_c")]
    fig, axes = plt.subplots(3, 1, figsize=(10, 8), sharex=True)
    axes[0].plot(t, [float(r["pressure"]) for r in rows], lw=0.8)
    axes[0].set_ylabel("pressure [bar]")
    axes[1].plot(t, [float(r["demand"]) for r in rows], lw=0.8, label="demand")
    for col in flow_cols:
        axes[1].plot(t, [float(r[col]) for r in rows], lw=0.8, label=col)
    axes[1].set_ylabel("flow [m3/s]")
    axes[1].legend(fontsize=7)
    axes[2].plot(t, [float(r["reward"]) for r in rows], lw=0.8)
    axes[2].set_ylabel("reward")
    axes[2].set_xlabel("hours")
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


def plot_curve(path):
    rows = read_csv(path)
    it = [int(r["iteration"]) for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(10, 6))
    for ax, col in zip(axes.flat, ["mean_reward", "value_loss", "kl", "clip_fraction"]):
        ax.plot(it, [float(r[col]) for r in rows], lw=0.9)
        ax.set_title(col, fontsize=9)
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


def plot_sweep(path):
    rows = read_csv(path)
    setpoint_cols = [c for c in rows[0] if c.startswith("setpoint_c")]
    pressures = sorted({r["pressure_bar"] for r in rows}, key=float)
    fig, axes = plt.subplots(1, len(setpoint_cols), figsize=(5 * len(setpoint_cols), 4),
                             squeeze=False)
    for k, col in enumerate(setpoint_cols):
        ax = axes[0][k]
        for p in pressures:
            sel = [r for r in rows if r["pressure_bar"] == p]
            ax.plot([float(r["flow_m3s"]) for r in sel], [float(r[col]) for r in sel],
                    lw=0.9, label=f"{float(p):.1f} bar")
        ax.set_xlabel("forecasted flow [m3/s]")
        ax.set_ylabel(col)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


def plot_global(path):
    rows = read_csv(path)
    labels = [r["label"] for r in rows]
    phi = [float(r["mean_abs_phi_norm"]) for r in rows]
    sal = [float(r["saliency_norm"]) for r in rows]
    x = range(len(labels))
    fig, ax = plt.subplots(figsize=(1.2 * len(labels) + 3, 4))
    ax.bar([i - 0.2 for i in x], phi, width=0.4, label="mean |phi| (norm)")
    ax.bar([i + 0.2 for i in x], sal, width=0.4, label="saliency (norm)")
    ax.set_xticks(list(x), labels)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


def plot_pattern(path):
    records = json.loads(path.read_text())
    if not records:
        return
    labels = records[0]["features"]
    fig, axes = plt.subplots(1, len(labels), figsize=(3 * len(labels), 3.2),
                             squeeze=False)
    for j, label in enumerate(labels):
        ax = axes[0][j]
        ax.scatter([r["state"][j] for r in records], [r["phi"][j] for r in records], s=6)
        ax.set_title(label, fontsize=9)
        ax.axhline(0.0, color="gray", lw=0.5)
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


def plot_case(path):
    records = json.loads(path.read_text())
    fig, axes = plt.subplots(3, 3, figsize=(12, 9))
    for ax, rec in zip(axes.flat, records):
        order = rec["waterfall_order"]
        labels = [rec["features"][i] for i in order]
        values = [rec["phi"][i] for i in order]
        ax.barh(range(len(order))[::-1], values,
                color=["tab:red" if v < 0 else "tab:blue" for v in values])
        ax.set_yticks(range(len(order))[::-1], labels, fontsize=7)
        ax.axvline(0.0, color="gray", lw=0.5)
        ax.set_title(f"{rec['pressure_label']}, forecast {rec['forecast_fraction']:.0%}",
                     fontsize=8)
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


def plot_time(path):
    rows = read_csv(path)
    phi_cols = [c for c in rows[0] if c.startswith("phi_")]
    t = [int(r["t"]) for r in rows]
    fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    axes[0].plot(t, [float(r["excitation"]) for r in rows], lw=0.9)
    axes[0].set_ylabel("excitation")
    for col in phi_cols:
        axes[1].plot(t, [float(r[col]) for r in rows], lw=0.9, label=col[4:])
    axes[1].set_ylabel("phi")
    axes[1].set_xlabel("step")
    axes[1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)


HANDLERS = {
    "trajectory.csv": plot_trajectory,
    "curve.csv": plot_curve,
    "sweep.csv": plot_sweep,
    "shap_global.csv": plot_global,
    "shap_pattern.json": plot_pattern,
    "shap_case.json": plot_case,
    "shap_time_demand.csv": plot_time,
    "shap_time_pressure.csv": plot_time,
}


def main(argv):
    if len(argv) < 2:
        print(__doc__)
        return 2
    for run_dir in argv[1:]:
        base = pathlib.Path(run_dir)
        for name, handler in HANDLERS.items():
            path = base / name
            if path.exists():
                handler(path)
                print(f"rendered {path.with_suffix('.png')}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
