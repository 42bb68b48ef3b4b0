#!/usr/bin/env python3
"""Render the CSV tables of a run directory as PNG figures.

Usage: plot_results.py RUN_DIR [--out DIR]
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def selectors(df, metric):
    suffix = f"_{metric}_mean"
    return [c[: -len(suffix)] for c in df.columns if c.endswith(suffix)]


def line_plot(df, x, metric, xlabel, ylabel, path, logx=False):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for s in selectors(df, metric):
        ax.errorbar(df[x], df[f"{s}_{metric}_mean"], yerr=df[f"{s}_{metric}_sd"],
                    label=s, marker="o", capsize=2)
    if logx:
        ax.set_xscale("log", base=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def confidence_plot(df, path):
    speeds = sorted(df["detector_speed"].unique())
    fig, axes = plt.subplots(1, len(speeds), figsize=(4 * len(speeds), 3.5), squeeze=False)
    for ax, speed in zip(axes[0], speeds):
        part = df[df["detector_speed"] == speed]
        for sel, g in part.groupby("selector"):
            ax.plot(g["step_fraction"], g["confidence_mean"], label=sel)
        ax.set_title(f"{speed:g} fps")
        ax.set_xlabel("episode fraction")
    axes[0][0].set_ylabel("true-class confidence")
    axes[0][-1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def amoc_plot(df, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (speed, sel), g in df.groupby(["detector_speed", "selector"]):
        g = g.sort_values("fpr_mean")
        ax.plot(g["fpr_mean"], g["nt2d_mean"], marker="o", label=f"{sel} @ {speed:g}")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("normalized time to detect")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    out = args.out or args.run_dir
    out.mkdir(parents=True, exist_ok=True)

    def table(name):
        p = args.run_dir / name
        return pd.read_csv(p) if p.exists() else None

    written = []
    if (df := table("accuracy_vs_budget.csv")) is not None:
        line_plot(df, "budget_fraction", "accuracy", "fraction of actions", "accuracy",
                  out / "accuracy_vs_budget.png")
        written.append("accuracy_vs_budget.png")
    if (df := table("accuracy_vs_speed.csv")) is not None:
        line_plot(df, "detector_speed", "accuracy", "detector speed (fps)", "accuracy",
                  out / "accuracy_vs_speed.png", logx=True)
        written.append("accuracy_vs_speed.png")
    if (df := table("confidence_vs_step.csv")) is not None:
        confidence_plot(df, out / "confidence_vs_step.png")
        written.append("confidence_vs_step.png")
    if (df := table("f1_vs_speed.csv")) is not None:
        line_plot(df, "detector_speed", "f1", "detector speed (fps)", "F1",
                  out / "f1_vs_speed.png", logx=True)
        written.append("f1_vs_speed.png")
    if (df := table("cost_vs_speed.csv")) is not None:
        line_plot(df, "detector_speed", "cost", "detector speed (fps)", "detector invocations",
                  out / "cost_vs_speed.png", logx=True)
        written.append("cost_vs_speed.png")
    if (df := table("amoc.csv")) is not None:
        amoc_plot(df, out / "amoc.png")
        written.append("amoc.png")
    if not written:
        raise SystemExit(f"no known CSV tables in {args.run_dir}")
    for w in written:
        print(out / w)


if __name__ == "__main__":
    main()
