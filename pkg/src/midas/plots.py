"""Render the run artifacts (trace.csv, report.csv) as PNG figures.

Pure post-processing: figures are regenerated from the CSV files, never from
in-memory state, so `midas plot` can re-render any finished run directory.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import read_report_csv, read_trace_csv

plt.rcParams["figure.figsize"] = (6.4, 3.6)
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def _column(trace, getter):
    return np.array([getter(row) for row in trace])


def plot_alpha(trace, path) -> None:
    steps = _column(trace, lambda r: r.step)
    m = len(trace[0].alpha)
    fig, ax = plt.subplots()
    for i in range(m):
        ax.plot(steps, _column(trace, lambda r, i=i: r.alpha[i]),
                label=f"modality {i + 1}")
    ax.set_xlabel("step")
    ax.set_ylabel("weak-modality weight")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confidences(trace, path) -> None:
    steps = _column(trace, lambda r: r.step)
    m = len(trace[0].uni_conf)
    fig, ax = plt.subplots()
    for i in range(m):
        ax.plot(steps, _column(trace, lambda r, i=i: r.uni_conf[i]),
                label=f"uni m{i + 1}")
        ax.plot(steps, _column(trace, lambda r, i=i: r.multi_conf[i]),
                linestyle="--", label=f"multi m{i + 1}")
    ax.set_xlabel("step")
    ax.set_ylabel("normalized confidence")
    ax.set_ylim(0, 1)
    ax.legend(ncols=2, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_losses(trace, path) -> None:
    steps = _column(trace, lambda r: r.step)
    fig, ax = plt.subplots()
    for name, getter in (("align", lambda r: r.loss_align),
                         ("uni", lambda r: r.loss_uni),
                         ("mis", lambda r: r.loss_mis),
                         ("total", lambda r: r.loss_total)):
        ax.plot(steps, _column(trace, getter), label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_report(report, path) -> None:
    m = len(report.zero_sub_acc)
    fig, (left, right) = plt.subplots(1, 2, figsize=(7.2, 3.2))
    left.bar(["top-1", "macro F1", "mis top-2"],
             [report.top1_acc, report.macro_f1, report.mis_top2_acc],
             color=["#4477aa", "#66ccee", "#ee6677"])
    left.set_ylabel("%")
    left.set_ylim(0, 100)
    names = [f"m{i + 1}" for i in range(m)]
    right.bar(names, report.zero_sub_acc, color="#228833")
    right.set_ylabel("zero-substitution accuracy (%)")
    right.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_run(run_dir) -> list[str]:
    """Render every figure the run directory's CSVs support; returns paths."""
    written = []
    trace_path = os.path.join(run_dir, "trace.csv")
    if os.path.exists(trace_path):
        trace = read_trace_csv(trace_path)
        if trace:
            for name, fn in (("alpha.png", plot_alpha),
                             ("confidence.png", plot_confidences),
                             ("loss.png", plot_losses)):
                out = os.path.join(run_dir, name)
                fn(trace, out)
                written.append(out)
    report_path = os.path.join(run_dir, "report.csv")
    if os.path.exists(report_path):
        out = os.path.join(run_dir, "report.png")
        plot_report(read_report_csv(report_path), out)
        written.append(out)
    return written
