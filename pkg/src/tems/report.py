"""Delimited outputs and figure rendering for experiment reports.

Column orders are fixed and documented in the README:
  volume summaries : spec,tube_kind,N_r,volume,stderr,samples
  trajectories     : run,t,x1..xn,u1..um,value,status,time
  timing           : label,tube_kind,N_p,N_r,rows,vars,recursion_rows_per_step,solves,mean_s,median_s,p90_s
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_volume_csv(path: str, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["spec", "tube_kind", "N_r", "volume", "stderr", "samples"])
        for r in rows:
            w.writerow([r["spec"], r["tube_kind"], r["N_r"],
                        f"{r['volume']:.4f}", f"{r['stderr']:.4f}", r["samples"]])


def write_trajectories_csv(path: str, logs: list) -> None:
    if not logs:
        return
    n_x = len(logs[0].states[0])
    n_u = len(logs[0].inputs[0]) if logs[0].inputs else 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "t"] + [f"x{i+1}" for i in range(n_x)]
                   + [f"u{i+1}" for i in range(n_u)] + ["value", "status", "time"])
        for run, log in enumerate(logs):
            for t, status in enumerate(log.statuses):
                x = log.states[t]
                if status == "Optimal":
                    u = log.inputs[t]
                    val = f"{log.values[t]:.6g}"
                else:
                    u = [float("nan")] * n_u
                    val = ""
                w.writerow([run, t] + [f"{v:.6g}" for v in x]
                           + [f"{v:.6g}" for v in np.atleast_1d(u)]
                           + [val, status, f"{log.per_step_times[t]:.6g}"])


def write_timing_csv(path: str, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "tube_kind", "N_p", "N_r", "rows", "vars",
                    "recursion_rows_per_step", "solves", "mean_s", "median_s", "p90_s"])
        for r in rows:
            w.writerow([r["label"], r["tube_kind"], r["N_p"], r["N_r"],
                        r["num_rows"], r["num_vars"], r["tube_recursion_rows_per_step"],
                        r["solves"], f"{r['mean_s']:.6g}", f"{r['median_s']:.6g}",
                        f"{r['p90_s']:.6g}"])


def fig_volumes(path: str, rows: list) -> None:
    """Feasible-domain volume against the robust horizon, one line per tube
    kind; the no-invariant-tube baselines appear as flat dashed lines."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    kinds = sorted({r["tube_kind"] for r in rows if r["spec"].startswith("tems")})
    for kind in kinds:
        pts = sorted((r["N_r"], r["volume"], r["stderr"]) for r in rows
                     if r["tube_kind"] == kind and r["spec"].startswith("tems"))
        if not pts:
            continue
        nr, vol, err = zip(*pts)
        ax.errorbar(nr, vol, yerr=err, marker="o", capsize=3, label=kind)
    for r in rows:
        if r["spec"].startswith("tube_mpc"):
            ax.axhline(r["volume"], linestyle="--", linewidth=0.8, alpha=0.6)
            ax.annotate(f"no invariant tube ({r['tube_kind']})",
                        (0.02, r["volume"]), fontsize=7, alpha=0.7,
                        xycoords=("axes fraction", "data"), va="bottom")
    ax.set_xlabel("robust horizon $N_r$")
    ax.set_ylabel("feasible-domain volume")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_trajectories(path: str, logs: list, state_labels=None, input_labels=None) -> None:
    """Overlaid closed-loop runs, one panel per state plus the input."""
    if not logs:
        return
    n_x = len(logs[0].states[0])
    n_u = len(np.atleast_1d(logs[0].inputs[0])) if logs[0].inputs else 1
    state_labels = state_labels or [f"x{i+1}" for i in range(n_x)]
    input_labels = input_labels or [f"u{i+1}" for i in range(n_u)]
    fig, axes = plt.subplots(n_x + n_u, 1, figsize=(7, 1.9 * (n_x + n_u)), sharex=True)
    for log in logs:
        X = np.array(log.states)
        for i in range(n_x):
            axes[i].plot(X[:, i], linewidth=0.5, alpha=0.4, color="tab:blue")
        if log.inputs:
            U = np.array([np.atleast_1d(u) for u in log.inputs])
            for i in range(n_u):
                axes[n_x + i].plot(U[:, i], linewidth=0.5, alpha=0.4, color="tab:orange")
    for i in range(n_x):
        axes[i].set_ylabel(state_labels[i])
        axes[i].grid(alpha=0.3)
    for i in range(n_u):
        axes[n_x + i].set_ylabel(input_labels[i])
        axes[n_x + i].grid(alpha=0.3)
    axes[-1].set_xlabel("time step")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def fig_timing(path: str, rows: list) -> None:
    """Median solve time against the prediction horizon, linear and log axes,
    one line per robust-horizon setting."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    groups: dict = {}
    for r in rows:
        groups.setdefault(r["N_r"] if r["N_r"] < r["N_p"] else "full", []).append(r)
    for key, grp in sorted(groups.items(), key=lambda t: str(t[0])):
        grp = sorted(grp, key=lambda r: r["N_p"])
        np_vals = [r["N_p"] for r in grp]
        med = [r["median_s"] for r in grp]
        label = f"N_r={key}" if key != "full" else "N_r=N_p"
        for ax in axes:
            ax.plot(np_vals, med, marker="o", label=label)
    axes[0].set_title("linear scale")
    axes[1].set_yscale("log")
    axes[1].set_title("log scale")
    for ax in axes:
        ax.set_xlabel("prediction horizon $N_p$")
        ax.set_ylabel("median solve time [s]")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
