"""Static SVG figures: one estimation trial, and RPI-versus-parameter sweeps."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import METHODS, QUANTITIES  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "opo-estim"

COLORS = {"truth": "black", "KF": "tab:green", "dual-KF": "tab:red", "joint-EKF": "tab:blue"}
LABELS = {"eps": r"$\epsilon$", "q": "q", "p": "p"}
PARAM_LABELS = {"T": "transmittance T", "g": "diffusion g", "c": "tendency constant c"}


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_trial(trial, config, path, banner=(), max_points=4000):
    """Pump, q and p paths of one trial for the truth, the KF baseline and both estimators."""
    traj, outputs = trial.trajectory, trial.outputs
    stride = max(1, len(traj.times) // max_points)
    t = traj.times[::stride]
    truth = {"eps": traj.epsilon_true, "q": traj.x_truth[:, 0], "p": traj.x_truth[:, 1]}

    fig, axes = plt.subplots(3, 1, figsize=(8, 8), sharex=True)
    for ax, quantity in zip(axes, QUANTITIES):
        ax.plot(t, truth[quantity][::stride], color=COLORS["truth"], lw=0.8, label="truth")
        for name in ("KF", *METHODS):
            out = outputs[name]
            series = out.eps if quantity == "eps" else out.means[:, QUANTITIES.index(quantity) - 1]
            label = name
            if name in METHODS:
                label += f" (RPI {100 * trial.rpis[(name, quantity)]:.1f}%)"
            ax.plot(t, series[::stride], color=COLORS[name], lw=0.8, label=label)
        ax.set_ylabel(LABELS[quantity])
        ax.legend(loc="upper right", fontsize=7)
    axes[-1].set_xlabel("t (s)")
    title = f"trial {trial.index}, seed {config.master_seed}"
    if banner:
        title = "\n".join([*banner, title])
    axes[0].set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(result, path):
    """Mean RPI with SEM error bars against the swept parameter."""
    fig, axes = plt.subplots(3, 1, figsize=(6, 8), sharex=True)
    x = np.asarray(result.values)
    for ax, quantity in zip(axes, QUANTITIES):
        for method in METHODS:
            means, sems = result.series(method, quantity)
            ax.errorbar(x, 100 * means, yerr=100 * np.nan_to_num(sems), marker="o", ms=3,
                        capsize=2, color=COLORS[method], label=method)
        ax.set_ylabel(f"RPI {LABELS[quantity]} (%)")
        ax.legend(fontsize=7)
    axes[-1].set_xlabel(PARAM_LABELS.get(result.param, result.param))
    if result.warnings:
        axes[0].set_title("\n".join(result.warnings), fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
