"""Delimited output and figure rendering for the CLI report paths.

CSV files are the deterministic contract (fixed %.17g float formatting, LF
line endings); the PNG figures next to them are derived views for quick
inspection and carry no reproducibility guarantee.
"""

from __future__ import annotations

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(format_value(v) for v in row) + "\n")


def convergence_figure(path, epsilons, errors, limit, title) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    eps = np.asarray(epsilons, dtype=float)
    err = np.maximum(np.asarray(errors, dtype=float), 1e-18)
    ax.loglog(eps, err, "o-", color="tab:blue")
    ax.invert_xaxis()
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel("absolute error")
    ax.set_title(f"{title} (limit = {limit:.6g})", fontsize=10)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def history_figure(path, history, title) -> None:
    its = [h[0] for h in history]
    energies = [h[1] for h in history]
    residuals = [max(h[2], 1e-18) for h in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
    ax1.plot(its, energies, "-", color="tab:blue")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("energy")
    ax1.grid(alpha=0.3)
    ax2.semilogy(its, residuals, "-", color="tab:red")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("projected-gradient RMS")
    ax2.grid(alpha=0.3)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def tensor_figure(path, tensor, title) -> None:
    fig, ax = plt.subplots(figsize=(4.0, 3.4))
    im = ax.imshow(tensor, cmap="viridis")
    d = tensor.shape[0]
    for i in range(d):
        for j in range(d):
            ax.text(j, i, f"{tensor[i, j]:.4g}", ha="center", va="center",
                    color="white", fontsize=9)
    ax.set_xticks(range(d))
    ax.set_yticks(range(d))
    ax.set_title(title, fontsize=10)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def image_figure(path, image, title, extent=None) -> None:
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    kwargs = {"cmap": "gray", "interpolation": "nearest"}
    if extent is not None:
        kwargs["extent"] = extent
    ax.imshow(image, **kwargs)
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def table_figure(path, labels, values, title) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(range(len(values)), values, "o-", color="tab:green")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("homogenized density")
    ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
