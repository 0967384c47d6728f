"""PNG figures for the CLI reports.

Figures are built on :class:`matplotlib.figure.Figure` directly (no pyplot
state) and saved without the software/date metadata so identical inputs give
identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .spd import spd_log, sym_eig
from .spdnet import triu_vec

_SAVE = {"dpi": 100, "format": "png", "metadata": {"Software": None}}
_STYLE = {
    "source": {"color": "tab:blue", "marker": "o"},
    "target": {"color": "tab:orange", "marker": "s", "facecolors": "none", "s": 28},
    "mapped": {"color": "tab:green", "marker": "x"},
}


def _style(name: str) -> dict:
    return {"s": 14, "alpha": 0.85, **_STYLE.get(name, {})}


def _save(fig: Figure, path) -> None:
    fig.savefig(path, **_SAVE)


def log_coordinates(groups: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Project log features of every group onto the two leading principal axes of their union."""
    feats = {k: triu_vec(spd_log(np.asarray(v))).reshape(len(v), -1) for k, v in groups.items()}
    allf = np.concatenate(list(feats.values()))
    mu = allf.mean(axis=0)
    _, _, vt = np.linalg.svd(allf - mu, full_matrices=False)
    axes = vt[:2].T
    if axes.shape[1] < 2:
        axes = np.pad(axes, ((0, 0), (0, 2 - axes.shape[1])))
    # fix the sign of each axis so the projection is reproducible
    signs = np.sign(axes[np.argmax(np.abs(axes), axis=0), range(axes.shape[1])])
    axes = axes * np.where(signs == 0, 1.0, signs)
    return {k: (f - mu) @ axes for k, f in feats.items()}


def write_points(groups: dict[str, np.ndarray], path) -> None:
    """CSV of the plotted point clouds: log-chart coordinates and the two largest eigenvalues."""
    pts = log_coordinates(groups)
    lines = ["group,index,pc1,pc2,lambda1,lambda2"]
    for name, mats in groups.items():
        lam = sym_eig(np.asarray(mats)).eigenvalues
        second = lam[:, 1] if lam.shape[1] > 1 else lam[:, 0]
        for i, (p, l1, l2) in enumerate(zip(pts[name], lam[:, 0], second)):
            lines.append(",".join([name, str(i)] + [repr(float(v)) for v in (p[0], p[1], l1, l2)]))
    Path(path).write_text("\n".join(lines) + "\n")


def plot_log_scatter(groups: dict[str, np.ndarray], path, title: str = "") -> None:
    pts = log_coordinates(groups)
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot()
    for name, p in pts.items():
        ax.scatter(p[:, 0], p[:, 1], label=name, **_style(name))
    ax.set_xlabel("log-coordinate PC1")
    ax.set_ylabel("log-coordinate PC2")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def plot_eigen_pairs(groups: dict[str, np.ndarray], path, title: str = "") -> None:
    """Two largest eigenvalues of every matrix, one point per sample."""
    fig = Figure(figsize=(5, 4))
    ax = fig.add_subplot()
    for name, mats in groups.items():
        lam = sym_eig(np.asarray(mats)).eigenvalues
        second = lam[:, 1] if lam.shape[1] > 1 else lam[:, 0]
        ax.scatter(lam[:, 0], second, label=name, **_style(name))
    ax.set_xlabel(r"$\lambda_1$")
    ax.set_ylabel(r"$\lambda_2$")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def plot_distance_table(table, path) -> None:
    table = np.asarray(table)
    fig = Figure(figsize=(5, 4.2))
    ax = fig.add_subplot()
    im = ax.imshow(table, cmap="viridis")
    rows = np.arange(table.shape[0])
    ax.scatter(np.argmin(table, axis=1), rows, marker="s", facecolors="none", edgecolors="white", s=80)
    ax.set_xlabel("target band")
    ax.set_ylabel("source band")
    fig.colorbar(im, ax=ax, label="LEM distance")
    fig.tight_layout()
    _save(fig, path)


def plot_history(history: list[dict], path) -> None:
    ep = [r["epoch"] for r in history]
    fig = Figure(figsize=(7, 3))
    ax1, ax2 = fig.subplots(1, 2)
    for key in ("ce", "mda", "cda", "total"):
        ax1.plot(ep, [r[key] for r in history], label=key)
    ax1.set_yscale("symlog", linthresh=1e-6)
    ax1.set_xlabel("epoch")
    ax1.legend(frameon=False)
    for key in ("source_acc", "target_acc"):
        ax2.plot(ep, [r[key] for r in history], label=key)
    ax2.set_ylim(-0.05, 1.05)
    ax2.set_xlabel("epoch")
    ax2.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
