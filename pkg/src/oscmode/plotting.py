"""Static SVG figures. Every figure also has a CSV written by the caller.

Output is byte-reproducible: the SVG id salt is fixed, the date stamp is
dropped and text is kept as text rather than glyph paths.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import IoError  # noqa: E402

# fixed mode -> colour mapping so figures from different runs are comparable
MODE_COLORS = {
    "IP": "#1f77b4",
    "AP": "#d62728",
    "DEATH": "#7f7f7f",
    "ROTATION": "#2ca02c",
    "PIP": "#9467bd",
}
CLUSTER_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")

RC = {
    "svg.hashsalt": "oscmode",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def color_for(key, index: int = 0) -> str:
    if isinstance(key, str) and key in MODE_COLORS:
        return MODE_COLORS[key]
    return CLUSTER_COLORS[index % len(CLUSTER_COLORS)]


def _save(fig, path) -> None:
    try:
        fig.savefig(Path(path), format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def latent_cycles(path, cycles: Sequence[np.ndarray], keys: Sequence, title: str = "") -> None:
    """Phase portrait: one polyline per cycle, coloured by mode or cluster id."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 4.5))
        order = sorted({str(k) for k in keys})
        seen = set()
        for i, (cycle, key) in enumerate(zip(cycles, keys)):
            cycle = np.asarray(cycle)
            label = str(key)
            line, = ax.plot(cycle[:, 0], cycle[:, 1], lw=0.8, alpha=0.8,
                            color=color_for(key, order.index(label)),
                            label=label if label not in seen else None)
            line.set_gid(f"cycle-{i}")
            seen.add(label)
        ax.set_xlabel("z1")
        ax.set_ylabel("z2")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def wd_scores(path, indices: Sequence[int], scores: dict[str, Sequence[float]], truth: Optional[Sequence] = None) -> None:
    """WD to each mode's benchmark against circle index."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for j, (mode, values) in enumerate(sorted(scores.items())):
            ax.plot(indices, values, marker="o", ms=3, lw=1.0, color=color_for(mode, j), label=f"to {mode}")
        ax.set_xlabel("circle index")
        ax.set_ylabel("WD")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def mse_curve(path, ks: Sequence[int], pca_mse: Sequence[float], vae_mse: Optional[float] = None) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(ks, pca_mse, marker="o", ms=3, color="#1f77b4", label="PCA")
        if vae_mse is not None:
            ax.axhline(vae_mse, color="#d62728", ls="--", label="VAE (2-D latent)")
        ax.set_xlabel("latent dimension k")
        ax.set_ylabel("reconstruction MSE")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def loss_history(path, epochs, train_loss, val_loss) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(epochs, train_loss, lw=1.0, label="train")
        ax.semilogy(epochs, val_loss, lw=1.0, label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def confusion(path, counts: np.ndarray, names: Sequence[str]) -> None:
    counts = np.asarray(counts)
    with plt.rc_context({**RC, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(names), 1.0 + 0.8 * len(names)))
        ax.imshow(counts, cmap="Blues")
        half = 0.5 * counts.max() if counts.size else 0
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                ax.text(j, i, str(int(counts[i, j])), ha="center", va="center", fontsize=8,
                        color="white" if counts[i, j] > half else "black")
        ax.set_xticks(range(len(names)), names)
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        fig.tight_layout()
        _save(fig, path)


def sensitivity(path, rows: Sequence[dict], metric: str, title: str = "") -> None:
    """Grid heat map of one metric over (batch size, learning rate)."""
    batches = sorted({r["batch_size"] for r in rows})
    rates = sorted({r["learning_rate"] for r in rows})
    grid = np.full((len(batches), len(rates)), np.nan)
    for r in rows:
        v = r.get(metric)
        if v is not None and v == v:
            grid[batches.index(r["batch_size"]), rates.index(r["learning_rate"])] = v
    with plt.rc_context({**RC, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(4.5, 3.8))
        im = ax.imshow(grid, cmap="viridis", vmin=0.0, vmax=1.0)
        for i in range(grid.shape[0]):
            for j in range(grid.shape[1]):
                text = "fail" if np.isnan(grid[i, j]) else f"{grid[i, j]:.3f}"
                dark = not np.isnan(grid[i, j]) and grid[i, j] <= 0.6  # NaN cells render blank
                ax.text(j, i, text, ha="center", va="center", fontsize=7, color="w" if dark else "k")
        ax.set_xticks(range(len(rates)), [f"{r:g}" for r in rates])
        ax.set_yticks(range(len(batches)), [str(b) for b in batches])
        ax.set_xlabel("learning rate")
        ax.set_ylabel("batch size")
        ax.set_title(title or metric)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        _save(fig, path)
