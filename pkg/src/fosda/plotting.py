"""Figures rendered to files: AUC box plots of experiment results."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .eval import ResultTable  # noqa: E402

METHOD_STYLE = {
    "FLDA": {"label": "FLDA", "color": "#1f77b4"},
    "FPCA_LDA": {"label": "FPCA+LDA", "color": "#ff7f0e"},
}


def auc_boxplot(table: ResultTable, path, title: str | None = None) -> None:
    """One panel per alpha, box plots of test AUC grouped by training size.

    The output format follows the file extension; SVG output carries no
    timestamp so identical tables give identical files.
    """
    cells = table.cells()
    alphas = sorted({a for _, a, _ in cells})
    ns = sorted({n for _, _, n in cells})
    methods = [m for m in METHOD_STYLE if any(k[0] == m for k in cells)]
    fig, axes = plt.subplots(1, len(alphas), figsize=(4.0 * len(alphas), 3.6), sharey=False, squeeze=False)
    width = 0.8 / max(len(methods), 1)
    for ax, alpha in zip(axes[0], alphas):
        for j, m in enumerate(methods):
            data = [cells.get((m, alpha, n), np.array([np.nan])) for n in ns]
            pos = np.arange(len(ns)) + (j - (len(methods) - 1) / 2) * width
            bp = ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True, manage_ticks=False)
            for box in bp["boxes"]:
                box.set_facecolor(METHOD_STYLE[m]["color"])
                box.set_alpha(0.6)
        ax.set_xticks(np.arange(len(ns)))
        ax.set_xticklabels([str(n) for n in ns])
        ax.set_xlabel("n")
        ax.set_title(f"alpha = {alpha:g}")
        ax.grid(axis="y", alpha=0.3)
    axes[0][0].set_ylabel("test AUC")
    handles = [plt.Rectangle((0, 0), 1, 1, color=METHOD_STYLE[m]["color"], alpha=0.6) for m in methods]
    fig.legend(handles, [METHOD_STYLE[m]["label"] for m in methods], loc="upper right", frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    metadata = {"Date": None} if str(path).lower().endswith(".svg") else None
    if metadata is not None:
        plt.rcParams["svg.hashsalt"] = "fosda"
    fig.savefig(path, metadata=metadata)
    plt.close(fig)
