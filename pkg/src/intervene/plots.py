"""Static scatter figures comparing ground truth, baseline and model samples."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

OBS_COLOR = "#40c4b4"  # turquoise
# first and second target get blue / brown, others cycle
TARGET_COLORS = ("#1f4fd1", "#8b5a2b", "#7b3fa0", "#c03030", "#2f8f2f", "#d08a00", "#555555", "#b0306a")
PANELS = (("truth", "Ground truth"), ("baseline", "Conditional baseline"), ("model", "Model"))


def _interventions(group: dict[str, np.ndarray]) -> list[str]:
    return sorted(key.split(" ", 1)[1] for key in group if key.startswith("truth "))


def scatter_instance(group: dict[str, np.ndarray], title: str, path: str | Path, dims=(0, 1)) -> list[Path]:
    """Three panels over two coordinates; writes ``path`` as .png and .svg."""
    a, b = dims
    labels = _interventions(group)
    fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharex=True, sharey=True)
    for ax, (prefix, name) in zip(axes, PANELS):
        obs = group["observational"]
        ax.scatter(obs[:, a], obs[:, b], s=10, color=OBS_COLOR, label="observational")
        for k, label in enumerate(labels):
            pts = group[f"{prefix} {label}"]
            ax.scatter(pts[:, a], pts[:, b], s=10, color=TARGET_COLORS[k % len(TARGET_COLORS)], label=label)
        ax.set_title(name)
        ax.set_xlabel(f"V{a}")
    axes[0].set_ylabel(f"V{b}")
    axes[-1].legend(loc="best", fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    outs = [path.with_suffix(".png"), path.with_suffix(".svg")]
    fig.savefig(outs[0], dpi=100, metadata={"Software": None})
    with plt.rc_context({"svg.hashsalt": "intervene", "svg.fonttype": "path"}):
        fig.savefig(outs[1], metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return outs
