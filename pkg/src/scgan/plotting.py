"""Report figures written next to the delimited metric files."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from scgan.data import to_uint8  # noqa: E402
from scgan.evaluation import SCORES, round_half_up  # noqa: E402
from scgan.losses import COMPONENTS  # noqa: E402

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_gradient_maps(images, maps, names, path):
    """Input images (top row) above their gradient maps (bottom row)."""
    n = len(images)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.4), squeeze=False)
        for i, (img, gmap, name) in enumerate(zip(images, maps, names)):
            arr = to_uint8(img)
            axes[0, i].imshow(arr[:, :, 0] if arr.shape[2] == 1 else arr, cmap="gray")
            axes[0, i].set_title(name)
            axes[1, i].imshow(gmap[0].numpy(), cmap="magma", vmin=-1, vmax=1)
            for ax in axes[:, i]:
                ax.set_axis_off()
        fig.tight_layout()
        return _save(fig, path)


def plot_gradient_histogram(magnitudes, names, path, bins=50):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        top = max(float(m.max()) for m in magnitudes) or 1.0
        edges = np.linspace(0, top, bins + 1)
        for mag, name in zip(magnitudes, names):
            ax.hist(mag.numpy().ravel(), bins=edges, histtype="step", label=name)
        ax.set_yscale("log")
        ax.set_xlabel("gradient magnitude (display units)")
        ax.set_ylabel("pixels")
        if len(names) <= 10:
            ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_survey(table, averages, path):
    """Stacked score distribution per method, annotated with the average."""
    methods = list(table.rows)
    dists = np.array([table.rows[m] for m in methods])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 0.5 * len(methods) + 1.2))
        left = np.zeros(len(methods))
        colors = plt.get_cmap("RdYlGn")(np.linspace(0.1, 0.9, len(SCORES)))
        for j, score in enumerate(SCORES):
            ax.barh(methods, dists[:, j], left=left, color=colors[j], label=str(score))
            left += dists[:, j]
        for i, m in enumerate(methods):
            ax.text(1.02, i, f"{round_half_up(averages[m])}", va="center")
        ax.set_xlim(0, 1.12)
        ax.invert_yaxis()
        ax.set_xlabel("fraction of ratings")
        ax.legend(title="score", ncol=len(SCORES), loc="lower center", bbox_to_anchor=(0.5, 1.0), frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_loss_curves(reports, path):
    steps = [r.step for r in reports]
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
        for name in COMPONENTS:
            values = [getattr(r, name) for r in reports]
            if any(values):
                ax1.plot(steps, values, label=name, lw=1)
        ax1.set_xlabel("step")
        ax1.set_ylabel("loss component")
        ax1.legend(frameon=False, fontsize=7)
        ax2.plot(steps, [r.total for r in reports], color="k", lw=1)
        ax2.set_xlabel("step")
        ax2.set_ylabel("total objective")
        fig.tight_layout()
        return _save(fig, path)
