"""Report figures written to files with the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _slice(values):
    """2D arrays pass through; 3D volumes show their middle slice along the last axis."""
    values = np.asarray(values)
    if values.ndim == 3:
        values = values[:, :, values.shape[2] // 2]
    return values.T  # imshow puts the first axis on rows


def registration_figure(target, source, warped, jacobian, path, title=None):
    fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
    panels = (("target", target.values), ("source", source.values), ("warped source", warped.values))
    for ax, (name, img) in zip(axes, panels):
        ax.imshow(_slice(img), cmap="gray", origin="lower")
        ax.set_title(name)
    det = _slice(jacobian.values)
    spread = max(float(np.abs(det - 1.0).max()), 1e-3)
    im = axes[3].imshow(det, cmap="RdBu_r", vmin=1.0 - spread, vmax=1.0 + spread, origin="lower")
    axes[3].set_title("Jacobian determinant")
    fig.colorbar(im, ax=axes[3], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def energy_figure(traces, path):
    fig, axes = plt.subplots(1, max(len(traces), 1), figsize=(4.5 * max(len(traces), 1), 3.2), squeeze=False)
    for ax, (stage, trace) in zip(axes[0], traces.items()):
        ax.plot(np.arange(len(trace.energies)), trace.energies, marker=".", lw=1)
        ax.set_xlabel("accepted step")
        ax.set_ylabel("energy")
        ax.set_title(stage)
        if min(trace.energies) > 0:
            ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def curve_figure(curve, path):
    sigma = np.array([p.sigma for p in curve])
    mean = np.array([p.mean_tre for p in curve])
    std = np.array([p.std_tre for p in curve])
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    ax.errorbar(sigma, mean, yerr=std, marker="o", capsize=3)
    ax.set_xlabel("landmark perturbation sigma (mm)")
    ax.set_ylabel("validation TRE (mm)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
