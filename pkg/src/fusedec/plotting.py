"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# drop the version-dependent Software key so figures are byte-stable
_PNG_META = {"Software": None}

PANELS = (("bleu", "BLEU"), ("accuracy", "Gender accuracy (%)"), ("hmean", "Harmonic mean"))


def _grid(points, attr: str):
    ilm = sorted({p.weights.beta_ilm for p in points})
    elm = sorted({p.weights.beta_elm for p in points})
    z = np.full((len(elm), len(ilm)), np.nan)
    for p in points:
        v = getattr(p, attr)
        if v is None:
            continue
        if attr == "accuracy":
            v = 100.0 * v
        z[elm.index(p.weights.beta_elm), ilm.index(p.weights.beta_ilm)] = v
    return np.array(ilm), np.array(elm), z


def plot_heatmaps(points: Sequence, path: str | Path, title: str | None = None) -> Path:
    """BLEU / accuracy / harmonic-mean heatmaps over the (beta_ilm, beta_elm) grid."""
    path = Path(path)
    fig, axes = plt.subplots(1, 3, figsize=(13, 4), constrained_layout=True)
    for ax, (attr, label) in zip(axes, PANELS):
        ilm, elm, z = _grid(points, attr)
        step_i = ilm[1] - ilm[0] if len(ilm) > 1 else 1.0
        step_e = elm[1] - elm[0] if len(elm) > 1 else 1.0
        extent = (ilm[0] - step_i / 2, ilm[-1] + step_i / 2, elm[0] - step_e / 2, elm[-1] + step_e / 2)
        im = ax.imshow(z, origin="lower", extent=extent, aspect="auto", cmap="viridis")
        ax.set_xlabel(r"$\beta_{ILM}$")
        ax.set_ylabel(r"$\beta_{ELM}$")
        ax.set_title(label)
        fig.colorbar(im, ax=ax)
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_systems(rows: Sequence[dict], path: str | Path, title: str | None = None) -> Path:
    """Grouped bars of per-gender accuracy for each system and condition.

    ``rows`` carry ``system``, ``condition``, ``accuracy_F`` and ``accuracy_M``.
    """
    path = Path(path)
    conditions = sorted({r["condition"] for r in rows})
    fig, axes = plt.subplots(1, len(conditions), figsize=(6 * len(conditions), 4), squeeze=False,
                             constrained_layout=True)
    for ax, cond in zip(axes[0], conditions):
        sub = [r for r in rows if r["condition"] == cond]
        x = np.arange(len(sub))
        for off, g in ((-0.2, "F"), (0.2, "M")):
            vals = [100.0 * (r[f"accuracy_{g}"] or 0.0) for r in sub]
            ax.bar(x + off, vals, width=0.4, label=g)
        ax.set_xticks(x)
        ax.set_xticklabels([r["system"] for r in sub], rotation=15)
        ax.set_ylim(0, 100)
        ax.set_ylabel("Gender accuracy (%)")
        ax.set_title(cond)
        ax.legend(title="target gender")
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path
