"""Static SVG figures written next to the CSV reports.

SVG output is made byte-stable by fixing the hash salt and dropping the
date metadata.
"""
from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "fracpucci"
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def ratio_vs_sigma(rows: list, path) -> None:
    """Measured ABP ratio against sigma, one line per (instance, h).

    Parameters
    ----------
    rows : list of dict
        Parsed sweep rows (see ``harness.read_sweep_csv``).
    path : str or Path
        Output SVG file.
    """
    groups = defaultdict(list)
    for r in rows:
        if math.isfinite(r["ratio"]):
            groups[(r["instance"], r["h"])].append((r["sigma"], r["ratio"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (name, h), pts in sorted(groups.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{name}, h={h:g}")
    ax.set_xlabel("sigma")
    ax.set_ylabel("-inf u / |f+|_Ln({u<=0})")
    ax.set_yscale("log")
    if groups:
        ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    _save(fig, path)


def decay_plot(profile, path) -> None:
    """Super-level measures and the geometric bound (log scale)."""
    ks = [p.k for p in profile.points]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(ks, [max(p.measure, 1e-300) for p in profile.points], "o-", label="measured")
    ax.plot(ks, [math.exp(max(p.log_bound, -690)) for p in profile.points], "k--", label="bound")
    ax.set_xlabel("k")
    ax.set_ylabel("|{v > M1^k} in Q1|")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def field_plot(values, extent, path, title: str = "") -> None:
    """Heat map of a 2-d lattice field."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(values.T, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
