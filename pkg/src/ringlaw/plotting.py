"""Matplotlib figures for reports: ring spectra, MSR curves and power-map frames."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import rmt  # noqa: E402

# no timestamps or version strings, so reruns give identical files
PNG_METADATA = {"Software": None}

plt.rcParams.update({"font.size": 9, "figure.max_open_warning": 0})


def save(fig, path, dpi=120):
    fig.savefig(path, dpi=dpi, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def _circle(ax, r, **kw):
    th = np.linspace(0, 2 * np.pi, 361)
    ax.plot(r * np.cos(th), r * np.sin(th), **kw)


def plot_ring(spectrum: rmt.Spectrum, params: rmt.RingParams, path=None, title=None, ax=None):
    """Eigenvalues on the complex plane with the inner, outer and MSR circles."""
    own = ax is None
    if own:
        fig, ax = plt.subplots(figsize=(4, 4))
    ev = spectrum.eigenvalues
    ax.scatter(ev.real, ev.imag, s=4, c="k", lw=0)
    _circle(ax, params.outer_radius, color="0.5", lw=0.8)
    _circle(ax, params.inner_radius, color="tab:red", lw=1.0, label=f"inner {params.inner_radius:.3f}")
    m = rmt.msr(spectrum)
    _circle(ax, m, color="tab:green", lw=1.0, label=f"MSR {m:.3f}")
    ax.set_aspect("equal")
    ax.set_xlim(-1.25, 1.25)
    ax.set_ylim(-1.25, 1.25)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.legend(loc="upper right", fontsize=7, frameon=False)
    if title:
        ax.set_title(title)
    if own:
        fig.tight_layout()
        return save(fig, path) if path else fig
    return ax


def plot_msr_series(series, path=None, events=(), relative=False, title="MSR over time"):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for s in series:
        y = s.relative() if relative else s.values
        style = dict(color="k", lw=1.6) if s.scope == "grid" else dict(lw=0.9)
        ax.plot(s.times, y, label=s.scope, **style)
    for e in events:
        ax.axvline(e.time, color="tab:red", ls=":", lw=0.8)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("relative MSR" if relative else "MSR")
    ax.set_title(title)
    ax.legend(ncol=4, fontsize=7, frameon=False)
    fig.tight_layout()
    return save(fig, path) if path else fig


def plot_frames(frames, value_range, path=None, title=None, surface=True):
    """One panel per frame: 3-D surfaces by default, flat images otherwise."""
    n = len(frames)
    fig = plt.figure(figsize=(2.4 * n, 2.6))
    lo, hi = value_range
    for i, f in enumerate(frames, 1):
        if surface:
            ax = fig.add_subplot(1, n, i, projection="3d")
            h, w = f.shape
            x, y = np.meshgrid(np.arange(w), np.arange(h)[::-1])
            ax.plot_surface(x, y, f.values, cmap="viridis", vmin=lo, vmax=hi, rstride=2, cstride=2, lw=0)
            ax.set_zlim(lo, hi)
            ax.set_xticks([])
            ax.set_yticks([])
            ax.tick_params(labelsize=6)
        else:
            ax = fig.add_subplot(1, n, i)
            ax.imshow(f.values, cmap="viridis", vmin=lo, vmax=hi)
            ax.set_axis_off()
        ax.set_title(f"t = {f.time} s", fontsize=8)
    if title:
        fig.suptitle(title)
    return save(fig, path) if path else fig
