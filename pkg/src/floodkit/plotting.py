"""Report figures written straight to files (Agg backend, no display)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "image.origin": "upper",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def depth_map(h, path, title="Water depth (m)", cell_size=1.0):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        rows, cols = np.shape(h)
        ext = (0, cols * cell_size, rows * cell_size, 0)
        im = ax.imshow(np.ma.masked_less_equal(h, 0.0), cmap="Blues", extent=ext)
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(title)
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        return _save(fig, path)


def mass_balance_curve(report, path):
    """Stored volume against the volume implied by the cumulative fluxes."""
    rec = report.records
    t = np.array([r.t for r in rec]) / 3600.0
    stored = np.array([r.stored for r in rec])
    expected = np.array([r.expected(report.initial) for r in rec])
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(2, 1, figsize=(5, 4.5), sharex=True)
        ax.plot(t, stored, label="stored")
        ax.plot(t, expected, "--", label="initial + sources - sinks")
        ax.set_ylabel("volume (m$^3$)")
        ax.legend()
        scale = np.maximum(np.maximum(stored, report.initial), 1e-300)
        ax2.semilogy(t, np.maximum(np.abs(stored - expected) / scale, 1e-18))
        ax2.set_ylabel("relative closure")
        ax2.set_xlabel("time (h)")
        return _save(fig, path)


def flood_map(bits, path, background=None, title="Flood extent"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        if background is not None:
            ax.imshow(background, cmap="gray")
        ax.imshow(np.ma.masked_equal(np.asarray(bits, dtype=float), 0.0), cmap="cool", alpha=0.8, vmin=0, vmax=1)
        ax.set_title(title)
        ax.set_axis_off()
        return _save(fig, path)


def rain_events(report, path):
    days = np.arange(len(report.daily_mm))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(days, report.daily_mm, color="tab:blue", label="daily")
        ax.plot(days, report.two_day_mm, "o-", color="tab:orange", label="2-day")
        ax.axhline(report.policy.daily_mm, color="tab:blue", ls=":", lw=1)
        ax.axhline(report.policy.two_day_mm, color="tab:orange", ls=":", lw=1)
        ax.set_xlabel("day")
        ax.set_ylabel("area-mean rain (mm)")
        ax.legend()
        return _save(fig, path)


def mesh_plot(mesh, path, stride=1):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        x, y = mesh.x, mesh.y
        ax.plot(x[::stride, :], y[::stride, :], "k-", lw=0.4)
        ax.plot(x[:, ::stride].T, y[:, ::stride].T, "k-", lw=0.4)
        ax.set_aspect("equal")
        ax.set_title(f"{mesh.n_eta} x {mesh.n_xi} mesh, min J = {float(mesh.jac.min()):.3g}")
        return _save(fig, path)
