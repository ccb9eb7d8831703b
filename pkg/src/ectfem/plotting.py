"""Figures for impedance traces (written to files, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5) - 1) / 2
WIDTH = 6.0

params = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}


def _fig(nrows=1, ncols=1, height=None):
    with plt.rc_context(params):
        fig, ax = plt.subplots(nrows, ncols, figsize=(WIDTH, height or WIDTH * GOLDEN),
                               constrained_layout=True)
    return fig, ax


def plot_trace(trace, path: str | Path, title: str | None = None) -> Path:
    """Real and imaginary parts of Z_FA and Z_F3 against probe position (mm)."""
    path = Path(path)
    z = trace.z * 1e3
    sig = trace.signals()
    with plt.rc_context(params):
        fig, axes = _fig(2, 1, height=WIDTH * 0.8)
        for ax, col, name in zip(axes, (4, 5), ("$Z_{FA}$", "$Z_{F3}$")):
            ax.plot(z, sig[:, col].real, "o-", label=f"Re {name}")
            ax.plot(z, sig[:, col].imag, "s--", label=f"Im {name}")
            ax.set_ylabel(r"$\Omega$")
            ax.legend(loc="best")
        axes[-1].set_xlabel("probe position z (mm)")
        if title:
            axes[0].set_title(title)
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_impedance_plane(trace, path: str | Path, title: str | None = None) -> Path:
    """Impedance-plane (Lissajous) view: Im Z against Re Z for both modes."""
    path = Path(path)
    sig = trace.signals()
    with plt.rc_context(params):
        fig, ax = _fig(1, 1, height=WIDTH * 0.75)
        for col, name, marker in ((4, "$Z_{FA}$", "o-"), (5, "$Z_{F3}$", "s-")):
            ax.plot(sig[:, col].real, sig[:, col].imag, marker, label=name)
        ax.set_xlabel(r"Re Z ($\Omega$)")
        ax.set_ylabel(r"Im Z ($\Omega$)")
        ax.axhline(0, color="0.5", lw=0.5)
        ax.axvline(0, color="0.5", lw=0.5)
        ax.legend(loc="best")
        if title:
            ax.set_title(title)
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_comparison(traces, labels, path: str | Path) -> Path:
    """Overlay Z_FA and Z_F3 magnitudes of several runs."""
    path = Path(path)
    with plt.rc_context(params):
        fig, axes = _fig(2, 1, height=WIDTH * 0.8)
        for tr, lab in zip(traces, labels):
            sig = tr.signals()
            axes[0].plot(tr.z * 1e3, np.abs(sig[:, 4]), "o-", label=lab)
            axes[1].plot(tr.z * 1e3, np.abs(sig[:, 5]), "o-", label=lab)
        axes[0].set_ylabel(r"$|Z_{FA}|$ ($\Omega$)")
        axes[1].set_ylabel(r"$|Z_{F3}|$ ($\Omega$)")
        axes[1].set_xlabel("probe position z (mm)")
        axes[0].legend(loc="best")
        fig.savefig(path)
    plt.close(fig)
    return path
