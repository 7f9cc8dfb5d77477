"""Figure rendering for the report path.

Every figure is drawn from the same arrays the CSV emitters write, so the
images never disagree with the delimited output.  matplotlib is imported
lazily with the Agg backend; nothing here requires a display.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def save_variance_figure(path, variance_by_beam: dict) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 4))
    for rx, var in sorted(variance_by_beam.items()):
        ax.plot(np.arange(var.size), var, label=f"rx {rx}", linewidth=1)
    ax.set_xlabel("subcarrier index")
    ax.set_ylabel("phase variance [rad$^2$]")
    ax.set_title("Time-domain variance per subcarrier")
    if len(variance_by_beam) <= 8:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_nve_figure(path, trace: np.ndarray, window_s: float) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 3))
    t = np.arange(trace.size) * window_s
    ax.plot(t, trace, marker="o", markersize=3)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("variance energy")
    ax.set_title("Windowed normalized variance energy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_spectrum_figure(path, freqs: np.ndarray, power: np.ndarray,
                         f_max: float = 3.0) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 3))
    mask = freqs <= f_max
    ax.plot(freqs[mask], power[mask])
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("normalized power")
    ax.set_title("Mean spectrum of selected subcarriers")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_dwt_figure(path, t: np.ndarray, breath: np.ndarray,
                    heart: np.ndarray) -> None:
    plt = _plt()
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(t, breath)
    axes[0].set_ylabel("phase [rad]")
    axes[0].set_title("Breathing-band reconstruction")
    axes[1].plot(t, heart, color="tab:red")
    axes[1].set_ylabel("phase [rad]")
    axes[1].set_xlabel("time [s]")
    axes[1].set_title("Heartbeat-band reconstruction")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_pdp_figure(path, distance_m: np.ndarray, power_db: np.ndarray) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(distance_m, power_db)
    ax.set_xlabel("delay distance [m]")
    ax.set_ylabel("power [dB]")
    ax.set_title("Power delay profile")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
