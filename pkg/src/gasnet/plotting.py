"""PNG figures for the CLI report paths (Agg backend, no display needed)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

HOUR = 3600.0


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_trajectory(traj, path, node_ids, edge_ids, comp_ids, reference=None,
                    max_series: int = 8):
    """Densities, fluxes and ratios over time.

    ``reference`` (another trajectory on the same grid) is drawn with markers.
    Long networks show only the first ``max_series`` nodes and edges.
    """
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    t = traj.times / HOUR
    panels = [(traj.rho, node_ids, "density (kg/m$^3$)", "node"),
              (traj.phi, edge_ids, "flux (kg/m$^2$s)", "edge"),
              (traj.mu, comp_ids, "compressor ratio", "comp")]
    ref = None if reference is None else (reference.rho, reference.phi, reference.mu)
    for n, (ax, (Y, ids, label, tag)) in enumerate(zip(axes, panels)):
        for i, key in enumerate(list(ids)[:max_series]):
            line, = ax.plot(t, Y[:, i], label=f"{tag} {key}",
                            drawstyle="steps-pre" if tag == "comp" else "default")
            if ref is not None:
                ax.plot(t, ref[n][:, i], "o", ms=3, color=line.get_color())
        ax.set_ylabel(label)
        ax.legend(fontsize=6, ncol=4, loc="best")
    axes[-1].set_xlabel("time (h)")
    return _save(fig, path)


def plot_bode(responses: dict, path):
    """Magnitude and phase of the four transfer coefficients per variant."""
    fig, axes = plt.subplots(2, 4, figsize=(13, 5.5), sharex=True)
    for name, fr in responses.items():
        for col, (i, j) in enumerate(((1, 1), (1, 2), (2, 1), (2, 2))):
            axes[0, col].loglog(fr.freqs, fr.magnitude(i, j), label=name)
            axes[1, col].semilogx(fr.freqs, np.degrees(fr.phase(i, j)), label=name)
            axes[0, col].set_title(f"G{i}{j}")
    axes[0, 0].set_ylabel("magnitude")
    axes[1, 0].set_ylabel("phase (deg)")
    for ax in axes[1]:
        ax.set_xlabel("frequency (cyc/hr)")
    axes[0, 0].legend(fontsize=7)
    return _save(fig, path)


def plot_spectrum(eigs, poles, path, asymptotes=None):
    """State-matrix eigenvalues against transfer-function poles."""
    fig, ax = plt.subplots(figsize=(6, 5))
    if eigs is not None and len(eigs):
        e = np.ravel(eigs)
        ax.plot(e.real, e.imag, "x", label="eigenvalues")
    if poles is not None and len(poles):
        p = np.ravel(poles)
        ax.plot(p.real, p.imag, "o", mfc="none", label="pipe poles")
    for c in [] if asymptotes is None else np.unique(np.round(asymptotes, 12)):
        ax.axvline(c, color="0.7", lw=0.8)
    ax.set_xlabel("Re (1/s)")
    ax.set_ylabel("Im (1/s)")
    ax.legend()
    return _save(fig, path)


def plot_bounds(times, e_uniform, e_tv, path, gap=None):
    """Relative error bounds (percent) over time."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    t = np.asarray(times) / 60.0
    ax.semilogy(t, 100 * np.asarray(e_uniform), label="uniform bound")
    ax.semilogy(t, 100 * np.asarray(e_tv), label="time-varying bound")
    if gap is not None:
        ax.semilogy(t, 100 * np.maximum(np.asarray(gap), 1e-16), label="measured gap")
    ax.set_xlabel("time (min)")
    ax.set_ylabel("relative error (%)")
    ax.legend()
    return _save(fig, path)
