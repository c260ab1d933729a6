"""Figures drawn next to the CSV output of each command.

Plotting never feeds back into results: every figure is rebuilt from rows
that were already written.  The Agg backend keeps this headless.
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}

MODE_LABELS = {"unprojected": "unprojected", "onto_P": "onto P", "onto_P_perp": "onto P-perp"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_trace(trace, path, threshold=None):
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        ax1.plot(trace.step, trace.loss)
        ax1.set_yscale("log")
        ax1.set_xlabel("step")
        ax1.set_ylabel("loss")
        ax2.plot(trace.step, trace.margin, label="margin")
        if threshold is not None:
            ax2.axhline(threshold, color="grey", ls="--", lw=0.8, label="log^2 d")
        ax2.set_xlabel("step")
        ax2.set_ylabel("min y N(x)")
        ax2.legend()
        return _save(fig, path)


def plot_distance_sweep(rows, key, path, xlabel=None, log_x=True):
    """Mean attack distance per mode against ``key`` with one-std error bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for mode, label in MODE_LABELS.items():
            sel = [r for r in rows if r["mode"] == mode]
            if not sel:
                continue
            xs = [r[key] for r in sel]
            if log_x and min(xs) <= 0:
                log_x = False
            ax.errorbar(xs, [r["mean_norm"] for r in sel], yerr=[r["std_norm"] for r in sel],
                        marker="o", ms=3, capsize=2, label=label)
        if log_x:
            ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel(xlabel or key)
        ax.set_ylabel("perturbation norm")
        ax.legend()
        return _save(fig, path)


def plot_pca(rows, path, targets=(0.9, 0.95)):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([r["component"] for r in rows], [r["cumulative_variance"] for r in rows])
        for t in targets:
            ax.axhline(t, color="grey", ls=":", lw=0.8)
        ax.set_xlabel("components")
        ax.set_ylabel("cumulative explained variance")
        ax.set_ylim(0, 1.02)
        return _save(fig, path)


def plot_concentration(results, path):
    """Empirical frequency against its bound, one marker per lemma."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = sorted({r.lemma_id for r in results})
        floor = 1e-6
        for name in names:
            sel = [r for r in results if r.lemma_id == name]
            ax.scatter([max(r.bound, floor) for r in sel], [max(r.empirical_freq, floor) for r in sel],
                       s=10, label=name)
        ax.plot([floor, 2.0], [floor, 2.0], color="grey", lw=0.8)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("bound")
        ax.set_ylabel("empirical frequency")
        ax.legend(fontsize=7)
        return _save(fig, path)


def plot_gradient_scan(rows, path):
    """Measured off-subspace gradient norm with its lower and upper bound per seed."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        seeds = [r["seed"] for r in rows]
        ax.plot(seeds, [r["perp_grad"] for r in rows], "o", ms=3, label="measured")
        ax.plot(seeds, [r["lower"] for r in rows], "_", color="C2", label="lower bound")
        ax.plot(seeds, [r["upper"] for r in rows], "_", color="C3", label="upper bound")
        ax.set_xlabel("seed")
        ax.set_ylabel("||P-perp grad N||")
        ax.legend()
        return _save(fig, path)


def plot_attack_scan(rows, path):
    """Perturbation norm against its bound; points below the diagonal respect it."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pts = [r for r in rows if math.isfinite(r["z_norm"])]
        for flag, marker, label in ((True, "o", "flipped"), (False, "x", "not flipped")):
            sel = [r for r in pts if r["flip"] == flag]
            if sel:
                ax.scatter([r["z_bound"] for r in sel], [r["z_norm"] for r in sel], marker=marker, s=12, label=label)
        if pts:
            hi = max(max(r["z_bound"], r["z_norm"]) for r in pts)
            ax.plot([0, hi], [0, hi], color="grey", lw=0.8)
        ax.set_xlabel("norm bound")
        ax.set_ylabel("||z||")
        ax.legend()
        return _save(fig, path)


def plot_rotation(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter([r["out_x"] for r in rows], [r["out_rx"] for r in rows], s=8)
        ax.set_xlabel("N trained on X, at x")
        ax.set_ylabel("N trained on RX, at Rx")
        return _save(fig, path)
