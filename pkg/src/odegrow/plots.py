"""Figure rendering for fits and battles.

All figures go straight to files through the Agg backend; nothing here
opens a window. SVG output is byte-stable across runs: the hash salt is
pinned, the creation date is suppressed, and text is kept as text.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import BlowUpError, DivergedError, FitResult, FitStatus, Lesion
from .evaluate import BattleReport
from .models import predict
from .solver import SolveConfig

_SVG_RC = {
    "svg.hashsalt": "odegrow",
    "svg.fonttype": "none",
}

CURVE_SAMPLES = 200


def save_figure(fig, path) -> None:
    """Write a figure to path with deterministic SVG output, then close it."""
    path = str(path)
    kwargs = {}
    if path.endswith(".svg"):
        kwargs["metadata"] = {"Date": None}
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, **kwargs)
    plt.close(fig)


def fit_comparison_figure(
    lesion: Lesion,
    fits: dict[str, FitResult],
    solve_config: SolveConfig | None = None,
):
    """Measured points plus one smooth fitted curve per model.

    Calibration points draw as filled diamonds and holdout points as open
    diamonds (every fit shares the same split, so the markers come from the
    first fit's holdout times). Models whose calibration or curve evaluation
    diverged appear in the legend flagged ``(diverged)`` without a curve.
    """
    if not fits:
        raise ValueError("fits must contain at least one model")
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    times = lesion.times_array()
    volumes = lesion.volumes_array()
    first = next(iter(fits.values()))
    holdout_times = set(first.holdout_times)
    hold_mask = np.array([t in holdout_times for t in lesion.times])
    ax.plot(
        times[~hold_mask],
        volumes[~hold_mask],
        "D",
        color="black",
        markersize=5.5,
        linestyle="none",
        label="measured (calibration)",
        zorder=5,
    )
    if hold_mask.any():
        ax.plot(
            times[hold_mask],
            volumes[hold_mask],
            "D",
            markerfacecolor="none",
            markeredgecolor="black",
            markersize=5.5,
            linestyle="none",
            label="measured (holdout)",
            zorder=5,
        )
    origin = float(times[0])
    tau_end = float(times[-1]) - origin
    tau = np.linspace(0.0, tau_end, CURVE_SAMPLES)
    for label, fit in fits.items():
        curve = None
        if fit.status is not FitStatus.DIVERGED:
            try:
                curve = predict(fit.spec, fit.params, tau, solve_config)
            except (BlowUpError, DivergedError):
                curve = None
        if curve is None:
            ax.plot([], [], linestyle="none", label=f"{label} (diverged)")
            continue
        (line,) = ax.plot(origin + tau, curve, label=label, linewidth=1.6)
        line.set_gid(f"curve-{label}")
    ax.set_xlabel("time (days)")
    ax.set_ylabel("volume")
    ax.set_title(f"lesion {lesion.id}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def error_boxplot_figure(report: BattleReport):
    """One box per model over the per-lesion normalized holdout errors."""
    fig, ax = plt.subplots(figsize=(1.0 + 1.1 * len(report.models), 4.5))
    columns = [report.errors[:, i] for i in range(len(report.models))]
    ax.boxplot(columns)
    ax.set_xticks(range(1, len(report.models) + 1))
    ax.set_xticklabels(list(report.models))
    ax.set_ylabel("holdout MAE (normalized)")
    ax.set_title(f"{report.n_lesions_used} lesions")
    plt.setp(ax.get_xticklabels(), rotation=30, ha="right", fontsize=8)
    fig.tight_layout()
    return fig
