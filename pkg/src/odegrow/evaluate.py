"""Holdout evaluation and head-to-head model comparison.

A lesion needs at least 6 measurements to enter an evaluation; the last two
(by time) are withheld and the rest calibrate each candidate model. Models
are scored by mean absolute holdout error on normalized volumes, and every
model pair is compared through a percentile bootstrap interval for the mean
of their paired per-lesion error differences.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np

from . import calibrate, models
from .calibrate import CalibrationConfig
from .core import (
    EmptyInputError,
    FitStatus,
    Lesion,
    ModelKind,
    ModelSpec,
    NoUsableLesionsError,
    TooFewMeasurementsError,
    ValidationError,
)
from .core import FitResult
from .solver import SolveConfig

MIN_POINTS_FOR_EVAL = 6
HOLDOUT_POINTS = 2

VERDICT_DRAW = "draw"
VERDICT_WIN_A = "winA"
VERDICT_WIN_B = "winB"


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 2000
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if self.n_resamples < 1:
            raise ValidationError("n_resamples must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must lie in (0, 1)")


def split_holdout(lesion: Lesion) -> tuple[Lesion, Lesion]:
    """Calibration lesion (all but the last two points) and holdout lesion.

    Raises TooFewMeasurementsError below 6 points, leaving at least 4 points
    for calibration and exactly 2 for the holdout.
    """
    if lesion.n_points < MIN_POINTS_FOR_EVAL:
        raise TooFewMeasurementsError(
            f"lesion {lesion.id!r} has {lesion.n_points} measurements; "
            f"evaluation needs at least {MIN_POINTS_FOR_EVAL}"
        )
    cut = lesion.n_points - HOLDOUT_POINTS
    calibration = Lesion(lesion.id, lesion.times[:cut], lesion.volumes[:cut])
    holdout = Lesion(lesion.id, lesion.times[cut:], lesion.volumes[cut:])
    return calibration, holdout


def holdout_mae(fit: FitResult, holdout: Lesion) -> float:
    """Mean absolute holdout error on volumes normalized like calibration."""
    if fit.holdout_times == holdout.times and fit.holdout_abs_errors:
        errors = np.asarray(fit.holdout_abs_errors)
    else:
        tau = holdout.times_array() - fit.time_origin
        pred = models.predict(fit.spec, fit.params.as_array(), tau)
        errors = np.abs(pred - holdout.volumes_array())
    return float(errors.mean() / fit.volume_scale)


def bootstrap_ci(
    differences, n_resamples: int = 2000, alpha: float = 0.05, seed: int = 0
) -> tuple[float, float]:
    """Seeded percentile bootstrap interval for the mean of the sample."""
    d = np.asarray(differences, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise EmptyInputError("bootstrap_ci needs a non-empty 1-d sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d.size, size=(n_resamples, d.size))
    means = d[idx].mean(axis=1)
    lo = float(np.quantile(means, alpha / 2.0))
    hi = float(np.quantile(means, 1.0 - alpha / 2.0))
    return lo, hi


@dataclass(frozen=True)
class MatchResult:
    ci_low: float
    ci_high: float
    verdict: str


@dataclass(frozen=True)
class BattleReport:
    """Cohort-level comparison of a set of models."""

    models: tuple[ModelKind, ...]
    param_counts: tuple[int, ...]
    lesion_ids: tuple[str, ...]
    errors: np.ndarray  # (n_lesions, n_models) normalized holdout MAE
    mean_errors: tuple[float, ...]
    pairwise: dict[tuple[ModelKind, ModelKind], MatchResult]
    n_lesions_used: int
    n_discarded: int
    n_rejected: int
    seed: int

    def ranking(self) -> list[tuple[ModelKind, float, int]]:
        """(model, mean error, parameter count), best first."""
        order = sorted(
            range(len(self.models)),
            key=lambda i: (self.mean_errors[i], self.models[i].value),
        )
        return [(self.models[i], self.mean_errors[i], self.param_counts[i]) for i in order]


def _derive_seed(master: int, tag: str) -> int:
    mixed = (int(master) & 0xFFFFFFFF) * 0x9E3779B1 + zlib.crc32(tag.encode("utf-8"))
    return mixed & 0x7FFFFFFFFFFFFFFF


def _fit_lesion_job(args) -> tuple[str, list[tuple[str, float]]]:
    """Fit every candidate model to one lesion. Top level so pools can pickle it."""
    calibration, holdout, specs, config, solve_config, lesion_seed = args
    outcomes: list[tuple[str, float]] = []
    cfg = dataclasses.replace(config, seed=lesion_seed)
    for spec in specs:
        result = calibrate.fit(spec, calibration, cfg, solve_config, holdout=holdout)
        if result.status is FitStatus.DIVERGED:
            outcomes.append((result.status.value, float("nan")))
        else:
            outcomes.append((result.status.value, holdout_mae(result, holdout)))
    return calibration.id, outcomes


def battle(
    lesions,
    specs,
    calibration: CalibrationConfig | None = None,
    solve_config: SolveConfig | None = None,
    bootstrap: BootstrapConfig | None = None,
    seed: int = 0,
    workers: int = 1,
) -> BattleReport:
    """Calibrate every model to every admissible lesion and compare them.

    Lesions with fewer than 6 points are rejected up front; lesions where
    any model diverges are discarded entirely so each comparison uses the
    same lesion set. Per-lesion fit seeds derive from the lesion id and the
    master seed, so results do not depend on worker scheduling.
    """
    specs = [s if isinstance(s, ModelSpec) else ModelSpec.for_kind(s) for s in specs]
    if len(specs) < 2:
        raise ValidationError("battle needs at least two models to compare")
    kinds = tuple(s.kind for s in specs)
    if len(set(kinds)) != len(kinds):
        raise ValidationError("battle models must be distinct")
    calibration = calibration or CalibrationConfig()
    solve_config = solve_config or SolveConfig()
    bootstrap = bootstrap or BootstrapConfig()

    admitted: list[tuple[Lesion, Lesion]] = []
    n_rejected = 0
    for lesion in lesions:
        try:
            cal, hold = split_holdout(lesion)
        except TooFewMeasurementsError:
            n_rejected += 1
            continue
        admitted.append((cal, hold))
    if not admitted:
        raise NoUsableLesionsError("no lesion passed the 6-measurement admission rule")

    jobs = [
        (cal, hold, specs, calibration, solve_config, _derive_seed(seed, f"lesion:{cal.id}"))
        for cal, hold in admitted
    ]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_fit_lesion_job, jobs))
    else:
        raw = [_fit_lesion_job(job) for job in jobs]
    by_id = dict(raw)

    kept_ids: list[str] = []
    rows: list[list[float]] = []
    n_discarded = 0
    for cal, _hold in admitted:
        outcomes = by_id[cal.id]
        if any(status == FitStatus.DIVERGED.value for status, _ in outcomes):
            n_discarded += 1
            continue
        kept_ids.append(cal.id)
        rows.append([mae for _, mae in outcomes])
    if not rows:
        raise NoUsableLesionsError(
            f"every admitted lesion was discarded ({n_discarded} divergences)"
        )

    errors = np.asarray(rows, dtype=np.float64)
    mean_errors = tuple(float(x) for x in errors.mean(axis=0))

    pairwise: dict[tuple[ModelKind, ModelKind], MatchResult] = {}
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            a, b = kinds[i], kinds[j]
            diffs = errors[:, i] - errors[:, j]
            if diffs.size < 2:
                # a single paired difference carries no spread to resample;
                # call it a draw with the degenerate point interval
                lo = hi = float(diffs[0])
                verdict = VERDICT_DRAW
            else:
                lo, hi = bootstrap_ci(
                    diffs,
                    bootstrap.n_resamples,
                    bootstrap.alpha,
                    _derive_seed(seed, f"pair:{a.value}|{b.value}"),
                )
                if hi < 0.0:
                    verdict = VERDICT_WIN_A
                elif lo > 0.0:
                    verdict = VERDICT_WIN_B
                else:
                    verdict = VERDICT_DRAW
            pairwise[(a, b)] = MatchResult(lo, hi, verdict)
            mirrored = (
                VERDICT_DRAW
                if verdict == VERDICT_DRAW
                else (VERDICT_WIN_B if verdict == VERDICT_WIN_A else VERDICT_WIN_A)
            )
            pairwise[(b, a)] = MatchResult(-hi, -lo, mirrored)

    return BattleReport(
        models=kinds,
        param_counts=tuple(s.param_count for s in specs),
        lesion_ids=tuple(kept_ids),
        errors=errors,
        mean_errors=mean_errors,
        pairwise=pairwise,
        n_lesions_used=len(kept_ids),
        n_discarded=n_discarded,
        n_rejected=n_rejected,
        seed=seed,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def ranking_csv(report: BattleReport) -> str:
    lines = ["model,mean_abs_error,num_parameters"]
    for kind, err, count in report.ranking():
        lines.append(f"{kind.value},{_fmt(err)},{count}")
    return "\n".join(lines) + "\n"


def matchups_csv(report: BattleReport) -> str:
    """Wide matrix with verdict[low,high] cells, row model versus column model."""
    names = [k.value for k in report.models]
    lines = ["model," + ",".join(names)]
    for i, a in enumerate(report.models):
        cells = []
        for j, b in enumerate(report.models):
            if i == j:
                cells.append("")
                continue
            match = report.pairwise[(a, b)]
            cells.append(f'"{match.verdict}[{_fmt(match.ci_low)},{_fmt(match.ci_high)}]"')
        lines.append(f"{a.value}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def per_lesion_errors_csv(report: BattleReport) -> str:
    names = [k.value for k in report.models]
    lines = ["lesion_id," + ",".join(names)]
    for row, lesion_id in enumerate(report.lesion_ids):
        vals = ",".join(_fmt(report.errors[row, col]) for col in range(len(names)))
        lines.append(f"{lesion_id},{vals}")
    return "\n".join(lines) + "\n"
