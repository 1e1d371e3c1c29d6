"""Cohort files and synthetic cohort generation.

The on-disk format is a flat CSV with header ``patient_id,time_days,volume``
whose rows may interleave patients; the loader groups by patient in first
appearance order and sorts each series by time. Floats are written with
repr so a load/save cycle is a text fixpoint.

The generator draws model parameters from per-kind ranges, evaluates the
exact trajectory at randomized times starting at day 0, and applies
multiplicative log-normal noise, emitting a ground-truth sidecar next to
the cohort.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import models
from .core import (
    BlowUpError,
    DivergedError,
    EmptyInputError,
    Lesion,
    ModelKind,
    ModelSpec,
    ParseError,
    ValidationError,
    validate_lesion,
)

COHORT_HEADER = ("patient_id", "time_days", "volume")
TRUTH_HEADER = ("patient_id", "param_name", "value")

# Volumes outside this window make a synthetic lesion unusable in practice;
# the generator resamples parameters instead of emitting it.
_VOLUME_WINDOW = (1e-6, 1e6)
_MAX_RESAMPLES = 200

DEFAULT_PARAM_RANGES: dict[str, tuple[float, float]] = {
    "v0": (0.5, 1.5),
    "v_inf": (3.0, 8.0),
    "omega": (0.015, 0.05),
    "lam": (-1.0, 1.5),
    "gamma": (-0.15, 0.15),
    "theta": (-0.1, 0.1),
}


def load_cohort(path) -> list[Lesion]:
    """Read a cohort CSV, group by patient, sort each series by time."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: file is empty")
        if tuple(h.strip() for h in header) != COHORT_HEADER:
            raise ParseError(1, f"header must be {','.join(COHORT_HEADER)!r}, got {header!r}")
        series: dict[str, list[tuple[float, float]]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(line_no, f"expected 3 fields, got {len(row)}")
            pid = row[0].strip()
            if not pid:
                raise ParseError(line_no, "patient_id must be non-empty")
            try:
                t = float(row[1])
                v = float(row[2])
            except ValueError:
                raise ParseError(line_no, f"non-numeric time or volume: {row[1]!r}, {row[2]!r}")
            series.setdefault(pid, []).append((t, v))
    if not series:
        raise EmptyInputError(f"{path}: no measurement rows")
    lesions = []
    for pid, points in series.items():
        points.sort(key=lambda tv: tv[0])
        lesions.append(validate_lesion(pid, [t for t, _ in points], [v for _, v in points]))
    return lesions


def write_cohort(path, lesions: Sequence[Lesion]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(COHORT_HEADER)
        for lesion in lesions:
            for t, v in zip(lesion.times, lesion.volumes):
                writer.writerow([lesion.id, repr(float(t)), repr(float(v))])


def write_truth(path, rows: Sequence[tuple[str, str, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRUTH_HEADER)
        for pid, name, value in rows:
            writer.writerow([pid, name, repr(float(value))])


@dataclass(frozen=True)
class SynthConfig:
    """Controls for one synthetic cohort."""

    kind: ModelKind
    n_lesions: int = 50
    points_per_lesion: int | tuple[int, int] = (6, 12)
    noise_sigma: float = 0.05
    time_span: float = 120.0
    seed: int = 0
    param_ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_lesions < 1:
            raise ValidationError("n_lesions must be positive")
        if self.noise_sigma < 0.0:
            raise ValidationError("noise_sigma must be non-negative")
        if not self.time_span > 0.0:
            raise ValidationError("time_span must be positive")
        lo, hi = self._points_range()
        if lo < 2 or hi < lo:
            raise ValidationError("points_per_lesion must be an int or (lo, hi) with 2 <= lo <= hi")

    def _points_range(self) -> tuple[int, int]:
        if isinstance(self.points_per_lesion, int):
            return self.points_per_lesion, self.points_per_lesion
        lo, hi = self.points_per_lesion
        return int(lo), int(hi)


def _range_for(name: str, overrides: Mapping[str, tuple[float, float]]) -> tuple[float, float]:
    key = "theta" if name.startswith("theta_") else name
    if key in overrides:
        return overrides[key]
    return DEFAULT_PARAM_RANGES[key]


def generate_cohort(config: SynthConfig) -> tuple[list[Lesion], list[tuple[str, str, float]]]:
    """Sample lesions from one generating model.

    Every lesion starts at day 0 (so the generating v0 is directly the first
    noiseless volume), uses its own parameter draw, and carries at least 6
    points under the default range. Returns (lesions, truth_rows) where
    truth_rows hold every generating parameter, one (id, name, value) row
    per parameter.
    """
    spec = ModelSpec.for_kind(config.kind)
    layout = models.param_layout(spec)
    rng = np.random.default_rng(config.seed)
    lo_pts, hi_pts = config._points_range()
    lesions: list[Lesion] = []
    truth: list[tuple[str, str, float]] = []
    lo_v, hi_v = _VOLUME_WINDOW
    for index in range(config.n_lesions):
        lesion_id = f"syn-{index:04d}"
        for _attempt in range(_MAX_RESAMPLES):
            values = [
                rng.uniform(*_range_for(name, config.param_ranges)) for name in layout.names
            ]
            n_pts = int(rng.integers(lo_pts, hi_pts + 1))
            interior = np.sort(
                rng.uniform(0.02 * config.time_span, config.time_span, size=n_pts - 1)
            )
            times = np.concatenate([[0.0], interior])
            if np.any(np.diff(times) <= 0.0):
                continue
            try:
                clean = models.predict(spec, np.asarray(values), times)
            except (BlowUpError, DivergedError):
                continue
            volumes = clean
            if config.noise_sigma > 0.0:
                volumes = clean * np.exp(
                    config.noise_sigma * rng.standard_normal(times.size)
                )
            if np.any(volumes < lo_v) or np.any(volumes > hi_v):
                continue
            lesions.append(validate_lesion(lesion_id, times, volumes))
            truth.extend((lesion_id, name, val) for name, val in zip(layout.names, values))
            break
        else:
            raise ValidationError(
                f"could not draw usable parameters for {lesion_id} "
                f"after {_MAX_RESAMPLES} attempts; widen param_ranges"
            )
    return lesions, truth
