"""Holdout scoring, bootstrap intervals, and cohort battles."""

import numpy as np
import pytest

from odegrow import models
from odegrow.calibrate import CalibrationConfig
from odegrow.core import (
    EmptyInputError,
    Lesion,
    ModelKind,
    ModelSpec,
    NoUsableLesionsError,
    TooFewMeasurementsError,
    ValidationError,
)
from odegrow.data import SynthConfig, generate_cohort
from odegrow.evaluate import (
    BootstrapConfig,
    VERDICT_DRAW,
    VERDICT_WIN_A,
    VERDICT_WIN_B,
    battle,
    bootstrap_ci,
    holdout_mae,
    matchups_csv,
    per_lesion_errors_csv,
    ranking_csv,
    split_holdout,
)
from odegrow.solver import SolveConfig

FAST_CAL = CalibrationConfig(max_iters=800, early_stop_patience=120)
FAST_SOLVE = SolveConfig(steps_per_unit_span=80)


def _lesion(n: int = 8, lesion_id: str = "L") -> Lesion:
    times = tuple(float(5 * i) for i in range(n))
    volumes = tuple(1.0 + 0.45 * i for i in range(n))
    return Lesion(lesion_id, times, volumes)


class TestSplitHoldout:
    def test_keeps_last_two_points_for_holdout(self) -> None:
        lesion = _lesion(8)
        cal, hold = split_holdout(lesion)
        assert cal.n_points == 6
        assert hold.n_points == 2
        assert cal.times == lesion.times[:6]
        assert hold.times == lesion.times[6:]
        assert cal.id == hold.id == lesion.id

    def test_six_points_is_the_admission_floor(self) -> None:
        cal, hold = split_holdout(_lesion(6))
        assert cal.n_points == 4
        with pytest.raises(TooFewMeasurementsError):
            split_holdout(_lesion(5))


class TestHoldoutMae:
    def test_uses_stored_predictions(self) -> None:
        from odegrow.calibrate import fit

        lesion = _lesion(8)
        cal, hold = split_holdout(lesion)
        spec = ModelSpec.for_kind(ModelKind.CLASSICAL_GOMPERTZ)
        result = fit(spec, cal, FAST_CAL, FAST_SOLVE, holdout=hold)
        mae = holdout_mae(result, hold)
        expected = float(np.mean(result.holdout_abs_errors)) / result.volume_scale
        assert mae == pytest.approx(expected, rel=1e-15)
        assert mae >= 0.0


class TestBootstrapCi:
    def test_interval_brackets_the_plain_mean_for_tight_data(self) -> None:
        diffs = np.array([0.5, 0.52, 0.48, 0.5, 0.51, 0.49])
        lo, hi = bootstrap_ci(diffs, seed=1)
        assert lo <= np.mean(diffs) <= hi
        assert lo > 0.0

    def test_symmetric_data_straddles_zero(self) -> None:
        rng = np.random.default_rng(8)
        diffs = rng.standard_normal(60)
        lo, hi = bootstrap_ci(diffs, seed=2)
        assert lo < 0.0 < hi

    def test_seed_reproducibility(self) -> None:
        diffs = np.random.default_rng(3).standard_normal(25)
        assert bootstrap_ci(diffs, seed=11) == bootstrap_ci(diffs, seed=11)
        assert bootstrap_ci(diffs, seed=11) != bootstrap_ci(diffs, seed=12)

    def test_negating_differences_mirrors_the_interval(self) -> None:
        diffs = np.random.default_rng(4).standard_normal(30) + 0.3
        lo, hi = bootstrap_ci(diffs, seed=5)
        nlo, nhi = bootstrap_ci(-diffs, seed=5)
        # same index draws, so the mirror holds up to quantile interpolation
        # rounding (a few ulps)
        assert nlo == pytest.approx(-hi, rel=1e-12)
        assert nhi == pytest.approx(-lo, rel=1e-12)

    def test_interval_narrows_with_sample_size(self) -> None:
        rng = np.random.default_rng(6)
        small = rng.standard_normal(10)
        big = rng.standard_normal(640)
        lo_s, hi_s = bootstrap_ci(small, seed=7)
        lo_b, hi_b = bootstrap_ci(big, seed=7)
        assert (hi_b - lo_b) < (hi_s - lo_s)

    def test_coverage_is_near_nominal(self) -> None:
        # 95% interval for the mean of a skewed distribution: coverage over
        # repeated draws should sit near 0.95 (Monte-Carlo check)
        rng = np.random.default_rng(42)
        n_trials = 200
        hits = 0
        true_mean = 1.0  # exponential distribution with scale 1
        for trial in range(n_trials):
            sample = rng.exponential(1.0, size=40)
            lo, hi = bootstrap_ci(sample, n_resamples=600, seed=trial)
            hits += int(lo <= true_mean <= hi)
        coverage = hits / n_trials
        assert 0.88 <= coverage <= 0.99

    def test_rejects_empty_input(self) -> None:
        with pytest.raises(EmptyInputError):
            bootstrap_ci(np.array([]))


def _synthetic_cohort(n: int, seed: int) -> list[Lesion]:
    lesions, _ = generate_cohort(
        SynthConfig(
            kind=ModelKind.GENERAL_BERTALANFFY,
            n_lesions=n,
            points_per_lesion=(7, 9),
            noise_sigma=0.04,
            time_span=130.0,
            seed=seed,
        )
    )
    return lesions


class TestBattle:
    def test_two_model_battle_produces_full_report(self) -> None:
        lesions = _synthetic_cohort(6, seed=21)
        report = battle(
            lesions,
            [ModelKind.EXPONENTIAL, ModelKind.CLASSICAL_GOMPERTZ],
            calibration=FAST_CAL,
            solve_config=FAST_SOLVE,
            bootstrap=BootstrapConfig(n_resamples=400),
            seed=5,
        )
        assert report.models == (ModelKind.EXPONENTIAL, ModelKind.CLASSICAL_GOMPERTZ)
        assert report.param_counts == (2, 3)
        assert report.errors.shape == (report.n_lesions_used, 2)
        assert len(report.mean_errors) == 2
        assert report.n_lesions_used + report.n_discarded == len(lesions)
        pair = report.pairwise[(ModelKind.EXPONENTIAL, ModelKind.CLASSICAL_GOMPERTZ)]
        assert pair.ci_low <= pair.ci_high

    def test_saturating_data_beats_exponential(self) -> None:
        lesions = _synthetic_cohort(12, seed=33)
        report = battle(
            lesions,
            [ModelKind.EXPONENTIAL, ModelKind.CLASSICAL_GOMPERTZ],
            calibration=FAST_CAL,
            solve_config=FAST_SOLVE,
            bootstrap=BootstrapConfig(n_resamples=500),
            seed=3,
        )
        pair = report.pairwise[(ModelKind.CLASSICAL_GOMPERTZ, ModelKind.EXPONENTIAL)]
        assert pair.verdict == VERDICT_WIN_A
        assert pair.ci_high < 0.0

    def test_pairwise_entries_are_antisymmetric(self) -> None:
        lesions = _synthetic_cohort(5, seed=9)
        report = battle(
            lesions,
            [ModelKind.EXPONENTIAL, ModelKind.LOGISTIC, ModelKind.CLASSICAL_GOMPERTZ],
            calibration=FAST_CAL,
            solve_config=FAST_SOLVE,
            bootstrap=BootstrapConfig(n_resamples=300),
            seed=2,
        )
        for a in report.models:
            for b in report.models:
                if a is b:
                    continue
                ab = report.pairwise[(a, b)]
                ba = report.pairwise[(b, a)]
                assert ab.ci_low == -ba.ci_high
                assert ab.ci_high == -ba.ci_low
                flipped = {VERDICT_WIN_A: VERDICT_WIN_B, VERDICT_WIN_B: VERDICT_WIN_A}
                assert ba.verdict == flipped.get(ab.verdict, VERDICT_DRAW)

    def test_same_seed_reproduces_report(self) -> None:
        lesions = _synthetic_cohort(4, seed=14)
        kinds = [ModelKind.EXPONENTIAL, ModelKind.LOGISTIC]
        a = battle(lesions, kinds, FAST_CAL, FAST_SOLVE, BootstrapConfig(n_resamples=200), seed=6)
        b = battle(lesions, kinds, FAST_CAL, FAST_SOLVE, BootstrapConfig(n_resamples=200), seed=6)
        assert a.errors.tolist() == b.errors.tolist()
        assert ranking_csv(a) == ranking_csv(b)
        assert matchups_csv(a) == matchups_csv(b)

    def test_short_lesions_are_rejected_not_fitted(self) -> None:
        lesions = [_lesion(5, "short"), *_synthetic_cohort(3, seed=2)]
        report = battle(
            lesions,
            [ModelKind.EXPONENTIAL, ModelKind.LOGISTIC],
            calibration=FAST_CAL,
            solve_config=FAST_SOLVE,
            bootstrap=BootstrapConfig(n_resamples=200),
            seed=1,
        )
        assert report.n_rejected == 1
        assert "short" not in report.lesion_ids

    def test_divergent_lesion_is_discarded_for_all_models(self) -> None:
        # the far-future holdout overflows the fitted exponential but is
        # predictable for the saturating model, so the whole lesion drops
        times = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 40000.0, 40010.0)
        volumes = (1.0, 1.25, 1.5, 1.9, 2.3, 2.9, 3.0, 3.0)
        bad = Lesion("overflow", times, volumes)
        lesions = [bad, *_synthetic_cohort(3, seed=17)]
        report = battle(
            lesions,
            [ModelKind.EXPONENTIAL, ModelKind.CLASSICAL_GOMPERTZ],
            calibration=FAST_CAL,
            solve_config=FAST_SOLVE,
            bootstrap=BootstrapConfig(n_resamples=200),
            seed=4,
        )
        assert report.n_discarded == 1
        assert "overflow" not in report.lesion_ids
        assert report.errors.shape[0] == 3

    def test_single_lesion_comparison_is_a_draw(self) -> None:
        lesions = _synthetic_cohort(1, seed=25)
        report = battle(
            lesions,
            [ModelKind.EXPONENTIAL, ModelKind.LOGISTIC],
            calibration=FAST_CAL,
            solve_config=FAST_SOLVE,
            bootstrap=BootstrapConfig(n_resamples=100),
            seed=8,
        )
        pair = report.pairwise[(ModelKind.EXPONENTIAL, ModelKind.LOGISTIC)]
        assert pair.verdict == VERDICT_DRAW
        assert pair.ci_low == pair.ci_high

    def test_needs_two_distinct_models(self) -> None:
        lesions = _synthetic_cohort(2, seed=1)
        with pytest.raises(ValidationError):
            battle(lesions, [ModelKind.EXPONENTIAL], calibration=FAST_CAL)
        with pytest.raises(ValidationError):
            battle(lesions, [ModelKind.EXPONENTIAL, ModelKind.EXPONENTIAL], calibration=FAST_CAL)

    def test_all_short_cohort_raises(self) -> None:
        with pytest.raises(NoUsableLesionsError):
            battle(
                [_lesion(4, "a"), _lesion(5, "b")],
                [ModelKind.EXPONENTIAL, ModelKind.LOGISTIC],
                calibration=FAST_CAL,
            )

    def test_worker_pool_matches_sequential(self) -> None:
        lesions = _synthetic_cohort(3, seed=12)
        kinds = [ModelKind.EXPONENTIAL, ModelKind.CLASSICAL_GOMPERTZ]
        seq = battle(lesions, kinds, FAST_CAL, FAST_SOLVE, BootstrapConfig(n_resamples=100), seed=3)
        par = battle(
            lesions,
            kinds,
            FAST_CAL,
            FAST_SOLVE,
            BootstrapConfig(n_resamples=100),
            seed=3,
            workers=2,
        )
        assert seq.errors.tolist() == par.errors.tolist()
        assert ranking_csv(seq) == ranking_csv(par)


@pytest.fixture(scope="module")
def report():
    lesions = _synthetic_cohort(4, seed=19)
    return battle(
        lesions,
        [ModelKind.EXPONENTIAL, ModelKind.LOGISTIC, ModelKind.CLASSICAL_GOMPERTZ],
        calibration=FAST_CAL,
        solve_config=FAST_SOLVE,
        bootstrap=BootstrapConfig(n_resamples=200),
        seed=13,
    )


class TestCsvSerializers:

    def test_ranking_is_sorted_by_mean_error(self, report) -> None:
        lines = ranking_csv(report).strip().splitlines()
        assert lines[0] == "model,mean_abs_error,num_parameters"
        errs = [float(line.split(",")[1]) for line in lines[1:]]
        assert errs == sorted(errs)
        assert len(lines) == 4

    def test_matchups_matrix_shape_and_diagonal(self, report) -> None:
        lines = matchups_csv(report).strip().splitlines()
        assert len(lines) == 4
        header = lines[0].split(",")
        assert header[0] == "model"
        for i, line in enumerate(lines[1:]):
            assert line.split(",")[0] == header[i + 1]
        # the first row's diagonal cell (its own column) is empty
        assert ",," in lines[1] or lines[1].endswith(",")

    def test_matchup_cells_carry_verdict_and_interval(self, report) -> None:
        text = matchups_csv(report)
        assert "winA[" in text or "winB[" in text or "draw[" in text

    def test_per_lesion_errors_lists_every_kept_lesion(self, report) -> None:
        lines = per_lesion_errors_csv(report).strip().splitlines()
        assert lines[0].startswith("lesion_id,")
        assert len(lines) == 1 + report.n_lesions_used
        for line in lines[1:]:
            cells = line.split(",")
            assert len(cells) == 1 + len(report.models)
            for cell in cells[1:]:
                assert float(cell) >= 0.0

    def test_serialized_floats_round_trip(self, report) -> None:
        lines = per_lesion_errors_csv(report).strip().splitlines()
        first_value = lines[1].split(",")[1]
        assert float(first_value) == report.errors[0, 0]
