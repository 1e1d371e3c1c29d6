"""Command line entry point.

Subcommands:
  synth    generate a synthetic cohort (plus a ground-truth sidecar)
  fit      calibrate one model to one lesion and print a report
  battle   calibrate many models on a cohort and write comparison files
  plot     render measured points and fitted curves for one lesion

Exit codes: 0 success, 1 usage or input problems, 2 numerical failure.
A TOML file passed with --config may carry [calibration], [solver] and
[bootstrap] sections; explicit flags override file values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import data, evaluate, plots
from .calibrate import CalibrationConfig, fit as run_fit
from .core import (
    BlowUpError,
    DivergedError,
    FitStatus,
    ModelKind,
    ModelSpec,
    NoUsableLesionsError,
    OdegrowError,
)
from .evaluate import BootstrapConfig, battle, holdout_mae, split_holdout
from .solver import SolveConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

_CONFIG_SECTIONS = {
    "calibration": CalibrationConfig,
    "solver": SolveConfig,
    "bootstrap": BootstrapConfig,
}


class UsageError(OdegrowError):
    """Bad flags or flag values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep codes ours
        raise UsageError(f"{message}\n(run with --help for usage)")


def _model_names() -> str:
    return ", ".join(kind.value for kind in ModelKind)


def _parse_kind(token: str) -> ModelKind:
    try:
        return ModelKind(token.strip())
    except ValueError:
        raise UsageError(
            f"unknown model {token.strip()!r}; available models: {_model_names()}"
        ) from None


def _parse_kind_list(tokens: str) -> list[ModelKind]:
    if tokens.strip() == "all":
        return list(ModelKind)
    kinds = [_parse_kind(tok) for tok in tokens.split(",") if tok.strip()]
    if not kinds:
        raise UsageError("no model names given")
    return kinds


def _load_config_file(path) -> dict:
    try:
        with open(path, "rb") as handle:
            parsed = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: invalid TOML: {exc}") from None
    unknown = sorted(set(parsed) - set(_CONFIG_SECTIONS))
    if unknown:
        raise UsageError(
            f"{path}: unknown config section(s) {unknown}; "
            f"expected {sorted(_CONFIG_SECTIONS)}"
        )
    for section, cls in _CONFIG_SECTIONS.items():
        body = parsed.get(section, {})
        if not isinstance(body, dict):
            raise UsageError(f"{path}: [{section}] must be a table")
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(body) - allowed)
        if bad:
            raise UsageError(
                f"{path}: unknown key(s) {bad} in [{section}]; allowed: {sorted(allowed)}"
            )
    return parsed


def _build_configs(args) -> tuple[CalibrationConfig, SolveConfig, BootstrapConfig]:
    parsed = _load_config_file(args.config) if getattr(args, "config", None) else {}
    cal_kwargs = dict(parsed.get("calibration", {}))
    if getattr(args, "seed", None) is not None:
        cal_kwargs["seed"] = args.seed
    try:
        return (
            CalibrationConfig(**cal_kwargs),
            SolveConfig(**parsed.get("solver", {})),
            BootstrapConfig(**parsed.get("bootstrap", {})),
        )
    except TypeError as exc:
        raise UsageError(f"bad config value: {exc}") from None


def _find_lesion(lesions, lesion_id: str):
    for lesion in lesions:
        if lesion.id == lesion_id:
            return lesion
    known = ", ".join(l.id for l in lesions[:8])
    more = ", ..." if len(lesions) > 8 else ""
    raise UsageError(f"lesion {lesion_id!r} not in cohort (has: {known}{more})")


def _cmd_synth(args) -> int:
    kind = _parse_kind(args.model)
    try:
        if ":" in args.points:
            lo, hi = args.points.split(":", 1)
            points: int | tuple[int, int] = (int(lo), int(hi))
        else:
            points = int(args.points)
    except ValueError:
        raise UsageError(
            f"--points must be an integer or lo:hi range, got {args.points!r}"
        ) from None
    config = data.SynthConfig(
        kind=kind,
        n_lesions=args.n,
        points_per_lesion=points,
        noise_sigma=args.noise,
        time_span=args.span,
        seed=args.seed if args.seed is not None else 0,
    )
    lesions, truth = data.generate_cohort(config)
    data.write_cohort(args.out, lesions)
    root, ext = os.path.splitext(args.out)
    truth_path = f"{root}_params{ext or '.csv'}"
    data.write_truth(truth_path, truth)
    n_points = sum(lesion.n_points for lesion in lesions)
    print(f"wrote {len(lesions)} lesions ({n_points} measurements) to {args.out}")
    print(f"wrote generating parameters to {truth_path}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    calibration_cfg, solve_cfg, _ = _build_configs(args)
    kind = _parse_kind(args.model)
    lesions = data.load_cohort(args.input)
    lesion = _find_lesion(lesions, args.lesion)
    cal, hold = split_holdout(lesion)
    result = run_fit(ModelSpec.for_kind(kind), cal, calibration_cfg, solve_cfg, holdout=hold)
    lines = [
        f"lesion: {lesion.id}",
        f"model: {kind.value}",
        f"status: {result.status.value}",
        f"iterations: {result.n_iterations}",
        f"loss: {result.loss!r}",
        "parameters:",
    ]
    lines.extend(
        f"  {name} = {value!r}" for name, value in zip(result.params.names, result.params.values)
    )
    if result.status is not FitStatus.DIVERGED:
        lines.append(f"holdout points: {len(hold.times)}")
        lines.append(f"holdout mae (normalized): {holdout_mae(result, hold)!r}")
    report = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(report)
        print(f"wrote {args.out}")
    else:
        print(report, end="")
    return EXIT_NUMERICAL if result.status is FitStatus.DIVERGED else EXIT_OK


def _resolve_threads(args) -> int:
    if args.threads is not None:
        value = args.threads
    else:
        raw = os.environ.get("ODEGROW_THREADS", "1")
        try:
            value = int(raw)
        except ValueError:
            raise UsageError(f"ODEGROW_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise UsageError("thread count must be at least 1")
    return value


def _cmd_battle(args) -> int:
    calibration_cfg, solve_cfg, bootstrap_cfg = _build_configs(args)
    kinds = _parse_kind_list(args.models)
    seed = args.seed if args.seed is not None else 0
    workers = _resolve_threads(args)
    lesions = data.load_cohort(args.input)
    report = battle(
        lesions,
        kinds,
        calibration=calibration_cfg,
        solve_config=solve_cfg,
        bootstrap=bootstrap_cfg,
        seed=seed,
        workers=workers,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = {
        "ranking.csv": evaluate.ranking_csv(report),
        "matchups.csv": evaluate.matchups_csv(report),
        "per_lesion_errors.csv": evaluate.per_lesion_errors_csv(report),
    }
    for name, text in outputs.items():
        with open(os.path.join(args.out_dir, name), "w", encoding="utf-8") as handle:
            handle.write(text)
    figure_name = "errors_boxplot.svg"
    plots.save_figure(
        plots.error_boxplot_figure(report), os.path.join(args.out_dir, figure_name)
    )
    manifest = {
        "command": "battle",
        "input": str(args.input),
        "models": [k.value for k in report.models],
        "seed": seed,
        "threads_requested": workers,
        "n_lesions_used": report.n_lesions_used,
        "n_discarded": report.n_discarded,
        "n_rejected": report.n_rejected,
        "calibration": dataclasses.asdict(calibration_cfg),
        "solver": dataclasses.asdict(solve_cfg),
        "bootstrap": dataclasses.asdict(bootstrap_cfg),
        "outputs": sorted([*outputs, figure_name]),
    }
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"compared {len(report.models)} models on {report.n_lesions_used} lesions")
    if report.n_discarded or report.n_rejected:
        print(f"(discarded {report.n_discarded} diverged, rejected {report.n_rejected} short)")
    print("ranking (best first):")
    for rank, (kind, err, count) in enumerate(report.ranking(), start=1):
        print(f"  {rank}. {kind.value}  mean_abs_error={err:.6g}  parameters={count}")
    print(f"wrote {args.out_dir}/{{{', '.join(sorted([*outputs, figure_name, 'manifest.json']))}}}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    calibration_cfg, solve_cfg, _ = _build_configs(args)
    kinds = _parse_kind_list(args.models)
    lesions = data.load_cohort(args.input)
    lesion = _find_lesion(lesions, args.lesion)
    cal, hold = split_holdout(lesion)
    fits = {}
    for kind in kinds:
        fits[kind.value] = run_fit(
            ModelSpec.for_kind(kind), cal, calibration_cfg, solve_cfg, holdout=hold
        )
    fig = plots.fit_comparison_figure(lesion, fits, solve_cfg)
    plots.save_figure(fig, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="odegrow", description="Calibrate and compare tumor growth models.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic cohort")
    synth.add_argument("--model", required=True, help=f"generating model ({_model_names()})")
    synth.add_argument("--n", type=int, default=50, help="number of lesions")
    synth.add_argument("--out", required=True, help="cohort CSV path")
    synth.add_argument("--noise", type=float, default=0.05, help="log-normal noise sigma")
    synth.add_argument("--span", type=float, default=120.0, help="time span in days")
    synth.add_argument(
        "--points", default="6:12", help="points per lesion, fixed (8) or range (6:12)"
    )
    synth.add_argument("--seed", type=int, default=None)
    synth.set_defaults(func=_cmd_synth)

    fit_cmd = sub.add_parser("fit", help="calibrate one model to one lesion")
    fit_cmd.add_argument("--input", required=True, help="cohort CSV path")
    fit_cmd.add_argument("--model", required=True)
    fit_cmd.add_argument("--lesion", required=True, help="lesion id within the cohort")
    fit_cmd.add_argument("--config", default=None, help="TOML config file")
    fit_cmd.add_argument("--seed", type=int, default=None)
    fit_cmd.add_argument("--out", default=None, help="write the report here instead of stdout")
    fit_cmd.set_defaults(func=_cmd_fit)

    battle_cmd = sub.add_parser("battle", help="compare models across a cohort")
    battle_cmd.add_argument("--input", required=True, help="cohort CSV path")
    battle_cmd.add_argument(
        "--models", default="all", help="comma-separated model names, or 'all'"
    )
    battle_cmd.add_argument("--out-dir", required=True, help="directory for result files")
    battle_cmd.add_argument("--config", default=None, help="TOML config file")
    battle_cmd.add_argument("--seed", type=int, default=None)
    battle_cmd.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker processes (default: ODEGROW_THREADS or 1)",
    )
    battle_cmd.set_defaults(func=_cmd_battle)

    plot_cmd = sub.add_parser("plot", help="render fits for one lesion")
    plot_cmd.add_argument("--input", required=True, help="cohort CSV path")
    plot_cmd.add_argument("--lesion", required=True)
    plot_cmd.add_argument("--models", default="all", help="comma-separated model names, or 'all'")
    plot_cmd.add_argument("--out", required=True, help="figure path (.svg)")
    plot_cmd.add_argument("--config", default=None, help="TOML config file")
    plot_cmd.add_argument("--seed", type=int, default=None)
    plot_cmd.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (BlowUpError, DivergedError, NoUsableLesionsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OdegrowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
