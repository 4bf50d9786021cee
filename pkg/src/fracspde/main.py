#!/usr/bin/env python3
"""
fracspde command line.

    fracspde solve --config run.json
    fracspde table temporal --config row.json [--paper-scale]
    fracspde table spatial --all-rows
    fracspde verify oracle
    fracspde sample-noise --config run.json

Exit status is 0 on success, 1 when a verification or computation fails and
2 for configuration errors.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError

from common.services import RuntimeSettings, initialize_runtime, resolve_seed, resolve_workers
from common.types import (
    FracSpdeError,
    NoiseGridSpec,
    RateTable,
    RunConfig,
    RunManifest,
    StandingAssumptionError,
    StudyConfig,
    StudyMode,
)

from .artifacts import (
    format_float,
    package_versions,
    rate_table_summary,
    report_payload,
    write_json,
    write_manifest,
    write_rate_table_csv,
    write_trajectory_csv,
)
from .cq_stepper import run_trajectory
from .experiments import (
    TABLE_ROWS,
    build_study_config,
    run_study,
    sample_fine_field,
    study_config_from_run,
    synthetic_rate_check,
)
from .noise import write_field_csv
from .verify import SUITES, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

SELF_TEST_RATE = 0.5


class ConfigError(Exception):
    """A config file that cannot be read or validated."""


def load_config(path: str | Path) -> tuple[RunConfig | None, RunManifest | None]:
    """
    Read a run config, or a manifest whose echoed config is replayed.

    Raises:
        ConfigError: missing file or malformed JSON
        ValidationError: schema violations
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if isinstance(raw, dict) and 'command' in raw and 'config' in raw:
        manifest = RunManifest.model_validate(raw)
        logger.info(f"🔧 Replaying manifest of '{manifest.command}' with seed {manifest.seed}")
        return manifest.config, manifest
    return RunConfig.model_validate(raw), None


def format_validation_error(error: ValidationError) -> list[str]:
    lines = []
    for detail in error.errors():
        location = '.'.join(str(part) for part in detail['loc']) or '<root>'
        lines.append(f"{location}: {detail['msg']}")
    return lines


def _run_context(args: argparse.Namespace, settings: RuntimeSettings) -> tuple[RunConfig | None, RunManifest | None, int, Path]:
    config, manifest = (None, None)
    if args.config:
        config, manifest = load_config(args.config)
        if manifest is not None and manifest.paper_scale:
            args.paper_scale = True
    config_seed = None
    if manifest is not None:
        config_seed = manifest.seed
    elif config is not None:
        config_seed = config.study.base_seed if config.study.base_seed is not None else config.seed
    seed = resolve_seed(args.seed, settings, config_seed)
    out = Path(args.out or settings.output_dir or (config.output.dir if config else 'out'))
    return config, manifest, seed, out


def _new_manifest(args: argparse.Namespace, config: RunConfig | None, seed: int, workers: int = 1) -> RunManifest:
    command = ' '.join(part for part in (args.command, getattr(args, 'mode', None)) if part)
    return RunManifest(
        command=command,
        config=config,
        seed=seed,
        workers=workers,
        paper_scale=getattr(args, 'paper_scale', False),
        versions=package_versions(),
    )


## Commands


def cmd_solve(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config, _, seed, out = _run_context(args, settings)
    if config is None:
        raise ConfigError("solve needs --config")
    spec, grids = config.problem, config.grids
    manifest = _new_manifest(args, config, seed)

    logger.info(f"🚀 Solving alpha={spec.alpha} on a {grids.m_t} x {grids.n_x} grid with seed {seed}")
    field = sample_fine_field(spec, seed, grids.m_t, grids.n_x)
    result = run_trajectory(spec, grids.m_t, grids.n_x, field, snapshots=grids.snapshots, seed=seed)
    written = write_trajectory_csv(result, out, spec.T / grids.m_t)

    manifest.outputs = [str(path) for path in written]
    write_manifest(manifest, out)
    print(f"solve: wrote {', '.join(manifest.outputs)}")
    logger.info("✅ Solve finished")
    return EXIT_OK


def _table_stem(config: StudyConfig) -> str:
    hurst = config.spec.hurst
    return f"table_{config.mode.value}_a{config.spec.alpha:g}_h{hurst.h1:g}_{hurst.h2:g}"


def _print_table(config: StudyConfig, table: RateTable) -> None:
    errors = ' '.join(format(e, '.4e') for e in table.errors)
    print(
        f"{config.mode.value} (alpha, H1, H2) = ({table.alpha:g}, {table.h1:g}, {table.h2:g}): "
        f"errors {errors}; mean rate {format_float(table.mean_rate)} (theory {format_float(table.theoretical_rate)})"
    )


def _replayed_studies(manifest: RunManifest, mode: StudyMode, seed: int) -> list[StudyConfig]:
    """The studies a table manifest recorded, reseeded with the resolved seed."""
    if any(study.mode != mode for study in manifest.studies):
        raise ConfigError(f"manifest of '{manifest.command}' cannot be replayed as table {mode.value}")
    return [study.model_copy(update={'base_seed': seed}) for study in manifest.studies]


def cmd_table(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    mode = StudyMode(args.mode)
    if args.self_test:
        rates, mean = synthetic_rate_check(SELF_TEST_RATE)
        ok = mean is not None and all(abs(r - SELF_TEST_RATE) <= 1e-12 for r in rates)
        print(f"self-test: recovered rates {rates} (expected {SELF_TEST_RATE}) -> {'ok' if ok else 'FAILED'}")
        return EXIT_OK if ok else EXIT_FAILED

    config, manifest, seed, out = _run_context(args, settings)
    workers = resolve_workers(args.workers, settings)
    all_rows = args.all_rows or (manifest is not None and manifest.all_rows)

    if manifest is not None and manifest.studies:
        studies = _replayed_studies(manifest, mode, seed)
    elif all_rows:
        studies = []
        for row in TABLE_ROWS[mode]:
            overrides = config.study if config is not None else None
            studies.append(build_study_config(
                mode, row.alpha, row.h1, row.h2,
                paper_scale=args.paper_scale,
                base_seed=seed,
                m=overrides.m if overrides else None,
                levels=overrides.levels if overrides else None,
            ))
    elif config is not None:
        studies = [study_config_from_run(config, mode, paper_scale=args.paper_scale, base_seed=seed)]
    else:
        raise ConfigError("table needs --config or --all-rows")

    logger.info(f"🚀 Running {len(studies)} {mode.value} stud{'y' if len(studies) == 1 else 'ies'} with {workers} worker(s)")
    written: list[Path] = []
    summaries = []
    for study in studies:
        table = run_study(study, workers)
        stem = _table_stem(study)
        written.append(write_rate_table_csv(table, out / f"{stem}.csv"))
        summary = rate_table_summary(table, study)
        written.append(write_json(summary, out / f"{stem}.json"))
        summaries.append(summary)
        _print_table(study, table)
    if len(summaries) > 1:
        written.append(write_json(summaries, out / f"table_{mode.value}_summary.json"))

    manifest = _new_manifest(args, config, seed, workers)
    manifest.all_rows = all_rows
    manifest.studies = studies
    manifest.outputs = [str(path) for path in written]
    write_manifest(manifest, out)
    logger.info("✅ Table finished")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    names = list(SUITES) if args.suite == 'all' else [args.suite]
    reports = [run_suite(name) for name in names]
    payload = report_payload(reports)
    print(json.dumps(payload, indent=2))
    out = args.out or settings.output_dir
    if out:
        write_json(payload, Path(out) / f"verify_{args.suite}.json")
    return EXIT_OK if payload['passed'] else EXIT_FAILED


def cmd_sample_noise(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config, _, seed, out = _run_context(args, settings)
    if config is None:
        raise ConfigError("sample-noise needs --config")
    spec, grids = config.problem, config.grids
    field = sample_fine_field(spec, seed, grids.m_t, grids.n_x)
    out.mkdir(parents=True, exist_ok=True)
    path = write_field_csv(out / 'noise_field.csv', field, spec.hurst, seed)

    manifest = _new_manifest(args, config, seed)
    manifest.outputs = [str(path)]
    write_manifest(manifest, out)
    grid: NoiseGridSpec = field.spec
    print(f"sample-noise: {grid.m_t} x {grid.n_x} boxes written to {path}")
    return EXIT_OK


## Parser


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--config', help='run config JSON, or a manifest.json to replay')
    shared.add_argument('--seed', type=int, help='base random seed (overrides FRACSPDE_SEED and the config)')
    shared.add_argument('--workers', type=int, help='concurrent trajectories (overrides FRACSPDE_WORKERS)')
    shared.add_argument('--out', help='output directory (overrides FRACSPDE_OUTPUT_DIR and the config)')
    shared.add_argument('--paper-scale', action='store_true', help='use the full published study sizes')

    parser = argparse.ArgumentParser(
        prog='fracspde',
        description='Stochastic time-fractional diffusion driven by fractional Brownian sheet noise',
    )
    parser.add_argument('--log-level', choices=['debug', 'info', 'warning', 'error', 'critical'],
                        help='logging level (overrides FRACSPDE_LOG_LEVEL)')
    commands = parser.add_subparsers(dest='command', required=True)

    solve = commands.add_parser('solve', parents=[shared], help='one trajectory to t = T')
    solve.set_defaults(handler=cmd_solve)

    table = commands.add_parser('table', parents=[shared], help='Monte Carlo convergence-rate table')
    table.add_argument('mode', choices=[m.value for m in StudyMode])
    table.add_argument('--all-rows', action='store_true', help='run every published (alpha, H1, H2) row')
    table.add_argument('--self-test', action='store_true', help='check rate recovery on synthetic errors')
    table.set_defaults(handler=cmd_table)

    verify = commands.add_parser('verify', parents=[shared], help='run a property suite')
    verify.add_argument('suite', choices=[*SUITES, 'all'])
    verify.set_defaults(handler=cmd_verify)

    noise = commands.add_parser('sample-noise', parents=[shared], help='dump one sheet sample as CSV')
    noise.set_defaults(handler=cmd_sample_noise)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the fracspde command line."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    settings = initialize_runtime(args.log_level)

    try:
        return args.handler(args, settings)
    except ValidationError as e:
        for line in format_validation_error(e):
            print(line, file=sys.stderr)
        logger.error(f"❌ Invalid configuration ({e.error_count()} error(s))")
        return EXIT_CONFIG
    except (ConfigError, StandingAssumptionError) as e:
        print(str(e), file=sys.stderr)
        logger.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except FracSpdeError as e:
        logger.error(f"❌ {e}")
        return EXIT_FAILED
    except ValueError as e:
        print(str(e), file=sys.stderr)
        logger.error(f"❌ Invalid argument: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
