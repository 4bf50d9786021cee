"""Writers for rate tables, trajectories, verification reports and run manifests."""

import json
import logging
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np

from common.types import RateTable, RunManifest, StudyConfig, SuiteReport

from .cq_stepper import TrajectoryResult

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '.17g'
RATE_TABLE_HEADER = 'level,m_t,n_x,error,rate'
VERSIONED_PACKAGES = ('fracspde', 'numpy', 'scipy', 'pydantic')


def format_float(value: float | None) -> str:
    if value is None:
        return ''
    return format(float(value), FLOAT_FORMAT)


def package_versions() -> dict[str, str]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_rate_table_csv(table: RateTable, path: str | Path) -> Path:
    """
    One row per level; the rate column holds the rate from this level to the
    next and is empty on the last level.
    """
    path = _ensure_parent(Path(path))
    lines = [RATE_TABLE_HEADER]
    for index, ((m_t, n_x), error) in enumerate(zip(table.levels, table.errors)):
        rate = format_float(table.rates[index]) if index < len(table.rates) else ''
        lines.append(f"{index},{m_t},{n_x},{format_float(error)},{rate}")
    path.write_text('\n'.join(lines) + '\n')
    logger.info(f"📦 Wrote {path}")
    return path


def rate_table_summary(table: RateTable, config: StudyConfig) -> dict[str, Any]:
    return {
        'config': config.model_dump(mode='json'),
        'errors': table.errors,
        'rates': [None if np.isnan(r) else r for r in table.rates],
        'mean_rate': table.mean_rate,
        'theoretical_rate': table.theoretical_rate,
        'wall_time': table.wall_time,
    }


def write_json(payload: Any, path: str | Path) -> Path:
    path = _ensure_parent(Path(path))
    path.write_text(json.dumps(payload, indent=2) + '\n')
    logger.info(f"📦 Wrote {path}")
    return path


def write_trajectory_csv(result: TrajectoryResult, directory: str | Path, tau: float) -> list[Path]:
    """
    ``final.csv`` holds x,u at the interior nodes; ``snapshots.csv`` (only if
    snapshots were kept) holds step,t followed by the coefficients.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mesh = result.final.mesh
    written = []

    final_path = directory / 'final.csv'
    np.savetxt(
        final_path,
        np.column_stack((mesh.interior_nodes, result.final.coeffs)),
        delimiter=',', fmt='%.17g', header='x,u', comments='',
    )
    written.append(final_path)

    if result.snapshots:
        snapshot_path = directory / 'snapshots.csv'
        times = result.times(tau)
        rows = [np.concatenate(([n, times[n]], u.coeffs)) for n, u in sorted(result.snapshots.items())]
        header = ','.join(['step', 't'] + [f"c{j}" for j in range(1, mesh.dim + 1)])
        np.savetxt(snapshot_path, np.vstack(rows), delimiter=',', fmt='%.17g', header=header, comments='')
        written.append(snapshot_path)

    for path in written:
        logger.info(f"📦 Wrote {path}")
    return written


def report_payload(reports: list[SuiteReport]) -> dict[str, Any]:
    return {
        'passed': all(report.passed for report in reports),
        'suites': [report.model_dump(mode='json') for report in reports],
    }


def write_manifest(manifest: RunManifest, directory: str | Path) -> Path:
    manifest.finished_at = datetime.now()
    path = _ensure_parent(Path(directory) / 'manifest.json')
    path.write_text(manifest.model_dump_json(indent=2) + '\n')
    logger.info(f"📦 Wrote {path}")
    return path
