"""
Unit tests for fracspde.artifacts module.
"""
import json
import math

import numpy as np
import pytest

from common.types import RateTable, RunConfig, RunManifest, StudyConfig, StudyMode, SuiteReport
from fracspde.artifacts import (
    RATE_TABLE_HEADER,
    format_float,
    package_versions,
    rate_table_summary,
    report_payload,
    write_json,
    write_manifest,
    write_rate_table_csv,
    write_trajectory_csv,
)
from fracspde.cq_stepper import TrajectoryResult
from fracspde.fem import FemFunction, Mesh1D


def make_table(rates=(1.0, math.nan)):
    return RateTable(
        mode=StudyMode.SPATIAL, alpha=0.5, h1=0.5, h2=0.5, m=2, base_seed=42,
        levels=[(64, 4), (64, 8), (64, 16)], errors=[0.4, 0.2, 0.0], rates=list(rates), mean_rate=1.0,
        theoretical_rate=1.0,
    )


class TestFormatting:
    """Test number formatting."""

    def test_round_trips_doubles(self):
        value = 0.1 + 0.2
        assert float(format_float(value)) == value
        assert format_float(None) == ''

    def test_versions_cover_numeric_stack(self):
        versions = package_versions()
        assert set(versions) >= {'numpy', 'scipy', 'pydantic'}
        assert versions['numpy'] != 'unknown'


class TestRateTableFiles:
    """Test rate table CSV and JSON output."""

    def test_csv_layout(self, temp_dir):
        path = write_rate_table_csv(make_table(), temp_dir / "nested" / "table.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == RATE_TABLE_HEADER
        assert lines[1] == "0,64,4,0.40000000000000002,1"
        assert lines[2].startswith("1,64,8,0.20000000000000001,")
        assert lines[3] == "2,64,16,0,"

    def test_summary_is_strict_json(self, quiet_spec, temp_dir):
        config = StudyConfig(spec=quiet_spec, m=2, levels=[(64, 4), (64, 8), (64, 16)], mode=StudyMode.SPATIAL)
        summary = rate_table_summary(make_table(), config)
        assert summary['rates'] == [1.0, None]
        path = write_json(summary, temp_dir / "summary.json")
        # json.loads rejects neither NaN nor Infinity, so check the text
        assert "NaN" not in path.read_text()
        assert json.loads(path.read_text())['config']['mode'] == 'spatial'


class TestTrajectoryFiles:
    """Test trajectory CSV output."""

    def result(self):
        mesh = Mesh1D(1.0, 4)
        final = FemFunction(mesh, np.array([0.1, 0.2, 0.3]))
        return TrajectoryResult(final=final, snapshots={2: FemFunction(mesh, np.array([1.0, 2.0, 3.0])), 0: FemFunction(mesh, np.zeros(3))})

    def test_final_and_snapshots(self, temp_dir):
        paths = write_trajectory_csv(self.result(), temp_dir, tau=0.25)
        assert [p.name for p in paths] == ['final.csv', 'snapshots.csv']

        final = np.loadtxt(paths[0], delimiter=',', skiprows=1)
        np.testing.assert_allclose(final, [[0.25, 0.1], [0.5, 0.2], [0.75, 0.3]])

        lines = paths[1].read_text().splitlines()
        assert lines[0] == 'step,t,c1,c2,c3'
        snapshots = np.loadtxt(paths[1], delimiter=',', skiprows=1)
        np.testing.assert_allclose(snapshots[:, :2], [[0, 0.0], [2, 0.5]])

    def test_no_snapshot_file_without_snapshots(self, temp_dir):
        result = self.result()
        result.snapshots = {}
        assert [p.name for p in write_trajectory_csv(result, temp_dir, tau=0.25)] == ['final.csv']


class TestReports:
    """Test verification payloads and manifests."""

    def test_payload(self):
        good, bad = SuiteReport(suite='a'), SuiteReport(suite='b')
        good.record('x', True)
        bad.record('y', False, 'broken', 3.0)
        payload = report_payload([good, bad])
        assert payload['passed'] is False
        assert payload['suites'][1]['checks'][0]['detail'] == 'broken'
        assert report_payload([good])['passed'] is True

    def test_manifest(self, minimal_config, temp_dir):
        manifest = RunManifest(command='solve', config=RunConfig.model_validate(minimal_config), seed=11)
        path = write_manifest(manifest, temp_dir)
        assert path.name == 'manifest.json'
        data = json.loads(path.read_text())
        assert data['seed'] == 11
        assert data['finished_at'] is not None
        assert data['config']['grids']['m_t'] == 8
