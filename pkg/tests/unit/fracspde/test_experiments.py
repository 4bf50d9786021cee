"""
Unit tests for fracspde.experiments module.
"""
import math

import numpy as np
import pytest

from common.types import (
    DomainError,
    GridMismatchError,
    HolderDiagnosticError,
    HurstPair,
    ProblemSpec,
    RunConfig,
    StandingAssumptionError,
    StudyConfig,
    StudyMode,
    TrajectoryError,
)
from fracspde.experiments import (
    DESK_PRESETS,
    PAPER_PRESETS,
    TABLE_ROWS,
    build_rate_table,
    build_study_config,
    error_spatial,
    error_temporal,
    holder_diagnostic,
    rates_from_errors,
    regularity_bounds,
    run_study,
    run_study_async,
    sample_fine_field,
    study_config_from_run,
    synthetic_rate_check,
    theoretical_rate,
    theoretical_spatial_rate,
    theoretical_temporal_rate,
    trajectory_errors,
)
from fracspde.cq_stepper import run_trajectory
from fracspde.fem import l2_norm, refine_embed
from fracspde.noise import aggregate, coarsen_to


def small_temporal_config(spec, m=3):
    return StudyConfig(spec=spec, m=m, levels=[(4, 8), (8, 8)], base_seed=5, mode=StudyMode.TEMPORAL)


def small_spatial_config(spec, m=3):
    return StudyConfig(spec=spec, m=m, levels=[(8, 4), (8, 8)], base_seed=5, mode=StudyMode.SPATIAL)


class TestTheoreticalRates:
    """Test the rate baselines against the published tables."""

    @pytest.mark.parametrize("mode", [StudyMode.TEMPORAL, StudyMode.SPATIAL])
    def test_all_rows(self, mode):
        for row in TABLE_ROWS[mode]:
            assert theoretical_rate(mode, row.alpha, row.h1, row.h2) == pytest.approx(row.theoretical_rate, abs=1e-4)

    def test_fixture_agrees_with_rows(self, published_tables):
        for key, mode in (("temporal", StudyMode.TEMPORAL), ("spatial", StudyMode.SPATIAL)):
            published = published_tables[key]["rows"]
            assert len(published) == len(TABLE_ROWS[mode])
            for entry, row in zip(published, TABLE_ROWS[mode]):
                assert tuple(entry["params"]) == (row.alpha, row.h1, row.h2)
                assert tuple(entry["errors"]) == row.reported_errors
                assert entry["rate"] == pytest.approx(row.reported_rate)
                assert entry["theory"] == pytest.approx(row.theoretical_rate)

    def test_temporal_rate_needs_standing_assumption(self):
        with pytest.raises(StandingAssumptionError):
            theoretical_temporal_rate(0.9, 0.1, 0.1)

    def test_spatial_rate_saturates(self):
        """sigma is capped at 1, so the rate is at most H1 + 1/2."""
        assert theoretical_spatial_rate(0.1, 0.5, 0.5) == pytest.approx(1.0)
        assert theoretical_spatial_rate(0.1, 0.2, 0.5) == pytest.approx(0.7)

    def test_nonpositive_spatial_rate_is_none(self, caplog):
        assert theoretical_rate(StudyMode.SPATIAL, 1.0, 0.05, 0.3) is None
        assert "No theoretical rate" in caplog.text

    def test_regularity_bounds(self):
        bounds = regularity_bounds(0.5, 0.4, 0.3)
        assert bounds.temporal_exponent == pytest.approx(0.3)
        assert bounds.spatial_index == pytest.approx(0.6)
        with pytest.raises(StandingAssumptionError):
            regularity_bounds(0.9, 0.1, 0.1)


class TestRates:
    """Test rate extraction."""

    def test_exact_sequence(self):
        rates, mean = synthetic_rate_check(rate=0.5)
        np.testing.assert_allclose(rates, 0.5, rtol=1e-12)
        assert mean == pytest.approx(0.5)
        assert len(rates) == 4

    def test_published_errors(self, published_tables):
        """Rates recomputed from the published errors match the published mean."""
        for key in ("temporal", "spatial"):
            for entry in published_tables[key]["rows"]:
                _, mean = rates_from_errors(entry["errors"])
                assert mean == pytest.approx(entry["rate"], abs=5e-3)

    def test_zero_error_gives_nan(self):
        rates, mean = rates_from_errors([1.0, 0.0, 0.0])
        assert all(math.isnan(r) for r in rates)
        assert mean is None

    def test_mean_skips_nan(self):
        rates, mean = rates_from_errors([4.0, 2.0, 0.0])
        assert rates[0] == pytest.approx(1.0)
        assert math.isnan(rates[1])
        assert mean == pytest.approx(1.0)

    def test_rate_table_reduction(self, rough_spec):
        config = small_temporal_config(rough_spec, m=2)
        samples = np.array([[3.0, 1.0], [4.0, 1.0]])
        table = build_rate_table(config, samples, wall_time=1.5)
        np.testing.assert_allclose(table.errors, [np.sqrt(12.5), 1.0])
        assert table.rates[0] == pytest.approx(np.log2(np.sqrt(12.5)))
        assert table.theoretical_rate == pytest.approx((0.8 - 0.3) / 2)
        assert table.wall_time == 1.5


class TestPresets:
    """Test study presets and config assembly."""

    @pytest.mark.parametrize("paper_scale", [False, True])
    @pytest.mark.parametrize("mode", [StudyMode.TEMPORAL, StudyMode.SPATIAL])
    def test_every_row_builds(self, mode, paper_scale):
        for row in TABLE_ROWS[mode]:
            config = build_study_config(mode, row.alpha, row.h1, row.h2, paper_scale=paper_scale)
            assert config.mode == mode
            assert config.spec.hurst == HurstPair(h1=row.h1, h2=row.h2)

    def test_paper_scale_is_larger(self):
        for mode in (StudyMode.TEMPORAL, StudyMode.SPATIAL):
            assert PAPER_PRESETS[mode].m > DESK_PRESETS[mode].m

    def test_overrides(self):
        config = build_study_config(StudyMode.TEMPORAL, 0.3, 0.3, 0.5, m=4, levels=[(4, 16), (8, 16)], base_seed=9)
        assert config.m == 4
        assert config.levels == [(4, 16), (8, 16)]
        assert config.base_seed == 9

    def test_standing_assumption_is_checked(self):
        with pytest.raises(ValueError, match="standing assumption"):
            build_study_config(StudyMode.TEMPORAL, 0.9, 0.1, 0.1)

    def test_config_file_fields_win(self, minimal_config):
        run = RunConfig.model_validate(minimal_config)
        config = study_config_from_run(run, StudyMode.SPATIAL, base_seed=3)
        preset = DESK_PRESETS[StudyMode.SPATIAL]
        assert config.spec.beta == 0.0
        assert config.spec.T == preset.T
        assert config.spec.l == preset.l
        assert config.m == preset.m
        assert config.base_seed == 3

    def test_config_file_study_section(self, minimal_config):
        minimal_config["study"] = {"m": 2, "levels": [[16, 4], [16, 8]]}
        config = study_config_from_run(RunConfig.model_validate(minimal_config), StudyMode.SPATIAL)
        assert config.m == 2
        assert config.levels == [(16, 4), (16, 8)]


class TestCoupling:
    """Test that all levels of a trajectory see the same noise."""

    def test_coarse_field_is_aggregated_fine_field(self, rough_spec):
        fine = sample_fine_field(rough_spec, 7, 16, 8)
        np.testing.assert_allclose(coarsen_to(fine, 8, 8).values, aggregate(fine, 2, 1).values)

    def test_trajectory_errors_match_single_level_errors(self, rough_spec):
        config = small_temporal_config(rough_spec)
        errors = trajectory_errors(config, 1)
        seed = config.base_seed + 1
        assert errors[0] == pytest.approx(error_temporal(rough_spec, seed, 4, 8, finest_m_t=16), rel=1e-13)
        assert errors[1] == pytest.approx(error_temporal(rough_spec, seed, 8, 8, finest_m_t=16), rel=1e-13)

    def test_spatial_error_embeds_coarse_solution(self, rough_spec):
        field = sample_fine_field(rough_spec, 2, 8, 8)
        coarse = run_trajectory(rough_spec, 8, 4, coarsen_to(field, 8, 4)).final
        fine = run_trajectory(rough_spec, 8, 8, field).final
        expected = l2_norm(fine - refine_embed(coarse, 1))
        assert error_spatial(rough_spec, 2, 4, 8) == pytest.approx(expected, rel=1e-13)

    def test_quiet_problem_has_zero_error(self, quiet_spec):
        assert error_temporal(quiet_spec, 1, 4, 4) == 0.0
        assert error_spatial(quiet_spec, 1, 4, 4) == 0.0

    def test_finest_grid_must_be_compatible(self, rough_spec):
        with pytest.raises(GridMismatchError):
            error_temporal(rough_spec, 1, 4, 4, finest_m_t=12)
        with pytest.raises(GridMismatchError):
            error_spatial(rough_spec, 1, 4, 4, finest_n_x=12)

    def test_errors_are_nonnegative_and_seeded(self, rough_spec):
        first = error_temporal(rough_spec, 4, 4, 8)
        assert first > 0.0
        assert error_temporal(rough_spec, 4, 4, 8) == first
        assert error_temporal(rough_spec, 5, 4, 8) != first


class TestRunStudy:
    """Test the study driver."""

    def test_reproducible(self, rough_spec):
        config = small_spatial_config(rough_spec)
        first = run_study(config)
        second = run_study(config)
        assert first.errors == second.errors
        assert len(first.rates) == 1
        assert first.m == 3

    async def test_worker_count_does_not_change_results(self, rough_spec):
        config = small_temporal_config(rough_spec, m=4)
        serial = await run_study_async(config, workers=1)
        parallel = await run_study_async(config, workers=3)
        assert serial.errors == parallel.errors
        assert serial.rates == parallel.rates

    def test_errors_are_rms_of_trajectories(self, rough_spec):
        config = small_temporal_config(rough_spec, m=2)
        table = run_study(config)
        samples = np.array([trajectory_errors(config, i) for i in range(2)])
        np.testing.assert_allclose(table.errors, np.sqrt((samples ** 2).mean(axis=0)), rtol=1e-14)

    def test_failing_trajectory_is_named(self, rough_spec, mocker):
        def fail_on_second(config, trajectory_id):
            if trajectory_id == 1:
                raise FloatingPointError("overflow")
            return np.ones(len(config.levels))

        mocker.patch("fracspde.experiments.trajectory_errors", side_effect=fail_on_second)
        with pytest.raises(TrajectoryError) as excinfo:
            run_study(small_temporal_config(rough_spec))
        assert excinfo.value.trajectory_id == 1
        assert isinstance(excinfo.value.__cause__, FloatingPointError)

    def test_rejects_zero_workers(self, rough_spec):
        with pytest.raises(DomainError):
            run_study(small_temporal_config(rough_spec), workers=0)


class TestHolderDiagnostic:
    """Test the time-regularity diagnostic."""

    def test_needs_fifty_trajectories(self, rough_spec):
        with pytest.raises(DomainError, match="m >= 50"):
            holder_diagnostic(rough_spec, 16, 4, m=10)

    def test_lags_must_fit(self, rough_spec):
        with pytest.raises(DomainError):
            holder_diagnostic(rough_spec, 8, 4, m=50, lags=(2, 16))
        with pytest.raises(DomainError):
            holder_diagnostic(rough_spec, 8, 4, m=50, lags=(2,))

    def test_vanishing_increments(self, quiet_spec):
        with pytest.raises(HolderDiagnosticError):
            holder_diagnostic(quiet_spec, 8, 4, m=50, lags=(1, 2))

    def test_estimate_shape(self):
        spec = ProblemSpec(alpha=1.0, hurst=HurstPair(h1=0.5, h2=0.5), T=0.1)
        estimate = holder_diagnostic(spec, 32, 8, m=50, lags=(2, 4, 8))
        assert estimate.lags == (2, 4, 8)
        assert len(estimate.rms_increments) == 3
        assert estimate.exponent == pytest.approx(2 * estimate.rms_slope)
        assert estimate.reference == pytest.approx(0.5)
        # increments grow with the lag
        assert list(estimate.rms_increments) == sorted(estimate.rms_increments)

    @pytest.mark.slow
    def test_heat_equation_with_white_noise(self):
        """alpha = 1 and H = (1/2, 1/2): the mean-square exponent is close to 1/2."""
        spec = ProblemSpec(alpha=1.0, hurst=HurstPair(h1=0.5, h2=0.5), T=0.1)
        estimate = holder_diagnostic(spec, 256, 64, m=50, lags=(2, 4, 8, 16))
        assert estimate.exponent == pytest.approx(0.5, abs=0.15)

    @pytest.mark.slow
    def test_fractional_rough_row(self):
        """(alpha, H1, H2) = (0.3, 0.3, 0.5): RMS increments scale like lag^0.395."""
        spec = ProblemSpec(alpha=0.3, hurst=HurstPair(h1=0.3, h2=0.5), T=0.1)
        estimate = holder_diagnostic(spec, 256, 64, m=50, lags=(2, 4, 8, 16))
        assert estimate.reference == pytest.approx(0.79)
        assert estimate.rms_slope == pytest.approx(0.395, abs=0.15)


class TestTemporalOrder:
    """Backward Euler order one for the white-noise heat equation on a coarse mesh."""

    @pytest.mark.slow
    def test_error_halves_with_the_step(self):
        spec = ProblemSpec(alpha=1.0, hurst=HurstPair(h1=0.5, h2=0.5), beta=1.0, T=0.1)
        rms = []
        for m_t in (128, 256):
            samples = [error_temporal(spec, seed, m_t, 4, finest_m_t=512) for seed in range(50)]
            rms.append(math.sqrt(np.mean(np.square(samples))))
        assert rms[1] / rms[0] == pytest.approx(0.5, abs=0.15)
