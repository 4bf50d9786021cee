"""
Monte Carlo convergence studies with coupled noise.

Every trajectory draws one sheet sample on the finest grid a study needs and
aggregates it down to each level, so errors between levels measure
discretization only. Errors are root-mean-square over trajectories and rates
are ln(e_k / e_{k+1}) / ln 2.
"""

import asyncio
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from common.types import (
    DomainError,
    GridMismatchError,
    HolderDiagnosticError,
    HurstPair,
    NoiseGridSpec,
    NonlinearSource,
    ProblemSpec,
    RateTable,
    RunConfig,
    SourceKind,
    StandingAssumptionError,
    StudyConfig,
    StudyMode,
    TrajectoryError,
)

from .cq_stepper import run_trajectory
from .fem import FemFunction, l2_norm, refine_embed
from .noise import BoxIncrementField, coarsen_to, sample_sheet_increments

logger = logging.getLogger(__name__)

HOLDER_MIN_TRAJECTORIES = 50


## Published parameter sets


@dataclass(frozen=True)
class TableRow:
    alpha: float
    h1: float
    h2: float
    reported_errors: tuple[float, ...]
    reported_rate: float
    theoretical_rate: float


# Temporal study: T/tau = 16, 32, 64, 128 at h = l/512
TABLE1_ROWS: tuple[TableRow, ...] = (
    TableRow(0.3, 0.2, 0.2, (4.002e-05, 4.191e-05, 4.155e-05, 3.478e-05), 0.0675, 0.08),
    TableRow(0.3, 0.3, 0.5, (1.012e-05, 8.111e-06, 5.976e-06, 4.188e-06), 0.4243, 0.395),
    TableRow(0.5, 0.2, 0.3, (6.808e-05, 5.872e-05, 5.805e-05, 5.069e-05), 0.1419, 0.1),
    TableRow(0.5, 0.4, 0.3, (5.808e-05, 5.563e-05, 4.244e-05, 4.497e-05), 0.1230, 0.15),
    TableRow(0.7, 0.4, 0.5, (3.886e-05, 3.354e-05, 2.822e-05, 2.126e-05), 0.2901, 0.29),
    TableRow(0.7, 0.5, 0.2, (1.339e-04, 1.351e-04, 1.482e-04, 1.268e-04), 0.0264, 0.025),
)

# Spatial study: l/h = 8, 16, 32, 64 at tau = T/2048
TABLE2_ROWS: tuple[TableRow, ...] = (
    TableRow(0.3, 0.2, 0.5, (1.385e-01, 7.186e-02, 5.079e-02, 3.173e-02), 0.7087, 0.7),
    TableRow(0.3, 0.5, 0.5, (3.188e-02, 1.554e-02, 7.991e-03, 4.002e-03), 0.9979, 1.0),
    TableRow(0.5, 0.2, 0.3, (9.038e-01, 6.727e-01, 4.861e-01, 3.072e-01), 0.5190, 0.4),
    TableRow(0.5, 0.5, 0.4, (1.533e-01, 7.697e-02, 4.082e-02, 2.042e-02), 0.9695, 1.0),
    TableRow(0.7, 0.4, 0.4, (4.977e-01, 3.482e-01, 2.396e-01, 1.468e-01), 0.5871, 0.5429),
    TableRow(0.7, 0.3, 0.4, (7.310e-01, 5.083e-01, 3.810e-01, 2.546e-01), 0.5073, 0.4429),
)

TABLE_ROWS = {StudyMode.TEMPORAL: TABLE1_ROWS, StudyMode.SPATIAL: TABLE2_ROWS}


@dataclass(frozen=True)
class StudyPreset:
    m: int
    T: float
    l: float
    beta: float
    f: NonlinearSource
    levels: tuple[tuple[int, int], ...]


DESK_PRESETS = {
    StudyMode.TEMPORAL: StudyPreset(
        m=100, T=0.5, l=0.5, beta=1.0,
        f=NonlinearSource(kind=SourceKind.SINE, amplitude=1.0),
        levels=((16, 512), (32, 512), (64, 512), (128, 512)),
    ),
    StudyMode.SPATIAL: StudyPreset(
        m=50, T=0.01, l=0.1, beta=10.0,
        f=NonlinearSource(kind=SourceKind.SINE, amplitude=0.02),
        levels=((1024, 8), (1024, 16), (1024, 32), (1024, 64)),
    ),
}

PAPER_PRESETS = {
    StudyMode.TEMPORAL: StudyPreset(
        m=200, T=0.5, l=0.5, beta=1.0,
        f=NonlinearSource(kind=SourceKind.SINE, amplitude=1.0),
        levels=((16, 512), (32, 512), (64, 512), (128, 512)),
    ),
    StudyMode.SPATIAL: StudyPreset(
        m=100, T=0.01, l=0.1, beta=10.0,
        f=NonlinearSource(kind=SourceKind.SINE, amplitude=0.02),
        levels=((2048, 8), (2048, 16), (2048, 32), (2048, 64)),
    ),
}


def preset_for(mode: StudyMode, paper_scale: bool = False) -> StudyPreset:
    return (PAPER_PRESETS if paper_scale else DESK_PRESETS)[mode]


def build_study_config(
    mode: StudyMode,
    alpha: float,
    h1: float,
    h2: float,
    *,
    paper_scale: bool = False,
    base_seed: int = 42,
    m: int | None = None,
    levels: list[tuple[int, int]] | None = None,
) -> StudyConfig:
    """StudyConfig for one (alpha, H1, H2) row on top of the mode's preset."""
    preset = preset_for(mode, paper_scale)
    spec = ProblemSpec(
        alpha=alpha,
        hurst=HurstPair(h1=h1, h2=h2),
        beta=preset.beta,
        l=preset.l,
        T=preset.T,
        f=preset.f,
    )
    return StudyConfig(
        spec=spec,
        m=m if m is not None else preset.m,
        levels=list(levels) if levels is not None else list(preset.levels),
        base_seed=base_seed,
        mode=mode,
    )


PRESET_PROBLEM_FIELDS = ('beta', 'l', 'T', 'f')


def study_config_from_run(run: RunConfig, mode: StudyMode, *, paper_scale: bool = False, base_seed: int = 42) -> StudyConfig:
    """
    StudyConfig from a run config file: problem fields the file sets
    explicitly win over the preset, the rest come from the preset.
    """
    preset = preset_for(mode, paper_scale)
    explicit = run.problem.model_fields_set
    spec = run.problem.model_copy(
        update={name: getattr(preset, name) for name in PRESET_PROBLEM_FIELDS if name not in explicit}
    )
    return StudyConfig(
        spec=spec,
        m=run.study.m if run.study.m is not None else preset.m,
        levels=list(run.study.levels) if run.study.levels is not None else list(preset.levels),
        base_seed=base_seed,
        mode=mode,
    )


## Theoretical baselines


def theoretical_temporal_rate(alpha: float, h1: float, h2: float) -> float:
    """RMS temporal rate (2 H2 + (H1 - 1) alpha) / 2."""
    margin = 2.0 * h2 + (h1 - 1.0) * alpha
    if margin <= 0.0:
        raise StandingAssumptionError(alpha, h1, h2)
    return margin / 2.0


def theoretical_spatial_rate(alpha: float, h1: float, h2: float) -> float:
    """RMS spatial rate (2 min(2 H2 / alpha - 1/2, 1) + 2 H1 - 1) / 2."""
    sigma = min(2.0 * h2 / alpha - 0.5, 1.0)
    rate = (2.0 * sigma + 2.0 * h1 - 1.0) / 2.0
    if rate <= 0.0:
        raise DomainError(f"spatial rate {rate:.6g} for (alpha, H1, H2) = ({alpha}, {h1}, {h2}) is not positive")
    return rate


@dataclass(frozen=True)
class RegularityBounds:
    spatial_index: float
    temporal_exponent: float


def regularity_bounds(alpha: float, h1: float, h2: float) -> RegularityBounds:
    """
    Supremal regularity indices of the mild solution.

    Returns:
        spatial_index: sup of 2 sigma with u(t) in the domain of A^sigma, min(2 H2/alpha + H1 - 1, 2 H1 + 1)
        temporal_exponent: sup of the mean-square Holder exponent, 2 H2 + (H1 - 1) alpha
    """
    temporal = 2.0 * h2 + (h1 - 1.0) * alpha
    if temporal <= 0.0:
        raise StandingAssumptionError(alpha, h1, h2)
    spatial = min(2.0 * h2 / alpha + h1 - 1.0, 2.0 * h1 + 1.0)
    return RegularityBounds(spatial_index=spatial, temporal_exponent=temporal)


def theoretical_rate(mode: StudyMode, alpha: float, h1: float, h2: float) -> float | None:
    try:
        if mode == StudyMode.TEMPORAL:
            return theoretical_temporal_rate(alpha, h1, h2)
        return theoretical_spatial_rate(alpha, h1, h2)
    except DomainError as e:
        logger.warning(f"⚠️ No theoretical rate: {e}")
        return None


## Rates


def rates_from_errors(errors: list[float] | np.ndarray) -> tuple[list[float], float | None]:
    """
    Successive rates ln(e_k / e_{k+1}) / ln 2 and their mean.

    A rate is NaN when either error is zero; the mean skips NaNs and is None
    if nothing is left.
    """
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        rates = np.log(e[:-1] / e[1:]) / math.log(2.0)
    rates = np.where((e[:-1] > 0.0) & (e[1:] > 0.0), rates, np.nan)
    finite = rates[np.isfinite(rates)]
    mean = float(finite.mean()) if finite.size else None
    return [float(r) for r in rates], mean


def synthetic_rate_check(rate: float = 0.5, count: int = 5, scale: float = 1e-3) -> tuple[list[float], float | None]:
    """Rates recovered from the exact sequence e_k = scale * 2^{-rate k}."""
    errors = scale * 2.0 ** (-rate * np.arange(count))
    return rates_from_errors(errors)


## Per-trajectory errors


def sample_fine_field(spec: ProblemSpec, seed: int, m_t: int, n_x: int) -> BoxIncrementField:
    grid = NoiseGridSpec.for_domain(spec.T, spec.l, m_t, n_x)
    return sample_sheet_increments(grid, spec.hurst, seed)


def _final_state(
    spec: ProblemSpec,
    field: BoxIncrementField,
    m_t: int,
    n_x: int,
    cache: dict[tuple[int, int], FemFunction] | None = None,
) -> FemFunction:
    key = (m_t, n_x)
    if cache is not None and key in cache:
        return cache[key]
    final = run_trajectory(spec, m_t, n_x, coarsen_to(field, m_t, n_x)).final
    if cache is not None:
        cache[key] = final
    return final


def _temporal_gap(spec, field, m_t, n_x, cache=None) -> float:
    coarse = _final_state(spec, field, m_t, n_x, cache)
    fine = _final_state(spec, field, 2 * m_t, n_x, cache)
    return l2_norm(fine - coarse)


def _spatial_gap(spec, field, m_t, n_x, cache=None) -> float:
    coarse = _final_state(spec, field, m_t, n_x, cache)
    fine = _final_state(spec, field, m_t, 2 * n_x, cache)
    return l2_norm(fine - refine_embed(coarse, 1))


def error_temporal(spec: ProblemSpec, omega_seed: int, m_t: int, n_x: int, finest_m_t: int | None = None) -> float:
    """
    ||u_tau - u_{tau/2}|| at T for one trajectory.

    Both solves use the sheet sampled with ``omega_seed`` on a
    finest_m_t x n_x grid (default 2 m_t), aggregated down.
    """
    finest_m_t = finest_m_t or 2 * m_t
    if finest_m_t % (2 * m_t):
        raise GridMismatchError(f"2*m_t={2 * m_t} does not divide the finest time grid m_t={finest_m_t}")
    field = sample_fine_field(spec, omega_seed, finest_m_t, n_x)
    return _temporal_gap(spec, field, m_t, n_x)


def error_spatial(spec: ProblemSpec, omega_seed: int, n_x: int, m_t: int, finest_n_x: int | None = None) -> float:
    """||u_h - u_{h/2}|| at T for one trajectory, coarse solution embedded in the fine mesh."""
    finest_n_x = finest_n_x or 2 * n_x
    if finest_n_x % (2 * n_x):
        raise GridMismatchError(f"2*n_x={2 * n_x} does not divide the finest space grid n_x={finest_n_x}")
    field = sample_fine_field(spec, omega_seed, m_t, finest_n_x)
    return _spatial_gap(spec, field, m_t, n_x)


def trajectory_errors(config: StudyConfig, trajectory_id: int) -> np.ndarray:
    """Per-level error samples of one trajectory; every distinct grid is solved once."""
    seed = config.base_seed + trajectory_id
    fine_m_t, fine_n_x = config.finest_noise_grid
    field = sample_fine_field(config.spec, seed, fine_m_t, fine_n_x)
    gap = _temporal_gap if config.mode == StudyMode.TEMPORAL else _spatial_gap
    cache: dict[tuple[int, int], FemFunction] = {}
    errors = np.array([gap(config.spec, field, m_t, n_x, cache) for m_t, n_x in config.levels])
    logger.debug(f"Trajectory {trajectory_id} (seed {seed}): {errors}")
    return errors


## Study driver


def build_rate_table(config: StudyConfig, samples: np.ndarray, wall_time: float = 0.0) -> RateTable:
    """Reduce an (m x L) array of per-trajectory errors into a RateTable."""
    errors = np.sqrt(np.mean(samples ** 2, axis=0))
    rates, mean_rate = rates_from_errors(errors)
    hurst = config.spec.hurst
    return RateTable(
        mode=config.mode,
        alpha=config.spec.alpha,
        h1=hurst.h1,
        h2=hurst.h2,
        m=config.m,
        base_seed=config.base_seed,
        levels=list(config.levels),
        errors=[float(e) for e in errors],
        rates=rates,
        mean_rate=mean_rate,
        theoretical_rate=theoretical_rate(config.mode, config.spec.alpha, hurst.h1, hurst.h2),
        wall_time=wall_time,
    )


async def run_study_async(config: StudyConfig, workers: int = 1) -> RateTable:
    """
    Run all trajectories of a study on a thread pool.

    Results land in a slot per trajectory, so the table does not depend on
    ``workers`` or on completion order.

    Raises:
        TrajectoryError: the first failing trajectory, with its id
    """
    if workers < 1:
        raise DomainError(f"workers must be >= 1, got {workers}")
    start = time.perf_counter()
    samples = np.zeros((config.m, len(config.levels)))
    loop = asyncio.get_running_loop()
    logger.info(
        f"Study {config.mode.value} alpha={config.spec.alpha} H=({config.spec.hurst.h1}, {config.spec.hurst.h2}): "
        f"{config.m} trajectories, levels {config.levels}, {workers} worker(s)"
    )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        async def run_one(i: int) -> None:
            try:
                samples[i] = await loop.run_in_executor(pool, trajectory_errors, config, i)
            except Exception as e:
                raise TrajectoryError(i, e) from e

        await asyncio.gather(*(run_one(i) for i in range(config.m)))

    table = build_rate_table(config, samples, time.perf_counter() - start)
    logger.info(f"Study done in {table.wall_time:.1f}s: errors {table.errors}, mean rate {table.mean_rate}")
    return table


def run_study(config: StudyConfig, workers: int = 1) -> RateTable:
    return asyncio.run(run_study_async(config, workers))


## Time regularity


@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    stderr: float
    rms_slope: float
    lags: tuple[int, ...]
    rms_increments: tuple[float, ...]
    reference: float | None = None


def holder_diagnostic(
    spec: ProblemSpec,
    m_t: int,
    n_x: int,
    m: int,
    lags: tuple[int, ...] = (2, 4, 8, 16),
    base_seed: int = 42,
) -> HolderEstimate:
    """
    Estimate the mean-square Holder exponent of t -> u(t) at T.

    The RMS of ||u(T) - u(T - lag tau)|| over m trajectories is regressed
    against lag tau in log-log scale; the mean-square exponent is twice the
    slope.

    Raises:
        DomainError: fewer than 50 trajectories or a lag outside [1, m_t]
        HolderDiagnosticError: some RMS increment is zero
    """
    if m < HOLDER_MIN_TRAJECTORIES:
        raise DomainError(f"the diagnostic needs m >= {HOLDER_MIN_TRAJECTORIES}, got {m}")
    lags = tuple(sorted(set(int(lag) for lag in lags)))
    if len(lags) < 2 or lags[0] < 1 or lags[-1] > m_t:
        raise DomainError(f"need at least two lags in [1, {m_t}], got {lags}")

    tau = spec.T / m_t
    squared = np.zeros((m, len(lags)))
    snapshots = [m_t - lag for lag in lags]
    for i in range(m):
        field = sample_fine_field(spec, base_seed + i, m_t, n_x)
        result = run_trajectory(spec, m_t, n_x, field, snapshots=snapshots, seed=base_seed + i)
        for j, lag in enumerate(lags):
            squared[i, j] = l2_norm(result.final - result.snapshots[m_t - lag]) ** 2

    rms = np.sqrt(squared.mean(axis=0))
    if np.any(rms <= 0.0):
        raise HolderDiagnosticError("increments vanish identically; the log-log regression is undefined")

    fit = stats.linregress(np.log(np.asarray(lags) * tau), np.log(rms))
    try:
        reference = regularity_bounds(spec.alpha, spec.hurst.h1, spec.hurst.h2).temporal_exponent
    except DomainError:
        reference = None
    estimate = HolderEstimate(
        exponent=2.0 * fit.slope,
        stderr=2.0 * fit.stderr,
        rms_slope=fit.slope,
        lags=lags,
        rms_increments=tuple(float(r) for r in rms),
        reference=reference,
    )
    logger.info(f"Holder diagnostic: exponent {estimate.exponent:.3f} +- {estimate.stderr:.3f} (reference {reference})")
    return estimate
