"""
Property suites behind ``fracspde verify``.

Each suite returns a SuiteReport of named checks; none of them raises on a
failed check, so a report always lists every result.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, special

from common.types import (
    DomainError,
    HurstPair,
    NoiseGridSpec,
    NonlinearSource,
    ProblemSpec,
    SourceKind,
    SuiteReport,
)

from .cq_stepper import cq_weights, power_series_coefficients, run_trajectory
from .experiments import rates_from_errors
from .fem import (
    FemFunction,
    Mesh1D,
    TridiagonalMatrix,
    assemble_mass,
    assemble_stiffness,
    l2_norm,
    load_noise,
    load_nonlinear,
    refine_embed,
    thomas_solve,
)
from .noise import aggregate, cholesky_factor, increment_covariance_1d, sample_sheet_increments
from .spectral import (
    ConstantSource,
    _ml_hankel,
    _ml_series,
    contour_relaxation,
    mittag_leffler,
    relaxation,
    spectral_reference_constant_source,
)

logger = logging.getLogger(__name__)

ML_TOL = 1e-10
CONTOUR_CHECK_TOL = 1e-8
ORDER_TOL = 0.25
NOISE_SAMPLES = 20000
NOISE_SIGMAS = 5.0
NOISE_LAW_PAIRS = (
    HurstPair(h1=0.5, h2=0.5),
    HurstPair(h1=0.25, h2=0.25),
    HurstPair(h1=0.2, h2=0.4),
)


## Mittag-Leffler


def verify_ml() -> SuiteReport:
    report = SuiteReport(suite='ml')

    z = np.linspace(-20.0, 0.0, 81)
    worst = max(abs(mittag_leffler(1.0, 1.0, v) - np.exp(v)) for v in z)
    report.record('E_1,1(z) = exp(z) on [-20, 0]', worst <= ML_TOL, f"max error {worst:.2e}", worst)

    x = np.linspace(0.0, 5.0, 51)
    worst = max(abs(mittag_leffler(2.0, 1.0, -v * v) - np.cos(v)) for v in x)
    report.record('E_2,1(-x^2) = cos(x) on [0, 5]', worst <= ML_TOL, f"max error {worst:.2e}", worst)

    z = -np.logspace(-1.3, 6.0, 80)
    worst = max(abs(mittag_leffler(1.0, 2.0, v) - np.expm1(v) / v) for v in z)
    report.record('E_1,2(z) = (exp(z) - 1)/z on [-1e6, -0.05]', worst <= ML_TOL, f"max error {worst:.2e}", worst)

    x = np.logspace(0.7, 6.0, 40)
    worst = max(abs(mittag_leffler(1.0, 3.0, -v) - (np.exp(-v) - 1.0 + v) / v ** 2) for v in x)
    report.record('E_1,3(-x) = (exp(-x) - 1 + x)/x^2 on [5, 1e6]', worst <= ML_TOL, f"max error {worst:.2e}", worst)

    worst = 0.0
    for a in (0.3, 0.5, 0.8):
        for b in (1.0, 2.0):
            for x in np.linspace(0.5 * a, 4.5 * a, 9):
                worst = max(worst, abs(_ml_hankel(a, b, x) - _ml_series(a, b, -x)))
    report.record('Hankel contour agrees with the series below the switch', worst <= ML_TOL, f"max gap {worst:.2e}", worst)

    worst = 0.0
    for alpha in (0.3, 0.5, 0.7, 0.8):
        for lam in (1.0, 10.0):
            for t in (0.1, 0.5, 1.0):
                worst = max(worst, abs(contour_relaxation(alpha, lam, t).value - relaxation(alpha, lam, t)))
    report.record('contour quadrature matches E_alpha(-lambda t^alpha)', worst <= CONTOUR_CHECK_TOL, f"max gap {worst:.2e}", worst)
    return report


## Convolution quadrature


def verify_cq() -> SuiteReport:
    report = SuiteReport(suite='cq')
    count = 64

    i = np.arange(count)
    worst = float(np.max(np.abs(cq_weights(0.5, 1.0, count).d - (-1.0) ** i * special.binom(0.5, i))))
    report.record('gamma = 1/2 weights match the binomial expansion', worst <= 1e-13, f"max error {worst:.2e}", worst)

    worst = 0.0
    for gamma in (0.3, 0.5, 0.7):
        g = cq_weights(gamma, 1.0, count).g
        exact = (-1.0) ** i * special.binom(gamma, i)
        worst = max(worst, float(np.max(np.abs(g - exact))))
    report.record('weights are the binomial coefficients of (1 - zeta)^gamma', worst <= 1e-12, f"max error {worst:.2e}", worst)

    # d^(gamma) * d^(1 - gamma) are the backward-difference weights [1/tau, -1/tau, 0, ...]
    tau = 0.1
    difference = np.zeros(count)
    difference[:2] = (1.0 / tau, -1.0 / tau)
    worst = 0.0
    for gamma in (0.3, 0.5, 0.7):
        product = np.convolve(cq_weights(gamma, tau, count).d, cq_weights(1.0 - gamma, tau, count).d)[:count]
        worst = max(worst, float(np.max(np.abs(product - difference))))
    report.record('d^(gamma) * d^(1-gamma) is the backward difference', worst <= 1e-12, f"max error {worst:.2e}", worst)

    worst = 0.0
    for gamma in (0.3, 0.5, 0.7):
        product = np.convolve(power_series_coefficients(gamma, count), power_series_coefficients(-gamma, count))[:count]
        identity = np.zeros(count)
        identity[0] = 1.0
        worst = max(worst, float(np.max(np.abs(product - identity))))
    report.record('(1 - zeta)^gamma (1 - zeta)^-gamma = 1', worst <= 1e-12, f"max error {worst:.2e}", worst)

    ok = True
    for gamma in (0.3, 0.5, 0.7):
        partial = np.cumsum(cq_weights(gamma, 1.0, count).g)
        ok &= bool(np.all(partial > 0.0) and np.all(np.diff(partial) < 0.0))
    report.record('partial sums of the weights are positive and decreasing', ok)

    d = cq_weights(0.0, 0.01, 8).d
    report.record('gamma = 0 reduces to the identity', bool(d[0] == 1.0 and np.all(d[1:] == 0.0)))
    return report


## Finite elements


def fem_eigenvalues(n: int, l: float, count: int) -> np.ndarray:
    mesh = Mesh1D(l, n)
    return linalg.eigh(
        assemble_stiffness(mesh).to_dense(),
        assemble_mass(mesh).to_dense(),
        eigvals_only=True,
        subset_by_index=[0, count - 1],
    )


def verify_fem() -> SuiteReport:
    report = SuiteReport(suite='fem')

    mesh = Mesh1D(1.0, 4)
    mass, stiffness = assemble_mass(mesh), assemble_stiffness(mesh)
    ok = np.allclose(mass.diag, 1.0 / 6.0) and np.allclose(mass.sub, 1.0 / 24.0)
    ok &= np.allclose(stiffness.diag, 8.0) and np.allclose(stiffness.sub, -4.0)
    report.record('mass and stiffness bands on 4 elements of [0, 1]', bool(ok))

    rng = np.random.default_rng(0)
    matrix = TridiagonalMatrix(rng.uniform(-1, 1, 19), rng.uniform(4, 5, 20), rng.uniform(-1, 1, 19))
    rhs = rng.standard_normal(20)
    gap = float(np.max(np.abs(thomas_solve(matrix, rhs) - np.linalg.solve(matrix.to_dense(), rhs))))
    report.record('tridiagonal solve matches a dense solve', gap <= 1e-12, f"max gap {gap:.2e}", gap)

    meshes = (32, 64, 128)
    exact = (np.arange(1, 4) * np.pi) ** 2
    errors = np.array([fem_eigenvalues(n, 1.0, 3) - exact for n in meshes])
    orders = np.log2(errors[:-1] / errors[1:])
    worst = float(np.max(np.abs(orders - 2.0)))
    report.record('generalized eigenvalues converge at order 2', worst <= 0.1, f"orders {orders.ravel().round(3).tolist()}", worst)

    mesh = Mesh1D(1.0, 16)
    u = FemFunction(mesh, np.sin(np.pi * mesh.interior_nodes))
    fine = refine_embed(u, 2)
    x = np.linspace(0.0, 1.0, 97)
    ok = abs(l2_norm(fine) - l2_norm(u)) <= 1e-13 and np.allclose(fine(x), u(x), atol=1e-14)
    report.record('refine_embed preserves the function', bool(ok))

    linear = load_nonlinear(u, NonlinearSource(kind=SourceKind.LINEAR, amplitude=1.0))
    gap = float(np.max(np.abs(linear - assemble_mass(mesh).matvec(u.coeffs))))
    report.record('load of f(u) = u equals M U', gap <= 1e-14, f"max gap {gap:.2e}", gap)

    constant = load_noise(mesh, np.full(mesh.n, 3.0))
    report.record('load of a constant field is c h per node', bool(np.allclose(constant, 3.0 * mesh.h)))
    return report


## Noise


def _within(empirical: np.ndarray, exact: np.ndarray, stderr: np.ndarray) -> tuple[bool, float]:
    score = float(np.max(np.abs(empirical - exact) / stderr))
    return score <= NOISE_SIGMAS, score


def verify_noise(samples: int = NOISE_SAMPLES, seed: int = 2024) -> SuiteReport:
    report = SuiteReport(suite='noise')
    grid = NoiseGridSpec(m_t=4, n_x=4, tau=0.25, h=0.25)
    rng = np.random.default_rng(seed)

    for hurst in NOISE_LAW_PAIRS:
        draws = np.array([sample_sheet_increments(grid, hurst, rng).values.ravel() for _ in range(samples)])
        exact = np.kron(
            increment_covariance_1d(hurst.h2, grid.tau, grid.m_t),
            increment_covariance_1d(hurst.h1, grid.h, grid.n_x),
        )
        empirical = draws.T @ draws / samples
        diag = np.diag(exact)
        stderr = np.sqrt((np.outer(diag, diag) + exact ** 2) / samples)
        ok, score = _within(empirical, exact, stderr)
        label = f"(H1, H2) = ({hurst.h1:g}, {hurst.h2:g})"
        report.record(f'sheet covariance on a 4 x 4 grid, {label}', ok, f"worst deviation {score:.2f} standard errors", score)

        mean_score = float(np.max(np.abs(draws.mean(axis=0)) / np.sqrt(diag / samples)))
        report.record(f'increments are centred, {label}', mean_score <= NOISE_SIGMAS, f"worst {mean_score:.2f} standard errors", mean_score)

    hurst = HurstPair(h1=0.3, h2=0.4)
    fine = sample_sheet_increments(NoiseGridSpec(m_t=16, n_x=8, tau=1.0 / 16, h=1.0 / 8), hurst, rng)
    gap = max(
        abs(aggregate(fine, a, b).total() - fine.total()) for a, b in ((2, 2), (4, 1), (16, 8), (1, 8))
    )
    report.record('aggregation preserves the total mass', gap <= 1e-12, f"max gap {gap:.2e}", gap)

    coarse = np.array([
        aggregate(sample_sheet_increments(grid, hurst, rng), 2, 2).values.ravel() for _ in range(samples)
    ])
    coarse_exact = np.kron(
        increment_covariance_1d(hurst.h2, 2 * grid.tau, 2),
        increment_covariance_1d(hurst.h1, 2 * grid.h, 2),
    )
    coarse_diag = np.diag(coarse_exact)
    coarse_stderr = np.sqrt((np.outer(coarse_diag, coarse_diag) + coarse_exact ** 2) / samples)
    ok, score = _within(coarse.T @ coarse / samples, coarse_exact, coarse_stderr)
    report.record('aggregated field has the coarse-grid law', ok, f"worst deviation {score:.2f} standard errors", score)

    cov = increment_covariance_1d(0.1, 1.0 / 256, 256)
    factor = cholesky_factor(cov)
    gap = float(np.max(np.abs(factor.reconstruct() - cov)) / np.max(np.abs(cov)))
    report.record('Cholesky factor reproduces an H = 0.1 covariance', gap <= 1e-12, f"relative gap {gap:.2e}", gap)

    brownian = increment_covariance_1d(0.5, 0.1, 6)
    report.record('H = 1/2 increments are independent', bool(np.allclose(brownian, 0.1 * np.eye(6), atol=1e-15)))
    return report


## Deterministic convergence against the spectral reference


@dataclass(frozen=True)
class OracleOrder:
    alpha: float
    axis: str
    grid: tuple[int, ...]
    errors: tuple[float, ...]
    mean_order: float | None


def deterministic_spec(alpha: float) -> ProblemSpec:
    """u_t + RL derivative term = 1 on [0, 1] x [0, 1] with u(0) = 0 and no noise."""
    return ProblemSpec(
        alpha=alpha,
        hurst=HurstPair(h1=0.5, h2=0.5),
        beta=0.0,
        l=1.0,
        T=1.0,
        f=NonlinearSource(kind=SourceKind.CONSTANT, amplitude=1.0),
    )


def deterministic_orders(alpha: float, axis: str, grid: tuple[int, ...], fixed: int) -> OracleOrder:
    """
    L2 errors at T of the fully discrete scheme against the spectral reference.

    Args:
        alpha: fractional order
        axis: 'space' (grid lists n_x, fixed is m_t) or 'time' (grid lists m_t, fixed is n_x)
        grid: refinement sequence
        fixed: resolution of the other axis
    """
    if axis not in ('space', 'time'):
        raise DomainError(f"axis must be 'space' or 'time', got {axis!r}")
    spec = deterministic_spec(alpha)
    reference = spectral_reference_constant_source(spec, ConstantSource(1.0), spec.T)
    errors = []
    for size in grid:
        m_t, n_x = (fixed, size) if axis == 'space' else (size, fixed)
        errors.append(reference.l2_distance(run_trajectory(spec, m_t, n_x, None).final))
    _, mean_order = rates_from_errors(errors)
    logger.debug(f"Oracle alpha={alpha} {axis}: errors {errors}, mean order {mean_order}")
    return OracleOrder(alpha=alpha, axis=axis, grid=tuple(grid), errors=tuple(errors), mean_order=mean_order)


def verify_oracle() -> SuiteReport:
    report = SuiteReport(suite='oracle')
    for alpha in (0.5, 0.8):
        spatial = deterministic_orders(alpha, 'space', (16, 32, 64), fixed=2048)
        ok = spatial.mean_order is not None and abs(spatial.mean_order - 2.0) <= ORDER_TOL
        report.record(f'spatial order 2 at alpha={alpha}', ok, f"errors {spatial.errors}", spatial.mean_order)

        temporal = deterministic_orders(alpha, 'time', (32, 64, 128), fixed=512)
        ok = temporal.mean_order is not None and abs(temporal.mean_order - 1.0) <= ORDER_TOL
        report.record(f'temporal order 1 at alpha={alpha}', ok, f"errors {temporal.errors}", temporal.mean_order)
    return report


SUITES: dict[str, Callable[[], SuiteReport]] = {
    'ml': verify_ml,
    'cq': verify_cq,
    'fem': verify_fem,
    'noise': verify_noise,
    'oracle': verify_oracle,
}


def run_suite(name: str) -> SuiteReport:
    try:
        suite = SUITES[name]
    except KeyError:
        raise DomainError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    logger.info(f"🚀 Running verification suite '{name}'")
    report = suite()
    failed = [check.name for check in report.checks if not check.passed]
    if failed:
        logger.error(f"❌ Suite '{name}' failed: {failed}")
    else:
        logger.info(f"✅ Suite '{name}' passed ({len(report.checks)} checks)")
    return report
