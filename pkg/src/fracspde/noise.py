"""
Fractional Brownian sheet noise.

Exact Gaussian sampling of sheet increments over a time x space box grid,
aggregation of fine boxes into coarse ones (so every resolution of a study
sees the same realisation), and the piecewise-constant Wong-Zakai field.
"""

import functools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from common.types import (
    HURST_MAX,
    BoxGridError,
    DomainError,
    FactorizationError,
    GridMismatchError,
    HurstPair,
    NoiseGridSpec,
)

logger = logging.getLogger(__name__)

# Pivots above -PSD_TOLERANCE * max(diag) are clamped to zero.
PSD_TOLERANCE = 1e-12
FIELD_HEADER = "m_t n_x tau h H1 H2 seed"


@dataclass(frozen=True)
class CovarianceFactor:
    """Lower-triangular L with L @ L.T equal to an increment covariance."""
    dim: int
    lower: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


@dataclass(frozen=True)
class BoxIncrementField:
    """Sheet increments: values[i, j] is the mass of time box i x space box j."""
    spec: NoiseGridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.spec.m_t, self.spec.n_x):
            raise BoxGridError(f"field of shape {values.shape} does not match grid ({self.spec.m_t}, {self.spec.n_x})")
        if not np.all(np.isfinite(values)):
            raise DomainError("box increments must be finite")
        object.__setattr__(self, 'values', values)

    def total(self) -> float:
        return float(self.values.sum())


def _check_hurst(hurst: float) -> None:
    if not 0.0 < hurst <= HURST_MAX:
        raise DomainError(f"Hurst exponent {hurst} outside (0, 1/2]")


def increment_autocovariance(hurst: float, n: int) -> np.ndarray:
    """gamma(k) = (|k+1|^2H + |k-1|^2H - 2|k|^2H) / 2 for unit steps, k = 0..n-1."""
    lags = np.arange(n, dtype=float)
    two_h = 2.0 * hurst
    return 0.5 * (np.abs(lags + 1.0) ** two_h + np.abs(lags - 1.0) ** two_h - 2.0 * lags ** two_h)


def increment_covariance_1d(hurst: float, step: float, n: int) -> np.ndarray:
    """
    Covariance of n consecutive fBm increments over boxes of width ``step``.

    Args:
        hurst: Hurst exponent in (0, 1/2]
        step: box width
        n: number of boxes

    Returns:
        Symmetric Toeplitz n x n matrix
    """
    _check_hurst(hurst)
    if n < 1:
        raise DomainError(f"need at least one box, got n={n}")
    if step <= 0.0:
        raise DomainError(f"box width must be positive, got {step}")
    return linalg.toeplitz(increment_autocovariance(hurst, n)) * step ** (2.0 * hurst)


def _clamped_cholesky(cov: np.ndarray) -> np.ndarray:
    n = cov.shape[0]
    floor = -PSD_TOLERANCE * float(np.max(np.diag(cov)))
    lower = np.zeros_like(cov)
    for j in range(n):
        row = lower[j, :j]
        pivot = cov[j, j] - row @ row
        if pivot < floor:
            raise FactorizationError(j, float(pivot))
        if pivot <= 0.0:
            logger.debug(f"Clamped pivot {j} ({pivot:.3e}) to zero")
            continue
        lower[j, j] = np.sqrt(pivot)
        lower[j + 1:, j] = (cov[j + 1:, j] - lower[j + 1:, :j] @ row) / lower[j, j]
    return lower


def cholesky_factor(cov: np.ndarray) -> CovarianceFactor:
    """
    Factor a symmetric positive semi-definite covariance as L @ L.T.

    LAPACK is tried first; if it rejects the matrix, a column-by-column
    factorization clamps rounding-level negative pivots to zero and reports
    the first genuinely negative one.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DomainError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
        raise DomainError("covariance must be symmetric")
    try:
        lower = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        logger.debug("LAPACK Cholesky failed, retrying with pivot clamping")
        lower = _clamped_cholesky(cov)
    lower.setflags(write=False)
    return CovarianceFactor(dim=cov.shape[0], lower=lower)


@functools.lru_cache(maxsize=64)
def increment_factor(hurst: float, step: float, n: int) -> CovarianceFactor:
    """Cached factor of increment_covariance_1d(hurst, step, n)."""
    logger.debug(f"Factoring increment covariance H={hurst} step={step:.6g} n={n}")
    return cholesky_factor(increment_covariance_1d(hurst, step, n))


def make_rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_sheet_increments(spec: NoiseGridSpec, hurst: HurstPair, rng: int | np.random.Generator) -> BoxIncrementField:
    """
    Draw one exact sample of the box increments.

    The sheet covariance is a product of a temporal and a spatial factor, so
    the field is L_t @ Z @ L_x.T with Z standard normal.
    """
    factor_t = increment_factor(hurst.h2, spec.tau, spec.m_t)
    factor_x = increment_factor(hurst.h1, spec.h, spec.n_x)
    z = make_rng(rng).standard_normal((spec.m_t, spec.n_x))
    return BoxIncrementField(spec, factor_t.lower @ z @ factor_x.lower.T)


def aggregate(field: BoxIncrementField, factor_t: int, factor_x: int) -> BoxIncrementField:
    """Sum factor_t x factor_x blocks of boxes into one coarse box each."""
    spec = field.spec
    if factor_t < 1 or factor_x < 1:
        raise DomainError(f"aggregation factors must be positive, got ({factor_t}, {factor_x})")
    if spec.m_t % factor_t:
        raise GridMismatchError(f"factor_t={factor_t} does not divide m_t={spec.m_t}")
    if spec.n_x % factor_x:
        raise GridMismatchError(f"factor_x={factor_x} does not divide n_x={spec.n_x}")
    if factor_t == 1 and factor_x == 1:
        return field

    m_t, n_x = spec.m_t // factor_t, spec.n_x // factor_x
    values = field.values.reshape(m_t, factor_t, n_x, factor_x).sum(axis=(1, 3))
    coarse = NoiseGridSpec(m_t=m_t, n_x=n_x, tau=spec.tau * factor_t, h=spec.h * factor_x)
    return BoxIncrementField(coarse, values)


def coarsen_to(field: BoxIncrementField, m_t: int, n_x: int) -> BoxIncrementField:
    """Aggregate a fine field down to an m_t x n_x grid."""
    spec = field.spec
    if spec.m_t % m_t:
        raise GridMismatchError(f"m_t={m_t} does not divide the noise grid's m_t={spec.m_t}")
    if spec.n_x % n_x:
        raise GridMismatchError(f"n_x={n_x} does not divide the noise grid's n_x={spec.n_x}")
    return aggregate(field, spec.m_t // m_t, spec.n_x // n_x)


def wong_zakai_values(field: BoxIncrementField) -> np.ndarray:
    """Levels of the piecewise-constant regularized noise: increment / (tau * h)."""
    return field.values / (field.spec.tau * field.spec.h)


def write_field_csv(path: str | Path, field: BoxIncrementField, hurst: HurstPair, seed: int) -> Path:
    """Dump a field row-major with a ``# m_t n_x tau h H1 H2 seed`` header."""
    path = Path(path)
    spec = field.spec
    values_line = " ".join(
        format(v, '.17g') if isinstance(v, float) else str(v)
        for v in (spec.m_t, spec.n_x, spec.tau, spec.h, hurst.h1, hurst.h2, seed)
    )
    np.savetxt(path, field.values, delimiter=',', fmt='%.17g', header=f"{FIELD_HEADER}\n{values_line}", comments='# ')
    return path


def load_field_csv(path: str | Path) -> tuple[BoxIncrementField, HurstPair, int]:
    path = Path(path)
    with path.open() as handle:
        names = handle.readline().lstrip('#').split()
        raw = handle.readline().lstrip('#').split()
    if names != FIELD_HEADER.split() or len(raw) != len(names):
        raise DomainError(f"{path} is not a field dump (bad header)")
    header = dict(zip(names, raw))
    spec = NoiseGridSpec(m_t=int(header['m_t']), n_x=int(header['n_x']), tau=float(header['tau']), h=float(header['h']))
    values = np.loadtxt(path, delimiter=',', comments='#', ndmin=2).reshape(spec.m_t, spec.n_x)
    return BoxIncrementField(spec, values), HurstPair(h1=float(header['H1']), h2=float(header['H2'])), int(header['seed'])
