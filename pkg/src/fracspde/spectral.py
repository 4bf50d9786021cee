"""
Spectral side of the problem: Dirichlet eigenpairs of -d^2/dx^2 on [0, l],
the two-parameter Mittag-Leffler function, the scalar solution kernel
E_alpha(-lambda t^alpha) (directly and by contour quadrature) and a
reference solution for deterministic sources.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from common.types import ContourSpec, DomainError, MittagLefflerError, ProblemSpec

from .fem import FemFunction, l2_norm

logger = logging.getLogger(__name__)

SERIES_SWITCH = 5.0
SERIES_RTOL = 1e-14
SERIES_MAX_TERMS = 5000
ML_ABS_TOL = 1e-10
LOG_MAX_FLOAT = math.log(np.finfo(float).max)
# e^{-RAY_CUTOFF} is below double precision
RAY_CUTOFF = 80.0
HANKEL_RADIUS = 1.0

CONTOUR_TOL = 1e-8
CONTOUR_RAY_DECAY = 40.0

ORACLE_MODES = 200
ORACLE_PANELS = 64
ORACLE_POINTS = 8


@dataclass(frozen=True)
class EigenPair:
    """lam = (k pi / l)^2 with phi(x) = sqrt(2/l) sin(k pi x / l)."""
    k: int
    lam: float
    l: float

    def __post_init__(self) -> None:
        if self.lam < eigenvalue_lower_bound(self.k, self.l) * (1.0 - 1e-12):
            raise DomainError(f"eigenvalue {self.lam} for k={self.k} is below the Weyl lower bound")

    def phi(self, x: np.ndarray | float) -> np.ndarray:
        return np.sqrt(2.0 / self.l) * np.sin(self.k * np.pi * np.asarray(x) / self.l)


def eigenvalue_lower_bound(k: int, l: float) -> float:
    """Li-Yau type bound for d = 1: lambda_k >= pi^2 k^2 / (3 l^2)."""
    return np.pi ** 2 * k ** 2 / (3.0 * l ** 2)


def eigenpair(k: int, l: float) -> EigenPair:
    if k < 1:
        raise DomainError(f"eigen index starts at 1, got k={k}")
    if l <= 0.0:
        raise DomainError(f"domain length must be positive, got l={l}")
    return EigenPair(k=k, lam=(k * np.pi / l) ** 2, l=l)


## Mittag-Leffler function


def mittag_leffler(a: float, b: float, z: float) -> float:
    """
    E_{a,b}(z) = sum_n z^n / Gamma(a n + b) for real z.

    Supported orders are 0 < a <= 1 and a = 2, with b > 0. Small |z| and
    positive z use the power series; large negative z uses an exponential
    representation (a = 1) or an integral over a Hankel contour (a < 1).

    Raises:
        DomainError: unsupported (a, b)
        MittagLefflerError: the evaluation did not reach 1e-10 absolute accuracy
    """
    if not (0.0 < a <= 1.0 or a == 2.0):
        raise DomainError(f"Mittag-Leffler order a={a} not supported (need 0 < a <= 1 or a = 2)")
    if b <= 0.0:
        raise DomainError(f"Mittag-Leffler parameter b={b} must be positive")
    z = float(z)
    if z == 0.0:
        return 1.0 / math.gamma(b)
    if a == 2.0 or z > 0.0 or abs(z) <= SERIES_SWITCH * min(a, 1.0):
        return _ml_series(a, b, z)
    if a == 1.0:
        return _ml_exponential(b, z)
    return _ml_hankel(a, b, -z)


def _ml_series(a: float, b: float, z: float) -> float:
    total = 0.0
    largest = 0.0
    log_abs = math.log(abs(z))
    previous = math.inf
    for n in range(SERIES_MAX_TERMS):
        log_magnitude = n * log_abs - math.lgamma(a * n + b)
        if log_magnitude > LOG_MAX_FLOAT:
            raise MittagLefflerError(f"series for E_{{{a},{b}}}({z}) overflowed at term {n}", total)
        magnitude = math.exp(log_magnitude)
        term = -magnitude if (z < 0.0 and n % 2) else magnitude
        total += term
        largest = max(largest, magnitude)
        if magnitude <= SERIES_RTOL * max(abs(total), 1.0) and magnitude < previous:
            break
        previous = magnitude
    else:
        raise MittagLefflerError(f"series for E_{{{a},{b}}}({z}) did not converge in {SERIES_MAX_TERMS} terms", total)

    lost = largest * np.finfo(float).eps * 10.0
    if lost > ML_ABS_TOL * max(abs(total), 1.0):
        raise MittagLefflerError(f"series for E_{{{a},{b}}}({z}) cancels catastrophically (error ~{lost:.1e})", total)
    if not math.isfinite(total):
        raise MittagLefflerError(f"series for E_{{{a},{b}}}({z}) overflowed", total)
    return total


def _ml_exponential(b: float, z: float) -> float:
    # a = 1 and z = -x < 0
    if b == 1.0:
        return math.exp(z)
    if b == 2.0:
        return math.expm1(z) / z
    if b < 1.0:
        # E_{1,b}(z) = 1/Gamma(b) + z E_{1,b+1}(z)
        return 1.0 / math.gamma(b) + z * _ml_exponential(b + 1.0, z)

    # E_{1,b}(-x) = x^{1-b} / Gamma(b-1) * int_0^x e^{-u} (x-u)^{b-2} du; past RAY_CUTOFF e^{-u} is negligible
    x = -z
    if b < 2.0 and x <= RAY_CUTOFF:
        value, error = integrate.quad(lambda u: math.exp(-u), 0.0, x, weight='alg', wvar=(0.0, b - 2.0), epsabs=1e-15, epsrel=1e-13)
        scale = x ** (1.0 - b) / math.gamma(b - 1.0)
    else:
        upper = min(x, RAY_CUTOFF)
        value, error = integrate.quad(lambda u: math.exp(-u) * (1.0 - u / x) ** (b - 2.0), 0.0, upper, limit=200, epsabs=1e-15, epsrel=1e-13)
        scale = 1.0 / (x * math.gamma(b - 1.0))
    value *= scale
    if error * scale > ML_ABS_TOL:
        raise MittagLefflerError(f"quadrature for E_{{1,{b}}}({z}) inaccurate (error {error * scale:.1e})", value)
    return value


def _ml_hankel(a: float, b: float, x: float) -> float:
    """E_{a,b}(-x) for 0 < a < 1 and x > 0 from a Hankel contour around the negative axis."""
    rho = HANKEL_RADIUS
    sin_b = math.sin(math.pi * b)
    sin_ab = math.sin(math.pi * (a - b))
    cos_a = math.cos(math.pi * a)

    def ray(r: float) -> float:
        ra = r ** a
        return math.exp(-r) * r ** (a - b) * (ra * sin_b - x * sin_ab) / (ra * ra + 2.0 * x * ra * cos_a + x * x)

    def arc(phi: float) -> float:
        s = rho * complex(math.cos(phi), math.sin(phi))
        return (np.exp(s) * s ** (a - b) / (s ** a + x) * s).real

    upper = rho + RAY_CUTOFF
    peak = x ** (1.0 / a)
    points = [peak] if rho < peak < upper else None
    ray_value, ray_error = integrate.quad(ray, rho, upper, points=points, limit=200, epsabs=1e-15, epsrel=1e-13)
    arc_value, arc_error = integrate.quad(arc, -math.pi, math.pi, limit=200, epsabs=1e-15, epsrel=1e-13)

    value = ray_value / math.pi + arc_value / (2.0 * math.pi)
    error = ray_error / math.pi + arc_error / (2.0 * math.pi)
    if error > ML_ABS_TOL:
        raise MittagLefflerError(f"contour integral for E_{{{a},{b}}}({-x}) inaccurate (error {error:.1e})", value)
    return value


## Solution kernel


def relaxation(alpha: float, lam: float, t: float) -> float:
    """E_alpha(-lam t^alpha), the solution of the scalar mode problem with unit data."""
    if t <= 0.0:
        raise DomainError(f"kernel time must be positive, got t={t}")
    return mittag_leffler(alpha, 1.0, -lam * t ** alpha)


def resolvent_kernel(k: int, t: float, spec: ProblemSpec) -> float:
    return relaxation(spec.alpha, eigenpair(k, spec.l).lam, t)


@dataclass(frozen=True)
class ContourEstimate:
    value: float
    error_estimate: float
    n_quad: int

    @property
    def accurate(self) -> bool:
        return self.error_estimate <= CONTOUR_TOL


def _contour_integral(alpha: float, lam: float, t: float, theta: float, kappa: float, n_quad: int) -> float:
    def resolvent(z: np.ndarray) -> np.ndarray:
        return np.exp(z * t) * z ** (alpha - 1.0) / (z ** alpha + lam)

    n_arc = max(n_quad // 4, 4)
    n_ray = n_quad - n_arc

    # upper ray z = r e^{i theta}; the lower ray is its conjugate
    r_max = kappa + CONTOUR_RAY_DECAY / (t * abs(math.cos(theta)))
    nodes, weights = leggauss(n_ray)
    half = 0.5 * (r_max - kappa)
    r = kappa + half * (nodes + 1.0)
    direction = np.exp(1j * theta)
    ray = np.sum(half * weights * resolvent(r * direction) * direction).imag / math.pi

    # arc z = kappa e^{i phi}, |phi| <= theta, dz = i z dphi
    nodes, weights = leggauss(n_arc)
    phi = theta * nodes
    z = kappa * np.exp(1j * phi)
    arc = np.sum(theta * weights * (resolvent(z) * z).real) / (2.0 * math.pi)
    return float(ray + arc)


def contour_relaxation(alpha: float, lam: float, t: float, contour: ContourSpec | None = None) -> ContourEstimate:
    """
    E_alpha(-lam t^alpha) from the inverse Laplace transform of z^{alpha-1}/(z^alpha + lam)
    along a contour Gamma_{theta,kappa}, with Gauss-Legendre nodes on the ray and on the arc.

    The error estimate compares against the same rule with half the nodes.
    """
    contour = contour or ContourSpec()
    if t <= 0.0:
        raise DomainError(f"kernel time must be positive, got t={t}")
    kappa = contour.radius(t)
    if kappa > math.pi / (t * math.sin(contour.theta)):
        logger.warning(f"⚠️ Arc radius {kappa:.3g} exceeds pi/(t sin theta) for t={t:.3g}")

    value = _contour_integral(alpha, lam, t, contour.theta, kappa, contour.n_quad)
    coarse = _contour_integral(alpha, lam, t, contour.theta, kappa, contour.n_quad // 2)
    estimate = ContourEstimate(value=value, error_estimate=abs(value - coarse), n_quad=contour.n_quad)
    if not estimate.accurate:
        logger.warning(
            f"⚠️ Contour quadrature for lambda={lam:.3g}, t={t:.3g} has error estimate {estimate.error_estimate:.2e}"
        )
    return estimate


def contour_quadrature_kernel(k: int, t: float, spec: ProblemSpec, contour: ContourSpec | None = None) -> ContourEstimate:
    return contour_relaxation(spec.alpha, eigenpair(k, spec.l).lam, t, contour)


## Reference solution for deterministic sources


@dataclass(frozen=True)
class ConstantSource:
    value: float = 1.0


@dataclass(frozen=True)
class SineSeries:
    """c(x) = sum_k coefficients[k-1] * phi_k(x)."""
    coefficients: tuple[float, ...]


SourceLike = Union[float, ConstantSource, SineSeries, Callable[[np.ndarray], np.ndarray]]


def eigen_inner_products(c: SourceLike, l: float, modes: int) -> np.ndarray:
    """(c, phi_k) for k = 1..modes."""
    k = np.arange(1, modes + 1)
    if isinstance(c, (int, float)):
        c = ConstantSource(float(c))
    if isinstance(c, ConstantSource):
        return c.value * np.sqrt(2.0 / l) * l * (1.0 - np.cos(k * np.pi)) / (k * np.pi)
    if isinstance(c, SineSeries):
        out = np.zeros(modes)
        given = np.asarray(c.coefficients[:modes], dtype=float)
        out[:len(given)] = given
        return out

    # composite Gauss rule, with enough panels to resolve the highest mode
    panels = max(ORACLE_PANELS, 2 * modes)
    nodes, weights = leggauss(ORACLE_POINTS)
    edges = np.linspace(0.0, l, panels + 1)
    half = 0.5 * (edges[1] - edges[0])
    x = (edges[:-1, None] + half * (nodes[None, :] + 1.0)).ravel()
    w = np.tile(half * weights, panels)
    values = np.asarray(c(x), dtype=float) * w
    return np.sqrt(2.0 / l) * np.sin(np.outer(k, x) * np.pi / l) @ values


@dataclass(frozen=True)
class SpectralSolution:
    """u(t, x) ~ sum_k coefficients[k-1] phi_k(x), truncated after K modes."""
    l: float
    t: float
    coefficients: np.ndarray
    tail_estimate: float = 0.0
    modes: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'modes', np.arange(1, len(self.coefficients) + 1))

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        basis = np.sqrt(2.0 / self.l) * np.sin(np.outer(x, self.modes) * np.pi / self.l)
        return basis @ self.coefficients

    def l2_norm(self) -> float:
        return float(np.sqrt(self.coefficients @ self.coefficients))

    def l2_distance(self, u: FemFunction) -> float:
        """Exact L2 distance between a P1 function and the truncated series."""
        mesh = u.mesh
        if abs(mesh.l - self.l) > 1e-12 * self.l:
            raise DomainError(f"FEM domain length {mesh.l} differs from {self.l}")
        h = mesh.h
        omega = self.modes * np.pi / self.l
        # (hat_j, sin(omega x)) = sin(omega x_j) * 2(1 - cos(omega h)) / (omega^2 h)
        hat_sine = np.sqrt(2.0 / self.l) * 2.0 * (1.0 - np.cos(omega * h)) / (omega ** 2 * h)
        projections = hat_sine * (np.sin(np.outer(omega, mesh.interior_nodes)) @ u.coeffs)
        squared = l2_norm(u) ** 2 - 2.0 * projections @ self.coefficients + self.coefficients @ self.coefficients
        return float(np.sqrt(max(squared, 0.0)))


def spectral_reference_constant_source(
    spec: ProblemSpec,
    c: SourceLike,
    t: float,
    modes: int = ORACLE_MODES,
) -> SpectralSolution:
    """
    Solution at time t of the deterministic problem with u(0) = 0 and a
    time-independent source c(x):

        a_k(t) = (c, phi_k) t E_{alpha,2}(-lambda_k t^alpha)

    Args:
        spec: problem (alpha and l are used)
        c: source; a number, ConstantSource, SineSeries or callable
        t: evaluation time
        modes: number of eigenmodes K

    Returns:
        SpectralSolution with a K^{-3/2} tail estimate
    """
    if t <= 0.0:
        raise DomainError(f"evaluation time must be positive, got t={t}")
    if modes < 1:
        raise DomainError(f"need at least one mode, got {modes}")
    inner = eigen_inner_products(c, spec.l, modes)
    lam = (np.arange(1, modes + 1) * np.pi / spec.l) ** 2
    coefficients = np.array([
        b * t * mittag_leffler(spec.alpha, 2.0, -lk * t ** spec.alpha) if b != 0.0 else 0.0
        for b, lk in zip(inner, lam)
    ])
    # last tenth of the kept coefficients, scaled by K^{-3/2}
    tail = float(np.sqrt(np.sum(coefficients[-max(modes // 10, 1):] ** 2)) * modes ** -1.5)
    logger.debug(f"Spectral reference: alpha={spec.alpha} t={t} K={modes} tail~{tail:.2e}")
    return SpectralSolution(l=spec.l, t=t, coefficients=coefficients, tail_estimate=tail)
