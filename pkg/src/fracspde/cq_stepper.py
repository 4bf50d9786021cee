"""
Backward-Euler convolution quadrature for the fractional time derivative,
coupled with the P1 mass and stiffness matrices.

Each step solves

    (M/tau + d_0 S) U^n = M U^{n-1}/tau - S sum_{j=1}^{n-1} d_{n-j} U^j
                          + (f(U^{n-1}), phi) + beta Xi^n

where d_i are the weights of the Riemann-Liouville derivative of order
gamma = 1 - alpha and Xi^n is the load of the Wong-Zakai noise on time box n.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from common.types import DomainError, FracSpdeError, GridMismatchError, ProblemSpec

from .fem import (
    FemFunction,
    Mesh1D,
    TridiagonalFactor,
    TridiagonalMatrix,
    assemble_mass,
    assemble_stiffness,
    load_nonlinear,
    load_noise,
)
from .noise import BoxIncrementField, wong_zakai_values

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CqWeights:
    """d_i = tau^{-gamma} g_i with g_i the coefficients of (1 - zeta)^gamma."""
    gamma: float
    tau: float
    d: np.ndarray

    @property
    def g(self) -> np.ndarray:
        return self.d * self.tau ** self.gamma


def power_series_coefficients(power: float, count: int) -> np.ndarray:
    """Coefficients of (1 - zeta)^power: g_0 = 1, g_i = g_{i-1} (i - 1 - power) / i."""
    i = np.arange(1, count, dtype=float)
    g = np.ones(count)
    g[1:] = np.cumprod((i - 1.0 - power) / i)
    return g


def cq_weights(gamma: float, tau: float, count: int) -> CqWeights:
    """
    First ``count`` backward-Euler convolution weights.

    Args:
        gamma: derivative order in [0, 1)
        tau: time step
        count: number of weights

    Returns:
        CqWeights
    """
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"convolution order gamma={gamma} outside [0, 1)")
    if tau <= 0.0:
        raise DomainError(f"time step must be positive, got tau={tau}")
    if count < 1:
        raise DomainError(f"need at least one weight, got count={count}")
    d = tau ** (-gamma) * power_series_coefficients(gamma, count)
    d.setflags(write=False)
    return CqWeights(gamma=gamma, tau=tau, d=d)


def system_matrix(weights: CqWeights, mass: TridiagonalMatrix, stiffness: TridiagonalMatrix) -> TridiagonalMatrix:
    return mass.combine(1.0 / weights.tau, stiffness, weights.d[0])


def step(
    n: int,
    history: np.ndarray,
    weights: CqWeights,
    mass: TridiagonalMatrix,
    stiffness: TridiagonalMatrix,
    noise_load: np.ndarray,
    spec: ProblemSpec,
    factor: TridiagonalFactor | None = None,
    mesh: Mesh1D | None = None,
) -> np.ndarray:
    """
    Compute U^n from U^0..U^{n-1}.

    Args:
        n: step index, 1 <= n
        history: array whose rows 0..n-1 hold U^0..U^{n-1}
        weights: convolution weights, at least n of them
        mass: P1 mass matrix
        stiffness: P1 stiffness matrix
        noise_load: noise load vector of time box n (before the beta factor)
        spec: problem definition
        factor: factorization of the step matrix, computed if omitted
        mesh: the mesh the matrices were assembled on, rebuilt from spec.l if omitted

    Returns:
        Coefficient vector U^n
    """
    if n < 1 or history.shape[0] < n:
        raise DomainError(f"step {n} needs {n} history rows, got {history.shape[0]}")
    if len(weights.d) < n:
        raise DomainError(f"step {n} needs {n} convolution weights, got {len(weights.d)}")
    tau = weights.tau
    previous = history[n - 1]
    memory = weights.d[n - 1:0:-1] @ history[1:n]
    if mesh is None:
        mesh = Mesh1D(spec.l, mass.dim + 1)
    elif mesh.dim != mass.dim:
        raise GridMismatchError(f"mesh has {mesh.dim} unknowns, matrices have {mass.dim}")
    rhs = (
        mass.matvec(previous) / tau
        - stiffness.matvec(memory)
        + load_nonlinear(FemFunction(mesh, previous), spec.f)
        + spec.beta * noise_load
    )
    if factor is None:
        factor = system_matrix(weights, mass, stiffness).factorize()
    return factor.solve(rhs)


@dataclass
class CqStepper:
    """Matrices, weights and the step factorization for one (m_t, n_x) grid."""
    spec: ProblemSpec
    mesh: Mesh1D
    weights: CqWeights
    mass: TridiagonalMatrix
    stiffness: TridiagonalMatrix
    factor: TridiagonalFactor

    @classmethod
    def build(cls, spec: ProblemSpec, mesh: Mesh1D, m_t: int) -> 'CqStepper':
        weights = cq_weights(spec.gamma, spec.T / m_t, m_t)
        mass = assemble_mass(mesh)
        stiffness = assemble_stiffness(mesh)
        factor = system_matrix(weights, mass, stiffness).factorize()
        return cls(spec, mesh, weights, mass, stiffness, factor)

    def advance(self, n: int, history: np.ndarray, noise_load: np.ndarray) -> np.ndarray:
        return step(n, history, self.weights, self.mass, self.stiffness, noise_load, self.spec, self.factor, self.mesh)


@dataclass
class TrajectoryResult:
    final: FemFunction
    snapshots: dict[int, FemFunction] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def times(self, tau: float) -> dict[int, float]:
        return {n: n * tau for n in self.snapshots}


def run_trajectory(
    spec: ProblemSpec,
    m_t: int,
    n_x: int,
    noise: BoxIncrementField | None,
    snapshots: Iterable[int] = (),
    seed: int | None = None,
) -> TrajectoryResult:
    """
    Integrate from U^0 = 0 to t = T on an m_t x n_x grid.

    Args:
        spec: problem definition
        m_t: number of time steps
        n_x: number of elements
        noise: box increments on exactly this grid; None means no noise
        snapshots: step indices whose solution is kept
        seed: recorded in the metadata

    Returns:
        TrajectoryResult with the final state and requested snapshots
    """
    if m_t < 1:
        raise DomainError(f"need at least one time step, got m_t={m_t}")
    mesh = Mesh1D(spec.l, n_x)
    wanted = sorted(set(int(s) for s in snapshots))
    if wanted and (wanted[0] < 0 or wanted[-1] > m_t):
        raise DomainError(f"snapshot indices must lie in [0, {m_t}], got {wanted}")

    if noise is not None:
        if (noise.spec.m_t, noise.spec.n_x) != (m_t, n_x):
            raise GridMismatchError(
                f"noise grid ({noise.spec.m_t}, {noise.spec.n_x}) does not match solver grid ({m_t}, {n_x})"
            )
        if not noise.spec.covers(spec.T, spec.l):
            raise GridMismatchError(f"noise covers [0, {noise.spec.T}] x [0, {noise.spec.l}], problem is [0, {spec.T}] x [0, {spec.l}]")
        loads = load_noise(mesh, wong_zakai_values(noise))
    else:
        loads = np.zeros((m_t, mesh.dim))

    stepper = CqStepper.build(spec, mesh, m_t)
    history = np.zeros((m_t + 1, mesh.dim))
    for n in range(1, m_t + 1):
        history[n] = stepper.advance(n, history, loads[n - 1])

    if not np.all(np.isfinite(history[m_t])):
        raise FracSpdeError(f"solution became non-finite on grid ({m_t}, {n_x})")

    return TrajectoryResult(
        final=FemFunction(mesh, history[m_t].copy()),
        snapshots={i: FemFunction(mesh, history[i].copy()) for i in wanted},
        metadata={'m_t': m_t, 'n_x': n_x, 'tau': spec.T / m_t, 'h': mesh.h, 'seed': seed, 'noise': noise is not None},
    )
