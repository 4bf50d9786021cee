"""
Piecewise-linear finite elements on a uniform 1D mesh with homogeneous
Dirichlet conditions.

Unknowns are the n-1 interior nodal values; every matrix is tridiagonal and
is stored by its three bands.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from common.types import DomainError, GridMismatchError, NonlinearSource, SingularMatrixError

logger = logging.getLogger(__name__)

# 3-point Gauss rule on the reference element [0, 1]
_GAUSS_POINTS = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of [0, l] with n elements."""
    l: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 2:
            raise DomainError(f"mesh needs at least 2 elements, got n={self.n}")
        if self.l <= 0.0:
            raise DomainError(f"domain length must be positive, got l={self.l}")

    @property
    def h(self) -> float:
        return self.l / self.n

    @property
    def dim(self) -> int:
        return self.n - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.l, self.n + 1)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    def refined(self, levels: int = 1) -> 'Mesh1D':
        return Mesh1D(self.l, self.n * 2 ** levels)


@dataclass(frozen=True)
class TridiagonalFactor:
    """Banded Cholesky factor (upper form) of a symmetric positive definite tridiagonal matrix."""
    bands: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve_banded((self.bands, False), rhs)


@dataclass(frozen=True)
class TridiagonalMatrix:
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.diag)
        if len(self.sub) != n - 1 or len(self.sup) != n - 1:
            raise GridMismatchError(f"band lengths ({len(self.sub)}, {n}, {len(self.sup)}) are inconsistent")

    @classmethod
    def constant(cls, dim: int, off: float, diag: float) -> 'TridiagonalMatrix':
        return cls(np.full(dim - 1, off), np.full(dim, diag), np.full(dim - 1, off))

    @property
    def dim(self) -> int:
        return len(self.diag)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.sub * x[:-1]
        y[:-1] += self.sup * x[1:]
        return y

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)

    def combine(self, a: float, other: 'TridiagonalMatrix', b: float) -> 'TridiagonalMatrix':
        """a * self + b * other"""
        if other.dim != self.dim:
            raise GridMismatchError(f"cannot combine matrices of size {self.dim} and {other.dim}")
        return TridiagonalMatrix(
            a * self.sub + b * other.sub,
            a * self.diag + b * other.diag,
            a * self.sup + b * other.sup,
        )

    def banded(self) -> np.ndarray:
        """(3, dim) layout expected by scipy.linalg.solve_banded((1, 1), ...)."""
        ab = np.zeros((3, self.dim))
        ab[0, 1:] = self.sup
        ab[1, :] = self.diag
        ab[2, :-1] = self.sub
        return ab

    def factorize(self) -> TridiagonalFactor:
        if not (np.allclose(self.sub, self.sup)):
            raise DomainError("banded Cholesky needs a symmetric matrix")
        upper = np.zeros((2, self.dim))
        upper[0, 1:] = self.sup
        upper[1, :] = self.diag
        try:
            return TridiagonalFactor(linalg.cholesky_banded(upper, lower=False))
        except linalg.LinAlgError as e:
            raise SingularMatrixError(f"system matrix is not positive definite: {e}") from e


@dataclass(frozen=True)
class FemFunction:
    """Interior nodal coefficients of a P1 function on ``mesh``."""
    mesh: Mesh1D
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.mesh.dim,):
            raise GridMismatchError(f"expected {self.mesh.dim} coefficients, got shape {coeffs.shape}")
        object.__setattr__(self, 'coeffs', coeffs)

    def nodal_values(self) -> np.ndarray:
        """Values at all n+1 nodes, boundary zeros included."""
        return np.concatenate(([0.0], self.coeffs, [0.0]))

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        return np.interp(x, self.mesh.nodes, self.nodal_values())

    def __sub__(self, other: 'FemFunction') -> 'FemFunction':
        if other.mesh != self.mesh:
            raise GridMismatchError(f"meshes differ: n={self.mesh.n} vs n={other.mesh.n}")
        return FemFunction(self.mesh, self.coeffs - other.coeffs)


def assemble_mass(mesh: Mesh1D) -> TridiagonalMatrix:
    h = mesh.h
    return TridiagonalMatrix.constant(mesh.dim, h / 6.0, 4.0 * h / 6.0)


def assemble_stiffness(mesh: Mesh1D) -> TridiagonalMatrix:
    h = mesh.h
    return TridiagonalMatrix.constant(mesh.dim, -1.0 / h, 2.0 / h)


def load_nonlinear(u: FemFunction, f: NonlinearSource | Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """
    Load vector (f(u_h), phi_j) with 3-point Gauss quadrature on each element.

    Args:
        u: current P1 iterate
        f: pointwise source

    Returns:
        Vector of length n-1
    """
    mesh = u.mesh
    values = u.nodal_values()
    left, right = values[:-1], values[1:]
    s = _GAUSS_POINTS[None, :]
    # u_h at the quadrature points of every element, shape (n, 3)
    at_points = left[:, None] * (1.0 - s) + right[:, None] * s
    weighted = f(at_points) * _GAUSS_WEIGHTS[None, :] * mesh.h
    # element e contributes to its left node through (1 - s) and its right node through s
    to_right_node = (weighted * s).sum(axis=1)
    to_left_node = (weighted * (1.0 - s)).sum(axis=1)
    return to_right_node[:-1] + to_left_node[1:]


def load_noise(mesh: Mesh1D, levels: np.ndarray) -> np.ndarray:
    """
    Load vector of a field that is constant on every element.

    ``levels`` has n entries along its last axis (one per element); any
    leading axes (e.g. time steps) are kept.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.shape[-1] != mesh.n:
        raise GridMismatchError(f"noise has {levels.shape[-1]} space boxes, mesh has {mesh.n} elements")
    return (levels[..., :-1] + levels[..., 1:]) * (mesh.h / 2.0)


def thomas_solve(matrix: TridiagonalMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve a general tridiagonal system."""
    try:
        return linalg.solve_banded((1, 1), matrix.banded(), rhs)
    except linalg.LinAlgError as e:
        raise SingularMatrixError(f"tridiagonal system is singular: {e}") from e


def l2_norm(u: FemFunction) -> float:
    mass = assemble_mass(u.mesh)
    return float(np.sqrt(max(u.coeffs @ mass.matvec(u.coeffs), 0.0)))


def refine_embed(u: FemFunction, levels: int = 1) -> FemFunction:
    """Represent ``u`` exactly on a mesh refined ``levels`` times."""
    if levels < 0:
        raise DomainError(f"refinement levels must be non-negative, got {levels}")
    for _ in range(levels):
        coarse = u.nodal_values()
        fine = np.empty(2 * len(coarse) - 1)
        fine[::2] = coarse
        fine[1::2] = 0.5 * (coarse[:-1] + coarse[1:])
        u = FemFunction(u.mesh.refined(), fine[1:-1])
    return u


def interpolate(mesh: Mesh1D, fn: Callable[[np.ndarray], np.ndarray]) -> FemFunction:
    return FemFunction(mesh, np.asarray(fn(mesh.interior_nodes), dtype=float))
