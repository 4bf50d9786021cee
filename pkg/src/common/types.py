from datetime import datetime
from enum import Enum
from typing import Annotated, Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    model_validator,
)

HURST_MAX = 0.5
GRID_RTOL = 1e-12


class StudyMode(str, Enum):
    TEMPORAL = 'temporal'
    SPATIAL = 'spatial'


class SourceKind(str, Enum):
    ZERO = 'zero'
    CONSTANT = 'constant'
    LINEAR = 'linear'
    SINE = 'sine'


class HurstPair(BaseModel):
    """Spatial (h1) and temporal (h2) Hurst exponents of the sheet."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    h1: float
    h2: float

    @model_validator(mode='after')
    def check_rough_regime(self) -> Self:
        for name, value in (('h1', self.h1), ('h2', self.h2)):
            if not 0.0 < value <= HURST_MAX:
                raise ValueError(f"{name}={value} must lie in (0, 1/2]")
        return self


class NonlinearSource(BaseModel):
    """
    Pointwise source term u -> f(u).

    ``sine`` is amplitude*sin(u), ``linear`` amplitude*u, ``constant`` the
    u-independent value amplitude and ``zero`` vanishes identically.
    """

    model_config = ConfigDict(frozen=True, extra='forbid')

    kind: SourceKind = SourceKind.ZERO
    amplitude: float = 1.0

    @property
    def lipschitz_constant(self) -> float:
        if self.kind in (SourceKind.ZERO, SourceKind.CONSTANT):
            return 0.0
        return abs(self.amplitude)

    @property
    def growth_constant(self) -> float:
        """C in |f(u)| <= C(1+|u|)."""
        if self.kind == SourceKind.ZERO:
            return 0.0
        return abs(self.amplitude)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == SourceKind.SINE:
            return self.amplitude * np.sin(u)
        if self.kind == SourceKind.LINEAR:
            return self.amplitude * u
        if self.kind == SourceKind.CONSTANT:
            return np.full_like(u, self.amplitude)
        return np.zeros_like(u)

    def check_growth(self, grid: np.ndarray | None = None) -> bool:
        if grid is None:
            grid = np.linspace(-50.0, 50.0, 2001)
        bound = self.growth_constant * (1.0 + np.abs(grid))
        return bool(np.all(np.abs(self(grid)) <= bound + 1e-15))


class ProblemSpec(BaseModel):
    """Full problem definition; alpha=1 is the classical heat-equation limit."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    alpha: float = Field(..., gt=0.0, le=1.0)
    hurst: HurstPair
    beta: float = 1.0
    l: float = Field(1.0, gt=0.0)
    T: float = Field(1.0, gt=0.0)
    f: NonlinearSource = Field(default_factory=NonlinearSource)

    @model_validator(mode='after')
    def check_standing_assumption(self) -> Self:
        margin = 2.0 * self.hurst.h2 + (self.hurst.h1 - 1.0) * self.alpha
        if margin <= 0.0:
            raise ValueError(
                f"standing assumption 2*H2 + (H1 - 1)*alpha > 0 violated: "
                f"2*{self.hurst.h2} + ({self.hurst.h1} - 1)*{self.alpha} = {margin:.6g}"
            )
        return self

    @property
    def gamma(self) -> float:
        """Order of the Riemann-Liouville derivative acting on A u."""
        return 1.0 - self.alpha


class NoiseGridSpec(BaseModel):
    """Time x space box grid: m_t boxes of width tau, n_x boxes of width h."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    m_t: int = Field(..., ge=1)
    n_x: int = Field(..., ge=1)
    tau: float = Field(..., gt=0.0)
    h: float = Field(..., gt=0.0)

    @classmethod
    def for_domain(cls, T: float, l: float, m_t: int, n_x: int) -> 'NoiseGridSpec':
        return cls(m_t=m_t, n_x=n_x, tau=T / m_t, h=l / n_x)

    @property
    def T(self) -> float:
        return self.tau * self.m_t

    @property
    def l(self) -> float:
        return self.h * self.n_x

    def covers(self, T: float, l: float) -> bool:
        return abs(self.T - T) <= GRID_RTOL * T and abs(self.l - l) <= GRID_RTOL * l


class ContourSpec(BaseModel):
    """Integration contour: two rays at angle +-theta joined by an arc of radius kappa."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    theta: float = Field(3.0 * np.pi / 4.0, gt=np.pi / 2.0, lt=np.pi)
    kappa: float | None = Field(None, gt=0.0, description="Arc radius; None means 1/t")
    n_quad: int = Field(400, ge=8)

    def radius(self, t: float) -> float:
        return self.kappa if self.kappa is not None else 1.0 / t


Level = Annotated[tuple[int, int], Field(description="(m_t, n_x)")]


class StudyConfig(BaseModel):
    """A Monte Carlo refinement study over coupled noise."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    spec: ProblemSpec
    m: int = Field(..., ge=1)
    levels: list[Level] = Field(..., min_length=1)
    base_seed: int = 42
    mode: StudyMode

    @model_validator(mode='after')
    def check_refinement(self) -> Self:
        varying = 0 if self.mode == StudyMode.TEMPORAL else 1
        fixed = 1 - varying
        for (coarse, fine) in zip(self.levels, self.levels[1:]):
            if fine[varying] != 2 * coarse[varying]:
                raise ValueError(f"levels must refine by exactly 2 in {self._dim_name(varying)}: {coarse} -> {fine}")
            if fine[fixed] != coarse[fixed]:
                raise ValueError(f"{self._dim_name(fixed)} must stay fixed across levels: {coarse} -> {fine}")
        if any(m_t < 1 or n_x < 2 for m_t, n_x in self.levels):
            raise ValueError("every level needs m_t >= 1 and n_x >= 2")
        return self

    @staticmethod
    def _dim_name(axis: int) -> str:
        return 'm_t' if axis == 0 else 'n_x'

    @property
    def finest_noise_grid(self) -> tuple[int, int]:
        """Noise resolution that covers every level and its 2x comparand."""
        m_t, n_x = self.levels[-1]
        if self.mode == StudyMode.TEMPORAL:
            return 2 * m_t, n_x
        return m_t, 2 * n_x


class RateTable(BaseModel):
    mode: StudyMode
    alpha: float
    h1: float
    h2: float
    m: int
    base_seed: int
    levels: list[Level]
    errors: list[float]
    rates: list[float]
    mean_rate: float | None = None
    theoretical_rate: float | None = None
    wall_time: float = 0.0

    @model_validator(mode='after')
    def check_counts(self) -> Self:
        if len(self.errors) != len(self.levels):
            raise ValueError("one error per level is required")
        if len(self.rates) != max(len(self.levels) - 1, 0):
            raise ValueError("one rate per successive level pair is required")
        return self


## Configuration file


class GridSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    m_t: int = Field(64, ge=1)
    n_x: int = Field(32, ge=2)
    snapshots: list[int] = Field(default_factory=list)


class StudySection(BaseModel):
    """Overrides on top of the desk-scale or paper-scale study preset."""

    model_config = ConfigDict(extra='forbid')

    m: int | None = Field(None, ge=1)
    levels: list[Level] | None = None
    base_seed: int | None = None


class OutputSection(BaseModel):
    model_config = ConfigDict(extra='forbid')

    dir: str = 'out'


class RunConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    problem: ProblemSpec
    grids: GridSection = Field(default_factory=GridSection)
    study: StudySection = Field(default_factory=StudySection)
    output: OutputSection = Field(default_factory=OutputSection)
    seed: int | None = None


class RunManifest(BaseModel):
    """Everything needed to replay a run: the config as given and, for tables, the resolved studies."""

    command: str
    config: RunConfig | None = None
    seed: int
    workers: int = 1
    paper_scale: bool = False
    all_rows: bool = False
    studies: list[StudyConfig] = Field(default_factory=list)
    versions: dict[str, str] = Field(default_factory=dict)
    started_at: datetime = Field(default_factory=datetime.now)
    finished_at: datetime | None = None
    outputs: list[str] = Field(default_factory=list)

    @field_serializer('started_at', 'finished_at')
    def serialize_dt(self, dt: datetime | None, _info: Any) -> str | None:
        return dt.isoformat() if dt is not None else None


## Verification reports


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ''
    value: float | None = None


class SuiteReport(BaseModel):
    suite: str
    checks: list[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def record(self, name: str, passed: bool, detail: str = '', value: float | None = None) -> None:
        self.checks.append(CheckResult(name=name, passed=bool(passed), detail=detail, value=value))


## Error types


class FracSpdeError(Exception):
    pass


class DomainError(FracSpdeError, ValueError):
    pass


class StandingAssumptionError(DomainError):
    def __init__(self, alpha: float, h1: float, h2: float):
        self.margin = 2.0 * h2 + (h1 - 1.0) * alpha
        super().__init__(
            f"standing assumption 2*H2 + (H1 - 1)*alpha > 0 violated for "
            f"(alpha, H1, H2) = ({alpha}, {h1}, {h2}): margin {self.margin:.6g}"
        )


class FactorizationError(FracSpdeError):
    def __init__(self, pivot_index: int, pivot: float):
        self.pivot_index = pivot_index
        self.pivot = pivot
        super().__init__(f"covariance is not positive semi-definite: pivot {pivot_index} = {pivot:.3e}")


class GridMismatchError(FracSpdeError, ValueError):
    pass


class BoxGridError(GridMismatchError):
    pass


class SingularMatrixError(FracSpdeError):
    pass


class MittagLefflerError(FracSpdeError):
    def __init__(self, message: str, estimate: float):
        self.estimate = estimate
        super().__init__(f"{message} (partial estimate {estimate:.16g})")


class TrajectoryError(FracSpdeError):
    def __init__(self, trajectory_id: int, cause: BaseException):
        self.trajectory_id = trajectory_id
        self.cause = cause
        super().__init__(f"trajectory {trajectory_id} failed: {cause}")


class HolderDiagnosticError(FracSpdeError):
    pass
