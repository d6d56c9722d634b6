from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Optional, List, Dict, Any, Tuple
from enum import Enum

# Complex numbers cross the wire as [re, im]
ComplexPair = Tuple[float, float]


def to_pair(z: complex) -> List[float]:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def from_pair(pair) -> complex:
    return complex(pair[0], pair[1])


class Command(str, Enum):
    validate = "validate"
    solve_disk = "solve-disk"
    metric = "metric"
    completeness = "completeness"
    schwarz_scan = "schwarz-scan"
    gauge_scan = "gauge-scan"
    linking = "linking"
    operators_selftest = "operators-selftest"


class CoverName(str, Enum):
    identity = "identity"
    punctured = "punctured"


# Structure definition file
class PolynomialTerm(BaseModel):
    """One monomial x₁^i y₁^j x₂^k y₂^l times a real 2×2 matrix."""

    exponents: Tuple[int, int, int, int]
    matrix: Tuple[Tuple[float, float], Tuple[float, float]]
    coefficient: float = 1.0

    @field_validator("exponents")
    @classmethod
    def non_negative(cls, v):
        if any(e < 0 for e in v):
            raise ValueError("exponents must be non-negative")
        return v


class StructureDefinition(BaseModel):
    description: str = ""
    epsilon: float = Field(default=1.0, gt=0)
    a_terms: List[PolynomialTerm] = []
    b_terms: List[PolynomialTerm] = []
    project: bool = True

    class Config:
        extra = "forbid"


class ValidationReport(BaseModel):
    accepted: bool
    a_square_deviation: float
    b_square_deviation: float
    a_origin_deviation: float
    b_origin_deviation: float
    tolerance: float
    projected: bool = False
    raw_square_deviation: float = 0.0
    mu_bound: Optional[float] = None
    sample_count: int


# Solver configuration
class SolveConfig(BaseModel):
    max_iterations: int = Field(default=60, gt=0)
    tolerance: float = Field(default=1e-8, gt=0)
    cutoff_inner_radius: float = 0.75
    mu_bound_limit: float = Field(default=0.2, gt=0)
    containment_margin: float = Field(default=1e-3, ge=0)
    coupled_max_sweeps: int = Field(default=20, gt=0)

    @field_validator("cutoff_inner_radius")
    @classmethod
    def inner_radius_in_disk(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("cutoff_inner_radius must lie in (0, 1)")
        return v

    @classmethod
    def from_settings(cls, settings, **overrides) -> "SolveConfig":
        values = dict(
            max_iterations=settings.solver_max_iterations,
            tolerance=settings.solver_tolerance,
            cutoff_inner_radius=settings.cutoff_inner_radius,
            mu_bound_limit=settings.mu_bound_limit,
            containment_margin=settings.containment_margin,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


# Metric records
class MetricSample(BaseModel):
    point: Tuple[ComplexPair, ComplexPair]
    direction: Tuple[ComplexPair, ComplexPair]
    lower_bound: float
    upper_estimate: float
    grid_resolution: int
    domain: CoverName = CoverName.identity
    radius: Optional[float] = None
    bisection_steps: int = 0
    accepted: bool = True

    def consistent(self, slack: float) -> bool:
        return self.lower_bound <= self.upper_estimate * (1.0 + slack)


class Calibration(BaseModel):
    c1: float
    c2: float
    k1: float
    sample_count: int
    dataset_hash: str


class PathLengthReport(BaseModel):
    truncations: List[float]
    lengths: List[float]
    expected: Optional[List[float]] = None


class ScanReport(BaseModel):
    kind: str
    value: float
    n_samples: int
    n_feasible: int
    seed: int
    epsilon: float
    mu_bound: float
    cover: Optional[CoverName] = None
    normalized_max: Optional[float] = None
    partial: bool = False
    failures: List[Dict[str, Any]] = []
    per_sample: List[Dict[str, Any]] = []


# Linking records
class IntersectionRecord(BaseModel):
    point: Tuple[ComplexPair, ComplexPair]
    preimages: Tuple[ComplexPair, ComplexPair]
    index: int
    multiplicities: Tuple[int, int]


class LinkingReport(BaseModel):
    radius: float
    linking_number: Optional[int] = None
    index_sum: Optional[int] = None
    equal: bool = False
    admissible: bool = True
    transversality_margin: Optional[float] = None
    fr_angle_degrees: Optional[float] = None
    reason: Optional[str] = None


class LinkingIndexReport(BaseModel):
    intersections: List[IntersectionRecord]
    radii: List[LinkingReport]
    positivity: bool
    multiplicity_bound: bool
    all_equal: bool
    slices: List[Dict[str, Any]] = []


# Experiment configuration (CLI --config, HTTP body)
class DiskSeed(BaseModel):
    """Holomorphic polynomial jets for the two components, lowest degree first."""

    u: List[ComplexPair] = [(0.0, 0.0), (1.0, 0.0)]
    v: List[ComplexPair] = [(0.0, 0.0)]


class MetricPoint(BaseModel):
    point: Tuple[ComplexPair, ComplexPair]
    direction: Tuple[ComplexPair, ComplexPair] = ((1.0, 0.0), (0.0, 0.0))


class LinkingPair(BaseModel):
    first: DiskSeed
    second: DiskSeed
    radii: List[float] = [0.3, 0.5]


class ExperimentConfig(BaseModel):
    structure: Optional[StructureDefinition] = None
    seed: Optional[int] = Field(default=None, ge=0)
    resolution: Optional[int] = None
    epsilon: Optional[float] = Field(default=None, gt=0)
    solver: Optional[SolveConfig] = None
    disk: Optional[DiskSeed] = None
    points: List[MetricPoint] = []
    domain: CoverName = CoverName.identity
    calibration: Optional[Calibration] = None
    truncations: List[float] = [1e-3, 1e-6, 1e-9]
    n_samples: int = Field(default=64, gt=0)
    cover: CoverName = CoverName.identity
    direction_restricted: bool = False
    pairs: List[LinkingPair] = []

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def metric_points_in_domain(self):
        for p in self.points:
            if any(abs(from_pair(c)) >= 1.0 for c in p.point):
                raise ValueError("metric points must lie in the open bidisk")
        return self


class ResultRecord(BaseModel):
    command: str
    index: int
    tool_version: str
    # None only on failure records written before a structure could be built
    resolution: Optional[int] = None
    epsilon: Optional[float] = None
    mu_bound: Optional[float] = None
    seed: Optional[int] = None
    inputs: Dict[str, Any] = {}
    outputs: Dict[str, Any] = {}
    status: str = "ok"


class RunSummary(BaseModel):
    command: str
    status: str
    exit_code: int
    record_count: int
    config_hash: str
    series: Dict[str, List[Any]] = {}
    diagnostics: Optional[Dict[str, Any]] = None


class ExperimentRunResponse(BaseModel):
    id: int
    command: str
    config_hash: str
    status: str
    exit_code: int
    summary: Optional[Dict[str, Any]] = None

    class Config:
        from_attributes = True


# API Response Wrapper
class APIResponse(BaseModel):
    success: bool
    data: Optional[Any] = None
    message: Optional[str] = None
    error: Optional[str] = None
