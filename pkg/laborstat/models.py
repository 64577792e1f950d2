import math
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class LimiterKind(str, Enum):
    LINEAR_RAMP = "linear-ramp"
    UNBOUNDED = "unbounded"


class CapacityLaw(BaseModel):
    """Power-law capacity g(c) = A * c**(-gamma)."""

    model_config = ConfigDict(frozen=True)

    A: float = Field(..., description="Capacity amplitude, workers * (10^3 yen/person)^gamma", gt=0)
    gamma: float = Field(..., description="Capacity exponent", ge=0)

    @field_validator("A", "gamma")
    @classmethod
    def require_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("capacity parameters must be finite")
        return v


class ModelParams(BaseModel):
    """The four scalars of the equilibrium occupancy law."""

    model_config = ConfigDict(frozen=True)

    beta: float = Field(..., description="Inverse temperature, per 10^3 yen/person; may be negative")
    mu: float = Field(..., description="Chemical-potential-like offset, 10^3 yen/person")
    A: float = Field(..., description="Capacity amplitude", gt=0)
    gamma: float = Field(..., description="Capacity exponent", ge=0)

    @field_validator("beta", "mu", "A", "gamma")
    @classmethod
    def require_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("model parameters must be finite")
        return v

    @property
    def capacity_law(self) -> CapacityLaw:
        return CapacityLaw(A=self.A, gamma=self.gamma)

    @property
    def beta_mu(self) -> float:
        return self.beta * self.mu


class Limiter(BaseModel):
    """Acceptance attenuation L(c, n) encoding finite cluster capacity."""

    model_config = ConfigDict(frozen=True)

    kind: LimiterKind = Field(default=LimiterKind.LINEAR_RAMP, description="Limiter variant")
    capacity: Optional[CapacityLaw] = Field(
        None,
        description="Capacity law; required for the linear ramp"
    )

    @model_validator(mode="after")
    def check_capacity(self) -> "Limiter":
        if self.kind is LimiterKind.LINEAR_RAMP and self.capacity is None:
            raise ValueError("linear-ramp limiter needs a capacity law")
        return self

    @classmethod
    def linear_ramp(cls, A: float, gamma: float) -> "Limiter":
        return cls(kind=LimiterKind.LINEAR_RAMP, capacity=CapacityLaw(A=A, gamma=gamma))

    @classmethod
    def unbounded(cls) -> "Limiter":
        return cls(kind=LimiterKind.UNBOUNDED)

    @property
    def is_unbounded(self) -> bool:
        return self.kind is LimiterKind.UNBOUNDED


class ProductivityGrid(BaseModel):
    """Levels c_i = i * dc for i = 1..levels."""

    model_config = ConfigDict(frozen=True)

    levels: int = Field(..., description="Number of productivity levels M", ge=2)
    dc: float = Field(..., description="Grid spacing, 10^3 yen/person", gt=0)

    def c(self, index: int) -> float:
        return index * self.dc

    def c_values(self) -> np.ndarray:
        return np.arange(1, self.levels + 1, dtype=float) * self.dc


class SystemState(BaseModel):
    """Occupancy per level with cached conserved totals."""

    occupancy: List[int] = Field(..., description="Workers per level, level 1 first")
    workers: int = Field(..., description="N, total workers", ge=0)
    total_index: int = Field(..., description="Yidx = sum of i * n_i; physical output is Yidx * dc", ge=0)

    @model_validator(mode="after")
    def check_totals(self) -> "SystemState":
        if any(n < 0 for n in self.occupancy):
            raise ValueError("occupancies must be non-negative")
        if sum(self.occupancy) != self.workers:
            raise ValueError("cached worker count does not match occupancy")
        if sum(i * n for i, n in enumerate(self.occupancy, 1)) != self.total_index:
            raise ValueError("cached index total does not match occupancy")
        return self

    @classmethod
    def from_occupancy(cls, occupancy: List[int]) -> "SystemState":
        occupancy = [int(n) for n in occupancy]
        return cls(
            occupancy=occupancy,
            workers=sum(occupancy),
            total_index=sum(i * n for i, n in enumerate(occupancy, 1))
        )

    @property
    def levels(self) -> int:
        return len(self.occupancy)

    def output(self, grid: ProductivityGrid) -> float:
        return self.total_index * grid.dc


class SimConfig(BaseModel):

    seed: int = Field(..., description="64-bit seed for the PCG64 generator", ge=0, lt=2**64)
    steps: int = Field(..., description="Total proposed moves", ge=0)
    burn_in: int = Field(default=0, description="Proposals discarded before measurement", ge=0)
    sample_every: int = Field(default=1, description="Measurement stride in proposals", ge=1)
    limiter: Limiter = Field(..., description="Destination-limited acceptance")
    grid: ProductivityGrid = Field(..., description="Productivity levels")
    debug: bool = Field(default=False, description="Assert conservation after every step")

    @model_validator(mode="after")
    def check_schedule(self) -> "SimConfig":
        if self.steps < self.burn_in:
            raise ValueError("steps must not be smaller than burn_in")
        return self


class LinearityFit(BaseModel):
    """Regression of ln(n / L(c, n)) on c."""

    slope: float = Field(..., description="Estimates -beta")
    intercept: float = Field(..., description="Estimates beta * mu")
    r_squared: float
    slope_stderr: float
    intercept_stderr: float
    levels_used: List[int] = Field(default_factory=list, description="1-based levels in the regression")

    @property
    def beta(self) -> float:
        return -self.slope


class FluxBalanceRow(BaseModel):
    signature: List[int] = Field(..., description="(i, j, k, l) with i <= j, k <= l, (i, j) < (k, l)")
    forward: int = Field(..., ge=0)
    reverse: int = Field(..., ge=0)
    z_score: float


class FluxBalanceReport(BaseModel):
    rows: List[FluxBalanceRow] = Field(default_factory=list)
    min_count: int = Field(default=100, description="Signatures below this total are skipped")
    z_threshold: float = Field(default=3.0)
    outlier_fraction: float = Field(default=0.0, description="Share of rows with |z| above threshold", ge=0, le=1)


class BinnedCurve(BaseModel):
    """Mean occupancy per productivity bin, ordered by c."""

    model_config = ConfigDict(frozen=True)

    c_center: List[float] = Field(..., description="Bin centers, strictly increasing")
    n_mean: List[float] = Field(..., description="Mean workers per firm in the bin")
    weight: List[float] = Field(..., description="Per-bin weight, usually the firm count")

    @model_validator(mode="after")
    def check_bins(self) -> "BinnedCurve":
        if not (len(self.c_center) == len(self.n_mean) == len(self.weight)):
            raise ValueError("c_center, n_mean and weight must have equal length")
        if any(c <= 0 or not math.isfinite(c) for c in self.c_center):
            raise ValueError("bin centers must be positive and finite")
        if any(b <= a for a, b in zip(self.c_center, self.c_center[1:])):
            raise ValueError("bin centers must be strictly increasing")
        if any(n <= 0 or not math.isfinite(n) for n in self.n_mean):
            raise ValueError("n_mean must be positive; drop empty bins upstream")
        if any(w <= 0 or not math.isfinite(w) for w in self.weight):
            raise ValueError("weights must be positive")
        return self

    @classmethod
    def from_unordered(
        cls,
        c_center: List[float],
        n_mean: List[float],
        weight: Optional[List[float]] = None
    ) -> "BinnedCurve":
        if weight is None:
            weight = [1.0] * len(c_center)
        order = np.argsort(np.asarray(c_center, dtype=float), kind="stable")
        return cls(
            c_center=[float(c_center[i]) for i in order],
            n_mean=[float(n_mean[i]) for i in order],
            weight=[float(weight[i]) for i in order]
        )

    def __len__(self) -> int:
        return len(self.c_center)

    def arrays(self):
        return (
            np.asarray(self.c_center, dtype=float),
            np.asarray(self.n_mean, dtype=float),
            np.asarray(self.weight, dtype=float),
        )


class FitStart(BaseModel):
    index: int
    beta: float
    mu: float
    log_a: float
    gamma: float
    chi2: Optional[float] = None
    n_evals: int = 0
    converged: bool = False


class FitResult(BaseModel):

    params: ModelParams
    chi2: float = Field(..., description="Objective at params", ge=0)
    n_evals: int = Field(..., description="Objective evaluations over all starts", ge=0)
    converged: bool = Field(..., description="Winning simplex met its tolerance")
    start_index: int = Field(..., description="Start that produced the winning simplex", ge=0)
    polished: bool = Field(default=False, description="Least-squares polish improved the simplex result")
    polish_converged: Optional[bool] = Field(None, description="Least-squares status; None when no polish ran")
    peak: Optional[float] = Field(None, description="c_p of the fitted curve, if an interior peak exists")
    residuals: str = Field(default="log")
    starts: List[FitStart] = Field(default_factory=list)


class FirmRecord(BaseModel):
    """One firm-year as delivered by the input file; money in 10^3 yen."""

    firm_id: str
    year: int
    sector: str = ""
    net_profits: Optional[float] = None
    labor_costs: Optional[float] = None
    financing_costs: Optional[float] = None
    rental_expenses: Optional[float] = None
    taxes: Optional[float] = None
    depreciation: Optional[float] = None
    workers: Optional[int] = Field(None, ge=1)

    @field_validator(
        "net_profits", "labor_costs", "financing_costs",
        "rental_expenses", "taxes", "depreciation"
    )
    @classmethod
    def require_finite(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not math.isfinite(v):
            raise ValueError("monetary fields must be finite when present")
        return v

    @field_validator("sector")
    @classmethod
    def strip_sector(cls, v: str) -> str:
        return v.strip()


VALUE_ADDED_FIELDS = (
    "net_profits",
    "labor_costs",
    "financing_costs",
    "rental_expenses",
    "taxes",
    "depreciation",
)


class CleanRecord(BaseModel):

    model_config = ConfigDict(frozen=True)

    firm_id: str
    year: int
    sector: str = ""
    Y: float = Field(..., description="Value added, 10^3 yen", gt=0)
    n: int = Field(..., description="Workers", ge=1)
    c: float = Field(..., description="Labor productivity Y/n, 10^3 yen/person", gt=0)

    @model_validator(mode="after")
    def check_productivity(self) -> "CleanRecord":
        if not math.isclose(self.c, self.Y / self.n, rel_tol=1e-12):
            raise ValueError("c must equal Y / n")
        return self


class RejectionReason(str, Enum):
    EXCLUDED_SECTOR = "excluded_sector"
    SECTOR_NOT_INCLUDED = "sector_not_included"
    YEAR_NOT_SELECTED = "year_not_selected"
    MISSING_VALUE_ADDED = "missing_value_added"
    MISSING_WORKERS = "missing_workers"
    NONPOSITIVE_VALUE_ADDED = "nonpositive_value_added"


class CleaningReport(BaseModel):

    input_count: int = Field(default=0, ge=0)
    output_count: int = Field(default=0, ge=0)
    rejected: Dict[str, int] = Field(
        default_factory=lambda: {reason.value: 0 for reason in RejectionReason},
        description="Counts per rejection reason"
    )
    outside_binning_range: int = Field(default=0, description="Clean records outside [c_min, c_max]", ge=0)
    exclusions: List[str] = Field(default_factory=list)

    def reject(self, reason: RejectionReason) -> None:
        self.rejected[reason.value] = self.rejected.get(reason.value, 0) + 1

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())


class LogBinning(BaseModel):
    """Edges c_min * 10**(k / bins_per_decade), k = 0..K."""

    model_config = ConfigDict(frozen=True)

    c_min: float = Field(default=1e2, gt=0)
    c_max: float = Field(default=1e7, gt=0)
    bins_per_decade: int = Field(default=20, ge=1)

    @model_validator(mode="after")
    def check_range(self) -> "LogBinning":
        if not self.c_min < self.c_max:
            raise ValueError("c_min must be below c_max")
        return self

    @property
    def n_bins(self) -> int:
        decades = math.log10(self.c_max / self.c_min)
        return max(1, math.ceil(round(decades * self.bins_per_decade, 9)))

    def edges(self) -> np.ndarray:
        k = np.arange(self.n_bins + 1, dtype=float)
        return self.c_min * 10.0 ** (k / self.bins_per_decade)

    def centers(self) -> np.ndarray:
        k = np.arange(self.n_bins, dtype=float) + 0.5
        return self.c_min * 10.0 ** (k / self.bins_per_decade)

    @property
    def log_width(self) -> float:
        return math.log(10.0) / self.bins_per_decade


class LogDensity(BaseModel):
    """Histogram density over ln c; sum(density * log_width) == 1."""

    bin_lo: List[float]
    bin_hi: List[float]
    density: List[float]
    log_width: float


class RunManifest(BaseModel):

    run_id: str = Field(..., description="Unique run identifier")
    tool_version: str = Field(..., description="laborstat version")
    subcommand: str = Field(..., description="CLI subcommand that produced the run")
    start_time: datetime = Field(..., description="Run start timestamp")
    end_time: Optional[datetime] = Field(None, description="Run end timestamp")
    duration_seconds: Optional[float] = Field(
        None,
        description="Wall-clock duration in seconds",
        ge=0
    )

    config: Dict[str, Any] = Field(
        default_factory=dict,
        description="Fully resolved configuration"
    )
    seed: Optional[int] = Field(None, description="RNG seed for seeded subcommands")
    input_digests: Dict[str, str] = Field(
        default_factory=dict,
        description="sha256 of every input file"
    )
    outputs: List[str] = Field(default_factory=list, description="Files written by the run")
    summary: Dict[str, Any] = Field(
        default_factory=dict,
        description="Headline numbers: conserved totals, acceptance rate, chi2, ..."
    )
    error_summary: Dict[str, Any] = Field(
        default_factory=dict,
        description="Summary of errors encountered"
    )

    def calculate_duration(self) -> None:
        if self.end_time:
            delta = self.end_time - self.start_time
            self.duration_seconds = delta.total_seconds()

    def add_error(self, error_type: str, message: str) -> None:
        if error_type not in self.error_summary:
            self.error_summary[error_type] = []
        self.error_summary[error_type].append({
            "message": message,
            "timestamp": datetime.utcnow().isoformat()
        })


class CheckResult(BaseModel):

    name: str = Field(..., description="Check identifier")
    passed: bool
    detail: str = Field(default="", description="Human-readable outcome")
    value: Optional[float] = Field(None, description="Measured statistic")
    threshold: Optional[float] = Field(None, description="Bound the statistic was held to")
    duration_seconds: float = Field(default=0.0, ge=0)


class VerifyReport(BaseModel):

    suite: str
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(check.passed for check in self.checks)

    @property
    def failed(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]
