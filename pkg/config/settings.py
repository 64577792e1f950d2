from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values
from pydantic import Field, ValidationInfo, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from laborstat.cleaner import DEFAULT_EXCLUSIONS
from laborstat.equilibrium import TABLE1
from laborstat.fitting import RESIDUAL_SPACES
from laborstat.storage import load_manifest_file


def _split(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


class Settings(BaseSettings):

    model_config = SettingsConfigDict(
        env_prefix="LABORSTAT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    seed: int = Field(
        default=42,
        description="Seed for every stochastic subcommand",
        ge=0,
        lt=2**64
    )

    # simulator
    levels: Optional[int] = Field(
        default=None,
        description="Number of productivity levels M",
        ge=2
    )
    dc: float = Field(
        default=1.0,
        description="Grid spacing in 10^3 yen/person",
        gt=0
    )
    workers: Optional[int] = Field(
        default=None,
        description="Total workers N",
        ge=1
    )
    total_index: Optional[int] = Field(
        default=None,
        description="Conserved index sum Yidx; default puts the mean level a quarter of the way up",
        ge=1
    )
    occupancy: Optional[str] = Field(
        default=None,
        description="Explicit comma-separated initial occupancy; overrides workers and total_index"
    )
    steps: int = Field(
        default=1_000_000,
        description="Proposed moves",
        ge=0
    )
    burn_in: int = Field(
        default=0,
        description="Proposals discarded before measurement",
        ge=0
    )
    sample_every: int = Field(
        default=100,
        description="Measurement stride in proposals",
        ge=1
    )
    chains: int = Field(
        default=1,
        description="Independent chains, seeded seed, seed + 1, ...",
        ge=1
    )
    processes: int = Field(
        default=1,
        description="Worker processes for independent chains",
        ge=1
    )
    limiter: str = Field(
        default="unbounded",
        description="linear-ramp or unbounded"
    )
    capacity_a: float = Field(
        default=5.84e7,
        description="Capacity amplitude A",
        gt=0
    )
    capacity_gamma: float = Field(
        default=1.18,
        description="Capacity exponent gamma",
        ge=0
    )
    debug: bool = Field(
        default=False,
        description="Assert conservation after every accepted move"
    )

    # data pipeline
    c_min: float = Field(default=1e2, description="Lower binning bound", gt=0)
    c_max: float = Field(default=1e7, description="Upper binning bound", gt=0)
    bins_per_decade: int = Field(default=20, description="Log bins per decade", ge=1)
    exclude_sectors: str = Field(
        default=",".join(DEFAULT_EXCLUSIONS),
        description="Comma-separated sectors dropped by exact match"
    )
    include_sectors: str = Field(
        default="",
        description="Comma-separated sectors to keep; empty keeps all"
    )
    years: str = Field(default="", description="Comma-separated years to keep; empty keeps all")
    input_unit_scale: float = Field(
        default=1.0,
        description="Multiplier turning input monetary values into 10^3 yen",
        gt=0
    )
    analyze_fit: bool = Field(default=False, description="Fit the mean-workers curve in analyze")

    # fitting
    fit_tol: float = Field(default=1e-8, description="Simplex diameter tolerance", gt=0)
    fit_max_evals: int = Field(default=10_000, description="Evaluations per start", ge=100)
    fit_polish: bool = Field(default=True, description="Least-squares polish of the best start")
    residuals: str = Field(default="log", description="Residual space of the chi-square")
    emit_curve: bool = Field(default=True, description="Write the fitted model next to the data")
    beta_starts: str = Field(
        default="-1e-3,-1e-4,-1e-5",
        description="Comma-separated starting betas"
    )
    gamma_starts: str = Field(
        default="0.5,1,1.5,2",
        description="Comma-separated starting gammas"
    )

    # synthetic data
    synth_row: str = Field(default="all", description="Published parameter row")
    synth_beta: Optional[float] = Field(default=None, description="Override of the row's beta")
    synth_mu: Optional[float] = Field(default=None, description="Override of the row's mu")
    synth_a: Optional[float] = Field(default=None, description="Override of the row's A", gt=0)
    synth_gamma: Optional[float] = Field(default=None, description="Override of the row's gamma", ge=0)
    synth_firms: Optional[int] = Field(
        default=None,
        description="Firm records to generate instead of a curve",
        ge=1
    )
    noise_sigma: float = Field(default=0.0, description="Log-normal noise sigma", ge=0)
    synth_bins: int = Field(default=50, description="Bins in a synthetic curve", ge=1)

    # verification
    verify_steps: int = Field(
        default=10_000_000,
        description="Proposals in the reference chains of the balance suite",
        ge=0
    )

    output_dir: Path = Field(
        default=Path("data/output"),
        description="Directory for output files"
    )
    log_dir: Path = Field(
        default=Path("data/logs"),
        description="Directory for log files"
    )
    log_level: str = Field(default="INFO", description="Logging level")

    @field_validator("limiter")
    @classmethod
    def check_limiter(cls, v: str) -> str:
        if v not in ("linear-ramp", "unbounded"):
            raise ValueError("limiter must be 'linear-ramp' or 'unbounded'")
        return v

    @field_validator("residuals")
    @classmethod
    def check_residuals(cls, v: str) -> str:
        if v not in RESIDUAL_SPACES:
            raise ValueError(f"residuals must be one of {RESIDUAL_SPACES}")
        return v

    @field_validator("synth_row")
    @classmethod
    def check_row(cls, v: str) -> str:
        if v not in TABLE1:
            raise ValueError(f"unknown parameter row {v!r}; known: {sorted(TABLE1)}")
        return v

    @field_validator("beta_starts", "gamma_starts")
    @classmethod
    def check_number_list(cls, v: str) -> str:
        parts = _split(v)
        if not parts:
            raise ValueError("at least one starting value is needed")
        for part in parts:
            float(part)
        return v

    @field_validator("occupancy", "years")
    @classmethod
    def check_integer_list(cls, v: Optional[str], info: ValidationInfo) -> Optional[str]:
        if v is None:
            return v
        parts = _split(v)
        if info.field_name == "occupancy" and not parts:
            raise ValueError("occupancy needs at least one level")
        for part in parts:
            int(part)
        return v

    @field_validator("log_level")
    @classmethod
    def check_log_level(cls, v: str) -> str:
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ValueError(f"unknown log level {v}")
        return v

    @model_validator(mode="after")
    def check_binning(self) -> "Settings":
        if not self.c_min < self.c_max:
            raise ValueError("c_min must be below c_max")
        return self

    @model_validator(mode="after")
    def levels_from_occupancy(self) -> "Settings":
        if self.occupancy is not None and self.levels is None:
            self.levels = len(self.occupancy_list())
        return self

    def ensure_dirs(self) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.log_dir.mkdir(parents=True, exist_ok=True)

    def get_output_path(self, filename: str) -> Path:
        return self.output_dir / filename

    def get_log_path(self, filename: str) -> Path:
        return self.log_dir / filename

    def resolved_total_index(self) -> Optional[int]:
        if self.total_index is not None:
            return self.total_index
        if self.levels is None or self.workers is None:
            return None
        return round(self.workers * (1 + (self.levels - 1) / 4))

    def float_list(self, name: str) -> List[float]:
        return [float(part) for part in _split(getattr(self, name))]

    def occupancy_list(self) -> Optional[List[int]]:
        if self.occupancy is None:
            return None
        return [int(part) for part in _split(self.occupancy)]

    def year_list(self) -> Optional[List[int]]:
        return [int(part) for part in _split(self.years)] or None

    def chain_seeds(self) -> List[int]:
        return [self.seed + offset for offset in range(self.chains)]

    def synth_overrides(self) -> Dict[str, float]:
        values = {
            "beta": self.synth_beta,
            "mu": self.synth_mu,
            "A": self.synth_a,
            "gamma": self.synth_gamma,
        }
        return {key: value for key, value in values.items() if value is not None}

    def resolved(self) -> Dict[str, Any]:
        """Flat, JSON-ready view echoed into run manifests."""
        return self.model_dump(mode="json")


def read_config_file(path: Path) -> Dict[str, Any]:
    """Flat key=value file, or a run manifest whose config block is reused."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return dict(load_manifest_file(path).config)
    return {
        key.lower(): value
        for key, value in dotenv_values(path).items()
        if value is not None
    }


def load_settings(
    config_file: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> Settings:
    """Flags > config file > environment > defaults."""
    values: Dict[str, Any] = {}
    if config_file is not None:
        values.update(read_config_file(config_file))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return Settings(**values)
