import math
import os
from contextvars import ContextVar
from enum import StrEnum
from functools import lru_cache
from pathlib import Path
from typing import Annotated

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from convex_evasion.geometry.cost import BoundMode, CostSpec

# The TOML file in effect while a configuration is being constructed.
_config_file: ContextVar[Path | None] = ContextVar("config_file", default=None)


class AlgorithmId(StrEnum):
    CONVEX_SEARCH = "convex_search"
    KMLS = "kmls"
    LINEAR_SEARCH = "linear_search"
    SET_SEARCH = "set_search"


class ClassifierFamily(StrEnum):
    HALFSPACE = "halfspace"
    COST_BALL = "cost_ball"
    POLYTOPE = "polytope"
    HALFSPACE_BOX = "halfspace_box"


class ClassifierSettings(BaseModel):
    """Synthetic classifier family and its parameters."""

    family: ClassifierFamily = ClassifierFamily.HALFSPACE
    # Distance of the halfspace (or of each polytope face, or of the box
    # threshold) from the target, measured along the normal.
    displacement: Annotated[float, Field(gt=0)] = 2.0
    threshold: Annotated[float, Field(gt=0)] = math.pi
    faces: Annotated[int, Field(ge=1, le=1000)] = 8
    half_width: Annotated[float, Field(gt=0)] = 10.0
    normal: list[float] | None = None

    @field_validator("normal")
    @classmethod
    def validate_normal(cls, value: list[float] | None) -> list[float] | None:
        """Reject normals that cannot define a halfspace."""
        if value is None:
            return value
        if not all(math.isfinite(component) for component in value):
            raise ValueError("classifier normal must be finite")
        if not any(value):
            raise ValueError("classifier normal must not be the zero vector")
        return value


class SamplerSettings(BaseModel):
    """Constants of the hit-and-run pipeline; unset values scale with D."""

    samples_per_phase: Annotated[int, Field(ge=1)] | None = None
    walk_steps: Annotated[int, Field(ge=0)] | None = None
    rounding_rounds: Annotated[int, Field(ge=0)] = 3
    inner_radius_fraction: Annotated[float, Field(gt=0, lt=1)] = 1e-3
    max_phases: Annotated[int, Field(ge=1)] | None = None
    centered_directions: bool = True

    def samples(self, dimension: int) -> int:
        """Samples per phase N, 10·D unless configured."""
        return self.samples_per_phase or 10 * dimension

    def steps(self, dimension: int) -> int:
        """Hit-and-run steps K, 50·D unless configured."""
        return 50 * dimension if self.walk_steps is None else self.walk_steps

    def phases(self, dimension: int) -> int:
        """Phase cap T = ⌈log₂(R/r)⌉ + D unless configured.

        The worst-case cap ⌈D·log₂(R/r)⌉ is available as ``max_phases``;
        cuts carried between proposals make the smaller default enough.
        """
        if self.max_phases is not None:
            return self.max_phases
        return math.ceil(math.log2(1 / self.inner_radius_fraction)) + dimension


class Budgets(BaseModel):
    max_queries: Annotated[int, Field(ge=1)] = 10_000_000
    max_doublings: Annotated[int, Field(ge=1, le=1024)] = 64
    max_iterations: Annotated[int, Field(ge=1)] = 100_000
    transcript_cap: Annotated[int, Field(ge=0)] = 1_000_000


class ExperimentConfig(BaseSettings):
    """Experiment configuration loaded from flags, environment and file."""

    model_config = SettingsConfigDict(
        env_prefix="EVASION_", env_nested_delimiter="__", extra="forbid"
    )

    app_name: str = "Convex Evasion"
    package_name: str = "convex-evasion"

    algorithm: AlgorithmId = AlgorithmId.CONVEX_SEARCH
    classifier: ClassifierSettings = Field(default_factory=ClassifierSettings)

    dimension: Annotated[int, Field(ge=1, le=10_000)] = 2
    exponent: Annotated[float, Field(gt=0)] = 1.0
    weights: list[float] | None = None
    target: list[float] | None = None

    mode: BoundMode = BoundMode.MULTIPLICATIVE
    epsilon: Annotated[float, Field(gt=0)] | None = 0.1
    eta: Annotated[float, Field(gt=0)] | None = None
    lower_bound: Annotated[float, Field(gt=0)] | None = None
    bootstrap_negative: bool = False
    kmls_steps: Annotated[int, Field(ge=1)] | None = None

    seed: Annotated[int, Field(ge=0)] = 0
    trials: Annotated[int, Field(ge=1)] = 1
    workers: Annotated[int, Field(ge=1, le=64)] = 1
    budgets: Budgets = Field(default_factory=Budgets)
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)

    memoize: bool = False
    record_transcript: bool = False
    trace: bool = False
    output_dir: Path = Path("results")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        """Flags win over the environment, which wins over the file."""
        return (
            init_settings,
            env_settings,
            TomlConfigSettingsSource(settings_cls, toml_file=_config_file.get()),
        )

    @model_validator(mode="after")
    def validate_geometry(self) -> "ExperimentConfig":
        """Check cross-field consistency of dimensions and accuracies."""
        if self.weights is not None:
            if len(self.weights) != self.dimension:
                raise ValueError("weights must have one entry per dimension")
            if any(math.isnan(w) or w < 0 for w in self.weights):
                raise ValueError("weights must lie in [0, inf]")
        if self.target is not None:
            if len(self.target) != self.dimension:
                raise ValueError("target must have one entry per dimension")
            if not all(math.isfinite(t) for t in self.target):
                raise ValueError("target must be finite")
        normal = self.classifier.normal
        if normal is not None and len(normal) != self.dimension:
            raise ValueError("classifier normal must have one entry per dimension")
        if self.mode is BoundMode.MULTIPLICATIVE and self.epsilon is None:
            raise ValueError("multiplicative mode requires epsilon")
        if self.mode is BoundMode.ADDITIVE and self.eta is None:
            raise ValueError("additive mode requires eta")
        if self.algorithm is AlgorithmId.SET_SEARCH and self.exponent < 1:
            raise ValueError("set_search requires an exponent of at least 1")
        if self.algorithm is AlgorithmId.LINEAR_SEARCH and self.exponent != 1:
            raise ValueError("linear_search is defined for an exponent of 1")
        return self

    @property
    def accuracy(self) -> float:
        """The ε or η that applies to the configured mode."""
        if self.mode is BoundMode.ADDITIVE:
            return self.eta
        return self.epsilon

    def cost_spec(self) -> CostSpec:
        """Build the cost function this experiment evaluates."""
        return CostSpec(
            target=self.target or [0.0] * self.dimension,
            weights=self.weights or [1.0] * self.dimension,
            exponent=self.exponent,
        )


def load_config(path: Path | None = None, **overrides: object) -> ExperimentConfig:
    """Build a configuration from an optional TOML file and flag values."""
    token = _config_file.set(path)
    try:
        return ExperimentConfig(**overrides)
    finally:
        _config_file.reset(token)


@lru_cache()
def get_config() -> ExperimentConfig:
    config_file = os.environ.get("EVASION_CONFIG_FILE")
    return load_config(Path(config_file) if config_file else None)
