import math
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings

# Верхняя граница порога: не более одного j с cos > 1/√2
LAMBDA_UPPER = 1.0 - 1.0 / math.sqrt(2.0)

ThresholdMode = Literal["fixed", "group-size", "prior-fraction", "flatness"]
RefinementMode = Literal["matched-only", "corrected-one-to-one"]
Scenario = Literal["standard", "coarse-groups", "permutation-only", "low-noise"]


def default_lambda_grid() -> List[float]:
    size = settings.LAMBDA_GRID_SIZE
    lo, hi = settings.LAMBDA_GRID_MIN, settings.LAMBDA_GRID_MAX
    if size == 1:
        return [lo]
    return [lo + (hi - lo) * i / (size - 1) for i in range(size)]


# Threshold schemas
class ThresholdConfig(BaseModel):
    """
    Настройки жёсткого порога для Π̃

    lambda_ = None - порог выбирается кросс-валидацией
    """
    mode: ThresholdMode = "fixed"
    lambda_: Optional[float] = Field(None, alias="lambda")
    eta_k: Optional[List[float]] = None

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("lambda_")
    @classmethod
    def check_lambda(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not (0.0 < value < LAMBDA_UPPER):
            raise ValueError(f"lambda must lie in (0, {LAMBDA_UPPER:.5f})")
        return value

    @field_validator("eta_k")
    @classmethod
    def check_eta(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(not (0.0 <= v <= 1.0) for v in value):
            raise ValueError("eta_k entries must lie in [0,1]")
        return value

    @model_validator(mode="after")
    def check_priors(self) -> "ThresholdConfig":
        if self.mode == "prior-fraction" and not self.eta_k:
            raise ValueError("prior-fraction mode requires eta_k")
        return self


# Fit schemas
class FitConfig(BaseModel):
    threshold: ThresholdConfig = Field(default_factory=ThresholdConfig)
    folds: int = settings.CV_FOLDS
    grid: List[float] = Field(default_factory=default_lambda_grid)
    max_iterations: int = 1
    refinement: RefinementMode = "matched-only"
    seed: int = 0
    threads: int = 0

    @field_validator("folds")
    @classmethod
    def check_folds(cls, value: int) -> int:
        if value < 2:
            raise ValueError("folds must be at least 2")
        return value

    @field_validator("grid")
    @classmethod
    def check_grid(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("grid must not be empty")
        if any(not (0.0 < v < LAMBDA_UPPER) for v in value):
            raise ValueError(f"grid values must lie in (0, {LAMBDA_UPPER:.5f})")
        return sorted(value)

    @field_validator("max_iterations")
    @classmethod
    def check_iterations(cls, value: int) -> int:
        if value < 1:
            raise ValueError("max_iterations must be at least 1")
        return value


# Simulation schemas
class SimConfig(BaseModel):
    """
    Конфигурация синтетического эксперимента

    K = None - n // DEFAULT_GROUP_SIZE групп; kappa = None - 150
    (3000 для сценария low-noise); n_mis = None - round(n^alpha).
    """
    n: int = 8000
    p: int = 300
    kappa: Optional[float] = None
    K: Optional[int] = None
    alpha: float = 0.8
    n_mis: Optional[int] = None
    min_beta: float = 0.0
    mixture_ratio: float = 2.0
    size_sigma: float = 0.5
    schedule: Optional[List[int]] = None
    merge_fraction: float = 0.4
    seed: int = 0
    scenario: Scenario = "standard"

    @field_validator("alpha")
    @classmethod
    def check_alpha(cls, value: float) -> float:
        if not (0.0 <= value <= 1.0):
            raise ValueError("alpha must lie in [0,1]")
        return value

    @field_validator("kappa")
    @classmethod
    def check_kappa(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and (not math.isfinite(value) or value < 0):
            raise ValueError("kappa must be a finite non-negative number")
        return value

    @field_validator("min_beta")
    @classmethod
    def check_min_beta(cls, value: float) -> float:
        if not (0.0 <= value < 1.0):
            raise ValueError("min_beta must lie in [0,1)")
        return value

    @field_validator("merge_fraction")
    @classmethod
    def check_merge_fraction(cls, value: float) -> float:
        if not (0.0 <= value <= 1.0):
            raise ValueError("merge_fraction must lie in [0,1]")
        return value

    @field_validator("mixture_ratio", "size_sigma")
    @classmethod
    def check_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("value must be positive")
        return value

    @model_validator(mode="after")
    def resolve(self) -> "SimConfig":
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if self.p >= self.n:
            raise ValueError("p must be smaller than n")
        if self.kappa is None:
            self.kappa = 3000.0 if self.scenario == "low-noise" else 150.0
        if self.schedule is not None:
            if sum(self.schedule) != self.n:
                raise ValueError("schedule sizes must sum to n")
            if any(s < 1 or s >= self.p for s in self.schedule):
                raise ValueError("schedule sizes must lie in [1, p-1]")
            self.K = len(self.schedule)
        if self.K is None:
            self.K = max(1, self.n // settings.DEFAULT_GROUP_SIZE)
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.schedule is None and not (2 * self.K <= self.n <= self.K * (self.p - 1)):
            raise ValueError("K must satisfy 2K <= n <= K(p-1)")
        if self.n_mis is not None and not (0 <= self.n_mis <= self.n):
            raise ValueError("n_mis must lie in [0, n]")
        return self

    def mismatch_count(self) -> int:
        if self.n_mis is not None:
            return self.n_mis
        return min(self.n, int(round(self.n ** self.alpha)))


class SweepAxis(BaseModel):
    name: Literal["alpha", "n", "K", "kappa"]
    values: List[float]

    @field_validator("values")
    @classmethod
    def check_values(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("sweep axis needs at least one value")
        return value


class SweepSpec(BaseModel):
    base: SimConfig = Field(default_factory=SimConfig)
    vary: SweepAxis
    replicates: int = 1
    fit: FitConfig = Field(default_factory=FitConfig)

    @field_validator("replicates")
    @classmethod
    def check_replicates(cls, value: int) -> int:
        if value < 1:
            raise ValueError("replicates must be at least 1")
        return value


# Metric schemas
class MetricSet(BaseModel):
    method: str = "spheremap"
    w_mse: float
    w_mse_normalized: float
    w1_mse: Optional[float] = None
    w1_mse_normalized: Optional[float] = None
    match_rate: float
    weight_mse: float
    detection_rate: float
    n_one_to_many: int
    n_one_to_one: int


# Manifest schemas
class SimulationManifest(BaseModel):
    format_version: int = settings.FORMAT_VERSION
    config: Dict[str, Any]
    seed: int
    n_mis: int
    redistributed: int
    group_sizes: List[int]
    counts: Dict[str, int]


class EmbeddingManifest(BaseModel):
    format_version: int = settings.FORMAT_VERSION
    k: int
    alpha: float
    dim: int
    symmetric: bool
    items: List[str]
    excluded: List[Dict[str, str]]


class FitManifest(BaseModel):
    format_version: int = settings.FORMAT_VERSION
    config: Dict[str, Any]
    report: Dict[str, Any]
