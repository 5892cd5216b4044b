"""
Experiment configuration models.
Loaded from JSON files such as config/experiments/synthetic.json.
"""

import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from config import settings
from services.errors import ConfigError
from services.mixture_service import TruncatedGaussianMixture

EXPERIMENTS_DIR = Path(__file__).resolve().parent / 'experiments'


class SeedConfig(BaseModel):
    sampling: int = 0
    quadrature: int = 1
    fit: int = 2
    solver: int = 3
    validation: int = 4

    def offset(self, base: int) -> "SeedConfig":
        return SeedConfig(sampling=base, quadrature=base + 1, fit=base + 2, solver=base + 3,
                          validation=base + 4)


class ComponentConfig(BaseModel):
    weight: float
    mean: List[float]
    cov: List[List[float]]
    lower: List[float]
    upper: List[float]


class MixtureConfig(BaseModel):
    components: List[ComponentConfig]

    def build(self) -> TruncatedGaussianMixture:
        return TruncatedGaussianMixture.from_dict(self.model_dump())


class ExperimentConfig(BaseModel):
    problem: Literal['synthetic', 'mzi', 'microring']
    epsilons: List[float] = Field(default_factory=lambda: [0.05])
    rho: int = Field(default=10, ge=1, le=16)
    p: int = Field(default=2, ge=1)
    q: Optional[int] = Field(default=None, ge=0)
    simulation_budget: Optional[int] = Field(default=None, ge=1)
    n_candidates: Optional[int] = Field(default=None, ge=1)
    n_mc: int = Field(default=100_000, ge=1000)
    n_mc_truth: int = Field(default=2000, ge=1000)
    n_validation: int = Field(default=1000, ge=1)
    n_starts: int = Field(default=64, ge=1)
    oracle_resolution: Optional[int] = Field(default=None, ge=2)
    tradeoff_grid: List[float] = Field(default_factory=list)
    feasible_grid_resolution: int = Field(default=51, ge=2)
    feasible_grid_samples: int = Field(default=10_000, ge=100)
    spectrum_ensemble: int = Field(default=50, ge=1)
    seeds: SeedConfig = Field(default_factory=SeedConfig)
    output_dir: str = settings.OUTPUT_DIR
    use_cache: bool = True
    xi_model: Optional[MixtureConfig] = None

    @field_validator('epsilons', 'tradeoff_grid')
    @classmethod
    def risks_in_unit_interval(cls, values):
        for value in values:
            if not 0.0 < value < 1.0:
                raise ValueError(f"risk level {value} must lie in (0, 1)")
        return values

    @model_validator(mode='after')
    def default_quadrature_order(self):
        if self.q is None:
            self.q = self.p
        return self

    @property
    def xi_order(self) -> int:
        return max(self.p, 2 * self.q)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None) -> "ExperimentConfig":
        update = {}
        if seed is not None:
            update['seeds'] = self.seeds.offset(seed)
        if out is not None:
            update['output_dir'] = out
        return self.model_copy(update=update)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read experiment config: {e}", {'path': str(path)})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("invalid experiment config", {'path': str(path), 'errors': e.errors()})


def default_config(problem: str) -> ExperimentConfig:
    return load_config(EXPERIMENTS_DIR / f'{problem}.json')
