"""Runtime configuration for the 3D placement flow."""
from __future__ import annotations

from functools import lru_cache
from typing import Literal, Optional

import json
import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field


ENV_PREFIX = "EPLACE3D_"


class RuntimeSettings(BaseModel):
    log_level: str = Field(default="INFO", alias="EPLACE3D_LOG_LEVEL")
    log_dir: str = Field(default="logs", alias="EPLACE3D_LOG_DIR")
    threads: int = Field(default=1, ge=1, alias="EPLACE3D_THREADS")
    seed: Optional[int] = Field(default=None, alias="EPLACE3D_SEED")
    config_path: Optional[str] = Field(default=None, alias="EPLACE3D_CONFIG")

    model_config = {
        "populate_by_name": True,
        "extra": "ignore",
    }


class OptimizerSettings(BaseModel):
    max_iters_3d: int = Field(default=800, ge=1)
    max_iters_2d: int = Field(default=800, ge=1)
    preconditioner: Literal["3d", "2d"] = "3d"
    h_min_ratio: float = Field(default=1e-4, gt=0)
    max_backtracks: int = Field(default=5, ge=0)
    max_restarts: int = Field(default=3, ge=0)
    lambda_mu_min: float = Field(default=0.75, gt=0)
    lambda_mu_max: float = Field(default=1.1, gt=0)
    # dHPWL reference, as a fraction of the stage's starting wirelength
    lambda_ref_fraction: float = Field(default=0.05, gt=0)
    gamma_k: float = 2.0
    gamma_b: float = 0.0
    log_every: int = Field(default=1, ge=1)


class AnnealingSettings(BaseModel):
    t_init: Optional[float] = Field(default=None, gt=0)
    cooling: float = Field(default=0.95, gt=0, lt=1)
    moves_per_macro: int = Field(default=100, ge=1)
    t_final_ratio: float = Field(default=1e-4, gt=0, lt=1)
    prologue_samples: int = Field(default=200, ge=1)
    overlap_weight: float = Field(default=10.0, gt=0)
    max_retries: int = Field(default=3, ge=0)


class FillerSettings(BaseModel):
    enabled: bool = True


class StageFlags(BaseModel):
    global_2d: bool = True
    stdcell_gp: bool = True
    detail: bool = True


class FlowConfig(BaseModel):
    tiers: int = Field(default=1, ge=1)
    target_density: float = Field(default=1.0, gt=0, le=1)
    whitespace: float = Field(default=0.10, ge=0, lt=1)
    bin_k: float = Field(default=1.0, gt=0)
    vi_weight: Optional[float] = Field(default=None, ge=0)
    c_vi: float = Field(default=30.0, gt=0)
    c_row: float = Field(default=0.3, gt=0)
    tau_stop_3d: float = Field(default=0.10, gt=0, lt=1)
    tau_stop_2d: float = Field(default=0.10, gt=0, lt=1)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    field_sampling: Literal["overlap", "center"] = "overlap"
    density_only: bool = False
    # a tier may hold at most this multiple of the average row utilization
    tier_balance: float = Field(default=1.10, ge=1)
    grid_max_3d: int = Field(default=256, ge=8)
    grid_max_2d: int = Field(default=512, ge=8)
    # fixed bin counts per axis; None sizes the grids from the average cell
    grid_3d: Optional[int] = Field(default=None, ge=2)
    grid_2d: Optional[int] = Field(default=None, ge=2)
    optimizer: OptimizerSettings = OptimizerSettings()
    annealing: AnnealingSettings = AnnealingSettings()
    fillers: FillerSettings = FillerSettings()
    stages: StageFlags = StageFlags()

    model_config = {
        "populate_by_name": True,
        "extra": "ignore",
    }

    def with_overrides(self, **overrides) -> "FlowConfig":
        """Return a validated copy; None values leave the field untouched."""
        data = self.model_dump()
        for key, value in overrides.items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                data[section][name] = value
            else:
                data[key] = value
        return FlowConfig(**data)


FLOW_CONFIG_PATH = Path("config.json")


def load_flow_config(path: Optional[Path] = None) -> FlowConfig:
    path = Path(path) if path is not None else FLOW_CONFIG_PATH
    if not path.exists():
        return FlowConfig()
    data = json.loads(path.read_text())
    return FlowConfig(**data)


def _load_environment() -> RuntimeSettings:
    load_dotenv(override=False)
    data = {key: os.getenv(key) for key in os.environ.keys() if key.startswith(ENV_PREFIX)}
    data = {key: value for key, value in data.items() if value not in (None, "")}
    return RuntimeSettings(**data)


@lru_cache(maxsize=1)
def get_settings() -> RuntimeSettings:
    """Return cached runtime settings."""

    return _load_environment()
