"""Pydantic schemas for iteration logs, stage reports, evaluation reports and run manifests."""
from __future__ import annotations

from datetime import datetime
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


ITERATION_KEYS = ("iter", "hpwl", "wl", "energy", "lambda", "gamma", "tau", "alpha")


class IterationRecord(BaseModel):
    stage: str = ""
    iteration: int = Field(alias="iter")
    hpwl: float
    wl: float
    energy: float
    lam: float = Field(alias="lambda")
    gamma: float
    tau: float
    alpha: float

    model_config = {
        "populate_by_name": True,
        "extra": "ignore",
    }


def format_iteration_line(record: IterationRecord) -> str:
    """One machine-parseable key=value line."""
    values = record.model_dump(by_alias=True)
    parts = [f"iter={record.iteration}"]
    parts.extend(f"{key}={values[key]!r}" for key in ITERATION_KEYS[1:])
    return " ".join(parts)


def parse_iteration_line(line: str, stage: str = "") -> IterationRecord:
    fields: Dict[str, str] = {}
    for token in line.split():
        if "=" in token:
            key, value = token.split("=", 1)
            fields[key] = value
    missing = [key for key in ITERATION_KEYS if key not in fields]
    if missing:
        raise ValueError(f"iteration line misses {missing}: {line!r}")
    data = {key: float(fields[key]) for key in ITERATION_KEYS[1:]}
    return IterationRecord(stage=stage, iter=int(fields["iter"]), **data)


class StageReport(BaseModel):
    stage: str
    hpwl: float
    vi: Optional[int] = None
    tau: float
    macro_overlap: float = 0.0
    wall_time: float = 0.0
    iterations: int = 0


class Violation(BaseModel):
    kind: str  # bounds | overlap | row | tier
    cells: List[str]
    amount: float = 0.0


class EvalReport(BaseModel):
    hpwl: float
    hpwl_x: float
    hpwl_y: float
    hpwl_physical: float
    vi: int
    tau: float
    grid: int
    legal: bool
    violations: List[Violation] = Field(default_factory=list)
    tier_utilization: List[float] = Field(default_factory=list)

    def to_text(self) -> str:
        """Line-oriented key=value rendering."""
        lines = [
            f"hpwl={self.hpwl!r}",
            f"hpwl_x={self.hpwl_x!r}",
            f"hpwl_y={self.hpwl_y!r}",
            f"hpwl_physical={self.hpwl_physical!r}",
            f"vi={self.vi}",
            f"tau={self.tau!r}",
            f"grid={self.grid}",
            f"legal={str(self.legal).lower()}",
            f"violations={len(self.violations)}",
            "tier_utilization=" + ",".join(repr(u) for u in self.tier_utilization),
        ]
        return "\n".join(lines) + "\n"


class RunManifest(BaseModel):
    inputs: List[str]
    config: dict
    seed: int
    out_dir: str
    version: str
    stage_times: Dict[str, float] = Field(default_factory=dict)
    exit_code: int = 0
    created: Optional[datetime] = None
