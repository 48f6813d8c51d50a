"""Request and response models shared by the service and the CLI."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .liouville import SubstepScheme


class RunConfig(BaseModel):
    model: str = "double-gyre"
    params: dict[str, float] = Field(default_factory=dict)
    extents: Optional[list[float]] = None
    nx: Optional[int] = Field(None, ge=2)
    ny: Optional[int] = Field(None, ge=2)
    spacing: Optional[float] = Field(None, gt=0)
    t0: float = 0.0
    T: float = 10.0
    checkpoints: int = Field(100, ge=1)
    scheme: SubstepScheme = SubstepScheme.TVDRK2
    cfl: float = Field(0.5, gt=0, le=1)
    composition: Literal["bilinear", "bicubic"] = "bilinear"
    output: str = "out"
    keep_every: int = Field(0, ge=0)
    clamp_negative_ftle: bool = False

    @field_validator("extents")
    @classmethod
    def _four(cls, v):
        if v is not None and len(v) != 4:
            raise ValueError("extents needs x_min x_max y_min y_max")
        return v

    @model_validator(mode="after")
    def _times(self):
        if not self.T > self.t0:
            raise ValueError("T must exceed t0")
        return self


class FtleRequest(BaseModel):
    input: str
    t: Optional[float] = None
    checkpoint: Optional[int] = None
    output: str = "out"
    clamp_negative_ftle: bool = False


class IsleRequest(BaseModel):
    volume: str
    r: list[float] = Field(..., min_length=1)
    output: str = "out"


class RidgesRequest(BaseModel):
    input: str
    t: Optional[float] = None
    percentile: float = Field(90.0, gt=0, lt=100)
    smoothing: int = Field(1, ge=0)
    output: str = "out"
    rate: Optional[float] = None
    volume: Optional[str] = None
    r: Optional[float] = None
    rho_cells: float = Field(3.0, gt=0)


class ConvergenceRequest(BaseModel):
    model: str = "double-gyre"
    params: dict[str, float] = Field(default_factory=dict)
    extents: Optional[list[float]] = None
    spacings: list[float] = Field(default_factory=lambda: [1 / 16, 1 / 32, 1 / 64, 1 / 128])
    t0: float = 0.0
    T: float = 10.0
    checkpoints: int = Field(100, ge=1)
    dt_ref: float = Field(1e-3, gt=0)
    scale_dt: bool = True
    scheme: SubstepScheme = SubstepScheme.TVDRK2
    interior_cells: Optional[int] = Field(None, ge=0)
    output: str = "out"


class BenchRequest(BaseModel):
    model: str = "double-gyre"
    params: dict[str, float] = Field(default_factory=dict)
    extents: Optional[list[float]] = None
    sizes: list[int] = Field(default_factory=lambda: [65, 129])
    t0: float = 0.0
    T: float = 1.0
    cfl: float = Field(0.5, gt=0, le=1)
    scheme: SubstepScheme = SubstepScheme.TVDRK2
    legacy: bool = False
    output: Optional[str] = None


class TraceRequest(BaseModel):
    model: str = "double-gyre"
    params: dict[str, float] = Field(default_factory=dict)
    seeds: list[tuple[float, float]]
    t0: float = 0.0
    t1: float = 10.0
    dt_sub: float = Field(1e-3, gt=0)
    output: Optional[str] = None


class ErrorResponse(BaseModel):
    error: str
    kind: str
    exit_code: int
