from __future__ import annotations

from enum import StrEnum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from geogmm.gmm_objective import GmmParams
from geogmm.spd_manifold import SpdPoint

Method = Literal["em", "lbfgs", "cg", "cg-usual", "lbfgs-usual"]
METHODS: tuple[str, ...] = ("em", "lbfgs", "cg", "cg-usual", "lbfgs-usual")


class Termination(StrEnum):
    """Why a fit stopped."""

    TOLERANCE = "tolerance"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"
    FAILURE = "failure"


class OptimConfig(BaseModel, frozen=True):
    """Settings shared by the manifold optimizers and their line-search."""

    c1: float = Field(default=1e-4, gt=0, lt=1)
    c2: float = Field(default=0.9, gt=0, lt=1)
    max_iters: int = Field(default=1500, ge=1)
    tol_avg_ll: float = Field(default=1e-6, gt=0)
    tol_grad_norm: float = Field(default=1e-10, ge=0)
    memory: int = Field(default=10, ge=1)
    ls_max_iters: int = Field(default=30, ge=1)
    interp_margin: float = Field(default=0.1, gt=0, lt=0.5)
    extrap_lo: float = Field(default=1.1, gt=1)
    extrap_hi: float = Field(default=10.0, gt=1)
    curvature_eps: float = Field(default=1e-10, ge=0)

    @model_validator(mode="after")
    def _check_ordering(self) -> OptimConfig:
        if not self.c1 < self.c2:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if not self.extrap_lo < self.extrap_hi:
            raise ValueError("Extrapolation bounds must satisfy 1 < extrap_lo < extrap_hi")
        return self


class EmConfig(BaseModel, frozen=True):
    """EM settings; `cov_floor` is relative to the data variance scale tr(cov)/d."""

    max_iters: int = Field(default=1500, ge=1)
    tol_avg_ll: float = Field(default=1e-6, gt=0)
    cov_floor: float = Field(default=1e-6, ge=0)
    kmeans_iters: int = Field(default=10, ge=0)


class GenSpec(BaseModel, frozen=True):
    """Synthetic mixture: dimension, components, separation, eccentricity."""

    model_config = ConfigDict(populate_by_name=True)

    d: int = Field(ge=1)
    k: int = Field(ge=1, alias="K")
    c: float = Field(gt=0)
    e: float = Field(default=1.0, ge=1)
    n: int | None = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_eccentricity(self) -> GenSpec:
        if self.d == 1 and self.e != 1.0:
            raise ValueError("Eccentricity above one needs at least two dimensions")
        return self

    @property
    def n_samples(self) -> int:
        return self.n if self.n is not None else self.d * self.d * 100


class GmmModelFile(BaseModel, frozen=True):
    """Serialized mixture in the original (α, μ, Σ) parametrization."""

    model_config = ConfigDict(populate_by_name=True)

    k: int = Field(ge=1, alias="K")
    d: int = Field(ge=1)
    weights: list[float]
    means: list[list[float]]
    covariances: list[list[list[float]]]

    @model_validator(mode="after")
    def _check_shapes(self) -> GmmModelFile:
        if len(self.weights) != self.k or len(self.means) != self.k:
            raise ValueError("weights and means must have K entries")
        if len(self.covariances) != self.k:
            raise ValueError("covariances must have K entries")
        if any(len(m) != self.d for m in self.means):
            raise ValueError("every mean must have d entries")
        if any(len(c) != self.d or any(len(r) != self.d for r in c) for c in self.covariances):
            raise ValueError("every covariance must be d×d")
        return self

    @classmethod
    def from_params(cls, params: GmmParams) -> GmmModelFile:
        return cls(
            k=params.k,
            d=params.d,
            weights=params.weights.tolist(),
            means=params.means.tolist(),
            covariances=[c.mat.tolist() for c in params.covs],
        )

    def to_params(self) -> GmmParams:
        return GmmParams(
            weights=np.array(self.weights),
            means=np.array(self.means, dtype=float).reshape(self.k, self.d),
            covs=tuple(SpdPoint(np.array(c)) for c in self.covariances),
        )


class DatasetMetadata(BaseModel, frozen=True):
    """Sidecar written next to a generated CSV."""

    d: int
    n: int
    seed: int
    generator: GenSpec
    separation_rule: str
    mixture: GmmModelFile


class Standardization(BaseModel, frozen=True):
    """Per-column shift and scale applied before fitting; saved models are mapped back."""

    shift: list[float]
    scale: list[float]


class FitReportFile(BaseModel, frozen=True):
    """Report written by `fit`; the ALL trace holds one entry per iterate."""

    method: Method
    reparametrized: bool
    k: int
    n: int
    d: int
    seed: int
    optim: OptimConfig
    em: EmConfig
    all_trace: list[float]
    iterations: int
    termination: Termination
    final_all: float | None
    init_time_s: float
    fit_time_s: float
    init_hash: str
    cov_floor_abs: float
    block_scales: list[float] | None = None
    standardization: Standardization | None = None
    error: str | None = None
    library_version: str
    result_digest: str


class BenchCell(BaseModel, frozen=True):
    model_config = ConfigDict(populate_by_name=True)

    d: int = Field(ge=1)
    k: int = Field(ge=1, alias="K")
    c: float = Field(gt=0)
    e: float = Field(default=1.0, ge=1)
    n: int | None = Field(default=None, ge=1)


class BenchSpec(BaseModel, frozen=True):
    """A benchmark sweep: methods × grid cells × runs."""

    methods: list[Method] = Field(min_length=1)
    grid: list[BenchCell] = Field(min_length=1)
    runs: int = Field(default=20, ge=1)
    seed: int = Field(default=0, ge=0)
    shared_init: bool = True
    optim: OptimConfig = Field(default_factory=OptimConfig)
    em: EmConfig = Field(default_factory=EmConfig)


class BenchRow(BaseModel, frozen=True):
    """One (cell, run, method) result line of the results CSV."""

    method: Method
    d: int
    K: int
    c: float
    e: float
    seed: int
    time_s: float = Field(ge=0)
    iters: int
    final_all: float | None
    termination: Termination
    init_time_s: float = Field(ge=0)
    init_hash: str
    config_hash: str
    code_version: str


class HealthResponse(BaseModel, frozen=True):
    """Health check response."""

    status: str
    version: str


class GenerateRequest(BaseModel, frozen=True):
    """Request body for POST /generate."""

    spec: GenSpec
    include_samples: bool = True


class GenerateResponse(BaseModel, frozen=True):
    mixture: GmmModelFile
    samples: list[list[float]] = Field(default_factory=list)
    labels: list[int] = Field(default_factory=list)


class FitRequest(BaseModel, frozen=True):
    """Request body for POST /fit."""

    samples: list[list[float]] = Field(min_length=1)
    method: Method = "lbfgs"
    k: int = Field(ge=1)
    seed: int = Field(default=0, ge=0)
    standardize: bool = False
    optim: OptimConfig = Field(default_factory=OptimConfig)
    em: EmConfig = Field(default_factory=EmConfig)


class FitResponse(BaseModel, frozen=True):
    model: GmmModelFile | None
    report: FitReportFile


class LoglikRequest(BaseModel, frozen=True):
    """Request body for POST /loglik."""

    samples: list[list[float]] = Field(min_length=1)
    model: GmmModelFile


class LoglikResponse(BaseModel, frozen=True):
    total: float
    average: float
    n: int
