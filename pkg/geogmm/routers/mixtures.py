"""Endpoints for generating, fitting and scoring mixtures."""

from __future__ import annotations

import threading

from fastapi import APIRouter, Depends

from geogmm.datagen import generate as generate_dataset
from geogmm.dependencies import get_fit_slots
from geogmm.fitting import run_fit
from geogmm.gmm_objective import Dataset, original_loglik
from geogmm.schemas import (
    FitRequest,
    FitResponse,
    GenerateRequest,
    GenerateResponse,
    GmmModelFile,
    LoglikRequest,
    LoglikResponse,
)

router = APIRouter(tags=["mixtures"])


def _dataset(samples: list[list[float]]) -> Dataset:
    return Dataset(samples=samples)


@router.post("/generate", response_model=GenerateResponse)
def generate(body: GenerateRequest) -> GenerateResponse:
    """Draw a synthetic mixture and, optionally, samples from it."""
    params, data = generate_dataset(body.spec)
    if not body.include_samples:
        return GenerateResponse(mixture=GmmModelFile.from_params(params))
    return GenerateResponse(
        mixture=GmmModelFile.from_params(params),
        samples=data.samples.tolist(),
        labels=data.labels.tolist(),
    )


@router.post("/fit", response_model=FitResponse)
def fit(
    body: FitRequest,
    slots: threading.BoundedSemaphore = Depends(get_fit_slots),
) -> FitResponse:
    """Initialize with k-means++ and fit with the requested method."""
    data = _dataset(body.samples)
    with slots:
        outcome, report = run_fit(
            data,
            body.method,
            body.k,
            seed=body.seed,
            optim=body.optim,
            em=body.em,
            standardize_data=body.standardize,
        )
    model = None if outcome.params is None else GmmModelFile.from_params(outcome.params)
    return FitResponse(model=model, report=report)


@router.post("/loglik", response_model=LoglikResponse)
def loglik(body: LoglikRequest) -> LoglikResponse:
    data = _dataset(body.samples)
    total = original_loglik(data, body.model.to_params())
    return LoglikResponse(total=total, average=total / data.n, n=data.n)
