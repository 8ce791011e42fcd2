from __future__ import annotations

from fastapi import APIRouter

import geogmm
from geogmm.schemas import HealthResponse

router = APIRouter(tags=["health"])


@router.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=geogmm.__version__)
