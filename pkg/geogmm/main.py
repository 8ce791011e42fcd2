from __future__ import annotations

import logging
import threading
from contextlib import asynccontextmanager
from typing import AsyncIterator

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

import geogmm
from geogmm.config import get_settings
from geogmm.exceptions import register_exception_handlers
from geogmm.routers import health, mixtures

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI) -> AsyncIterator[None]:
    """Bound the number of fits running at once."""
    settings = get_settings()
    logger.info("Allowing %d concurrent fits", settings.max_concurrent_fits)
    app.state.fit_slots = threading.BoundedSemaphore(settings.max_concurrent_fits)
    yield


def create_app() -> FastAPI:
    """Application factory."""
    settings = get_settings()

    app = FastAPI(
        title="Geodesic GMM API",
        description="Fit Gaussian mixtures by Riemannian optimization or EM",
        version=geogmm.__version__,
        lifespan=lifespan,
    )

    app.add_middleware(
        CORSMiddleware,
        allow_origins=settings.cors_origins,
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    register_exception_handlers(app)

    app.include_router(health.router, prefix="/api/v1")
    app.include_router(mixtures.router, prefix="/api/v1")

    return app


app = create_app()
