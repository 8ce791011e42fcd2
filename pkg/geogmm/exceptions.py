from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from geogmm.errors import (
    DataFormatError,
    DegenerateComponentError,
    GenerationError,
    InvalidArgumentError,
    NumericalBreakdownError,
)

logger = logging.getLogger(__name__)


def register_exception_handlers(app: FastAPI) -> None:
    """Register global exception handlers that map library errors to HTTP responses."""

    @app.exception_handler(InvalidArgumentError)
    async def _invalid_argument(request: Request, exc: InvalidArgumentError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(DataFormatError)
    async def _data_format(request: Request, exc: DataFormatError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(GenerationError)
    async def _generation(request: Request, exc: GenerationError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(DegenerateComponentError)
    async def _degenerate(request: Request, exc: DegenerateComponentError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"detail": str(exc), "component": exc.component},
        )

    @app.exception_handler(NumericalBreakdownError)
    async def _breakdown(request: Request, exc: NumericalBreakdownError) -> JSONResponse:
        logger.error("Numerical breakdown: %s", exc)
        return JSONResponse(
            status_code=500, content={"detail": f"Numerical breakdown: {exc}"}
        )
