from __future__ import annotations

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables."""

    threads: int | None = Field(default=None, ge=1)
    deterministic: bool = False
    workers: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    cors_origins: list[str] = ["http://localhost:5173"]
    max_concurrent_fits: int = Field(default=2, ge=1)

    model_config = {"env_prefix": "GEOGMM_"}

    @property
    def blas_threads(self) -> int | None:
        """Thread cap for BLAS; deterministic mode pins it to one."""
        return 1 if self.deterministic else self.threads


@lru_cache
def get_settings() -> Settings:
    return Settings()
