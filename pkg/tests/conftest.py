from __future__ import annotations

import os
import threading
from typing import AsyncIterator

import numpy as np
import pytest
from httpx import ASGITransport, AsyncClient

# Keep the service small and quiet before anything imports geogmm.main.
os.environ.setdefault("GEOGMM_MAX_CONCURRENT_FITS", "1")
os.environ.setdefault("GEOGMM_LOG_LEVEL", "WARNING")

from geogmm.datagen import generate  # noqa: E402
from geogmm.gmm_objective import Dataset, GmmParams  # noqa: E402
from geogmm.schemas import GenSpec  # noqa: E402
from geogmm.spd_manifold import SpdPoint, TangentVec  # noqa: E402


def random_spd(rng: np.random.Generator, d: int, cond: float = 10.0) -> SpdPoint:
    """Random SPD matrix with eigenvalues in [1, cond]."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return SpdPoint((q * eig) @ q.T)


def random_tangent(rng: np.random.Generator, d: int) -> TangentVec:
    a = rng.standard_normal((d, d))
    return TangentVec(a + a.T)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def two_cluster() -> tuple[GmmParams, Dataset]:
    """Well-separated d=2, K=2 mixture with 400 samples."""
    return generate(GenSpec(d=2, k=2, c=5.0, e=1.0, seed=3))


@pytest.fixture
def gaussian_data(rng: np.random.Generator) -> Dataset:
    """500 samples from one correlated 3-D Gaussian."""
    cov = np.array([[2.0, 0.6, 0.0], [0.6, 1.0, 0.3], [0.0, 0.3, 0.5]])
    x = rng.multivariate_normal([1.0, -2.0, 0.5], cov, size=500)
    return Dataset(samples=x)


@pytest.fixture
def test_app():
    """Create FastAPI test app with fresh settings."""
    from geogmm.config import get_settings

    # Clear cached settings so each test gets a fresh instance.
    get_settings.cache_clear()

    from geogmm.main import create_app

    app = create_app()
    app.state.fit_slots = threading.BoundedSemaphore(1)
    return app


@pytest.fixture
async def client(test_app) -> AsyncIterator[AsyncClient]:
    """Async HTTP test client."""
    transport = ASGITransport(app=test_app)
    async with AsyncClient(transport=transport, base_url="http://test") as ac:
        yield ac
