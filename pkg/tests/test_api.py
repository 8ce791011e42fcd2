from __future__ import annotations

from httpx import AsyncClient

from geogmm.schemas import GmmModelFile


async def test_health(client: AsyncClient) -> None:
    resp = await client.get("/api/v1/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


async def test_generate(client: AsyncClient) -> None:
    resp = await client.post(
        "/api/v1/generate", json={"spec": {"d": 2, "K": 3, "c": 1.0, "n": 60, "seed": 1}}
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["mixture"]["K"] == 3
    assert len(body["samples"]) == 60
    assert len(body["labels"]) == 60


async def test_generate_without_samples(client: AsyncClient) -> None:
    resp = await client.post(
        "/api/v1/generate",
        json={"spec": {"d": 2, "K": 2, "c": 1.0}, "include_samples": False},
    )
    assert resp.status_code == 200
    assert resp.json()["samples"] == []


async def test_generate_rejects_invalid_spec(client: AsyncClient) -> None:
    resp = await client.post("/api/v1/generate", json={"spec": {"d": 2, "K": 2, "c": -1}})
    assert resp.status_code == 422


async def test_fit_and_score(client: AsyncClient) -> None:
    gen = await client.post(
        "/api/v1/generate", json={"spec": {"d": 2, "K": 2, "c": 5.0, "seed": 3}}
    )
    samples = gen.json()["samples"]

    fit = await client.post(
        "/api/v1/fit", json={"samples": samples, "method": "lbfgs", "k": 2, "seed": 3}
    )
    assert fit.status_code == 200
    body = fit.json()
    assert body["report"]["method"] == "lbfgs"
    assert body["report"]["reparametrized"] is True
    model = GmmModelFile.model_validate(body["model"])
    assert model.k == 2

    score = await client.post(
        "/api/v1/loglik", json={"samples": samples, "model": body["model"]}
    )
    assert score.status_code == 200
    result = score.json()
    assert result["n"] == len(samples)
    assert abs(result["average"] - body["report"]["final_all"]) < 1e-3


async def test_fit_rejects_too_many_components(client: AsyncClient) -> None:
    resp = await client.post(
        "/api/v1/fit", json={"samples": [[0.0, 1.0], [1.0, 0.0]], "method": "em", "k": 3}
    )
    assert resp.status_code == 400


async def test_fit_rejects_unknown_method(client: AsyncClient) -> None:
    resp = await client.post(
        "/api/v1/fit", json={"samples": [[0.0], [1.0]], "method": "newton", "k": 1}
    )
    assert resp.status_code == 422


async def test_loglik_rejects_asymmetric_covariance(client: AsyncClient) -> None:
    model = {
        "K": 1,
        "d": 2,
        "weights": [1.0],
        "means": [[0.0, 0.0]],
        "covariances": [[[1.0, 0.5], [0.0, 1.0]]],
    }
    resp = await client.post("/api/v1/loglik", json={"samples": [[0.0, 0.0]], "model": model})
    assert resp.status_code == 400
    assert "symmetric" in resp.json()["detail"]
