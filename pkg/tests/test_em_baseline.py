from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from geogmm.datagen import generate
from geogmm.em_baseline import (
    EmIterationInfo,
    e_step,
    em_fit,
    kmeanspp_init,
    kmeanspp_seed,
    m_step,
    variance_scale,
)
from geogmm.errors import DegenerateComponentError, InvalidArgumentError
from geogmm.gmm_objective import (
    Dataset,
    GmmParams,
    log_alpha,
    log_q_columns,
    params_to_point,
    responsibilities,
)
from geogmm.schemas import EmConfig, GenSpec, Termination
from geogmm.spd_manifold import SpdPoint


def _mle(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    mu = data.samples.mean(axis=0)
    diff = data.samples - mu
    return mu, diff.T @ diff / data.n


# ---------------------------------------------------------------------------
# k-means++
# ---------------------------------------------------------------------------


def test_kmeanspp_rejects_too_many_components(rng: np.random.Generator) -> None:
    data = Dataset(samples=rng.standard_normal((3, 2)))
    with pytest.raises(InvalidArgumentError):
        kmeanspp_init(data, 4, rng)


def test_kmeanspp_selects_every_point_when_k_equals_n(rng: np.random.Generator) -> None:
    samples = rng.standard_normal((12, 2))
    idx = kmeanspp_seed(samples, 12, rng)
    assert sorted(idx.tolist()) == list(range(12))


def test_kmeanspp_seeds_land_in_distinct_clusters() -> None:
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    data_rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(3), 50)
    samples = centers[labels] + data_rng.standard_normal((150, 2))
    hits = 0
    for seed in range(100):
        idx = kmeanspp_seed(samples, 3, np.random.default_rng(seed))
        hits += len(set(labels[idx])) == 3
    assert hits >= 95


def test_kmeanspp_single_component_uses_global_covariance(gaussian_data: Dataset) -> None:
    init = kmeanspp_init(gaussian_data, 1, np.random.default_rng(0), cov_floor=0.5)
    mu, sigma = _mle(gaussian_data)
    np.testing.assert_allclose(init.weights, [1.0])
    np.testing.assert_allclose(init.means[0], mu, atol=1e-12)
    np.testing.assert_allclose(init.covs[0].mat, sigma + 0.5 * np.eye(3), atol=1e-12)


def test_kmeanspp_uniform_weights(two_cluster) -> None:
    _, data = two_cluster
    init = kmeanspp_init(data, 2, np.random.default_rng(1))
    np.testing.assert_allclose(init.weights, [0.5, 0.5])


# ---------------------------------------------------------------------------
# E and M steps
# ---------------------------------------------------------------------------


def test_e_step_matches_augmented_responsibilities(two_cluster) -> None:
    params, data = two_cluster
    _, w_em = e_step(data.samples, params)
    point = params_to_point(params)
    _, w_aug = responsibilities(
        log_q_columns(data.augmented, point.blocks) + log_alpha(point.logits)
    )
    np.testing.assert_allclose(w_em, w_aug, atol=1e-10)
    np.testing.assert_allclose(w_em.sum(axis=1), 1.0, atol=1e-12)


def test_m_step_reports_collapsed_component(rng: np.random.Generator) -> None:
    samples = rng.standard_normal((20, 2))
    w = np.zeros((20, 2))
    w[:, 0] = 1.0
    with pytest.raises(DegenerateComponentError) as info:
        m_step(samples, w)
    assert info.value.component == 1


def test_m_step_adds_floor(rng: np.random.Generator) -> None:
    samples = rng.standard_normal((30, 2))
    w = np.ones((30, 1))
    plain = m_step(samples, w)
    floored = m_step(samples, w, cov_floor=0.25)
    np.testing.assert_allclose(floored.covs[0].mat - plain.covs[0].mat, 0.25 * np.eye(2))


def test_variance_scale_of_isotropic_data() -> None:
    data = Dataset(samples=[[1.0, 1.0], [-1.0, -1.0]])
    assert variance_scale(data) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# em_fit
# ---------------------------------------------------------------------------


def test_single_component_reaches_mle_in_one_step(gaussian_data: Dataset) -> None:
    init = GmmParams(weights=[1.0], means=np.zeros((1, 3)), covs=(SpdPoint(np.eye(3)),))
    seen: list[EmIterationInfo] = []
    report = em_fit(gaussian_data, init, EmConfig(cov_floor=0.0), seen.append)
    mu, sigma = _mle(gaussian_data)
    first = seen[0].params
    np.testing.assert_allclose(first.means[0], mu, atol=1e-12)
    np.testing.assert_allclose(first.covs[0].mat, sigma, atol=1e-12)
    assert report.termination is Termination.TOLERANCE
    assert report.iterations == 2


def test_start_at_mle_terminates_on_first_comparison(gaussian_data: Dataset) -> None:
    mu, sigma = _mle(gaussian_data)
    init = GmmParams(weights=[1.0], means=mu[None, :], covs=(SpdPoint(sigma),))
    report = em_fit(gaussian_data, init, EmConfig(cov_floor=0.0))
    assert report.termination is Termination.TOLERANCE
    assert report.iterations == 1


@pytest.mark.parametrize("seed", range(20))
def test_trace_is_monotone(seed: int) -> None:
    _, data = generate(GenSpec(d=2, k=3, c=1.0, e=5.0, n=300, seed=seed))
    init = kmeanspp_init(data, 3, np.random.default_rng(seed))
    report = em_fit(data, init, EmConfig(cov_floor=0.0, max_iters=300))
    assert np.all(np.diff(report.avg_ll_trace) >= -1e-10)


def test_recovers_separated_means() -> None:
    truth, data = generate(GenSpec(d=2, k=2, c=5.0, n=4000, seed=21))
    init = kmeanspp_init(data, 2, np.random.default_rng(21))
    fitted = em_fit(data, init).final_point
    cost = np.linalg.norm(truth.means[:, None, :] - fitted.means[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    assert np.all(cost[rows, cols] <= 0.1 * np.sqrt(2.0))


def test_dimension_mismatch(gaussian_data: Dataset) -> None:
    init = GmmParams(weights=[1.0], means=np.zeros((1, 2)), covs=(SpdPoint(np.eye(2)),))
    with pytest.raises(InvalidArgumentError):
        em_fit(gaussian_data, init)
