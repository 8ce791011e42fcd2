from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from geogmm.datagen import generate
from geogmm.em_baseline import kmeanspp_init
from geogmm.errors import InvalidArgumentError, LineSearchError
from geogmm.fitting import reparam_problem
from geogmm.gmm_objective import (
    AUGMENTED_OFFSET,
    Dataset,
    GmmParams,
    original_loglik,
    params_to_point,
    point_to_params,
    reparam_loglik,
)
from geogmm.riemannian_optim import (
    IterationInfo,
    LbfgsHistory,
    cg_fit,
    cubic_interpolate,
    hess_mul,
    initial_step,
    lbfgs_fit,
    wolfe_linesearch,
)
from geogmm.schemas import GenSpec, OptimConfig, Termination
from geogmm.spd_manifold import ProductManifold, ProductPoint, ProductTangent, SpdPoint
from tests.conftest import random_tangent

# ---------------------------------------------------------------------------
# Step-length helpers
# ---------------------------------------------------------------------------


def test_cubic_interpolate_exact_on_quadratic() -> None:
    # φ(α) = (α − 1)² sampled at 0 and 3
    assert cubic_interpolate(0.0, 1.0, -2.0, 3.0, 4.0, 4.0) == pytest.approx(1.0)


def test_cubic_interpolate_respects_margin() -> None:
    # φ(α) = (α − 0.05)² has its minimizer too close to the left end
    alpha = cubic_interpolate(0.0, 0.0025, -0.1, 1.0, 0.9025, 1.9, margin=0.1)
    assert alpha == pytest.approx(0.1)


def test_cubic_interpolate_rejects_empty_interval() -> None:
    with pytest.raises(InvalidArgumentError):
        cubic_interpolate(1.0, 0.0, -1.0, 1.0, 0.0, 1.0)


def test_initial_step_rule() -> None:
    assert initial_step(1.0, 2.0, -1.0) == pytest.approx(2.0)
    assert initial_step(1.0, None, -4.0) == pytest.approx(0.5)
    # an increase in f falls back to 1/√(−φ′(0))
    assert initial_step(2.0, 1.0, -1.0) == pytest.approx(1.0)
    assert initial_step(1.0, None, -1e-30) == 1e10


def test_initial_step_needs_descent() -> None:
    with pytest.raises(InvalidArgumentError):
        initial_step(1.0, None, 0.5)


# ---------------------------------------------------------------------------
# Wolfe line-search on scalar functions
# ---------------------------------------------------------------------------


def _quadratic():
    return (lambda a: (a - 1.0) ** 2, lambda a: 2.0 * (a - 1.0))


def _assert_strong_wolfe(phi, dphi, alpha: float, cfg: OptimConfig) -> None:
    assert phi(alpha) <= phi(0.0) + cfg.c1 * alpha * dphi(0.0)
    assert abs(dphi(alpha)) <= cfg.c2 * abs(dphi(0.0))


@pytest.mark.parametrize("alpha1", [1e-3, 0.5, 1.0, 10.0])
def test_linesearch_finds_strong_wolfe_step(alpha1: float) -> None:
    phi, dphi = _quadratic()
    cfg = OptimConfig()
    result = wolfe_linesearch(phi, dphi, alpha1, cfg)
    _assert_strong_wolfe(phi, dphi, result.alpha, cfg)
    assert result.phi == phi(result.alpha)
    assert result.evaluations >= 1


def test_linesearch_exact_first_guess_uses_one_evaluation() -> None:
    phi, dphi = _quadratic()
    result = wolfe_linesearch(phi, dphi, 1.0, OptimConfig())
    assert result.alpha == 1.0
    assert result.evaluations == 1


def test_linesearch_rejects_ascent_direction() -> None:
    with pytest.raises(InvalidArgumentError):
        wolfe_linesearch(lambda a: a, lambda a: 1.0, 1.0, OptimConfig())


def test_linesearch_unbounded_function_fails_with_diagnostics() -> None:
    cfg = OptimConfig(ls_max_iters=5)
    with pytest.raises(LineSearchError) as info:
        wolfe_linesearch(lambda a: -a, lambda a: -1.0, 1.0, cfg)
    assert info.value.diagnostics["phase"] == "bracket"
    assert info.value.diagnostics["evaluations"] == 5


def test_linesearch_backs_off_from_infinite_values() -> None:
    def phi(a: float) -> float:
        return math.inf if a > 2.0 else (a - 1.0) ** 2

    result = wolfe_linesearch(phi, lambda a: 2.0 * (a - 1.0), 50.0, OptimConfig())
    assert result.alpha <= 2.0
    assert abs(result.dphi) <= 0.9 * 2.0


def test_linesearch_collapsed_bracket_fails_cleanly() -> None:
    # φ is flat beyond α = 1, so every zoom trial ties the left end of the bracket
    def phi(a: float) -> float:
        return -min(a, 1.0)

    with pytest.raises(LineSearchError, match="collapsed") as info:
        wolfe_linesearch(phi, lambda a: -1.0, 1.0, OptimConfig(ls_max_iters=2000))
    lo, hi = info.value.diagnostics["bracket"]
    assert info.value.diagnostics["phase"] == "zoom"
    assert lo == 1.0
    assert abs(hi - lo) <= 1e-14


# ---------------------------------------------------------------------------
# L-BFGS memory
# ---------------------------------------------------------------------------


def _identity_point(k: int, d: int) -> ProductPoint:
    return ProductPoint(
        blocks=tuple(SpdPoint(np.eye(d)) for _ in range(k)), logits=np.zeros(k - 1)
    )


def _tangent(rng: np.random.Generator, k: int, d: int) -> ProductTangent:
    return ProductTangent(
        blocks=tuple(random_tangent(rng, d) for _ in range(k)),
        logits=rng.standard_normal(k - 1),
        vectors=np.zeros((k, 0)),
    )


def test_hess_mul_without_history_scales(rng: np.random.Generator) -> None:
    m = ProductManifold()
    point = _identity_point(2, 2)
    vec = _tangent(rng, 2, 2)
    history = LbfgsHistory(memory=5, h_diag=0.25)
    out = hess_mul(m, point, vec, history)
    np.testing.assert_allclose(out.blocks[0].mat, 0.25 * vec.blocks[0].mat)
    np.testing.assert_allclose(out.logits, 0.25 * vec.logits)


def test_hess_mul_satisfies_secant_condition(rng: np.random.Generator) -> None:
    m = ProductManifold()
    point = _identity_point(2, 3)
    history = LbfgsHistory(memory=3)
    for _ in range(4):
        s = _tangent(rng, 2, 3)
        y = s * 2.0 + _tangent(rng, 2, 3) * 0.1
        sy = m.metric(point, s, y)
        history.push(s, y, sy, m.metric(point, s, s))
        history.h_diag = sy / m.metric(point, y, y)
    assert len(history) == 3
    out = hess_mul(m, point, y, history)
    assert m.norm(point, out - s) <= 1e-10 * m.norm(point, s)


def _flat(t: ProductTangent) -> np.ndarray:
    return np.concatenate([b.mat.ravel() for b in t.blocks] + [t.logits])


def test_hess_mul_matches_euclidean_two_loop(rng: np.random.Generator) -> None:
    # at identity blocks the metric is the Frobenius/dot product of the flattened parts
    m = ProductManifold()
    point = _identity_point(2, 2)
    history = LbfgsHistory(memory=5, h_diag=0.7)
    pairs = []
    for _ in range(2):
        s = _tangent(rng, 2, 2)
        y = s * 1.5 + _tangent(rng, 2, 2) * 0.05
        history.push(s, y, m.metric(point, s, y), m.metric(point, s, s))
        pairs.append((_flat(s), _flat(y)))
    vec = _tangent(rng, 2, 2)

    q = _flat(vec)
    coeffs = []
    for s, y in reversed(pairs):
        a = s @ q / (s @ y)
        q = q - a * y
        coeffs.append(a)
    r = 0.7 * q
    for (s, y), a in zip(pairs, reversed(coeffs)):
        r = r + s * (a - y @ r / (s @ y))

    np.testing.assert_allclose(_flat(hess_mul(m, point, vec, history)), r, atol=1e-12)


def test_hess_mul_depth_zero_ignores_pairs(rng: np.random.Generator) -> None:
    m = ProductManifold()
    point = _identity_point(1, 2)
    history = LbfgsHistory(memory=2, h_diag=2.0)
    s = _tangent(rng, 1, 2)
    history.push(s, s, m.metric(point, s, s), m.metric(point, s, s))
    vec = _tangent(rng, 1, 2)
    out = hess_mul(m, point, vec, history, depth=0)
    np.testing.assert_allclose(out.blocks[0].mat, 2.0 * vec.blocks[0].mat)


def test_history_rejects_negative_curvature(rng: np.random.Generator) -> None:
    s = _tangent(rng, 1, 2)
    with pytest.raises(InvalidArgumentError):
        LbfgsHistory(memory=2).push(s, -s, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Full fits
# ---------------------------------------------------------------------------


def _mle(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    mu = data.samples.mean(axis=0)
    diff = data.samples - mu
    return mu, diff.T @ diff / data.n


@pytest.mark.parametrize(
    "d,seed",
    [(2, 0), (2, 1), (2, 2), (5, 3), (5, 4), (5, 5), (10, 6), (10, 7), (10, 8), (10, 9)],
)
def test_lbfgs_single_gaussian_recovers_mle(d: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d))
    x = rng.standard_normal((d * d * 100, d)) @ (a + d * np.eye(d)).T + rng.normal(size=d)
    data = Dataset(samples=x)
    start = ProductPoint(blocks=(SpdPoint(np.eye(d + 1)),), logits=np.zeros(0))
    cfg = OptimConfig(tol_avg_ll=1e-13, max_iters=1500)

    report = lbfgs_fit(reparam_problem(data), start, cfg)

    assert report.termination in (Termination.TOLERANCE, Termination.LINE_SEARCH_FAILURE)
    params, scales = point_to_params(report.final_point)
    mu, sigma = _mle(data)
    assert scales[0] == pytest.approx(1.0, abs=1e-4)
    assert np.linalg.norm(params.means[0] - mu) <= 1e-4 * (1 + np.linalg.norm(mu))
    assert np.linalg.norm(params.covs[0].mat - sigma) <= 1e-4 * np.linalg.norm(sigma)


def test_cg_single_gaussian_recovers_mle(gaussian_data: Dataset) -> None:
    start = ProductPoint(blocks=(SpdPoint(np.eye(4)),), logits=np.zeros(0))
    report = cg_fit(
        reparam_problem(gaussian_data), start, OptimConfig(tol_avg_ll=1e-13, max_iters=1500)
    )
    params, scales = point_to_params(report.final_point)
    mu, sigma = _mle(gaussian_data)
    assert scales[0] == pytest.approx(1.0, abs=1e-4)
    np.testing.assert_allclose(params.means[0], mu, atol=1e-3)
    np.testing.assert_allclose(params.covs[0].mat, sigma, atol=1e-3)


def test_stationary_start_stops_immediately(gaussian_data: Dataset) -> None:
    mu, sigma = _mle(gaussian_data)
    mle = GmmParams(weights=[1.0], means=mu[None, :], covs=(SpdPoint(sigma),))
    report = lbfgs_fit(
        reparam_problem(gaussian_data), params_to_point(mle), OptimConfig(tol_grad_norm=1e-8)
    )
    assert report.termination is Termination.TOLERANCE
    assert report.iterations == 0
    assert len(report.avg_ll_trace) == 1


@pytest.fixture
def mixture_fit_inputs() -> tuple[Dataset, ProductPoint]:
    _, data = generate(GenSpec(d=5, k=2, c=1.0, e=1.0, seed=11))
    init = kmeanspp_init(data, 2, np.random.default_rng(4))
    return data, params_to_point(init)


@pytest.mark.parametrize("optimizer", [lbfgs_fit, cg_fit])
def test_accepted_steps_pass_wolfe_audit(optimizer, mixture_fit_inputs) -> None:
    data, start = mixture_fit_inputs
    problem = reparam_problem(data)
    m = problem.manifold
    cfg = OptimConfig()
    steps: list[IterationInfo] = []

    report = optimizer(problem, start, cfg, steps.append)

    assert report.termination is Termination.TOLERANCE
    assert len(steps) == report.iterations > 0
    for info in steps:
        assert info.dphi0 < 0
        f_new, g_new = problem.cost_grad(info.new_point)
        moved = m.transport(info.point, info.new_point, info.direction)
        dphi = m.metric(info.new_point, g_new, moved)
        assert f_new == pytest.approx(info.phi_alpha, rel=1e-12, abs=1e-12)
        assert f_new <= info.phi0 + cfg.c1 * info.alpha * info.dphi0
        assert abs(dphi) <= cfg.c2 * abs(info.dphi0) * (1 + 1e-9)


def test_lbfgs_trace_is_monotone(mixture_fit_inputs) -> None:
    data, start = mixture_fit_inputs
    report = lbfgs_fit(reparam_problem(data), start)
    trace = np.array(report.avg_ll_trace)
    assert np.all(np.diff(trace) >= 0)
    assert report.final_all == trace[-1]
    assert len(trace) == report.iterations + 1


def test_max_iters_termination(mixture_fit_inputs) -> None:
    data, start = mixture_fit_inputs
    report = cg_fit(reparam_problem(data), start, OptimConfig(max_iters=2))
    assert report.termination is Termination.MAX_ITERS
    assert report.iterations == 2


def test_skipped_curvature_pairs_are_logged_as_warnings(mixture_fit_inputs, caplog) -> None:
    data, start = mixture_fit_inputs
    # cos(s, y) never exceeds 1, so every pair is rejected
    cfg = OptimConfig(max_iters=3, curvature_eps=2.0)
    with caplog.at_level(logging.WARNING, logger="geogmm.riemannian_optim"):
        report = lbfgs_fit(reparam_problem(data), start, cfg)
    skipped = [r for r in caplog.records if "Skipping curvature pair" in r.getMessage()]
    assert len(skipped) == report.iterations > 0
    assert all(r.levelno == logging.WARNING for r in skipped)


def test_stationary_mixture_has_unit_scales(two_cluster) -> None:
    _, data = two_cluster
    init = kmeanspp_init(data, 2, np.random.default_rng(3))
    problem = reparam_problem(data)
    report = lbfgs_fit(
        problem, params_to_point(init), OptimConfig(tol_avg_ll=1e-13, max_iters=1500)
    )

    assert report.termination in (Termination.TOLERANCE, Termination.LINE_SEARCH_FAILURE)
    params, scales = point_to_params(report.final_point)
    np.testing.assert_allclose(scales, 1.0, atol=1e-4)
    augmented = reparam_loglik(data.augmented, report.final_point) / data.n
    original = original_loglik(data, params) / data.n
    assert augmented - AUGMENTED_OFFSET == pytest.approx(original, abs=1e-6)
    assert report.final_all == pytest.approx(original, abs=1e-6)


@pytest.mark.parametrize("optimizer", [lbfgs_fit, cg_fit])
def test_repeated_fits_are_bitwise_identical(optimizer, mixture_fit_inputs) -> None:
    data, start = mixture_fit_inputs
    first = optimizer(reparam_problem(data), start)
    second = optimizer(reparam_problem(data), start)
    assert first.avg_ll_trace == second.avg_ll_trace
    for a, b in zip(first.final_point.blocks, second.final_point.blocks):
        np.testing.assert_array_equal(a.mat, b.mat)
    np.testing.assert_array_equal(first.final_point.logits, second.final_point.logits)
