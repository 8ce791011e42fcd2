"""Glue between datasets, initialization and the fitting methods."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

import geogmm
from geogmm.datagen import (
    INIT_STREAM,
    make_rng,
    standardization_log_jacobian,
    standardize,
    unstandardize_params,
)
from geogmm.em_baseline import cov_floor_abs, em_fit, kmeanspp_init
from geogmm.errors import GeogmmError, InvalidArgumentError
from geogmm.gmm_objective import (
    AUGMENTED_OFFSET,
    Dataset,
    GmmParams,
    original_value_and_egrad,
    params_to_point,
    params_to_usual_point,
    point_to_params,
    reparam_value_and_egrad,
    usual_point_to_params,
)
from geogmm.riemannian_optim import IterationCallback, Problem, cg_fit, lbfgs_fit
from geogmm.schemas import METHODS, EmConfig, FitReportFile, Method, OptimConfig, Termination
from geogmm.spd_manifold import ProductManifold, ProductPoint, ProductTangent

logger = logging.getLogger(__name__)

# manifold optimizers run on (Σ, μ, η) without the augmented embedding
USUAL_METHODS = ("cg-usual", "lbfgs-usual")


def reparam_problem(data: Dataset) -> Problem:
    """−(augmented log-likelihood)/n over (S₁..S_K, η), on the original ALL scale.

    The cost is shifted by AUGMENTED_OFFSET so traces compare directly with EM.
    """
    manifold = ProductManifold()
    aug = data.augmented
    n = data.n

    def cost_grad(point: ProductPoint) -> tuple[float, ProductTangent]:
        value, block_grads, eta_grad = reparam_value_and_egrad(aug, point)
        rgrad = manifold.egrad_to_rgrad(
            point, [-g / n for g in block_grads], -eta_grad / n
        )
        return AUGMENTED_OFFSET - value / n, rgrad

    return Problem(manifold=manifold, cost_grad=cost_grad)


def usual_problem(data: Dataset) -> Problem:
    """−(log-likelihood)/n over (Σ₁..Σ_K, η, μ₁..μ_K) with flat means."""
    manifold = ProductManifold()
    samples = data.samples
    n = data.n

    def cost_grad(point: ProductPoint) -> tuple[float, ProductTangent]:
        value, cov_grads, eta_grad, mean_grads = original_value_and_egrad(samples, point)
        rgrad = manifold.egrad_to_rgrad(
            point, [-g / n for g in cov_grads], -eta_grad / n, -mean_grads / n
        )
        return -value / n, rgrad

    return Problem(manifold=manifold, cost_grad=cost_grad)


def initialize(data: Dataset, k: int, seed: int, em: EmConfig) -> tuple[GmmParams, float]:
    """k-means++ initialization shared by every method; returns it with its wall time."""
    start = time.perf_counter()
    params = kmeanspp_init(
        data, k, make_rng(seed, INIT_STREAM), cov_floor_abs(data, em), em.kmeans_iters
    )
    return params, time.perf_counter() - start


def params_digest(params: GmmParams) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(params.weights).tobytes())
    h.update(np.ascontiguousarray(params.means).tobytes())
    for cov in params.covs:
        h.update(np.ascontiguousarray(cov.mat).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class FitOutcome:
    method: Method
    params: GmmParams | None
    avg_ll_trace: tuple[float, ...]
    iterations: int
    termination: Termination
    fit_time_s: float
    block_scales: np.ndarray | None = None
    error: str | None = None

    @property
    def final_all(self) -> float | None:
        if self.termination is Termination.FAILURE or not self.avg_ll_trace:
            return None
        return self.avg_ll_trace[-1]


def fit_method(
    data: Dataset,
    method: Method,
    init: GmmParams,
    optim: OptimConfig | None = None,
    em: EmConfig | None = None,
    callback: IterationCallback | None = None,
) -> FitOutcome:
    """Fit `data` from `init` with one method.

    Any library error raised while fitting (collapsed component, numerical
    breakdown, unusable initialization) ends the fit with Termination.FAILURE
    instead of propagating. Line-search failures are not errors here; the
    optimizers record them as their own termination.
    """
    if method not in METHODS:
        raise InvalidArgumentError(f"Unknown method {method!r}")
    optim = optim or OptimConfig()
    em = em or EmConfig()
    start = time.perf_counter()
    try:
        if method == "em":
            report = em_fit(data, init, em, callback)
            params, scales = report.final_point, None
        elif method in USUAL_METHODS:
            optimizer = lbfgs_fit if method == "lbfgs-usual" else cg_fit
            report = optimizer(
                usual_problem(data), params_to_usual_point(init), optim, callback
            )
            params, scales = usual_point_to_params(report.final_point), None
        else:
            optimizer = lbfgs_fit if method == "lbfgs" else cg_fit
            report = optimizer(reparam_problem(data), params_to_point(init), optim, callback)
            params, scales = point_to_params(report.final_point)
    except GeogmmError as exc:
        logger.warning("%s fit failed: %s", method, exc)
        return FitOutcome(
            method=method,
            params=None,
            avg_ll_trace=(),
            iterations=0,
            termination=Termination.FAILURE,
            fit_time_s=time.perf_counter() - start,
            error=str(exc),
        )
    outcome = FitOutcome(
        method=method,
        params=params,
        avg_ll_trace=report.avg_ll_trace,
        iterations=report.iterations,
        termination=report.termination,
        fit_time_s=time.perf_counter() - start,
        block_scales=scales,
    )
    logger.info(
        "%s fit K=%d: %d iterations, %s, ALL=%s, %.3fs",
        method, init.k, outcome.iterations, outcome.termination.value,
        outcome.final_all, outcome.fit_time_s,
    )
    return outcome


def report_digest(report: FitReportFile) -> str:
    """SHA-256 over every report field except timings and the digest itself."""
    payload = report.model_dump_json(
        exclude={"init_time_s", "fit_time_s", "result_digest"}
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def run_fit(
    data: Dataset,
    method: Method,
    k: int,
    seed: int = 0,
    optim: OptimConfig | None = None,
    em: EmConfig | None = None,
    standardize_data: bool = False,
) -> tuple[FitOutcome, FitReportFile]:
    """Initialize, fit and build the report written by `fit` and served by POST /fit."""
    optim = optim or OptimConfig()
    em = em or EmConfig()
    scaling = None
    if standardize_data:
        data, scaling = standardize(data)
    init, init_time = initialize(data, k, seed, em)
    outcome = fit_method(data, method, init, optim, em)
    if scaling is not None:
        # model and ALL are reported in the units of the input data
        log_jac = standardization_log_jacobian(scaling)
        outcome = replace(
            outcome,
            params=None
            if outcome.params is None
            else unstandardize_params(outcome.params, scaling),
            avg_ll_trace=tuple(v + log_jac for v in outcome.avg_ll_trace),
        )
    report = FitReportFile(
        method=method,
        reparametrized=method in ("lbfgs", "cg"),
        k=k,
        n=data.n,
        d=data.d,
        seed=seed,
        optim=optim,
        em=em,
        all_trace=list(outcome.avg_ll_trace),
        iterations=outcome.iterations,
        termination=outcome.termination,
        final_all=outcome.final_all,
        init_time_s=init_time,
        fit_time_s=outcome.fit_time_s,
        init_hash=params_digest(init),
        cov_floor_abs=cov_floor_abs(data, em),
        block_scales=None if outcome.block_scales is None else outcome.block_scales.tolist(),
        standardization=scaling,
        error=outcome.error,
        library_version=geogmm.__version__,
        result_digest="",
    )
    return outcome, report.model_copy(update={"result_digest": report_digest(report)})
