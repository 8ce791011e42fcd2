"""Expectation-maximization baseline with k-means++ initialization."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from geogmm.errors import DegenerateComponentError, InvalidArgumentError
from geogmm.gmm_objective import Dataset, GmmParams, log_gauss_columns, responsibilities
from geogmm.riemannian_optim import FitReport
from geogmm.schemas import EmConfig, Termination
from geogmm.spd_manifold import SpdPoint, checked_spd, symmetrize

logger = logging.getLogger(__name__)

DEGENERATE_MASS = 1e-10


@dataclass(frozen=True)
class EmIterationInfo:
    iteration: int
    params: GmmParams
    avg_ll: float


def variance_scale(data: Dataset) -> float:
    """tr(cov(X))/d, the unit the relative covariance floor is measured in."""
    return float(np.var(data.samples, axis=0).mean())


def cov_floor_abs(data: Dataset, cfg: EmConfig) -> float:
    return cfg.cov_floor * variance_scale(data)


def _data_cov(samples: np.ndarray) -> np.ndarray:
    diff = samples - samples.mean(axis=0)
    return symmetrize(diff.T @ diff / samples.shape[0])


def kmeanspp_seed(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of k distinct seeds drawn with D² weighting."""
    n = samples.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k-means++ needs 1 <= K <= n, got K={k}, n={n}")
    chosen = [int(rng.integers(n))]
    d2 = cdist(samples, samples[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        d2[chosen] = 0.0
        total = d2.sum()
        if total > 0:
            probs = d2 / total
        else:
            # duplicates of chosen centers only
            probs = np.ones(n)
            probs[chosen] = 0.0
            probs /= probs.sum()
        nxt = int(rng.choice(n, p=probs))
        chosen.append(nxt)
        d2 = np.minimum(d2, cdist(samples, samples[[nxt]], "sqeuclidean")[:, 0])
    return np.array(chosen)


def kmeanspp_init(
    data: Dataset,
    k: int,
    rng: np.random.Generator,
    cov_floor: float = 0.0,
    lloyd_iters: int = 10,
) -> GmmParams:
    """k-means++ seeds refined by a few Lloyd steps, turned into mixture parameters.

    Weights are uniform. Each covariance is the scatter of the points assigned
    to its center, or the global data covariance when a cluster is too small to
    give an SPD estimate, plus `cov_floor`·I.
    """
    samples = data.samples
    centers = samples[kmeanspp_seed(samples, k, rng)].copy()
    labels = np.argmin(cdist(samples, centers, "sqeuclidean"), axis=1)
    for _ in range(lloyd_iters):
        for j in range(k):
            members = samples[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        new_labels = np.argmin(cdist(samples, centers, "sqeuclidean"), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    floor = cov_floor * np.eye(data.d)
    global_cov = _data_cov(samples)
    covs = []
    for j in range(k):
        members = samples[labels == j]
        cov = None
        if len(members) > data.d:
            try:
                cov = SpdPoint(_data_cov(members) + floor)
            except InvalidArgumentError:
                cov = None
        if cov is None:
            cov = checked_spd(global_cov + floor, "global covariance")
        covs.append(cov)
    return GmmParams(weights=np.full(k, 1.0 / k), means=centers, covs=tuple(covs))


def e_step(samples: np.ndarray, params: GmmParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample log-likelihoods and the n×K responsibility matrix."""
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    return responsibilities(log_gauss_columns(samples, params.means, params.covs) + log_w)


def m_step(samples: np.ndarray, w: np.ndarray, cov_floor: float = 0.0) -> GmmParams:
    n, d = samples.shape
    mass = w.sum(axis=0)
    for j, m in enumerate(mass):
        if m < DEGENERATE_MASS * n:
            raise DegenerateComponentError(j, float(m))
    means = (w.T @ samples) / mass[:, None]
    covs = []
    for j in range(w.shape[1]):
        diff = samples - means[j]
        scatter = diff.T @ (diff * w[:, j : j + 1]) / mass[j]
        covs.append(checked_spd(symmetrize(scatter) + cov_floor * np.eye(d), "M-step"))
    return GmmParams(weights=mass / mass.sum(), means=means, covs=tuple(covs))


def em_fit(
    data: Dataset,
    init: GmmParams,
    cfg: EmConfig | None = None,
    callback: Callable[[EmIterationInfo], None] | None = None,
) -> FitReport:
    """Run EM from `init` until the average log-likelihood change drops below tolerance."""
    cfg = cfg or EmConfig()
    if init.d != data.d:
        raise InvalidArgumentError("Initial mixture dimension does not match the data")
    floor = cov_floor_abs(data, cfg)
    start = time.perf_counter()
    params = init
    lse, w = e_step(data.samples, params)
    trace = [float(lse.mean())]
    termination = Termination.MAX_ITERS
    iterations = 0
    for it in range(cfg.max_iters):
        params = m_step(data.samples, w, floor)
        lse, w = e_step(data.samples, params)
        trace.append(float(lse.mean()))
        iterations = it + 1
        logger.debug("em iter %d: ALL=%.10f", it, trace[-1])
        if callback is not None:
            callback(EmIterationInfo(iteration=it, params=params, avg_ll=trace[-1]))
        if abs(trace[-1] - trace[-2]) < cfg.tol_avg_ll:
            termination = Termination.TOLERANCE
            break
    return FitReport(
        final_point=params,
        avg_ll_trace=tuple(trace),
        iterations=iterations,
        wall_time_s=time.perf_counter() - start,
        termination=termination,
        evaluations=iterations + 1,
    )
