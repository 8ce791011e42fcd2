"""GMM log-likelihood in the original and in the augmented parametrization.

The augmented form embeds (μ, Σ) into one (d+1)×(d+1) SPD matrix
S = [[Σ + μμᵀ, μ], [μᵀ, 1]] and scores samples y = [x; 1] with the
zero-mean density q(y; S) = 2π·e^{1/2}·N(y; 0, S). At s = S[d, d] = 1 this
is √(2π)·N(x; μ, Σ), so the augmented log-likelihood sits AUGMENTED_OFFSET
per sample above the original one; the offset does not move any optimum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from geogmm.errors import InvalidArgumentError, NumericalBreakdownError
from geogmm.spd_manifold import ProductPoint, SpdPoint, checked_spd

LOG_2PI = float(np.log(2.0 * np.pi))
# log q(y; S) − log N(x; μ, Σ) when S embeds (μ, Σ) with s = 1
AUGMENTED_OFFSET = 0.5 * LOG_2PI
WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """An n×d sample matrix; `labels` holds generator ground truth when known."""

    samples: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] == 0 or samples.shape[1] == 0:
            raise InvalidArgumentError("Samples must be a non-empty n×d matrix")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("Samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=int).reshape(-1)
            if labels.shape[0] != samples.shape[0]:
                raise InvalidArgumentError("One label per sample is required")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @cached_property
    def augmented(self) -> np.ndarray:
        out = np.hstack([self.samples, np.ones((self.n, 1))])
        out.setflags(write=False)
        return out


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Mixture weights, means and covariances in the original parametrization."""

    weights: np.ndarray
    means: np.ndarray
    covs: tuple[SpdPoint, ...]

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=float).reshape(-1)
        means = np.array(self.means, dtype=float)
        covs = tuple(self.covs)
        k = weights.shape[0]
        if k == 0:
            raise InvalidArgumentError("A mixture needs at least one component")
        if means.ndim != 2 or means.shape[0] != k or len(covs) != k:
            raise InvalidArgumentError("Weights, means and covariances disagree on K")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidArgumentError("Weights must be nonnegative and sum to one")
        if not np.all(np.isfinite(means)):
            raise InvalidArgumentError("Means must be finite")
        if any(c.dim != means.shape[1] for c in covs):
            raise InvalidArgumentError("Covariance dimension does not match the means")
        weights.setflags(write=False)
        means.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def augment(data: Dataset) -> np.ndarray:
    """Append a trailing column of ones: yᵢ = [xᵢ; 1]."""
    return data.augmented


def eta_to_alpha(eta: np.ndarray) -> np.ndarray:
    """Softmax of [η, 0] computed with a max shift."""
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if not np.all(np.isfinite(eta)):
        raise InvalidArgumentError("Logits must be finite")
    full = np.append(eta, 0.0)
    full -= full.max()
    alpha = np.exp(full)
    return alpha / alpha.sum()


def log_alpha(eta: np.ndarray) -> np.ndarray:
    full = np.append(np.asarray(eta, dtype=float).reshape(-1), 0.0)
    return full - logsumexp(full)


def alpha_to_eta(alpha: np.ndarray) -> np.ndarray:
    """Logits ηⱼ = log(αⱼ/α_K); the simplex boundary is not representable."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise InvalidArgumentError("Weights must be strictly positive to map to logits")
    return np.log(alpha[:-1]) - np.log(alpha[-1])


def log_q_columns(aug: np.ndarray, blocks: Sequence[SpdPoint]) -> np.ndarray:
    """n×K matrix of log q(yᵢ; Sⱼ)."""
    n, p = aug.shape
    out = np.empty((n, len(blocks)))
    const = LOG_2PI + 0.5 - 0.5 * p * LOG_2PI
    for j, block in enumerate(blocks):
        if block.dim != p:
            raise InvalidArgumentError(
                f"Block dimension {block.dim} does not match augmented data width {p}"
            )
        z = scipy.linalg.solve_triangular(block.chol, aug.T, lower=True)
        out[:, j] = const - 0.5 * block.logdet - 0.5 * np.einsum("ij,ij->j", z, z)
    return out


def log_gauss_columns(
    samples: np.ndarray, means: np.ndarray, covs: Sequence[SpdPoint]
) -> np.ndarray:
    """n×K matrix of log N(xᵢ; μⱼ, Σⱼ)."""
    n, d = samples.shape
    out = np.empty((n, len(covs)))
    for j, (mu, cov) in enumerate(zip(means, covs)):
        if cov.dim != d:
            raise InvalidArgumentError("Covariance dimension does not match the data")
        z = scipy.linalg.solve_triangular(cov.chol, (samples - mu).T, lower=True)
        out[:, j] = -0.5 * d * LOG_2PI - 0.5 * cov.logdet - 0.5 * np.einsum(
            "ij,ij->j", z, z
        )
    return out


def log_q_density(y: np.ndarray, block: SpdPoint) -> float:
    """log q(y; S) for a single augmented sample."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return float(log_q_columns(y, [block])[0, 0])


def responsibilities(log_joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample log normalizers and posterior weights from log(αⱼ p(xᵢ|j)).

    Raises NumericalBreakdownError naming the first sample whose normalizer is
    not finite.
    """
    lse = logsumexp(log_joint, axis=1)
    bad = np.flatnonzero(~np.isfinite(lse))
    if bad.size:
        raise NumericalBreakdownError(
            "Non-finite mixture likelihood", sample_index=int(bad[0])
        )
    return lse, np.exp(log_joint - lse[:, None])


def _check_reparam_point(aug: np.ndarray, point: ProductPoint) -> None:
    if point.vectors.shape[1] != 0:
        raise InvalidArgumentError("Augmented objective takes no Euclidean components")
    if point.block_dim != aug.shape[1]:
        raise InvalidArgumentError(
            f"Block dimension {point.block_dim} does not match data width {aug.shape[1]}"
        )


def reparam_value_and_egrad(
    aug: np.ndarray, point: ProductPoint
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Augmented log-likelihood with its Euclidean gradient in (S₁..S_K, η)."""
    _check_reparam_point(aug, point)
    n = aug.shape[0]
    log_w = log_alpha(point.logits)
    lse, w = responsibilities(log_q_columns(aug, point.blocks) + log_w)
    block_grads = []
    for j, block in enumerate(point.blocks):
        scatter = aug.T @ (aug * w[:, j : j + 1])
        inv = block.inv
        block_grads.append(0.5 * (inv @ scatter @ inv - w[:, j].sum() * inv))
    eta_grad = (w.sum(axis=0) - n * np.exp(log_w))[:-1]
    return float(lse.sum()), block_grads, eta_grad


def reparam_loglik(aug: np.ndarray, point: ProductPoint) -> float:
    """Σᵢ log Σⱼ αⱼ q(yᵢ; Sⱼ) with α = softmax([η, 0])."""
    _check_reparam_point(aug, point)
    lse, _ = responsibilities(log_q_columns(aug, point.blocks) + log_alpha(point.logits))
    return float(lse.sum())


def reparam_egrad(
    aug: np.ndarray, point: ProductPoint
) -> tuple[list[np.ndarray], np.ndarray]:
    _, block_grads, eta_grad = reparam_value_and_egrad(aug, point)
    return block_grads, eta_grad


def original_loglik(data: Dataset, params: GmmParams) -> float:
    """Standard GMM log-likelihood Σᵢ log Σⱼ αⱼ N(xᵢ; μⱼ, Σⱼ)."""
    if params.d != data.d:
        raise InvalidArgumentError("Model dimension does not match the data")
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    log_joint = log_gauss_columns(data.samples, params.means, params.covs) + log_w
    lse, _ = responsibilities(log_joint)
    return float(lse.sum())


def original_value_and_egrad(
    samples: np.ndarray, point: ProductPoint
) -> tuple[float, list[np.ndarray], np.ndarray, np.ndarray]:
    """Original log-likelihood over (μⱼ, Σⱼ, η) packed as a ProductPoint.

    The means live in `point.vectors`, the covariances in `point.blocks`.
    Returns the value and the Euclidean gradients for covariances, logits and
    means.
    """
    n, d = samples.shape
    if point.block_dim != d or point.vectors.shape[1] != d:
        raise InvalidArgumentError("Point does not match the data dimension")
    log_w = log_alpha(point.logits)
    lse, w = responsibilities(
        log_gauss_columns(samples, point.vectors, point.blocks) + log_w
    )
    cov_grads = []
    mean_grads = np.empty_like(point.vectors)
    for j, (mu, cov) in enumerate(zip(point.vectors, point.blocks)):
        diff = samples - mu
        wj = w[:, j]
        inv = cov.inv
        mean_grads[j] = inv @ (diff.T @ wj)
        scatter = diff.T @ (diff * wj[:, None])
        cov_grads.append(0.5 * (inv @ scatter @ inv - wj.sum() * inv))
    eta_grad = (w.sum(axis=0) - n * np.exp(log_w))[:-1]
    return float(lse.sum()), cov_grads, eta_grad, mean_grads


def s_to_musigma(block: SpdPoint) -> tuple[np.ndarray, SpdPoint, float]:
    """Schur-complement split of S into (μ, Σ, s).

    s = S[d, d], μ = S[:d, d] / s and Σ = S[:d, :d] − S[:d, d]S[d, :d] / s.
    """
    mat = block.mat
    d = block.dim - 1
    s = float(mat[d, d])
    t = mat[:d, d]
    mu = t / s
    sigma = checked_spd(mat[:d, :d] - np.outer(t, t) / s, "Schur complement")
    return mu, sigma, s


def musigma_to_s(mu: np.ndarray, sigma: SpdPoint) -> SpdPoint:
    """Embed (μ, Σ) as [[Σ + μμᵀ, μ], [μᵀ, 1]]."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    d = sigma.dim
    if mu.shape != (d,):
        raise InvalidArgumentError("Mean and covariance dimensions differ")
    mat = np.empty((d + 1, d + 1))
    mat[:d, :d] = sigma.mat + np.outer(mu, mu)
    mat[:d, d] = mu
    mat[d, :d] = mu
    mat[d, d] = 1.0
    return SpdPoint(mat)


def params_to_point(params: GmmParams) -> ProductPoint:
    """Lift original parameters into the augmented product manifold."""
    return ProductPoint(
        blocks=tuple(musigma_to_s(mu, cov) for mu, cov in zip(params.means, params.covs)),
        logits=alpha_to_eta(params.weights),
    )


def point_to_params(point: ProductPoint) -> tuple[GmmParams, np.ndarray]:
    """Recover original parameters from an augmented iterate.

    Also returns the scale sⱼ of every block, which equals one at a stationary
    point of the augmented likelihood.
    """
    split = [s_to_musigma(block) for block in point.blocks]
    params = GmmParams(
        weights=eta_to_alpha(point.logits),
        means=np.array([mu for mu, _, _ in split]),
        covs=tuple(sigma for _, sigma, _ in split),
    )
    return params, np.array([s for _, _, s in split])


def params_to_usual_point(params: GmmParams) -> ProductPoint:
    """Pack original parameters as (Σⱼ blocks, η, μⱼ vectors)."""
    return ProductPoint(
        blocks=params.covs,
        logits=alpha_to_eta(params.weights),
        vectors=params.means,
    )


def usual_point_to_params(point: ProductPoint) -> GmmParams:
    return GmmParams(
        weights=eta_to_alpha(point.logits),
        means=np.array(point.vectors),
        covs=point.blocks,
    )
