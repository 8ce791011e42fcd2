"""Riemannian geometry of SPD matrices and of the product manifolds built on it.

The SPD factor carries the affine-invariant metric. Every operation works in a
symmetric congruence form so outputs stay exactly symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from geogmm.errors import InvalidArgumentError, NumericalBreakdownError

SYMMETRY_RTOL = 1e-12
PIVOT_RTOL = 1e-13


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Return (M + Mᵀ) / 2."""
    return 0.5 * (mat + mat.T)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_symmetric(mat: np.ndarray | Sequence, what: str) -> np.ndarray:
    arr = np.array(mat, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise InvalidArgumentError(f"{what} must be a non-empty square matrix")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{what} has non-finite entries")
    asym = np.linalg.norm(arr - arr.T)
    if asym > SYMMETRY_RTOL * np.linalg.norm(arr):
        raise InvalidArgumentError(
            f"{what} is not symmetric (asymmetry {asym:.3e})"
        )
    return symmetrize(arr)


def _eig_apply(mat: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a scalar function to a symmetric matrix through its eigenvalues."""
    w, v = scipy.linalg.eigh(mat)
    return symmetrize((v * fn(w)) @ v.T)


@dataclass(frozen=True, eq=False)
class SpdPoint:
    """A symmetric positive definite matrix: a point on the SPD manifold.

    The Cholesky factor is computed (and the point validated) at
    construction. Square roots are derived lazily; they are pure functions
    of the immutable matrix so a racing recomputation is harmless.
    """

    mat: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mat = _as_symmetric(self.mat, "SPD point")
        try:
            chol = scipy.linalg.cholesky(mat, lower=True)
        except np.linalg.LinAlgError as exc:
            raise InvalidArgumentError("Matrix is not positive definite") from exc
        pivots = np.diag(chol) ** 2
        if pivots.min() <= PIVOT_RTOL * mat.diagonal().max():
            raise InvalidArgumentError(
                f"Matrix is numerically singular (smallest pivot {pivots.min():.3e})"
            )
        object.__setattr__(self, "mat", _readonly(mat))
        object.__setattr__(self, "chol", _readonly(chol))

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @cached_property
    def sqrt(self) -> np.ndarray:
        return _readonly(_eig_apply(self.mat, np.sqrt))

    @cached_property
    def isqrt(self) -> np.ndarray:
        return _readonly(_eig_apply(self.mat, lambda w: 1.0 / np.sqrt(w)))

    @cached_property
    def inv(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return _readonly(symmetrize(scipy.linalg.cho_solve((self.chol, True), eye)))

    @cached_property
    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return Σ⁻¹·rhs through the cached Cholesky factor."""
        return scipy.linalg.cho_solve((self.chol, True), rhs)


def checked_spd(mat: np.ndarray, op: str) -> SpdPoint:
    if not np.all(np.isfinite(mat)):
        raise NumericalBreakdownError(f"{op} produced non-finite entries")
    try:
        return SpdPoint(symmetrize(mat))
    except InvalidArgumentError as exc:
        raise NumericalBreakdownError(f"{op} left the SPD cone: {exc}") from exc


@dataclass(frozen=True, eq=False)
class TangentVec:
    """A symmetric matrix, a tangent vector of the SPD manifold."""

    mat: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mat", _readonly(_as_symmetric(self.mat, "Tangent")))

    @classmethod
    def _wrap(cls, mat: np.ndarray) -> TangentVec:
        # Skips validation; callers pass results of symmetric arithmetic.
        vec = object.__new__(cls)
        object.__setattr__(vec, "mat", _readonly(symmetrize(mat)))
        return vec

    @classmethod
    def zeros(cls, dim: int) -> TangentVec:
        return cls._wrap(np.zeros((dim, dim)))

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def __add__(self, other: TangentVec) -> TangentVec:
        _check_dims(self.dim, other)
        return TangentVec._wrap(self.mat + other.mat)

    def __sub__(self, other: TangentVec) -> TangentVec:
        _check_dims(self.dim, other)
        return TangentVec._wrap(self.mat - other.mat)

    def __mul__(self, scalar: float) -> TangentVec:
        return TangentVec._wrap(float(scalar) * self.mat)

    __rmul__ = __mul__

    def __neg__(self) -> TangentVec:
        return TangentVec._wrap(-self.mat)


def _check_dims(dim: int, *items: SpdPoint | TangentVec) -> None:
    for item in items:
        if item.dim != dim:
            raise InvalidArgumentError(
                f"Dimension mismatch: expected {dim}, got {item.dim}"
            )


def metric(base: SpdPoint, xi: TangentVec, eta: TangentVec) -> float:
    """Affine-invariant inner product trace(Σ⁻¹ξΣ⁻¹η)."""
    _check_dims(base.dim, xi, eta)
    a = base.solve(xi.mat)
    b = base.solve(eta.mat)
    return float(np.sum(a * b.T))


def egrad_to_rgrad(base: SpdPoint, egrad: np.ndarray) -> TangentVec:
    """Convert a Euclidean gradient G into the Riemannian gradient ½Σ(G+Gᵀ)Σ."""
    g = np.asarray(egrad, dtype=float)
    if g.shape != (base.dim, base.dim):
        raise InvalidArgumentError(
            f"Gradient shape {g.shape} does not match dimension {base.dim}"
        )
    return TangentVec._wrap(base.mat @ symmetrize(g) @ base.mat)


def expmap(base: SpdPoint, xi: TangentVec) -> SpdPoint:
    """Exponential map Σ^{1/2} exp(Σ^{-1/2} ξ Σ^{-1/2}) Σ^{1/2}.

    The result has condition number at most cond(Σ)·exp(2‖ξ‖_Σ); steps whose
    result fails SPD validation raise NumericalBreakdownError.
    """
    _check_dims(base.dim, xi)
    if not np.all(np.isfinite(xi.mat)):
        raise InvalidArgumentError("Tangent vector has non-finite entries")
    if not np.any(xi.mat):
        return base
    middle = symmetrize(base.isqrt @ xi.mat @ base.isqrt)
    with np.errstate(over="ignore"):
        exp_middle = _eig_apply(middle, np.exp)
    return checked_spd(base.sqrt @ exp_middle @ base.sqrt, "expmap")


def transport_operator(start: SpdPoint, end: SpdPoint) -> np.ndarray:
    """E = Σ₁^{1/2}(Σ₁^{-1/2}Σ₂Σ₁^{-1/2})^{1/2}Σ₁^{-1/2}, equal to (Σ₂Σ₁⁻¹)^{1/2}."""
    _check_dims(start.dim, end)
    middle = symmetrize(start.isqrt @ end.mat @ start.isqrt)
    return start.sqrt @ _eig_apply(middle, np.sqrt) @ start.isqrt


def transporter(start: SpdPoint, end: SpdPoint) -> Callable[[TangentVec], TangentVec]:
    """Parallel transport from start to end with E computed once."""
    if start is end or np.array_equal(start.mat, end.mat):
        return lambda xi: xi
    e = transport_operator(start, end)

    def apply(xi: TangentVec) -> TangentVec:
        _check_dims(start.dim, xi)
        return TangentVec._wrap(e @ xi.mat @ e.T)

    return apply


def transport(start: SpdPoint, end: SpdPoint, xi: TangentVec) -> TangentVec:
    """Parallel transport EξEᵀ of xi from the tangent space at start to end."""
    _check_dims(start.dim, end, xi)
    return transporter(start, end)(xi)


def geodesic(a: SpdPoint, b: SpdPoint, t: float) -> SpdPoint:
    """Point γ(t) = A^{1/2}(A^{-1/2} B A^{-1/2})^t A^{1/2} on the geodesic from a to b."""
    _check_dims(a.dim, b)
    if not 0.0 <= t <= 1.0:
        raise InvalidArgumentError(f"Geodesic parameter must lie in [0, 1], got {t}")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    middle = symmetrize(a.isqrt @ b.mat @ a.isqrt)
    return checked_spd(a.sqrt @ _eig_apply(middle, lambda w: w**t) @ a.sqrt, "geodesic")


@dataclass(frozen=True, eq=False)
class ProductPoint:
    """Point of (∏ SPD) × ℝ^{K−1}, optionally times a Euclidean factor per block.

    `blocks` hold the K SPD components, `logits` the K−1 free mixing logits
    (the K-th is pinned at zero). `vectors` is a (K, m) array of flat
    Euclidean components; it is empty (m = 0) for the augmented
    parametrization and holds the means when optimizing (μ, Σ) directly.
    """

    blocks: tuple[SpdPoint, ...]
    logits: np.ndarray
    vectors: np.ndarray | None = None

    def __post_init__(self) -> None:
        blocks = tuple(self.blocks)
        if not blocks:
            raise InvalidArgumentError("A product point needs at least one block")
        _check_dims(blocks[0].dim, *blocks)
        logits = np.array(self.logits, dtype=float).reshape(-1)
        if logits.shape != (len(blocks) - 1,):
            raise InvalidArgumentError(
                f"Expected {len(blocks) - 1} logits, got {logits.shape[0]}"
            )
        if not np.all(np.isfinite(logits)):
            raise InvalidArgumentError("Logits must be finite")
        vectors = (
            np.zeros((len(blocks), 0))
            if self.vectors is None
            else np.array(self.vectors, dtype=float)
        )
        if vectors.ndim != 2 or vectors.shape[0] != len(blocks):
            raise InvalidArgumentError("Euclidean components must be a (K, m) array")
        if not np.all(np.isfinite(vectors)):
            raise InvalidArgumentError("Euclidean components must be finite")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "logits", _readonly(logits))
        object.__setattr__(self, "vectors", _readonly(vectors))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def block_dim(self) -> int:
        return self.blocks[0].dim


@dataclass(frozen=True, eq=False)
class ProductTangent:
    """Tangent vector of a ProductPoint, one component per factor."""

    blocks: tuple[TangentVec, ...]
    logits: np.ndarray
    vectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(
            self, "logits", _readonly(np.array(self.logits, dtype=float).reshape(-1))
        )
        object.__setattr__(
            self, "vectors", _readonly(np.array(self.vectors, dtype=float))
        )

    def _combine(
        self, other: ProductTangent, op: Callable[[object, object], object]
    ) -> ProductTangent:
        if len(other.blocks) != len(self.blocks) or other.vectors.shape != self.vectors.shape:
            raise InvalidArgumentError("Product tangents have different structure")
        return ProductTangent(
            blocks=tuple(op(a, b) for a, b in zip(self.blocks, other.blocks)),
            logits=op(self.logits, other.logits),
            vectors=op(self.vectors, other.vectors),
        )

    def __add__(self, other: ProductTangent) -> ProductTangent:
        return self._combine(other, lambda a, b: a + b)

    def __sub__(self, other: ProductTangent) -> ProductTangent:
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, scalar: float) -> ProductTangent:
        s = float(scalar)
        return ProductTangent(
            blocks=tuple(b * s for b in self.blocks),
            logits=self.logits * s,
            vectors=self.vectors * s,
        )

    __rmul__ = __mul__

    def __neg__(self) -> ProductTangent:
        return self * -1.0


class ProductManifold:
    """Componentwise lift of the SPD and Euclidean primitives.

    SPD blocks use the affine-invariant geometry, logits and Euclidean
    components the flat one; the product metric is the sum of component
    metrics.
    """

    def _check(self, point: ProductPoint, *vecs: ProductTangent) -> None:
        for vec in vecs:
            if (
                len(vec.blocks) != point.n_blocks
                or vec.logits.shape != point.logits.shape
                or vec.vectors.shape != point.vectors.shape
            ):
                raise InvalidArgumentError(
                    "Tangent structure does not match the base point"
                )
            _check_dims(point.block_dim, *vec.blocks)

    def zero(self, point: ProductPoint) -> ProductTangent:
        return ProductTangent(
            blocks=tuple(TangentVec.zeros(point.block_dim) for _ in point.blocks),
            logits=np.zeros_like(point.logits),
            vectors=np.zeros_like(point.vectors),
        )

    def metric(self, point: ProductPoint, xi: ProductTangent, eta: ProductTangent) -> float:
        self._check(point, xi, eta)
        total = sum(
            metric(base, a, b) for base, a, b in zip(point.blocks, xi.blocks, eta.blocks)
        )
        total += float(xi.logits @ eta.logits)
        total += float(np.sum(xi.vectors * eta.vectors))
        return float(total)

    def norm(self, point: ProductPoint, xi: ProductTangent) -> float:
        return float(np.sqrt(max(self.metric(point, xi, xi), 0.0)))

    def egrad_to_rgrad(
        self,
        point: ProductPoint,
        block_grads: Sequence[np.ndarray],
        logit_grad: np.ndarray,
        vector_grad: np.ndarray | None = None,
    ) -> ProductTangent:
        if len(block_grads) != point.n_blocks:
            raise InvalidArgumentError("One gradient block per SPD block is required")
        vector_grad = (
            np.zeros_like(point.vectors) if vector_grad is None else vector_grad
        )
        rgrad = ProductTangent(
            blocks=tuple(
                egrad_to_rgrad(base, g) for base, g in zip(point.blocks, block_grads)
            ),
            logits=logit_grad,
            vectors=vector_grad,
        )
        self._check(point, rgrad)
        return rgrad

    def expmap(self, point: ProductPoint, xi: ProductTangent) -> ProductPoint:
        self._check(point, xi)
        if not (np.all(np.isfinite(xi.logits)) and np.all(np.isfinite(xi.vectors))):
            raise InvalidArgumentError("Tangent vector has non-finite entries")
        return ProductPoint(
            blocks=tuple(expmap(base, v) for base, v in zip(point.blocks, xi.blocks)),
            logits=point.logits + xi.logits,
            vectors=point.vectors + xi.vectors,
        )

    def transporter(
        self, start: ProductPoint, end: ProductPoint
    ) -> Callable[[ProductTangent], ProductTangent]:
        if start.n_blocks != end.n_blocks or start.vectors.shape != end.vectors.shape:
            raise InvalidArgumentError("Product points have different structure")
        maps = [transporter(a, b) for a, b in zip(start.blocks, end.blocks)]

        def apply(xi: ProductTangent) -> ProductTangent:
            self._check(start, xi)
            return ProductTangent(
                blocks=tuple(m(v) for m, v in zip(maps, xi.blocks)),
                logits=xi.logits,
                vectors=xi.vectors,
            )

        return apply

    def transport(
        self, start: ProductPoint, end: ProductPoint, xi: ProductTangent
    ) -> ProductTangent:
        return self.transporter(start, end)(xi)
