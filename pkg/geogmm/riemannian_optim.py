"""Riemannian L-BFGS and conjugate gradients with a strong-Wolfe line-search.

Optimizers minimize. Problems that maximize (log-likelihoods) negate their
cost and gradient once, when the Problem is built.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Iterator

from geogmm.errors import InvalidArgumentError, LineSearchError, NumericalBreakdownError
from geogmm.gmm_objective import GmmParams
from geogmm.schemas import OptimConfig, Termination
from geogmm.spd_manifold import ProductManifold, ProductPoint, ProductTangent

logger = logging.getLogger(__name__)

STEP_MIN = 1e-10
STEP_MAX = 1e10
# zoom gives up once the bracket is this many ulps wide
BRACKET_ULPS = 4

CostGrad = Callable[[ProductPoint], tuple[float, ProductTangent]]


@dataclass(frozen=True)
class Problem:
    """A smooth cost on a product manifold with its Riemannian gradient.

    The optimizers report −cost as the average log-likelihood, so GMM
    problems use cost = −(log-likelihood)/n.
    """

    manifold: ProductManifold
    cost_grad: CostGrad


@dataclass(frozen=True)
class FitReport:
    final_point: ProductPoint | GmmParams
    avg_ll_trace: tuple[float, ...]
    iterations: int
    wall_time_s: float
    termination: Termination
    evaluations: int = 0

    @property
    def final_all(self) -> float:
        return self.avg_ll_trace[-1]


@dataclass(frozen=True)
class IterationInfo:
    """Everything about one accepted step, handed to the iteration callback."""

    iteration: int
    point: ProductPoint
    gradient: ProductTangent
    direction: ProductTangent
    alpha: float
    phi0: float
    dphi0: float
    phi_alpha: float
    dphi_alpha: float
    new_point: ProductPoint
    avg_ll: float
    evaluations: int


IterationCallback = Callable[[IterationInfo], None]


@dataclass(frozen=True)
class CurvaturePair:
    s: ProductTangent
    y: ProductTangent
    sy: float
    ss_over_sy: float


class LbfgsHistory:
    """Ring buffer of curvature pairs, all expressed at the current iterate."""

    def __init__(self, memory: int, h_diag: float = 1.0) -> None:
        self._pairs: deque[CurvaturePair] = deque(maxlen=memory)
        self.h_diag = h_diag

    def __len__(self) -> int:
        return len(self._pairs)

    def __iter__(self) -> Iterator[CurvaturePair]:
        return iter(self._pairs)

    def push(self, s: ProductTangent, y: ProductTangent, sy: float, ss: float) -> None:
        if not sy > 0:
            raise InvalidArgumentError("Curvature pairs need g(S, Y) > 0")
        self._pairs.append(CurvaturePair(s=s, y=y, sy=sy, ss_over_sy=ss / sy))

    def clear(self) -> None:
        self._pairs.clear()

    def transport(self, fn: Callable[[ProductTangent], ProductTangent]) -> None:
        """Move every stored pair into the tangent space of the next iterate."""
        self._pairs = deque(
            (replace(p, s=fn(p.s), y=fn(p.y)) for p in self._pairs),
            maxlen=self._pairs.maxlen,
        )


def hess_mul(
    manifold: ProductManifold,
    point: ProductPoint,
    vec: ProductTangent,
    history: LbfgsHistory,
    depth: int | None = None,
) -> ProductTangent:
    """Apply the L-BFGS inverse-Hessian approximation to `vec`.

    Two-loop form of the recursive HessMul: the pairs have already been
    transported to `point`, so every inner product uses its metric. `depth`
    limits the recursion to the most recent pairs; depth 0 is h_diag·vec.
    """
    pairs = list(history)
    if depth is not None:
        pairs = pairs[len(pairs) - depth :] if depth > 0 else []
    q = vec
    coeffs = []
    for pair in reversed(pairs):
        a = manifold.metric(point, pair.s, q) / pair.sy
        q = q - pair.y * a
        coeffs.append(a)
    r = q * history.h_diag
    for pair, a in zip(pairs, reversed(coeffs)):
        b = manifold.metric(point, pair.y, r) / pair.sy
        r = r + pair.s * (a - b)
    return r


def initial_step(f_k: float, f_km1: float | None, dphi0: float) -> float:
    """First trial step 2(f(X_k) − f(X_{k−1}))/Df(X_k)ξ_k.

    Falls back to 1/√(−φ′(0)) on the first iteration or when the formula is not
    a positive finite number.
    """
    if not dphi0 < 0:
        raise InvalidArgumentError("Initial step needs a descent direction")
    alpha = math.nan
    if f_km1 is not None:
        alpha = 2.0 * (f_k - f_km1) / dphi0
    if not (math.isfinite(alpha) and alpha > 0):
        alpha = 1.0 / math.sqrt(-dphi0)
    return min(max(alpha, STEP_MIN), STEP_MAX)


def _cubic_minimizer(
    a: float, fa: float, da: float, b: float, fb: float, db: float
) -> float | None:
    """Local minimizer of the Hermite cubic through (a, fa, da) and (b, fb, db)."""
    if not all(map(math.isfinite, (a, fa, da, b, fb, db))) or a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (db + d2 - d1) / denom
    return x if math.isfinite(x) else None


def cubic_interpolate(
    a_lo: float,
    phi_lo: float,
    dphi_lo: float,
    a_hi: float,
    phi_hi: float,
    dphi_hi: float,
    margin: float = 0.1,
) -> float:
    """Cubic-interpolation step inside [a_lo, a_hi], kept `margin` away from the ends."""
    if not a_lo < a_hi:
        raise InvalidArgumentError("Interpolation interval must satisfy a_lo < a_hi")
    x = _cubic_minimizer(a_lo, phi_lo, dphi_lo, a_hi, phi_hi, dphi_hi)
    if x is None:
        return 0.5 * (a_lo + a_hi)
    width = a_hi - a_lo
    return min(max(x, a_lo + margin * width), a_hi - margin * width)


@dataclass(frozen=True)
class LineSearchResult:
    alpha: float
    phi: float
    dphi: float
    evaluations: int


@dataclass(frozen=True)
class _Sample:
    alpha: float
    phi: float
    dphi: float


def wolfe_linesearch(
    phi: Callable[[float], float],
    dphi: Callable[[float], float],
    alpha1: float,
    cfg: OptimConfig,
    *,
    phi0: float | None = None,
    dphi0: float | None = None,
) -> LineSearchResult:
    """Find a step satisfying the strong Wolfe conditions for minimization.

    Bracketing grows the step by cubic extrapolation until the sufficient
    decrease test fails, φ stops decreasing, or φ′ turns nonnegative; zooming
    then shrinks the bracket by safeguarded cubic interpolation. Each phase
    gets `cfg.ls_max_iters` evaluations before LineSearchError is raised.
    """
    phi0 = phi(0.0) if phi0 is None else phi0
    dphi0 = dphi(0.0) if dphi0 is None else dphi0
    if not dphi0 < 0:
        raise InvalidArgumentError(f"Line-search needs φ′(0) < 0, got {dphi0}")
    if not alpha1 > 0:
        raise InvalidArgumentError(f"Initial step must be positive, got {alpha1}")

    evals = 0

    def sample(alpha: float) -> _Sample:
        nonlocal evals
        evals += 1
        return _Sample(alpha, phi(alpha), dphi(alpha))

    def armijo_fails(s: _Sample) -> bool:
        return not math.isfinite(s.phi) or s.phi > phi0 + cfg.c1 * s.alpha * dphi0

    def curvature_holds(s: _Sample) -> bool:
        return abs(s.dphi) <= cfg.c2 * abs(dphi0)

    def done(s: _Sample) -> LineSearchResult:
        return LineSearchResult(s.alpha, s.phi, s.dphi, evals)

    def failure(phase: str, message: str, lo: _Sample, hi: _Sample) -> LineSearchError:
        return LineSearchError(
            message,
            {
                "phase": phase,
                "bracket": (lo.alpha, hi.alpha),
                "phi_bracket": (lo.phi, hi.phi),
                "phi0": phi0,
                "dphi0": dphi0,
                "evaluations": evals,
            },
        )

    def zoom(lo: _Sample, hi: _Sample) -> LineSearchResult:
        for _ in range(cfg.ls_max_iters):
            left, right = (lo, hi) if lo.alpha < hi.alpha else (hi, lo)
            if right.alpha - left.alpha <= BRACKET_ULPS * math.ulp(max(1.0, right.alpha)):
                if lo.alpha > 0 and curvature_holds(lo):
                    return done(lo)
                raise failure("zoom", "Zooming bracket collapsed to a single step", lo, hi)
            alpha = cubic_interpolate(
                left.alpha, left.phi, left.dphi,
                right.alpha, right.phi, right.dphi,
                cfg.interp_margin,
            )
            cur = sample(alpha)
            if armijo_fails(cur) or cur.phi >= lo.phi:
                hi = cur
                continue
            if curvature_holds(cur):
                return done(cur)
            if cur.dphi * (hi.alpha - lo.alpha) >= 0:
                hi = lo
            lo = cur
        raise failure("zoom", "Zooming phase did not find a strong-Wolfe step", lo, hi)

    prev = _Sample(0.0, phi0, dphi0)
    alpha = alpha1
    for i in range(1, cfg.ls_max_iters + 1):
        cur = sample(alpha)
        if armijo_fails(cur) or (i > 1 and cur.phi >= prev.phi):
            return zoom(prev, cur)
        if curvature_holds(cur):
            return done(cur)
        if cur.dphi >= 0:
            return zoom(cur, prev)
        guess = _cubic_minimizer(0.0, phi0, dphi0, cur.alpha, cur.phi, cur.dphi)
        lo, hi = cfg.extrap_lo * cur.alpha, cfg.extrap_hi * cur.alpha
        prev = cur
        alpha = hi if guess is None else min(max(guess, lo), hi)
    raise failure(
        "bracket",
        "Bracketing phase did not find a strong-Wolfe step",
        prev,
        _Sample(alpha, math.nan, math.nan),
    )


class _LineFunction:
    """φ(α) = f(R_x(αξ)) and φ′(α) = g(grad f(R_x(αξ)), 𝒯(ξ)), evaluated together.

    Trial steps that overflow the exponential map score +∞ so the
    line-search backs off instead of aborting the fit.
    """

    def __init__(self, problem: Problem, point: ProductPoint, direction: ProductTangent):
        self._problem = problem
        self._point = point
        self._direction = direction
        self._cache: dict[
            float, tuple[ProductPoint | None, float, ProductTangent | None, float]
        ] = {}

    def _eval(self, alpha: float):
        if alpha not in self._cache:
            manifold = self._problem.manifold
            try:
                new = manifold.expmap(self._point, self._direction * alpha)
                f, g = self._problem.cost_grad(new)
            except NumericalBreakdownError as exc:
                logger.debug("Trial step %.3e rejected: %s", alpha, exc)
                self._cache[alpha] = (None, math.inf, None, math.nan)
            else:
                moved = manifold.transport(self._point, new, self._direction)
                self._cache[alpha] = (new, f, g, manifold.metric(new, g, moved))
        return self._cache[alpha]

    def phi(self, alpha: float) -> float:
        return self._eval(alpha)[1]

    def dphi(self, alpha: float) -> float:
        return self._eval(alpha)[3]

    def at(self, alpha: float) -> tuple[ProductPoint, float, ProductTangent]:
        point, f, g, _ = self._eval(alpha)
        if point is None or g is None:
            raise NumericalBreakdownError(f"Accepted step {alpha} is not evaluable")
        return point, f, g


def _evaluate(problem: Problem, point: ProductPoint) -> tuple[float, ProductTangent]:
    f, g = problem.cost_grad(point)
    if not math.isfinite(f):
        raise NumericalBreakdownError("Objective is not finite at the starting point")
    return f, g


def _converged(f_prev: float, f: float, gnorm: float, cfg: OptimConfig) -> bool:
    return abs(f_prev - f) < cfg.tol_avg_ll or gnorm <= cfg.tol_grad_norm


def lbfgs_fit(
    problem: Problem,
    x0: ProductPoint,
    cfg: OptimConfig | None = None,
    callback: IterationCallback | None = None,
) -> FitReport:
    """Limited-memory Riemannian BFGS."""
    cfg = cfg or OptimConfig()
    manifold = problem.manifold
    start = time.perf_counter()
    x = x0
    f, g = _evaluate(problem, x)
    evaluations = 1
    trace = [-f]
    gnorm = manifold.norm(x, g)
    history = LbfgsHistory(cfg.memory, h_diag=1.0 / gnorm if gnorm > 0 else 1.0)
    f_prev: float | None = None
    iterations = 0
    termination = Termination.MAX_ITERS

    if gnorm <= cfg.tol_grad_norm:
        termination = Termination.TOLERANCE
    else:
        for k in range(cfg.max_iters):
            direction = hess_mul(manifold, x, -g, history)
            dphi0 = manifold.metric(x, g, direction)
            if not dphi0 < 0:
                logger.warning("L-BFGS direction lost descent at iteration %d; resetting", k)
                history.clear()
                direction = -g * history.h_diag
                dphi0 = manifold.metric(x, g, direction)

            line = _LineFunction(problem, x, direction)
            try:
                ls = wolfe_linesearch(
                    line.phi, line.dphi, initial_step(f, f_prev, dphi0), cfg,
                    phi0=f, dphi0=dphi0,
                )
            except LineSearchError as exc:
                logger.warning("Line-search failed at iteration %d: %s", k, exc.diagnostics)
                termination = Termination.LINE_SEARCH_FAILURE
                break
            evaluations += ls.evaluations
            x_new, f_new, g_new = line.at(ls.alpha)

            to_new = manifold.transporter(x, x_new)
            s = to_new(direction * ls.alpha)
            y = g_new - to_new(g)
            history.transport(to_new)
            sy = manifold.metric(x_new, s, y)
            ss = manifold.metric(x_new, s, s)
            yy = manifold.metric(x_new, y, y)
            if sy > cfg.curvature_eps * math.sqrt(ss * yy):
                history.push(s, y, sy, ss)
                history.h_diag = sy / yy
            else:
                logger.warning("Skipping curvature pair at iteration %d (sy=%.3e)", k, sy)

            if callback is not None:
                callback(
                    IterationInfo(
                        iteration=k, point=x, gradient=g, direction=direction,
                        alpha=ls.alpha, phi0=f, dphi0=dphi0, phi_alpha=ls.phi,
                        dphi_alpha=ls.dphi, new_point=x_new, avg_ll=-f_new,
                        evaluations=ls.evaluations,
                    )
                )
            iterations = k + 1
            f_prev, f, g, x = f, f_new, g_new, x_new
            trace.append(-f)
            logger.debug(
                "lbfgs iter %d: ALL=%.10f alpha=%.3e evals=%d", k, -f, ls.alpha, ls.evaluations
            )
            if _converged(f_prev, f, manifold.norm(x, g), cfg):
                termination = Termination.TOLERANCE
                break

    return FitReport(
        final_point=x,
        avg_ll_trace=tuple(trace),
        iterations=iterations,
        wall_time_s=time.perf_counter() - start,
        termination=termination,
        evaluations=evaluations,
    )


def cg_fit(
    problem: Problem,
    x0: ProductPoint,
    cfg: OptimConfig | None = None,
    callback: IterationCallback | None = None,
) -> FitReport:
    """Riemannian conjugate gradients with Polak–Ribière⁺ and transported history."""
    cfg = cfg or OptimConfig()
    manifold = problem.manifold
    start = time.perf_counter()
    x = x0
    f, g = _evaluate(problem, x)
    evaluations = 1
    trace = [-f]
    direction = -g
    f_prev: float | None = None
    iterations = 0
    termination = Termination.MAX_ITERS

    if manifold.norm(x, g) <= cfg.tol_grad_norm:
        termination = Termination.TOLERANCE
    else:
        for k in range(cfg.max_iters):
            dphi0 = manifold.metric(x, g, direction)
            if not dphi0 < 0:
                logger.warning("CG restart at iteration %d", k)
                direction = -g
                dphi0 = manifold.metric(x, g, direction)

            line = _LineFunction(problem, x, direction)
            try:
                ls = wolfe_linesearch(
                    line.phi, line.dphi, initial_step(f, f_prev, dphi0), cfg,
                    phi0=f, dphi0=dphi0,
                )
            except LineSearchError as exc:
                logger.warning("Line-search failed at iteration %d: %s", k, exc.diagnostics)
                termination = Termination.LINE_SEARCH_FAILURE
                break
            evaluations += ls.evaluations
            x_new, f_new, g_new = line.at(ls.alpha)

            to_new = manifold.transporter(x, x_new)
            g_moved = to_new(g)
            beta = max(
                0.0,
                manifold.metric(x_new, g_new, g_new - g_moved) / manifold.metric(x, g, g),
            )

            if callback is not None:
                callback(
                    IterationInfo(
                        iteration=k, point=x, gradient=g, direction=direction,
                        alpha=ls.alpha, phi0=f, dphi0=dphi0, phi_alpha=ls.phi,
                        dphi_alpha=ls.dphi, new_point=x_new, avg_ll=-f_new,
                        evaluations=ls.evaluations,
                    )
                )
            direction = -g_new + to_new(direction) * beta
            iterations = k + 1
            f_prev, f, g, x = f, f_new, g_new, x_new
            trace.append(-f)
            logger.debug("cg iter %d: ALL=%.10f alpha=%.3e beta=%.3f", k, -f, ls.alpha, beta)
            if _converged(f_prev, f, manifold.norm(x, g), cfg):
                termination = Termination.TOLERANCE
                break

    return FitReport(
        final_point=x,
        avg_ll_trace=tuple(trace),
        iterations=iterations,
        wall_time_s=time.perf_counter() - start,
        termination=termination,
        evaluations=evaluations,
    )
