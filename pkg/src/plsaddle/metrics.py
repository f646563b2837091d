"""Convergence telemetry: stationarity readings, gap estimates, rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import DivergenceError, ProblemInstance, UnstablePolicyError

Array = np.ndarray

TRACE_COLUMNS = (
    "k",
    "oracle_calls",
    "stationarity",
    "grad_x_norm",
    "primal_value",
    "wall_ns",
    "best_so_far",
)


@dataclass(frozen=True)
class TraceRecord:
    """One row of convergence telemetry.

    ``stationarity`` is the certificate the solvers aim to shrink:
    ||grad_x L(z, y)||^2 plus the squared length of one prox-ascent
    displacement of y away from itself.  ``best_so_far`` is its running
    minimum over every iterate seen so far (recorded or not), so it is
    nonincreasing down a trace.  ``wall_ns`` is elapsed nanoseconds since run
    start, or 0 when timing is disabled for byte-reproducible output.
    """

    k: int
    oracle_calls: int
    stationarity: float
    grad_x_norm: float
    primal_value: float
    wall_ns: int
    best_so_far: float


@dataclass(frozen=True)
class StationarityReading:
    value: float
    grad_x_sq: float
    y_move_sq: float
    y_bar: Array


def stationarity_measure(
    problem: ProblemInstance,
    z: Array,
    y: Array,
    sigma: float,
    q: Optional[Array] = None,
) -> StationarityReading:
    """Stationarity certificate at (z, y) with the solver's current momentum q.

    Forms y_bar = prox_{sigma h}(y + sigma*(grad_y L(z, y) + q)) and returns
    ||grad_x L(z, y)||^2 + ||y_bar - y||^2 together with its two components.
    A small value certifies an approximately stationary pair: the x-gradient
    is small and y is nearly a fixed point of the prox-ascent map.
    """
    gx = problem.oracle.grad_x(z, y)
    gy = problem.oracle.grad_y(z, y)
    if q is None:
        drive = gy
    else:
        drive = gy + q
    y_bar = problem.h_prox(y + sigma * drive, sigma)
    grad_sq = float(gx @ gx)
    move_sq = float(np.sum((y_bar - y) ** 2))
    return StationarityReading(grad_sq + move_sq, grad_sq, move_sq, y_bar)


@dataclass(frozen=True)
class GapEstimate:
    """Estimated sup_y Phi(x, y) - inf_x Phi(x, y) at a candidate pair.

    The sup side is solved to a reported projected-gradient residual; the inf
    side is nonconvex, so the reported value is the best of a multi-start
    descent and only an upper bound on the true infimum.  The gap is therefore
    an estimate bracketed by the two residuals, not a certified quantity.
    """

    gap: float
    sup_value: float
    inf_value: float
    sup_residual: float
    inf_grad_norm: float


def _maximize_linear_over_prox_set(problem, x: Array, y_start: Array, budget: int) -> Tuple[Array, float]:
    """Projected gradient ascent for max_y <g, y> - h(y) with g = grad_y L(x, .)."""
    g = problem.oracle.grad_y(x, y_start)
    gnorm = float(np.linalg.norm(g))
    y = y_start.copy()
    base = (1.0 + float(np.linalg.norm(y_start))) / (1.0 + gnorm)
    for j in range(budget):
        step = base * 4.0 / math.sqrt(j + 1.0)
        y = problem.h_prox(y + step * g, step)
        if not np.all(np.isfinite(y)):
            raise DivergenceError("gap sup-solve produced non-finite iterate", j)
    residual = float(np.linalg.norm(problem.h_prox(y + g, 1.0) - y))
    return y, residual


def _descend_from(problem, x_start: Array, y: Array, budget: int) -> Tuple[Array, float]:
    step = 1.0 / problem.constants.l_xx
    x = x_start.copy()
    for j in range(budget):
        trial_step = step
        for _ in range(60):
            try:
                g = problem.oracle.grad_x(x, y)
                x_new = x - trial_step * g
                if np.all(np.isfinite(x_new)):
                    _ = problem.oracle.grad_x(x_new, y)  # probes feasibility (e.g. stability)
                    break
            except (UnstablePolicyError, FloatingPointError):
                pass
            trial_step *= 0.5
        else:
            raise DivergenceError("gap inf-solve could not find a usable step", j)
        x = x_new
    gnorm = float(np.linalg.norm(problem.oracle.grad_x(x, y)))
    return x, gnorm


def gap_function(problem: ProblemInstance, x: Array, y: Array, budget: int = 1000) -> GapEstimate:
    """Empirical primal-dual gap at (x, y), reported with inner residuals.

    sup side: L is linear in y, so the inner maximization is a concave
    composite problem solved by projected gradient ascent with diminishing
    steps.  inf side: multi-start gradient descent (the point itself plus
    four seeded perturbations, deterministic order), keeping the best final
    value.  Both inner residuals are returned so that comparisons downstream
    stay honest about the estimate quality.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    y_hat, sup_residual = _maximize_linear_over_prox_set(problem, x, y, budget)
    sup_value = problem.oracle.value(x, y_hat) - problem.h_prox.h_value(y_hat)

    rng = np.random.default_rng(0x5EED)
    scale = 0.5 * (1.0 + float(np.linalg.norm(x)))
    starts = [x] + [x + scale * rng.standard_normal(x.size) for _ in range(4)]
    inf_value = math.inf
    inf_grad = math.inf
    for x_start in starts:
        try:
            x_end, gnorm = _descend_from(problem, x_start, y, budget)
            val = problem.oracle.value(x_end, y)
        except (UnstablePolicyError, DivergenceError):
            continue  # infeasible perturbation (e.g. destabilizing policy); x itself always works
        if val < inf_value:
            inf_value = val
            inf_grad = gnorm
    inf_value -= problem.h_prox.h_value(y)
    return GapEstimate(
        gap=sup_value - inf_value,
        sup_value=sup_value,
        inf_value=inf_value,
        sup_residual=sup_residual,
        inf_grad_norm=inf_grad,
    )


def rate_fit(points: Sequence[Tuple[int, float]]) -> float:
    """Least-squares slope of log(best stationarity) against log(horizon).

    Needs at least three horizons, each at least twice the previous, so the
    fit spans a real range instead of noise.
    """
    if len(points) < 3:
        raise ValueError("rate_fit needs at least three (horizon, value) points")
    horizons = np.array([float(t) for t, _ in points])
    values = np.array([float(v) for _, v in points])
    if np.any(horizons[1:] < 2.0 * horizons[:-1]):
        raise ValueError("horizons must at least double between consecutive points")
    if np.any(values <= 0.0):
        raise ValueError("stationarity values must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(horizons), np.log(values), 1)
    return float(slope)
