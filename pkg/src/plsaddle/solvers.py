"""Single-loop primal-dual iteration loops and the benchmark runner.

The accelerated method interleaves, per iteration k:

    z      <- (1 - alpha_k) * x_tilde + alpha_k * x
    p      <- grad_y L(z, y)
    q      <- (grad_y L(x, y) - grad_y L(x_prev, y)) / (gamma_k (1 - l_xx gamma_k) mu)
    y      <- prox_{sigma_k h}(y + sigma_k * (p + q))
    r      <- grad_x L(z, y)
    x      <- x - gamma_k * r
    x_tilde<- z - lambda_k * r

i.e. a prox-ascent step on y driven by the y-gradient plus a momentum built
from the displacement of the y-gradient between consecutive primal iterates,
followed by two coupled descent steps that realize the primal acceleration.
The stochastic variant replaces the three oracle reads with mini-batch
estimates: p and q share one batch, r uses an independent one.  Plain
(alternating) gradient descent-ascent is included as the baseline.

Oracle accounting: the deterministic solvers count 3 full-gradient
evaluations per step (two y-reads for the ascent direction and momentum, one
x-read), the stochastic solver 3b sample gradients, the baselines 2 full
gradients.  Telemetry recomputations are instrumentation and are never
counted.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import (
    DivergenceError,
    IterateState,
    ProblemInstance,
    RunConfig,
    Schedule,
    UnstablePolicyError,
    make_schedule,
    momentum_scale,
)
from .metrics import TraceRecord

Array = np.ndarray

DIVERGENCE_NORM = 1e12


@dataclass
class StepOutput:
    """State advanced to k+1 plus the intermediate quantities of the step."""

    state: IterateState
    p: Array
    q: Array
    r: Array
    y_move: float
    grad_x_norm: float


@dataclass(frozen=True)
class SampleBatch:
    """Index batches for one stochastic step; u drives the x-gradient, v the y-side."""

    u_indices: Array
    v_indices: Array


@dataclass
class BestIterate:
    """Running argmin of the stationarity certificate (the materialized k*)."""

    k: int
    z: Array
    y: Array
    stationarity: float
    grad_x_norm: float


@dataclass
class RunResult:
    records: List[TraceRecord]
    state: IterateState
    best: Optional[BestIterate]
    oracle_calls: int
    elapsed_ns: int


def _guard_finite(name: str, value: Array, k: int):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {name}", k)


def _guard_state(state: IterateState, k: int):
    for name, vec in (("x", state.x), ("x_tilde", state.x_tilde), ("y", state.y)):
        if not np.all(np.isfinite(vec)):
            raise DivergenceError(f"non-finite iterate component {name}", k)
    if np.linalg.norm(state.x) > DIVERGENCE_NORM or np.linalg.norm(state.y) > DIVERGENCE_NORM:
        raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_NORM:g}", k)


def pdm_step(problem: ProblemInstance, schedule: Schedule, state: IterateState) -> StepOutput:
    """One deterministic accelerated primal-dual step (see module docstring)."""
    oracle = problem.oracle
    k = state.k
    a = float(schedule.alpha(k))
    g = float(schedule.gamma(k))
    lam = float(schedule.lam(k))
    sig = float(schedule.sigma(k))

    z = (1.0 - a) * state.x_tilde + a * state.x
    p = oracle.grad_y(z, state.y)
    scale = momentum_scale(schedule, problem.constants, k)
    q = scale * (oracle.grad_y(state.x, state.y) - oracle.grad_y(state.x_prev, state.y))
    _guard_finite("dual direction", p + q, k)
    y_new = problem.h_prox(state.y + sig * (p + q), sig)
    r = oracle.grad_x(z, y_new)
    _guard_finite("primal gradient", r, k)
    x_new = state.x - g * r
    xt_new = z - lam * r
    new_state = IterateState(x=x_new, x_tilde=xt_new, x_prev=state.x.copy(), y=y_new, k=k + 1, z_last=z)
    return StepOutput(
        state=new_state,
        p=p,
        q=q,
        r=r,
        y_move=float(np.linalg.norm(y_new - state.y)),
        grad_x_norm=float(np.linalg.norm(r)),
    )


def draw_batches(seed: int, k: int, n_samples: Optional[int], batch_size: int) -> SampleBatch:
    """Uniform-with-replacement index batches, independent per role.

    Each (seed, k, role) triple keys its own generator, so batches are
    reproducible regardless of evaluation order.  Unbounded sample spaces
    (n_samples None) draw raw 62-bit indices.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    hi = n_samples if n_samples is not None else 2**62
    out = []
    for role in (0, 1):
        seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(k), role))
        rng = np.random.default_rng(seq)
        out.append(rng.integers(0, hi, size=batch_size, dtype=np.int64))
    return SampleBatch(u_indices=out[0], v_indices=out[1])


def spdm_step(
    problem: ProblemInstance,
    schedule: Schedule,
    state: IterateState,
    seed: int,
    batch_size: int,
    sampling: str = "iid",
) -> StepOutput:
    """One stochastic step; exhaustive sampling reduces to the exact step bit-for-bit."""
    if sampling == "exhaustive":
        return pdm_step(problem, schedule, state)
    oracle = problem.oracle
    k = state.k
    a = float(schedule.alpha(k))
    g = float(schedule.gamma(k))
    lam = float(schedule.lam(k))
    sig = float(schedule.sigma(k))
    batch = draw_batches(seed, k, oracle.n_samples, batch_size)

    z = (1.0 - a) * state.x_tilde + a * state.x
    p = oracle.grad_y_batch(z, state.y, batch.v_indices)
    scale = momentum_scale(schedule, problem.constants, k)
    q = scale * (
        oracle.grad_y_batch(state.x, state.y, batch.v_indices)
        - oracle.grad_y_batch(state.x_prev, state.y, batch.v_indices)
    )
    _guard_finite("dual direction", p + q, k)
    y_new = problem.h_prox(state.y + sig * (p + q), sig)
    r = oracle.grad_x_batch(z, y_new, batch.u_indices)
    _guard_finite("primal gradient", r, k)
    x_new = state.x - g * r
    xt_new = z - lam * r
    new_state = IterateState(x=x_new, x_tilde=xt_new, x_prev=state.x.copy(), y=y_new, k=k + 1, z_last=z)
    return StepOutput(
        state=new_state,
        p=p,
        q=q,
        r=r,
        y_move=float(np.linalg.norm(y_new - state.y)),
        grad_x_norm=float(np.linalg.norm(r)),
    )


def _descent_ascent_step(problem, gamma: float, sigma: float, state: IterateState, alternating: bool) -> StepOutput:
    """Baseline step: simultaneous (GDA) or alternating (AGDA) descent-ascent."""
    oracle = problem.oracle
    k = state.k
    gx = oracle.grad_x(state.x, state.y)
    _guard_finite("primal gradient", gx, k)
    x_new = state.x - gamma * gx
    y_point = x_new if alternating else state.x
    gy = oracle.grad_y(y_point, state.y)
    _guard_finite("dual gradient", gy, k)
    y_new = problem.h_prox(state.y + sigma * gy, sigma)
    new_state = IterateState(
        x=x_new,
        x_tilde=x_new.copy(),
        x_prev=state.x.copy(),
        y=y_new,
        k=k + 1,
        z_last=x_new.copy(),
    )
    return StepOutput(
        state=new_state,
        p=gy,
        q=np.zeros_like(gy),
        r=gx,
        y_move=float(np.linalg.norm(y_new - state.y)),
        grad_x_norm=float(np.linalg.norm(gx)),
    )


def gda_step(problem: ProblemInstance, gamma: float, sigma: float, state: IterateState) -> StepOutput:
    return _descent_ascent_step(problem, gamma, sigma, state, alternating=False)


def agda_step(problem: ProblemInstance, gamma: float, sigma: float, state: IterateState) -> StepOutput:
    return _descent_ascent_step(problem, gamma, sigma, state, alternating=True)


def run(problem: ProblemInstance, config: RunConfig) -> RunResult:
    """Execute ``config.horizon`` steps of the configured solver.

    A TraceRecord is emitted for iterate k whenever k is a multiple of
    ``trace_every`` and once more for the final iterate k = T; a zero
    horizon yields an empty trace.  Record k reports the state reached after
    k steps: its oracle budget is what was spent reaching it, and its
    stationarity is the certificate at (z_k, y_k) with the momentum the
    solver would use next, evaluated with exact oracles (stochastic runs
    recompute the exact gradients for telemetry; those reads are not charged
    to the budget).  The running argmin of the certificate over all iterates
    0..T is tracked online and returned as ``best``.

    On divergence the partial result is attached to the raised error.
    """
    t_start = time.monotonic_ns()
    state = IterateState.initial(problem.x0, problem.y0)
    if config.horizon == 0:
        return RunResult([], state, None, 0, time.monotonic_ns() - t_start)

    schedule = make_schedule(
        problem.constants, config.horizon, config.schedule_overrides, config.sigma_preset
    )
    oracle = problem.oracle
    solver = config.solver
    batch_size = config.resolved_batch_size()
    exact_gradients = solver != "spdm" or config.sampling == "exhaustive"
    if solver == "pdm" or solver == "spdm":
        step_cost = 3 if exact_gradients else 3 * batch_size
    else:
        step_cost = 2

    records: List[TraceRecord] = []
    calls = 0
    best = BestIterate(k=-1, z=state.x.copy(), y=state.y.copy(), stationarity=math.inf, grad_x_norm=math.nan)

    def elapsed() -> int:
        return (time.monotonic_ns() - t_start) if config.wall_clock else 0

    def note_best(k: int, z: Array, y: Array, value: float, gnorm: float):
        if value < best.stationarity:
            best.k = k
            best.z = z.copy()
            best.y = y.copy()
            best.stationarity = value
            best.grad_x_norm = gnorm

    def record_row(k: int, calls_at: int, value: float, gnorm: float, x_at: Array, y_at: Array):
        primal = oracle.value(x_at, y_at) - problem.h_prox.h_value(y_at)
        records.append(
            TraceRecord(
                k=k,
                oracle_calls=calls_at,
                stationarity=value,
                grad_x_norm=gnorm,
                primal_value=primal,
                wall_ns=elapsed(),
                best_so_far=best.stationarity,
            )
        )

    def exact_momentum(k: int, x_k: Array, x_prev: Array, y_k: Array) -> Array:
        scale = momentum_scale(schedule, problem.constants, k)
        return scale * (oracle.grad_y(x_k, y_k) - oracle.grad_y(x_prev, y_k))

    try:
        # z_0 is taken to be x_0; these exact reads are telemetry, not budget.
        prev_r = oracle.grad_x(state.x, state.y)
        prev_p = oracle.grad_y(state.x, state.y)
        _guard_finite("initial gradient", prev_r, 0)

        for k in range(config.horizon):
            x_k = state.x
            x_prev_k = state.x_prev
            y_k = state.y
            z_k = state.z_last
            calls_before = calls

            if solver == "pdm":
                out = pdm_step(problem, schedule, state)
            elif solver == "spdm":
                out = spdm_step(problem, schedule, state, config.seed, batch_size, config.sampling)
            elif solver == "gda":
                out = gda_step(problem, float(schedule.gamma(k)), float(schedule.sigma(k)), state)
            else:
                out = agda_step(problem, float(schedule.gamma(k)), float(schedule.sigma(k)), state)
            calls += step_cost

            # certificate at iterate k
            sig_k = float(schedule.sigma(k))
            if solver in ("gda", "agda"):
                rx = out.r  # baseline step reads grad_x at (x_k, y_k) itself
                py = out.p if solver == "gda" else oracle.grad_y(x_k, y_k)
                q_exact = np.zeros_like(py)
            else:
                rx = prev_r
                py = prev_p
                q_exact = out.q if exact_gradients else exact_momentum(k, x_k, x_prev_k, y_k)
            y_bar = problem.h_prox(y_k + sig_k * (py + q_exact), sig_k)
            grad_sq = float(rx @ rx)
            value_k = grad_sq + float(np.sum((y_bar - y_k) ** 2))
            gnorm_k = math.sqrt(grad_sq)
            note_best(k, z_k, y_k, value_k, gnorm_k)
            if k % config.trace_every == 0:
                record_row(k, calls_before, value_k, gnorm_k, x_k, y_k)

            state = out.state
            _guard_state(state, k)
            if solver in ("pdm", "spdm"):
                if exact_gradients:
                    prev_r, prev_p = out.r, out.p
                else:
                    prev_r = oracle.grad_x(state.z_last, state.y)
                    prev_p = oracle.grad_y(state.z_last, state.y)

        # final certificate at iterate T
        t = config.horizon
        if solver in ("pdm", "spdm"):
            rx, py = prev_r, prev_p
            q_exact = exact_momentum(t, state.x, state.x_prev, state.y)
        else:
            rx = oracle.grad_x(state.x, state.y)
            py = oracle.grad_y(state.x, state.y)
            q_exact = np.zeros_like(py)
        sig_t = float(schedule.sigma(t))
        y_bar = problem.h_prox(state.y + sig_t * (py + q_exact), sig_t)
        grad_sq = float(rx @ rx)
        value_t = grad_sq + float(np.sum((y_bar - state.y) ** 2))
        gnorm_t = math.sqrt(grad_sq)
        note_best(t, state.z_last, state.y, value_t, gnorm_t)
        record_row(t, calls, value_t, gnorm_t, state.x, state.y)
    except UnstablePolicyError as exc:
        err = DivergenceError(str(exc), state.k)
        err.partial = RunResult(records, state, best if best.k >= 0 else None, calls, time.monotonic_ns() - t_start)
        raise err from exc
    except DivergenceError as exc:
        exc.partial = RunResult(records, state, best if best.k >= 0 else None, calls, time.monotonic_ns() - t_start)
        raise

    return RunResult(records, state, best, calls, time.monotonic_ns() - t_start)
