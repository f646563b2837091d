"""Accelerated primal-dual solvers for PL-concave min-max problems.

The library solves min_x max_y L(x, y) - h(y) where L(., y) satisfies a
gradient-dominance (PL) inequality, L(x, .) is linear, and h is convex
(typically the indicator of a projection-friendly set).  It ships the
single-loop accelerated method in deterministic and mini-batch form,
descent-ascent baselines, three problem families, stationarity/gap
telemetry, and a CSV-emitting benchmark CLI.
"""

from .core import (
    ConfigError,
    DivergenceError,
    IterateState,
    ProblemConstants,
    ProblemInstance,
    RunConfig,
    Schedule,
    ScheduleError,
    UnstablePolicyError,
    c_k,
    gamma_seq,
    make_schedule,
    momentum_scale,
)
from .metrics import GapEstimate, TraceRecord, gap_function, rate_fit, stationarity_measure
from .problems import (
    LibsvmFormatError,
    load_libsvm,
    lqr_cost_and_grads,
    lqr_sampled_cost,
    make_dro,
    make_dro_synthetic_data,
    make_lqr,
    make_synthetic,
    solve_discrete_lyapunov,
)
from .prox import (
    BoxBallProx,
    ProjectionError,
    RegularizedProx,
    SpectralBoxProx,
    ZeroProx,
    brute_force_project,
    brute_force_project_spectral,
    project_box_ball,
    project_spectral_box,
    prox_zero,
)
from .solvers import (
    BestIterate,
    RunResult,
    SampleBatch,
    StepOutput,
    agda_step,
    draw_batches,
    gda_step,
    pdm_step,
    run,
    spdm_step,
)

__version__ = "0.1.0"
