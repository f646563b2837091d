"""Shared plumbing for the min-max solvers.

Holds the problem abstraction (smoothness/PL constants, gradient oracle and
dual prox handles), the per-iteration step-size schedule together with the
derived products Gamma_k / C_k used by the step-size certificates, the live
iterate state, and the run configuration consumed by :mod:`plsaddle.solvers`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

Array = np.ndarray

SIGMA_PRESETS = ("theorem", "conservative")
SOLVERS = ("pdm", "spdm", "gda", "agda")
SAMPLING_MODES = ("iid", "exhaustive")


class ScheduleError(ValueError):
    """Invalid or degenerate step-size schedule."""


class ConfigError(ValueError):
    """Invalid experiment or run configuration."""


class DivergenceError(RuntimeError):
    """Iterates became non-finite or blew past the divergence guard.

    ``iteration`` is the step index k at which the guard tripped.  When raised
    out of a full run, ``partial`` carries the RunResult accumulated up to the
    failure point so callers can still flush telemetry.
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.partial = None


class UnstablePolicyError(ArithmeticError):
    """Closed-loop spectral radius >= 1: the quadratic cost is infinite."""


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness / PL / noise constants declared for a problem.

    l_xx and l_xy are the Lipschitz constants of the x-gradient with respect
    to x and y; mu is the PL constant of the x-problem; nu_x, nu_y bound the
    standard deviation of the stochastic gradient noise (0 = deterministic).
    Declared values are contracts (upper bounds are fine), not estimates made
    by the solver.
    """

    l_xx: float
    l_xy: float
    mu: float
    nu_x: float = 0.0
    nu_y: float = 0.0

    def __post_init__(self):
        if not (self.l_xx > 0.0) or not math.isfinite(self.l_xx):
            raise ValueError(f"l_xx must be a finite positive real, got {self.l_xx}")
        if self.l_xy < 0.0 or not math.isfinite(self.l_xy):
            raise ValueError(f"l_xy must be a finite nonnegative real, got {self.l_xy}")
        if not (self.mu > 0.0) or not math.isfinite(self.mu):
            raise ValueError(f"mu must be a finite positive real, got {self.mu}")
        if self.nu_x < 0.0 or self.nu_y < 0.0:
            raise ValueError("noise levels nu_x, nu_y must be nonnegative")


@dataclass(frozen=True)
class ProblemInstance:
    """One saddle-point problem: oracle, dual prox, constants, start point.

    ``oracle`` exposes value(x, y), grad_x(x, y), grad_y(x, y), their
    mini-batch counterparts grad_x_batch / grad_y_batch(x, y, indices), and an
    ``n_samples`` attribute (int for finite sums, None for simulated/streaming
    sample spaces).  ``h_prox`` is callable as h_prox(v, sigma) and exposes
    h_value(y).  Since L is linear in y, grad_y(x, .) must not depend on its
    y argument.
    """

    name: str
    dim_x: int
    dim_y: int
    constants: ProblemConstants
    oracle: object
    h_prox: object
    x0: Array
    y0: Array

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_y < 1:
            raise ValueError("dimensions must be positive")
        if self.x0.shape != (self.dim_x,) or self.y0.shape != (self.dim_y,):
            raise ValueError("start point shapes do not match declared dimensions")
        if not (np.all(np.isfinite(self.x0)) and np.all(np.isfinite(self.y0))):
            raise ValueError("start point must be finite")


class Schedule:
    """Step-size rules alpha_k, gamma_k, lambda_k, sigma_k over a horizon.

    Gamma_k (the running product prod_{j<=k}(1 - alpha_j), with Gamma_0 = 1)
    and its tail sums are precomputed in one O(T) pass so that C_k queries
    are O(1).
    """

    def __init__(
        self,
        horizon: int,
        alpha: Callable[[int], float],
        gamma: Callable[[int], float],
        lam: Callable[[int], float],
        sigma: Callable[[int], float],
    ):
        if horizon < 0:
            raise ScheduleError("horizon must be nonnegative")
        self.horizon = int(horizon)
        self.alpha = alpha
        self.gamma = gamma
        self.lam = lam
        self.sigma = sigma

        alphas = np.array([float(alpha(k)) for k in range(self.horizon)])
        if alphas.size and (np.any(alphas <= 0.0) or np.any(alphas > 1.0)):
            bad = int(np.argmax((alphas <= 0.0) | (alphas > 1.0)))
            raise ScheduleError(f"alpha_{bad} = {alphas[bad]} outside (0, 1]")
        big = np.empty(self.horizon)
        if self.horizon:
            big[0] = 1.0
            for k in range(1, self.horizon):
                big[k] = (1.0 - alphas[k]) * big[k - 1]
        tail = np.zeros(self.horizon)
        acc = 0.0
        for k in range(self.horizon - 1, -1, -1):
            acc += big[k]
            tail[k] = acc
        self._alphas = alphas
        self._big_gamma = big
        self._gamma_tail = tail

    def big_gamma(self, k: int) -> float:
        self._check_index(k)
        return float(self._big_gamma[k])

    def gamma_tail(self, k: int) -> float:
        """Sum of Gamma_tau for tau = k .. T-1 (cached backward pass)."""
        self._check_index(k)
        return float(self._gamma_tail[k])

    def _check_index(self, k: int):
        if not (0 <= k < self.horizon):
            raise ScheduleError(f"index {k} outside schedule horizon [0, {self.horizon})")


def gamma_seq(schedule: Schedule, k: int) -> float:
    """Gamma_k = 1 at k = 0, (1 - alpha_k) * Gamma_{k-1} afterwards."""
    return schedule.big_gamma(k)


def c_k(schedule: Schedule, constants: ProblemConstants, k: int) -> float:
    """Step-size certificate C_k for index k.

    C_k = 1 - l_xx*gamma_k - l_xx*(gamma_k - lambda_k)^2 / (2*alpha_k*Gamma_k*gamma_k)
          * sum_{tau=k}^{T-1} Gamma_tau.

    The default schedule keeps min_k C_k >= 11/32, which certifies the
    step-size window used by the accelerated method.
    """
    big = schedule.big_gamma(k)
    if big <= 0.0:
        raise ScheduleError(f"Gamma_{k} = 0: schedule degenerate (alpha hit 1 after k=0)")
    a = float(schedule.alpha(k))
    g = float(schedule.gamma(k))
    lam = float(schedule.lam(k))
    tail = schedule.gamma_tail(k)
    return 1.0 - constants.l_xx * g - constants.l_xx * (g - lam) ** 2 / (2.0 * a * big * g) * tail


def _as_rule(value) -> Callable[[int], float]:
    if callable(value):
        return value
    const = float(value)
    return lambda k: const


def make_schedule(
    constants: ProblemConstants,
    horizon: int,
    overrides: Optional[Mapping[str, object]] = None,
    sigma_preset: str = "theorem",
) -> Schedule:
    """Build the default accelerated schedule, with optional per-rule overrides.

    Defaults (zero-based k):

    * alpha_k  = 2 / (k + 2)           -- so alpha_0 = 1 and Gamma_k = 2/((k+1)(k+2))
    * lambda_k = 1 / (2 * l_xx)
    * gamma_k  = (1 + alpha_k / 4) * lambda_k   -- top of the admissible window
    * sigma_k  = mu / (36 * l_xy^2)    -- preset "theorem"
                 mu^2 / (216 * l_xy^2) -- preset "conservative"

    ``overrides`` maps any of "alpha" / "gamma" / "lambda" / "sigma" to a
    constant or a rule k -> value; the sentinel ``"gamma": "lambda"`` pins
    gamma_k to lambda_k (the plain gradient-descent regime in which the two
    primal sequences coincide).  The window lambda_k <= gamma_k <=
    (1 + alpha_k/4) * lambda_k and the positivity of the momentum denominator
    gamma_k * (1 - l_xx * gamma_k) are validated over the whole horizon.
    """
    if horizon < 1:
        raise ScheduleError("horizon must be >= 1")
    if sigma_preset not in SIGMA_PRESETS:
        raise ScheduleError(f"unknown sigma preset {sigma_preset!r}; choose from {SIGMA_PRESETS}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - {"alpha", "gamma", "lambda", "sigma"}
    if unknown:
        raise ScheduleError(f"unknown schedule override keys: {sorted(unknown)}")

    alpha = _as_rule(overrides["alpha"]) if "alpha" in overrides else (lambda k: 2.0 / (k + 2))
    lam = _as_rule(overrides["lambda"]) if "lambda" in overrides else (lambda k, c=0.5 / constants.l_xx: c)

    if "gamma" in overrides:
        if isinstance(overrides["gamma"], str):
            if overrides["gamma"] != "lambda":
                raise ScheduleError('the only string gamma override is "lambda"')
            gamma = lam
        else:
            gamma = _as_rule(overrides["gamma"])
    else:
        gamma = lambda k: (1.0 + alpha(k) / 4.0) * lam(k)

    if "sigma" in overrides:
        sigma = _as_rule(overrides["sigma"])
    else:
        if constants.l_xy <= 0.0:
            raise ScheduleError("l_xy = 0: the default sigma rule is undefined, pass a sigma override")
        if sigma_preset == "theorem":
            sig_const = constants.mu / (36.0 * constants.l_xy**2)
        else:
            sig_const = constants.mu**2 / (216.0 * constants.l_xy**2)
        sigma = lambda k: sig_const

    schedule = Schedule(horizon, alpha, gamma, lam, sigma)
    for k in range(horizon):
        a, g, l = float(alpha(k)), float(gamma(k)), float(lam(k))
        s = float(sigma(k))
        if not (g > 0.0 and l > 0.0 and s > 0.0):
            raise ScheduleError(f"step sizes must be positive at k={k}: gamma={g}, lambda={l}, sigma={s}")
        hi = (1.0 + a / 4.0) * l
        slack = 1e-12 * max(1.0, abs(hi))
        if not (l - slack <= g <= hi + slack):
            raise ScheduleError(
                f"gamma_{k}={g} outside the admissible window [{l}, {hi}]"
            )
        if not (g * (1.0 - constants.l_xx * g) > 0.0):
            raise ScheduleError(
                f"gamma_{k}={g} makes the momentum denominator gamma*(1 - l_xx*gamma) nonpositive"
            )
    return schedule


def momentum_scale(schedule: Schedule, constants: ProblemConstants, k: int) -> float:
    """Coefficient 1 / (gamma_k * (1 - l_xx * gamma_k) * mu) of the dual momentum."""
    g = float(schedule.gamma(k))
    denom = g * (1.0 - constants.l_xx * g) * constants.mu
    if denom <= 0.0:
        raise ScheduleError(f"momentum denominator nonpositive at k={k}")
    return 1.0 / denom


@dataclass
class IterateState:
    """Live solver variables.

    x_prev holds the x from the previous iteration (the displacement source
    of the dual momentum); z_last is the most recent averaged point, kept for
    the stationarity telemetry.  At k = 0 both x_prev and z_last equal x, so
    the first momentum term is exactly zero.
    """

    x: Array
    x_tilde: Array
    x_prev: Array
    y: Array
    k: int
    z_last: Array

    @classmethod
    def initial(cls, x0: Array, y0: Array) -> "IterateState":
        x0 = np.asarray(x0, dtype=float)
        y0 = np.asarray(y0, dtype=float)
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(y0))):
            raise ValueError("initial point must be finite")
        return cls(
            x=x0.copy(),
            x_tilde=x0.copy(),
            x_prev=x0.copy(),
            y=y0.copy(),
            k=0,
            z_last=x0.copy(),
        )


@dataclass
class RunConfig:
    """Solver choice plus everything needed to reproduce a run bit-for-bit."""

    solver: str
    horizon: int
    seed: int = 0
    batch_size: Optional[int] = None
    sampling: str = "iid"
    trace_every: int = 1
    schedule_overrides: Optional[dict] = None
    sigma_preset: str = "theorem"
    wall_clock: bool = False

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if self.horizon < 0:
            raise ConfigError("horizon must be nonnegative")
        if self.trace_every < 1:
            raise ConfigError("trace_every must be a positive integer")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.sigma_preset not in SIGMA_PRESETS:
            raise ConfigError(f"unknown sigma preset {self.sigma_preset!r}")

    def resolved_batch_size(self) -> int:
        # Default b = T for the stochastic solver.
        if self.batch_size is not None:
            return self.batch_size
        return max(1, self.horizon)
