"""Proximal and projection operators for the dual regularizers.

Covers the three h's the solvers need: h = 0, the spectral box
{alpha*I <= M <= beta*I} applied blockwise to flattened matrix variables,
and the weighted-sample uncertainty set {y >= delta/n} intersected with
{||n*y - 1|| <= R}.  Small brute-force projection oracles (active-set
enumeration, SDP) live here too; they exist for the test suite and are not
used on any solver path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

Array = np.ndarray


class ProjectionError(RuntimeError):
    """Iterative projection failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def prox_zero(v: Array, sigma: float = 1.0) -> Array:
    """Prox of h = 0 is the identity (returned as a copy, bit-for-bit)."""
    return np.array(v, dtype=float, copy=True)


def project_spectral_box(m: Array, lo: float, hi: float) -> Array:
    """Frobenius-nearest matrix with spectrum in [lo, hi].

    The input is symmetrized first (gradient accumulation on a matrix
    variable need not stay symmetric), then the eigenvalues of the symmetric
    part are clamped.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if lo >= hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite entries in spectral projection input")
    s = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(s)
    out = (v * np.clip(w, lo, hi)) @ v.T
    return 0.5 * (out + out.T)


def project_box_ball(
    v: Array,
    delta: float,
    radius: float,
    tol: float = 1e-12,
    max_sweeps: int = 10_000,
) -> Array:
    """Euclidean projection onto {y_i >= delta/n} /\\ {||n*y - 1_n|| <= R}.

    Computed with Dykstra's alternating projections (plain alternation finds
    a feasible point of an intersection but not its projection; the
    correction terms are what make this a prox).  The work happens in the
    scaled coordinates u = n*y, where the two sets are a lower-bounded box
    {u >= delta} and a ball of radius R around 1_n; scaling by n is a
    similarity, so the projection commutes with it.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    center = np.ones(n)
    if (delta - 1.0) * np.sqrt(n) > radius + 1e-12:
        raise ValueError("empty constraint set: box floor lies outside the ball")
    u = n * v
    x = u.copy()
    p = np.zeros(n)
    q = np.zeros(n)
    change = np.inf
    for _ in range(max_sweeps):
        w = np.maximum(x + p, delta)
        p = x + p - w
        t = w + q
        d = t - center
        dist = float(np.linalg.norm(d))
        if dist <= radius:
            x_new = t
        else:
            x_new = center + (radius / dist) * d
        q = t - x_new
        change = float(np.linalg.norm(x_new - x))
        x = x_new
        if change < tol:
            return x / n
    raise ProjectionError("Dykstra projection did not converge", change)


class ZeroProx:
    """h = 0: the prox is the identity and the penalty value is zero."""

    kind = "zero"

    def __call__(self, v: Array, sigma: float) -> Array:
        return prox_zero(v, sigma)

    def h_value(self, y: Array) -> float:
        return 0.0

    def feasible(self, y: Array, tol: float = 0.0) -> bool:
        return True


class BoxBallProx:
    """Indicator of the weighted-sample uncertainty set (see project_box_ball).

    ``radius`` is the stored parameter; a constraint written as
    0.5 * ||n*y - 1|| <= rho corresponds to radius = 2 * rho.
    """

    kind = "box_ball"

    def __init__(self, delta: float, radius: float):
        if radius <= 0.0:
            raise ValueError("radius must be positive")
        self.delta = float(delta)
        self.radius = float(radius)

    def __call__(self, v: Array, sigma: float) -> Array:
        return project_box_ball(v, self.delta, self.radius)

    def h_value(self, y: Array) -> float:
        return 0.0

    def feasible(self, y: Array, tol: float = 1e-10) -> bool:
        y = np.asarray(y, dtype=float)
        n = y.size
        if np.min(n * y) < self.delta - tol:
            return False
        return float(np.linalg.norm(n * y - np.ones(n))) <= self.radius + tol


class SpectralBoxProx:
    """Blockwise spectral-box indicator over a flattened tuple of matrices.

    ``blocks`` is a sequence of (side, lo, hi): the flat vector is split into
    consecutive side*side chunks, each reshaped, projected with
    project_spectral_box, and flattened back.
    """

    kind = "spectral_box"

    def __init__(self, blocks: Sequence[Tuple[int, float, float]]):
        self.blocks = [(int(d), float(lo), float(hi)) for d, lo, hi in blocks]
        for d, lo, hi in self.blocks:
            if d < 1:
                raise ValueError("block side must be positive")
            if not (0.0 < lo < hi):
                raise ValueError(f"need 0 < lo < hi per block, got [{lo}, {hi}]")
        self.total_size = sum(d * d for d, _, _ in self.blocks)

    def split(self, v: Array):
        v = np.asarray(v, dtype=float)
        if v.size != self.total_size:
            raise ValueError(f"expected flat vector of size {self.total_size}, got {v.size}")
        out = []
        at = 0
        for d, _, _ in self.blocks:
            out.append(v[at : at + d * d].reshape(d, d))
            at += d * d
        return out

    def __call__(self, v: Array, sigma: float) -> Array:
        mats = self.split(v)
        parts = [
            project_spectral_box(m, lo, hi).ravel()
            for m, (_, lo, hi) in zip(mats, self.blocks)
        ]
        return np.concatenate(parts)

    def h_value(self, y: Array) -> float:
        return 0.0

    def feasible(self, y: Array, tol: float = 1e-10) -> bool:
        for m, (_, lo, hi) in zip(self.split(y), self.blocks):
            w = np.linalg.eigvalsh(0.5 * (m + m.T))
            if w[0] < lo - tol or w[-1] > hi + tol:
                return False
        return True


class RegularizedProx:
    """Adds (coeff/2) * ||y - center||^2 on top of a projection-type base prox.

    prox_{sigma*(indicator + quadratic)}(v) shrinks v toward the center and
    then projects; this is exact only because the base h is an indicator.
    """

    kind = "regularized"

    def __init__(self, base, coeff: float, center: Array):
        if coeff < 0.0:
            raise ValueError("regularization coefficient must be nonnegative")
        self.base = base
        self.coeff = float(coeff)
        self.center = np.asarray(center, dtype=float).copy()

    def __call__(self, v: Array, sigma: float) -> Array:
        shrunk = (v + sigma * self.coeff * self.center) / (1.0 + sigma * self.coeff)
        return self.base(shrunk, sigma)

    def h_value(self, y: Array) -> float:
        return self.base.h_value(y) + 0.5 * self.coeff * float(np.sum((y - self.center) ** 2))

    def feasible(self, y: Array, tol: float = 1e-10) -> bool:
        return self.base.feasible(y, tol)


def brute_force_project(
    point: Array,
    lower: Optional[float] = None,
    ball: Optional[Tuple[Array, float]] = None,
    tol: float = 1e-9,
) -> Array:
    """Test-only exact projection onto {x >= lower} /\\ {||x - c|| <= R}.

    Enumerates the 2^n box activity patterns; for each pattern the candidate
    with the ball slack and the candidate on the ball boundary are formed in
    closed form, checked for feasibility, and the nearest feasible candidate
    wins.  Tolerance of the comparison path is ~1e-8.  Dimension capped at 6.
    """
    v = np.asarray(point, dtype=float)
    n = v.size
    if n > 6:
        raise ValueError("brute-force projection is capped at dimension 6")
    if lower is None and ball is None:
        return v.copy()
    if ball is None:
        return np.maximum(v, lower)
    center, radius = np.asarray(ball[0], dtype=float), float(ball[1])
    if lower is None:
        d = v - center
        dist = float(np.linalg.norm(d))
        if dist <= radius:
            return v.copy()
        return center + (radius / dist) * d

    best = None
    best_dist = np.inf
    for mask_bits in itertools.product((False, True), repeat=n):
        mask = np.array(mask_bits)
        free = ~mask
        fixed_part = np.where(mask, lower, 0.0)

        # ball inactive: free coordinates stay at the query point
        cand = np.where(mask, lower, v)
        if np.all(cand >= lower - tol) and np.linalg.norm(cand - center) <= radius + tol:
            dist = float(np.linalg.norm(cand - v))
            if dist < best_dist:
                best, best_dist = cand, dist

        # ball active: free coordinates land on the induced sphere
        slack_sq = radius**2 - float(np.sum((fixed_part[mask] - center[mask]) ** 2))
        if slack_sq < -tol:
            continue
        rho = np.sqrt(max(slack_sq, 0.0))
        d = v[free] - center[free]
        nd = float(np.linalg.norm(d))
        if free.any() and nd > 0.0:
            cand = np.where(mask, lower, 0.0)
            cand[free] = center[free] + (rho / nd) * d
        elif free.any():
            continue  # degenerate direction; random test points never land here
        else:
            cand = np.full(n, lower)
            if abs(np.linalg.norm(cand - center) - radius) > tol and slack_sq > tol:
                continue
        if np.all(cand >= lower - tol) and np.linalg.norm(cand - center) <= radius + tol:
            dist = float(np.linalg.norm(cand - v))
            if dist < best_dist:
                best, best_dist = cand, dist
    if best is None:
        raise ValueError("no feasible candidate found; is the set empty?")
    return best


def brute_force_project_spectral(m: Array, lo: float, hi: float) -> Array:
    """Test-only SDP oracle for the spectral box projection (tolerance ~1e-6)."""
    import cvxpy as cp

    m = np.asarray(m, dtype=float)
    s = 0.5 * (m + m.T)
    n = s.shape[0]
    x = cp.Variable((n, n), symmetric=True)
    eye = np.eye(n)
    problem = cp.Problem(
        cp.Minimize(cp.sum_squares(x - s)),
        [x - lo * eye >> 0, hi * eye - x >> 0],
    )
    problem.solve()
    if x.value is None:
        raise RuntimeError(f"SDP projection oracle failed: status {problem.status}")
    out = np.asarray(x.value, dtype=float)
    return 0.5 * (out + out.T)
