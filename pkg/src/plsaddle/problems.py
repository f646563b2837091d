"""Concrete problem instances for the solvers and the benchmark harness.

Three families:

* a synthetic quadratic-plus-bilinear family, constructed so that the
  x-problem satisfies the gradient-dominance (PL) inequality with a known
  constant even when the curvature matrix is rank-deficient;
* distributionally robust logistic regression with per-sample weights as the
  dual variable, plus a loader for the LIBSVM sparse text format so that real
  datasets can be plugged in;
* imitation learning of a discrete-time LQR policy against an expert, with
  exact cost gradients obtained from discrete Lyapunov equations rather than
  truncated trajectory rollouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import ProblemConstants, ProblemInstance, UnstablePolicyError
from .prox import BoxBallProx, RegularizedProx, SpectralBoxProx, ZeroProx

Array = np.ndarray


class LibsvmFormatError(ValueError):
    """Malformed LIBSVM line; message carries the 1-based line number."""


def power_iteration_symmetric(h: Array, tol: float = 1e-14, max_iter: int = 200_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by plain power iteration.

    Stops on the Rayleigh-quotient residual ||Hv - lambda*v|| <= 1e-11*lambda,
    which puts the eigenvalue error well below 1e-10 relative.
    """
    n = h.shape[0]
    rng = np.random.default_rng(0xA5)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = h @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (h @ v))
        resid = float(np.linalg.norm(h @ v - lam_new * v))
        if resid <= 1e-11 * max(lam_new, 1e-300) and abs(lam_new - lam) <= tol * max(1.0, lam_new):
            return lam_new
        lam = lam_new
    return lam


def spectral_norm(a: Array) -> float:
    """||A||_2 via power iteration on the smaller Gram matrix."""
    a = np.asarray(a, dtype=float)
    if a.size == 0 or not np.any(a):
        return 0.0
    gram = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    return math.sqrt(max(power_iteration_symmetric(gram), 0.0))


# ---------------------------------------------------------------------------
# synthetic PL-concave family
# ---------------------------------------------------------------------------


class QuadraticCouplingOracle:
    """L(x, y) = 0.5 x'Hx + y'Ax with optional simulated gradient noise.

    The sample space is unbounded: sample index i maps to a Gaussian
    perturbation drawn from a generator keyed by (noise_seed, role, i), so a
    given index always produces the same noise and mini-batch gradients are
    reproducible no matter the evaluation order.  Noise is scaled so that
    E||g_i - g||^2 equals nu^2 exactly.
    """

    def __init__(self, h: Array, a: Array, nu_x: float = 0.0, nu_y: float = 0.0, noise_seed: int = 0):
        self.h = np.asarray(h, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.nu_x = float(nu_x)
        self.nu_y = float(nu_y)
        self.noise_seed = int(noise_seed)
        self.n_samples = None

    def value(self, x: Array, y: Array) -> float:
        return 0.5 * float(x @ (self.h @ x)) + float(y @ (self.a @ x))

    def grad_x(self, x: Array, y: Array) -> Array:
        return self.h @ x + self.a.T @ y

    def grad_y(self, x: Array, y: Array) -> Array:
        return self.a @ x

    def _noise(self, role: int, index: int, dim: int) -> Array:
        seq = np.random.SeedSequence(entropy=(self.noise_seed, role, int(index)))
        g = np.random.default_rng(seq).standard_normal(dim)
        return g / math.sqrt(dim)

    def grad_x_batch(self, x: Array, y: Array, indices: Array) -> Array:
        g = self.grad_x(x, y)
        if self.nu_x == 0.0:
            return g
        noise = np.mean([self._noise(0, i, g.size) for i in np.asarray(indices)], axis=0)
        return g + self.nu_x * noise

    def grad_y_batch(self, x: Array, y: Array, indices: Array) -> Array:
        g = self.grad_y(x, y)
        if self.nu_y == 0.0:
            return g
        noise = np.mean([self._noise(1, i, g.size) for i in np.asarray(indices)], axis=0)
        return g + self.nu_y * noise


def make_synthetic(
    dim_x: int,
    dim_y: int,
    mu: float,
    rank_deficiency: int = 0,
    coupling_scale: float = 1.0,
    seed: int = 0,
    noise: Tuple[float, float] = (0.0, 0.0),
) -> ProblemInstance:
    """Random instance of the quadratic-plus-bilinear family.

    H = V diag(d) V' with ``rank_deficiency`` zero eigenvalues and the rest in
    [mu, 10*mu], the smallest positive one pinned at exactly mu, so the PL
    constant of L(., y) is mu by construction.  The coupling rows are
    projected onto range(H) (otherwise the inner minimum would be -inf along
    the null space) and rescaled to the requested spectral norm.  Declared
    l_xx and l_xy come from power iteration, not from the construction.
    """
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    if not (0 <= rank_deficiency < dim_x):
        raise ValueError("rank_deficiency must leave at least one positive eigenvalue")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim_x, dim_x)))
    rank = dim_x - rank_deficiency
    eigs = np.concatenate([[mu], mu + 9.0 * mu * rng.random(rank - 1)]) if rank > 1 else np.array([mu])
    v_range = q[:, :rank]
    h = (v_range * eigs) @ v_range.T
    h = 0.5 * (h + h.T)

    if coupling_scale == 0.0:
        a = np.zeros((dim_y, dim_x))
    else:
        a = rng.standard_normal((dim_y, dim_x)) @ (v_range @ v_range.T)
        norm_a = spectral_norm(a)
        if norm_a == 0.0:
            raise ValueError("degenerate coupling draw; pick another seed")
        a = a * (coupling_scale / norm_a)

    x0 = rng.standard_normal(dim_x)
    y0 = np.zeros(dim_y)
    constants = ProblemConstants(
        l_xx=power_iteration_symmetric(h),
        l_xy=spectral_norm(a),
        mu=mu,
        nu_x=noise[0],
        nu_y=noise[1],
    )
    oracle = QuadraticCouplingOracle(h, a, noise[0], noise[1], noise_seed=seed)
    return ProblemInstance(
        name="synthetic",
        dim_x=dim_x,
        dim_y=dim_y,
        constants=constants,
        oracle=oracle,
        h_prox=ZeroProx(),
        x0=x0,
        y0=y0,
    )


# ---------------------------------------------------------------------------
# distributionally robust logistic regression
# ---------------------------------------------------------------------------


def _sigmoid(t: Array) -> Array:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class WeightedLogisticOracle:
    """Finite sum L(x, y) = sum_i y_i * log(1 + exp(-b_i a_i'x)).

    The y-gradient is the loss vector itself, independent of y.  The
    per-sample x-gradient estimator is the importance-weighted single
    coordinate n * y_i * grad l_i(x): unbiased under uniform index sampling
    for any weight vector y.  The full gradients are computed through the
    exhaustive-batch path so that the finite-sum identity holds exactly.
    """

    def __init__(self, data: Array, labels: Array):
        self.data = np.asarray(data, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        if self.data.shape[0] != self.labels.size:
            raise ValueError("row count and label count disagree")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be in {-1, +1}")
        self.n_samples = self.data.shape[0]
        self._all = np.arange(self.n_samples)

    def losses(self, x: Array) -> Array:
        # log(1 + exp(-b * a'x)) through log1p/softplus branches
        return np.logaddexp(0.0, -self.labels * (self.data @ x))

    def value(self, x: Array, y: Array) -> float:
        return float(y @ self.losses(x))

    def grad_x(self, x: Array, y: Array) -> Array:
        return self.grad_x_batch(x, y, self._all)

    def grad_y(self, x: Array, y: Array) -> Array:
        return self.losses(x)

    def grad_x_batch(self, x: Array, y: Array, indices: Array) -> Array:
        idx = np.asarray(indices, dtype=int)
        sub = self.data[idx]
        b = self.labels[idx]
        s = _sigmoid(-b * (sub @ x))
        coeff = self.n_samples * y[idx] * (-b) * s
        return (coeff @ sub) / idx.size

    def grad_y_batch(self, x: Array, y: Array, indices: Array) -> Array:
        idx = np.asarray(indices, dtype=int)
        sub_losses = np.logaddexp(0.0, -self.labels[idx] * (self.data[idx] @ x))
        est = np.zeros(self.n_samples)
        np.add.at(est, idx, self.n_samples * sub_losses)
        return est / idx.size


def make_dro(
    data: Array,
    labels: Array,
    delta: float = 0.01,
    radius: float = 100.0,
    mu: float = 0.1,
) -> ProblemInstance:
    """Weighted-logistic DRO instance over the box/ball uncertainty set.

    The PL constant of the loss side is not computable in closed form; ``mu``
    is a declared tuning input (default 0.1).  ``radius`` bounds ||n*y - 1||;
    a constraint stated as 0.5*||n*y - 1|| <= rho means radius = 2*rho.
    """
    oracle = WeightedLogisticOracle(data, labels)
    n = oracle.n_samples
    norm_a = spectral_norm(oracle.data)
    y_max = (1.0 + radius) / n  # |n*y_i - 1| <= R forces n*y_i <= 1 + R
    l_xx = max(0.25 * y_max * norm_a**2, 1e-12)
    l_xy = max(norm_a, 1e-12)
    constants = ProblemConstants(l_xx=l_xx, l_xy=l_xy, mu=mu)
    return ProblemInstance(
        name="dro",
        dim_x=oracle.data.shape[1],
        dim_y=n,
        constants=constants,
        oracle=oracle,
        h_prox=BoxBallProx(delta, radius),
        x0=np.zeros(oracle.data.shape[1]),
        y0=np.full(n, 1.0 / n),
    )


def make_dro_synthetic_data(n: int, d: int, seed: int = 0, margin_noise: float = 0.3) -> Tuple[Array, Array]:
    """Separable-with-noise binary classification data for benchmark runs."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    data = rng.standard_normal((n, d))
    margins = data @ w + margin_noise * rng.standard_normal(n)
    labels = np.where(margins >= 0.0, 1.0, -1.0)
    return data, labels


def load_libsvm(path, n_features: Optional[int] = None) -> Tuple[Array, Array]:
    """Read the LIBSVM sparse text format into a dense matrix and labels.

    Grammar per line: ``<label> <index>:<value> ...`` with 1-based feature
    indices in strictly ascending order; blank lines are skipped.  The label
    field maps to {-1, +1} by sign: anything > 0 becomes +1, anything <= 0
    becomes -1 (so 0/1-coded labels land on -1/+1).  The feature count is the
    maximum index seen unless ``n_features`` pins it.
    """
    rows = []
    labels = []
    max_idx = 0
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise LibsvmFormatError(f"line {lineno}: bad label field {parts[0]!r}") from None
            feats = []
            prev = 0
            for tok in parts[1:]:
                idx_str, sep, val_str = tok.partition(":")
                if not sep:
                    raise LibsvmFormatError(f"line {lineno}: expected index:value, got {tok!r}")
                try:
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise LibsvmFormatError(f"line {lineno}: bad index:value pair {tok!r}") from None
                if idx < 1:
                    raise LibsvmFormatError(f"line {lineno}: feature indices are 1-based, got {idx}")
                if idx <= prev:
                    raise LibsvmFormatError(f"line {lineno}: non-ascending feature index {idx}")
                prev = idx
                feats.append((idx, val))
            max_idx = max(max_idx, prev)
            labels.append(1.0 if label > 0.0 else -1.0)
            rows.append(feats)
    d = n_features if n_features is not None else max_idx
    if n_features is not None and max_idx > n_features:
        raise LibsvmFormatError(f"feature index {max_idx} exceeds requested n_features={n_features}")
    data = np.zeros((len(rows), d))
    for i, feats in enumerate(rows):
        for idx, val in feats:
            data[i, idx - 1] = val
    return data, np.asarray(labels)


# ---------------------------------------------------------------------------
# LQR imitation
# ---------------------------------------------------------------------------


def spectral_radius(m: Array) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def solve_discrete_lyapunov(f: Array, w: Array, rel_tol: float = 1e-9) -> Array:
    """Solve P = W + F'PF for a Schur-stable F.

    Uses the Kronecker linearization (I - F' (x) F') vec(P) = vec(W) up to
    side 40 and the fixed-point recursion beyond that.  Raises
    UnstablePolicyError when the spectral radius of F is not strictly below
    one, and verifies the residual against ``rel_tol`` before returning.
    """
    f = np.asarray(f, dtype=float)
    w = np.asarray(w, dtype=float)
    d = f.shape[0]
    if f.shape != (d, d) or w.shape != (d, d):
        raise ValueError("F and W must be square matrices of the same side")
    if not np.all(np.isfinite(f)) or not np.all(np.isfinite(w)):
        raise ValueError("non-finite input to Lyapunov solve")
    rho = spectral_radius(f)
    if rho >= 1.0 - 1e-9:
        raise UnstablePolicyError(f"spectral radius {rho:.6f} >= 1: cost diverges")
    if d <= 40:
        ft = f.T
        lhs = np.eye(d * d) - np.kron(ft, ft)
        p = np.linalg.solve(lhs, w.reshape(-1)).reshape(d, d)
    else:
        p = w.copy()
        for _ in range(200_000):
            p_next = w + f.T @ p @ f
            if np.linalg.norm(p_next - p, "fro") <= 0.25 * rel_tol * max(np.linalg.norm(p_next, "fro"), 1e-300):
                p = p_next
                break
            p = p_next
    p = 0.5 * (p + p.T)
    resid = np.linalg.norm(p - w - f.T @ p @ f, "fro")
    if resid > rel_tol * max(np.linalg.norm(p, "fro"), 1e-300):
        raise RuntimeError(f"Lyapunov residual {resid:.3e} above tolerance")
    return p


@dataclass(frozen=True)
class LqrPlant:
    """Dynamics, expert policy and initial-state covariance of one instance."""

    a: Array
    b: Array
    k_expert: Array
    sigma0: Array

    @property
    def d(self) -> int:
        return self.a.shape[0]

    @property
    def k_dim(self) -> int:
        return self.b.shape[1]


class LqrImitationOracle:
    """m(K, theta) = C(K, theta) - C(K_E, theta) with exact Lyapunov gradients.

    Primal variable: K flattened (k x d).  Dual variable: theta = (Q, R)
    flattened.  C(K, theta) = tr(P_K Sigma_0) with P_K the policy Lyapunov
    solution; its theta-gradients are the second-moment differences
    Sigma_K - Sigma_KE and K Sigma_K K' - K_E Sigma_KE K_E', which do not
    depend on theta (the cost is linear in theta).  The expert's state
    covariance is cached at construction.  Deterministic problem: the batch
    gradients are the exact ones.
    """

    def __init__(self, plant: LqrPlant):
        self.plant = plant
        self.n_samples = None
        f_e = plant.a - plant.b @ plant.k_expert
        self._sigma_e = solve_discrete_lyapunov(f_e.T, plant.sigma0)
        self._expert_action_moment = plant.k_expert @ self._sigma_e @ plant.k_expert.T
        self._cache_key = None
        self._cache = None

    # --- flattening -------------------------------------------------------
    def unpack_k(self, x: Array) -> Array:
        p = self.plant
        return np.asarray(x, dtype=float).reshape(p.k_dim, p.d)

    def unpack_theta(self, y: Array) -> Tuple[Array, Array]:
        p = self.plant
        y = np.asarray(y, dtype=float)
        q = y[: p.d * p.d].reshape(p.d, p.d)
        r = y[p.d * p.d :].reshape(p.k_dim, p.k_dim)
        return q, r

    def pack_theta(self, q: Array, r: Array) -> Array:
        return np.concatenate([np.asarray(q, float).ravel(), np.asarray(r, float).ravel()])

    # --- plant solves -----------------------------------------------------
    def _moments(self, k_mat: Array):
        key = k_mat.tobytes()
        if key != self._cache_key:
            f = self.plant.a - self.plant.b @ k_mat
            sigma_k = solve_discrete_lyapunov(f.T, self.plant.sigma0)
            self._cache_key = key
            self._cache = (f, sigma_k)
        return self._cache

    def cost_and_grads(self, k_mat: Array, q: Array, r: Array):
        """Returns (m, grad_K, grad_Q, grad_R) at (K, theta)."""
        p = self.plant
        q = 0.5 * (q + q.T)
        r = 0.5 * (r + r.T)
        f, sigma_k = self._moments(k_mat)
        p_k = solve_discrete_lyapunov(f, q + k_mat.T @ r @ k_mat)
        cost_k = float(np.trace(p_k @ p.sigma0))
        cost_e = float(np.trace(q @ self._sigma_e)) + float(np.trace(r @ self._expert_action_moment))
        m_val = cost_k - cost_e
        grad_k = 2.0 * ((r + p.b.T @ p_k @ p.b) @ k_mat - p.b.T @ p_k @ p.a) @ sigma_k
        grad_q = sigma_k - self._sigma_e
        grad_r = k_mat @ sigma_k @ k_mat.T - self._expert_action_moment
        return m_val, grad_k, grad_q, grad_r

    # --- oracle interface ---------------------------------------------------
    def value(self, x: Array, y: Array) -> float:
        # linear in theta: evaluate through the cached second moments
        k_mat = self.unpack_k(x)
        q, r = self.unpack_theta(y)
        q = 0.5 * (q + q.T)
        r = 0.5 * (r + r.T)
        _, sigma_k = self._moments(k_mat)
        cost_k = float(np.trace((q + k_mat.T @ r @ k_mat) @ sigma_k))
        cost_e = float(np.trace(q @ self._sigma_e)) + float(np.trace(r @ self._expert_action_moment))
        return cost_k - cost_e

    def grad_x(self, x: Array, y: Array) -> Array:
        k_mat = self.unpack_k(x)
        q, r = self.unpack_theta(y)
        _, grad_k, _, _ = self.cost_and_grads(k_mat, q, r)
        return grad_k.ravel()

    def grad_y(self, x: Array, y: Array) -> Array:
        k_mat = self.unpack_k(x)
        _, sigma_k = self._moments(k_mat)
        grad_q = sigma_k - self._sigma_e
        grad_r = k_mat @ sigma_k @ k_mat.T - self._expert_action_moment
        return self.pack_theta(grad_q, grad_r)

    def grad_x_batch(self, x: Array, y: Array, indices: Array) -> Array:
        return self.grad_x(x, y)

    def grad_y_batch(self, x: Array, y: Array, indices: Array) -> Array:
        return self.grad_y(x, y)


def lqr_cost_and_grads(problem: ProblemInstance, k_mat: Array, q: Array, r: Array):
    """Convenience wrapper over the oracle's matrix-shaped gradient routine."""
    return problem.oracle.cost_and_grads(np.asarray(k_mat, float), np.asarray(q, float), np.asarray(r, float))


def lqr_sampled_cost(
    problem: ProblemInstance,
    k_mat: Array,
    q: Array,
    r: Array,
    rng: np.random.Generator,
    n_samples: int,
) -> float:
    """Monte-Carlo estimate of C(K, theta) from sampled initial states.

    Each draw contributes its exact infinite-horizon cost x0' P_K x0 (no
    trajectory truncation), so the only error is the initial-state sampling.
    """
    oracle: LqrImitationOracle = problem.oracle
    plant = oracle.plant
    k_mat = np.asarray(k_mat, dtype=float)
    q = 0.5 * (np.asarray(q, float) + np.asarray(q, float).T)
    r = 0.5 * (np.asarray(r, float) + np.asarray(r, float).T)
    f = plant.a - plant.b @ k_mat
    p_k = solve_discrete_lyapunov(f, q + k_mat.T @ r @ k_mat)
    w, v = np.linalg.eigh(plant.sigma0)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    draws = rng.standard_normal((n_samples, plant.d)) @ root.T
    return float(np.mean(np.einsum("ij,jk,ik->i", draws, p_k, draws)))


def _riccati_policy(a: Array, b: Array, tol: float = 1e-13, max_iter: int = 100_000) -> Array:
    """Optimal LQR gain for unit state/input costs via value iteration."""
    d = a.shape[0]
    k_dim = b.shape[1]
    p = np.eye(d)
    for _ in range(max_iter):
        btp = b.T @ p
        gain = np.linalg.solve(np.eye(k_dim) + btp @ b, btp @ a)
        p_next = np.eye(d) + a.T @ p @ a - a.T @ p @ b @ gain
        p_next = 0.5 * (p_next + p_next.T)
        if np.linalg.norm(p_next - p, "fro") <= tol * max(1.0, np.linalg.norm(p_next, "fro")):
            p = p_next
            break
        p = p_next
    btp = b.T @ p
    return np.linalg.solve(np.eye(k_dim) + btp @ b, btp @ a)


def make_lqr(
    d: int,
    k: int,
    seed: int = 0,
    alpha_q: float = 0.1,
    beta_q: float = 100.0,
    alpha_r: float = 0.1,
    beta_r: float = 100.0,
    mu: float = 0.1,
    l_xx: float = 2500.0,
    l_xy: float = 1.0,
    reg_coeff: float = 0.0,
    plant_rho: float = 0.8,
    policy_offset: float = 0.3,
) -> ProblemInstance:
    """Random stable imitation instance with a Riccati-optimal expert.

    The open-loop dynamics are rescaled to spectral radius ``plant_rho``; the
    expert is the optimal gain for unit costs, and the learner starts from a
    perturbed copy of it (the perturbation is halved until the loop stays
    stable).  mu, l_xx and l_xy are declared tuning contracts: the cost's
    curvature constants have no closed form, so they are inputs, with
    defaults sized for step sizes in the 1e-4 range.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d))
    a *= plant_rho / max(spectral_radius(a), 1e-12)
    b = rng.standard_normal((d, k)) / math.sqrt(d)
    k_expert = _riccati_policy(a, b)
    if spectral_radius(a - b @ k_expert) >= 1.0 - 1e-9:
        raise RuntimeError("expert synthesis failed to stabilize; pick another seed")

    scale = policy_offset
    direction = rng.standard_normal((k, d))
    direction /= np.linalg.norm(direction)
    k0 = k_expert + scale * direction
    while spectral_radius(a - b @ k0) >= 0.999:
        scale *= 0.5
        k0 = k_expert + scale * direction
        if scale < 1e-12:
            k0 = k_expert.copy()
            break

    plant = LqrPlant(a=a, b=b, k_expert=k_expert, sigma0=np.eye(d))
    oracle = LqrImitationOracle(plant)
    q0 = np.clip(1.0, alpha_q, beta_q) * np.eye(d)
    r0 = np.clip(1.0, alpha_r, beta_r) * np.eye(k)
    theta0 = oracle.pack_theta(q0, r0)
    h_prox = SpectralBoxProx([(d, alpha_q, beta_q), (k, alpha_r, beta_r)])
    if reg_coeff > 0.0:
        h_prox = RegularizedProx(h_prox, reg_coeff, theta0)
    constants = ProblemConstants(l_xx=l_xx, l_xy=l_xy, mu=mu)
    return ProblemInstance(
        name="lqr",
        dim_x=k * d,
        dim_y=d * d + k * k,
        constants=constants,
        oracle=oracle,
        h_prox=h_prox,
        x0=k0.ravel().copy(),
        y0=theta0,
    )
