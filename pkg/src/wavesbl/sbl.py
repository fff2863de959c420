"""Sparse Bayesian learning by the convex-concave procedure.

The objective over coefficients ``theta`` and prior variances ``gamma`` is

    L(theta, gamma) = |y - D theta|^2 / s2 + theta' inv(G) theta
                      + log det(s2 I + D G D'),          G = diag(gamma)

The log-determinant is concave in ``gamma``; linearising it at the current
iterate gives a convex majoriser whose minimiser is a weighted-l1 problem

    theta+ = argmin |y - D theta|^2 + 2 s2 sum_i sqrt(c_i) |theta_i|
    gamma+ = |theta+| / sqrt(c)
    c      = diag(D' inv(s2 I + D G D') D)

Each outer step therefore cannot increase ``L``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .dictionary import DesignSystem, column_normalize
from .exceptions import (
    InnerSolverError,
    InsufficientSamplesError,
    NonDecreasingLossError,
    NumericalError,
    SingularFixedPointError,
)

#: value of the loss where some ``theta_i != 0`` has ``gamma_i == 0``
LOSS_SENTINEL = 1e300

RIDGE_FACTOR = 1e-6
GAMMA_INIT_FLOOR = 1e-3
_ENTRY_SLACK = 1e-12


@dataclass
class SblConfig:
    """Settings for :func:`run_sbl`.

    ``sigma2`` is either a positive float (held fixed) or ``"estimate"``
    (ridge-residual variance, see :func:`estimate_noise_variance`).
    ``step_tol``, when set, also requires the largest coefficient change
    to fall below ``step_tol * (1 + max|theta|)`` before stopping; the loss
    alone stalls at rounding level while small coefficients still move.
    """

    sigma2: Union[float, str] = "estimate"
    tol: float = 1e-8
    max_iter: int = 200
    gamma_floor: float = 1e-12
    inner_tol: float = 1e-12
    inner_max_sweeps: int = 10000
    normalize: bool = True
    loss_slack: float = 1e-10
    step_tol: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.sigma2, str):
            if self.sigma2 != "estimate":
                raise ValueError(f"sigma2 must be a positive number or 'estimate', got {self.sigma2!r}")
        elif not float(self.sigma2) > 0:
            raise ValueError("fixed sigma2 must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.gamma_floor < 0:
            raise ValueError("gamma_floor must be non-negative")
        if not self.inner_tol > 0 or self.inner_max_sweeps < 1:
            raise ValueError("invalid inner solver settings")
        if self.step_tol is not None and not self.step_tol > 0:
            raise ValueError("step_tol must be positive")


@dataclass
class SblResult:
    theta: np.ndarray
    gamma: np.ndarray
    loss_trace: list
    kkt_residual: float
    converged: bool
    iterations: int
    sigma2: float
    labels: list = field(default_factory=list)
    c: Optional[np.ndarray] = None
    config: Optional[SblConfig] = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta)

    def coefficients(self) -> dict:
        return dict(zip(self.labels, (float(v) for v in self.theta)))

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients(),
            "labels": list(self.labels),
            "theta": [float(v) for v in self.theta],
            "gamma": [float(v) for v in self.gamma],
            "loss_trace": [float(v) for v in self.loss_trace],
            "kkt_residual": float(self.kkt_residual),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "sigma2": float(self.sigma2),
            "config": asdict(self.config) if self.config is not None else None,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# -- building blocks ---------------------------------------------------------

def r_factor(D) -> np.ndarray:
    """Triangular factor of a thin QR of ``D``; ``R'R == D'D``."""
    return np.linalg.qr(np.asarray(D, dtype=float), mode="r")


def _spectrum(gamma, R):
    """Left singular vectors and squared singular values of ``R diag(sqrt(gamma))``.

    The nonzero eigenvalues of ``D diag(gamma) D'`` are the squared singular
    values, so everything below reduces to ``m x m`` work.
    """
    b = R * np.sqrt(gamma)[None, :]
    try:
        u, sv, _ = linalg.svd(b, lapack_driver="gesvd")
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    lam = np.zeros(u.shape[0])
    lam[:len(sv)] = sv ** 2
    return u, lam


def _logdet_spd(a):
    try:
        chol = linalg.cholesky(a, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def _logdet_term(gamma, D, sigma2, R=None):
    """``log det(s2 I_n + D diag(gamma) D')`` split as (constant, varying part)."""
    n, m = D.shape
    if m < n:
        R = r_factor(D) if R is None else R
        _, lam = _spectrum(gamma, R)
        return (n - m) * math.log(sigma2), float(np.sum(np.log(sigma2 + lam)))
    a = sigma2 * np.eye(n) + (D * gamma) @ D.T
    return 0.0, _logdet_spd(a)


def loss(theta, gamma, D, y, sigma2, R=None) -> float:
    """Evaluate the SBL objective.

    Indices with ``theta_i == gamma_i == 0`` contribute nothing to the
    quadratic prior term; any ``theta_i != 0`` with ``gamma_i == 0`` returns
    :data:`LOSS_SENTINEL`.
    """
    theta = np.asarray(theta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if np.any(gamma < 0):
        raise ValueError("gamma must be non-negative")
    live = gamma > 0
    if np.any(theta[~live] != 0):
        return LOSS_SENTINEL
    r = y - D @ theta
    fit = float(r @ r) / sigma2
    prior = float(np.sum(theta[live] ** 2 / gamma[live]))
    const, logdet = _logdet_term(gamma, D, sigma2, R)
    # adding the constant last keeps rounding monotone in the varying part
    return const + (fit + prior + logdet)


def _c_from_r(gamma, R, sigma2):
    # D' inv(s2 I + D G D') D == R' inv(s2 I + R G R') R  (m x m, SPD)
    u, lam = _spectrum(gamma, R)
    proj = u.T @ R
    c = np.sum(proj * proj / (sigma2 + lam)[:, None], axis=0)
    if not np.all(np.isfinite(c)):
        raise NumericalError("non-finite weights")
    return c


def compute_c(gamma, D, sigma2, R=None) -> np.ndarray:
    """Linearisation weights ``c_i = D_i' inv(s2 I + D diag(gamma) D') D_i``.

    Reduces to ``m x m`` work through a thin QR of ``D`` when ``m < n``.
    """
    gamma = np.asarray(gamma, dtype=float)
    D = np.asarray(D, dtype=float)
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(D))):
        raise NumericalError("non-finite input to compute_c")
    n, m = D.shape
    if m < n:
        return _c_from_r(gamma, r_factor(D) if R is None else R, sigma2)
    a = sigma2 * np.eye(n) + (D * gamma) @ D.T
    try:
        chol = linalg.cholesky(a, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("s2 I + D G D' is not positive definite") from exc
    z = linalg.solve_triangular(chol, D, lower=True)
    return np.sum(z * z, axis=0)


def _soft(x, w):
    return math.copysign(max(abs(x) - w, 0.0), x)


def _objective(theta, gram, b, w):
    return float(theta @ gram @ theta - 2.0 * b @ theta + 2.0 * np.sum(w * np.abs(theta)))


def _polish(theta, gram, b, w, free):
    """Exact minimiser on the current sign pattern, if it is KKT-consistent."""
    act = np.flatnonzero((theta != 0) & free)
    cand = np.zeros_like(theta)
    if len(act):
        sgn = np.sign(theta[act])
        try:
            # accuracy is judged by the sign and KKT checks below
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", linalg.LinAlgWarning)
                sol = linalg.solve(gram[np.ix_(act, act)], b[act] - w[act] * sgn,
                                   assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(sol)) or np.any(np.sign(sol) != sgn):
            return None
        cand[act] = sol
    grad = b - gram @ cand
    idle = free.copy()
    idle[act] = False
    if np.any(np.abs(grad[idle]) > w[idle] * (1 + 1e-10) + 1e-12 * (1 + np.abs(b[idle]))):
        return None
    return cand


def _cd_gram(gram, b, w, theta0=None, tol=1e-12, max_sweeps=10000, free=None):
    m = len(b)
    theta = np.zeros(m) if theta0 is None else np.array(theta0, dtype=float)
    free = np.ones(m, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    theta[~free] = 0.0
    diag = np.diag(gram)
    g_theta = gram @ theta
    order = np.flatnonzero(free & (diag > 0))
    delta = np.inf
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0
        for i in order:
            rho = b[i] - g_theta[i] + diag[i] * theta[i]
            if theta[i] == 0.0 and abs(rho) - w[i] <= _ENTRY_SLACK * (abs(b[i]) + w[i]):
                # a rounding-level excess is not enough to enter the support
                continue
            new = _soft(rho, w[i]) / diag[i]
            d = new - theta[i]
            if d != 0.0:
                theta[i] = new
                g_theta += gram[:, i] * d
                delta = max(delta, abs(d))
        scale = 1.0 + np.max(np.abs(theta), initial=0.0)
        if delta <= tol * scale:
            return theta
        if sweep % 5 == 0:
            cand = _polish(theta, gram, b, w, free)
            if cand is not None and _objective(cand, gram, b, w) <= _objective(theta, gram, b, w):
                return cand
    raise InnerSolverError(
        f"coordinate descent did not converge in {max_sweeps} sweeps "
        f"(last max change {delta:.3e})", theta=theta, gap=delta)


def solve_weighted_l1(D, y, w, theta0=None, tol=1e-12, max_sweeps=10000) -> np.ndarray:
    """Minimise ``|y - D theta|^2 + 2 sum_i w_i |theta_i|``.

    Cyclic coordinate descent with exact soft-threshold updates, warm
    started at ``theta0``. With duplicated columns the lowest index keeps
    the weight, by sweep order.
    """
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("penalty weights must be non-negative")
    return _cd_gram(D.T @ D, D.T @ y, w, theta0, tol, max_sweeps)


def _ridge(gram, b):
    m = len(b)
    lam = RIDGE_FACTOR * np.trace(gram) / m
    return linalg.solve(gram + lam * np.eye(m), b, assume_a="pos")


def estimate_noise_variance(sys: DesignSystem) -> float:
    """Residual variance of the ridge fit used to initialise :func:`run_sbl`."""
    D, y = np.asarray(sys.D, dtype=float), np.asarray(sys.y, dtype=float)
    n, m = D.shape
    if n <= m:
        raise InsufficientSamplesError(f"need more samples than terms (n={n}, m={m})")
    theta = _ridge(D.T @ D, D.T @ y)
    r = y - D @ theta
    return float(r @ r) / (n - m)


def orthonormal_fixed_point_c(theta, sigma) -> np.ndarray:
    """Limit weights when ``D'D = I``: ``sqrt(c) = 2 / (|t| + sqrt(t^2 + 4 s^2))``.

    Returns ``c`` (the square).
    """
    t = np.abs(np.asarray(theta, dtype=float))
    sigma = float(sigma)
    if sigma == 0 and np.any(t == 0):
        raise SingularFixedPointError("fixed point undefined for theta_i = 0 with sigma = 0")
    root_c = 2.0 / (t + np.sqrt(t * t + 4.0 * sigma * sigma))
    return root_c ** 2


def stationarity_terms(theta, c, D, y, sigma2):
    """Per-index residual of ``D_i'(D theta - y) + s2 sqrt(c_i) z_i = 0``.

    For ``theta_i == 0`` the subgradient ``z_i`` is chosen in ``[-1, 1]`` to
    minimise the residual.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(D).T @ (np.asarray(D) @ theta - np.asarray(y))
    w = sigma2 * np.sqrt(c)
    nz = theta != 0
    res = np.empty_like(theta)
    res[nz] = np.abs(grad[nz] + w[nz] * np.sign(theta[nz]))
    res[~nz] = np.maximum(np.abs(grad[~nz]) - w[~nz], 0.0)
    return res


def kkt_residual(result: SblResult, sys: DesignSystem, sigma2=None) -> float:
    """Largest violation of the stationarity conditions at ``result``.

    The weights are recomputed from ``result.gamma`` on ``sys``.
    """
    s2 = result.sigma2 if sigma2 is None else float(sigma2)
    c = compute_c(result.gamma, sys.D, s2)
    return float(np.max(stationarity_terms(result.theta, c, sys.D, sys.y, s2), initial=0.0))


def coupling_residual(result: SblResult, sys: DesignSystem, sigma2=None) -> float:
    """Largest relative gap in ``gamma_i = |theta_i| / sqrt(c_i)``."""
    s2 = result.sigma2 if sigma2 is None else float(sigma2)
    c = compute_c(result.gamma, sys.D, s2)
    implied = np.abs(result.theta) / np.sqrt(c)
    gap = np.abs(implied - result.gamma) / np.maximum(np.abs(result.gamma), 1e-300)
    gap[(result.gamma == 0) & (result.theta == 0)] = 0.0
    return float(np.max(gap, initial=0.0))


# -- outer loop ----------------------------------------------------------------

def run_sbl(sys: DesignSystem, cfg: Optional[SblConfig] = None, sigma2=None) -> SblResult:
    """Run the reweighted-l1 SBL iteration on one regression system.

    Starts from a small ridge solution; each step recomputes the weights,
    solves the weighted-l1 problem warm-started at the previous iterate and
    updates ``gamma``. Stops when the relative loss change drops below
    ``cfg.tol`` or after ``cfg.max_iter`` steps. Indices whose ``gamma``
    falls below ``cfg.gamma_floor`` are pruned (``theta_i = gamma_i = 0``)
    and stay pruned.
    """
    cfg = SblConfig() if cfg is None else cfg
    if cfg.normalize:
        work, scales = column_normalize(sys)
    else:
        work, scales = sys, np.ones(sys.n_terms)
    D, y = work.D, work.y
    n, m = D.shape

    if sigma2 is None:
        sigma2 = estimate_noise_variance(work) if cfg.sigma2 == "estimate" else float(cfg.sigma2)
        if sigma2 <= 0:
            # exact fits: keep the objective defined
            sigma2 = 1e-30 * max(float(y @ y) / n, 1e-300)

    gram = D.T @ D
    b = D.T @ y
    R = r_factor(D) if m < n else None

    def weights(g):
        return _c_from_r(g, R, sigma2) if R is not None else compute_c(g, D, sigma2)

    theta = _ridge(gram, b)
    gamma = np.maximum(np.abs(theta), GAMMA_INIT_FLOOR)
    frozen = np.zeros(m, dtype=bool)
    trace = [loss(theta, gamma, D, y, sigma2, R)]
    converged = False
    k = 0
    for k in range(1, cfg.max_iter + 1):
        c = weights(gamma)
        root_c = np.sqrt(c)
        theta_new = _cd_gram(gram, b, sigma2 * root_c, theta, cfg.inner_tol,
                             cfg.inner_max_sweeps, free=~frozen)
        gamma_new = np.abs(theta_new) / root_c
        prune = ~frozen & (gamma_new < cfg.gamma_floor)
        theta_new[prune] = 0.0
        gamma_new[prune] = 0.0
        frozen |= prune
        value = loss(theta_new, gamma_new, D, y, sigma2, R)
        if value > trace[-1] + cfg.loss_slack:
            raise NonDecreasingLossError(
                f"loss increased from {trace[-1]!r} to {value!r} at step {k}")
        trace.append(value)
        step = float(np.max(np.abs(theta_new - theta), initial=0.0))
        theta, gamma = theta_new, gamma_new
        settled = (cfg.step_tol is None
                   or step <= cfg.step_tol * (1.0 + np.max(np.abs(theta), initial=0.0)))
        if abs(trace[-2] - trace[-1]) < cfg.tol * max(1.0, abs(trace[-2])) and settled:
            converged = True
            break

    c_star = weights(gamma)
    kkt = float(np.max(stationarity_terms(theta, c_star, D, y, sigma2), initial=0.0))
    return SblResult(
        theta=theta / scales,
        gamma=gamma / scales ** 2,
        loss_trace=trace,
        kkt_residual=kkt,
        converged=converged,
        iterations=k,
        sigma2=float(sigma2),
        labels=list(sys.labels),
        c=c_star * scales ** 2,
        config=cfg,
    )
