"""DP-SGD engine, non-private baselines, and the partial-sum scaling matrix.

One run executes the strictly sequential recurrence

    theta^(t) = theta^(t-1) - eta_t * (gbar_t + xi_t),   eta_t = eta * t^-alpha,

where gbar_t is the (optionally per-record clipped) batch-mean gradient and
xi_t ~ N(0, sigma1^2 I). The averaged iterate theta_bar = sum_t theta^(t) / T
is the released estimator; streaming accumulators reconstruct the scaling
matrix used for self-normalized inference without storing the iterate path.

Randomness consumption protocol (fixes determinism given the rng): for the
fixed-size schemes all batch indices are drawn first, then, iff sigma1 > 0,
all noise as one (T, p) standard-normal block. Poisson sampling draws its
membership mask and noise step by step in that order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigError, DivergenceError
from .models import Dataset, LossModel, ModelKind, gradient_batch
from .sampling import (
    FIXED_SIZE_SCHEMES,
    RngState,
    SamplingScheme,
    SchemeKind,
    draw_batch_matrix,
    gaussian_matrix,
)

_KIND_CODE = {
    ModelKind.MEAN: _kernels.MODEL_MEAN,
    ModelKind.LINEAR: _kernels.MODEL_LINEAR,
    ModelKind.LOGISTIC: _kernels.MODEL_LOGISTIC,
}

#: iterates are declared divergent when ||theta|| exceeds this multiple of
#: 1 + ||theta0||; generous because early private iterates are noisy.
DIVERGENCE_FACTOR = 1e8


@dataclass
class OptimConfig:
    """Settings for one stochastic-gradient run."""

    eta: float
    alpha: float
    T: int
    scheme: SamplingScheme
    sigma1: float = 0.0
    clip: Optional[float] = None
    theta0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError(f"iteration count must be >= 1, got {self.T}")
        if self.eta <= 0:
            raise ConfigError(f"step scale must be positive, got {self.eta}")
        if self.sigma1 < 0:
            raise ConfigError(f"sigma1 must be >= 0, got {self.sigma1}")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError(f"clip threshold must be positive, got {self.clip}")
        if not 0.5 < self.alpha < 1.0:
            warnings.warn(
                f"step exponent alpha={self.alpha} outside (1/2, 1); the averaged "
                "iterate loses its usual limit theory",
                stacklevel=2,
            )

    @property
    def m(self) -> int:
        return self.scheme.m


@dataclass
class ScalingAccumulators:
    """Streaming sums over the iterate path needed by the scaling matrix.

    theta_sum      S_T = sum_t theta^(t)
    outer_sum      sum_t S_t S_t'
    t_weighted_sum sum_t t * S_t
    t_sq_sum       sum_t t^2 (exact; equals T(T+1)(2T+1)/6 on completion)
    """

    theta_sum: np.ndarray
    outer_sum: np.ndarray
    t_weighted_sum: np.ndarray
    t_sq_sum: int
    steps: int
    batch_size: int


@dataclass
class RunResult:
    theta_bar: np.ndarray
    theta_last: np.ndarray
    accumulators: ScalingAccumulators
    realized_sigma1: float
    k: float

    def scaling_matrix(self, n: int) -> np.ndarray:
        return finalize_scaling(self.accumulators, self.theta_bar, n, self.accumulators.steps)


def clip_gradient(g: np.ndarray, tau: float) -> np.ndarray:
    """Rescale ``g`` to norm at most ``tau``, preserving direction."""
    if tau <= 0:
        raise ConfigError(f"clip threshold must be positive, got {tau}")
    g = np.asarray(g, dtype=np.float64)
    nrm = float(np.linalg.norm(g))
    if nrm <= tau:
        return g.copy()
    return g * (tau / nrm)


def _resolve_theta0(theta0: Optional[np.ndarray], p: int) -> np.ndarray:
    if theta0 is None:
        return np.zeros(p)
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (p,):
        raise ConfigError(f"theta0 has shape {theta0.shape}, expected ({p},)")
    return theta0.copy()


def dpsgd_run(data: Dataset, model: LossModel, cfg: OptimConfig, rng: RngState) -> RunResult:
    """Run T steps of (clipped) DP-SGD and return the averaged iterate.

    Deterministic given ``rng``; raises :class:`DivergenceError` carrying the
    step index if an iterate blows up.
    """
    n, p = data.n, model.p
    if data.p != p:
        raise ConfigError(f"data has {data.p} columns, model expects {p}")
    if cfg.scheme.kind is SchemeKind.SRSWOR and cfg.scheme.m > n:
        raise ConfigError(f"srswor batch size {cfg.scheme.m} exceeds n={n}")
    theta0 = _resolve_theta0(cfg.theta0, p)
    guard_sq = (DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(theta0)))) ** 2

    if cfg.scheme.kind in FIXED_SIZE_SCHEMES:
        idx = draw_batch_matrix(cfg.scheme, n, cfg.T, rng)
        if cfg.sigma1 > 0.0:
            noise = gaussian_matrix(rng, (cfg.T, p), 1.0)
        else:
            noise = np.zeros((1, p))
        y = data.y if data.y is not None else np.zeros(n)
        status, step, theta, S, G1, g2, g3 = _kernels.dpsgd_loop(
            _KIND_CODE[model.kind],
            np.ascontiguousarray(data.X),
            np.ascontiguousarray(y),
            idx,
            noise,
            float(cfg.eta),
            float(cfg.alpha),
            float(cfg.sigma1),
            float(cfg.clip) if cfg.clip is not None else 0.0,
            theta0,
            guard_sq,
        )
        if status == _kernels.STATUS_DIVERGED:
            raise DivergenceError(step)
        acc = ScalingAccumulators(S, G1, g2, int(g3), cfg.T, cfg.scheme.m)
        return RunResult(S / cfg.T, theta, acc, cfg.sigma1, cfg.T / n)

    return _poisson_run(data, model, cfg, rng, theta0, guard_sq)


def _poisson_run(data, model, cfg, rng, theta0, guard_sq) -> RunResult:
    # Variable batch size; an empty draw contributes no gradient but the
    # privacy noise is still added, keeping the noise schedule intact.
    n, p = data.n, model.p
    gen = rng.generator
    rate = cfg.scheme.m / n
    theta = theta0.copy()
    S = np.zeros(p)
    cS = np.zeros(p)
    G1 = np.zeros((p, p))
    cG1 = np.zeros((p, p))
    g2 = np.zeros(p)
    cg2 = np.zeros(p)
    g3 = 0
    for t in range(1, cfg.T + 1):
        members = np.flatnonzero(gen.random(n) < rate)
        if members.size:
            grads = gradient_batch(
                model, theta, data.X[members], None if data.y is None else data.y[members]
            )
            if cfg.clip is not None:
                norms = np.linalg.norm(grads, axis=1)
                scale = np.minimum(1.0, cfg.clip / np.maximum(norms, 1e-300))
                grads = grads * scale[:, None]
            gbar = grads.mean(axis=0)
        else:
            gbar = np.zeros(p)
        if cfg.sigma1 > 0.0:
            gbar = gbar + cfg.sigma1 * gen.standard_normal(p)
        theta = theta - cfg.eta * t ** (-cfg.alpha) * gbar
        nsq = float(theta @ theta)
        if not math.isfinite(nsq) or nsq > guard_sq:
            raise DivergenceError(t)
        _kahan_add(S, cS, theta)
        _kahan_add(G1, cG1, np.outer(S, S))
        _kahan_add(g2, cg2, t * S)
        g3 += t * t
    acc = ScalingAccumulators(S, G1, g2, g3, cfg.T, cfg.scheme.m)
    return RunResult(S / cfg.T, theta, acc, cfg.sigma1, cfg.T / n)


def _kahan_add(total: np.ndarray, comp: np.ndarray, value: np.ndarray) -> None:
    y = value - comp
    t = total + y
    comp[...] = (t - total) - y
    total[...] = t


def finalize_scaling(
    acc: ScalingAccumulators, theta_bar: np.ndarray, n: int, T: int
) -> np.ndarray:
    """Assemble the partial-sum scaling matrix from completed accumulators.

    With S_t = sum_{s<=t} theta^(s) this evaluates the closed form

        Vhat = (m / T^2) * sum_t (S_t - t * theta_bar)(S_t - t * theta_bar)'
             = (m / T^2) * (G1 - g2 b' - b g2' + g3 b b'),   b = theta_bar.

    The m/T^2 normalization makes sqrt(n) (theta_bar_j - theta*_j) /
    sqrt(Vhat_jj) asymptotically pivotal: the scaled partial-sum bridge has
    per-step noise covariance (V/m + sigma1^2 A^-2), so multiplying by the
    batch size recovers the V-scale bridge the critical values are built for.
    """
    if acc.steps != T:
        raise ConfigError(f"accumulators cover {acc.steps} steps, expected {T}")
    b = np.asarray(theta_bar, dtype=np.float64)
    G1 = acc.outer_sum
    g2 = acc.t_weighted_sum
    M = G1 - np.outer(g2, b) - np.outer(b, g2) + float(acc.t_sq_sum) * np.outer(b, b)
    M = (M + M.T) / 2.0
    return (acc.batch_size / T**2) * M


@dataclass
class GdConfig:
    """Full-batch noisy gradient descent settings (comparison baseline)."""

    T_gd: int
    mu: float
    eta: float
    delta_g: float
    theta0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.T_gd < 1:
            raise ConfigError(f"T_gd must be >= 1, got {self.T_gd}")
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.delta_g < 0:
            raise ConfigError(f"delta_g must be >= 0, got {self.delta_g}")


def gd_noise_sd(T_gd: int, delta_g: float, n: int, mu: float) -> float:
    """Per-step noise sd on the n-averaged gradient that makes T_gd releases
    compose to mu-GDP: sigma_gd = sqrt(2 T_gd) * delta_g / (n * mu)."""
    if math.isinf(mu):
        return 0.0
    return math.sqrt(2.0 * T_gd) * delta_g / (n * mu)


def dpgd_run(data: Dataset, model: LossModel, cfg_gd: GdConfig, rng: RngState) -> RunResult:
    """Noisy full-batch gradient descent; the final iterate is the estimator.

    theta^(t) = theta^(t-1) - eta * (grad L_n(theta^(t-1)) + w_t) with
    w_t ~ N(0, sigma_gd^2 I) and sigma_gd from :func:`gd_noise_sd`.
    """
    n, p = data.n, model.p
    theta = _resolve_theta0(cfg_gd.theta0, p)
    guard_sq = (DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(theta)))) ** 2
    sd = gd_noise_sd(cfg_gd.T_gd, cfg_gd.delta_g, n, cfg_gd.mu)
    S = np.zeros(p)
    cS = np.zeros(p)
    G1 = np.zeros((p, p))
    cG1 = np.zeros((p, p))
    g2 = np.zeros(p)
    cg2 = np.zeros(p)
    g3 = 0
    gen = rng.generator
    for t in range(1, cfg_gd.T_gd + 1):
        full_grad = gradient_batch(model, theta, data.X, data.y).mean(axis=0)
        if sd > 0.0:
            full_grad = full_grad + sd * gen.standard_normal(p)
        theta = theta - cfg_gd.eta * full_grad
        nsq = float(theta @ theta)
        if not math.isfinite(nsq) or nsq > guard_sq:
            raise DivergenceError(t)
        _kahan_add(S, cS, theta)
        _kahan_add(G1, cG1, np.outer(S, S))
        _kahan_add(g2, cg2, t * S)
        g3 += t * t
    acc = ScalingAccumulators(S, G1, g2, g3, cfg_gd.T_gd, n)
    return RunResult(S / cfg_gd.T_gd, theta, acc, sd, cfg_gd.T_gd / n)
