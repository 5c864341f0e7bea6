"""Noise calibration under (eps, delta)-DP, Renyi DP, and Gaussian DP.

Three noise scales are calibrated against per-record sensitivities:

  sigma1  per-coordinate sd added to the batch-averaged gradient each step
  sigma2  sd of the symmetric noise added to the averaged Hessian estimate
  sigma3  sd of the symmetric noise added to the averaged score covariance

The gradient-noise calibration depends on the framework:

  (eps, delta)-DP (Poisson sampling):
      sigma1 = c2 * delta_g * m * sqrt(T * log(1/delta)) / (n * eps)
  (gamma, eps)-RDP (SRSWOR):
      sigma1 = c2 * delta_g * (m/n) * sqrt(T / eps)
      (the closed form carries no dependence on the order gamma; gamma is
      retained for reporting only)
  mu-GDP (SRSWOR):
      sigma1 = 2 * sigma * delta_g / m, where sigma solves
      mu = sqrt(2) * c * sqrt(exp(sigma^-2) * Phi(1.5/sigma)
                              + 3 * Phi(-0.5/sigma) - 2),  c = m sqrt(T) / n.

Matrix-release noise follows the Gaussian mechanism on n-averaged statistics
with per-record sensitivity ``delta``:

  (eps, delta)-DP:  sigma = 2 (delta/n) sqrt(2 log(2.5/delta_dp)) / eps
  RDP:              sigma = (delta/n) sqrt(gamma / eps)
  GDP:              sigma = (delta/n) sqrt(2) / mu
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr

from .errors import CalibrationError, ConfigError
from .sampling import RngState, gaussian


class PrivacyFramework:
    EPS_DELTA = "eps_delta"
    RDP = "rdp"
    GDP = "gdp"
    NONE = "none"

    ALL = (EPS_DELTA, RDP, GDP, NONE)


@dataclass(frozen=True)
class PrivacySpec:
    """Target privacy guarantee plus the two tunable calibration constants.

    c1 scales the admissible-regime check for the (eps, delta) and RDP
    calibrations; c2 scales their noise formulas. Both default to the
    conventional choices (1 and 2) and are exposed because the underlying
    accounting theorems leave them implementation-defined.
    """

    framework: str
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    gamma: Optional[float] = None
    mu: Optional[float] = None
    c1: float = 1.0
    c2: float = 2.0

    def __post_init__(self):
        if self.framework not in PrivacyFramework.ALL:
            raise ConfigError(f"unknown privacy framework {self.framework!r}")
        if self.framework == PrivacyFramework.EPS_DELTA:
            if not (self.epsilon and self.epsilon > 0):
                raise ConfigError("eps_delta requires epsilon > 0")
            if not (self.delta and 0 < self.delta < 1):
                raise ConfigError("eps_delta requires 0 < delta < 1")
        elif self.framework == PrivacyFramework.RDP:
            if not (self.epsilon and self.epsilon > 0):
                raise ConfigError("rdp requires epsilon > 0")
            if self.gamma is None or self.gamma < 1:
                raise ConfigError("rdp requires order gamma >= 1")
        elif self.framework == PrivacyFramework.GDP:
            if not (self.mu and self.mu > 0):
                raise ConfigError("gdp requires mu > 0")

    @classmethod
    def eps_delta(cls, epsilon: float, delta: float, c1: float = 1.0, c2: float = 2.0):
        return cls(PrivacyFramework.EPS_DELTA, epsilon=epsilon, delta=delta, c1=c1, c2=c2)

    @classmethod
    def rdp(cls, gamma: float, epsilon: float, c1: float = 1.0, c2: float = 2.0):
        return cls(PrivacyFramework.RDP, epsilon=epsilon, gamma=gamma, c1=c1, c2=c2)

    @classmethod
    def gdp(cls, mu: float):
        return cls(PrivacyFramework.GDP, mu=mu)

    @classmethod
    def none(cls):
        return cls(PrivacyFramework.NONE)


@dataclass(frozen=True)
class NoiseScales:
    sigma1: float
    sigma2: float = 0.0
    sigma3: float = 0.0

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "sigma3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


def _check_finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise ConfigError(f"{name} must be finite, got {v}")


def calibrate_sigma1(spec: PrivacySpec, delta_g: float, m: int, n: int, T: int) -> float:
    """Gradient-noise sd for one run of T noisy steps with batch size m.

    Emits a warning (not an error) when (eps, delta) or RDP is requested
    outside the admissible regime eps < c1 * m^2 * T / n^2.
    """
    _check_finite(delta_g=float(delta_g))
    if delta_g < 0:
        raise ConfigError(f"delta_g must be >= 0, got {delta_g}")
    if m < 1 or n < 1 or T < 1:
        raise ConfigError("m, n, T must all be >= 1")
    if spec.framework == PrivacyFramework.NONE:
        return 0.0
    if spec.framework == PrivacyFramework.EPS_DELTA:
        _warn_regime(spec, m, n, T)
        return spec.c2 * delta_g * m * math.sqrt(T * math.log(1.0 / spec.delta)) / (n * spec.epsilon)
    if spec.framework == PrivacyFramework.RDP:
        _warn_regime(spec, m, n, T)
        return spec.c2 * delta_g * (m / n) * math.sqrt(T / spec.epsilon)
    # GDP
    c = m * math.sqrt(T) / n
    sigma = gdp_sigma_from_mu(spec.mu, c)
    return 2.0 * sigma * delta_g / m


def _warn_regime(spec: PrivacySpec, m: int, n: int, T: int) -> None:
    limit = spec.c1 * m * m * T / (n * n)
    if spec.epsilon >= limit:
        warnings.warn(
            f"epsilon={spec.epsilon} is outside the admissible regime "
            f"epsilon < c1*m^2*T/n^2 = {limit:.4g}; the calibration formula "
            "may not certify the requested guarantee",
            stacklevel=3,
        )


_NORM_PDF0 = 1.0 / math.sqrt(2.0 * math.pi)


def gdp_log_mu_from_sigma(sigma: float, c: float) -> float:
    """log of :func:`gdp_mu_from_sigma`; stable over the whole sigma range."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if c <= 0:
        raise ConfigError(f"c must be positive, got {c}")
    u = 1.0 / sigma
    a = u * u
    if a > 50.0:
        # exp(a)*Phi(1.5u) dominates; fold the remaining terms in via log1p.
        log_lead = a + log_ndtr(1.5 * u)
        rest = 3.0 * ndtr(-0.5 * u) - 2.0
        log_rad = log_lead + math.log1p(rest * math.exp(-log_lead))
    elif u < 0.01:
        # the direct form cancels catastrophically for large sigma; its even
        # part is (e^{u^2}-1)/2 exactly and the odd part starts at phi(0) u^3
        rad = math.expm1(a) / 2.0 + _NORM_PDF0 * (u**3 + 0.375 * u**5)
        log_rad = math.log(rad)
    else:
        rad = math.exp(a) * ndtr(1.5 * u) + 3.0 * ndtr(-0.5 * u) - 2.0
        log_rad = math.log(rad)
    return 0.5 * math.log(2.0) + math.log(c) + 0.5 * log_rad


def gdp_mu_from_sigma(sigma: float, c: float) -> float:
    """GDP parameter reached by per-step noise multiplier ``sigma`` at
    sampling constant ``c = m sqrt(T) / n``.

    Strictly decreasing in sigma, tending to 0 as sigma -> infinity. May
    overflow to inf for sigma below ~0.027; use the log form when composing.
    """
    log_mu = gdp_log_mu_from_sigma(sigma, c)
    if log_mu > 709.0:
        return math.inf
    return math.exp(log_mu)


def gdp_sigma_from_mu(mu: float, c: float) -> float:
    """Invert :func:`gdp_mu_from_sigma` in sigma by bracketed root-finding.

    The map is solved in log space (strictly monotone, no overflow), with the
    bracket expanded on either side until it straddles the target.
    """
    if not (mu > 0 and math.isfinite(mu)):
        raise ConfigError(f"mu must be positive and finite, got {mu}")
    if c <= 0:
        raise ConfigError(f"c must be positive, got {c}")
    target = math.log(mu)
    lo, hi = 0.02, 100.0
    while gdp_log_mu_from_sigma(lo, c) < target:
        lo /= 10.0
        if lo < 1e-9:
            raise CalibrationError(f"mu={mu} unreachable for c={c} (sigma underflow)")
    while gdp_log_mu_from_sigma(hi, c) > target:
        hi *= 10.0
        if hi > 1e306:
            raise CalibrationError(f"mu={mu} unreachable for c={c} (sigma overflow)")
    sigma = brentq(
        lambda s: gdp_log_mu_from_sigma(s, c) - target, lo, hi, rtol=8.9e-16, maxiter=200
    )
    return float(sigma)


def calibrate_matrix_noise(spec: PrivacySpec, delta: float, n: int) -> float:
    """Minimal per-entry noise sd for releasing an n-averaged statistic whose
    per-record sensitivity is ``delta``."""
    _check_finite(delta=float(delta))
    if delta < 0:
        raise ConfigError(f"sensitivity must be >= 0, got {delta}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if spec.framework == PrivacyFramework.NONE or delta == 0.0:
        return 0.0
    if spec.framework == PrivacyFramework.EPS_DELTA:
        return 2.0 * (delta / n) * math.sqrt(2.0 * math.log(2.5 / spec.delta)) / spec.epsilon
    if spec.framework == PrivacyFramework.RDP:
        return (delta / n) * math.sqrt(spec.gamma / spec.epsilon)
    return (delta / n) * math.sqrt(2.0) / spec.mu


def perturb_symmetric(M: np.ndarray, sd: float, rng: RngState) -> np.ndarray:
    """Add symmetric Gaussian noise to a symmetric matrix.

    Upper-triangle entries (diagonal included) receive i.i.d. N(0, sd^2)
    noise mirrored below the diagonal, so the output stays exactly symmetric;
    ``sd = 0`` returns the input unchanged (as a copy).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    if sd < 0:
        raise ConfigError(f"sd must be >= 0, got {sd}")
    out = M.copy()
    if sd == 0.0:
        return out
    p = M.shape[0]
    iu = np.triu_indices(p)
    noise = gaussian(rng, len(iu[0]), sd)
    E = np.zeros_like(M)
    E[iu] = noise
    E = E + np.triu(E, 1).T
    return out + E


def split_budget(spec: PrivacySpec, weights: Sequence[float]) -> list[PrivacySpec]:
    """Divide one privacy budget across several releases.

    GDP budgets compose in quadrature, so weights apply to mu^2; (eps, delta)
    and RDP budgets compose additively, so weights apply to epsilon (and
    delta) directly. The composed total of the returned specs equals ``spec``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) < 1 or np.any(w <= 0):
        raise ConfigError("weights must be a non-empty sequence of positive numbers")
    frac = w / w.sum()
    if spec.framework == PrivacyFramework.NONE:
        return [spec] * len(w)
    if spec.framework == PrivacyFramework.GDP:
        return [PrivacySpec.gdp(math.sqrt(f) * spec.mu) for f in frac]
    if spec.framework == PrivacyFramework.EPS_DELTA:
        return [
            PrivacySpec.eps_delta(f * spec.epsilon, f * spec.delta, spec.c1, spec.c2)
            for f in frac
        ]
    return [PrivacySpec.rdp(spec.gamma, f * spec.epsilon, spec.c1, spec.c2) for f in frac]


@dataclass(frozen=True)
class BudgetReport:
    """How the total privacy expenditure splits across named releases.

    GDP releases compose as sqrt(sum mu_i^2); (eps, delta) releases compose by
    basic (additive, conservative) composition; RDP releases add epsilon at a
    common order.
    """

    framework: str
    releases: tuple[tuple[str, dict], ...]
    total: dict


def budget_report(spec: PrivacySpec, usage: Sequence[tuple[str, PrivacySpec]]) -> BudgetReport:
    """Summarize per-release budgets and their composed total."""
    releases = []
    for name, rel in usage:
        if rel.framework != spec.framework:
            raise ConfigError(
                f"release {name!r} uses framework {rel.framework!r}, expected {spec.framework!r}"
            )
        releases.append((name, _params(rel)))
    if spec.framework == PrivacyFramework.NONE:
        total = {}
    elif spec.framework == PrivacyFramework.GDP:
        total = {"mu": math.sqrt(sum(rel.mu**2 for _, rel in usage))}
    elif spec.framework == PrivacyFramework.EPS_DELTA:
        total = {
            "epsilon": sum(rel.epsilon for _, rel in usage),
            "delta": sum(rel.delta for _, rel in usage),
        }
    else:
        gammas = {rel.gamma for _, rel in usage}
        if len(gammas) > 1:
            raise ConfigError("RDP releases must share a common order gamma")
        total = {"gamma": usage[0][1].gamma, "epsilon": sum(rel.epsilon for _, rel in usage)}
    return BudgetReport(framework=spec.framework, releases=tuple(releases), total=total)


def _params(spec: PrivacySpec) -> dict:
    if spec.framework == PrivacyFramework.GDP:
        return {"mu": spec.mu}
    if spec.framework == PrivacyFramework.EPS_DELTA:
        return {"epsilon": spec.epsilon, "delta": spec.delta}
    if spec.framework == PrivacyFramework.RDP:
        return {"gamma": spec.gamma, "epsilon": spec.epsilon}
    return {}
