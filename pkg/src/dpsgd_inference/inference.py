"""Confidence intervals from a completed run.

Two constructions are provided, each with a finite-sample correction for the
injected privacy noise:

* plug-in: privatized Hessian and score-covariance estimates give
  Vtilde = Atilde^-1 Stilde Atilde^-1; intervals use normal quantiles with
  half-width z * sqrt(Vtilde_jj / n), widened by sigma1^2 (Atilde^-2)_jj / k
  when corrected.

* random scaling: the partial-sum matrix Vhat studentizes the estimate
  without releasing any covariance estimate; intervals use Monte Carlo
  critical values of Z * [int_0^1 {W(r) - r W(1)}^2 dr]^(-1/2) and, when
  corrected, shrink by {Vtilde_jj / (Vtilde_jj + sigma1^2 (Atilde^-1_jj)^2)}^(1/2).

The corrections deliberately mirror their source displays: the plug-in term
divides by k = T/n and uses the squared inverse matrix, while the random
scaling factor uses the squared (j, j) entry of the inverse and no k. A
``harmonize`` switch makes the latter use the plug-in quantity instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, SingularMatrixError
from .models import Dataset, LossModel, ModelKind, mean_hessian, mean_score_outer
from .privacy import PrivacySpec, calibrate_matrix_noise, perturb_symmetric
from .sampling import RngState

#: default eigenvalue floor suggested when Atilde is numerically singular
DEFAULT_EIG_FLOOR = 1e-3

PLUGIN = "plugin"
PLUGIN_CORRECTED = "plugin_corrected"
RANDOM_SCALING = "random_scaling"
RANDOM_SCALING_CORRECTED = "random_scaling_corrected"
ORACLE = "oracle"

METHODS = (PLUGIN, PLUGIN_CORRECTED, RANDOM_SCALING, RANDOM_SCALING_CORRECTED, ORACLE)


@dataclass
class CovarianceEstimates:
    """Private covariance pieces: Atilde, Stilde, Vtilde, and optionally the
    random-scaling matrix Vhat."""

    A_tilde: np.ndarray
    S_tilde: np.ndarray
    V_tilde: np.ndarray
    V_hat: Optional[np.ndarray] = None
    floored: bool = False
    sigma2: float = 0.0
    sigma3: float = 0.0


@dataclass(frozen=True)
class ConfidenceInterval:
    j: int
    lower: float
    upper: float
    method: str
    level: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigError(f"interval has lower {self.lower} > upper {self.upper}")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _floored_inverse(A: np.ndarray, eig_floor: Optional[float]) -> tuple[np.ndarray, bool]:
    """Invert a symmetric matrix, optionally raising small eigenvalues first."""
    if eig_floor is None:
        try:
            cond = np.linalg.cond(A)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularMatrixError(
                "Hessian estimate is numerically singular; pass an eigenvalue "
                f"floor (e.g. {DEFAULT_EIG_FLOOR}) to regularize"
            )
        return np.linalg.inv(A), False
    w, Q = np.linalg.eigh(A)
    floored = bool(np.any(w < eig_floor))
    w = np.maximum(w, eig_floor)
    return (Q / w) @ Q.T, floored


def plugin_covariance(
    data: Dataset,
    model: LossModel,
    theta_bar: np.ndarray,
    spec: PrivacySpec,
    rng: RngState,
    *,
    delta_a: Optional[float] = None,
    delta_s: Optional[float] = None,
    sigma2: Optional[float] = None,
    sigma3: Optional[float] = None,
    eig_floor: Optional[float] = None,
) -> CovarianceEstimates:
    """Privatized plug-in covariance Vtilde = Atilde^-1 Stilde Atilde^-1.

    Noise scales may be passed directly (sigma2/sigma3) or calibrated here
    from per-record sensitivities (delta_a/delta_s) under ``spec``. The
    Hessian inverse optionally floors eigenvalues at ``eig_floor``; whether
    flooring activated is recorded on the result.
    """
    theta_bar = np.asarray(theta_bar, dtype=np.float64)
    if sigma2 is None:
        if delta_a is None:
            raise ConfigError("provide sigma2 or delta_a")
        sigma2 = calibrate_matrix_noise(spec, delta_a, data.n)
    if sigma3 is None:
        if delta_s is None:
            raise ConfigError("provide sigma3 or delta_s")
        sigma3 = calibrate_matrix_noise(spec, delta_s, data.n)
    A_hat = mean_hessian(model, theta_bar, data)
    S_hat = mean_score_outer(model, theta_bar, data)
    A_tilde = perturb_symmetric(A_hat, sigma2, rng)
    S_tilde = perturb_symmetric(S_hat, sigma3, rng)
    A_inv, floored = _floored_inverse(A_tilde, eig_floor)
    V_tilde = A_inv @ S_tilde @ A_inv
    V_tilde = (V_tilde + V_tilde.T) / 2.0
    return CovarianceEstimates(
        A_tilde=A_tilde,
        S_tilde=S_tilde,
        V_tilde=V_tilde,
        floored=floored,
        sigma2=sigma2,
        sigma3=sigma3,
    )


def _z_quantile(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ConfigError(f"confidence level must be in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


def plugin_ci(
    theta_bar: np.ndarray, V_tilde: np.ndarray, n: int, level: float
) -> list[ConfidenceInterval]:
    """Normal-quantile intervals theta_bar_j +- z * sqrt(Vtilde_jj / n)."""
    theta_bar = np.asarray(theta_bar, dtype=np.float64)
    z = _z_quantile(level)
    diag = np.diag(np.asarray(V_tilde, dtype=np.float64))
    if np.any(diag < 0):
        raise SingularMatrixError(
            "Vtilde has a negative diagonal entry (matrix noise dominates); "
            "enable eigenvalue flooring or lower sigma2/sigma3"
        )
    half = z * np.sqrt(diag / n)
    return [
        ConfidenceInterval(j, float(theta_bar[j] - half[j]), float(theta_bar[j] + half[j]),
                           PLUGIN, level)
        for j in range(len(theta_bar))
    ]


def plugin_ci_corrected(
    theta_bar: np.ndarray,
    V_tilde: np.ndarray,
    A_tilde: np.ndarray,
    sigma1: float,
    k: float,
    n: int,
    level: float,
    eig_floor: Optional[float] = None,
) -> list[ConfidenceInterval]:
    """Plug-in intervals widened for the injected gradient noise:
    half-width z * sqrt((Vtilde_jj + sigma1^2 (Atilde^-2)_jj / k) / n)."""
    if k <= 0:
        raise ConfigError(f"k = T/n must be positive, got {k}")
    theta_bar = np.asarray(theta_bar, dtype=np.float64)
    z = _z_quantile(level)
    A_inv, _ = _floored_inverse(np.asarray(A_tilde, dtype=np.float64), eig_floor)
    corr = sigma1**2 * np.diag(A_inv @ A_inv) / k
    diag = np.diag(np.asarray(V_tilde, dtype=np.float64)) + corr
    if np.any(diag < 0):
        raise SingularMatrixError("corrected variance is negative; check inputs")
    half = z * np.sqrt(diag / n)
    return [
        ConfidenceInterval(j, float(theta_bar[j] - half[j]), float(theta_bar[j] + half[j]),
                           PLUGIN_CORRECTED, level)
        for j in range(len(theta_bar))
    ]


@dataclass(frozen=True)
class PivotTable:
    """Two-sided critical values for the self-normalized pivot
    Z * [int_0^1 {W(r) - r W(1)}^2 dr]^(-1/2), with generation metadata."""

    levels: tuple[float, ...]
    critvals: tuple[float, ...]
    steps: int
    reps: int
    seed: int

    def __post_init__(self):
        lv = np.asarray(self.levels)
        cv = np.asarray(self.critvals)
        if lv.shape != cv.shape or lv.ndim != 1 or len(lv) < 2:
            raise ConfigError("levels and critvals must be equal-length 1-d sequences")
        if np.any(np.diff(lv) <= 0) or np.any(np.diff(cv) <= 0):
            raise ConfigError("levels and critvals must both be strictly increasing")

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "levels": list(self.levels),
                "critvals": list(self.critvals),
                "steps": self.steps,
                "reps": self.reps,
                "seed": self.seed,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PivotTable":
        obj = json.loads(text)
        return cls(
            levels=tuple(obj["levels"]),
            critvals=tuple(obj["critvals"]),
            steps=int(obj["steps"]),
            reps=int(obj["reps"]),
            seed=int(obj["seed"]),
        )


DEFAULT_TABLE_LEVELS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.975, 0.99, 0.995)


def simulate_pivot_samples(reps: int, steps: int, rng: RngState, batch: int = 1000) -> np.ndarray:
    """Monte Carlo draws of |Z| * [int_0^1 {W(r) - r W(1)}^2 dr]^(-1/2).

    The Wiener path is simulated on a uniform grid of ``steps`` points; the
    integral is the Riemann sum of the squared bridge over that grid.
    """
    gen = rng.generator
    out = np.empty(reps)
    t_grid = np.arange(1, steps + 1) / steps
    done = 0
    while done < reps:
        b = min(batch, reps - done)
        incr = gen.standard_normal((b, steps)) * math.sqrt(1.0 / steps)
        W = np.cumsum(incr, axis=1)
        bridge = W - t_grid[None, :] * W[:, -1:]
        integral = (bridge**2).mean(axis=1)
        z = gen.standard_normal(b)
        out[done:done + b] = np.abs(z) / np.sqrt(integral)
        done += b
    return out


def generate_pivot_table(
    levels: Sequence[float] = DEFAULT_TABLE_LEVELS,
    reps: int = 1_000_000,
    steps: int = 10_000,
    seed: int = 202406,
) -> PivotTable:
    """Build a pivot table by direct simulation; fully reproducible from its
    recorded metadata."""
    samples = simulate_pivot_samples(reps, steps, RngState(seed))
    critvals = np.quantile(samples, np.asarray(levels))
    return PivotTable(
        levels=tuple(float(x) for x in levels),
        critvals=tuple(float(x) for x in critvals),
        steps=steps,
        reps=reps,
        seed=seed,
    )


def load_default_pivot_table() -> PivotTable:
    text = resources.files("dpsgd_inference").joinpath("data/pivot_table.json").read_text()
    return PivotTable.from_json(text)


def pivot_critical_value(level: float, table: PivotTable) -> float:
    """Interpolated two-sided critical value at confidence ``level``."""
    lv = np.asarray(table.levels)
    if not lv[0] <= level <= lv[-1]:
        raise ConfigError(
            f"level {level} outside table range [{lv[0]}, {lv[-1]}]"
        )
    return float(np.interp(level, lv, np.asarray(table.critvals)))


def random_scaling_ci(
    theta_bar: np.ndarray, V_hat: np.ndarray, n: int, level: float, table: PivotTable
) -> list[ConfidenceInterval]:
    """Self-normalized intervals theta_bar_j +- c_level * sqrt(Vhat_jj / n)."""
    theta_bar = np.asarray(theta_bar, dtype=np.float64)
    diag = np.diag(np.asarray(V_hat, dtype=np.float64)).copy()
    assert np.all(diag >= -1e-12), "scaling matrix must be PSD"
    diag = np.maximum(diag, 0.0)
    c = pivot_critical_value(level, table)
    half = c * np.sqrt(diag / n)
    return [
        ConfidenceInterval(j, float(theta_bar[j] - half[j]), float(theta_bar[j] + half[j]),
                           RANDOM_SCALING, level)
        for j in range(len(theta_bar))
    ]


def random_scaling_ci_corrected(
    theta_bar: np.ndarray,
    V_hat: np.ndarray,
    V_tilde: np.ndarray,
    A_tilde: np.ndarray,
    sigma1: float,
    n: int,
    level: float,
    table: PivotTable,
    *,
    k: Optional[float] = None,
    harmonize: bool = False,
    eig_floor: Optional[float] = None,
) -> list[ConfidenceInterval]:
    """Random-scaling intervals shrunk by the estimated share of the scaling
    matrix attributable to privacy noise.

    The default factor is {Vtilde_jj / (Vtilde_jj + sigma1^2 (Atilde^-1_jj)^2)}^(1/2).
    With ``harmonize=True`` the noise term becomes sigma1^2 (Atilde^-2)_jj / k,
    the same quantity the corrected plug-in interval adds.
    """
    theta_bar = np.asarray(theta_bar, dtype=np.float64)
    base = random_scaling_ci(theta_bar, V_hat, n, level, table)
    A_inv, _ = _floored_inverse(np.asarray(A_tilde, dtype=np.float64), eig_floor)
    if harmonize:
        if k is None or k <= 0:
            raise ConfigError("harmonized correction requires k = T/n > 0")
        noise_term = sigma1**2 * np.diag(A_inv @ A_inv) / k
    else:
        noise_term = sigma1**2 * np.diag(A_inv) ** 2
    v_diag = np.diag(np.asarray(V_tilde, dtype=np.float64))
    if np.any(v_diag < 0):
        raise SingularMatrixError("Vtilde has a negative diagonal entry")
    factor = np.sqrt(v_diag / (v_diag + noise_term))
    out = []
    for j, ci in enumerate(base):
        mid = theta_bar[j]
        half = (ci.upper - ci.lower) / 2.0 * factor[j]
        out.append(
            ConfidenceInterval(j, float(mid - half), float(mid + half),
                               RANDOM_SCALING_CORRECTED, ci.level)
        )
    return out


def oracle_ci(data: Dataset, model: LossModel, level: float) -> tuple[np.ndarray, list[ConfidenceInterval]]:
    """Classical non-private full-sample estimate and normal-theory intervals.

    mean      sample mean with sample covariance
    linear    OLS with V = sigmahat^2 (X'X/n)^-1
    logistic  Newton MLE with V = Ahat(thetahat)^-1
    """
    n, p = data.n, model.p
    z = _z_quantile(level)
    if model.kind is ModelKind.MEAN:
        theta = data.X.mean(axis=0)
        V = np.cov(data.X, rowvar=False, ddof=1).reshape(p, p)
    elif model.kind is ModelKind.LINEAR:
        XtX = data.X.T @ data.X
        theta = np.linalg.solve(XtX, data.X.T @ data.y)
        resid = data.y - data.X @ theta
        dof = max(n - p, 1)
        sigma2_hat = float(resid @ resid) / dof
        V = sigma2_hat * np.linalg.inv(XtX / n)
    else:
        theta = _logistic_mle(data)
        A_hat = mean_hessian(model, theta, data)
        V = np.linalg.inv(A_hat)
    half = z * np.sqrt(np.diag(V) / n)
    cis = [
        ConfidenceInterval(j, float(theta[j] - half[j]), float(theta[j] + half[j]), ORACLE, level)
        for j in range(p)
    ]
    return theta, cis


def _logistic_mle(data: Dataset, max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    from scipy.special import expit

    X, y = data.X, data.y
    theta = np.zeros(data.p)
    for _ in range(max_iter):
        mu = expit(X @ theta)
        grad = X.T @ (mu - y) / data.n
        w = np.maximum(mu * (1.0 - mu), 1e-12)
        H = (X * w[:, None]).T @ X / data.n
        step = np.linalg.solve(H, grad)
        theta = theta - step
        if float(np.linalg.norm(step)) < tol:
            break
    return theta
