"""Loss models (mean, linear, logistic), their derivatives, and data handling.

Each model defines a convex per-record loss l(z; theta):

  mean      l(x; theta) = ||x - theta||^2
  linear    l((x, y); theta) = (y - x'theta)^2 / 2
  logistic  l((x, y); theta) = -[y x'theta - log(1 + exp(x'theta))]

Gradients and per-record Hessian contributions are exact derivatives of these
losses (checkable by finite differences). Sensitivity constants are reported
per record; averaged statistics divide by n at the point of use.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    DimensionError,
    EmptyFileError,
    MissingColumnError,
    NonNumericError,
)
from .sampling import RngState


class ModelKind(str, Enum):
    MEAN = "mean"
    LINEAR = "linear"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class DomainBounds:
    """Support bounds used to derive sensitivity constants.

    c_x bounds the sup-norm of covariates, c_y the response magnitude, and
    c_0 the l2 norm of the parameter vector.
    """

    c_x: float
    c_y: float = 1.0
    c_0: float = 1.0


@dataclass(frozen=True)
class LossModel:
    kind: ModelKind
    p: int
    bounds: Optional[DomainBounds] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.p < 1:
            raise ConfigError(f"parameter dimension must be >= 1, got {self.p}")


@dataclass(eq=False)
class Record:
    x: np.ndarray
    y: Optional[float] = None


@dataclass(eq=False)
class Dataset:
    """Immutable-by-convention sample of n records.

    ``X`` is (n, p); ``y`` is (n,) for regression models and None for mean
    estimation. ``meta`` records provenance such as effective bounds after
    CSV rescaling.
    """

    X: np.ndarray
    y: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise DimensionError(f"X must be (n, p) with n >= 1, got shape {self.X.shape}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.shape != (self.X.shape[0],):
                raise DimensionError(
                    f"y has shape {self.y.shape}, expected ({self.X.shape[0]},)"
                )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def record(self, i: int) -> Record:
        return Record(self.X[i], None if self.y is None else float(self.y[i]))

    def records(self) -> Iterator[Record]:
        for i in range(self.n):
            yield self.record(i)


@dataclass(frozen=True)
class SensitivityBounds:
    """Per-record l2 sensitivities of the gradient, Hessian, and score outer
    product. Sensitivities of n-averaged statistics are these divided by n."""

    delta_g: float
    delta_a: float
    delta_s: float


def _check_theta(model: LossModel, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.p,):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({model.p},)")
    return theta


def _check_record(model: LossModel, z: Record) -> tuple[np.ndarray, Optional[float]]:
    x = np.asarray(z.x, dtype=np.float64)
    if x.shape != (model.p,):
        raise DimensionError(f"record x has shape {x.shape}, expected ({model.p},)")
    if model.kind is not ModelKind.MEAN and z.y is None:
        raise DimensionError(f"{model.kind.value} record requires a response y")
    return x, z.y


def gradient(model: LossModel, theta: np.ndarray, z: Record) -> np.ndarray:
    """Per-record loss gradient at ``theta``."""
    theta = _check_theta(model, theta)
    x, y = _check_record(model, z)
    if model.kind is ModelKind.MEAN:
        return 2.0 * (theta - x)
    if model.kind is ModelKind.LINEAR:
        return -(y - x @ theta) * x
    return (expit(x @ theta) - y) * x


def hessian_contrib(model: LossModel, theta: np.ndarray, z: Record) -> np.ndarray:
    """Per-record Hessian of the loss at ``theta``; symmetric PSD (p, p)."""
    theta = _check_theta(model, theta)
    x, _ = _check_record(model, z)
    if model.kind is ModelKind.MEAN:
        return 2.0 * np.eye(model.p)
    if model.kind is ModelKind.LINEAR:
        return np.outer(x, x)
    s = expit(x @ theta)
    return s * (1.0 - s) * np.outer(x, x)


def score_outer(model: LossModel, theta: np.ndarray, z: Record) -> np.ndarray:
    """Outer product of the per-record gradient with itself (rank <= 1 PSD)."""
    g = gradient(model, theta, z)
    return np.outer(g, g)


def gradient_batch(
    model: LossModel, theta: np.ndarray, X: np.ndarray, y: Optional[np.ndarray]
) -> np.ndarray:
    """Per-record gradients for a batch, stacked as (batch, p)."""
    theta = _check_theta(model, theta)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.p:
        raise DimensionError(f"batch X has {X.shape[1]} columns, expected {model.p}")
    if model.kind is ModelKind.MEAN:
        return 2.0 * (theta[None, :] - X)
    if y is None:
        raise DimensionError(f"{model.kind.value} batch requires responses y")
    y = np.asarray(y, dtype=np.float64)
    if model.kind is ModelKind.LINEAR:
        return -(y - X @ theta)[:, None] * X
    return (expit(X @ theta) - y)[:, None] * X


def mean_hessian(model: LossModel, theta: np.ndarray, data: Dataset) -> np.ndarray:
    """Average of per-record Hessians over the dataset."""
    theta = _check_theta(model, theta)
    if model.kind is ModelKind.MEAN:
        return 2.0 * np.eye(model.p)
    X = data.X
    if model.kind is ModelKind.LINEAR:
        return (X.T @ X) / data.n
    w = expit(X @ theta)
    w = w * (1.0 - w)
    return (X * w[:, None]).T @ X / data.n


def mean_score_outer(model: LossModel, theta: np.ndarray, data: Dataset) -> np.ndarray:
    """Average of per-record score outer products over the dataset."""
    G = gradient_batch(model, theta, data.X, data.y)
    return G.T @ G / data.n


def sensitivity_bounds(
    model: LossModel,
    bounds: DomainBounds,
    clip: Optional[float] = None,
) -> SensitivityBounds:
    """Per-record sensitivity constants implied by the domain bounds.

    For each statistic the bound is twice the per-record supremum over the
    domain, evaluated in l2 (Frobenius for matrices):

      mean      delta_g = 4 sqrt(p) c_x
      linear    delta_g = 2 (c_y + sqrt(p) c_x c_0) sqrt(p) c_x
      logistic  delta_g = 2 sqrt(p) c_x

    When ``clip`` is given, the gradient sensitivity is additionally capped at
    ``2 * clip`` (a norm-clipped gradient can change by at most that much).
    """
    kind = model.kind
    p = model.p
    sp = math.sqrt(p)
    used = {"c_x": bounds.c_x}
    if kind is not ModelKind.LOGISTIC:
        used["c_0"] = bounds.c_0
    if kind is ModelKind.LINEAR:
        used["c_y"] = bounds.c_y
    for name, v in used.items():
        if not (v > 0 and math.isfinite(v)):
            raise ConfigError(f"bound {name} must be positive and finite, got {v}")

    if kind is ModelKind.MEAN:
        grad_sup = 2.0 * (sp * bounds.c_x + bounds.c_0)
        delta_g = 4.0 * sp * bounds.c_x
        delta_a = 0.0
        delta_s = 2.0 * grad_sup**2
    elif kind is ModelKind.LINEAR:
        resid_sup = bounds.c_y + sp * bounds.c_x * bounds.c_0
        delta_g = 2.0 * resid_sup * sp * bounds.c_x
        delta_a = 2.0 * p * bounds.c_x**2
        delta_s = 2.0 * resid_sup**2
    else:
        delta_g = 2.0 * sp * bounds.c_x
        delta_a = p * bounds.c_x**2 / 2.0
        delta_s = 2.0 * p * bounds.c_x**2
    if clip is not None:
        if clip <= 0:
            raise ConfigError(f"clip threshold must be positive, got {clip}")
        delta_g = min(delta_g, 2.0 * clip)
    return SensitivityBounds(delta_g=delta_g, delta_a=delta_a, delta_s=delta_s)


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic data generator settings.

    Covariates are N(0, Sigma) with Sigma identity or Toeplitz(rho); the mean
    model observes theta* + noise_sd * N(0, Sigma) directly. When ``theta`` is
    None the true parameter is drawn uniformly from [0, 1]^p (mean, linear) or
    [0, 1/2]^p (logistic).
    """

    kind: ModelKind
    n: int
    p: int
    cov: str = "identity"
    noise_sd: float = 1.0
    theta: Optional[Sequence[float]] = None
    toeplitz_rho: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.n < 1:
            raise ConfigError(f"sample size must be >= 1, got {self.n}")
        if self.p < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.p}")
        if self.cov not in ("identity", "toeplitz"):
            raise ConfigError(f"covariance structure must be identity|toeplitz, got {self.cov!r}")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.theta is not None and len(self.theta) != self.p:
            raise ConfigError(f"theta has length {len(self.theta)}, expected {self.p}")


def covariance_matrix(spec: SynthSpec) -> np.ndarray:
    if spec.cov == "identity":
        return np.eye(spec.p)
    idx = np.arange(spec.p)
    return spec.toeplitz_rho ** np.abs(idx[:, None] - idx[None, :])


def generate_synthetic(
    spec: SynthSpec, seed: Union[int, RngState]
) -> tuple[Dataset, np.ndarray]:
    """Generate a dataset and the true parameter it was built from.

    Deterministic given ``seed``: the same seed yields bit-identical output.
    """
    rng = seed if isinstance(seed, RngState) else RngState(seed)
    gen = rng.generator
    if spec.theta is not None:
        theta = np.asarray(spec.theta, dtype=np.float64)
    else:
        high = 0.5 if spec.kind is ModelKind.LOGISTIC else 1.0
        theta = gen.uniform(0.0, high, size=spec.p)
    sigma = covariance_matrix(spec)
    L = np.linalg.cholesky(sigma)
    Z = gen.standard_normal((spec.n, spec.p))
    if spec.kind is ModelKind.MEAN:
        X = theta[None, :] + spec.noise_sd * (Z @ L.T)
        return Dataset(X=X), theta
    X = Z @ L.T
    if spec.kind is ModelKind.LINEAR:
        e = gen.standard_normal(spec.n) * spec.noise_sd
        y = X @ theta + e
    else:
        prob = expit(X @ theta)
        y = (gen.random(spec.n) < prob).astype(np.float64)
    return Dataset(X=X, y=y), theta


@dataclass(frozen=True)
class CsvSchema:
    """Column selection and optional rescaling for CSV ingestion.

    ``rescale_c_x`` divides every covariate column by its max absolute value
    and multiplies by the target bound, so all |x_ij| <= rescale_c_x after
    loading; ``rescale_c_y`` does the same for the response. The effective
    bounds actually attained are recorded in ``Dataset.meta``.
    """

    response: str
    covariates: tuple[str, ...]
    intercept: bool = False
    rescale_c_x: Optional[float] = None
    rescale_c_y: Optional[float] = None


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Load a comma-separated file (header row, '.' decimals) into a Dataset."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFileError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        cols = {name: i for i, name in enumerate(header)}
        for name in (schema.response, *schema.covariates):
            if name not in cols:
                raise MissingColumnError(name)
        want = [schema.response, *schema.covariates]
        rows: list[list[float]] = []
        for r, raw in enumerate(reader):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            parsed = []
            for name in want:
                cell = raw[cols[name]].strip()
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise NonNumericError(name, r, cell) from None
            rows.append(parsed)
    if not rows:
        raise EmptyFileError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    y, X = arr[:, 0], arr[:, 1:]
    meta: dict = {"source": str(path), "columns": list(schema.covariates)}
    if schema.rescale_c_x is not None:
        scale = np.abs(X).max(axis=0)
        scale[scale == 0] = 1.0
        X = X / scale * schema.rescale_c_x
        meta["x_scale"] = scale.tolist()
    if schema.rescale_c_y is not None:
        y_scale = max(np.abs(y).max(), 1e-300)
        y = y / y_scale * schema.rescale_c_y
        meta["y_scale"] = float(y_scale)
    if schema.intercept:
        X = np.hstack([np.ones((X.shape[0], 1)), X])
        meta["columns"] = ["intercept"] + meta["columns"]
    meta["effective_c_x"] = float(np.abs(X).max()) if X.size else 0.0
    meta["effective_c_y"] = float(np.abs(y).max())
    return Dataset(X=X, y=y, meta=meta)
