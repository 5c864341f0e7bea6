"""Monte Carlo experiment driver and report emission.

Four experiment kinds are supported:

  coverage       coverage rate and interval length of all interval methods
                 against fresh synthetic data, one setting per sample size
  mse_vs_iters   mean squared error of private/randomized/cyclic averaged SGD
                 against the full-sample benchmark as iterations grow
  compare_gd     private SGD (iterations n^kappa) versus private full-batch
                 gradient descent (iterations T2) on RMSE/coverage/length
  example1       variance-inflation factor of the randomized rule relative to
                 the cyclic rule for mean estimation on a (k, m) grid

Replications are embarrassingly parallel: replication r of setting s draws
every random quantity from the stream (master_seed, (s, r)), so worker count
never affects results, and aggregation walks replications in index order so
reports are byte-identical for any ``--workers``.
"""

from __future__ import annotations

import csv as csv_mod
import hashlib
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DpsgdError
from .inference import (
    METHODS,
    ORACLE,
    PLUGIN,
    PLUGIN_CORRECTED,
    RANDOM_SCALING,
    ConfidenceInterval,
    CovarianceEstimates,
    PivotTable,
    load_default_pivot_table,
    oracle_ci,
    plugin_ci,
    plugin_ci_corrected,
    plugin_covariance,
    random_scaling_ci,
    random_scaling_ci_corrected,
    _z_quantile,
)
from .models import LossModel, ModelKind, SynthSpec, generate_synthetic
from .optimizer import GdConfig, OptimConfig, dpgd_run, dpsgd_run, finalize_scaling, gd_noise_sd
from .privacy import (
    BudgetReport,
    NoiseScales,
    PrivacySpec,
    budget_report,
    calibrate_matrix_noise,
    calibrate_sigma1,
    split_budget,
)
from .sampling import RngState, SamplingScheme

EXPERIMENTS = ("coverage", "mse_vs_iters", "compare_gd", "example1")

CSV_COLUMNS = [
    "experiment", "model", "cov", "n", "setting", "method", "coordinate",
    "coverage", "coverage_se", "mean_length", "rmse", "mse", "var_factor",
    "ratio_to_cyclic", "reps", "failures", "config_digest",
]

CONFIG_VERSION = 1


@dataclass
class ExperimentConfig:
    """Parsed experiment settings; see README for the file schema."""

    experiment: str
    seed: int = 20250811
    model: str = "linear"
    p: int = 3
    n: tuple[int, ...] = (400,)
    cov: str = "identity"
    noise_sd: float = 1.0
    theta: Optional[tuple[float, ...]] = None
    privacy: PrivacySpec = field(default_factory=lambda: PrivacySpec.gdp(2.0))
    budget_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    delta_g: float = 2.0
    delta_a: float = 2.0
    delta_s: float = 2.0
    eta: float = 0.5
    alpha: float = 0.501
    kappa: Optional[float] = 2.0
    k: Optional[float] = None
    m: int = 1
    scheme: str = "srswor"
    clip: Optional[float] = None
    eig_floor: Optional[float] = None
    replications: int = 500
    level: float = 0.95
    methods: tuple[str, ...] = METHODS
    harmonize_rs: bool = False
    km_grid: tuple[tuple[float, int], ...] = ((1, 1), (2, 5), (5, 2))
    kappa_grid: tuple[float, ...] = (1.0, 1.15, 1.3, 1.5, 1.75, 2.0)
    t2_grid: tuple[int, ...] = (1, 2, 5, 10, 20, 30)
    gd_eta: float = 0.08
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        self.model = ModelKind(self.model).value
        self.n = tuple(int(v) for v in self.n)
        if any(v < 1 for v in self.n):
            raise ConfigError("all sample sizes must be >= 1")
        if self.theta is not None:
            self.theta = tuple(float(v) for v in self.theta)
        self.methods = tuple(self.methods)
        for meth in self.methods:
            if meth not in METHODS:
                raise ConfigError(f"unknown method {meth!r}")
        if (self.kappa is None) == (self.k is None):
            raise ConfigError("exactly one of kappa (T = n^kappa) or k (T = k*n) must be set")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must be in (0, 1)")
        self.km_grid = tuple((float(k), int(m)) for k, m in self.km_grid)
        self.kappa_grid = tuple(float(v) for v in self.kappa_grid)
        self.t2_grid = tuple(int(v) for v in self.t2_grid)
        self.budget_weights = tuple(float(w) for w in self.budget_weights)
        if len(self.budget_weights) != 3:
            raise ConfigError("budget_weights must have three entries (estimate, hessian, score)")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        d = dict(raw)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        if "privacy" in d and isinstance(d["privacy"], dict):
            d["privacy"] = PrivacySpec(**d["privacy"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def canonical_dict(self) -> dict:
        d = asdict(self)
        d["version"] = CONFIG_VERSION
        return d

    def digest(self) -> str:
        text = json.dumps(self.canonical_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def iterations(self, n: int) -> int:
        if self.kappa is not None:
            return max(1, round(n**self.kappa))
        return max(1, round(self.k * n))

    def loss_model(self) -> LossModel:
        return LossModel(ModelKind(self.model), self.p)


def resolve_noise_scales(cfg: ExperimentConfig, n: int, T: int) -> tuple[NoiseScales, BudgetReport]:
    """Split the configured budget across the three releases and calibrate."""
    specs = split_budget(cfg.privacy, cfg.budget_weights)
    sigma1 = calibrate_sigma1(specs[0], cfg.delta_g, cfg.m, n, T)
    sigma2 = calibrate_matrix_noise(specs[1], cfg.delta_a, n)
    sigma3 = calibrate_matrix_noise(specs[2], cfg.delta_s, n)
    report = budget_report(
        cfg.privacy,
        [("estimate", specs[0]), ("hessian", specs[1]), ("score", specs[2])],
    )
    return NoiseScales(sigma1=sigma1, sigma2=sigma2, sigma3=sigma3), report


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    config_digest: str
    settings: list[dict]
    failures: list[dict]
    wall_time_s: float
    generated_at: str

    def to_dict(self) -> dict:
        return asdict(self)


def _parallel_map(fn, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


def _warm_kernels() -> None:
    # Trigger jit compilation once in the parent so forked workers inherit it.
    spec = SynthSpec(ModelKind.LINEAR, 4, 2, theta=(0.1, 0.2))
    data, _ = generate_synthetic(spec, RngState(0))
    cfg = OptimConfig(eta=0.1, alpha=0.6, T=2, scheme=SamplingScheme("srswor", 1))
    dpsgd_run(data, LossModel(ModelKind.LINEAR, 2), cfg, RngState(0))


# ----------------------------------------------------------------------------
# coverage
# ----------------------------------------------------------------------------


def _coverage_rep(cfg: ExperimentConfig, setting_idx: int, n: int, rep: int) -> dict:
    rng = RngState(cfg.seed, (setting_idx, rep))
    kind = ModelKind(cfg.model)
    spec = SynthSpec(kind, n, cfg.p, cov=cfg.cov, noise_sd=cfg.noise_sd, theta=cfg.theta)
    data, theta_star = generate_synthetic(spec, rng.child(0))
    model = cfg.loss_model()
    out: dict = {"rep": rep, "methods": {}}

    try:
        if ORACLE in cfg.methods:
            theta_o, cis = oracle_ci(data, model, cfg.level)
            out["methods"][ORACLE] = _ci_record(cis, theta_star)
            out["err_oracle"] = (theta_o - theta_star).tolist()
        dp_methods = [m for m in cfg.methods if m != ORACLE]
        if dp_methods:
            T = cfg.iterations(n)
            scales, _ = resolve_noise_scales(cfg, n, T)
            run_cfg = OptimConfig(
                eta=cfg.eta, alpha=cfg.alpha, T=T,
                scheme=SamplingScheme(cfg.scheme, cfg.m),
                sigma1=scales.sigma1, clip=cfg.clip,
            )
            result = dpsgd_run(data, model, run_cfg, rng.child(1))
            v_hat = finalize_scaling(result.accumulators, result.theta_bar, n, T)
            cov_est = plugin_covariance(
                data, model, result.theta_bar, cfg.privacy, rng.child(2),
                sigma2=scales.sigma2, sigma3=scales.sigma3, eig_floor=cfg.eig_floor,
            )
            cov_est.V_hat = v_hat
            out["err_dpsgd"] = (result.theta_bar - theta_star).tolist()
            table = _PIVOT_TABLE.get()
            for meth in dp_methods:
                if meth == PLUGIN:
                    cis = plugin_ci(result.theta_bar, cov_est.V_tilde, n, cfg.level)
                elif meth == PLUGIN_CORRECTED:
                    cis = plugin_ci_corrected(
                        result.theta_bar, cov_est.V_tilde, cov_est.A_tilde,
                        scales.sigma1, result.k, n, cfg.level, eig_floor=cfg.eig_floor,
                    )
                elif meth == RANDOM_SCALING:
                    cis = random_scaling_ci(result.theta_bar, v_hat, n, cfg.level, table)
                else:
                    cis = random_scaling_ci_corrected(
                        result.theta_bar, v_hat, cov_est.V_tilde, cov_est.A_tilde,
                        scales.sigma1, n, cfg.level, table,
                        k=result.k, harmonize=cfg.harmonize_rs, eig_floor=cfg.eig_floor,
                    )
                out["methods"][meth] = _ci_record(cis, theta_star)
    except (DpsgdError, np.linalg.LinAlgError) as exc:
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}
    return out


class _LazyPivotTable:
    """Load the packaged pivot table once per process."""

    def __init__(self):
        self._table: Optional[PivotTable] = None

    def get(self) -> PivotTable:
        if self._table is None:
            self._table = load_default_pivot_table()
        return self._table


_PIVOT_TABLE = _LazyPivotTable()


def _ci_record(cis, theta_star) -> dict:
    return {
        "covered": [bool(ci.covers(theta_star[ci.j])) for ci in cis],
        "length": [float(ci.length) for ci in cis],
    }


def _aggregate_coverage(cfg: ExperimentConfig, n: int, records: list[dict]) -> dict:
    ok = [r for r in records if "error" not in r]
    failures = [r for r in records if "error" in r]
    p = cfg.p
    alpha = 1.0 - cfg.level
    reps = len(ok)
    se = math.sqrt(alpha * (1.0 - alpha) / reps) if reps else float("nan")
    methods_summary = {}
    for meth in cfg.methods:
        cov = np.zeros(p)
        length = np.zeros(p)
        count = 0
        for r in ok:
            rec = r["methods"].get(meth)
            if rec is None:
                continue
            cov += np.asarray(rec["covered"], dtype=float)
            length += np.asarray(rec["length"], dtype=float)
            count += 1
        if count == 0:
            continue
        err_key = "err_oracle" if meth == ORACLE else "err_dpsgd"
        errs = np.asarray([r[err_key] for r in ok if err_key in r])
        rmse = np.sqrt((errs**2).mean(axis=0)) if errs.size else np.full(p, np.nan)
        methods_summary[meth] = {
            "coverage": (cov / count).tolist(),
            "coverage_avg": float(cov.sum() / (count * p)),
            "coverage_se": se,
            "mean_length": (length / count).tolist(),
            "mean_length_avg": float(length.sum() / (count * p)),
            "rmse": rmse.tolist(),
            "rmse_avg": float(np.sqrt((rmse**2).mean())),
            "reps": count,
        }
    return {
        "n": n,
        "methods": methods_summary,
        "failures": [{"rep": r["rep"], "error": r["error"]} for r in failures],
        "records": ok,
    }


def run_coverage(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Coverage/length study across the configured sample sizes."""
    if cfg.experiment != "coverage":
        raise ConfigError(f"config is for {cfg.experiment!r}, expected 'coverage'")
    _warm_kernels()
    t0 = time.perf_counter()
    settings = []
    failures = []
    for setting_idx, n in enumerate(cfg.n):
        fn = partial(_coverage_rep, cfg, setting_idx, n)
        records = _parallel_map(fn, list(range(cfg.replications)), workers)
        agg = _aggregate_coverage(cfg, n, records)
        T = cfg.iterations(n)
        scales, budget = resolve_noise_scales(cfg, n, T)
        agg["iterations"] = T
        agg["noise_scales"] = asdict(scales)
        agg["budget"] = asdict(budget)
        settings.append(agg)
        failures.extend({"n": n, **f} for f in agg.pop("failures"))
    return _make_report(cfg, settings, failures, t0)


# ----------------------------------------------------------------------------
# example1
# ----------------------------------------------------------------------------


def _example1_rep(cfg: ExperimentConfig, rep: int) -> dict:
    rng = RngState(cfg.seed, (0, rep))
    n = cfg.n[0]
    spec = SynthSpec(ModelKind.MEAN, n, 1, noise_sd=cfg.noise_sd, theta=(0.0,))
    data, _ = generate_synthetic(spec, rng.child(0))
    model = LossModel(ModelKind.MEAN, 1)
    out: dict = {"rep": rep}
    # eta_t = 1/(2t) turns the recurrence into a running mean of the samples
    # used, so the final iterate is the exact mean of the visited batch means.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cyc = OptimConfig(eta=0.5, alpha=1.0, T=n, scheme=SamplingScheme("cyclic", 1))
        out["cyclic"] = float(dpsgd_run(data, model, cyc, rng.child(1)).theta_last[0])
        ran_vals = {}
        for g, (k, m) in enumerate(cfg.km_grid):
            T = max(1, round(k * n))
            ran = OptimConfig(
                eta=0.5, alpha=1.0, T=T, scheme=SamplingScheme("with_replacement", m)
            )
            ran_vals[f"k={k:g},m={m}"] = float(
                dpsgd_run(data, model, ran, rng.child(2 + g)).theta_last[0]
            )
    out["randomized"] = ran_vals
    return out


def run_example1(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Variance-inflation factors for randomized vs cyclic index selection."""
    if cfg.experiment != "example1":
        raise ConfigError(f"config is for {cfg.experiment!r}, expected 'example1'")
    _warm_kernels()
    t0 = time.perf_counter()
    n = cfg.n[0]
    fn = partial(_example1_rep, cfg)
    records = _parallel_map(fn, list(range(cfg.replications)), workers)
    sigma_sq = cfg.noise_sd**2
    cyc = np.asarray([r["cyclic"] for r in records])
    var_cyc = float(np.var(cyc, ddof=1))
    grid_summary = {}
    for k, m in cfg.km_grid:
        key = f"k={k:g},m={m}"
        vals = np.asarray([r["randomized"][key] for r in records])
        var_ran = float(np.var(vals, ddof=1))
        grid_summary[key] = {
            "k": k,
            "m": m,
            "target_factor": 1.0 + 1.0 / (k * m),
            "var_factor": n * var_ran / sigma_sq,
            "ratio_to_cyclic": var_ran / var_cyc,
            "reps": len(vals),
        }
    setting = {
        "n": n,
        "cyclic": {"var_factor": n * var_cyc / sigma_sq, "reps": len(cyc)},
        "grid": grid_summary,
        "records": records,
    }
    return _make_report(cfg, [setting], [], t0)


# ----------------------------------------------------------------------------
# mse_vs_iters
# ----------------------------------------------------------------------------

MSE_ALGORITHMS = ("ols", "sgd_cyclic", "sgd_randomized", "dpsgd")


def _mse_rep(cfg: ExperimentConfig, rep: int) -> dict:
    rng = RngState(cfg.seed, (0, rep))
    n = cfg.n[0]
    kind = ModelKind(cfg.model)
    spec = SynthSpec(kind, n, cfg.p, cov=cfg.cov, noise_sd=cfg.noise_sd, theta=cfg.theta)
    data, theta_star = generate_synthetic(spec, rng.child(0))
    model = cfg.loss_model()
    out: dict = {"rep": rep, "curves": {}}
    XtX = data.X.T @ data.X
    theta_ols = np.linalg.solve(XtX, data.X.T @ data.y)
    out["ols"] = float(((theta_ols - theta_star) ** 2).sum())
    for g, kappa in enumerate(cfg.kappa_grid):
        T = max(1, round(n**kappa))
        entry = {}
        ran = OptimConfig(
            eta=cfg.eta, alpha=cfg.alpha, T=T,
            scheme=SamplingScheme("with_replacement", cfg.m),
        )
        res = dpsgd_run(data, model, ran, rng.child(1 + 3 * g))
        entry["sgd_randomized"] = float(((res.theta_bar - theta_star) ** 2).sum())
        cyc = OptimConfig(
            eta=cfg.eta, alpha=cfg.alpha, T=T, scheme=SamplingScheme("cyclic", cfg.m)
        )
        res = dpsgd_run(data, model, cyc, rng.child(2 + 3 * g))
        entry["sgd_cyclic"] = float(((res.theta_bar - theta_star) ** 2).sum())
        # the full budget goes to the estimate: nothing else is released here
        sigma1 = calibrate_sigma1(cfg.privacy, cfg.delta_g, cfg.m, n, T)
        dp = OptimConfig(
            eta=cfg.eta, alpha=cfg.alpha, T=T,
            scheme=SamplingScheme(cfg.scheme, cfg.m), sigma1=sigma1, clip=cfg.clip,
        )
        res = dpsgd_run(data, model, dp, rng.child(3 + 3 * g))
        entry["dpsgd"] = float(((res.theta_bar - theta_star) ** 2).sum())
        out["curves"][f"{kappa:g}"] = entry
    return out


def run_mse_vs_iters(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """MSE of the four estimators as the iteration count grows."""
    if cfg.experiment != "mse_vs_iters":
        raise ConfigError(f"config is for {cfg.experiment!r}, expected 'mse_vs_iters'")
    _warm_kernels()
    t0 = time.perf_counter()
    n = cfg.n[0]
    records = _parallel_map(partial(_mse_rep, cfg), list(range(cfg.replications)), workers)
    ols_mse = float(np.mean([r["ols"] for r in records]))
    grid = {}
    for kappa in cfg.kappa_grid:
        key = f"{kappa:g}"
        T = max(1, round(n**kappa))
        entry = {"kappa": kappa, "T": T, "ols": ols_mse, "ols_ratio": {}}
        for alg in ("sgd_randomized", "sgd_cyclic", "dpsgd"):
            mse = float(np.mean([r["curves"][key][alg] for r in records]))
            entry[alg] = mse
            entry["ols_ratio"][alg] = mse / ols_mse
        grid[key] = entry
    setting = {"n": n, "grid": grid, "records": records}
    return _make_report(cfg, [setting], [], t0)


# ----------------------------------------------------------------------------
# compare_gd
# ----------------------------------------------------------------------------


def _dpgd_ci(theta_gd, cov_est: CovarianceEstimates, n, eta, sigma_gd, level):
    """Plug-in interval for the GD iterate, correcting only for the noise
    added at the final step (variance eta^2 sigma_gd^2 per coordinate)."""
    z = _z_quantile(level)
    diag = np.diag(cov_est.V_tilde) / n + eta**2 * sigma_gd**2
    half = z * np.sqrt(np.maximum(diag, 0.0))
    return [
        ConfidenceInterval(j, float(theta_gd[j] - half[j]), float(theta_gd[j] + half[j]),
                           "dpgd_plugin_corrected", level)
        for j in range(len(theta_gd))
    ]


def _compare_gd_rep(cfg: ExperimentConfig, rep: int) -> dict:
    rng = RngState(cfg.seed, (0, rep))
    n = cfg.n[0]
    kind = ModelKind(cfg.model)
    spec = SynthSpec(kind, n, cfg.p, cov=cfg.cov, noise_sd=cfg.noise_sd, theta=cfg.theta)
    data, theta_star = generate_synthetic(spec, rng.child(0))
    model = cfg.loss_model()
    specs = split_budget(cfg.privacy, cfg.budget_weights)
    sigma2 = calibrate_matrix_noise(specs[1], cfg.delta_a, n)
    sigma3 = calibrate_matrix_noise(specs[2], cfg.delta_s, n)
    out: dict = {"rep": rep, "dpsgd": {}, "dpgd": {}}
    try:
        for g, kappa in enumerate(cfg.kappa_grid):
            T = max(1, round(n**kappa))
            sigma1 = calibrate_sigma1(specs[0], cfg.delta_g, cfg.m, n, T)
            run_cfg = OptimConfig(
                eta=cfg.eta, alpha=cfg.alpha, T=T,
                scheme=SamplingScheme(cfg.scheme, cfg.m), sigma1=sigma1, clip=cfg.clip,
            )
            res = dpsgd_run(data, model, run_cfg, rng.child(1 + 2 * g))
            cov_est = plugin_covariance(
                data, model, res.theta_bar, cfg.privacy, rng.child(2 + 2 * g),
                sigma2=sigma2, sigma3=sigma3, eig_floor=cfg.eig_floor,
            )
            cis = plugin_ci_corrected(
                res.theta_bar, cov_est.V_tilde, cov_est.A_tilde,
                sigma1, res.k, n, cfg.level, eig_floor=cfg.eig_floor,
            )
            out["dpsgd"][f"{kappa:g}"] = {
                **_ci_record(cis, theta_star),
                "err_sq": float(((res.theta_bar - theta_star) ** 2).sum()),
            }
        base = 1000 + 2 * len(cfg.kappa_grid)
        for g, t2 in enumerate(cfg.t2_grid):
            gd_cfg = GdConfig(T_gd=t2, mu=specs[0].mu, eta=cfg.gd_eta, delta_g=cfg.delta_g)
            res = dpgd_run(data, model, gd_cfg, rng.child(base + 2 * g))
            theta_gd = res.theta_last
            cov_est = plugin_covariance(
                data, model, theta_gd, cfg.privacy, rng.child(base + 2 * g + 1),
                sigma2=sigma2, sigma3=sigma3, eig_floor=cfg.eig_floor,
            )
            sigma_gd = gd_noise_sd(t2, cfg.delta_g, n, specs[0].mu)
            cis = _dpgd_ci(theta_gd, cov_est, n, cfg.gd_eta, sigma_gd, cfg.level)
            out["dpgd"][str(t2)] = {
                **_ci_record(cis, theta_star),
                "err_sq": float(((theta_gd - theta_star) ** 2).sum()),
            }
    except (DpsgdError, np.linalg.LinAlgError) as exc:
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}
    return out


def run_compare_gd(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Private SGD versus private full-batch GD across their iteration grids."""
    if cfg.experiment != "compare_gd":
        raise ConfigError(f"config is for {cfg.experiment!r}, expected 'compare_gd'")
    if cfg.privacy.framework != "gdp":
        raise ConfigError("compare_gd requires a GDP privacy spec")
    _warm_kernels()
    t0 = time.perf_counter()
    n = cfg.n[0]
    records = _parallel_map(partial(_compare_gd_rep, cfg), list(range(cfg.replications)), workers)
    ok = [r for r in records if "error" not in r]
    failures = [{"rep": r["rep"], "error": r["error"]} for r in records if "error" in r]
    p = cfg.p
    alpha = 1.0 - cfg.level
    se = math.sqrt(alpha * (1.0 - alpha) / len(ok)) if ok else float("nan")

    def _summary(alg: str, key: str, iters: int) -> dict:
        recs = [r[alg][key] for r in ok]
        cov = np.mean([np.mean(r["covered"]) for r in recs])
        length = np.mean([np.mean(r["length"]) for r in recs])
        rmse = math.sqrt(np.mean([r["err_sq"] for r in recs]))
        return {
            "iterations": iters,
            "coverage_avg": float(cov),
            "coverage_se": se,
            "mean_length_avg": float(length),
            "rmse": rmse,
            "reps": len(recs),
        }

    dpsgd_grid = {
        f"{kappa:g}": _summary("dpsgd", f"{kappa:g}", max(1, round(n**kappa)))
        for kappa in cfg.kappa_grid
    }
    dpgd_grid = {str(t2): _summary("dpgd", str(t2), t2) for t2 in cfg.t2_grid}
    setting = {
        "n": n,
        "dpsgd": dpsgd_grid,
        "dpgd": dpgd_grid,
        "records": ok,
    }
    return _make_report(cfg, [setting], failures, t0)


# ----------------------------------------------------------------------------
# report assembly and emission
# ----------------------------------------------------------------------------


def _make_report(cfg, settings, failures, t0) -> ExperimentReport:
    return ExperimentReport(
        experiment=cfg.experiment,
        config=cfg.canonical_dict(),
        config_digest=cfg.digest(),
        settings=settings,
        failures=failures,
        wall_time_s=time.perf_counter() - t0,
        generated_at=datetime.now(timezone.utc).isoformat(),
    )


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    runner = {
        "coverage": run_coverage,
        "mse_vs_iters": run_mse_vs_iters,
        "compare_gd": run_compare_gd,
        "example1": run_example1,
    }[cfg.experiment]
    return runner(cfg, workers=workers)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".10g")
    return str(v)


def summary_rows(report: ExperimentReport) -> list[dict]:
    """Flatten a report into one row per method x setting (x coordinate)."""
    cfg = report.config
    rows: list[dict] = []

    def base_row(**kw) -> dict:
        row = {c: None for c in CSV_COLUMNS}
        row.update(
            experiment=report.experiment,
            model=cfg["model"],
            cov=cfg["cov"],
            config_digest=report.config_digest,
        )
        row.update(kw)
        return row

    if report.experiment == "coverage":
        for setting in report.settings:
            for meth, s in setting["methods"].items():
                for j in range(len(s["coverage"])):
                    rows.append(base_row(
                        n=setting["n"], setting=f"T={setting['iterations']}",
                        method=meth, coordinate=j,
                        coverage=s["coverage"][j], coverage_se=s["coverage_se"],
                        mean_length=s["mean_length"][j], rmse=s["rmse"][j],
                        reps=s["reps"], failures=len(report.failures),
                    ))
                rows.append(base_row(
                    n=setting["n"], setting=f"T={setting['iterations']}",
                    method=meth, coordinate="avg",
                    coverage=s["coverage_avg"], coverage_se=s["coverage_se"],
                    mean_length=s["mean_length_avg"], rmse=s["rmse_avg"],
                    reps=s["reps"], failures=len(report.failures),
                ))
    elif report.experiment == "example1":
        setting = report.settings[0]
        rows.append(base_row(
            n=setting["n"], setting="cyclic", method="sgd_cyclic", coordinate=0,
            var_factor=setting["cyclic"]["var_factor"],
            ratio_to_cyclic=1.0, reps=setting["cyclic"]["reps"], failures=0,
        ))
        for key, s in setting["grid"].items():
            rows.append(base_row(
                n=setting["n"], setting=key, method="sgd_randomized", coordinate=0,
                var_factor=s["var_factor"], ratio_to_cyclic=s["ratio_to_cyclic"],
                reps=s["reps"], failures=0,
            ))
    elif report.experiment == "mse_vs_iters":
        setting = report.settings[0]
        for key, entry in setting["grid"].items():
            rows.append(base_row(
                n=setting["n"], setting=f"T={entry['T']}", method="ols",
                coordinate="avg", mse=entry["ols"], rmse=math.sqrt(entry["ols"]),
                reps=len(setting["records"]), failures=0,
            ))
            for alg in ("sgd_cyclic", "sgd_randomized", "dpsgd"):
                rows.append(base_row(
                    n=setting["n"], setting=f"T={entry['T']}", method=alg,
                    coordinate="avg", mse=entry[alg], rmse=math.sqrt(entry[alg]),
                    var_factor=entry["ols_ratio"][alg],
                    reps=len(setting["records"]), failures=0,
                ))
    else:  # compare_gd
        setting = report.settings[0]
        for key, s in setting["dpsgd"].items():
            rows.append(base_row(
                n=setting["n"], setting=f"kappa={key}", method="dpsgd", coordinate="avg",
                coverage=s["coverage_avg"], coverage_se=s["coverage_se"],
                mean_length=s["mean_length_avg"], rmse=s["rmse"],
                reps=s["reps"], failures=len(report.failures),
            ))
        for key, s in setting["dpgd"].items():
            rows.append(base_row(
                n=setting["n"], setting=f"T2={key}", method="dpgd", coordinate="avg",
                coverage=s["coverage_avg"], coverage_se=s["coverage_se"],
                mean_length=s["mean_length_avg"], rmse=s["rmse"],
                reps=s["reps"], failures=len(report.failures),
            ))
    return rows


def _plotdata_files(report: ExperimentReport) -> dict[str, list[dict]]:
    files: dict[str, list[dict]] = {}
    if report.experiment == "coverage":
        cov_rows, len_rows = [], []
        for setting in report.settings:
            for meth, s in setting["methods"].items():
                cov_rows.append({"x": setting["n"], "y": s["coverage_avg"], "series": meth})
                len_rows.append({"x": setting["n"], "y": s["mean_length_avg"], "series": meth})
        files["coverage.csv"] = cov_rows
        files["length.csv"] = len_rows
    elif report.experiment == "example1":
        setting = report.settings[0]
        rows = [{"x": 1, "y": setting["cyclic"]["var_factor"], "series": "cyclic"}]
        for s in setting["grid"].values():
            rows.append({"x": s["k"], "y": s["var_factor"], "series": f"randomized_m={s['m']}"})
        files["example1.csv"] = rows
    elif report.experiment == "mse_vs_iters":
        rows = []
        for entry in report.settings[0]["grid"].values():
            rows.append({"x": entry["T"], "y": entry["ols"], "series": "ols"})
            for alg in ("sgd_cyclic", "sgd_randomized", "dpsgd"):
                rows.append({"x": entry["T"], "y": entry[alg], "series": alg})
        files["mse_vs_iters.csv"] = rows
    else:
        for metric in ("rmse", "coverage_avg", "mean_length_avg"):
            rows = []
            for s in report.settings[0]["dpsgd"].values():
                rows.append({"x": s["iterations"], "y": s[metric], "series": "dpsgd"})
            for s in report.settings[0]["dpgd"].values():
                rows.append({"x": s["iterations"], "y": s[metric], "series": "dpgd"})
            files[f"compare_gd_{metric.removesuffix('_avg')}.csv"] = rows
    return files


def emit_report(report: ExperimentReport, out_dir) -> dict[str, Path]:
    """Write report.json, summary.csv, and plotdata/*.csv under ``out_dir``.

    Everything except the ``generated_at``/``wall_time_s`` fields of
    report.json is byte-identical for identical (config, seed), regardless of
    worker count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    paths["report"] = report_path

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv_mod.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in summary_rows(report):
            writer.writerow({c: _fmt(row.get(c)) for c in CSV_COLUMNS})
    paths["summary"] = summary_path

    plot_dir = out / "plotdata"
    plot_dir.mkdir(exist_ok=True)
    for name, rows in _plotdata_files(report).items():
        path = plot_dir / name
        with open(path, "w", newline="") as fh:
            writer = csv_mod.DictWriter(fh, fieldnames=["x", "y", "series"])
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
        paths[name] = path
    return paths
