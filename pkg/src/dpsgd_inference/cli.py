"""Command-line interface.

Subcommands:

  simulate {coverage,mse-vs-iters,compare-gd,example1}
      --config FILE [--seed U64] [--out DIR] [--workers K]
  fit --config FILE --data CSV --out FILE [--seed U64]
  calibrate --config FILE
  critvals --levels L1,L2,... --reps N --steps N [--seed U64] --out FILE
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import ConfigError, DpsgdError
from .harness import ExperimentConfig, emit_report, resolve_noise_scales, run_experiment
from .inference import (
    DEFAULT_TABLE_LEVELS,
    generate_pivot_table,
    load_default_pivot_table,
    plugin_ci,
    plugin_ci_corrected,
    plugin_covariance,
    random_scaling_ci,
    random_scaling_ci_corrected,
)
from .models import (
    CsvSchema,
    DomainBounds,
    LossModel,
    ModelKind,
    load_csv,
    sensitivity_bounds,
)
from .optimizer import OptimConfig, dpsgd_run, finalize_scaling
from .privacy import PrivacySpec
from .sampling import RngState, SamplingScheme


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpsgd-infer",
        description="Differentially private SGD with valid confidence intervals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument(
        "experiment",
        choices=["coverage", "mse-vs-iters", "compare-gd", "example1"],
    )
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    sim.add_argument("--out", type=Path, default=None,
                     help="output directory (default: the config's out_dir, else ./out)")
    sim.add_argument("--workers", type=int, default=1)

    fit = sub.add_parser("fit", help="fit a model to a CSV file privately")
    fit.add_argument("--config", required=True, type=Path)
    fit.add_argument("--data", required=True, type=Path)
    fit.add_argument("--out", required=True, type=Path)
    fit.add_argument("--seed", type=int, default=None)

    cal = sub.add_parser("calibrate", help="print calibrated noise scales as JSON")
    cal.add_argument("--config", required=True, type=Path)

    crit = sub.add_parser("critvals", help="regenerate the pivot critical-value table")
    crit.add_argument("--levels", default=None,
                      help="comma-separated two-sided confidence levels")
    crit.add_argument("--reps", type=int, default=1_000_000)
    crit.add_argument("--steps", type=int, default=10_000)
    crit.add_argument("--seed", type=int, default=202406)
    crit.add_argument("--out", required=True, type=Path)
    return parser


def _cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    wanted = args.experiment.replace("-", "_")
    if cfg.experiment != wanted:
        raise ConfigError(
            f"config declares experiment {cfg.experiment!r}, command asked for {wanted!r}"
        )
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out if args.out is not None else Path(cfg.out_dir or "out")
    report = run_experiment(cfg, workers=args.workers)
    paths = emit_report(report, out)
    print(f"wrote {paths['report']} and {paths['summary']}")
    return 0


def _load_fit_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    version = raw.pop("version", 1)
    if version != 1:
        raise ConfigError(f"unsupported fit config version {version}")
    return raw


def fit_csv(config: dict, data_path, seed: int | None = None) -> dict:
    """Load a CSV per the fit config, run private SGD, and build intervals."""
    kind = ModelKind(config.get("model", "linear"))
    schema = CsvSchema(
        response=config["response"],
        covariates=tuple(config["covariates"]),
        intercept=bool(config.get("intercept", False)),
        rescale_c_x=config.get("rescale_c_x"),
        rescale_c_y=config.get("rescale_c_y"),
    )
    data = load_csv(data_path, schema)
    p = data.p
    model = LossModel(kind, p)
    privacy = PrivacySpec(**config.get("privacy", {"framework": "gdp", "mu": 2.0}))
    level = float(config.get("level", 0.95))
    eta = float(config.get("eta", 0.5))
    alpha = float(config.get("alpha", 0.501))
    m = int(config.get("m", 1))
    scheme = config.get("scheme", "srswor")
    clip = config.get("clip")
    kappa = float(config.get("kappa", 2.0))
    n = data.n
    T = max(1, round(n**kappa))
    seed = seed if seed is not None else int(config.get("seed", 0))
    rng = RngState(seed)

    sens_cfg = config.get("sensitivity", "auto")
    if sens_cfg == "auto":
        bounds = DomainBounds(
            c_x=data.meta["effective_c_x"],
            c_y=max(data.meta["effective_c_y"], 1e-12),
            c_0=float(config.get("c_0", 1.0)),
        )
        sens = sensitivity_bounds(model, bounds, clip=clip)
        deltas = {"delta_g": sens.delta_g, "delta_a": sens.delta_a, "delta_s": sens.delta_s}
    else:
        deltas = {k: float(sens_cfg[k]) for k in ("delta_g", "delta_a", "delta_s")}

    ecfg = ExperimentConfig(
        experiment="coverage", seed=seed, model=kind.value, p=p, n=(n,),
        privacy=privacy, budget_weights=tuple(config.get("budget_weights", (1.0, 1.0, 1.0))),
        delta_g=deltas["delta_g"], delta_a=deltas["delta_a"], delta_s=deltas["delta_s"],
        eta=eta, alpha=alpha, kappa=kappa, m=m, scheme=scheme, clip=clip, level=level,
    )
    scales, budget = resolve_noise_scales(ecfg, n, T)

    run_cfg = OptimConfig(
        eta=eta, alpha=alpha, T=T, scheme=SamplingScheme(scheme, m),
        sigma1=scales.sigma1, clip=clip,
    )
    result = dpsgd_run(data, model, run_cfg, rng.child(0))
    v_hat = finalize_scaling(result.accumulators, result.theta_bar, n, T)
    cov_est = plugin_covariance(
        data, model, result.theta_bar, privacy, rng.child(1),
        sigma2=scales.sigma2, sigma3=scales.sigma3,
        eig_floor=config.get("eig_floor"),
    )
    cov_est.V_hat = v_hat
    table = load_default_pivot_table()
    out = {
        "n": n,
        "p": p,
        "columns": data.meta.get("columns"),
        "iterations": T,
        "k": result.k,
        "theta_bar": result.theta_bar.tolist(),
        "noise_scales": dataclasses.asdict(scales),
        "budget": dataclasses.asdict(budget),
        "effective_bounds": {
            "c_x": data.meta["effective_c_x"], "c_y": data.meta["effective_c_y"],
        },
        "intervals": {},
    }
    ci_sets = {
        "plugin": plugin_ci(result.theta_bar, cov_est.V_tilde, n, level),
        "plugin_corrected": plugin_ci_corrected(
            result.theta_bar, cov_est.V_tilde, cov_est.A_tilde,
            scales.sigma1, result.k, n, level,
        ),
        "random_scaling": random_scaling_ci(result.theta_bar, v_hat, n, level, table),
        "random_scaling_corrected": random_scaling_ci_corrected(
            result.theta_bar, v_hat, cov_est.V_tilde, cov_est.A_tilde,
            scales.sigma1, n, level, table,
        ),
    }
    for name, cis in ci_sets.items():
        out["intervals"][name] = [[ci.lower, ci.upper] for ci in cis]
    return out


def _cmd_fit(args) -> int:
    config = _load_fit_config(args.config)
    result = fit_csv(config, args.data, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    n = cfg.n[0]
    T = cfg.iterations(n)
    scales, budget = resolve_noise_scales(cfg, n, T)
    print(json.dumps(
        {
            "n": n, "iterations": T, "batch_size": cfg.m,
            "noise_scales": dataclasses.asdict(scales),
            "budget": dataclasses.asdict(budget),
        },
        indent=2, sort_keys=True,
    ))
    return 0


def _cmd_critvals(args) -> int:
    if args.levels:
        levels = tuple(float(x) for x in args.levels.split(","))
    else:
        levels = DEFAULT_TABLE_LEVELS
    table = generate_pivot_table(levels=levels, reps=args.reps, steps=args.steps,
                                 seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(table.to_json() + "\n")
    print(f"wrote {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        return _cmd_critvals(args)
    except DpsgdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
