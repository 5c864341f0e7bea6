import json

import pytest

from dpsgd_inference.errors import ConfigError
from dpsgd_inference.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    emit_report,
    resolve_noise_scales,
    run_coverage,
    run_example1,
    run_experiment,
    summary_rows,
)
from dpsgd_inference.privacy import PrivacySpec


def _coverage_cfg(**kw):
    base = {
        "experiment": "coverage", "model": "linear", "p": 2, "n": [120],
        "cov": "identity", "privacy": {"framework": "gdp", "mu": 2.0},
        "delta_g": 1.0, "delta_a": 1.0, "delta_s": 1.0,
        "kappa": 1.4, "replications": 8, "seed": 404,
    }
    base.update(kw)
    return ExperimentConfig.from_dict(base)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.from_dict({"experiment": "coverage", "bogus_key": 1})


def test_config_rejects_bad_version():
    with pytest.raises(ConfigError, match="version"):
        ExperimentConfig.from_dict({"experiment": "coverage", "version": 99})


def test_config_requires_one_iteration_rule():
    with pytest.raises(ConfigError, match="kappa"):
        _coverage_cfg(kappa=None, k=None)
    cfg = _coverage_cfg(kappa=None, k=3)
    assert cfg.iterations(100) == 300
    assert _coverage_cfg(kappa=1.5).iterations(100) == 1000


def test_config_digest_stable_and_sensitive():
    a = _coverage_cfg()
    b = _coverage_cfg()
    assert a.digest() == b.digest()
    c = _coverage_cfg(seed=405)
    assert a.digest() != c.digest()


def test_config_privacy_parsing():
    cfg = _coverage_cfg(privacy={"framework": "eps_delta", "epsilon": 1.0, "delta": 1e-5})
    assert isinstance(cfg.privacy, PrivacySpec)
    assert cfg.privacy.epsilon == 1.0


def test_resolve_noise_scales_none_framework():
    cfg = _coverage_cfg(privacy={"framework": "none"})
    scales, budget = resolve_noise_scales(cfg, 100, 200)
    assert scales.sigma1 == scales.sigma2 == scales.sigma3 == 0.0
    assert budget.total == {}


def test_resolve_noise_scales_budget_composes():
    cfg = _coverage_cfg()
    scales, budget = resolve_noise_scales(cfg, 100, 200)
    assert budget.total["mu"] == pytest.approx(2.0)
    assert scales.sigma1 > 0 and scales.sigma2 > 0


# ---------------------------------------------------------------------------
# coverage experiment mechanics
# ---------------------------------------------------------------------------


def test_single_replication_coverage_is_binary():
    cfg = _coverage_cfg(replications=1)
    report = run_coverage(cfg)
    for s in report.settings[0]["methods"].values():
        assert s["reps"] == 1
        assert all(c in (0.0, 1.0) for c in s["coverage"])


def test_oracle_only_skips_optimizer():
    cfg = _coverage_cfg(methods=["oracle"], replications=30, n=[150])
    report = run_coverage(cfg)
    methods = report.settings[0]["methods"]
    assert set(methods) == {"oracle"}
    rec = report.settings[0]["records"][0]
    assert "err_dpsgd" not in rec


def test_oracle_nominal_coverage_large():
    # classical OLS intervals: coverage within two binomial standard errors
    cfg = _coverage_cfg(
        model="linear", p=3, n=[1000], methods=["oracle"], replications=500, seed=2024
    )
    report = run_coverage(cfg)
    cov = report.settings[0]["methods"]["oracle"]["coverage_avg"]
    assert abs(cov - 0.95) < 0.02


def test_divergent_replications_recorded():
    cfg = _coverage_cfg(eta=1e12, replications=5, methods=["plugin"])
    report = run_coverage(cfg)
    assert len(report.failures) == 5
    assert all("DivergenceError" in f["error"] for f in report.failures)
    assert report.settings[0]["methods"] == {}


def test_worker_count_does_not_change_results(tmp_path):
    cfg = _coverage_cfg(replications=6)
    r1 = run_coverage(cfg, workers=1)
    r3 = run_coverage(cfg, workers=3)
    emit_report(r1, tmp_path / "w1")
    emit_report(r3, tmp_path / "w3")
    assert (tmp_path / "w1/summary.csv").read_bytes() == (tmp_path / "w3/summary.csv").read_bytes()
    a = json.loads((tmp_path / "w1/report.json").read_text())
    b = json.loads((tmp_path / "w3/report.json").read_text())
    for volatile in ("generated_at", "wall_time_s"):
        a.pop(volatile), b.pop(volatile)
    assert a == b


def test_rerun_byte_identical_modulo_timestamp(tmp_path):
    cfg = _coverage_cfg(replications=4)
    emit_report(run_coverage(cfg), tmp_path / "a")
    emit_report(run_coverage(cfg), tmp_path / "b")
    assert (tmp_path / "a/summary.csv").read_bytes() == (tmp_path / "b/summary.csv").read_bytes()
    for name in ("a", "b"):
        assert (tmp_path / name / "plotdata/coverage.csv").exists()
    a = json.loads((tmp_path / "a/report.json").read_text())
    b = json.loads((tmp_path / "b/report.json").read_text())
    for volatile in ("generated_at", "wall_time_s"):
        a.pop(volatile), b.pop(volatile)
    assert a == b


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def test_summary_row_count_and_columns(tmp_path):
    cfg = _coverage_cfg(replications=3)
    report = run_coverage(cfg)
    rows = summary_rows(report)
    # one row per coordinate plus one aggregate row, per method per setting
    assert len(rows) == len(cfg.methods) * (cfg.p + 1)
    paths = emit_report(report, tmp_path)
    text = paths["summary"].read_text().splitlines()
    assert text[0] == ",".join(CSV_COLUMNS)
    assert len(text) == 1 + len(rows)


def test_emit_report_valid_json_when_empty(tmp_path):
    cfg = _coverage_cfg(replications=1, methods=["plugin"], eta=1e12)  # all reps fail
    report = run_coverage(cfg)
    paths = emit_report(report, tmp_path)
    obj = json.loads(paths["report"].read_text())
    assert obj["experiment"] == "coverage"
    assert len(obj["failures"]) == 1


def test_emit_report_unwritable_target(tmp_path):
    target = tmp_path / "occupied"
    target.write_text("a file, not a directory")
    cfg = _coverage_cfg(replications=1)
    report = run_coverage(cfg)
    with pytest.raises(OSError):
        emit_report(report, target)


def test_plotdata_schema(tmp_path):
    cfg = _coverage_cfg(replications=2)
    paths = emit_report(run_coverage(cfg), tmp_path)
    header = paths["coverage.csv"].read_text().splitlines()[0]
    assert header == "x,y,series"


def test_summary_rows_carry_digest_and_se():
    cfg = _coverage_cfg(replications=3)
    report = run_coverage(cfg)
    for row in summary_rows(report):
        assert row["config_digest"] == report.config_digest
        assert row["coverage_se"] == pytest.approx(
            (0.05 * 0.95 / 3) ** 0.5)


def test_inactive_clipping_leaves_coverage_statistics_unchanged():
    # a clip threshold above every per-record gradient norm never activates,
    # so the clipped experiment reproduces the unclipped one exactly
    plain = run_coverage(_coverage_cfg(replications=10))
    clipped = run_coverage(_coverage_cfg(replications=10, clip=1e9))
    assert plain.settings[0]["methods"] == clipped.settings[0]["methods"]


# ---------------------------------------------------------------------------
# other experiments via the dispatcher
# ---------------------------------------------------------------------------


def test_run_experiment_dispatch_example1(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "experiment": "example1", "model": "mean", "p": 1, "n": [60],
        "privacy": {"framework": "none"}, "km_grid": [[1, 1], [2, 2]],
        "replications": 50, "seed": 11,
    })
    report = run_experiment(cfg, workers=2)
    grid = report.settings[0]["grid"]
    assert set(grid) == {"k=1,m=1", "k=2,m=2"}
    for entry in grid.values():
        assert entry["ratio_to_cyclic"] > 0
    paths = emit_report(report, tmp_path)
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    assert len(rows) == 1 + 1 + 2  # header + cyclic + two grid points


def test_run_experiment_rejects_mismatched_kind():
    cfg = _coverage_cfg()
    with pytest.raises(ConfigError):
        run_example1(cfg)


def test_mse_experiment_small(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "experiment": "mse_vs_iters", "model": "linear", "p": 2, "n": [80],
        "cov": "identity", "privacy": {"framework": "gdp", "mu": 2.0},
        "delta_g": 1.0, "kappa_grid": [1.0, 1.2], "replications": 20, "seed": 5,
    })
    report = run_experiment(cfg)
    grid = report.settings[0]["grid"]
    assert set(grid) == {"1", "1.2"}
    for entry in grid.values():
        for alg in ("ols", "sgd_cyclic", "sgd_randomized", "dpsgd"):
            assert entry[alg] > 0
    paths = emit_report(report, tmp_path)
    assert (tmp_path / "plotdata/mse_vs_iters.csv").exists()


def test_compare_gd_small(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "experiment": "compare_gd", "model": "linear", "p": 2, "n": [100],
        "cov": "identity", "privacy": {"framework": "gdp", "mu": 2.0},
        "delta_g": 1.0, "delta_a": 1.0, "delta_s": 1.0,
        "kappa_grid": [1.4], "t2_grid": [1, 3], "gd_eta": 0.1,
        "replications": 10, "seed": 6,
    })
    report = run_experiment(cfg)
    assert set(report.settings[0]["dpsgd"]) == {"1.4"}
    assert set(report.settings[0]["dpgd"]) == {"1", "3"}
    paths = emit_report(report, tmp_path)
    assert (tmp_path / "plotdata/compare_gd_rmse.csv").exists()
    assert (tmp_path / "plotdata/compare_gd_coverage.csv").exists()


def test_compare_gd_requires_gdp():
    with pytest.raises(ConfigError, match="GDP"):
        cfg = ExperimentConfig.from_dict({
            "experiment": "compare_gd", "model": "linear", "p": 2, "n": [100],
            "privacy": {"framework": "none"}, "replications": 2,
        })
        run_experiment(cfg)
