import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from dpsgd_inference.errors import ConfigError, SingularMatrixError
from dpsgd_inference.inference import (
    ORACLE,
    PivotTable,
    generate_pivot_table,
    oracle_ci,
    pivot_critical_value,
    plugin_ci,
    plugin_ci_corrected,
    plugin_covariance,
    random_scaling_ci,
    random_scaling_ci_corrected,
    simulate_pivot_samples,
)
from dpsgd_inference.models import (
    Dataset,
    LossModel,
    ModelKind,
    SynthSpec,
    generate_synthetic,
)
from dpsgd_inference.privacy import PrivacySpec
from dpsgd_inference.sampling import RngState


# ---------------------------------------------------------------------------
# plug-in covariance
# ---------------------------------------------------------------------------


def test_plugin_covariance_consistent_linear():
    # noiseless release on a big identity-design sample: V ~ sigma_e^2 I = I
    data, theta = generate_synthetic(SynthSpec(ModelKind.LINEAR, 20_000, 3), RngState(31))
    model = LossModel(ModelKind.LINEAR, 3)
    est = plugin_covariance(data, model, theta, PrivacySpec.none(), RngState(0),
                            sigma2=0.0, sigma3=0.0)
    assert np.max(np.abs(est.V_tilde - np.eye(3))) < 0.06
    assert not est.floored


def test_plugin_covariance_mean_model():
    sd = 1.7
    data, theta = generate_synthetic(
        SynthSpec(ModelKind.MEAN, 50_000, 1, noise_sd=sd, theta=(0.3,)), RngState(5))
    model = LossModel(ModelKind.MEAN, 1)
    est = plugin_covariance(data, model, np.array([data.X.mean()]), PrivacySpec.none(),
                            RngState(0), sigma2=0.0, sigma3=0.0)
    assert est.A_tilde[0, 0] == pytest.approx(2.0)
    assert est.S_tilde[0, 0] == pytest.approx(4 * sd**2, rel=0.05)
    assert est.V_tilde[0, 0] == pytest.approx(sd**2, rel=0.05)


def test_plugin_covariance_identity_relation(linear_data, linear_model):
    data, theta = linear_data
    est = plugin_covariance(data, linear_model, theta, PrivacySpec.gdp(1.0), RngState(3),
                            sigma2=0.05, sigma3=0.05)
    A_inv = np.linalg.inv(est.A_tilde)
    assert np.allclose(est.V_tilde, A_inv @ est.S_tilde @ A_inv, rtol=1e-10, atol=1e-12)


def test_plugin_covariance_noise_changes_estimates(linear_data, linear_model):
    data, theta = linear_data
    a = plugin_covariance(data, linear_model, theta, PrivacySpec.none(), RngState(3),
                          sigma2=0.0, sigma3=0.0)
    b = plugin_covariance(data, linear_model, theta, PrivacySpec.gdp(1.0), RngState(3),
                          sigma2=0.5, sigma3=0.5)
    assert not np.allclose(a.A_tilde, b.A_tilde)
    assert np.array_equal(b.A_tilde, b.A_tilde.T)


def test_plugin_covariance_flooring_flag(linear_data, linear_model):
    data, theta = linear_data
    est = plugin_covariance(data, linear_model, theta, PrivacySpec.none(), RngState(8),
                            sigma2=100.0, sigma3=0.0, eig_floor=1e-3)
    assert est.floored
    assert np.all(np.isfinite(est.V_tilde))


def test_plugin_covariance_singular_advises_flooring():
    X = np.zeros((50, 2))
    X[:, 0] = RngState(4).generator.standard_normal(50)  # second column identically zero
    data = Dataset(X=X, y=X[:, 0])
    model = LossModel(ModelKind.LINEAR, 2)
    with pytest.raises(SingularMatrixError, match="floor"):
        plugin_covariance(data, model, np.zeros(2), PrivacySpec.none(), RngState(0),
                          sigma2=0.0, sigma3=0.0)


def test_plugin_hessian_error_shrinks_at_root_n_rate():
    # ||Atilde - A||_2 under calibrated noise: log-log slope close to -1/2
    model = LossModel(ModelKind.LINEAR, 3)
    spec = PrivacySpec.gdp(2.0)
    sizes = [500, 2000, 8000, 32000]
    errs = []
    for n in sizes:
        from dpsgd_inference.privacy import calibrate_matrix_noise

        sigma2 = calibrate_matrix_noise(spec, 2.0, n)
        vals = []
        for rep in range(6):
            data, theta = generate_synthetic(
                SynthSpec(ModelKind.LINEAR, n, 3), RngState(88, (n, rep)))
            est = plugin_covariance(data, model, theta, spec, RngState(89, (n, rep)),
                                    sigma2=sigma2, sigma3=0.0)
            vals.append(np.linalg.norm(est.A_tilde - np.eye(3), 2))
        errs.append(np.mean(vals))
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_plugin_covariance_requires_scale_or_sensitivity(linear_data, linear_model):
    data, theta = linear_data
    with pytest.raises(ConfigError):
        plugin_covariance(data, linear_model, theta, PrivacySpec.gdp(1.0), RngState(0))
    est = plugin_covariance(data, linear_model, theta, PrivacySpec.gdp(2.0), RngState(0),
                            delta_a=1.0, delta_s=1.0)
    assert est.sigma2 == pytest.approx((1.0 / data.n) * math.sqrt(2) / 2.0)


# ---------------------------------------------------------------------------
# plug-in intervals
# ---------------------------------------------------------------------------


def test_plugin_ci_example_value():
    cis = plugin_ci(np.zeros(1), np.eye(1), 100, 0.95)
    assert cis[0].lower == pytest.approx(-0.196, abs=5e-4)
    assert cis[0].upper == pytest.approx(0.196, abs=5e-4)


def test_plugin_ci_half_width_uses_normal_quantile():
    cis = plugin_ci(np.zeros(1), np.eye(1), 400, 0.5)
    want = norm.ppf(0.75) / 20
    assert cis[0].upper == pytest.approx(want, rel=1e-12)


def test_plugin_ci_degenerate_variance():
    cis = plugin_ci(np.array([1.0]), np.zeros((1, 1)), 50, 0.95)
    assert cis[0].lower == cis[0].upper == 1.0


def test_plugin_ci_negative_variance_rejected():
    with pytest.raises(SingularMatrixError):
        plugin_ci(np.zeros(1), np.array([[-0.1]]), 50, 0.95)


def test_plugin_ci_corrected_reduces_to_plain_when_noiseless():
    theta = np.array([0.2, -0.1])
    V = np.diag([1.0, 2.0])
    A = np.eye(2)
    plain = plugin_ci(theta, V, 100, 0.95)
    corr = plugin_ci_corrected(theta, V, A, 0.0, 4.0, 100, 0.95)
    for a, b in zip(plain, corr):
        assert a.lower == pytest.approx(b.lower, rel=1e-14)
        assert a.upper == pytest.approx(b.upper, rel=1e-14)


def test_plugin_ci_corrected_inflates_by_privacy_term():
    # V = I, A = I, sigma1^2 / k = 1 doubles the variance
    theta = np.zeros(1)
    plain = plugin_ci(theta, np.eye(1), 100, 0.95)
    corr = plugin_ci_corrected(theta, np.eye(1), np.eye(1), 2.0, 4.0, 100, 0.95)
    assert corr[0].upper == pytest.approx(math.sqrt(2) * plain[0].upper, rel=1e-12)


def test_plugin_ci_corrected_vanishes_with_k():
    theta = np.zeros(1)
    plain = plugin_ci(theta, np.eye(1), 100, 0.95)
    corr = plugin_ci_corrected(theta, np.eye(1), np.eye(1), 1.0, 1e12, 100, 0.95)
    assert corr[0].upper == pytest.approx(plain[0].upper, rel=1e-9)
    with pytest.raises(ConfigError):
        plugin_ci_corrected(theta, np.eye(1), np.eye(1), 1.0, 0.0, 100, 0.95)


# ---------------------------------------------------------------------------
# pivot table
# ---------------------------------------------------------------------------


def test_default_table_matches_published_values(pivot_table):
    # two-sided 90%/95% critical values of the self-normalized pivot
    assert pivot_critical_value(0.90, pivot_table) == pytest.approx(5.323, rel=0.01)
    assert pivot_critical_value(0.95, pivot_table) == pytest.approx(6.747, rel=0.01)


def test_pivot_critical_value_interpolates(pivot_table):
    lv = pivot_table.levels
    cv = pivot_table.critvals
    mid = (lv[4] + lv[5]) / 2
    assert pivot_critical_value(mid, pivot_table) == pytest.approx((cv[4] + cv[5]) / 2)
    assert pivot_critical_value(lv[0], pivot_table) == cv[0]


def test_pivot_critical_value_out_of_range(pivot_table):
    with pytest.raises(ConfigError):
        pivot_critical_value(0.9999, pivot_table)
    with pytest.raises(ConfigError):
        pivot_critical_value(0.01, pivot_table)


def test_pivot_table_monotone_validation():
    with pytest.raises(ConfigError):
        PivotTable(levels=(0.9, 0.8), critvals=(1.0, 2.0), steps=10, reps=10, seed=0)
    with pytest.raises(ConfigError):
        PivotTable(levels=(0.8, 0.9), critvals=(2.0, 1.0), steps=10, reps=10, seed=0)


def test_pivot_table_json_round_trip(pivot_table):
    text = pivot_table.to_json()
    back = PivotTable.from_json(text)
    assert back == pivot_table
    meta = json.loads(text)
    assert {"levels", "critvals", "steps", "reps", "seed"} <= set(meta)


def test_generate_pivot_table_reproducible():
    a = generate_pivot_table(levels=(0.5, 0.9, 0.95), reps=20_000, steps=500, seed=1)
    b = generate_pivot_table(levels=(0.5, 0.9, 0.95), reps=20_000, steps=500, seed=1)
    assert a == b
    c = generate_pivot_table(levels=(0.5, 0.9, 0.95), reps=20_000, steps=500, seed=2)
    assert a != c


def test_simulated_pivot_median_matches_table(pivot_table):
    samples = simulate_pivot_samples(60_000, 1000, RngState(44))
    med = float(np.median(samples))
    assert med == pytest.approx(pivot_critical_value(0.5, pivot_table), rel=0.02)


# ---------------------------------------------------------------------------
# random-scaling intervals
# ---------------------------------------------------------------------------


def test_random_scaling_point_interval(pivot_table):
    cis = random_scaling_ci(np.array([2.0]), np.zeros((1, 1)), 100, 0.95, pivot_table)
    assert cis[0].lower == cis[0].upper == 2.0


def test_random_scaling_arithmetic(pivot_table):
    cis = random_scaling_ci(np.array([1.0]), np.array([[4.0]]), 400, 0.95, pivot_table)
    c = pivot_critical_value(0.95, pivot_table)
    assert cis[0].upper == pytest.approx(1.0 + c * 2.0 / 20.0, rel=1e-12)
    assert cis[0].lower == pytest.approx(1.0 - c * 2.0 / 20.0, rel=1e-12)


def test_random_scaling_width_scales_with_n(pivot_table):
    a = random_scaling_ci(np.zeros(1), np.eye(1), 100, 0.95, pivot_table)[0]
    b = random_scaling_ci(np.zeros(1), np.eye(1), 200, 0.95, pivot_table)[0]
    assert a.length == pytest.approx(math.sqrt(2) * b.length, rel=1e-12)


def test_rs_corrected_noiseless_identity(pivot_table):
    theta = np.array([0.5])
    vhat = np.array([[2.0]])
    plain = random_scaling_ci(theta, vhat, 100, 0.95, pivot_table)
    corr = random_scaling_ci_corrected(theta, vhat, np.eye(1), np.eye(1), 0.0, 100,
                                       0.95, pivot_table)
    assert corr[0].lower == pytest.approx(plain[0].lower, rel=1e-14)
    assert corr[0].upper == pytest.approx(plain[0].upper, rel=1e-14)


def test_rs_corrected_halves_variance_share(pivot_table):
    # Vtilde_jj equal to the noise term shrinks the width by sqrt(2)
    theta = np.zeros(1)
    vhat = np.array([[4.0]])
    plain = random_scaling_ci(theta, vhat, 100, 0.95, pivot_table)
    corr = random_scaling_ci_corrected(theta, vhat, np.eye(1), np.eye(1), 1.0, 100,
                                       0.95, pivot_table)
    assert corr[0].length == pytest.approx(plain[0].length / math.sqrt(2), rel=1e-12)


def test_rs_correction_factor_in_unit_interval(pivot_table):
    gen = RngState(12).generator
    for _ in range(50):
        v = gen.uniform(0.1, 5.0)
        a = gen.uniform(0.2, 3.0)
        s1 = gen.uniform(0.0, 4.0)
        plain = random_scaling_ci(np.zeros(1), np.array([[2.0]]), 50, 0.95, pivot_table)
        corr = random_scaling_ci_corrected(
            np.zeros(1), np.array([[2.0]]), np.array([[v]]), np.array([[a]]), s1, 50,
            0.95, pivot_table)
        assert corr[0].length <= plain[0].length + 1e-12


def test_rs_corrected_harmonized_uses_k(pivot_table):
    theta = np.zeros(1)
    vhat = np.array([[4.0]])
    v = np.eye(1)
    a = np.eye(1)
    harmonized = random_scaling_ci_corrected(theta, vhat, v, a, 1.0, 100, 0.95,
                                             pivot_table, k=1.0, harmonize=True)
    printed = random_scaling_ci_corrected(theta, vhat, v, a, 1.0, 100, 0.95, pivot_table)
    # with k = 1 and A = I both forms coincide; larger k shrinks the harmonized term
    assert harmonized[0].length == pytest.approx(printed[0].length, rel=1e-12)
    big_k = random_scaling_ci_corrected(theta, vhat, v, a, 1.0, 100, 0.95,
                                        pivot_table, k=1e12, harmonize=True)
    assert big_k[0].length > printed[0].length
    with pytest.raises(ConfigError):
        random_scaling_ci_corrected(theta, vhat, v, a, 1.0, 100, 0.95, pivot_table,
                                    harmonize=True)


# ---------------------------------------------------------------------------
# oracle intervals
# ---------------------------------------------------------------------------


def test_oracle_linear_matches_ols(linear_data, linear_model):
    data, _ = linear_data
    theta, cis = oracle_ci(data, linear_model, 0.95)
    theta_ref = np.linalg.solve(data.X.T @ data.X, data.X.T @ data.y)
    assert np.allclose(theta, theta_ref, rtol=1e-10)
    resid = data.y - data.X @ theta_ref
    sigma2 = resid @ resid / (data.n - 3)
    V = sigma2 * np.linalg.inv(data.X.T @ data.X / data.n)
    half = norm.ppf(0.975) * math.sqrt(V[0, 0] / data.n)
    assert cis[0].upper - theta[0] == pytest.approx(half, rel=1e-10)
    assert all(ci.method == ORACLE for ci in cis)


def test_oracle_mean_model():
    data, _ = generate_synthetic(SynthSpec(ModelKind.MEAN, 5000, 2, theta=(1.0, 2.0)),
                                 RngState(3))
    model = LossModel(ModelKind.MEAN, 2)
    theta, cis = oracle_ci(data, model, 0.95)
    assert np.allclose(theta, data.X.mean(axis=0))
    assert cis[0].covers(1.0) and cis[1].covers(2.0)


def test_oracle_logistic_solves_score_equation():
    data, ts = generate_synthetic(SynthSpec(ModelKind.LOGISTIC, 4000, 2), RngState(13))
    model = LossModel(ModelKind.LOGISTIC, 2)
    theta, cis = oracle_ci(data, model, 0.95)
    from dpsgd_inference.models import gradient_batch

    score = gradient_batch(model, theta, data.X, data.y).mean(axis=0)
    assert np.max(np.abs(score)) < 1e-8
    assert np.linalg.norm(theta - ts) < 0.3
