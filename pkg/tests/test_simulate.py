import numpy as np
import pytest
from scipy import stats

from _oracles import ks_statistic
from funboost.basis import difference_matrix, eval_bspline_basis
from funboost.errors import ConfigError, DegenerateSmoothnessError, DimensionError, DomainError, RangeZeroError
from funboost.families import get_family, kld_pointwise
from funboost.simulate import (
    RandomSplineDef,
    ScenarioTruth,
    build_omega,
    build_weight_matrix,
    draw_gaussian_curves,
    draw_general_curves,
    draw_random_spline,
    effect_relrmse,
    evaluate_metrics,
    generate_scenario,
    mean_kld,
    parametric_growth_curve,
    standard_noise,
    tau2,
)

LATTICE = [(K, d, s) for K in (5, 8, 12) for d in (1, 2, 3) for s in (0.0, 0.3, 0.8, 1.0) if d < K]


def test_omega_diagonalizes_penalty():
    K, d = 5, 2
    Om = build_omega(K, d)
    D = difference_matrix(K, d)
    np.testing.assert_allclose(Om.T @ D.T @ D @ Om, np.diag([0, 0, 1, 1, 1]), atol=1e-10)


def test_omega_first_order_constant_column():
    Om = build_omega(6, 1)
    assert np.ptp(Om[:, 0]) < 1e-12


@pytest.mark.parametrize("K, d", [(4, 4), (4, 0), (3, 5)])
def test_omega_dimension_error(K, d):
    with pytest.raises(DimensionError):
        build_omega(K, d)


@pytest.mark.parametrize("K, d, s", LATTICE)
def test_trace_identities(K, d, s):
    t = np.linspace(0, 1, 60)
    sdef = RandomSplineDef(3, K, d, 2.5, s)
    B = sdef.basis(t)
    G = t.size
    total = np.trace(B.T @ B) / G
    unpen = np.trace(B[:, :d].T @ B[:, :d]) / G
    assert abs(total - 2.5) < 1e-8
    assert abs(1 - (total - unpen) / total - s) < 1e-8


def test_zero_smoothness_share_one_has_no_penalized_part():
    t = np.linspace(0, 1, 30)
    B = RandomSplineDef(3, 8, 2, 1.0, 1.0).basis(t)
    assert np.max(np.abs(B[:, 2:])) == 0.0


def test_zero_scale_zero_weights_and_draws():
    t = np.linspace(0, 1, 30)
    Bt = eval_bspline_basis(RandomSplineDef(3, 8, 2).spline, t) @ build_omega(8, 2)
    assert np.all(build_weight_matrix(0.0, 0.4, Bt, 2) == 0.0)
    draws = draw_random_spline(RandomSplineDef(3, 8, 2, 0.0, 0.4), t, 5, np.random.default_rng(0))
    assert np.all(draws == 0.0)


def test_degenerate_smoothness():
    with pytest.raises(DegenerateSmoothnessError):
        RandomSplineDef(3, 8, 0, 1.0, 0.5)
    with pytest.raises(DegenerateSmoothnessError):
        build_weight_matrix(1.0, 0.5, np.ones((10, 3)), 3)


@pytest.mark.parametrize("s", [0.0, 0.5, 0.9])
def test_monte_carlo_variance(s):
    t = np.linspace(0, 1, 50)
    draws = draw_random_spline(RandomSplineDef(3, 10, 2, 1.7, s), t, 10 ** 4, np.random.default_rng(0))
    assert abs(np.mean(draws.var(axis=0)) / 1.7 - 1) < 0.03


def test_random_spline_deterministic():
    sdef, t = RandomSplineDef(3, 8, 2, 1.0, 0.3), np.linspace(0, 1, 20)
    a = draw_random_spline(sdef, t, 4, np.random.default_rng(9))
    b = draw_random_spline(sdef, t, 4, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("level", ["independent", "dependent", "high_dependency"])
def test_standard_noise_unit_variance(level):
    e = standard_noise(level, np.linspace(0, 10, 40), 10 ** 4, np.random.default_rng(2))
    np.testing.assert_allclose(e.var(axis=0), 1.0, atol=0.06)


def test_dependency_smooths_curves():
    t = np.linspace(0, 10, 100)
    rough = {lv: np.mean(np.diff(standard_noise(lv, t, 500, np.random.default_rng(3)), axis=1) ** 2)
             for lv in ("independent", "dependent", "high_dependency")}
    assert rough["high_dependency"] < rough["dependent"] < rough["independent"]


def test_unknown_dependency_level():
    with pytest.raises(ConfigError):
        standard_noise("extreme", np.linspace(0, 1, 5), 2, np.random.default_rng(0))


@pytest.mark.parametrize("level", ["independent", "high_dependency"])
def test_gaussian_marginal_ks(level):
    rng = np.random.default_rng(4)
    y = draw_gaussian_curves(np.full((10 ** 4, 3), 1.5), 0.7, level, rng)
    for g in range(3):
        assert ks_statistic(y[:, g], stats.norm(1.5, 0.7).cdf) < 0.02


def test_gamma_marginal_ks():
    fam = get_family("gamma-cv")
    y = draw_general_curves(fam, [np.full((10 ** 4, 2), 2.0), 0.5], "dependent", np.random.default_rng(5))
    ref = stats.gamma(4.0, scale=0.5)
    for g in range(2):
        assert ks_statistic(y[:, g], ref.cdf) < 0.02


def test_za_gamma_marginal_and_zero_fraction():
    fam = get_family("za-gamma")
    theta = [np.full((10 ** 4, 2), 1.0), 0.8, 0.3]
    y = draw_general_curves(fam, theta, "independent", np.random.default_rng(6))
    for g in range(2):
        assert abs(np.mean(y[:, g] == 0) - 0.3) < 0.01
        assert ks_statistic(y[:, g], lambda v: fam.cdf(v, [1.0, 0.8, 0.3])) < 0.02


def test_general_gaussian_matches_direct_draws():
    fam = get_family("gaussian")
    a = draw_general_curves(fam, [np.zeros((10 ** 4, 1)), 1.0], "independent", np.random.default_rng(7))
    b = draw_gaussian_curves(np.zeros((10 ** 4, 1)), 1.0, "independent", np.random.default_rng(8))
    assert stats.ks_2samp(a[:, 0], b[:, 0]).statistic < 0.03


def test_za_gamma_edge_probabilities():
    fam = get_family("za-gamma")
    y = draw_general_curves(fam, [np.ones((50, 4)), 0.5, 1.0], "independent", np.random.default_rng(0))
    assert np.all(y == 0.0)


def test_zero_sd_returns_mean():
    mu = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(draw_gaussian_curves(mu, 0.0, "dependent", np.random.default_rng(0)), mu)


def test_invalid_theta():
    with pytest.raises(DomainError):
        draw_general_curves(get_family("gamma-cv"), [np.ones((2, 2)), -1.0], "independent",
                            np.random.default_rng(0))


def test_tau2_matches_lognormal_variance():
    for s in (0.0, 0.5, 1.0, 4.0):
        t2 = tau2(s)
        assert abs((np.exp(t2) - 1) * np.exp(t2) - s) < 1e-12


@pytest.mark.parametrize("model", ["continuous", "categorical"])
def test_scenario_replay(model):
    data, truth = generate_scenario(model, 30, 20, "independent", seed=3)
    np.testing.assert_allclose(truth.predictor(data), truth.H, atol=1e-12, rtol=0)
    again, truth2 = generate_scenario(model, 30, 20, "independent", seed=3)
    assert again.response.tobytes() == data.response.tobytes()
    assert truth2.H.tobytes() == truth.H.tobytes()


def test_scenario_mu_scale():
    _, truth = generate_scenario("continuous", 200, 40, sigma2_mu=2.0, seed=1)
    parts = [te.contribution(truth.prepare(generate_scenario("continuous", 200, 40, sigma2_mu=2.0, seed=1)[0]))
             for te in truth.effects if te.parameter == "mu"]
    total = sum(np.mean(p ** 2) for p in parts)
    assert abs(total - 2.0) < 1e-8


def test_constant_variance_when_sigma_scale_zero():
    data, truth = generate_scenario("categorical", 20, 15, sigma2_sigma=0.0, seed=2)
    sd = truth.predict(data)["params"]["sigma"]
    assert np.ptp(sd) < 1e-12


def test_scenario_errors():
    with pytest.raises(ConfigError):
        generate_scenario("spiral", 10, 10)
    with pytest.raises(ConfigError):
        generate_scenario("continuous", 10, 10, sigma2_mu=-1.0)
    with pytest.raises(ConfigError):
        generate_scenario("continuous", 10, 1)


def test_truth_save_load(tmp_path):
    data, truth = generate_scenario("categorical", 20, 12, seed=4)
    truth.save(tmp_path / "truth.json")
    back = ScenarioTruth.load(tmp_path / "truth.json")
    np.testing.assert_array_equal(back.predictor(data), truth.predictor(data))
    assert back.manifest == truth.manifest


def test_evaluate_truth_against_itself():
    data, truth = generate_scenario("continuous", 25, 15, seed=5)
    rows = evaluate_metrics(truth, truth, data)
    assert rows[0]["metric"] == "mean_kld" and rows[0]["value"] == 0.0
    for r in rows[1:]:
        assert r["value"] == 0.0 or r["status"] == "undefined"


def test_mean_kld_examples():
    fam = get_family("gaussian")
    th = [np.zeros((3, 4)), np.ones((3, 4))]
    assert mean_kld(fam, th, th) == 0.0
    assert mean_kld(fam, th, [np.ones((3, 4)), np.ones((3, 4))]) == pytest.approx(0.5)


def test_mean_kld_loop_oracle():
    rng = np.random.default_rng(6)
    fam = get_family("za-gamma")
    a = [rng.uniform(0.5, 2, (3, 5)), rng.uniform(0.3, 1, (3, 5)), rng.uniform(0.1, 0.6, (3, 5))]
    b = [rng.uniform(0.5, 2, (3, 5)), rng.uniform(0.3, 1, (3, 5)), rng.uniform(0.1, 0.6, (3, 5))]
    ref = np.mean([kld_pointwise(fam, [v[i, g] for v in a], [v[i, g] for v in b])
                   for i in range(3) for g in range(5)])
    assert abs(mean_kld(fam, a, b) - ref) < 1e-12


def test_relrmse_constant_offset():
    f = np.linspace(-1, 3, 20)
    assert effect_relrmse(f, f + 0.2) == pytest.approx(0.2 / 4)
    with pytest.raises(RangeZeroError):
        effect_relrmse(np.ones(5), np.zeros(5))


def test_logistic_fixtures():
    t = np.linspace(0, 30, 31)
    np.testing.assert_allclose(parametric_growth_curve("logistic", {"y0": 2.0, "yinf": 2.0, "r": 0.4}, t), 2.0)
    assert parametric_growth_curve("logistic", {"y0": 0.1, "yinf": 1.0, "r": 0.5}, np.array([0.0]))[0] \
        == pytest.approx(0.1)


def test_gompertz_plateau():
    p = {"y0": 2.0, "yinf": 8.0, "mumax": 3.0, "lag": 5.0}
    assert abs(parametric_growth_curve("gompertz", p, np.array([50.0]))[0] - 8.0) < 1e-6


def test_baranyi_limits():
    p = {"y0": 2.0, "yinf": 8.0, "mumax": 0.5, "lag": 4.0}
    y = parametric_growth_curve("baranyi_roberts", p, np.array([0.0, 1000.0]))
    assert y[0] == pytest.approx(2.0, abs=1e-9) and y[1] == pytest.approx(8.0, abs=1e-9)


def test_growth_errors():
    with pytest.raises(ConfigError):
        parametric_growth_curve("monod", {}, np.zeros(2))
    with pytest.raises(ConfigError):
        parametric_growth_curve("logistic", {"y0": 1.0}, np.zeros(2))
    with pytest.raises(DomainError):
        parametric_growth_curve("gompertz", {"y0": 1.0, "yinf": 2.0, "mumax": -1.0, "lag": 0.0}, np.zeros(2))
