import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy import integrate, special

from nbthin.analytic import DegenerateDenominatorError, HalfSpaceDensity, Model, g_exact, mean_abs_dev, poisson_mixture
from nbthin.bounds import (
    ROUTES,
    Constants,
    UnsupportedRuleError,
    bound_coupling_tv,
    bound_coupling_tv_inhomog,
    bound_laplace,
    bound_stein_general,
    bound_stein_lower,
    bound_stein_moderate,
    bound_stein_smallr,
    compare_routes,
    correlation_integral,
    coupling_scaling_exponent,
    evaluate_routes,
    moderate_surrogate,
    pointwise_g_bound,
)
from nbthin.geometry import Window, omega, radial_integrals, unit_ball_volume
from nbthin.rules import ClusterFavouring, Constant, Geometric, Logistic, MaternI, Parity, Table, lipschitz_modulus

W = Window.unit(2)
MATERN = Model(2, 0.05, MaternI(), lam=50.0)
LIPSCHITZ_RULES = [Geometric(0.9, 0.5), ClusterFavouring(1.0), Logistic(0.5, 2), Constant(0.3), Table((0.6, 0.6, 0.6), 0.1)]


# coupling ------------------------------------------------------------------


def test_coupling_constant_rule_is_zero():
    assert bound_coupling_tv(MATERN.with_rule(Constant(0.5)), W).total == pytest.approx(0.0, abs=1e-12)


def test_coupling_matern_example():
    mu = MATERN.mu
    assert mu == pytest.approx(0.39269908, rel=1e-7)
    rep = bound_coupling_tv(MATERN, W)
    assert rep.total == pytest.approx(50 * 2 * math.exp(-mu) * (1 - math.exp(-mu)), rel=1e-12)
    assert rep.route == "CouplingTV"


@pytest.mark.parametrize("rule", [Geometric(0.9, 0.5), ClusterFavouring(1.0), Logistic(0.5, 2), Parity()])
def test_small_mu_form_relaxes_exact(rule):
    for mu in np.linspace(0.05, 1.0, 12):
        rep = bound_coupling_tv(Model.from_mu(2, float(mu), rule, lam=40.0), W)
        assert rep.terms["small_mu_form"] >= rep.total - 1e-12


def test_coupling_scales_with_window_volume():
    big = Window((0.0, 0.0), (3.0, 2.0))
    assert bound_coupling_tv(MATERN, big).total == pytest.approx(6 * bound_coupling_tv(MATERN, W).total, rel=1e-12)


def test_coupling_exponent_for_lipschitz_rule():
    assert coupling_scaling_exponent(Geometric(0.9, 0.5), 2.0 ** -np.arange(6, 12)) == pytest.approx(1.0, abs=0.05)


# inhomogeneous ---------------------------------------------------------------


def _cap_fraction(d, a):
    # fraction of the unit ball with first coordinate >= a, from the incomplete beta function
    if a >= 1:
        return 0.0
    if a <= -1:
        return 1.0
    half = 0.5 * special.betainc((d + 1) / 2, 0.5, 1 - a * a)
    return half if a >= 0 else 1 - half


def test_inhomog_constant_density_reduces():
    model = Model(2, 0.05, Geometric(0.9, 0.5), density=HalfSpaceDensity(50.0, 50.0), lam_bound=50.0)
    homog = bound_coupling_tv(Model(2, 0.05, Geometric(0.9, 0.5), lam=50.0), W).total
    assert bound_coupling_tv_inhomog(model, W).total == pytest.approx(homog, rel=1e-6)


def test_inhomog_halfspace_matches_one_dimensional_reduction():
    rule, r, d = Geometric(0.9, 0.5), 0.05, 2
    dens = HalfSpaceDensity(80.0, 20.0, 0, 0.5)
    model = Model(d, r, rule, density=dens, lam_bound=80.0)
    v = unit_ball_volume(d) * r**d

    def along(x0):
        frac = _cap_fraction(d, (0.5 - x0) / r)
        lam_x = 80.0 if x0 >= 0.5 else 20.0
        return lam_x * mean_abs_dev(rule, v * (80.0 * frac + 20.0 * (1 - frac)))

    ref = sum(integrate.quad(along, a, b, epsabs=0, epsrel=1e-11)[0] for a, b in ((0, 0.5 - r), (0.5 - r, 0.5), (0.5, 0.5 + r), (0.5 + r, 1)))
    got = bound_coupling_tv_inhomog(model, W, quad_tol=1e-6).total
    assert got == pytest.approx(ref, rel=1e-5)


def test_inhomog_tolerance_halving_is_stable():
    model = Model(2, 0.05, MaternI(), density=HalfSpaceDensity(60.0, 10.0), lam_bound=60.0)
    a = bound_coupling_tv_inhomog(model, W, quad_tol=1e-5).total
    b = bound_coupling_tv_inhomog(model, W, quad_tol=5e-6).total
    assert abs(a - b) <= 1e-5 * abs(b)


# Laplace -----------------------------------------------------------------------


def test_laplace_shape_and_scaling():
    assert bound_laplace(MATERN, W, 0.0).total == 0.0
    base = bound_laplace(MATERN, W, 1.0).total
    assert base == pytest.approx(50.0**2 * 1.0 * 0.1**2)
    half_r = Model(2, 0.025, MaternI(), lam=50.0)
    assert bound_laplace(half_r, W, 1.0).total == pytest.approx(base / 4, rel=1e-12)
    double_lam = Model(2, 0.05, MaternI(), lam=100.0)
    assert bound_laplace(double_lam, W, 1.0).total == pytest.approx(4 * base, rel=1e-12)
    big = Window((0.0, 0.0), (2.0, 2.0))
    assert bound_laplace(MATERN, big, 1.0).total == pytest.approx(4 * base, rel=1e-12)


def test_laplace_validity_flag_and_constants():
    rep = bound_laplace(MATERN, W, 2.0, Constants(C_laplace=3.0, c_laplace_threshold=0.01))
    assert rep.constants_used == {"C_d": 3.0, "c_d": 0.01}
    assert rep.valid is False
    assert rep.total == pytest.approx(3.0 * 50.0**2 * 2.0 * 0.01)
    assert bound_laplace(MATERN, W, 1.0).valid


# Stein -----------------------------------------------------------------------


def test_stein_general_constant_rule():
    model = MATERN.with_rule(Constant(0.4))
    rep = bound_stein_general(model, W)
    assert rep.terms["correlation_integral"] == pytest.approx(0.0, abs=1e-15)
    lp = 50.0 * 0.4
    assert rep.total == pytest.approx(lp * lp * unit_ball_volume(2) * 0.1**2, rel=1e-12)


def test_stein_general_matern_contact_part():
    corr = correlation_integral(MATERN)
    contact = radial_integrals(2).S_dminus1 * 0.05**2 * radial_integrals(2).B_d
    assert contact == pytest.approx(math.pi * 0.05**2)
    ring = corr - contact
    assert 0 < ring < contact
    # independent evaluation of the ring piece
    ref, _ = integrate.quad(lambda t: t * abs(g_exact(MATERN, t) - 1), 1.0, 2.0, epsabs=0, epsrel=1e-11)
    assert ring == pytest.approx(2 * math.pi * 0.05**2 * ref, rel=1e-7)


@pytest.mark.parametrize("rule", [MaternI(), Geometric(0.9, 0.5), Logistic(0.5, 2), Parity()])
def test_correlation_integral_tolerance_agreement(rule):
    model = MATERN.with_rule(rule)
    a, b = correlation_integral(model, 1e-6), correlation_integral(model, 1e-8)
    assert abs(a - b) <= 1e-5 * abs(b)


def test_stein_general_scales_with_window():
    big = Window((0.0, 0.0), (2.0, 3.0))
    assert bound_stein_general(MATERN, big).total == pytest.approx(6 * bound_stein_general(MATERN, W).total, rel=1e-12)


def test_stein_lower_constant_rule_and_shared_integral():
    assert bound_stein_lower(MATERN.with_rule(Constant(0.5)), W).total == 0.0
    lower = bound_stein_lower(MATERN, W)
    general = bound_stein_general(MATERN, W)
    assert lower.terms["correlation_integral"] == general.terms["correlation_integral"]
    assert lower.total >= 0.0


def test_stein_lower_perimeter_share_vanishes():
    ratios = []
    for side in (1.0, 2.0, 4.0, 8.0):
        rep = bound_stein_lower(MATERN, Window((0.0, 0.0), (side, side)))
        ratios.append(rep.terms["perimeter_over_volume"])
        assert rep.terms["correlation_term"] == pytest.approx(bound_stein_lower(MATERN, W).terms["correlation_term"])
    np.testing.assert_allclose(np.array(ratios[:-1]) / np.array(ratios[1:]), 2.0)


def test_smallr_flat_rule_has_no_xi0():
    rep = bound_stein_smallr(Model(2, 0.01, Table((1.0, 1.0), 0.0), lam=10.0), W)
    assert rep.terms["Xi0"] == 0.0
    assert rep.terms["leading_coefficient"] == pytest.approx(rep.terms["Xi1"] * Model(2, 0.01, MaternI(), lam=10.0).mu)


def test_smallr_constant_rule():
    rep = bound_stein_smallr(MATERN.with_rule(Constant(0.5)), W)
    assert rep.terms["Xi0"] == 0.0 and rep.terms["Xi1"] == 0.0


def test_smallr_validity_flag():
    rule = Geometric(0.9, 0.5)
    assert bound_stein_smallr(Model.from_mu(2, 0.1, rule, lam=10.0), W).valid
    assert not bound_stein_smallr(Model.from_mu(2, 0.5, rule, lam=10.0), W).valid


def test_smallr_case_b_rate():
    rule = Table((0.0, 0.8), 0.4)
    values = []
    for r in (0.02, 0.01, 0.005, 0.0025):
        model = Model(2, r, rule, lam=50.0)
        values.append(bound_stein_smallr(model, W).total / (50.0**2 * r**2))
    assert max(values) / min(values) < 1.5


def test_smallr_unsupported():
    with pytest.raises(UnsupportedRuleError):
        bound_stein_smallr(MATERN.with_rule(Table((0.0, 0.0), 1.0)), W)


def test_smallr_matches_general_as_mu_shrinks():
    rule = Geometric(0.9, 0.5)
    s = radial_integrals(2).S_dminus1
    drift = []
    for j in range(9):
        mu = 2.0**-j * 0.9 / 4
        model = Model.from_mu(2, mu, rule, lam=10.0)
        lead = bound_stein_smallr(model, W).terms["leading_coefficient"]
        drift.append(abs(lead / (correlation_integral(model) / (s * model.r**2)) - 1))
    assert drift[-1] < 0.1
    assert drift[-1] < drift[0]


def test_moderate_constant_rule():
    assert moderate_surrogate(MATERN.with_rule(Constant(0.3))) == 0.0


def test_moderate_logistic_beta_squared():
    def variance_term(beta):
        model = Model.from_mu(2, 1.0, Logistic(beta, 3), lam=10.0)
        rep = bound_stein_moderate(model, W)
        return model.mu * rep.terms["lipschitz"] ** 2 / rep.terms["m_p"] ** 2, rep.terms["lipschitz"]

    v0, l0 = variance_term(0.1)
    assert l0 <= 0.1 / 4 + 1e-15
    # the beta^2 law is exact once m_p and the modulus settle at their beta -> 0 limits
    (v1, l1), (v2, _) = variance_term(0.01), variance_term(0.005)
    assert v1 / v2 == pytest.approx(4.0, rel=0.05)
    assert l1 / 0.0025 == pytest.approx(1.0, rel=0.05)


def test_moderate_degenerate_denominator():
    with pytest.raises(DegenerateDenominatorError):
        bound_stein_moderate(MATERN.with_rule(Constant(0.0)), W)


@pytest.mark.parametrize("rule", LIPSCHITZ_RULES, ids=lambda r: r.name)
@pytest.mark.parametrize("mu", [0.1, 0.5, 1.0, 2.0, 5.0])
def test_surrogate_dominates_integral(rule, mu):
    model = Model.from_mu(2, mu, rule, lam=10.0)
    scale = radial_integrals(2).S_dminus1 * model.r**2
    assert (moderate_surrogate(model) - correlation_integral(model)) / scale >= -1e-12


@pytest.mark.parametrize("rule", LIPSCHITZ_RULES, ids=lambda r: r.name)
def test_pointwise_bound_dominates(rule):
    for mu in (0.2, 1.0, 3.0):
        model = Model.from_mu(2, mu, rule, lam=10.0)
        for t in np.linspace(0.02, 2.5, 40):
            assert pointwise_g_bound(model, float(t)) >= abs(g_exact(model, float(t)) - 1) - 1e-12
    assert pointwise_g_bound(Model.from_mu(2, 1.0, rule, lam=1.0), 2.2) == 0.0


def test_pointwise_constant_rule_is_zero():
    model = Model.from_mu(3, 1.0, Constant(0.5), lam=1.0)
    assert all(pointwise_g_bound(model, t) == 0.0 for t in (0.3, 1.0, 1.5))


def test_poincare_variance_bound():
    from nbthin.analytic import g_decomposition

    for rule in LIPSCHITZ_RULES:
        lip = lipschitz_modulus(rule)
        for mu in (0.1, 1.0, 5.0):
            model = Model.from_mu(2, mu, rule, lam=1.0)
            for t in np.linspace(0.05, 1.95, 15):
                dec = g_decomposition(model, float(t))
                assert 0.0 <= dec.variance <= mu * omega(2, float(t)) * lip**2 + 1e-12


# reports and tables ------------------------------------------------------------


def test_report_json_round_trip():
    rep = bound_laplace(MATERN, W, 1.0)
    data = json.loads(rep.to_json())
    assert data["route"] == "Laplace" and data["total"] == rep.total
    assert set(data) == {"route", "total", "terms", "constants_used", "validity_notes", "valid"}


def test_constants_are_reported():
    c = Constants(C_stein=2.5)
    rep = bound_stein_general(MATERN, W, constants=c)
    assert rep.constants_used["C_d"] == 2.5
    base = bound_stein_general(MATERN, W)
    corr, rem = base.terms["correlation_integral"], base.terms["remainder"]
    assert rep.total == pytest.approx(base.total * (2.5 * corr + rem) / (corr + rem), rel=1e-12)


def test_compare_routes_table():
    model = Model(2, 0.05, Geometric(0.9, 0.5), lam=50.0)
    table = compare_routes(model, W)
    names = [n for n, _ in table.rows]
    assert names == [model.rule.name, "flat012", "matern_flat01", "logistic", "parity"]
    csv_text = table.to_csv("hash").splitlines()
    assert csv_text[0] == "# hash" and csv_text[1] == "rule," + ",".join(ROUTES)
    md = table.to_markdown()
    assert md.count("\n") == 2 + len(names)
    # parity has p(0) > 0 = p(1): no small-r route
    assert "SteinSmallR" not in dict(table.rows)["parity"]
    with ThreadPoolExecutor(2) as ex:
        assert compare_routes(model, W, executor=ex).totals() == table.totals()
    json.loads(table.to_json())


def test_parity_weak_for_coupling_but_not_laplace():
    model = Model.from_mu(2, 2.0, Parity(), lam=50.0)
    reps = evaluate_routes(model, W)
    assert reps["CouplingTV"].terms["delta1"] == pytest.approx(0.5, abs=0.01)
    half = Model(2, model.r / 2, Parity(), lam=50.0)
    assert evaluate_routes(half, W)["Laplace"].total == pytest.approx(reps["Laplace"].total / 4)


def test_constant_rule_routes_are_geometric_remainders():
    model = MATERN.with_rule(Constant(0.5))
    reps = evaluate_routes(model, W)
    assert reps["CouplingTV"].total == pytest.approx(0.0, abs=1e-12)
    assert reps["SteinLower"].total == 0.0
    rem = 25.0**2 * unit_ball_volume(2) * 0.1**2
    for route in ("SteinGeneral", "SteinSmallR", "SteinModerateR"):
        assert reps[route].total == pytest.approx(rem, rel=1e-9)


def test_mixture_used_in_lambda_prime():
    rep = bound_stein_general(MATERN, W)
    assert rep.terms["lambda_prime"] == pytest.approx(50.0 * poisson_mixture(MaternI(), MATERN.mu))
