import csv
import math

import numpy as np
import pytest

from hrps.core import LinearForm, ThetaSet
from hrps.fixtures import load_fixture
from hrps.growth import (
    ConeSpec,
    ExponentEstimate,
    IndicatorGrid,
    ProperFormError,
    SaturationError,
    bisection_exponent,
    chamber_directions,
    concavity_check,
    critical_exponent,
    directional_tau,
    growth_indicator,
    limit_cone,
    norm_exponent,
    poincare_partial_sum,
    tangency_check,
    write_indicator_csv,
)
from hrps.orbit import GeneratorSet, InsufficientDataError, enumerate_ball

FULL3 = ThetaSet((1, 2))
ALPHA1 = LinearForm(FULL3, [1.0, 0.0], 3)
PSI0 = LinearForm(ThetaSet((1,)), [1.0], 2)  # psi0(t, -t) = 2t
TAU_RAY = np.array([2.0, 0.0, -2.0]) / math.sqrt(8)


@pytest.fixture(scope="module")
def s2_L10():
    return enumerate_ball(load_fixture("schottky2"), 10)


@pytest.fixture(scope="module")
def tau3_L8():
    return enumerate_ball(load_fixture("schottky2-tau3"), 8)


@pytest.fixture(scope="module")
def pingpong_L8():
    return enumerate_ball(load_fixture("pingpong-sl3"), 8)


# --- partial sums ------------------------------------------------------------


def test_partial_sum_identity():
    ball = enumerate_ball(load_fixture("schottky2"), 0)
    assert poincare_partial_sum(ball, PSI0, 3.7) == 1.0


def test_partial_sum_cyclic_geometric():
    ball = enumerate_ball(load_fixture("cyclic-diag"), 5)
    expected = 1 + 2 * sum(math.exp(-2 * n) for n in range(1, 6))
    assert poincare_partial_sum(ball, PSI0, 1.0) == pytest.approx(expected, rel=1e-15)


def test_partial_sum_at_zero_counts(tau3_L8):
    assert poincare_partial_sum(tau3_L8, ALPHA1, 0.0) == len(tau3_L8)


def test_partial_sum_monotone(tau3_L8):
    s_vals = np.linspace(0.1, 2.0, 12)
    sums = [poincare_partial_sum(tau3_L8, ALPHA1, s) for s in s_vals]
    assert all(b <= a for a, b in zip(sums, sums[1:]))
    by_L = [poincare_partial_sum(tau3_L8.restrict(L), ALPHA1, 1.0) for L in range(9)]
    assert all(b >= a for a, b in zip(by_L, by_L[1:]))


def test_partial_sum_saturates(tau3_L8):
    with pytest.raises(SaturationError):
        poincare_partial_sum(tau3_L8, ALPHA1, -100.0)


# --- critical exponent -------------------------------------------------------


def test_improper_form_rejected(tau3_L8):
    with pytest.raises(ProperFormError) as info:
        critical_exponent(tau3_L8, ALPHA1.scaled(-1.0))
    assert info.value.offenders


def test_cyclic_exponent_is_zero():
    ball = enumerate_ball(load_fixture("cyclic-diag"), 40)
    est = critical_exponent(ball, PSI0)
    assert est.value == 0.0
    assert est.model == "subexponential"


def test_estimate_ci_contains_value():
    with pytest.raises(ValueError):
        ExponentEstimate(1.0, (1.1, 1.2), (0, 1))


def test_needs_L2():
    with pytest.raises(InsufficientDataError):
        critical_exponent(enumerate_ball(load_fixture("schottky2"), 1), PSI0)


def test_tau3_matches_sl2_termwise(s2_L10):
    tau = enumerate_ball(load_fixture("schottky2-tau3"), 10)
    a = critical_exponent(s2_L10, PSI0)
    b = critical_exponent(tau, ALPHA1)
    assert b.value == pytest.approx(a.value, abs=1e-10)


def test_bisection_agrees_with_slope(s2_L10):
    est = critical_exponent(s2_L10, PSI0)
    bis = bisection_exponent(s2_L10, PSI0)
    # two different estimators of the same truncated series
    assert abs(bis - est.value) < 0.1


def test_scaling_identity(tau3_L8):
    a = critical_exponent(tau3_L8, ALPHA1)
    b = critical_exponent(tau3_L8, ALPHA1.scaled(2.5))
    assert b.value == pytest.approx(a.value / 2.5, rel=1e-9)


def test_relabelling_invariance():
    G = load_fixture("pingpong-sl3")
    H = GeneratorSet([G.gens[1].matrix, G.gens[0].matrix], ["b", "a"])
    psi = LinearForm(FULL3, [1.0, 1.0], 3)
    a = critical_exponent(enumerate_ball(G, 8), psi)
    b = critical_exponent(enumerate_ball(H, 8), psi)
    assert b.ci[0] <= a.value <= b.ci[1]


def test_bootstrap_deterministic(tau3_L8):
    a = critical_exponent(tau3_L8, ALPHA1, seed=3)
    b = critical_exponent(tau3_L8, ALPHA1, seed=3)
    assert a == b


# --- cones and indicator -----------------------------------------------------


def test_cone_spec_validation():
    with pytest.raises(ValueError):
        ConeSpec(np.array([1.0, 0.0, 0.0]) * 2)
    with pytest.raises(ValueError):
        ConeSpec(TAU_RAY, (0.1, 0.2))


def test_full_cone_equals_norm_exponent(pingpong_L8):
    u = np.array([1.0, 0.0, -1.0]) / math.sqrt(2)
    taus = directional_tau(pingpong_L8, ConeSpec(u, (2.5,)), FULL3)
    assert taus[0].value == pytest.approx(norm_exponent(pingpong_L8, FULL3).value, abs=1e-12)


def test_tau3_cones(tau3_L8):
    on = directional_tau(tau3_L8, ConeSpec(TAU_RAY, (0.2, 0.05)), FULL3)
    total = norm_exponent(tau3_L8, FULL3)
    assert on[-1].value == pytest.approx(total.value, abs=1e-9)
    off = directional_tau(tau3_L8, ConeSpec(np.array([1.0, 1.0, -2.0]) / math.sqrt(6), (0.2, 0.05)), FULL3)
    assert all(e.value == -math.inf for e in off)


def test_cones_monotone_in_aperture(pingpong_L8):
    u = chamber_directions(3, FULL3, 5)[2]
    taus = directional_tau(pingpong_L8, ConeSpec(u), FULL3)
    vals = [t.value for t in taus]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    raw = directional_tau(pingpong_L8, ConeSpec(u), FULL3, constrain=False)
    assert [t.raw_value for t in taus] == [t.value for t in raw]


def test_indicator_zero_direction_rejected(tau3_L8):
    with pytest.raises(ValueError):
        growth_indicator(tau3_L8, FULL3, [[0.0, 0.0, 0.0]])


def test_indicator_homogeneous_and_bounded(pingpong_L8):
    dirs = chamber_directions(3, FULL3, 5)
    grid = growth_indicator(pingpong_L8, FULL3, dirs)
    total = norm_exponent(pingpong_L8, FULL3)
    finite = np.isfinite(grid.values)
    assert finite.any()
    assert np.all(grid.values[finite] <= total.value + 1e-12)
    k = int(np.flatnonzero(finite)[0])
    assert grid.value(3.0 * dirs[k]) == pytest.approx(3.0 * grid.value(dirs[k]), rel=1e-15)
    assert grid.value(np.zeros(3)) == 0.0


def test_indicator_csv(tmp_path, tau3_L8):
    grid = growth_indicator(tau3_L8, FULL3, [TAU_RAY], apertures=(0.2, 0.1))
    p = tmp_path / "ind.csv"
    write_indicator_csv(grid, p)
    rows = list(csv.reader(p.open(encoding="utf-8")))
    assert rows[0] == ["u1", "u2", "u3", "aperture", "tau", "ci_low", "ci_high", "psi_hat"]
    assert len(rows) == 3
    assert float(rows[1][-1]) == grid.values[0]


def test_chamber_directions_are_unit():
    dirs = chamber_directions(4, ThetaSet((1, 3)), 7)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    with pytest.raises(ValueError):
        chamber_directions(4, ThetaSet((1, 2, 3)), 3)


# --- limit cone ------------------------------------------------------------------


def test_limit_cone_tau3_single_ray(tau3_L8):
    est = limit_cone(tau3_L8, FULL3, cutoff=5.0)
    assert est.rays.shape[0] == 1
    np.testing.assert_allclose(est.rays[0], TAU_RAY, atol=1e-9)
    assert est.bounded_distance < 1e-9


def test_limit_cone_pingpong_two_dimensional(pingpong_L8):
    est = limit_cone(pingpong_L8, FULL3, cutoff=10.0)
    assert est.dimension == 2
    assert est.angular_width > 0.05
    # sample directions stay inside the hull up to chart round-off
    assert est.bounded_distance < 50


def test_limit_cone_identity_ball():
    with pytest.raises(InsufficientDataError):
        limit_cone(enumerate_ball(load_fixture("pingpong-sl3"), 0), FULL3, 0.0)


# --- tangency and concavity ------------------------------------------------------


def test_tangency_tau3_contact(tau3_L8):
    grid = growth_indicator(tau3_L8, FULL3, chamber_directions(3, FULL3, 7))
    rep = tangency_check(tau3_L8, ALPHA1, grid)
    assert rep.passed
    np.testing.assert_allclose(rep.contact_direction, TAU_RAY, atol=1e-9)
    # off the ray every direction is vacuous
    assert np.sum(np.isfinite(rep.gaps)) == 1


def test_tangency_of_normalised_form(tau3_L8):
    grid = growth_indicator(tau3_L8, FULL3, [TAU_RAY])
    delta = critical_exponent(tau3_L8, ALPHA1)
    scaled = ALPHA1.scaled(delta.value)
    rep = tangency_check(tau3_L8, scaled, grid)
    assert rep.delta.value == pytest.approx(1.0, rel=1e-9)
    assert rep.passed


def _grid(values, n=5):
    dirs = chamber_directions(3, FULL3, n)
    return IndicatorGrid(FULL3, dirs, np.asarray(values, dtype=float))


def test_concavity_single_ray_vacuous(tau3_L8):
    grid = growth_indicator(tau3_L8, FULL3, chamber_directions(3, FULL3, 5))
    assert concavity_check(grid).passed


def test_concavity_affine_grid_passes():
    dirs = chamber_directions(3, FULL3, 5)
    f = np.array([0.3, 0.1, -0.4])
    rep = concavity_check(IndicatorGrid(FULL3, dirs, dirs @ f), slack=1e-12)
    assert rep.passed and rep.checked > 0


def test_concavity_convex_grid_fails():
    dirs = chamber_directions(3, FULL3, 5)
    vals = 1.0 + 3.0 * (dirs @ np.array([1.0, -2.0, 1.0])) ** 2
    rep = concavity_check(IndicatorGrid(FULL3, dirs, vals), slack=1e-12)
    assert not rep.passed and rep.violations
