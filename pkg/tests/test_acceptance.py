"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints one ``criterion N: PASS`` or ``criterion N: FAIL`` line
(printed past pytest's capture) before asserting.  The budget includes the
orbit enumeration a criterion needs, whichever test happened to build it.
"""

import math
import time

import numpy as np
import pytest

from hrps.conformal import (
    HopfPoint,
    bms_exponent,
    conical_mass_estimate,
    entropy_drop_experiment,
    patterson_measure,
    properness_probe,
    shadow_lemma_check,
    transverse_frame,
)
from hrps.core import (
    LinearForm,
    ThetaSet,
    busemann_theta,
    cartan_projection,
    opposition_involution,
    p_theta,
    random_orthogonal,
    random_sl,
)
from hrps.fixtures import load_fixture
from hrps.flags import PartialFlag, ShadowIndex, attractor_flag, sample_flags, shadow_multiplicity
from hrps.growth import chamber_directions, critical_exponent, growth_indicator, tangency_check
from hrps.orbit import enumerate_ball
from hrps.typea import hitchin_bound, hitchin_bound_verify, p_alpha_closed_form, quint_alpha_bound

FULL3 = ThetaSet((1, 2))
ALPHA1 = LinearForm(FULL3, [1.0, 0.0], 3)
PSI0 = LinearForm(ThetaSet((1,)), [1.0], 2)

_BALLS = {}


def _ball(name, L):
    """Cached ball and the seconds its enumeration took."""
    if (name, L) not in _BALLS:
        t = time.perf_counter()
        ball = enumerate_ball(load_fixture(name), L)
        _BALLS[name, L] = (ball, time.perf_counter() - t)
    return _BALLS[name, L]


@pytest.fixture
def report(capsys):
    def _report(n, passed, detail, seconds, limit):
        ok = bool(passed) and seconds < limit
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  ({detail}; {seconds:.2f} s of {limit:g} s)")
        assert passed, detail
        assert seconds < limit, f"runtime {seconds:.1f} s over budget {limit} s"

    return _report


def test_criterion_01_projection_formula(report):
    t = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for d in range(2, 9):
        v = rng.normal(size=(1000, d))
        v -= v.mean(axis=1, keepdims=True)
        for i in range(1, d):
            worst = max(worst, float(np.abs(p_alpha_closed_form(d, i, v) - p_theta(v, ThetaSet((i,)))).max()))
    report(1, worst <= 1e-12, f"max deviation {worst:.2e}", time.perf_counter() - t, 1)


def test_criterion_02_inverse_cartan(report):
    t = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for d in (2, 3, 4, 6):
        for _ in range(1000):
            g = random_sl(d, rng, 1.5)
            dev = cartan_projection(g.inv()).entries - opposition_involution(cartan_projection(g).entries)
            worst = max(worst, float(np.abs(dev).max()))
    report(2, worst <= 1e-9, f"max deviation {worst:.2e}", time.perf_counter() - t, 5)


def test_criterion_03_type_a_constants(report):
    t = time.perf_counter()
    q = (quint_alpha_bound(3, 1), quint_alpha_bound(3, 2))
    gaps, closed = [], True
    for d in range(2, 7):
        for i in range(1, d):
            chk = hitchin_bound_verify(d, i)
            gaps.append(chk.gap)
            closed &= hitchin_bound(d, i) == max(i, d - i) / (d - 1)
    ok = q == (3, 3) and max(gaps) <= 1e-6 and closed
    report(3, ok, f"quint bounds {q}, largest brute gap {max(gaps):.1e}", time.perf_counter() - t, 10)


def test_criterion_04_busemann_cocycle(report):
    t = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_add = worst_comp = 0.0
    for n in range(500):
        d = 3 + n % 2
        theta = ThetaSet((1,)) if n % 3 == 0 else ThetaSet.full(d) if n % 3 == 1 else ThetaSet((d - 1,))
        k = random_orthogonal(d, rng)
        g, h, l = (random_sl(d, rng, 1.5) for _ in range(3))
        add = busemann_theta(k, g, h, theta).entries + busemann_theta(k, h, l, theta).entries
        worst_add = max(worst_add, float(np.abs(add - busemann_theta(k, g, l, theta).entries).max()))
        # same partial flag, different completion
        m = np.eye(d)
        for lo, hi in theta.blocks(d):
            if hi - lo > 1:
                m[lo:hi, lo:hi] = random_orthogonal(hi - lo, rng)
        other = busemann_theta(k @ m, g, h, theta).entries
        worst_comp = max(worst_comp, float(np.abs(other - busemann_theta(k, g, h, theta).entries).max()))
    log_a = np.array([1.3, 0.4, -1.7])
    base = busemann_theta(np.eye(3), np.eye(3), np.diag(np.exp(log_a)), FULL3).entries
    exact = float(np.abs(base - log_a).max())
    ok = worst_add <= 1e-9 and worst_comp <= 1e-9 and exact <= 1e-9
    detail = f"cocycle {worst_add:.1e}, completion {worst_comp:.1e}, log a {exact:.1e}"
    report(4, ok, detail, time.perf_counter() - t, 5)


def test_criterion_05_bms_levi_invariance(report):
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    d, theta = 4, ThetaSet((1, 3))
    psi = LinearForm(theta, [1.0, 0.7], d)
    xi, eta = PartialFlag.random(d, theta, rng), PartialFlag.random(d, theta.iota(d), rng)
    g = transverse_frame(xi, eta)
    base = bms_exponent(xi, eta, psi, g)
    worst = 0.0
    for _ in range(100):
        ell = np.zeros((d, d))
        for lo, hi in theta.blocks(d):
            ell[lo:hi, lo:hi] = random_sl(hi - lo, rng, 1.0).matrix if hi - lo > 1 else math.exp(rng.normal())
        ell /= abs(np.linalg.det(ell)) ** (1.0 / d)
        worst = max(worst, abs(bms_exponent(xi, eta, psi, g @ ell) - base))
    report(5, worst <= 1e-8, f"max change {worst:.1e}", time.perf_counter() - t, 5)


def test_criterion_06_series_consistency(report):
    t = time.perf_counter()
    s2, t1 = _ball("schottky2", 12)
    tau, t2 = _ball("schottky2-tau3", 12)
    a = critical_exponent(s2, PSI0)
    b = critical_exponent(tau, ALPHA1)
    diff = abs(a.value - b.value)
    report(6, diff <= 1e-10, f"exponents {a.value:.12f} and {b.value:.12f}", time.perf_counter() - t + t1 + t2, 120)


def test_criterion_07_shadow_lemma(report):
    t = time.perf_counter()
    b12, tb = _ball("schottky2-tau3", 12)
    reps = {}
    for L in (10, 12):
        ball = b12 if L == 12 else b12.restrict(10)
        delta = critical_exponent(ball, ALPHA1)
        nu = patterson_measure(ball, ALPHA1, delta.value + 0.05)
        reps[L] = shadow_lemma_check(nu, ball, 2.0)
    spread = reps[12].spread
    stable = reps[12].stable_against(reps[10])
    ok = spread <= 1e4 and stable
    detail = f"spread {reps[10].spread:.3f} at L=10, {spread:.3f} at L=12"
    report(7, ok, detail, time.perf_counter() - t + tb, 300)


def test_criterion_08_multiplicity(report):
    t = time.perf_counter()
    ball, tb = _ball("schottky2-tau3", 12)
    flags, _ = sample_flags(ball, FULL3, 20000, 2000, np.random.default_rng(8))
    index = ShadowIndex(flags, FULL3)
    counts, covered = [], []
    for T in range(4, 11):
        rep = shadow_multiplicity(ball, 1.0, ALPHA1, (T, T + 1), index=index)
        counts.append(rep.max_count)
        covered.append(rep.covered)
    slope = np.polyfit(np.arange(4, 11), counts, 1)[0]
    ok = max(counts) <= 20 and slope <= 1e-12
    detail = f"max multiplicities {counts}, slope {slope:+.2f}, windows fully inside ball {covered.count(True)}/7"
    report(8, ok, detail, time.perf_counter() - t + tb, 300)


def test_criterion_09_dichotomy(report):
    t = time.perf_counter()
    ball, tb = _ball("schottky2-tau3", 12)
    delta = critical_exponent(ball, ALPHA1)
    s = delta.value + 0.02
    div = conical_mass_estimate(patterson_measure(ball, ALPHA1, s, tail=True), ball, 3.0)
    conv = conical_mass_estimate(patterson_measure(ball, ALPHA1.scaled(1.5), s, tail=True), ball, 3.0)
    ok = div.fraction > 0.9 and conv.fraction < 0.1
    detail = f"divergent {div.fraction:.3f}, scaled {conv.fraction:.3f}, window {div.window}"
    report(9, ok, detail, time.perf_counter() - t + tb, 300)


def test_criterion_10_properness(report):
    t = time.perf_counter()
    ball, tb = _ball("schottky2-tau3", 12)
    G = ball.generators
    x = HopfPoint(attractor_flag(G.evaluate((1,)), FULL3), attractor_flag(G.evaluate((-2,)), FULL3), np.zeros(3))
    trend = properness_probe(ball, x, ALPHA1, margin=0.1)
    ok = trend.top_half_increasing(strict=True)
    top = [round(trend.minima[k], 3) for k in range(ball.L // 2, ball.L + 1)]
    report(10, ok, f"top-half minima {top}", time.perf_counter() - t + tb, 120)


def test_criterion_11_tangency(report):
    t = time.perf_counter()
    tau, t1 = _ball("schottky2-tau3", 12)
    ping, t2 = _ball("pingpong-sl3", 12)
    dirs = chamber_directions(3, FULL3, 9)
    results = {}
    for name, ball, psi in (("tau3", tau, ALPHA1), ("pingpong", ping, LinearForm(FULL3, [1.0, 1.0], 3))):
        grid = growth_indicator(ball, FULL3, dirs)
        results[name] = tangency_check(ball, psi, grid)
    ok = all(r.passed for r in results.values())
    detail = ", ".join(f"{k} min gap {np.min(r.gaps):.3f}" for k, r in results.items())
    report(11, ok, detail, time.perf_counter() - t + t1 + t2, 300)


def test_criterion_12_entropy_drop(report):
    t = time.perf_counter()
    res = entropy_drop_experiment(load_fixture("schottky2"), [[1]], PSI0, L=12)
    ok = res.delta_sub.value == 0.0 and res.delta_full.value > 0 and res.separated
    detail = f"subgroup {res.delta_sub.value}, group {res.delta_full.value:.4f} CI {tuple(round(c, 4) for c in res.delta_full.ci)}"
    report(12, ok, detail, time.perf_counter() - t, 60)
