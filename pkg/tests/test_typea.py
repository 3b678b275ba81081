import math

import numpy as np
import pytest

from hrps.core import CartanVector, ThetaSet, cartan_projection, p_theta, random_sl
from hrps.typea import (
    hitchin_bound,
    hitchin_bound_verify,
    irreducible_rep,
    p_alpha_closed_form,
    quint_alpha_bound,
    quint_upper_bound,
    rho_form,
    w_vector,
)


def _alpha(i, t):
    return t[i - 1] - t[i]


def test_w_vector_examples():
    np.testing.assert_allclose(w_vector(3, 1).entries, [2 / 3, -1 / 3, -1 / 3], atol=1e-16)
    np.testing.assert_allclose(w_vector(3, 2).entries, [1 / 3, 1 / 3, -2 / 3], atol=1e-16)


@pytest.mark.parametrize("d", range(2, 9))
def test_w_vector_normalised(d):
    for i in range(1, d):
        w = w_vector(d, i).entries
        assert _alpha(i, w) == pytest.approx(1.0, abs=1e-15)
        assert abs(w.sum()) < 1e-15
        for j in range(1, d):
            if j != i:
                assert _alpha(j, w) == pytest.approx(0.0, abs=1e-15)


def test_p_alpha_example():
    out = p_alpha_closed_form(3, 1, np.array([1.0, 0.0, -1.0]))
    np.testing.assert_allclose(out, [1.0, -0.5, -0.5], atol=1e-16)
    assert isinstance(p_alpha_closed_form(3, 1, CartanVector(np.array([1.0, 0.0, -1.0]))), CartanVector)


def test_p_alpha_fixes_w():
    for d in range(2, 7):
        for i in range(1, d):
            np.testing.assert_allclose(p_alpha_closed_form(d, i, w_vector(d, i).entries), w_vector(d, i).entries, atol=1e-15)


def test_p_alpha_matches_orthogonal_projection(rng):
    for d in range(2, 9):
        t = rng.normal(size=(200, d))
        t -= t.mean(axis=1, keepdims=True)
        for i in range(1, d):
            np.testing.assert_allclose(p_alpha_closed_form(d, i, t), p_theta(t, ThetaSet((i,))), atol=1e-12)


def test_p_alpha_index_range():
    with pytest.raises(ValueError):
        p_alpha_closed_form(3, 3, np.zeros(3))


def test_quint_upper_bound_values(rng):
    assert quint_upper_bound(np.array([1.0, 0.0, -1.0])) == pytest.approx(3.0, abs=1e-15)
    assert quint_upper_bound(np.zeros(5)) == 0.0
    a, b = rng.normal(size=5), rng.normal(size=5)
    assert quint_upper_bound(2 * a - 3 * b) == pytest.approx(2 * quint_upper_bound(a) - 3 * quint_upper_bound(b))


def test_quint_upper_bound_direct_sum(rng):
    t = rng.normal(size=6)
    d = 6
    direct = sum(t[i] - t[j] for i in range(d) for j in range(i + 1, d)) - 0.5 * sum(t[i] - t[d - 1 - i] for i in range(d // 2))
    assert quint_upper_bound(t) == pytest.approx(direct, rel=1e-13)


def test_quint_alpha_bound_d3_exact():
    assert quint_alpha_bound(3, 1) == 3
    assert quint_alpha_bound(3, 2) == 3


def test_quint_alpha_bound_d4_grid_oracle():
    # slice: t1 = 3/4 fixed by 4 t1 = 3, then t2, t3 on a grid and t4 from the trace
    n = 1501
    t2, t3 = np.meshgrid(np.linspace(-0.75, 0.75, n), np.linspace(-0.75, 0.75, n))
    t1 = np.full_like(t2, 0.75)
    t4 = -t1 - t2 - t3
    ok = (t1 >= t2) & (t2 >= t3) & (t3 >= t4)
    T = np.stack([t1, t2, t3, t4], axis=-1)[ok]
    assert quint_alpha_bound(4, 1) == pytest.approx(float(quint_upper_bound(T).max()), abs=1e-3)
    # the barycentric grid route agrees with the vertex route
    assert quint_alpha_bound(4, 1, grid=10) == quint_alpha_bound(4, 1)


@pytest.mark.parametrize("d,i,expected", [(3, 1, 1.0), (4, 2, 2 / 3), (6, 1, 1.0), (3, 2, 1.0)])
def test_hitchin_bound_examples(d, i, expected):
    assert hitchin_bound(d, i) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("d", range(2, 7))
def test_hitchin_bound_brute_force(d):
    for i in range(1, d):
        chk = hitchin_bound_verify(d, i)
        assert chk.gap <= 1e-6
        assert chk.grid_max == pytest.approx(chk.closed_form, abs=1e-6)


@pytest.mark.parametrize("d", range(3, 7))
def test_hitchin_sharper_than_quint(d):
    for i in range(1, d):
        assert hitchin_bound(d, i) < quint_alpha_bound(d, i)


def test_rho_form_examples(rng):
    # 2 rho(t, -t) = 2t
    assert rho_form(2, ThetaSet((1,)))(np.array([0.7, -0.7])) == pytest.approx(1.4, abs=1e-15)
    full = ThetaSet((1, 2))
    # positive roots of SL_3: t1-t2, t2-t3, t1-t3
    t = np.array([1.0, 0.0, -1.0])
    assert rho_form(3, full)(t) == pytest.approx((t[0] - t[1]) + (t[1] - t[2]) + (t[0] - t[2]))
    assert rho_form(3, full)(t) == pytest.approx(4.0)
    theta = ThetaSet((2,))
    v = rng.normal(size=4)
    v -= v.mean()
    two_rho = np.array([3.0, 1.0, -1.0, -3.0])
    assert rho_form(4, theta)(v) == pytest.approx(two_rho @ p_theta(v, theta), abs=1e-12)


def test_irreducible_rep_diagonal():
    g = irreducible_rep(np.diag([math.e, 1 / math.e]), 3)
    np.testing.assert_allclose(g.matrix, np.diag([math.e**2, 1.0, math.e**-2]), atol=1e-14)


def test_irreducible_rep_cartan_weights(rng):
    for d in (3, 4, 5):
        weights = np.arange(d - 1, -d, -2, dtype=float)
        for _ in range(30):
            g = random_sl(2, rng, 1.5)
            m1 = cartan_projection(g).entries[0]
            np.testing.assert_allclose(cartan_projection(irreducible_rep(g, d)).entries, m1 * weights, atol=1e-8)


def test_irreducible_rep_homomorphism(rng):
    for _ in range(20):
        g, h = random_sl(2, rng, 1.0), random_sl(2, rng, 1.0)
        lhs = irreducible_rep(g.matrix @ h.matrix, 4).matrix
        rhs = irreducible_rep(g, 4).matrix @ irreducible_rep(h, 4).matrix
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


def test_irreducible_rep_orthogonal_to_orthogonal():
    c, s = math.cos(0.4), math.sin(0.4)
    T = irreducible_rep(np.array([[c, -s], [s, c]]), 5).matrix
    np.testing.assert_allclose(T @ T.T, np.eye(5), atol=1e-13)


def test_irreducible_rep_rejects_non_sl2():
    with pytest.raises(ValueError):
        irreducible_rep(np.diag([2.0, 1.0]), 3)
    with pytest.raises(ValueError):
        irreducible_rep(np.eye(3), 3)
