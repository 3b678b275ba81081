import os
import subprocess
import sys

import numpy as np
import pytest

from hrps import _kernels_py, kernels
from hrps.core import random_orthogonal

compiled = pytest.importorskip("hrps._kernels")

# Rotation.from_euler("zyx", [0.3, 0.5, 0.7]).as_matrix()
U_FROZEN = np.array(
    [
        [0.8383866435942031, -0.2593433800522307, 0.47942553860420284],
        [0.5210862105571306, 0.639408930366897, -0.5653542083811436],
        [-0.159928099501168, 0.7238074543621003, 0.6712121661589572],
    ]
)

# f(v) = 1/4 sum log^2 eig(exp(-v) U exp(2 mu) U^T exp(-v)), evaluated with mpmath at 50 digits
FROZEN = [
    ((2.0, 0.5, -2.5), (1.0, 0.2, -1.2), 12.88372084260725893),
    ((12.0, 1.0, -13.0), (3.0, 0.5, -3.5), 422.55537274872143828),
    # at v = 0 the value is sum mu_i^2 whatever U is
    ((14.0, 2.0, -16.0), (0.0, 0.0, 0.0), 456.0),
]


@pytest.mark.parametrize("mod", [_kernels_py, compiled], ids=["python", "cython"])
@pytest.mark.parametrize("mu,v,expected", FROZEN)
def test_value_matches_high_precision(mod, mu, v, expected):
    got = mod.value_batch(U_FROZEN[None], np.array([mu]), np.array([v]))[0]
    assert got == pytest.approx(expected, rel=1e-11)


def _random_batch(rng, n, d, spread):
    U = np.array([random_orthogonal(d, rng) for _ in range(n)])
    mu = np.sort(rng.normal(scale=spread, size=(n, d)), axis=1)[:, ::-1]
    mu -= mu.mean(axis=1, keepdims=True)
    return U, np.ascontiguousarray(mu)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_backends_agree(rng, d):
    U, mu = _random_batch(rng, 300, d, 3.0)
    f1, s1, _ = _kernels_py.minimize_batch(U, mu, 4.0, early_stop=False)
    f2, s2, _ = compiled.minimize_batch(U, mu, 4.0, early_stop=False)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_allclose(f1, f2, rtol=1e-8, atol=1e-10)


def test_minimum_below_any_cone_point(rng):
    # the minimiser's value never exceeds the objective at sampled cone points
    d = 3
    U, mu = _random_batch(rng, 50, d, 2.0)
    f, st, _ = compiled.minimize_batch(U, mu, 1.0, early_stop=False)
    W = _kernels_py.cone_basis(d)
    for _ in range(20):
        V = rng.exponential(size=(50, d - 1)) @ W.T
        vals = compiled.value_batch(U, mu, np.ascontiguousarray(V))
        assert np.all(f <= vals + 1e-9)


def test_identity_frame_minimum_is_zero(rng):
    _, mu = _random_batch(rng, 20, 4, 2.0)
    U = np.broadcast_to(np.eye(4), (20, 4, 4)).copy()
    for mod in (_kernels_py, compiled):
        f, st, _ = mod.minimize_batch(U, mu, 1e-6, early_stop=False)
        np.testing.assert_allclose(f, 0.0, atol=1e-12)
        assert np.all(st == 1)


def test_dispatch_uses_numpy_above_compiled_limit(rng):
    d = kernels.MAX_COMPILED_D + 1
    U, mu = _random_batch(rng, 3, d, 1.0)
    f, _, _ = kernels.minimize(U, mu, 1.0, early_stop=False)
    f_py, _, _ = _kernels_py.minimize_batch(U, mu, 1.0, early_stop=False)
    np.testing.assert_array_equal(f, f_py)


def test_environment_forces_pure_python():
    env = dict(os.environ, HRPS_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import hrps; print(hrps.BACKEND)"], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "python"
    env.pop("HRPS_PURE_PYTHON")
    out = subprocess.run([sys.executable, "-c", "import hrps; print(hrps.BACKEND)"], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"
