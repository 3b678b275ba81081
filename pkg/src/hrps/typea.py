"""Closed-form type A computations: coweights, projections, Hitchin-type bounds."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .core import CartanVector, GroupElement, LinearForm, ThetaSet, coweight, projector


class OptimizationError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def w_vector(d: int, i: int) -> CartanVector:
    """First ``i`` entries ``(d-i)/d``, the remaining ones ``-i/d``."""
    return CartanVector(coweight(d, i))


def p_alpha_closed_form(d: int, i: int, t) -> CartanVector | np.ndarray:
    """``d (t_1 + ... + t_i) / (i (d - i)) * w_i``; accepts a stack of vectors."""
    if not 1 <= i <= d - 1:
        raise ValueError(f"need 1 <= i <= d-1, got i={i}, d={d}")
    arr = np.asarray(t, dtype=float)
    coef = d * arr[..., :i].sum(axis=-1) / (i * (d - i))
    out = np.multiply.outer(coef, coweight(d, i))
    return CartanVector(out) if isinstance(t, CartanVector) else out


def _quint_coeffs(d: int):
    # sum_{i<j} (t_i - t_j) = sum_k (d + 1 - 2k) t_k ; the second sum pairs t_i with t_{d+1-i}
    c = [Fraction(d + 1 - 2 * k) for k in range(1, d + 1)]
    for i in range(1, d // 2 + 1):
        c[i - 1] -= Fraction(1, 2)
        c[d - i] += Fraction(1, 2)
    return c


def quint_upper_bound(t) -> float:
    """``sum_{i<j} (t_i - t_j) - 1/2 sum_{i <= d/2} (t_i - t_{d+1-i})``."""
    arr = np.asarray(t, dtype=float)
    c = np.array([float(x) for x in _quint_coeffs(arr.shape[-1])])
    return arr @ c


def _feasible_vertices(d: int, i: int):
    """Vertices of {t dominant, sum zero : d (t_1 + ... + t_i) = i (d - i)} in exact arithmetic.

    The dominant cone is spanned by the coweights; on the ray through ``w_j`` the
    constraint fixes the scale, so the feasible set is the simplex spanned by
    ``i (d - i) / (d s_i(w_j)) w_j`` with ``s_i`` the sum of the first i entries.
    """
    verts = []
    for j in range(1, d):
        wj = [Fraction(d - j, d) if k < j else Fraction(-j, d) for k in range(d)]
        s = sum(wj[:i])
        scale = Fraction(i * (d - i)) / (d * s)
        verts.append([scale * x for x in wj])
    return verts


def quint_alpha_bound(d: int, i: int, grid: int = 0) -> float:
    """Maximum of :func:`quint_upper_bound` over the normalised dominant slice.

    The objective is linear, so the maximum sits on a vertex; vertices are
    enumerated exactly.  With ``grid > 0`` a barycentric grid over the simplex
    is also evaluated and must not beat the vertex value.
    """
    if not 1 <= i <= d - 1:
        raise ValueError(f"need 1 <= i <= d-1, got i={i}, d={d}")
    c = _quint_coeffs(d)
    verts = _feasible_vertices(d, i)
    vals = [sum(a * b for a, b in zip(c, v)) for v in verts]
    best = max(vals)
    if grid:
        V = np.array([[float(x) for x in v] for v in verts])
        cf = np.array([float(x) for x in c])
        gbest = _simplex_grid_max(V @ cf, grid)
        if gbest > float(best) + 1e-9:
            raise OptimizationError("grid search beat the vertex enumeration", gbest)
    return float(best) if best.denominator != 1 else int(best)


def _simplex_grid_max(vertex_values: np.ndarray, n: int) -> float:
    k = vertex_values.shape[0]
    best = -np.inf
    for comp in itertools.product(range(n + 1), repeat=k - 1):
        s = sum(comp)
        if s > n:
            continue
        lam = np.array([*comp, n - s]) / n
        best = max(best, float(lam @ vertex_values))
    return best


def hitchin_bound(d: int, i: int) -> float:
    """``max(i, d - i) / (d - 1)``."""
    if not 1 <= i <= d - 1:
        raise ValueError(f"need 1 <= i <= d-1, got i={i}, d={d}")
    return max(i, d - i) / (d - 1)


@dataclass
class HitchinCheck:
    d: int
    i: int
    closed_form: float
    reduced_max: float
    grid_max: float

    @property
    def gap(self) -> float:
        return abs(self.closed_form - self.reduced_max)


def _reduced_objective(d: int, i: int, x):
    # t_1 and t_d are fixed by the slice and the trace once t_2..t_i = x and t_{i+1}..t_{d-1} = x
    x = np.asarray(x, dtype=float)
    return (2 * i * (d - i) / d - (2 * i - d) * x) / (d - 1)


def hitchin_bound_verify(d: int, i: int, n_line: int = 200001, n_grid: int = 12) -> HitchinCheck:
    """Brute-force maximisation of ``(t_1 - t_d) / (d - 1)`` on the slice.

    Two routes: the one-variable reduction in which the middle entries are
    equal (a dense line search over its admissible range) and an independent
    coarse grid over the full simplex of the slice.
    """
    if d == 2:
        # the slice is the single point t = (1/2, -1/2)
        return HitchinCheck(d, i, hitchin_bound(d, i), 1.0, 1.0)
    lo, hi = -i / d, (d - i) / d
    xs = np.linspace(lo, hi, n_line)
    ok = _reduced_feasible(d, i, xs)
    reduced = float(_reduced_objective(d, i, xs[ok]).max())
    V = np.array([[float(x) for x in v] for v in _feasible_vertices(d, i)])
    vals = (V[:, 0] - V[:, -1]) / (d - 1)
    grid = _simplex_grid_max(vals, n_grid) if d <= 6 else float(vals.max())
    return HitchinCheck(d, i, hitchin_bound(d, i), reduced, grid)


def _reduced_feasible(d, i, xs):
    """Dominance of the vector (t_1, x, ..., x, t_d) on the slice."""
    xs = np.asarray(xs, dtype=float)
    s = i * (d - i) / d
    t1 = s - (i - 1) * xs
    td = -(s + (d - i - 1) * xs)
    return (t1 >= xs - 1e-12) & (xs >= td - 1e-12)


def rho_form(d: int, theta: ThetaSet) -> LinearForm:
    """The form ``2 rho o p_theta`` with ``2 rho(t) = sum_i (d + 1 - 2 i) t_i``."""
    two_rho = np.array([d + 1 - 2 * k for k in range(1, d + 1)], dtype=float)
    return LinearForm.from_vector(theta, two_rho, d)


def _sym_power_matrix(g: np.ndarray, d: int) -> np.ndarray:
    """Action on the symmetric power Sym^{d-1} R^2 in the monomial basis e1^{n-j} e2^j."""
    n = d - 1
    a, b = g[0]
    c, e = g[1]
    T = np.zeros((d, d))
    # column j: (g e1)^{n-j} (g e2)^j expanded in powers of e2
    for j in range(d):
        p1 = np.array([comb(n - j, k) * a ** (n - j - k) * c**k for k in range(n - j + 1)])
        p2 = np.array([comb(j, k) * b ** (j - k) * e**k for k in range(j + 1)])
        poly = np.convolve(p1, p2)
        T[:, j] = poly
    return T


def irreducible_rep(g, d: int) -> GroupElement:
    """The d-dimensional irreducible representation of SL_2(R).

    Uses the basis ``sqrt(C(n, j)) x^{n-j} y^j`` so that SO(2) maps into SO(d)
    and singular values transform as weights.
    """
    m = np.asarray(g.matrix if isinstance(g, GroupElement) else g, dtype=float)
    if m.shape != (2, 2):
        raise ValueError("irreducible_rep expects a 2x2 matrix")
    if abs(np.linalg.det(m) - 1.0) > 1e-8:
        raise ValueError(f"input is not in SL_2 (det={np.linalg.det(m):.3e})")
    n = d - 1
    D = np.sqrt([comb(n, j) for j in range(d)])
    T = (_sym_power_matrix(m, d) * D[None, :]) / D[:, None]
    minv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]])
    Ti = (_sym_power_matrix(minv, d) * D[None, :]) / D[:, None]
    word = g.word if isinstance(g, GroupElement) else None
    return GroupElement(T, Ti, word)
