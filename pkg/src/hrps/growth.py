"""Poincare series, critical exponents, directional growth and limit cones.

The primary estimator of an exponent is the slope of ``t -> log N(t)`` where
``N(t)`` counts ball elements with ``psi(mu_theta(gamma)) <= t``.  The fit
window is ``[t_lo, t_hi]`` with ``t_hi`` the smallest value on the outermost
sphere of the ball (below it the count is not truncated by the ball, up to
the bounded non-monotonicity of word length against ``psi``) and ``t_lo`` the
smallest value on the sphere of half that radius.  Finite balls see at most
a transient of the asymptotic count, so the estimate is biased; for
divergence-type groups the bias is typically downwards.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize
from scipy.spatial import ConvexHull, QhullError

from .core import LinearForm, ThetaSet, coweight, projector, theta_basis
from .orbit import InsufficientDataError, OrbitBall

TIE_RTOL = 1e-9
DEFAULT_APERTURES = (0.4, 0.2, 0.1, 0.05)
DEFAULT_STABILITY_TOL = 0.05
N_BOOT = 200
EXP_LIMIT = 700.0


class ProperFormError(ValueError):
    """The form takes negative values on the ball."""

    def __init__(self, message, offenders):
        super().__init__(message)
        self.offenders = offenders


class SaturationError(OverflowError):
    pass


@dataclass(frozen=True)
class ExponentEstimate:
    value: float
    ci: tuple[float, float]
    fit_window: tuple[float, float]
    n_points: int = 0
    model: str = "exponential"
    raw_value: float = math.nan

    def __post_init__(self):
        lo, hi = self.ci
        if not (lo <= self.value <= hi) and np.isfinite(self.value):
            raise ValueError(f"CI {self.ci} does not contain {self.value}")

    @property
    def width(self) -> float:
        return float(self.ci[1] - self.ci[0]) if np.isfinite(self.value) else 0.0

    @classmethod
    def minus_infinity(cls, window=(math.nan, math.nan)) -> "ExponentEstimate":
        return cls(-math.inf, (-math.inf, -math.inf), window, 0, "empty")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "fit_low": self.fit_window[0],
            "fit_high": self.fit_window[1],
            "n_points": self.n_points,
            "model": self.model,
            "raw_value": self.raw_value,
        }


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------


def form_values(ball: OrbitBall, psi: LinearForm) -> np.ndarray:
    if psi.d != ball.d:
        raise ValueError(f"form lives on SL_{psi.d}, ball on SL_{ball.d}")
    return psi(ball.mu)


def poincare_partial_sum(ball: OrbitBall, psi: LinearForm, s: float) -> float:
    """``sum_gamma exp(-s psi(mu_theta(gamma)))`` over the ball, compensated."""
    x = -float(s) * form_values(ball, psi)
    if x.size and x.max() > EXP_LIMIT:
        raise SaturationError(f"exponent {x.max():.1f} exceeds {EXP_LIMIT}; lower s or use a proper form")
    return math.fsum(np.exp(x).tolist())


def _log_partial(vals: np.ndarray, s: float) -> float:
    x = -s * vals
    m = x.max()
    return float(m + np.log(math.fsum(np.exp(x - m).tolist())))


def check_proper(ball: OrbitBall, psi: LinearForm, eps: float = 1e-9) -> np.ndarray:
    vals = form_values(ball, psi)
    bad = np.flatnonzero(vals < -eps * max(1.0, float(np.abs(vals).max(initial=0.0))))
    if bad.size:
        words = [ball.generators.word_label(ball.word(n)) for n in bad[:20]]
        raise ProperFormError(
            f"form is negative on {bad.size} ball elements (e.g. {', '.join(words)})",
            [ball.word(n) for n in bad],
        )
    return vals


# ---------------------------------------------------------------------------
# counting-slope estimator
# ---------------------------------------------------------------------------


def _jump_points(vals: np.ndarray):
    """Distinct values (ties merged at relative tolerance) and cumulative counts."""
    v = np.sort(vals)
    if v.size == 0:
        return v, np.array([], dtype=np.int64)
    gap = np.diff(v) > TIE_RTOL * np.maximum(1.0, np.abs(v[1:]))
    ends = np.append(np.flatnonzero(gap), v.size - 1)
    return v[ends], ends + 1


def _sphere_min(vals, lengths, k):
    sel = vals[lengths == k]
    return float(sel.min()) if sel.size else math.nan


def default_window(ball: OrbitBall, vals: np.ndarray) -> tuple[float, float]:
    if ball.L < 2:
        raise InsufficientDataError("exponent estimation needs L >= 2")
    t_hi = _sphere_min(vals, ball.lengths, ball.L)
    t_lo = _sphere_min(vals, ball.lengths, math.ceil(ball.L / 2))
    return t_lo, t_hi


def _slope(t, y):
    A = np.vstack([t, np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    rss = float(res[0]) if res.size else float(np.sum((A @ coef - y) ** 2))
    return float(coef[0]), rss


def fit_counting_exponent(
    vals: np.ndarray,
    window: tuple[float, float],
    n_boot: int = N_BOOT,
    seed: int = 0,
    model_select: bool = True,
    empty_ok: bool = False,
) -> ExponentEstimate:
    """Slope of ``log N(t)`` on the window, with a bootstrap CI.

    With ``model_select`` a power law ``log N = k log t + b`` is also fitted;
    when it explains the points at least as well, the growth is reported as
    sub-exponential: value 0 with CI ``(0, slope)``.
    """
    t_lo, t_hi = window
    t, n = _jump_points(vals)
    if t.size == 0:
        if empty_ok:
            return ExponentEstimate.minus_infinity(window)
        raise InsufficientDataError("no values to count")
    sel = (t >= t_lo) & (t <= t_hi)
    if sel.sum() < 3:
        if empty_ok:
            return ExponentEstimate.minus_infinity(window)
        raise InsufficientDataError(f"only {int(sel.sum())} distinct values in fit window [{t_lo:.4g}, {t_hi:.4g}]")
    ts, ys = t[sel], np.log(n[sel].astype(float))
    slope, rss = _slope(ts, ys)
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    m = ts.size
    for b in range(n_boot):
        idx = rng.integers(0, m, m)
        if np.ptp(ts[idx]) == 0:
            boots[b] = slope
        else:
            boots[b] = _slope(ts[idx], ys[idx])[0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    lo, hi = min(lo, slope), max(hi, slope)
    if model_select and ts.min() > 0:
        _, rss_pow = _slope(np.log(ts), ys)
        if rss_pow <= rss:
            return ExponentEstimate(0.0, (0.0, max(slope, 0.0)), (t_lo, t_hi), m, "subexponential")
    return ExponentEstimate(slope, (float(lo), float(hi)), (t_lo, t_hi), m, "exponential")


def critical_exponent(
    ball: OrbitBall,
    psi: LinearForm,
    eps: float = 1e-9,
    window: Optional[tuple[float, float]] = None,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> ExponentEstimate:
    """Critical exponent of ``psi`` from the counting slope (see module notes)."""
    vals = check_proper(ball, psi, eps)
    window = default_window(ball, vals) if window is None else window
    return fit_counting_exponent(vals, window, n_boot, seed)


def bisection_exponent(ball: OrbitBall, psi: LinearForm, t: Optional[float] = None, tol: float = 1e-10) -> float:
    """Independent estimate of the critical exponent from partial sums.

    At the critical exponent each dyadic shell of values contributes about
    equally, so ``P_{<=t}(s) / P_{<=t/2}(s) = 2``; the ratio decreases in
    ``s`` and the root is found by bisection.
    """
    vals = check_proper(ball, psi)
    if t is None:
        t = default_window(ball, vals)[1]
    inner = vals[vals <= t / 2]
    outer = vals[vals <= t]
    if inner.size == outer.size:
        raise InsufficientDataError("no values between t/2 and t")

    def g(s):
        return _log_partial(outer, s) - _log_partial(inner, s) - math.log(2.0)

    lo, hi = 0.0, 1.0
    if g(lo) < 0:
        return 0.0
    while g(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise InsufficientDataError("bisection bracket diverged")
    return float(scipy.optimize.brentq(g, lo, hi, xtol=tol))


# ---------------------------------------------------------------------------
# directional growth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConeSpec:
    direction: np.ndarray
    apertures: tuple[float, ...] = DEFAULT_APERTURES

    def __post_init__(self):
        u = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValueError("cone direction must be a unit vector")
        a = tuple(float(x) for x in self.apertures)
        if not a or any(x <= 0 for x in a) or any(b >= c for c, b in zip(a, a[1:])):
            raise ValueError("apertures must be positive and strictly decreasing")
        object.__setattr__(self, "direction", u)
        object.__setattr__(self, "apertures", a)


def norm_values(ball: OrbitBall, theta: ThetaSet) -> np.ndarray:
    return np.linalg.norm(ball.mu_theta(theta), axis=1)


def _cone_mask(mt: np.ndarray, norms: np.ndarray, u: np.ndarray, eps: float) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        dirs = mt / norms[:, None]
    ok = norms > 0
    dist = np.linalg.norm(dirs - u, axis=1)
    return ok & (dist < eps)


def norm_exponent(ball: OrbitBall, theta: ThetaSet, n_boot: int = N_BOOT, seed: int = 0) -> ExponentEstimate:
    """Exponent of ``#{gamma : ||mu_theta(gamma)|| <= t}``."""
    norms = norm_values(ball, theta)
    return fit_counting_exponent(norms, default_window(ball, norms), n_boot, seed)


def directional_tau(
    ball: OrbitBall,
    cone: ConeSpec,
    theta: ThetaSet,
    n_boot: int = N_BOOT,
    seed: int = 0,
    constrain: bool = True,
    total: Optional[ExponentEstimate] = None,
) -> list[ExponentEstimate]:
    """Cone exponents, one per aperture; an empty cone gives ``-inf``.

    Nested cones have nested counts, so their exponents are ordered, and
    none exceeds the exponent of the full count.  Raw slopes on a finite
    ball violate this (the share of a narrow central cone still grows over
    the fit window).  With ``constrain`` each value is replaced by the
    running minimum over the larger apertures and the full count; the raw
    slope is kept in ``raw_value`` and the CI is shifted with the value.
    """
    theta.check(ball.d)
    mt = ball.mu_theta(theta)
    u = cone.direction
    if np.linalg.norm(u @ projector(ball.d, theta) - u) > 1e-9:
        raise ValueError("cone direction must lie in a_theta")
    norms = np.linalg.norm(mt, axis=1)
    window = default_window(ball, norms)
    raw = []
    for eps in cone.apertures:
        mask = _cone_mask(mt, norms, u, eps)
        raw.append(fit_counting_exponent(norms[mask], window, n_boot, seed, model_select=False, empty_ok=True))
    if not constrain:
        return [ExponentEstimate(e.value, e.ci, e.fit_window, e.n_points, e.model, e.value) for e in raw]
    if total is None:
        total = fit_counting_exponent(norms, window, n_boot, seed, model_select=False)
    cap = total.value
    out = []
    for e in raw:
        if not np.isfinite(e.value):
            out.append(ExponentEstimate(e.value, e.ci, e.fit_window, e.n_points, e.model, e.value))
            continue
        v = min(e.value, cap)
        shift = e.value - v
        out.append(
            ExponentEstimate(v, (e.ci[0] - shift, e.ci[1] - shift), e.fit_window, e.n_points, e.model, e.value)
        )
        cap = v
    return out


@dataclass
class IndicatorGrid:
    theta: ThetaSet
    directions: np.ndarray  # unit vectors in a_theta (ambient coordinates)
    values: np.ndarray  # psi_hat at the unit directions, -inf off the sampled cone
    apertures: tuple[float, ...] = DEFAULT_APERTURES
    curves: list = field(default_factory=list)  # per direction, list of ExponentEstimate
    chosen: list = field(default_factory=list)  # index of the aperture used

    def value(self, u) -> float:
        """psi_hat(u) for ``u`` a positive multiple of a grid direction."""
        u = np.asarray(u, dtype=float)
        r = float(np.linalg.norm(u))
        if r == 0:
            return 0.0
        k = int(np.argmax(self.directions @ (u / r)))
        if np.linalg.norm(self.directions[k] - u / r) > 1e-9:
            raise KeyError("direction not on the grid")
        return r * float(self.values[k])

    def ci_width(self, k: int) -> float:
        if not self.curves:
            return 0.0
        return self.curves[k][self.chosen[k]].width if np.isfinite(self.values[k]) else 0.0

    def rows(self):
        for k, u in enumerate(self.directions):
            for j, eps in enumerate(self.apertures):
                est = self.curves[k][j] if self.curves else None
                yield [*u.tolist(), eps, *(([est.value, est.ci[0], est.ci[1]]) if est else [math.nan] * 3), float(self.values[k])]


def _stabilised(taus: Sequence[ExponentEstimate], tol: float) -> int:
    vals = [e.value for e in taus]
    if not np.isfinite(vals[-1]):
        return len(vals) - 1
    chosen = len(vals) - 1
    for j in range(len(vals) - 1, 0, -1):
        if np.isfinite(vals[j - 1]) and abs(vals[j] - vals[j - 1]) < tol:
            return j
    return chosen


def growth_indicator(
    ball: OrbitBall,
    theta: ThetaSet,
    directions,
    apertures: Sequence[float] = DEFAULT_APERTURES,
    tol: float = DEFAULT_STABILITY_TOL,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> IndicatorGrid:
    """Estimated growth indicator along each direction.

    For each direction the cone exponents are computed over the aperture
    schedule; the reported value is the one at the smallest aperture whose
    change from the previous aperture is below ``tol`` (the smallest aperture
    when nothing stabilises), and ``-inf`` when the smallest cone is empty.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise ValueError("directions must be non-zero; psi_hat(0) = 0 by definition")
    dirs = dirs / norms[:, None]
    curves, chosen, vals = [], [], []
    nv = norm_values(ball, theta)
    total = fit_counting_exponent(nv, default_window(ball, nv), n_boot, seed, model_select=False)
    for u in dirs:
        taus = directional_tau(ball, ConeSpec(u, tuple(apertures)), theta, n_boot, seed, total=total)
        j = _stabilised(taus, tol)
        curves.append(taus)
        chosen.append(j)
        vals.append(taus[j].value)
    return IndicatorGrid(theta, dirs, np.array(vals), tuple(apertures), curves, chosen)


def chamber_directions(d: int, theta: ThetaSet, n: int) -> np.ndarray:
    """``n`` unit directions of a_theta^+ evenly spaced in angle.

    Only for ``|theta| <= 2``: the chamber slice is the arc between the rays
    of the two coweights.
    """
    if len(theta) == 1:
        w = coweight(d, theta.indices[0])
        return (w / np.linalg.norm(w))[None]
    if len(theta) != 2:
        raise ValueError("chamber_directions supports |theta| <= 2")
    a = coweight(d, theta.indices[0])
    b = coweight(d, theta.indices[1])
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    ang = math.acos(float(np.clip(a @ b, -1, 1)))
    e2 = b - (a @ b) * a
    e2 /= np.linalg.norm(e2)
    phis = np.linspace(0, ang, n)
    return np.cos(phis)[:, None] * a + np.sin(phis)[:, None] * e2


def write_indicator_csv(grid: IndicatorGrid, path) -> None:
    d = grid.directions.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*(f"u{i + 1}" for i in range(d)), "aperture", "tau", "ci_low", "ci_high", "psi_hat"])
        for row in grid.rows():
            w.writerow([_fmt(x) for x in row])


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


# ---------------------------------------------------------------------------
# limit cone
# ---------------------------------------------------------------------------


@dataclass
class LimitConeEstimate:
    theta: ThetaSet
    sample_directions: np.ndarray
    rays: np.ndarray  # extreme rays (unit vectors, ambient coordinates)
    bounded_distance: float
    dimension: int
    angular_width: float


def _cone_distance(rays: np.ndarray, x: np.ndarray) -> float:
    if rays.shape[0] == 1:
        r = rays[0]
        return float(np.linalg.norm(x - max(0.0, x @ r) * r))
    _, res = scipy.optimize.nnls(rays.T, x)
    return float(res)


def limit_cone(ball: OrbitBall, theta: ThetaSet, cutoff: float, dir_tol: float = 1e-7) -> LimitConeEstimate:
    """Directions of ``mu_theta`` beyond ``cutoff``, their extreme rays and the
    largest distance from any ``mu_theta(gamma)`` to the cone they span."""
    theta.check(ball.d)
    mt = ball.mu_theta(theta)
    norms = np.linalg.norm(mt, axis=1)
    keep = norms >= cutoff
    if keep.sum() < 3:
        raise InsufficientDataError(f"only {int(keep.sum())} elements with ||mu_theta|| >= {cutoff}")
    dirs = mt[keep] / norms[keep, None]
    B = theta_basis(ball.d, theta)
    coords = dirs @ B  # coordinates in a_theta
    k = coords.shape[1]
    centre = coords.mean(axis=0)
    centre /= np.linalg.norm(centre)
    spread = np.linalg.norm(coords - centre, axis=1).max()
    if k == 1 or spread < dir_tol:
        ray_coords = centre[None]
    else:
        # central chart: x -> x / <c, x> lands in an affine hyperplane
        chart = coords / (coords @ centre)[:, None]
        E = np.linalg.svd(np.eye(k) - np.outer(centre, centre))[0][:, : k - 1]
        pts = chart @ E
        if k - 1 == 1:
            idx = [int(np.argmin(pts[:, 0])), int(np.argmax(pts[:, 0]))]
        else:
            try:
                idx = list(ConvexHull(pts).vertices)
            except QhullError:
                idx = list(range(len(pts)))
        ray_coords = coords[idx]
    rays = ray_coords @ B.T
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    rank = int(np.linalg.matrix_rank(rays, tol=1e-6)) if rays.shape[0] > 1 else 1
    width = 0.0
    if rays.shape[0] > 1:
        G = np.clip(rays @ rays.T, -1, 1)
        width = float(np.arccos(G.min()))
    outside = np.flatnonzero(~keep)
    dist = 0.0
    for n in outside:
        dist = max(dist, _cone_distance(rays, mt[n]))
    return LimitConeEstimate(theta, dirs, rays, dist, rank, width)


# ---------------------------------------------------------------------------
# tangency and concavity
# ---------------------------------------------------------------------------


@dataclass
class TangencyReport:
    delta: ExponentEstimate
    passed: bool
    gaps: np.ndarray  # delta psi(u) - psi_hat(u) + slack, per direction
    contact_direction: Optional[np.ndarray]
    contact_ratio: float

    def to_dict(self) -> dict:
        return {
            "delta": self.delta.to_dict(),
            "passed": self.passed,
            "min_gap": float(np.min(self.gaps)) if self.gaps.size else math.nan,
            "contact_direction": None if self.contact_direction is None else self.contact_direction.tolist(),
            "contact_ratio": self.contact_ratio,
        }


def tangency_check(
    ball: OrbitBall, psi: LinearForm, grid: IndicatorGrid, delta: Optional[ExponentEstimate] = None
) -> TangencyReport:
    """Check ``delta_psi psi(u) >= psi_hat(u) - slack`` on the grid directions.

    The slack is the sum of the CI widths of the two estimates entering the
    comparison; off-cone directions (``-inf``) satisfy it vacuously.
    """
    if delta is None:
        delta = critical_exponent(ball, psi)
    gaps = []
    best, best_u = -math.inf, None
    for k, u in enumerate(grid.directions):
        ph = grid.values[k]
        pu = psi(u)
        if not np.isfinite(ph):
            gaps.append(math.inf)
            continue
        slack = delta.width * abs(pu) + grid.ci_width(k)
        gaps.append(delta.value * pu - ph + slack)
        if pu > 0 and ph / pu > best:
            best, best_u = ph / pu, u
    gaps = np.array(gaps)
    return TangencyReport(delta, bool(np.all(gaps >= 0)), gaps, best_u, float(best))


@dataclass
class ConcavityReport:
    passed: bool
    checked: int
    violations: list


def concavity_check(grid: IndicatorGrid, slack: Optional[float] = None, angle_tol: float = 1e-6) -> ConcavityReport:
    """Midpoint concavity on the grid: ``psi_hat(u + v) >= psi_hat(u) + psi_hat(v)`` (halved).

    Only pairs whose normalised midpoint is itself a grid direction are
    checked.  The default slack is the largest CI width on the grid.
    """
    n = grid.directions.shape[0]
    if slack is None:
        slack = max([grid.ci_width(k) for k in range(n)] + [0.0])
    violations, checked = [], 0
    for i in range(n):
        for j in range(i + 1, n):
            m = 0.5 * (grid.directions[i] + grid.directions[j])
            r = np.linalg.norm(m)
            if r < 1e-12:
                continue
            cos = grid.directions @ (m / r)
            k = int(np.argmax(cos))
            if k in (i, j) or np.arccos(min(1.0, cos[k])) > angle_tol:
                continue
            checked += 1
            rhs = 0.5 * (grid.values[i] + grid.values[j])
            if not np.isfinite(rhs):
                continue
            lhs = r * grid.values[k]
            if lhs < rhs - slack:
                violations.append({"u": i, "v": j, "mid": k, "lhs": float(lhs), "rhs": float(rhs)})
    return ConcavityReport(not violations, checked, violations)
