"""Patterson approximants, shadow-lemma and conical-mass probes, Hopf data.

Atoms of a Patterson approximant sit at the attractor flags of ball elements
with weights ``exp(-s psi(mu_theta(gamma)))``.  A truncated ball drops the part
of the series beyond the outermost sphere; ``tail=True`` folds an estimate of
it into the top-sphere atoms.  In a free group every longer word extends a
unique top-sphere word and its limit flags lie in that word's shadow, so the
tail is assigned there with a geometric continuation of the sphere masses.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    CartanVector,
    GroupElement,
    LinearForm,
    ThetaSet,
    act_on_frames,
    as_element,
    busemann_theta,
    cartan_batch,
    iwasawa_sigma_batch,
    longest_weyl_element,
    opposition_involution,
    p_theta,
    random_orthogonal,
)
from .flags import (
    STATUS_UNRESOLVED,
    PartialFlag,
    ShadowIndex,
    attractor_frames,
    general_position_margin,
    margin_batch,
    shadow_distance_batch,
    sine_bounds,
    unresolved_mask,
)
from .growth import ExponentEstimate, critical_exponent
from .orbit import GeneratorSet, InsufficientDataError, OrbitBall, enumerate_ball

MASS_TOL = 1e-10
DEFAULT_BAND = (1e-4, 1e4)
BAND_GROWTH = 1.25  # tolerated spread growth between truncation lengths
MARGIN_MIN = 1e-6


class EmptyMeasureError(ValueError):
    pass


class RadiusTooSmallError(ValueError):
    pass


class IllConditionedError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Patterson approximants
# ---------------------------------------------------------------------------


@dataclass
class AtomicMeasure:
    """Weighted atoms on the flag variety of type ``theta``.

    ``index[i]`` is the ball index of the element whose attractor carries
    atom ``i``; ``depth[i]`` is ``||mu_theta||`` of that element.
    """

    theta: ThetaSet
    frames: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    depth: np.ndarray
    psi: Optional[LinearForm] = None
    s: float = math.nan
    L: int = -1
    tail_factor: float = 1.0
    _shadow_index: Optional[ShadowIndex] = field(default=None, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0:
            raise EmptyMeasureError("measure has no atoms")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        self.weights = w

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights.tolist())

    def __len__(self):
        return self.weights.size

    def atoms(self):
        for f, w in zip(self.frames, self.weights):
            yield PartialFlag(self.theta, f), float(w)

    def shadow_index(self) -> ShadowIndex:
        if self._shadow_index is None:
            self._shadow_index = ShadowIndex(self.frames, self.theta)
        return self._shadow_index

    def mass_of(self, idx) -> float:
        return math.fsum(self.weights[np.asarray(idx, dtype=np.int64)].tolist())

    def to_dict(self, ball: Optional[OrbitBall] = None) -> dict:
        atoms = []
        for i in range(len(self)):
            a = {"frame": self.frames[i].tolist(), "weight": float(self.weights[i])}
            if ball is not None:
                a["word"] = ball.generators.word_label(ball.word(int(self.index[i])))
            atoms.append(a)
        return {
            "theta": list(self.theta.indices),
            "psi": None if self.psi is None else list(self.psi.coefficients),
            "s": self.s,
            "tail_factor": self.tail_factor,
            "atoms": atoms,
        }

    def dump(self, path, ball: Optional[OrbitBall] = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(ball), fh, allow_nan=False)


def sphere_masses(ball: OrbitBall, psi: LinearForm, s: float) -> np.ndarray:
    """``sum_{|gamma| = k} exp(-s psi(mu_theta(gamma)))`` for ``k = 0..L``."""
    x = -s * psi(ball.mu)
    return np.array([math.fsum(np.exp(x[ball.lengths == k]).tolist()) for k in range(ball.L + 1)])


def tail_ratio(ball: OrbitBall, psi: LinearForm, s: float) -> float:
    """Per-length ratio of sphere masses, fitted over the last third of lengths."""
    m = sphere_masses(ball, psi, s)
    k0 = max(1, ball.L - max(2, ball.L // 3))
    ks = np.arange(k0, ball.L + 1)
    y = np.log(m[ks])
    slope = np.polyfit(ks, y, 1)[0]
    return float(math.exp(slope))


def patterson_measure(
    ball: OrbitBall,
    psi: LinearForm,
    s: float,
    theta: Optional[ThetaSet] = None,
    delta: Optional[ExponentEstimate] = None,
    tail: bool = False,
) -> AtomicMeasure:
    """Normalised Patterson approximant at exponent ``s``.

    Parameters
    ----------
    delta : ExponentEstimate, optional
        When given, a warning is issued for ``s`` at or below its CI.
    tail : bool
        Fold the estimated series tail beyond the ball into the top-sphere
        atoms (factor ``1 / (1 - rho)`` with ``rho`` from :func:`tail_ratio`).
    """
    theta = psi.theta if theta is None else theta
    if delta is not None and s <= delta.ci[1]:
        warnings.warn(f"s={s:.4g} is not above the exponent CI {delta.ci}; the series may diverge", stacklevel=2)
    frames, ok = attractor_frames(ball, theta)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise EmptyMeasureError("every attractor in the ball is degenerate")
    logw = -s * psi(ball.mu[idx])
    factor = 1.0
    if tail:
        rho = tail_ratio(ball, psi, s)
        factor = math.inf if rho >= 1.0 else 1.0 / (1.0 - rho)
        top = ball.lengths[idx] == ball.L
        if math.isinf(factor):
            warnings.warn(f"sphere masses grow (ratio {rho:.4f}); all mass placed on the top sphere", stacklevel=2)
            logw = np.where(top, logw, -np.inf)
        else:
            logw = logw + np.where(top, math.log(factor), 0.0)
    w = np.exp(logw - logw.max())
    w = w / math.fsum(w.tolist())
    depth = np.linalg.norm(ball.mu_theta(theta)[idx], axis=1)
    return AtomicMeasure(theta, frames[idx], w, idx, depth, psi, float(s), ball.L, factor)


# ---------------------------------------------------------------------------
# shadow lemma, conical mass
# ---------------------------------------------------------------------------


@dataclass
class ShadowLemmaReport:
    tier: int
    radius: float
    ratios: np.ndarray
    words: list
    band: tuple[float, float]
    unresolved: int = 0

    @property
    def lo(self) -> float:
        return float(self.ratios.min())

    @property
    def hi(self) -> float:
        return float(self.ratios.max())

    @property
    def spread(self) -> float:
        return self.hi / self.lo if self.lo > 0 else math.inf

    @property
    def passed(self) -> bool:
        return self.lo >= self.band[0] and self.hi <= self.band[1] and math.isfinite(self.spread)

    def stable_against(self, earlier: "ShadowLemmaReport", growth: float = BAND_GROWTH) -> bool:
        """True when the spread grew by at most ``growth`` relative to ``earlier``."""
        return self.spread <= growth * earlier.spread


def _beyond(nu: AtomicMeasure, hits, tdepth: np.ndarray, r: float):
    """Restrict shadow hits to atoms whose orbit point is not closer to o than the target."""
    return [h[nu.depth[h] >= tdepth[t] - r] if h.size else h for t, h in enumerate(hits)]


def shadow_masses(nu: AtomicMeasure, ball: OrbitBall, targets: np.ndarray, r: float, depth_aware: bool = True):
    """``nu(O_r(o, gamma o))`` for the given ball indices, and the unresolved count.

    An atom stands for an orbit point, so with ``depth_aware`` it counts only
    when it is not closer to the base point than ``gamma o`` (up to ``r``).
    Otherwise the attractors of short words, some of which are exact limit
    points, land in deep shadows with their large weights.
    """
    targets = np.asarray(targets, dtype=np.int64)
    hits, unres = nu.shadow_index().query(ball.frames()[targets], ball.mu[targets], r)
    if depth_aware:
        tdepth = np.linalg.norm(ball.mu_theta(nu.theta)[targets], axis=1)
        hits = _beyond(nu, hits, tdepth, r)
    masses = np.array([nu.mass_of(h) for h in hits])
    return masses, hits, unres


def shadow_lemma_check(
    nu: AtomicMeasure,
    ball: OrbitBall,
    r: float,
    tier: Optional[int] = None,
    band: tuple[float, float] = DEFAULT_BAND,
    depth_aware: bool = True,
) -> ShadowLemmaReport:
    """Ratios ``nu(O_r(o, gamma o)) exp(s psi(mu_theta(gamma)))`` over a length tier.

    The measure is conformal for the form ``s psi``, so that is the exponent
    the shadow masses are compared against.  The identity is always its own
    tier 0 (shadow = everything for large ``r``).
    """
    tier = ball.L // 2 if tier is None else tier
    targets = np.flatnonzero(ball.lengths == tier)
    masses, _, unres = shadow_masses(nu, ball, targets, r, depth_aware)
    if not np.any(masses > 0):
        raise RadiusTooSmallError(f"every tier-{tier} shadow of radius {r} has zero mass; try a larger radius")
    ratios = masses * np.exp(nu.s * nu.psi(ball.mu[targets]))
    words = [ball.generators.word_label(ball.word(int(t))) for t in targets]
    return ShadowLemmaReport(tier, r, ratios, words, band, unres)


@dataclass
class ConicalMassReport:
    fraction: float
    window: tuple[int, int]
    radius: float
    n_targets: int
    unresolved: int = 0


def _word_keys(words: np.ndarray, k: int, rank: int) -> Optional[np.ndarray]:
    """Integer codes of the length-``k`` prefixes, or None if they overflow int64."""
    base = 2 * rank + 1
    if k * math.log2(base) > 62:
        return None
    w = words[:, :k].astype(np.int64)
    digits = np.where(w > 0, w, np.where(w < 0, rank - w, 0))
    return digits @ (base ** np.arange(k, dtype=np.int64))


def _prefix_pass(nu: AtomicMeasure, ball: OrbitBall, N: float, k: int, inside: np.ndarray) -> None:
    """Mark atoms lying in the shadow of their own length-``k`` prefix.

    In a free group this is where most deep atoms sit, so one kernel call per
    atom settles them before the general search.  Misses are left to it.
    """
    if ball.words.shape[1] < k:
        return
    at = np.flatnonzero(~inside & (ball.lengths[nu.index] >= k))
    keys = _word_keys(ball.words, k, ball.generators.rank)
    if keys is None or at.size == 0:
        return
    tier = np.flatnonzero(ball.lengths == k)
    order = np.argsort(keys[tier], kind="stable")
    sorted_keys = keys[tier][order]
    want = keys[nu.index[at]]
    pos = np.minimum(np.searchsorted(sorted_keys, want), max(sorted_keys.size - 1, 0))
    found = sorted_keys.size > 0
    found = found & (sorted_keys[pos] == want) if found else np.zeros(at.size, dtype=bool)
    at, tgt = at[found], tier[order[pos[found]]]
    tdepth = np.linalg.norm(ball.mu_theta(nu.theta)[tgt], axis=1)
    ok = (nu.depth[at] >= tdepth - N) & ~unresolved_mask(ball.mu[tgt], N)
    at, tgt = at[ok], tgt[ok]
    if at.size:
        _, st = shadow_distance_batch(nu.frames[at], ball.frames()[tgt], ball.mu[tgt], nu.theta, N)
        inside[at[st == 1]] = True


def conical_mass_estimate(
    nu: AtomicMeasure,
    ball: OrbitBall,
    N: float,
    window: Optional[tuple[int, int]] = None,
    chunk: int = 256,
) -> ConicalMassReport:
    """Share of ``nu`` in the union of the ``N``-shadows over a band of word lengths.

    An atom stands for the orbit point of its element, so it is counted in
    the shadow of ``gamma'`` only when it lies no closer to the base point
    than ``gamma' o`` (``||mu|| >= ||mu(gamma')|| - N``) and its flag is in
    ``O_N(o, gamma' o)``.  Without the depth condition the attractors of short
    words, which are exact limit points, would count as deep mass.

    The default window is the two lengths from ``ceil(2L/3)``; shadows of
    longer words are often below float64 resolution.
    """
    if window is None:
        lo = math.ceil(2 * ball.L / 3)
        window = (lo, min(ball.L, lo + 1))
    targets = np.flatnonzero((ball.lengths >= window[0]) & (ball.lengths <= window[1]))
    tdepth_all = np.linalg.norm(ball.mu_theta(nu.theta)[targets], axis=1)
    inside = np.zeros(len(nu), dtype=bool)
    for k in range(window[0], window[1] + 1):
        _prefix_pass(nu, ball, N, k, inside)
    unres = int(unresolved_mask(ball.mu[targets], N).sum())
    rest = np.flatnonzero(~inside & (nu.depth >= tdepth_all.min(initial=np.inf) - N))
    if rest.size:
        index = ShadowIndex(nu.frames[rest], nu.theta)
        for s in range(0, targets.size, chunk):
            part = targets[s : s + chunk]
            tdepth = tdepth_all[s : s + chunk]

            def keep(t, f):
                # atoms already covered need no second look
                return ~inside[rest[f]] & (nu.depth[rest[f]] >= tdepth[t] - N)

            hits, _ = index.query(ball.frames()[part], ball.mu[part], N, keep=keep)
            for h in hits:
                inside[rest[h]] = True
    frac = nu.mass_of(np.flatnonzero(inside))
    return ConicalMassReport(frac, window, N, int(targets.size), unres)


def conical_mass_trend(nu: AtomicMeasure, ball: OrbitBall, N: float, starts: Sequence[int]) -> list[ConicalMassReport]:
    """Conical mass over the windows ``[k, k+1]``; the dichotomy probe reads the trend."""
    return [conical_mass_estimate(nu, ball, N, (k, min(ball.L, k + 1))) for k in starts]


def lebesgue_conical_mass(
    ball: OrbitBall,
    N: float,
    samples: int = 2000,
    theta: Optional[ThetaSet] = None,
    window: Optional[tuple[int, int]] = None,
    seed: int = 0,
) -> float:
    """Fraction of Haar-random flags in the union of window shadows."""
    if ball.d == 2:
        raise NotImplementedError("the d=2 cocompact surrogate is not supported")
    theta = ThetaSet.full(ball.d) if theta is None else theta
    rng = np.random.default_rng(seed)
    frames = np.array([random_orthogonal(ball.d, rng) for _ in range(samples)])
    if window is None:
        lo = math.ceil(2 * ball.L / 3)
        window = (lo, min(ball.L, lo + 1))
    targets = np.flatnonzero((ball.lengths >= window[0]) & (ball.lengths <= window[1]))
    hits, _ = ShadowIndex(frames, theta).query(ball.frames()[targets], ball.mu[targets], N)
    inside = np.zeros(samples, dtype=bool)
    for h in hits:
        inside[h] = True
    return float(inside.mean())


# ---------------------------------------------------------------------------
# Hopf coordinates and BMS exponent
# ---------------------------------------------------------------------------


@dataclass
class HopfPoint:
    xi: PartialFlag
    eta: PartialFlag
    u: CartanVector

    def __post_init__(self):
        d = self.xi.d
        if self.eta.theta != self.xi.theta.iota(d):
            raise ValueError("eta must have the opposite type of xi")
        m = general_position_margin(self.xi, self.eta)
        if m <= 0:
            raise ValueError("flags are not in general position")
        self.u = CartanVector(np.asarray(self.u, dtype=float))


def _nullspace_intersection(A: np.ndarray, B: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of span A cap span B (both orthonormal), expected dimension ``dim``."""
    d = A.shape[0]
    # x in both spans iff (I - A A^T) x = 0 and (I - B B^T) x = 0
    Pc = np.vstack([np.eye(d) - A @ A.T, np.eye(d) - B @ B.T])
    _, s, vt = np.linalg.svd(Pc)
    return vt[d - dim :].T


def transverse_frame(xi: PartialFlag, eta: PartialFlag, margin_min: float = MARGIN_MIN) -> np.ndarray:
    """``g`` in SL_d with ``g P_theta = xi`` and ``g w0 P_iota(theta) = eta``.

    The columns of block ``[lo, hi)`` span ``xi_hi cap eta_{d-lo}``; blocks
    are orthonormal and the determinant is normalised to 1.
    """
    d = xi.d
    m = general_position_margin(xi, eta)
    if m <= margin_min:
        raise IllConditionedError(f"general position margin {m:.2e} below {margin_min:g}")
    cols = []
    for lo, hi in xi.theta.blocks(d):
        A = xi.frame[:, :hi]
        B = eta.frame[:, : d - lo]
        cols.append(_nullspace_intersection(A, B, hi - lo))
    g = np.concatenate(cols, axis=1)
    det = np.linalg.det(g)
    if det < 0:
        g[:, 0] = -g[:, 0]
        det = -det
    return g / det ** (1.0 / d)


def _iota_vec(v):
    return np.asarray(opposition_involution(np.asarray(v, dtype=float)), dtype=float)


def bms_exponent(xi: PartialFlag, eta: PartialFlag, psi: LinearForm, g: Optional[np.ndarray] = None) -> float:
    """``psi(beta_xi(e, g) + iota(beta_eta(e, g)))`` for a ``g`` carrying the standard pair to ``(xi, eta)``."""
    d = xi.d
    theta = xi.theta
    if psi.theta != theta:
        raise ValueError(f"form of type {psi.theta} for flags of type {theta}")
    g = transverse_frame(xi, eta) if g is None else np.asarray(g, dtype=float)
    e = GroupElement.identity(d)
    ge = GroupElement(g)
    b1 = np.asarray(busemann_theta(xi.frame, e, ge, theta))
    b2 = np.asarray(busemann_theta(eta.frame, e, ge, theta.iota(d)))
    return float(psi(b1 + _iota_vec(b2)))


def hopf_act(gamma, x: HopfPoint, warn_margin: float = 1e-12) -> HopfPoint:
    """``gamma . (xi, eta, u) = (gamma xi, gamma eta, u + beta_xi(gamma^{-1}, e))``."""
    gamma = as_element(gamma)
    d = gamma.d
    e = GroupElement.identity(d)
    shift = np.asarray(busemann_theta(x.xi.frame, gamma.inv(), e, x.xi.theta))
    xi2, eta2 = x.xi.act(gamma), x.eta.act(gamma)
    if general_position_margin(xi2, eta2) < warn_margin:
        warnings.warn("image pair lost general position to round-off", stacklevel=2)
    return HopfPoint(xi2, eta2, CartanVector(np.asarray(x.u) + shift))


@dataclass
class ProperTrend:
    minima: dict
    counts: dict
    margin: float

    def top_half_increasing(self, strict: bool = True) -> bool:
        ks = sorted(k for k in self.minima if np.isfinite(self.minima[k]))
        if len(ks) < 2:
            return False
        top = ks[len(ks) // 2 :] if len(ks) > 2 else ks
        vals = [self.minima[k] for k in top]
        pairs = zip(vals, vals[1:])
        return all(b > a for a, b in pairs) if strict else all(b >= a for a, b in pairs)


def properness_probe(ball: OrbitBall, x: HopfPoint, phi: LinearForm, margin: float = 0.0) -> ProperTrend:
    """Per-length minima of ``|phi(beta_xi(gamma^{-1}, e))|`` over elements keeping the
    pair ``gamma (xi, eta)`` at general-position margin at least ``margin``."""
    theta = x.xi.theta
    d = ball.d
    # gamma xi and gamma eta for every ball element
    gxi = act_on_frames(ball.mats, ball.invs, x.xi.frame)
    geta = act_on_frames(ball.mats, ball.invs, x.eta.frame)
    marg = margin_batch(gxi, geta, theta)
    keep = marg >= margin
    # beta_xi(gamma^{-1}, e) = sigma(gamma, xi)
    sig = iwasawa_sigma_batch(ball.mats, ball.invs, x.xi.frame)
    vals = np.abs(phi(p_theta(sig, theta)))
    minima, counts = {}, {}
    for k in range(ball.L + 1):
        sel = keep & (ball.lengths == k)
        counts[k] = int(sel.sum())
        minima[k] = float(vals[sel].min()) if sel.any() else math.nan
    return ProperTrend(minima, counts, margin)


# ---------------------------------------------------------------------------
# entropy drop
# ---------------------------------------------------------------------------


@dataclass
class EntropyDrop:
    delta_full: ExponentEstimate
    delta_sub: ExponentEstimate

    @property
    def gap(self) -> float:
        return self.delta_full.value - self.delta_sub.value

    @property
    def separated(self) -> bool:
        return self.delta_sub.ci[1] < self.delta_full.ci[0]


def subgroup(G: GeneratorSet, words: Sequence[Sequence[int]]) -> GeneratorSet:
    """Generator set of the subgroup generated by the given words."""
    return G.subset([tuple(w) for w in words])


def entropy_drop_experiment(
    G: GeneratorSet,
    subgroup_words: Sequence[Sequence[int]],
    psi: LinearForm,
    L: int,
    L_sub: Optional[int] = None,
    seed: int = 0,
) -> EntropyDrop:
    """Exponents of ``G`` and of a subgroup, with the same estimator and seed."""
    full = critical_exponent(enumerate_ball(G, L), psi, seed=seed)
    H = subgroup(G, subgroup_words)
    sub = critical_exponent(enumerate_ball(H, L if L_sub is None else L_sub), psi, seed=seed)
    return EntropyDrop(full, sub)
