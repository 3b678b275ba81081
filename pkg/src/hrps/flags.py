"""Partial flags, general position, attractors and shadows.

A flag of type theta is stored as an orthonormal frame; only the spans of the
first ``j`` columns for ``j`` in theta carry meaning.

Shadow membership ``xi in O_r(o, q o)`` asks whether the flat ``k exp(a+) o``
(``k`` any frame representing ``xi``) passes within ``r`` of ``q o``.  For a
fixed ``k`` the squared distance is strongly convex on the dominant cone and
is minimised by the kernel in :mod:`hrps.kernels`.  For partial theta the
representative ``k`` ranges over a coset of a block-orthogonal group and is
handled by multistart plus local refinement.

Every member satisfies a necessary condition that only involves spans: with
``mu = mu(q)`` and ``k_q`` its left Cartan frame, the sines of the principal
angles between ``span k[:, :j]`` and ``span k_q[:, :j]`` have Frobenius norm at
most ``exp(2r) * sqrt(sum_{l <= j < i} exp(2 (mu_i - mu_l)))``.  It drives the
KD-tree prefilter of :class:`ShadowIndex` and never discards a member.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial import cKDTree

from . import kernels
from .core import (
    CartanVector,
    GroupElement,
    LinearForm,
    ThetaSet,
    act_on_frames,
    as_element,
    busemann_theta,
    cartan_batch,
    cartan_frames,
    iwasawa_sigma_batch,
    levi_compact_random,
    longest_weyl_element,
    p_theta,
    projector,
    random_orthogonal,
)
from .orbit import InsufficientDataError, OrbitBall

FLAG_TOL = 1e-7
GAP_TOL = 1e-6
ORTHO_TOL = 1e-9
N_MULTISTART = 8
# beyond this spread of mu(q) (minus 2r) the shadow is thinner than frame
# round-off and membership cannot be decided in float64
SPAN_LIMIT = 32.0

STATUS_UNRESOLVED = -2


class DegenerateAttractorError(ValueError):
    def __init__(self, message, root=None):
        super().__init__(message)
        self.root = root


class SignatureError(ValueError):
    """Flag types do not match the operation."""


class ShadowConvergenceError(ArithmeticError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class PrecisionError(ArithmeticError):
    """Shadow too thin to resolve in double precision."""


# ---------------------------------------------------------------------------
# flags
# ---------------------------------------------------------------------------


def _check_frame(frame: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2 or frame.shape[0] != frame.shape[1]:
        raise ValueError(f"frame must be square, got shape {frame.shape}")
    err = np.abs(frame.T @ frame - np.eye(frame.shape[0])).max()
    if err > tol:
        raise ValueError(f"frame not orthogonal (error {err:.2e})")
    return frame


def _sin_block(A: np.ndarray, B: np.ndarray, j: int) -> np.ndarray:
    """``A[..., j:]^T B[..., :j]``; its singular values are the sines of the
    principal angles between ``span A[:, :j]`` and ``span B[:, :j]``."""
    return np.swapaxes(A[..., :, j:], -1, -2) @ B[..., :, :j]


@dataclass(frozen=True, eq=False)
class PartialFlag:
    """A point of the flag variety of type ``theta``.

    Two flags are equal when every meaningful span agrees up to principal
    angles of ``FLAG_TOL``.
    """

    theta: ThetaSet
    frame: np.ndarray

    def __post_init__(self):
        frame = _check_frame(self.frame)
        self.theta.check(frame.shape[0])
        object.__setattr__(self, "frame", frame)

    @property
    def d(self) -> int:
        return self.frame.shape[0]

    @classmethod
    def standard(cls, d: int, theta: ThetaSet) -> "PartialFlag":
        return cls(theta, np.eye(d))

    @classmethod
    def opposite(cls, d: int, theta: ThetaSet) -> "PartialFlag":
        """The flag of type ``theta`` at ``w0`` (spans of the last coordinates)."""
        return cls(theta, longest_weyl_element(d))

    @classmethod
    def random(cls, d: int, theta: ThetaSet, rng: np.random.Generator) -> "PartialFlag":
        return cls(theta, random_orthogonal(d, rng))

    def subspace(self, j: int) -> np.ndarray:
        if j not in self.theta.indices:
            raise ValueError(f"dimension {j} is not part of a flag of type {self.theta}")
        return self.frame[:, :j]

    def distance(self, other: "PartialFlag") -> float:
        """Largest sine of a principal angle over the dimensions in theta."""
        if self.theta != other.theta or self.d != other.d:
            raise SignatureError("flags of different type")
        return max(float(np.linalg.norm(_sin_block(self.frame, other.frame, j), 2)) for j in self.theta)

    def __eq__(self, other):
        if not isinstance(other, PartialFlag):
            return NotImplemented
        if self.theta != other.theta or self.d != other.d:
            return False
        return self.distance(other) <= FLAG_TOL

    __hash__ = None

    def act(self, g) -> "PartialFlag":
        g = as_element(g)
        return PartialFlag(self.theta, act_on_frames(g.matrix, g.inverse, self.frame))

    def plucker(self) -> np.ndarray:
        """Concatenated orthogonal projectors onto the spans (KD-tree coordinates)."""
        return flag_features(self.frame, self.theta)

    def to_dict(self) -> dict:
        return {"theta": list(self.theta.indices), "frame": self.frame.tolist()}


def flag_features(frames: np.ndarray, theta: ThetaSet) -> np.ndarray:
    """Projector coordinates; ``||P - P'||_F = sqrt(2) ||sin angles||_F``."""
    frames = np.asarray(frames, dtype=float)
    single = frames.ndim == 2
    F = frames[None] if single else frames
    n, d, _ = F.shape
    parts = []
    iu = np.triu_indices(d)
    # off-diagonal entries appear twice in the Frobenius norm
    w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    for j in theta:
        K = F[:, :, :j]
        P = K @ np.swapaxes(K, 1, 2)
        parts.append(P[:, iu[0], iu[1]] * w)
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


def _gap_failures(mu: np.ndarray, theta: ThetaSet, tol: float) -> np.ndarray:
    """Boolean (n, |theta|): relative singular-value gap at d_j below ``tol``."""
    mu = np.atleast_2d(mu)
    idx = np.array(theta.indices) - 1
    alpha = mu[:, idx] - mu[:, idx + 1]
    # relative gap (s_j - s_{j+1}) / s_j = 1 - exp(-alpha)
    return -np.expm1(-alpha) < tol


def attractor_flag(g, theta: ThetaSet, gap_tol: float = GAP_TOL) -> PartialFlag:
    """Flag of leading left singular subspaces of ``g``."""
    g = as_element(g)
    theta.check(g.d)
    mu = cartan_batch(g.matrix, g.inverse)
    bad = _gap_failures(mu, theta, gap_tol)[0]
    if bad.any():
        j = theta.indices[int(np.flatnonzero(bad)[0])]
        raise DegenerateAttractorError(
            f"singular values {j} and {j + 1} coincide to relative {gap_tol:g}; root alpha_{j} degenerate", j
        )
    return PartialFlag(theta, cartan_frames(g.matrix, g.inverse))


def attractor_frames(ball: OrbitBall, theta: ThetaSet, gap_tol: float = GAP_TOL):
    """Attractor frames of every ball element and a mask of the non-degenerate ones."""
    theta.check(ball.d)
    ok = ~_gap_failures(ball.mu, theta, gap_tol).any(axis=1)
    return ball.frames(), ok


def general_position_margin(xi: PartialFlag, eta: PartialFlag) -> float:
    """Smallest singular value of ``[xi_j | eta_{d-j}]`` minimised over j in theta."""
    d = xi.d
    if eta.theta != xi.theta.iota(d) or eta.d != d:
        raise SignatureError(f"need flags of types {xi.theta} and {xi.theta.iota(d)}, got {eta.theta}")
    return float(margin_batch(xi.frame, eta.frame, xi.theta)[()])


def margin_batch(xi_frames: np.ndarray, eta_frames: np.ndarray, theta: ThetaSet) -> np.ndarray:
    """Vectorised :func:`general_position_margin` (frames broadcast)."""
    xi_frames = np.asarray(xi_frames, dtype=float)
    eta_frames = np.asarray(eta_frames, dtype=float)
    d = xi_frames.shape[-1]
    xi_frames, eta_frames = np.broadcast_arrays(xi_frames, eta_frames)
    out = None
    for j in theta:
        M = np.concatenate([xi_frames[..., :, :j], eta_frames[..., :, : d - j]], axis=-1)
        s = np.linalg.svd(M, compute_uv=False)[..., -1]
        out = s if out is None else np.minimum(out, s)
    return out


# ---------------------------------------------------------------------------
# shadows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShadowSpec:
    """The shadow ``O_r(p o, q o)`` of type theta."""

    viewpoint: GroupElement
    target: GroupElement
    radius: float
    theta: ThetaSet

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "viewpoint", as_element(self.viewpoint))
        object.__setattr__(self, "target", as_element(self.target))

    def reduced_target(self) -> GroupElement:
        """``p^{-1} q``: the target seen from the base point."""
        return self.viewpoint.inv() @ self.target


@dataclass
class ShadowResult:
    member: bool
    d_min: float
    status: int = 1
    frame: Optional[np.ndarray] = None

    def to_dict(self, gamma_word: str = "", radius: float = math.nan) -> dict:
        return {"gamma_word": gamma_word, "radius": radius, "d_min": self.d_min, "member": self.member}


def sine_bounds(mu: np.ndarray, theta: ThetaSet, r: float) -> np.ndarray:
    """Upper bounds (n, |theta|) on the Frobenius sine between a member flag and the target's spans."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    d = mu.shape[1]
    out = []
    for j in theta:
        diff = mu[:, None, j:] - mu[:, :j, None]  # mu_i - mu_l, l <= j < i
        s = np.sqrt(np.exp(2.0 * diff).sum(axis=(1, 2))) * math.exp(2.0 * r)
        out.append(np.minimum(s, math.sqrt(min(j, d - j))))
    return np.stack(out, axis=1)


def distance_lower_bound(U: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Lower bound on ``min_v d(k exp(v) o, k_q exp(mu) o)`` from the entries of ``U = k^T k_q``.

    With ``k^T q = exp(v) h``, ``||h|| <= e^r`` and ``|v - mu| <= r``, the
    exterior powers give ``|minor_{I,J}(U)| <= exp(mu_I - mu_J + (j + sqrt j) r)``.
    Only ``j = 1`` and ``j = d - 1`` are used; for orthogonal ``U`` the latter
    minors are the complementary entries.  Valid for full flags only.
    """
    U = np.asarray(U, dtype=float)
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    d = U.shape[-1]
    diff = mu[:, None, :] - mu[:, :, None]  # [i, l] -> mu_l - mu_i
    with np.errstate(divide="ignore"):
        la = np.log(np.abs(U))
    low = (la + diff) / 2.0
    j = d - 1
    high = (la - diff) / (j + math.sqrt(j))
    out = np.maximum(low.max(axis=(1, 2)), high.max(axis=(1, 2)))
    return np.maximum(out, 0.0)


def unresolved_mask(mu: np.ndarray, r: float, limit: float = SPAN_LIMIT) -> np.ndarray:
    mu = np.atleast_2d(mu)
    return (mu[:, 0] - mu[:, -1]) - 2.0 * r > limit


def _passes_prefilter(frames, kq, bounds, theta, slack=1e-12):
    ok = np.ones(frames.shape[0], dtype=bool)
    for c, j in enumerate(theta):
        s = np.linalg.norm(_sin_block(frames, kq, j), axis=(-2, -1))
        ok &= s <= bounds[:, c] * (1 + 1e-9) + slack
    return ok


def _block_skew_basis(d: int, theta: ThetaSet) -> np.ndarray:
    basis = []
    for lo, hi in theta.blocks(d):
        for a in range(lo, hi):
            for b in range(a + 1, hi):
                E = np.zeros((d, d))
                E[a, b], E[b, a] = 1.0, -1.0
                basis.append(E)
    return np.array(basis).reshape(-1, d, d)


def shadow_distance_batch(
    frames: np.ndarray,
    kq: np.ndarray,
    mu_q: np.ndarray,
    theta: ThetaSet,
    r: float,
    early_stop: bool = True,
    n_starts: int = N_MULTISTART,
    seed: int = 0,
    refine: bool = True,
):
    """Distances from the flats of ``frames`` to targets ``k_q exp(mu_q) o``.

    Returns ``(d, status)``: status 1 member, 0 non-member, -1 kernel
    iteration limit, -2 unresolved in float64.  With ``early_stop`` a
    non-member's distance is a certified lower bound only.
    """
    frames = np.asarray(frames, dtype=float)
    kq = np.asarray(kq, dtype=float)
    mu_q = np.atleast_2d(np.asarray(mu_q, dtype=float))
    n, d, _ = frames.shape
    r2 = r * r
    dist = np.full(n, np.nan)
    status = np.zeros(n, dtype=np.int8)
    if n == 0:
        return dist, status
    unres = unresolved_mask(mu_q, r)
    status[unres] = STATUS_UNRESOLVED
    todo = np.flatnonzero(~unres)
    if todo.size == 0:
        return dist, status
    U = np.swapaxes(frames[todo], 1, 2) @ kq[todo]
    if theta.is_full(d) and early_stop:
        lb = distance_lower_bound(U, mu_q[todo])
        far = lb > r
        dist[todo[far]] = lb[far]
        status[todo[far]] = 0
        todo, U = todo[~far], U[~far]
    f, st, _ = kernels.minimize(U, mu_q[todo], r2, early_stop=early_stop)
    if theta.is_full(d):
        dist[todo] = np.sqrt(np.maximum(f, 0.0))
        status[todo] = st
        return dist, status
    # partial theta: also vary the representative within the block-orthogonal group
    rng = np.random.default_rng(seed)
    best, best_st = f.copy(), st.copy()
    for _ in range(n_starts - 1):
        open_ = best_st != 1
        if not open_.any():
            break
        idx = np.flatnonzero(open_)
        m = np.array([levi_compact_random(d, theta, rng) for _ in idx])
        Um = np.swapaxes(frames[todo[idx]] @ m, 1, 2) @ kq[todo[idx]]
        f2, s2, _ = kernels.minimize(Um, mu_q[todo[idx]], r2, early_stop=early_stop)
        better = (s2 == 1) | (f2 < best[idx])
        best[idx[better]] = f2[better]
        best_st[idx[better]] = s2[better]
    if refine:
        basis = _block_skew_basis(d, theta)
        for i in np.flatnonzero(best_st != 1):
            k, q, mq = frames[todo[i]], kq[todo[i]], mu_q[todo[i]]

            def obj(x):
                m = scipy.linalg.expm(np.tensordot(x, basis, 1))
                Ux = ((k @ m).T @ q)[None]
                return float(kernels.minimize(Ux, mq[None], r2, early_stop=False)[0][0])

            x0 = np.zeros(basis.shape[0])
            res = scipy.optimize.minimize(obj, x0, method="L-BFGS-B", options={"maxiter": 50})
            if res.fun < best[i]:
                best[i] = res.fun
                best_st[i] = 1 if res.fun <= r2 else 0
    dist[todo] = np.sqrt(np.maximum(best, 0.0))
    # early-exit lower bounds are only valid for the starts that were tried
    status[todo] = np.where(best <= r2, 1, np.where(best_st == -1, -1, 0))
    return dist, status


def shadow_contains(xi: PartialFlag, spec: ShadowSpec) -> ShadowResult:
    """Membership of ``xi`` in the shadow and the attained distance."""
    if spec.theta != xi.theta:
        raise SignatureError(f"flag of type {xi.theta} tested against a shadow of type {spec.theta}")
    q = spec.reduced_target()
    xi_local = xi.act(spec.viewpoint.inv())
    mu = cartan_batch(q.matrix, q.inverse)
    kq = cartan_frames(q.matrix, q.inverse)
    if unresolved_mask(mu, spec.radius)[0]:
        raise PrecisionError(
            f"target spread {mu[0] - mu[-1]:.1f} exceeds {SPAN_LIMIT + 2 * spec.radius:.1f}; shadow below float64 resolution"
        )
    dist, st = shadow_distance_batch(
        xi_local.frame[None], kq[None], mu[None], xi.theta, spec.radius, early_stop=False
    )
    if st[0] == -1:
        raise ShadowConvergenceError("shadow minimiser hit its iteration limit", float(dist[0]))
    return ShadowResult(bool(st[0] == 1), float(dist[0]), int(st[0]), xi_local.frame)


class ShadowIndex:
    """KD-tree over flag projector coordinates for batched shadow queries.

    Parameters
    ----------
    frames : ndarray, shape (n, d, d)
        Orthonormal frames of the indexed flags.
    theta : ThetaSet
    """

    def __init__(self, frames: np.ndarray, theta: ThetaSet):
        self.frames = np.ascontiguousarray(frames, dtype=float)
        self.theta = theta
        self.d = self.frames.shape[-1]
        theta.check(self.d)
        self.features = flag_features(self.frames, theta)
        self.tree = cKDTree(self.features)

    def __len__(self):
        return self.frames.shape[0]

    def candidates(self, kq: np.ndarray, mu_q: np.ndarray, r: float) -> list[np.ndarray]:
        kq = np.asarray(kq, dtype=float).reshape(-1, self.d, self.d)
        mu_q = np.asarray(mu_q, dtype=float).reshape(-1, self.d)
        bounds = sine_bounds(mu_q, self.theta, r)
        radius = math.sqrt(2.0) * np.linalg.norm(bounds, axis=1) * (1 + 1e-9) + 1e-12
        feats = flag_features(kq, self.theta)
        hits = self.tree.query_ball_point(feats, radius)
        out = []
        for t, h in enumerate(hits):
            h = np.asarray(h, dtype=np.int64)
            if h.size:
                keep = _passes_prefilter(self.frames[h], np.broadcast_to(kq[t], (h.size, self.d, self.d)),
                                         np.broadcast_to(bounds[t], (h.size, bounds.shape[1])), self.theta)
                h = np.sort(h[keep])
            out.append(h)
        return out

    def query(self, kq, mu_q, r: float, chunk: int = 200000, keep=None):
        """Member indices per target and the number of unresolved targets.

        ``keep(targets, flags)``, if given, returns a mask over candidate pairs;
        pairs it drops are never passed to the distance kernel.
        """
        kq = np.asarray(kq, dtype=float).reshape(-1, self.d, self.d)
        mu_q = np.asarray(mu_q, dtype=float).reshape(-1, self.d)
        cands = self.candidates(kq, mu_q, r)
        unres = unresolved_mask(mu_q, r)
        tgt = np.concatenate([np.full(c.size, t, dtype=np.int64) for t, c in enumerate(cands)] or [np.zeros(0, int)])
        flg = np.concatenate(cands) if cands else np.zeros(0, dtype=np.int64)
        keep = ~unres[tgt] if keep is None else ~unres[tgt] & keep(tgt, flg)
        tgt, flg = tgt[keep], flg[keep]
        member = np.zeros(tgt.size, dtype=bool)
        for s in range(0, tgt.size, chunk):
            sl = slice(s, s + chunk)
            _, st = shadow_distance_batch(self.frames[flg[sl]], kq[tgt[sl]], mu_q[tgt[sl]], self.theta, r)
            member[sl] = st == 1
        # tgt is non-decreasing, so members split into contiguous runs per target
        tgt, flg = tgt[member], flg[member]
        hits = np.split(flg, np.searchsorted(tgt, np.arange(1, kq.shape[0])))
        return hits, int(unres.sum())


def shadow_reports(ball: OrbitBall, flag: PartialFlag, r: float, indices=None) -> list[dict]:
    """Rows ``{gamma_word, radius, d_min, member}`` for ``flag`` against ball elements."""
    indices = range(len(ball)) if indices is None else indices
    rows = []
    for n in indices:
        spec = ShadowSpec(GroupElement.identity(ball.d), ball.element(n), r, flag.theta)
        try:
            res = shadow_contains(flag, spec)
            rows.append(res.to_dict(ball.generators.word_label(ball.word(n)), r))
        except PrecisionError:
            rows.append({"gamma_word": ball.generators.word_label(ball.word(n)), "radius": r, "d_min": None, "member": None})
    return rows


def emit_shadow_json(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(rows), fh, indent=1, allow_nan=False)


# ---------------------------------------------------------------------------
# probes over a ball
# ---------------------------------------------------------------------------


def sample_flags(ball: OrbitBall, theta: ThetaSet, n_atoms: int, n_random: int, rng: np.random.Generator):
    """Attractor frames of top-sphere elements plus Haar-random frames."""
    frames, ok = attractor_frames(ball, theta)
    top = np.flatnonzero(ok & (ball.lengths == ball.L))
    if top.size > n_atoms:
        top = np.sort(rng.choice(top, n_atoms, replace=False))
    rand = np.array([random_orthogonal(ball.d, rng) for _ in range(n_random)]).reshape(-1, ball.d, ball.d)
    return np.concatenate([frames[top], rand]), top


@dataclass
class MultiplicityReport:
    window: tuple[float, float]
    n_targets: int
    max_count: int
    witness: Optional[np.ndarray]
    unresolved: int = 0
    covered: bool = True


def shadow_multiplicity(
    ball: OrbitBall,
    R: float,
    phi: LinearForm,
    window: tuple[float, float],
    theta: Optional[ThetaSet] = None,
    flags: Optional[np.ndarray] = None,
    n_atoms: int = 20000,
    n_random: int = 2000,
    seed: int = 0,
    index: Optional[ShadowIndex] = None,
) -> MultiplicityReport:
    """Largest number of shadows ``O_R(o, gamma o)`` with ``phi(mu(gamma))`` in the window
    containing a common sampled flag.

    ``covered`` is False when some top-sphere element still has ``phi`` at
    most ``T + D``; longer words may then fall in the window too, and the
    count is a lower bound.
    """
    theta = phi.theta if theta is None else theta
    if index is None:
        if flags is None:
            flags, _ = sample_flags(ball, theta, n_atoms, n_random, np.random.default_rng(seed))
        index = ShadowIndex(flags, theta)
    T0, T1 = window
    vals = phi(ball.mu)
    sel = np.flatnonzero((vals >= T0) & (vals <= T1))
    covered = bool(np.all(vals[ball.lengths == ball.L] > T1))
    if sel.size == 0:
        return MultiplicityReport(window, 0, 0, None, 0, covered)
    kq = ball.frames()[sel]
    hits, unres = index.query(kq, ball.mu[sel], R)
    counts = np.zeros(len(index), dtype=np.int64)
    for h in hits:
        counts[h] += 1
    best = int(np.argmax(counts))
    return MultiplicityReport(window, int(sel.size), int(counts[best]), index.frames[best] if counts[best] else None, unres, covered)


@dataclass
class ConicalReport:
    conical: bool
    total: int
    by_length: dict
    unresolved: int = 0


def conical_membership_probe(xi: PartialFlag, ball: OrbitBall, N: float) -> ConicalReport:
    """Count ball elements whose ``N``-shadow contains ``xi``, bucketed by length."""
    theta = xi.theta
    kq = ball.frames()
    mu = ball.mu
    bounds = sine_bounds(mu, theta, N)
    pre = _passes_prefilter(np.broadcast_to(xi.frame, kq.shape), kq, bounds, theta)
    # the identity (and any target at o) is decided directly by the kernel
    idx = np.flatnonzero(pre)
    dist, st = shadow_distance_batch(np.broadcast_to(xi.frame, (idx.size, ball.d, ball.d)), kq[idx], mu[idx], theta, N)
    hit = idx[st == 1]
    unres = int((st == STATUS_UNRESOLVED).sum())
    by_len = {int(k): int((ball.lengths[hit] == k).sum()) for k in range(ball.L + 1)}
    top = [k for k in range(ball.L + 1) if k >= ball.L - ball.L // 3]
    conical = all(by_len[k] > 0 for k in top)
    return ConicalReport(conical, int(hit.size), by_len, unres)


@dataclass
class DefectReport:
    radius: float
    defect_ratio: float
    n_pairs: int
    worst_word: str = ""


def busemann_vs_cartan_check(
    ball: OrbitBall,
    R: float,
    theta: Optional[ThetaSet] = None,
    n_targets: int = 400,
    n_atoms: int = 20000,
    seed: int = 0,
    index: Optional[ShadowIndex] = None,
) -> DefectReport:
    """``sup ||beta_xi(e, gamma) - mu_theta(gamma)|| / R`` over sampled shadow pairs."""
    theta = ThetaSet.full(ball.d) if theta is None else theta
    rng = np.random.default_rng(seed)
    if index is None:
        flags, _ = sample_flags(ball, theta, n_atoms, 0, rng)
        index = ShadowIndex(flags, theta)
    pool = np.flatnonzero(ball.lengths >= 1)
    tg = np.sort(rng.choice(pool, min(n_targets, pool.size), replace=False))
    hits, _ = index.query(ball.frames()[tg], ball.mu[tg], R)
    worst, n_pairs, word = 0.0, 0, ""
    P = projector(ball.d, theta)
    for t, h in zip(tg, hits):
        if h.size == 0:
            continue
        # beta_xi(e, g) = -sigma(g^{-1}, xi)
        sig = iwasawa_sigma_batch(ball.invs[t], ball.mats[t], index.frames[h])
        defect = np.linalg.norm((-sig - ball.mu[t]) @ P, axis=1)
        n_pairs += h.size
        if defect.max() > worst:
            worst = float(defect.max())
            word = ball.generators.word_label(ball.word(t))
    if n_pairs == 0:
        raise InsufficientDataError(f"no shadow hits at radius {R}")
    return DefectReport(R, worst / R, n_pairs, word)


@dataclass
class AntipodalityReport:
    min_margin: float
    n_flags: int
    pair: tuple[int, int] = (-1, -1)


def antipodality_probe(ball: OrbitBall, theta: ThetaSet, n_flags: int = 200, seed: int = 0) -> AntipodalityReport:
    """Smallest margin between sampled limit flags from different first-letter cylinders.

    Limit flags of nearby boundary points are close, so the margin of all
    pairs tends to 0 for any group; separating the sample by first letter
    keeps pairs apart in the boundary of the free group.
    """
    d = ball.d
    rng = np.random.default_rng(seed)
    frames, ok = attractor_frames(ball, theta)
    frames_i, ok_i = attractor_frames(ball, theta.iota(d))
    top = np.flatnonzero(ok & ok_i & (ball.lengths == ball.L))
    if top.size < 2:
        raise InsufficientDataError("too few non-degenerate limit flags")
    pick = np.sort(rng.choice(top, min(n_flags, top.size), replace=False))
    first = ball.words[pick, 0]
    # eta of a point is the attractor of type iota(theta); here the same frames
    M = margin_batch(frames[pick][:, None], frames_i[pick][None, :], theta)
    diff = first[:, None] != first[None, :]
    M = np.where(diff, M, np.inf)
    a, b = np.unravel_index(np.argmin(M), M.shape)
    return AntipodalityReport(float(M[a, b]), int(pick.size), (int(pick[a]), int(pick[b])))
