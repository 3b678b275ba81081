"""Cartan machinery for G = SL_d(R).

Conventions
-----------
* ``a`` is identified with sum-zero vectors in R^d; the simple roots are
  ``alpha_i(t) = t_i - t_{i+1}`` (1-based ``i``).
* The norm on ``a`` is the Euclidean norm of the diagonal entries.  It is *not*
  the Killing-form normalisation; for SL_d the Killing form is ``2d`` times
  the trace form, so distances reported here differ from the Killing-form
  ones by the constant factor ``KILLING_SCALE = sqrt(2 d)``.  Every inequality
  checked by this package is either norm independent or phrased with linear
  forms, so only the reported magnitudes rescale.
* Long products of matrices lose the small singular values to cancellation.
  A :class:`GroupElement` therefore carries its inverse, and the bottom half
  of the Cartan projection / Iwasawa data is read off the inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg

DET_TOL = 1e-8
SUM_TOL = 1e-10
#: Words longer than this are recomputed in extended precision when the
#: determinant drifts by more than ``DRIFT_TOL``.
LONG_WORD_CUTOFF = 64
DRIFT_TOL = 1e-6


def killing_scale(d: int) -> float:
    """Ratio between the Killing-form norm and the Euclidean norm on ``a``."""
    return float(np.sqrt(2.0 * d))


class CartanOverflowError(ArithmeticError):
    """Raised when a matrix is too ill-conditioned for a float64 Cartan projection."""


class NotInSLError(ValueError):
    pass


# ---------------------------------------------------------------------------
# theta sets, vectors and forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaSet:
    """A non-empty set of simple roots, stored as sorted 1-based indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("theta must be non-empty")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"theta indices must be strictly increasing, got {idx}")
        if idx[0] < 1:
            raise ValueError("theta indices are 1-based")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, d: int) -> "ThetaSet":
        return cls(tuple(range(1, d)))

    @classmethod
    def parse(cls, spec) -> "ThetaSet":
        if isinstance(spec, ThetaSet):
            return spec
        if isinstance(spec, str):
            spec = [int(s) for s in spec.replace(" ", "").split(",") if s]
        elif isinstance(spec, (int, np.integer)):
            spec = [int(spec)]
        return cls(tuple(sorted(int(s) for s in spec)))

    def check(self, d: int) -> None:
        if self.indices[-1] > d - 1:
            raise ValueError(f"theta {self.indices} not contained in simple roots of SL_{d}")

    def iota(self, d: int) -> "ThetaSet":
        """The image under the opposition involution, ``{d - i}``."""
        self.check(d)
        return ThetaSet(tuple(sorted(d - i for i in self.indices)))

    def is_full(self, d: int) -> bool:
        return self.indices == tuple(range(1, d))

    def blocks(self, d: int) -> list[tuple[int, int]]:
        """Column ranges ``[lo, hi)`` of the Levi blocks cut out by theta."""
        cuts = [0, *self.indices, d]
        return [(cuts[j], cuts[j + 1]) for j in range(len(cuts) - 1)]

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)

    def __str__(self):
        return ",".join(str(i) for i in self.indices)


@dataclass(frozen=True)
class CartanVector:
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float).copy()
        if e.ndim != 1:
            raise ValueError("CartanVector entries must be one-dimensional")
        if abs(e.sum()) > SUM_TOL * max(1.0, np.abs(e).max(initial=0.0)):
            raise ValueError(f"entries must sum to zero (sum={e.sum():.3e})")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def dominant(self) -> bool:
        return bool(np.all(np.diff(self.entries) <= 1e-12))

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __add__(self, other):
        return CartanVector(self.entries + np.asarray(other))

    def __sub__(self, other):
        return CartanVector(self.entries - np.asarray(other))

    def __neg__(self):
        return CartanVector(-self.entries)

    def __mul__(self, c):
        return CartanVector(self.entries * float(c))

    __rmul__ = __mul__

    def __repr__(self):
        return f"CartanVector({np.array2string(self.entries, precision=6)})"


def simple_root(d: int, i: int) -> np.ndarray:
    a = np.zeros(d)
    a[i - 1], a[i] = 1.0, -1.0
    return a


def simple_roots(d: int) -> np.ndarray:
    """Rows are alpha_1 .. alpha_{d-1}."""
    return np.array([simple_root(d, i) for i in range(1, d)])


def coweight(d: int, i: int) -> np.ndarray:
    """The vector w_i spanning a_{alpha_i}: first i entries (d-i)/d, rest -i/d."""
    if not 1 <= i <= d - 1:
        raise ValueError(f"need 1 <= i <= d-1, got i={i}, d={d}")
    w = np.full(d, -i / d)
    w[:i] = (d - i) / d
    return w


def coweights(d: int, theta: ThetaSet | None = None) -> np.ndarray:
    """Matrix whose columns are the w_i, i in theta (all i by default)."""
    idx = range(1, d) if theta is None else theta.indices
    return np.column_stack([coweight(d, i) for i in idx])


@lru_cache(maxsize=256)
def _projector(d: int, indices: tuple[int, ...]) -> np.ndarray:
    W = np.column_stack([coweight(d, i) for i in indices])
    P = W @ np.linalg.solve(W.T @ W, W.T)
    P.setflags(write=False)
    return P


def projector(d: int, theta: ThetaSet) -> np.ndarray:
    """Matrix of p_theta (orthogonal projection onto a_theta)."""
    theta.check(d)
    return _projector(d, theta.indices)


@lru_cache(maxsize=256)
def _basis(d: int, indices: tuple[int, ...]) -> np.ndarray:
    W = np.column_stack([coweight(d, i) for i in indices])
    Q, _ = np.linalg.qr(W)
    Q.setflags(write=False)
    return Q


def theta_basis(d: int, theta: ThetaSet) -> np.ndarray:
    """An orthonormal basis (columns) of a_theta inside R^d."""
    theta.check(d)
    return _basis(d, theta.indices)


def p_theta(v, theta: ThetaSet):
    """Project ``v`` (a CartanVector or an ``(..., d)`` array) onto a_theta."""
    arr = np.asarray(v, dtype=float)
    P = projector(arr.shape[-1], theta)
    out = arr @ P
    return CartanVector(out) if isinstance(v, CartanVector) else out


def opposition_involution(v):
    """iota(t_1..t_d) = (-t_d, ..., -t_1)."""
    arr = -np.asarray(v, dtype=float)[..., ::-1]
    return CartanVector(arr) if isinstance(v, CartanVector) else arr


iota = opposition_involution


def longest_weyl_element(d: int) -> np.ndarray:
    """Antidiagonal permutation matrix, first entry's sign chosen so det = 1."""
    w0 = np.fliplr(np.eye(d))
    if np.linalg.det(w0) < 0:
        w0[0, d - 1] = -1.0
    return w0


@dataclass(frozen=True)
class LinearForm:
    """A linear form on a_theta, given by its values ``psi(w_i)`` for i in theta.

    The form acts on all of ``a`` through ``p_theta``.  With theta the full set
    of simple roots the coefficients are the coordinates in the basis of
    simple roots, e.g. ``LinearForm(ThetaSet((1, 2)), (1, 0))`` is alpha_1 on
    ``a`` of SL_3.
    """

    theta: ThetaSet
    coefficients: np.ndarray
    d: int

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).reshape(-1).copy()
        if c.shape[0] != len(self.theta):
            raise ValueError(f"{len(self.theta)} coefficients needed, got {c.shape[0]}")
        self.theta.check(self.d)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_vector(cls, theta: ThetaSet, f, d: int | None = None) -> "LinearForm":
        """Build the form ``v -> <f, p_theta v>`` from an ambient vector ``f``."""
        f = np.asarray(f, dtype=float)
        d = f.shape[0] if d is None else d
        P = projector(d, theta)
        return cls(theta, np.array([f @ P @ coweight(d, i) for i in theta]), d)

    @classmethod
    def simple_root(cls, d: int, i: int, theta: ThetaSet | None = None) -> "LinearForm":
        theta = ThetaSet((i,)) if theta is None else theta
        if i not in theta.indices:
            raise ValueError(f"alpha_{i} is not a form on a_theta for theta={theta}")
        return cls(theta, [1.0 if j == i else 0.0 for j in theta], d)

    @property
    def vector(self) -> np.ndarray:
        """Ambient vector f with psi(v) = <f, v> for every v in a."""
        return _form_vector(self.d, self.theta.indices, tuple(self.coefficients.tolist()))

    def __call__(self, v):
        out = np.asarray(v, dtype=float) @ self.vector
        return float(out) if np.ndim(out) == 0 else out

    def scaled(self, c: float) -> "LinearForm":
        return LinearForm(self.theta, self.coefficients * c, self.d)

    def norm(self) -> float:
        """Operator norm with respect to the Euclidean norm on a."""
        return float(np.linalg.norm(self.vector))

    def compose_iota(self) -> "LinearForm":
        """psi o iota, a form on a_{iota(theta)}."""
        return LinearForm.from_vector(self.theta.iota(self.d), -self.vector[::-1], self.d)

    def __repr__(self):
        return f"LinearForm(theta={self.theta}, coefficients={self.coefficients.tolist()}, d={self.d})"


@lru_cache(maxsize=512)
def _form_vector(d, indices, coeffs):
    # psi = sum_i c_i alpha_i on a_theta, extended by p_theta
    a = sum(c * simple_root(d, i) for c, i in zip(coeffs, indices))
    f = projector(d, ThetaSet(indices)) @ a
    f.setflags(write=False)
    return f


# ---------------------------------------------------------------------------
# group elements
# ---------------------------------------------------------------------------


def _log_abs_det(m: np.ndarray, inv: np.ndarray | None) -> float:
    """log|det m|; the lower singular values are read off ``inv`` when given."""
    if inv is None:
        sign, logdet = np.linalg.slogdet(m)
        if sign == 0 or not np.isfinite(logdet):
            raise NotInSLError("matrix is singular")
        return float(logdet)
    try:
        _, logdet = cartan_batch(m, inv, return_logdet=True)
    except CartanOverflowError as exc:
        raise NotInSLError("matrix is singular") from exc
    return float(logdet)


def _normalize_det(m: np.ndarray, inv: np.ndarray | None = None):
    d = m.shape[0]
    logdet = _log_abs_det(m, inv)
    if np.linalg.det(m) < 0:
        if d % 2 == 0:
            raise NotInSLError("negative determinant cannot be normalised in even dimension")
        m = -m
        inv = None if inv is None else -inv
    c = np.exp(logdet / d)
    return m / c, (None if inv is None else inv * c), abs(np.expm1(logdet))


@dataclass(frozen=True, eq=False)
class GroupElement:
    """A matrix in SL_d(R) with an (accurately known) inverse and an optional word.

    Construction rescales by ``det^{1/d}``; matrices whose determinant is off
    by more than ``DET_TOL`` before rescaling are still accepted, the
    rescaling is the renormalisation.  The inverse is computed once unless
    supplied; products keep track of both factors so long words never need a
    numerical inversion.
    """

    matrix: np.ndarray
    inverse: Optional[np.ndarray] = None
    word: Optional[tuple[int, ...]] = None
    drift: float = field(default=0.0, init=False, compare=False, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("GroupElement needs a square matrix")
        if not np.all(np.isfinite(m)):
            raise CartanOverflowError("non-finite matrix entries")
        inv = self.inverse
        if inv is not None:
            inv = np.array(inv, dtype=float)
            if inv.shape != m.shape:
                raise ValueError("inverse has the wrong shape")
        m, inv, drift = _normalize_det(m, inv)
        if inv is None:
            inv = np.linalg.inv(m)
        m.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inverse", inv)
        object.__setattr__(self, "drift", float(drift))
        if self.word is not None:
            object.__setattr__(self, "word", tuple(int(x) for x in self.word))

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d: int) -> "GroupElement":
        return cls(np.eye(d), np.eye(d), ())

    def inv(self) -> "GroupElement":
        w = None if self.word is None else tuple(-x for x in reversed(self.word))
        return GroupElement._product(self.inverse, self.matrix, w)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        w = None
        if self.word is not None and other.word is not None:
            w = free_reduce(self.word + other.word)
        return GroupElement._product(self.matrix @ other.matrix, other.inverse @ self.inverse, w)

    @classmethod
    def _product(cls, m: np.ndarray, inv: np.ndarray, word) -> "GroupElement":
        # both factors have determinant 1, so only the drift in magnitude is
        # corrected; the sign of det(m) is unreliable for long products
        d = m.shape[0]
        logdet = _log_abs_det(m, inv)
        c = np.exp(logdet / d)
        m, inv = m / c, inv * c
        m.setflags(write=False)
        inv.setflags(write=False)
        out = object.__new__(cls)
        object.__setattr__(out, "matrix", m)
        object.__setattr__(out, "inverse", inv)
        object.__setattr__(out, "word", word)
        object.__setattr__(out, "drift", float(abs(np.expm1(logdet))))
        return out

    def __repr__(self):
        return f"GroupElement(word={self.word}, matrix={self.matrix.tolist()})"


def as_element(g) -> GroupElement:
    return g if isinstance(g, GroupElement) else GroupElement(np.asarray(g, dtype=float))


def free_reduce(word: Sequence[int]) -> tuple[int, ...]:
    out: list[int] = []
    for x in word:
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return tuple(out)


def random_sl(d: int, rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
    """exp of a random traceless matrix."""
    X = rng.normal(scale=scale, size=(d, d))
    X -= np.trace(X) / d * np.eye(d)
    return GroupElement(scipy.linalg.expm(X), scipy.linalg.expm(-X))


def random_orthogonal(d: int, rng: np.random.Generator, special: bool = True) -> np.ndarray:
    """Haar-distributed element of O(d) (SO(d) if ``special``)."""
    Q, R = np.linalg.qr(rng.normal(size=(d, d)))
    Q = Q * np.sign(np.diag(R))
    if special and np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


# ---------------------------------------------------------------------------
# Cartan projection
# ---------------------------------------------------------------------------


def _half(d: int) -> int:
    return (d + 1) // 2


def _split(d: int) -> int:
    """Number of leading (and of trailing) entries read off g (resp. g^{-1})."""
    return d // 2


def _assemble_log(top: np.ndarray, bot: np.ndarray, d: int) -> np.ndarray:
    """Join leading and trailing log-entries; an odd middle entry comes from sum zero."""
    t = _split(d)
    out = np.empty(top.shape[:-1] + (d,))
    out[..., :t] = top[..., :t]
    out[..., d - t :] = bot[..., d - t :]
    if d % 2:
        out[..., t] = -(out[..., :t].sum(axis=-1) + out[..., d - t :].sum(axis=-1))
    else:
        out -= out.mean(axis=-1, keepdims=True)
    return out


def _merge_frames(top_src: np.ndarray, bot_src: np.ndarray, d: int) -> np.ndarray:
    """Orthonormal frame trusting the leading columns of ``top_src`` and the
    trailing columns of ``bot_src``; an odd middle column is the completion."""
    t = _split(d)
    parts = [top_src[..., :t], bot_src[..., d - t :]]
    if d % 2:
        parts.append(top_src[..., t : t + 1])
    G = orthonormalize_frames(np.concatenate(parts, axis=-1))
    order = list(range(t)) + ([2 * t] if d % 2 else []) + list(range(t, 2 * t))
    return G[..., order]


def cartan_batch(mats: np.ndarray, invs: np.ndarray | None = None, return_logdet: bool = False):
    """Cartan projections of a stack ``(n, d, d)``; rows are dominant and sum to 0.

    With ``invs`` the leading ``d // 2`` entries come from the singular values
    of the matrices and the trailing ones from those of the inverses, so both
    ends keep relative accuracy; for odd d the middle entry follows from the
    trace condition.  ``return_logdet`` adds an estimate of ``log|det|``.
    """
    mats = np.asarray(mats, dtype=float)
    single = mats.ndim == 2
    if single:
        mats = mats[None]
        invs = None if invs is None else np.asarray(invs, dtype=float)[None]
    n, d, _ = mats.shape
    if not np.all(np.isfinite(mats)):
        raise CartanOverflowError("non-finite matrix entries")
    s = np.linalg.svd(mats, compute_uv=False)
    with np.errstate(divide="ignore"):
        ls = np.log(s)
        if invs is None:
            logdet = ls.sum(axis=1)
            mu = ls - ls.mean(axis=1, keepdims=True)
        else:
            lsi = -np.log(np.linalg.svd(invs, compute_uv=False))[:, ::-1]
            h = _half(d)
            logdet = ls[:, :h].sum(axis=1) + lsi[:, h:].sum(axis=1)
            mu = _assemble_log(ls, lsi, d)
    if not np.all(np.isfinite(mu)):
        raise CartanOverflowError("singular values out of float range")
    if single:
        mu, logdet = mu[0], logdet[0]
    return (mu, logdet) if return_logdet else mu


def cartan_frames(mats: np.ndarray, invs: np.ndarray | None = None, right: bool = False):
    """Left Cartan frames ``k`` (columns ordered by decreasing singular value).

    With ``right=True`` also returns the right frames ``l`` with
    ``g = k exp(mu) l``.
    """
    mats = np.asarray(mats, dtype=float)
    single = mats.ndim == 2
    if single:
        mats = mats[None]
        invs = None if invs is None else np.asarray(invs, dtype=float)[None]
    d = mats.shape[-1]
    U, _, Vt = np.linalg.svd(mats)
    if invs is None:
        K = U
        L = Vt
    else:
        Ui, _, Vti = np.linalg.svd(invs)
        # left singular vectors of g^{-1} are right singular vectors of g, reversed
        K = _merge_frames(U, np.swapaxes(Vti, 1, 2)[:, :, ::-1], d)
        L = None
        if right:
            Lt = _merge_frames(np.swapaxes(Vt, 1, 2), Ui[:, :, ::-1], d)
            L = np.swapaxes(Lt, 1, 2)
    if single:
        K = K[0]
        L = None if L is None else L[0]
    return (K, L) if right else K


def orthonormalize_frames(F: np.ndarray) -> np.ndarray:
    """Gram-Schmidt in column order (QR with positive diagonal)."""
    Q, R = np.linalg.qr(F)
    sgn = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    sgn[sgn == 0] = 1.0
    return Q * sgn[..., None, :]


def cartan_projection(g, with_frames: bool = False):
    """mu(g): log singular values in non-increasing order.

    With ``with_frames`` returns ``(mu, k, l)`` with ``g = k exp(mu) l``.
    """
    g = as_element(g)
    mu = CartanVector(cartan_batch(g.matrix, g.inverse))
    if not with_frames:
        return mu
    k, l = cartan_frames(g.matrix, g.inverse, right=True)
    return mu, k, l


def symmetric_distance(g, h) -> float:
    """d(g o, h o) = ||mu(g^{-1} h)||."""
    g, h = as_element(g), as_element(h)
    m = g.inverse @ h.matrix
    mi = h.inverse @ g.matrix
    return float(np.linalg.norm(cartan_batch(m, mi)))


def needs_extended(g: GroupElement, cutoff: int = LONG_WORD_CUTOFF, tol: float = DRIFT_TOL) -> bool:
    """True when ``g`` is a long word whose determinant drifted before renormalisation."""
    return g.word is not None and len(g.word) > cutoff and g.drift > tol


def recompute_extended(word: Sequence[int], generators: Sequence[GroupElement], dps: int = 40) -> GroupElement:
    """Multiply out ``word`` in mpmath at ``dps`` digits and round back.

    Used for long words whose float64 product has drifted off SL_d.
    """
    import mpmath

    d = generators[0].d
    with mpmath.workdps(dps):
        acc = mpmath.eye(d)
        inv = mpmath.eye(d)
        for x in word:
            g = generators[abs(x) - 1]
            m, mi = (g.matrix, g.inverse) if x > 0 else (g.inverse, g.matrix)
            acc = acc * mpmath.matrix(m.tolist())
            inv = mpmath.matrix(mi.tolist()) * inv
        det = mpmath.det(acc)
        acc = acc / mpmath.root(det, d)
        inv = inv * mpmath.root(det, d)
        m = np.array(acc.tolist(), dtype=float)
        mi = np.array(inv.tolist(), dtype=float)
    return GroupElement._product(m, mi, tuple(int(x) for x in word))


# ---------------------------------------------------------------------------
# Iwasawa and Busemann
# ---------------------------------------------------------------------------


def _qr_diag(A: np.ndarray) -> np.ndarray:
    R = np.linalg.qr(A, mode="r")
    return np.abs(np.diagonal(R, axis1=-2, axis2=-1))


def _rq_diag(A: np.ndarray) -> np.ndarray:
    """|diag(R)| in A = R Q with R upper triangular."""
    # A = R Q  <=>  J A^T J = (J Q^T J)(J R^T J), and J R^T J is upper triangular
    B = np.swapaxes(A, -1, -2)[..., ::-1, ::-1]
    return _qr_diag(B)[..., ::-1]


def iwasawa_sigma_batch(mats: np.ndarray, invs: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """sigma(g, k P) for stacks of elements and frames (broadcasting).

    ``g k = Q R`` with R upper triangular; returns log diag R.  The lower half
    of the diagonal is recovered from ``(g k)^{-1} = k^T g^{-1} = R^{-1} Q^T``.
    """
    mats = np.asarray(mats, dtype=float)
    invs = np.asarray(invs, dtype=float)
    frames = np.asarray(frames, dtype=float)
    d = mats.shape[-1]
    r_top = _qr_diag(mats @ frames)
    # the leading RQ entries may underflow to 0; only the trailing ones are used
    with np.errstate(divide="ignore"):
        r_bot = 1.0 / _rq_diag(np.swapaxes(frames, -1, -2) @ invs)
    with np.errstate(divide="ignore"):
        sig = _assemble_log(np.log(r_top), np.log(r_bot), d)
    if not np.all(np.isfinite(sig)):
        raise CartanOverflowError("Iwasawa diagonal out of float range")
    return sig


def iwasawa_sigma(g, frame) -> CartanVector:
    """sigma(g, xi) for a full flag xi given by an orthonormal frame."""
    g = as_element(g)
    k = np.asarray(frame, dtype=float)
    if not np.allclose(k.T @ k, np.eye(k.shape[0]), atol=1e-9):
        raise ValueError("flag frame must be orthogonal")
    return CartanVector(iwasawa_sigma_batch(g.matrix, g.inverse, k))


def busemann(frame, g, h) -> np.ndarray:
    """a-valued Busemann cocycle beta_xi(g, h) = sigma(g^{-1}, xi) - sigma(h^{-1}, xi)."""
    g, h = as_element(g), as_element(h)
    return iwasawa_sigma_batch(g.inverse, g.matrix, frame) - iwasawa_sigma_batch(h.inverse, h.matrix, frame)


def busemann_theta(flag, g, h, theta: ThetaSet | None = None) -> CartanVector:
    """a_theta-valued Busemann cocycle at a flag (``PartialFlag`` or a frame).

    The frame of the flag is itself an orthonormal completion to a full flag;
    the value does not depend on which completion is used.
    """
    if hasattr(flag, "frame"):
        frame, theta = flag.frame, flag.theta if theta is None else theta
    else:
        frame = np.asarray(flag, dtype=float)
    if theta is None:
        raise ValueError("theta required when passing a bare frame")
    frame = np.asarray(frame, dtype=float)
    if not np.allclose(frame.T @ frame, np.eye(frame.shape[0]), atol=1e-8):
        raise ValueError("degenerate flag frame (not orthogonal)")
    return CartanVector(p_theta(busemann(frame, g, h), theta))


def act_on_frames(mats: np.ndarray, invs: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Frames of the flags ``g . (k P)``, computed stably for long words.

    The leading subspaces come from ``g k``; the trailing ones from the
    orthogonal complements, which transform by ``g^{-T}``.
    """
    mats = np.asarray(mats, dtype=float)
    invs = np.asarray(invs, dtype=float)
    frames = np.asarray(frames, dtype=float)
    d = frames.shape[-1]
    top = orthonormalize_frames(mats @ frames)
    # complement of span(g k_1..g k_j) is spanned by g^{-T} k_{j+1}..g^{-T} k_d
    tail = np.swapaxes(invs, -1, -2) @ frames
    rev = orthonormalize_frames(tail[..., ::-1])[..., ::-1]
    top, rev = np.broadcast_arrays(top, rev)
    return _merge_frames(top, rev, d)


def levi_random(d: int, theta: ThetaSet, rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
    """Random element of the Levi subgroup L_theta (block diagonal, det 1)."""
    L = np.zeros((d, d))
    for lo, hi in theta.blocks(d):
        n = hi - lo
        L[lo:hi, lo:hi] = scipy.linalg.expm(rng.normal(scale=scale, size=(n, n)))
    return L / np.linalg.det(L) ** (1.0 / d)


def levi_compact_random(d: int, theta: ThetaSet, rng: np.random.Generator) -> np.ndarray:
    """Random element of M_theta = K cap P_theta (block orthogonal)."""
    m = np.zeros((d, d))
    for lo, hi in theta.blocks(d):
        m[lo:hi, lo:hi] = random_orthogonal(hi - lo, rng, special=False)
    if np.linalg.det(m) < 0:
        m[:, 0] = -m[:, 0]
    return m


def lemma_compact_perturbation(g_list: Iterable[GroupElement], Q: Sequence[GroupElement]) -> float:
    """sup ||mu(q1 g q2) - mu(g)|| over the given elements and q1, q2 in Q."""
    worst = 0.0
    for g in g_list:
        mu = cartan_batch(g.matrix, g.inverse)
        for q1 in Q:
            for q2 in Q:
                m = q1.matrix @ g.matrix @ q2.matrix
                mi = q2.inverse @ g.inverse @ q1.inverse
                worst = max(worst, float(np.linalg.norm(cartan_batch(m, mi) - mu)))
    return worst
