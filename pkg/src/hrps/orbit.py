"""Orbit balls of finitely generated subgroups of SL_d(R).

Words are tuples of signed generator indices: ``k`` is generator ``k``
(1-based) and ``-k`` its inverse.  Letters are ordered generators first,
then inverses, which fixes the (length, lexicographic) order of a ball.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    DRIFT_TOL,
    LONG_WORD_CUTOFF,
    GroupElement,
    ThetaSet,
    cartan_batch,
    cartan_frames,
    p_theta,
    recompute_extended,
    simple_roots,
)

log = logging.getLogger(__name__)

DEDUP_TOL = 1e-8
DEFAULT_MEMORY_BUDGET = 4 * 1024**3


class PartialBallError(MemoryError):
    """Enumeration stopped at the memory budget; ``ball`` holds what was built."""

    def __init__(self, message, ball):
        super().__init__(message)
        self.ball = ball


class InsufficientDataError(ValueError):
    pass


@dataclass
class GeneratorSet:
    """Generators of a subgroup; inverses are adjoined implicitly."""

    gens: list
    labels: Optional[list] = None

    def __post_init__(self):
        self.gens = [g if isinstance(g, GroupElement) else GroupElement(np.asarray(g, dtype=float)) for g in self.gens]
        if not self.gens:
            raise ValueError("need at least one generator")
        d = self.gens[0].d
        for j, g in enumerate(self.gens):
            if g.d != d:
                raise ValueError("generators have different sizes")
            if np.allclose(g.matrix, np.eye(d), atol=DEDUP_TOL):
                raise ValueError(f"generator {j + 1} is the identity")
        if self.labels is None:
            self.labels = [chr(ord("a") + j) if j < 26 else f"g{j + 1}" for j in range(len(self.gens))]
        if len(self.labels) != len(self.gens):
            raise ValueError("one label per generator")
        self.gens = [GroupElement(g.matrix, g.inverse, (j + 1,)) for j, g in enumerate(self.gens)]

    @property
    def d(self) -> int:
        return self.gens[0].d

    @property
    def rank(self) -> int:
        return len(self.gens)

    def letters(self) -> list[int]:
        r = self.rank
        return list(range(1, r + 1)) + [-j for j in range(1, r + 1)]

    def letter_matrix(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        g = self.gens[abs(x) - 1]
        return (g.matrix, g.inverse) if x > 0 else (g.inverse, g.matrix)

    def evaluate(self, word: Sequence[int]) -> GroupElement:
        m = np.eye(self.d)
        mi = np.eye(self.d)
        for x in word:
            a, ai = self.letter_matrix(x)
            m = m @ a
            mi = ai @ mi
        g = GroupElement._product(m, mi, tuple(int(x) for x in word))
        if len(word) > LONG_WORD_CUTOFF and g.drift > DRIFT_TOL:
            g = recompute_extended(word, self.gens)
        return g

    def word_label(self, word: Sequence[int]) -> str:
        if not word:
            return "e"
        return "".join(self.labels[abs(x) - 1] + ("" if x > 0 else "^-1") for x in word)

    def subset(self, words: Sequence[Sequence[int]], labels=None) -> "GeneratorSet":
        """Generator set of the subgroup generated by the given words."""
        return GeneratorSet([self.evaluate(w) for w in words], labels)

    def to_dict(self) -> dict:
        return {"d": self.d, "labels": list(self.labels), "generators": [g.matrix.tolist() for g in self.gens]}


def load_generator_file(path) -> GeneratorSet:
    """Read a fixture file.

    The file is JSON with keys ``d``, ``generators`` (each either a nested
    list of rows or a flat row-major list) and optional ``labels``.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return generator_set_from_dict(data)


def generator_set_from_dict(data: dict) -> GeneratorSet:
    d = int(data["d"])
    gens = []
    for raw in data["generators"]:
        m = np.asarray(raw, dtype=float)
        if m.ndim == 1:
            if m.size != d * d:
                raise ValueError(f"flat generator needs {d * d} entries, got {m.size}")
            m = m.reshape(d, d)
        if m.shape != (d, d):
            raise ValueError(f"generator has shape {m.shape}, expected {(d, d)}")
        gens.append(GroupElement(m))
    return GeneratorSet(gens, data.get("labels"))


@dataclass
class OrbitBall:
    """All (deduplicated) group elements of word length at most ``L``.

    Arrays are aligned: row ``n`` of ``mats``, ``invs``, ``mu``, ``words`` and
    ``lengths`` describe the same element.  ``words`` is zero-padded.
    """

    generators: GeneratorSet
    L: int
    mats: np.ndarray
    invs: np.ndarray
    mu: np.ndarray
    words: np.ndarray
    lengths: np.ndarray
    complete: bool = True
    merged: int = 0
    _mu_theta: dict = field(default_factory=dict, repr=False)
    _frames: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.mats.shape[-1]

    def __len__(self) -> int:
        return self.mats.shape[0]

    def word(self, n: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.words[n, : self.lengths[n]])

    def word_list(self) -> list[tuple[int, ...]]:
        return [self.word(n) for n in range(len(self))]

    def element(self, n: int) -> GroupElement:
        return GroupElement._product(self.mats[n], self.invs[n], self.word(n))

    def mu_theta(self, theta: ThetaSet) -> np.ndarray:
        theta.check(self.d)
        key = theta.indices
        if key not in self._mu_theta:
            self._mu_theta[key] = p_theta(self.mu, theta)
        return self._mu_theta[key]

    def frames(self) -> np.ndarray:
        """Left Cartan frames of every element (cached)."""
        if self._frames is None:
            self._frames = cartan_frames(self.mats, self.invs)
        return self._frames

    def sphere(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.lengths == k)

    def restrict(self, L: int) -> "OrbitBall":
        """The sub-ball of words of length at most ``L``."""
        keep = self.lengths <= L
        return OrbitBall(
            self.generators,
            min(L, self.L),
            self.mats[keep],
            self.invs[keep],
            self.mu[keep],
            self.words[keep, : max(L, 1)],
            self.lengths[keep],
            self.complete,
            self.merged,
        )


def _letter_rank(letters: np.ndarray, rank: int) -> np.ndarray:
    return np.where(letters > 0, letters - 1, rank - letters - 1)


def _quantise(mats: np.ndarray) -> np.ndarray:
    """Entries on a grid of spacing ~1e-8 relative to the largest entry.

    The grid step is a power of two, and its exponent is part of the key so
    that proportional matrices never share a key.
    """
    n = mats.shape[0]
    flat = mats.reshape(n, -1)
    expo = np.ceil(np.log2(np.maximum(1.0, np.abs(flat).max(axis=1))))
    scale = DEDUP_TOL * np.exp2(expo)
    q = np.round(flat / scale[:, None]).astype(np.int64)
    return np.concatenate([q, expo.astype(np.int64)[:, None]], axis=1)


def _dedup_keys(mats: np.ndarray, invs: np.ndarray) -> np.ndarray:
    """Quantised (g, g^{-1}) pairs.

    Quantising g alone is relative to its largest entry and would merge
    elements that differ only in their small singular directions.
    """
    return np.concatenate([_quantise(mats), _quantise(invs)], axis=1)


def _renormalise(mats, invs):
    """Centred Cartan projections; rescale to det 1 where the drift exceeds tolerance.

    Products of det-1 matrices only drift by rounding, and rescaling by a
    noisy determinant estimate would cost accuracy, so well-behaved rows are
    left untouched.
    """
    d = mats.shape[-1]
    mu, logdet = cartan_batch(mats, invs, return_logdet=True)
    drift = np.abs(np.expm1(logdet))
    bad = drift > DRIFT_TOL
    if np.any(bad):
        c = np.exp(logdet[bad] / d)
        mats[bad] /= c[:, None, None]
        invs[bad] *= c[:, None, None]
    return mu, drift


def enumerate_ball(G: GeneratorSet, L: int, memory_budget: int = DEFAULT_MEMORY_BUDGET, dedup: bool = True) -> OrbitBall:
    """Enumerate reduced words of length at most ``L`` and their images.

    Parameters
    ----------
    G : GeneratorSet
    L : int
        Maximal word length, ``L >= 0``.
    memory_budget : int
        Bytes allowed for the matrix arrays.  When the next sphere would not
        fit, :class:`PartialBallError` is raised with the ball so far.
    dedup : bool
        Merge elements whose quantised matrices coincide (relative scale
        1e-8).  The first element in (length, lexicographic) order is kept.
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    d = G.d
    r = G.rank
    letters = np.array(G.letters())
    gm = np.array([G.letter_matrix(x)[0] for x in letters])
    gi = np.array([G.letter_matrix(x)[1] for x in letters])
    inv_pos = np.array([list(letters).index(-x) for x in letters])

    mats = [np.eye(d)[None]]
    invs = [np.eye(d)[None]]
    mus = [np.zeros((1, d))]
    words = [np.zeros((1, max(L, 1)), dtype=np.int8 if r < 127 else np.int32)]
    lengths = [np.zeros(1, dtype=np.int32)]
    seen = set()
    if dedup:
        seen.add(_dedup_keys(mats[0], invs[0])[0].tobytes())
    merged = 0
    last = np.array([-1])  # letter position of last letter, -1 for identity
    per_elem = (2 * d * d + d) * 8 + max(L, 1)
    total = 1
    for k in range(1, L + 1):
        pm, pi, pw, plast = mats[-1], invs[-1], words[-1], last
        if pm.shape[0] == 0:
            break
        # children in (parent, letter) order keep the lexicographic order
        parent = np.repeat(np.arange(pm.shape[0]), 2 * r)
        letter = np.tile(np.arange(2 * r), pm.shape[0])
        ok = (plast[parent] < 0) | (letter != inv_pos[np.maximum(plast[parent], 0)])
        parent, letter = parent[ok], letter[ok]
        n_new = parent.size
        if (total + n_new) * per_elem > memory_budget:
            ball = _assemble(G, k - 1, mats, invs, mus, words, lengths, merged, complete=False)
            raise PartialBallError(f"memory budget exceeded at length {k} ({total + n_new} elements)", ball)
        cm = pm[parent] @ gm[letter]
        ci = gi[letter] @ pi[parent]
        mu, drift = _renormalise(cm, ci)
        cw = pw[parent].copy()
        cw[:, k - 1] = letters[letter]
        if k > LONG_WORD_CUTOFF and np.any(drift > DRIFT_TOL):
            for n in np.flatnonzero(drift > DRIFT_TOL):
                g = recompute_extended(tuple(cw[n, :k]), G.gens)
                cm[n], ci[n] = g.matrix, g.inverse
            mu, _ = _renormalise(cm, ci)
        if dedup:
            keys = _dedup_keys(cm, ci)
            keep = np.ones(n_new, dtype=bool)
            for n in range(n_new):
                b = keys[n].tobytes()
                if b in seen:
                    keep[n] = False
                else:
                    seen.add(b)
            merged += int((~keep).sum())
            cm, ci, mu, cw, letter = cm[keep], ci[keep], mu[keep], cw[keep], letter[keep]
        mats.append(cm)
        invs.append(ci)
        mus.append(mu)
        words.append(cw)
        lengths.append(np.full(cm.shape[0], k, dtype=np.int32))
        last = letter
        total += cm.shape[0]
    return _assemble(G, L, mats, invs, mus, words, lengths, merged, complete=True)


def _assemble(G, L, mats, invs, mus, words, lengths, merged, complete):
    return OrbitBall(
        G,
        L,
        np.concatenate(mats),
        np.concatenate(invs),
        np.concatenate(mus),
        np.concatenate(words),
        np.concatenate(lengths),
        complete,
        merged,
    )


@dataclass
class RegularityReport:
    theta: ThetaSet
    lengths: np.ndarray
    minima: np.ndarray
    slope: float
    intercept: float
    flagged: bool

    def rows(self):
        return [(int(k), float(m)) for k, m in zip(self.lengths, self.minima)]


def regularity_report(ball: OrbitBall, theta: ThetaSet, tol: float = 1e-9) -> RegularityReport:
    """Per-length minima of ``min_{i in theta} alpha_i(mu(gamma))`` with a linear fit.

    ``flagged`` is set when the minima do not increase across the last third
    of the lengths; on a finite ball this is a diagnostic, not a verdict.
    """
    theta.check(ball.d)
    if len(ball) <= 1:
        return RegularityReport(theta, np.array([], dtype=int), np.array([]), float("nan"), float("nan"), False)
    if ball.L < 4:
        raise InsufficientDataError(f"regularity needs L >= 4, got {ball.L}")
    roots = simple_roots(ball.d)[[i - 1 for i in theta]]
    vals = (ball.mu @ roots.T).min(axis=1)
    ks = np.arange(1, ball.L + 1)
    minima = np.array([vals[ball.lengths == k].min() if np.any(ball.lengths == k) else np.nan for k in ks])
    good = np.isfinite(minima)
    slope, intercept = np.polyfit(ks[good], minima[good], 1)
    tail = minima[good][-max(2, int(np.ceil(good.sum() / 3))) :]
    flagged = not (tail[-1] > tail[0] + tol)
    return RegularityReport(theta, ks, minima, float(slope), float(intercept), bool(flagged))
