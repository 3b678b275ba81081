"""Builtin group fixtures and their expected-value sidecars.

Each builtin is a function returning a :class:`GeneratorSet`.  Sidecar JSON
files in ``hrps/fixtures/`` hold the generator matrices together with values
produced by independent oracles; ``python -m hrps.fixtures`` regenerates them.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .core import GroupElement
from .orbit import GeneratorSet, load_generator_file
from .typea import irreducible_rep

SCHOTTKY_LAMBDA = 2.5
SCHOTTKY_ANGLE = np.pi / 4


def _rot(t: float) -> np.ndarray:
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def schottky_pair(lam: float = SCHOTTKY_LAMBDA, angle: float = SCHOTTKY_ANGLE) -> list[np.ndarray]:
    a = np.diag([lam, 1.0 / lam])
    R = _rot(angle)
    return [a, R @ a @ R.T]


def pingpong_check_sl2(mats, n_samples: int = 4001) -> dict:
    """Numerical ping-pong test on the circle of lines in R^2.

    Around each attracting and repelling fixed line we take an arc of half
    the smallest angular gap between fixed lines.  The test passes when every
    letter maps the complement of the arc at its own repelling line into the
    arc at its attracting line (checked on a dense sample).
    """
    letters = []
    for m in mats:
        m = np.asarray(m, dtype=float)
        letters += [m, np.linalg.inv(m)]

    def fixed(m):
        w, v = np.linalg.eig(m)
        order = np.argsort(-np.abs(w))
        angs = np.mod(np.arctan2(v[1, order].real, v[0, order].real), np.pi)
        return angs[0], angs[1]  # attracting, repelling

    fx = [fixed(m) for m in letters]
    pts = np.array([a for f in fx for a in f])
    uniq = np.unique(np.round(pts, 12))
    gaps = np.diff(np.concatenate([uniq, [uniq[0] + np.pi]]))
    half = 0.5 * gaps.min()

    def dist(a, b):
        t = np.abs(np.mod(a - b, np.pi))
        return np.minimum(t, np.pi - t)

    theta = np.linspace(0, np.pi, n_samples, endpoint=False)
    worst = 0.0
    ok = True
    for m, (att, rep) in zip(letters, fx):
        src = theta[dist(theta, rep) >= half]
        img = m @ np.vstack([np.cos(src), np.sin(src)])
        ang = np.mod(np.arctan2(img[1], img[0]), np.pi)
        excess = dist(ang, att).max() / half
        worst = max(worst, float(excess))
        ok &= bool(excess < 1.0)
    return {"pingpong": ok, "arc_half_width": float(half), "worst_image_ratio": worst}


def schottky2() -> GeneratorSet:
    a, b = schottky_pair()
    return GeneratorSet([a, b], ["a", "b"])


def _tau(d: int) -> GeneratorSet:
    base = schottky2()
    return GeneratorSet([irreducible_rep(g, d) for g in base.gens], list(base.labels))


def schottky2_tau3() -> GeneratorSet:
    return _tau(3)


def schottky2_tau4() -> GeneratorSet:
    return _tau(4)


def _generic_rotation3() -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_euler("zyx", [0.7, 1.1, 0.4]).as_matrix()


def pingpong_sl3() -> GeneratorSet:
    """Two loxodromic elements of SL_3 with non-proportional Jordan projections."""
    A = np.diag(np.exp([2.0, 0.4, -2.4]))
    k = _generic_rotation3()
    B = k @ np.diag(np.exp([2.4, -0.6, -1.8])) @ k.T
    return GeneratorSet([A, B], ["a", "b"])


def _block(m1, m2):
    n1, n2 = m1.shape[0], m2.shape[0]
    out = np.zeros((n1 + n2, n1 + n2))
    out[:n1, :n1] = m1
    out[n1:, n1:] = m2
    return out


def selfjoin_sl2xsl2() -> GeneratorSet:
    """Block-diagonal image of the free group under two Schottky representations."""
    a1, b1 = schottky_pair()
    a2, b2 = schottky_pair(3.0, np.pi / 3)
    return GeneratorSet([_block(a1, a2), _block(b1, b2)], ["a", "b"])


def product_sl2xsl2() -> GeneratorSet:
    """Direct product of two Schottky groups in SL_2 x SL_2 (not free, not antipodal)."""
    a, b = schottky_pair()
    e = np.eye(2)
    return GeneratorSet([_block(a, e), _block(b, e), _block(e, a), _block(e, b)], ["a", "b", "c", "e"])


def cyclic_diag() -> GeneratorSet:
    return GeneratorSet([np.diag([np.e, 1.0 / np.e])], ["a"])


BUILTINS = {
    "schottky2": schottky2,
    "schottky2-tau3": schottky2_tau3,
    "schottky2-tau4": schottky2_tau4,
    "pingpong-sl3": pingpong_sl3,
    "selfjoin-sl2xsl2": selfjoin_sl2xsl2,
    "product-sl2xsl2": product_sl2xsl2,
    "cyclic-diag": cyclic_diag,
}


def load_fixture(name_or_path) -> GeneratorSet:
    """A builtin by name, or a fixture file by path."""
    if str(name_or_path) in BUILTINS:
        return BUILTINS[str(name_or_path)]()
    p = Path(name_or_path)
    if not p.exists():
        raise FileNotFoundError(f"unknown fixture {name_or_path!r} (builtins: {', '.join(BUILTINS)})")
    return load_generator_file(p)


def sidecar(name: str) -> dict:
    """Expected values shipped with a builtin fixture."""
    ref = resources.files("hrps") / "fixtures" / f"{name}.json"
    return json.loads(ref.read_text(encoding="utf-8"))


def _sidecar_values(name: str) -> dict:
    # oracles are imported lazily; they depend on the growth module
    from .core import cartan_projection
    from .growth import critical_exponent
    from .core import LinearForm, ThetaSet
    from .orbit import enumerate_ball

    G = BUILTINS[name]()
    out = {"name": name, **G.to_dict(), "expected": {}}
    exp = out["expected"]
    exp["generator_mu"] = [cartan_projection(g).entries.tolist() for g in G.gens]
    if name == "schottky2":
        exp.update(pingpong_check_sl2([g.matrix for g in G.gens]))
        exp["ball_size_L3"] = 53
        ball = enumerate_ball(G, 12)
        est = critical_exponent(ball, LinearForm(ThetaSet((1,)), [1.0], 2))
        exp["delta_alpha1_L12"] = est.value
        exp["delta_alpha1_L12_ci"] = list(est.ci)
    if name.startswith("schottky2-tau"):
        d = G.d
        base = schottky2()
        exp["weights"] = list(range(d - 1, -d, -2))
        exp["mu_ray"] = (np.arange(d - 1, -d, -2) / np.linalg.norm(np.arange(d - 1, -d, -2))).tolist()
        exp["generator_mu_from_sl2"] = [
            (cartan_projection(g).entries[0] * np.arange(d - 1, -d, -2)).tolist() for g in base.gens
        ]
    if name == "cyclic-diag":
        exp["mu_L5"] = [[abs(n), -abs(n)] for n in range(-5, 6)]
        exp["ball_size_L5"] = 11
    if name == "pingpong-sl3":
        ball = enumerate_ball(G, 6)
        exp["ball_size_L6"] = len(ball)
        exp["free_L6"] = ball.merged == 0
    if name == "product-sl2xsl2":
        ball = enumerate_ball(G, 4)
        exp["merged_L4"] = ball.merged
    return out


def write_sidecars(directory=None) -> list[Path]:
    directory = Path(directory) if directory else Path(__file__).parent / "fixtures"
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in BUILTINS:
        p = directory / f"{name}.json"
        p.write_text(json.dumps(_sidecar_values(name), indent=2, allow_nan=False) + "\n", encoding="utf-8")
        paths.append(p)
    return paths


if __name__ == "__main__":
    for p in write_sidecars():
        print(p)
