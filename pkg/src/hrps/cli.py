"""Command-line front end.

Every subcommand resolves an :class:`ExperimentConfig`, validates it before any
computation, writes its outputs (UTF-8 CSV or JSON) into ``--out`` together with
``manifest.json``, and exits 0.  Any failure prints a structured error object
to stdout, writes it to ``error.json`` when possible, and exits nonzero
(2 for configuration errors, 1 for errors raised by the numerics).

Floats are written with 17 significant digits.  In JSON, non-finite floats
are written as the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .core import LinearForm, ThetaSet
from .fixtures import BUILTINS, load_fixture
from .kernels import BACKEND
from .orbit import GeneratorSet, enumerate_ball

SCHEMA_VERSION = "hrps-output/1"

SUBCOMMANDS = (
    "enumerate",
    "cartan-spectrum",
    "limit-cone",
    "poincare",
    "exponent",
    "indicator",
    "shadows",
    "multiplicity",
    "patterson",
    "shadow-lemma",
    "conical-mass",
    "bms",
    "hopf-properness",
    "typea-bounds",
    "entropy-drop",
)

# subcommands that need a group
_NEEDS_GROUP = set(SUBCOMMANDS) - {"typea-bounds"}


class ConfigError(ValueError):
    """The configuration does not satisfy a precondition."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    fixture: str = "schottky2"
    d: Optional[int] = None
    theta: Optional[list] = None
    L: int = 8
    psi: Optional[list] = None
    radius: float = 1.0
    seed: int = 0
    out: str = "hrps-out"
    s: Optional[float] = None
    s_offset: float = 0.05
    tail: bool = False
    N: float = 3.0
    window: Optional[list] = None
    T: list = field(default_factory=lambda: [4, 10])
    word: list = field(default_factory=lambda: [1])
    word2: list = field(default_factory=lambda: [-2])
    words: list = field(default_factory=lambda: [[1, 1], [2]])
    L_sub: Optional[int] = None
    margin: float = 0.1
    cutoff: Optional[float] = None
    n_dirs: int = 9
    n_boot: int = 200

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    # resolved views -------------------------------------------------------

    def group(self) -> GeneratorSet:
        try:
            return load_fixture(self.fixture)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from None

    def theta_set(self, d: int) -> ThetaSet:
        return ThetaSet.full(d) if self.theta is None else ThetaSet.parse(self.theta)

    def form(self, d: int) -> LinearForm:
        th = self.theta_set(d)
        c = [1.0] * len(th) if self.psi is None else self.psi
        return LinearForm(th, c, d)

    def validate(self, subcommand: str) -> None:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        if self.L < 0:
            raise ConfigError("L must be non-negative")
        if self.radius <= 0 or self.N <= 0:
            raise ConfigError("radii must be positive")
        if self.n_boot < 1 or self.n_dirs < 1:
            raise ConfigError("n_boot and n_dirs must be positive")
        if subcommand not in _NEEDS_GROUP:
            if self.d is None or self.d < 2:
                raise ConfigError("typea-bounds needs --d >= 2")
            return
        G = self.group()
        if self.d is not None and self.d != G.d:
            raise ConfigError(f"--d {self.d} does not match fixture dimension {G.d}")
        try:
            self.form(G.d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for w in [self.word, self.word2, *self.words]:
            if not w or any(x == 0 or abs(x) > G.rank for x in w):
                raise ConfigError(f"word {w} uses letters outside 1..{G.rank} and their negatives")


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _words(text: str) -> list[list[int]]:
    return [_ints(w) for w in text.split(";") if w.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hrps", description="Orbit growth and shadow experiments for subgroups of SL_d(R).")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON file; its keys override the flags")
    p.add_argument("--fixture", help=f"builtin ({', '.join(BUILTINS)}) or path to a fixture file")
    p.add_argument("--d", type=int)
    p.add_argument("--theta", type=_ints, help="simple roots, e.g. 1,2")
    p.add_argument("--L", type=int, help="word length of the orbit ball")
    p.add_argument("--psi", type=_floats, help="form coefficients psi(w_i), one per root in theta")
    p.add_argument("--radius", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--s", type=float, help="Patterson exponent (default: estimated exponent + --s-offset)")
    p.add_argument("--s-offset", dest="s_offset", type=float)
    p.add_argument("--tail", action="store_true", default=None, help="fold the series tail into the top sphere")
    p.add_argument("--N", type=float, help="conical radius")
    p.add_argument("--window", type=_ints, help="word-length window lo,hi")
    p.add_argument("--T", type=_ints, help="multiplicity window starts lo,hi")
    p.add_argument("--word", type=_ints, help="letters, e.g. 1,-2,1")
    p.add_argument("--word2", type=_ints)
    p.add_argument("--words", type=_words, help="subgroup generators, e.g. '1,1;2'")
    p.add_argument("--L-sub", dest="L_sub", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--n-dirs", dest="n_dirs", type=int)
    p.add_argument("--n-boot", dest="n_boot", type=int)
    return p


def resolve_config(ns: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then flags, then the config file."""
    values = {}
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for k in names:
        v = getattr(ns, k, None)
        if v is not None:
            values[k] = v
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from None
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def fmt_float(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _Float(float(obj))
    return obj


class _Float(float):
    """A float that serialises with 17 significant digits."""


def dumps(obj) -> str:
    """JSON text with floats at 17 significant digits."""

    def enc(o):
        if isinstance(o, _Float):
            if not math.isfinite(o):
                return json.dumps(fmt_float(o))
            t = fmt_float(o)
            # keep integral floats as floats on the way back in
            return t if any(c in t for c in ".en") else t + ".0"
        if isinstance(o, dict):
            return "{" + ", ".join(json.dumps(k) + ": " + enc(v) for k, v in o.items()) + "}"
        if isinstance(o, list):
            return "[" + ", ".join(enc(v) for v in o) + "]"
        return json.dumps(o)

    return enc(_jsonable(obj)) + "\n"


def loads(text: str):
    """Inverse of :func:`dumps`; the strings ``inf``, ``-inf`` and ``nan`` become floats."""

    def fix(o):
        if isinstance(o, dict):
            return {k: fix(v) for k, v in o.items()}
        if isinstance(o, list):
            return [fix(v) for v in o]
        if o in ("inf", "-inf", "nan"):
            return float(o)
        return o

    return fix(json.loads(text))


class Output:
    """Single writer for one run directory."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def json(self, name: str, obj) -> Path:
        path = self.dir / name
        path.write_text(dumps({"schema": SCHEMA_VERSION, **obj}), encoding="utf-8")
        self.files.append(name)
        return path

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        path = self.dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, str) else fmt_float(v) for v in row])
        self.files.append(name)
        return path


def versions() -> dict:
    return {
        "hrps": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "kernel_backend": BACKEND,
    }


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _ball(cfg: ExperimentConfig, L: Optional[int] = None):
    return enumerate_ball(cfg.group(), cfg.L if L is None else L)


def _exponent(cfg, ball, psi):
    from .growth import critical_exponent

    return critical_exponent(ball, psi, n_boot=cfg.n_boot, seed=cfg.seed)


def cmd_enumerate(cfg, out):
    ball = _ball(cfg)
    G = ball.generators
    out.csv("ball.csv", ["index", "word", "length"], ([n, G.word_label(ball.word(n)), int(ball.lengths[n])] for n in range(len(ball))))
    return {"elements": len(ball), "merged": ball.merged, "complete": ball.complete}


def cmd_cartan_spectrum(cfg, out):
    from .orbit import regularity_report

    ball = _ball(cfg)
    theta = cfg.theta_set(ball.d)
    G = ball.generators
    mt = ball.mu_theta(theta)
    header = ["word", "length", *(f"mu{i + 1}" for i in range(ball.d)), "norm_mu_theta"]
    rows = (
        [G.word_label(ball.word(n)), int(ball.lengths[n]), *ball.mu[n].tolist(), float(np.linalg.norm(mt[n]))]
        for n in range(len(ball))
    )
    out.csv("cartan.csv", header, rows)
    rep = regularity_report(ball, theta)
    out.csv("regularity.csv", ["length", "min_root_value"], rep.rows())
    return {"elements": len(ball)}


def cmd_limit_cone(cfg, out):
    from .growth import limit_cone

    ball = _ball(cfg)
    theta = cfg.theta_set(ball.d)
    norms = np.linalg.norm(ball.mu_theta(theta), axis=1)
    cutoff = float(np.quantile(norms, 0.5)) if cfg.cutoff is None else cfg.cutoff
    est = limit_cone(ball, theta, cutoff)
    out.json(
        "limit_cone.json",
        {
            "theta": list(theta.indices),
            "cutoff": cutoff,
            "rays": est.rays,
            "dimension": est.dimension,
            "angular_width": est.angular_width,
            "bounded_distance": est.bounded_distance,
        },
    )
    return {"rays": int(est.rays.shape[0])}


def cmd_poincare(cfg, out):
    from .growth import poincare_partial_sum

    G = cfg.group()
    psi = cfg.form(G.d)
    ball = _ball(cfg)
    s_values = [cfg.s] if cfg.s is not None else [round(0.25 * k, 2) for k in range(1, 13)]
    rows = []
    for L in range(cfg.L + 1):
        sub = ball.restrict(L)
        rows += [[L, s, poincare_partial_sum(sub, psi, s)] for s in s_values]
    out.csv("poincare.csv", ["L", "s", "partial_sum"], rows)
    return {"rows": len(rows)}


def cmd_exponent(cfg, out):
    ball = _ball(cfg)
    est = _exponent(cfg, ball, cfg.form(ball.d))
    row = est.to_dict()
    out.csv("exponent.csv", list(row), [list(row.values())])
    return {"value": est.value}


def cmd_indicator(cfg, out):
    from .growth import chamber_directions, growth_indicator, write_indicator_csv

    ball = _ball(cfg)
    theta = cfg.theta_set(ball.d)
    dirs = chamber_directions(ball.d, theta, cfg.n_dirs)
    grid = growth_indicator(ball, theta, dirs, n_boot=cfg.n_boot, seed=cfg.seed)
    write_indicator_csv(grid, out.dir / "indicator.csv")
    out.files.append("indicator.csv")
    return {"directions": int(dirs.shape[0])}


def cmd_shadows(cfg, out):
    from .flags import attractor_flag, shadow_reports

    ball = _ball(cfg)
    theta = cfg.theta_set(ball.d)
    xi = attractor_flag(ball.generators.evaluate(cfg.word), theta)
    rows = shadow_reports(ball, xi, cfg.radius)
    out.json("shadows.json", {"flag": xi.to_dict(), "rows": rows})
    return {"members": sum(1 for r in rows if r["member"])}


def cmd_multiplicity(cfg, out):
    from .flags import ShadowIndex, sample_flags, shadow_multiplicity

    ball = _ball(cfg)
    phi = cfg.form(ball.d)
    flags, _ = sample_flags(ball, phi.theta, 20000, 2000, np.random.default_rng(cfg.seed))
    index = ShadowIndex(flags, phi.theta)
    lo, hi = cfg.T
    rows = []
    for T in range(lo, hi + 1):
        rep = shadow_multiplicity(ball, cfg.radius, phi, (T, T + 1), index=index)
        rows.append([T, T + 1, rep.n_targets, rep.max_count, rep.unresolved, rep.covered])
    out.csv("multiplicity.csv", ["T_low", "T_high", "targets", "max_multiplicity", "unresolved", "covered"], rows)
    return {"max": max((r[3] for r in rows), default=0)}


def _measure(cfg, ball):
    from .conformal import patterson_measure

    psi = cfg.form(ball.d)
    delta = _exponent(cfg, ball, psi)
    s = delta.value + cfg.s_offset if cfg.s is None else cfg.s
    return patterson_measure(ball, psi, s, delta=delta, tail=cfg.tail), delta


def cmd_patterson(cfg, out):
    ball = _ball(cfg)
    nu, delta = _measure(cfg, ball)
    out.json("patterson.json", {"delta": delta.to_dict(), **nu.to_dict(ball)})
    return {"atoms": len(nu), "s": nu.s}


def cmd_shadow_lemma(cfg, out):
    from .conformal import shadow_lemma_check

    ball = _ball(cfg)
    nu, delta = _measure(cfg, ball)
    rep = shadow_lemma_check(nu, ball, cfg.radius)
    out.csv("shadow_lemma.csv", ["word", "ratio"], zip(rep.words, rep.ratios))
    summary = {"tier": rep.tier, "radius": rep.radius, "s": nu.s, "lo": rep.lo, "hi": rep.hi,
               "spread": rep.spread, "band": list(rep.band), "passed": rep.passed, "unresolved": rep.unresolved}
    out.json("shadow_lemma.json", summary)
    return {"spread": rep.spread, "passed": rep.passed}


def cmd_conical_mass(cfg, out):
    from .conformal import conical_mass_estimate

    ball = _ball(cfg)
    nu, _ = _measure(cfg, ball)
    rep = conical_mass_estimate(nu, ball, cfg.N, None if cfg.window is None else tuple(cfg.window))
    out.json("conical_mass.json", {**dataclasses.asdict(rep), "s": nu.s, "tail": cfg.tail})
    return {"fraction": rep.fraction}


def _hopf_pair(cfg, G):
    from .conformal import HopfPoint
    from .flags import attractor_flag

    d = G.d
    theta = cfg.theta_set(d)
    xi = attractor_flag(G.evaluate(cfg.word), theta)
    eta = attractor_flag(G.evaluate(cfg.word2), theta.iota(d))
    return HopfPoint(xi, eta, np.zeros(d))


def cmd_bms(cfg, out):
    from .conformal import bms_exponent
    from .flags import general_position_margin

    G = cfg.group()
    x = _hopf_pair(cfg, G)
    psi = cfg.form(G.d)
    val = bms_exponent(x.xi, x.eta, psi)
    out.json("bms.json", {"xi": x.xi.to_dict(), "eta": x.eta.to_dict(), "psi": psi.coefficients,
                          "exponent": val, "margin": general_position_margin(x.xi, x.eta)})
    return {"exponent": val}


def cmd_hopf_properness(cfg, out):
    from .conformal import properness_probe

    ball = _ball(cfg)
    x = _hopf_pair(cfg, ball.generators)
    trend = properness_probe(ball, x, cfg.form(ball.d), cfg.margin)
    rows = [[k, trend.counts[k], trend.minima[k]] for k in sorted(trend.minima)]
    out.csv("properness.csv", ["length", "count", "min_abs_phi"], rows)
    return {"top_half_increasing": trend.top_half_increasing()}


def cmd_typea_bounds(cfg, out):
    from .typea import hitchin_bound, hitchin_bound_verify, quint_alpha_bound

    d = cfg.d
    rows = []
    for i in range(1, d):
        chk = hitchin_bound_verify(d, i)
        rows.append([d, i, quint_alpha_bound(d, i), hitchin_bound(d, i), chk.reduced_max, chk.gap])
    out.csv("typea_bounds.csv", ["d", "i", "quint_bound", "hitchin_bound", "hitchin_brute", "gap"], rows)
    return {"rows": len(rows)}


def cmd_entropy_drop(cfg, out):
    from .conformal import entropy_drop_experiment

    G = cfg.group()
    res = entropy_drop_experiment(G, cfg.words, cfg.form(G.d), cfg.L, cfg.L_sub, cfg.seed)
    out.json("entropy_drop.json", {"full": res.delta_full.to_dict(), "sub": res.delta_sub.to_dict(),
                                   "gap": res.gap, "separated": res.separated, "subgroup_words": cfg.words})
    return {"gap": res.gap}


COMMANDS: dict[str, Callable] = {
    "enumerate": cmd_enumerate,
    "cartan-spectrum": cmd_cartan_spectrum,
    "limit-cone": cmd_limit_cone,
    "poincare": cmd_poincare,
    "exponent": cmd_exponent,
    "indicator": cmd_indicator,
    "shadows": cmd_shadows,
    "multiplicity": cmd_multiplicity,
    "patterson": cmd_patterson,
    "shadow-lemma": cmd_shadow_lemma,
    "conical-mass": cmd_conical_mass,
    "bms": cmd_bms,
    "hopf-properness": cmd_hopf_properness,
    "typea-bounds": cmd_typea_bounds,
    "entropy-drop": cmd_entropy_drop,
}


def run(subcommand: str, cfg: ExperimentConfig) -> int:
    """Run one subcommand; returns the process exit status."""
    out = None
    try:
        cfg.validate(subcommand)
        out = Output(cfg.out)
        summary = COMMANDS[subcommand](cfg, out)
        manifest = {"subcommand": subcommand, "seed": cfg.seed, "config": cfg.to_dict(),
                    "config_sha256": cfg.digest(), "versions": versions(), "files": list(out.files), "summary": summary}
        out.json("manifest.json", manifest)
        print(dumps({"status": "ok", "out": str(out.dir), **summary}), end="")
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured error
        err = {"status": "error", "subcommand": subcommand, "error": type(exc).__name__, "message": str(exc)}
        print(dumps(err), end="")
        if out is not None:
            try:
                (out.dir / "error.json").write_text(dumps({"schema": SCHEMA_VERSION, **err}), encoding="utf-8")
            except OSError:
                pass
        return 2 if isinstance(exc, ConfigError) else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(ns)
    except ConfigError as exc:
        print(dumps({"status": "error", "subcommand": ns.subcommand, "error": "ConfigError", "message": str(exc)}), end="")
        return 2
    return run(ns.subcommand, cfg)


if __name__ == "__main__":
    sys.exit(main())
