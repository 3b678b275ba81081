import csv
import json
import math

import pytest

from hrps.cli import SUBCOMMANDS, ConfigError, ExperimentConfig, dumps, fmt_float, loads, main


def _run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def _csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def test_subcommand_list():
    assert len(SUBCOMMANDS) == 15
    assert {"enumerate", "typea-bounds", "entropy-drop", "hopf-properness"} <= set(SUBCOMMANDS)


def test_typea_bounds_d3(tmp_path, capsys):
    code, out = _run(tmp_path, "typea-bounds", "--d", "3")
    assert code == 0
    rows = _csv(out / "typea_bounds.csv")
    assert rows[0][:4] == ["d", "i", "quint_bound", "hitchin_bound"]
    assert [float(r[2]) for r in rows[1:]] == [3.0, 3.0]
    assert [float(r[3]) for r in rows[1:]] == [1.0, 1.0]
    status = json.loads(capsys.readouterr().out)
    assert status["status"] == "ok"


def test_enumerate_L0(tmp_path):
    code, out = _run(tmp_path, "enumerate", "--fixture", "schottky2", "--L", "0")
    assert code == 0
    rows = _csv(out / "ball.csv")
    assert rows == [["index", "word", "length"], ["0", "e", "0"]]


def test_exponent_deterministic(tmp_path):
    args = ["exponent", "--fixture", "schottky2", "--L", "6", "--seed", "4", "--n-boot", "50"]
    _, a = _run(tmp_path, *args, name="a")
    _, b = _run(tmp_path, *args, name="b")
    assert (a / "exponent.csv").read_bytes() == (b / "exponent.csv").read_bytes()


def test_manifest_contents(tmp_path):
    code, out = _run(tmp_path, "enumerate", "--fixture", "schottky2", "--L", "2", "--seed", "9")
    man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert man["schema"].startswith("hrps-output/")
    assert man["seed"] == 9 and man["subcommand"] == "enumerate"
    assert set(man["versions"]) >= {"hrps", "python", "numpy", "scipy", "kernel_backend"}
    assert "ball.csv" in man["files"]


def test_config_hash_tracks_config():
    a = ExperimentConfig(L=5)
    assert a.digest() == ExperimentConfig(L=5).digest()
    assert a.digest() != ExperimentConfig(L=6).digest()
    assert a.digest() != ExperimentConfig(L=5, radius=2.0).digest()


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"L": 1}), encoding="utf-8")
    code, out = _run(tmp_path, "enumerate", "--fixture", "schottky2", "--L", "3", "--config", str(cfg))
    assert code == 0
    assert len(_csv(out / "ball.csv")) == 1 + 5


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"wordlength": 3}), encoding="utf-8")
    code, _ = _run(tmp_path, "enumerate", "--config", str(cfg))
    assert code == 2
    err = json.loads(capsys.readouterr().out)
    assert err["status"] == "error" and err["error"] == "ConfigError"


def test_validation_error_exit_2(tmp_path, capsys):
    code, _ = _run(tmp_path, "enumerate", "--L", "-1")
    assert code == 2
    assert json.loads(capsys.readouterr().out)["error"] == "ConfigError"


def test_missing_fixture_writes_error_json(tmp_path, capsys):
    code, out = _run(tmp_path, "enumerate", "--fixture", str(tmp_path / "nope.json"))
    assert code != 0
    err = json.loads(capsys.readouterr().out)
    assert err["status"] == "error"
    if (out / "error.json").exists():
        assert json.loads((out / "error.json").read_text(encoding="utf-8"))["status"] == "error"


def test_module_error_exit_1(tmp_path, capsys):
    # psi = -alpha_1 is not proper on the ball
    code, out = _run(tmp_path, "exponent", "--fixture", "schottky2-tau3", "--L", "4", "--theta", "1,2", "--psi=-1,0")
    assert code == 1
    err = json.loads((out / "error.json").read_text(encoding="utf-8"))
    assert err["error"] == "ProperFormError"


def test_float_format_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 2.0**60, -0.0, 123456789.123456789):
        assert float(fmt_float(x)) == x
    assert dumps({"a": 1.0, "b": [2.0, 0.5]}) == '{"a": 1.0, "b": [2.0, 0.5]}\n'
    back = loads(dumps({"a": math.inf, "b": -math.inf, "c": math.nan, "d": 0.1}))
    assert back["a"] == math.inf and back["b"] == -math.inf and math.isnan(back["c"]) and back["d"] == 0.1


@pytest.mark.parametrize(
    "args,files",
    [
        (["cartan-spectrum", "--fixture", "schottky2-tau3", "--L", "5"], ["cartan.csv", "regularity.csv"]),
        (["poincare", "--fixture", "schottky2", "--L", "5"], ["poincare.csv"]),
        (["patterson", "--fixture", "schottky2-tau3", "--L", "5", "--theta", "1,2", "--psi", "1,0"], ["patterson.json"]),
    ],
)
def test_outputs_round_trip(tmp_path, args, files):
    code, out = _run(tmp_path, *args)
    assert code == 0
    for name in files:
        p = out / name
        if name.endswith(".json"):
            data = loads(p.read_text(encoding="utf-8"))
            assert data["schema"].startswith("hrps-output/")
        else:
            rows = _csv(p)
            assert len(rows) > 1 and all(len(r) == len(rows[0]) for r in rows)


def test_config_error_type():
    with pytest.raises(ConfigError):
        ExperimentConfig(L=-3).validate("enumerate")
