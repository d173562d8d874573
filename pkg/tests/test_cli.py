import csv
import json

import pytest

from glosten_eq import cli


def _run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path)])


def test_config_parsing(tmp_path):
    cfg = cli.RunConfig.from_dict({"distribution": {"family": "gaussian", "params": {"Sigma": 0.5}},
                                   "market": {"N": 3}})
    assert cfg.market_params().n_insiders == 3
    assert cfg.market_params().sigma == 1.0
    assert cfg.dist().std == pytest.approx(0.5 ** 0.5)
    scaled = cli.RunConfig.from_dict({"distribution": {"family": "gaussian", "scale_t": 2.0}})
    assert scaled.dist().std == pytest.approx(2.0)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert cli.RunConfig.from_dict(json.loads(path.read_text())).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("bad", [
    {"colour": 1},
    {"distribution": {"family": "cauchy"}},
    {"variant": "auction"},
    {"market": {"N": 0}},
    {"solver": {"tolerance": 1e-3}},
    {"outputs": {"formats": ["xml"]}},
])
def test_config_errors(bad):
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.from_dict(bad)


def test_solve_outputs(tmp_path):
    assert _run(tmp_path, "solve", "--family", "bernoulli", "--N", "2") == 0
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["status"] == "converged" and sol["spread"] == pytest.approx(2.0)
    assert sol["config"]["market"]["N"] == 2
    with open(tmp_path / "curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["variant"] == "dealer"
    # numbers are written with 17 significant digits
    for r in rows[::50]:
        for col in ("x", "F", "h"):
            assert r[col] == format(float(r[col]), ".17g"), (col, r[col])


def test_reruns_are_byte_identical(tmp_path):
    names = ("solution.json", "curves.csv", "convergence.csv")
    runs = []
    for _ in range(2):
        assert _run(tmp_path, "solve", "--family", "trinomial", "--N", "2") == 0
        runs.append([(tmp_path / n).read_bytes() for n in names])
    assert runs[0] == runs[1]


def test_exit_codes(tmp_path):
    assert _run(tmp_path / "x", "solve", "--family", "nosuch") == 1
    assert _run(tmp_path / "s", "solve", "--family", "student", "--alpha", "3", "--N", "1") == 2
    assert _run(tmp_path / "t", "solve", "--family", "student", "--alpha", "3", "--N", "1", "--strict") == 3


def test_validate_bernoulli(tmp_path):
    assert _run(tmp_path, "validate", "--family", "bernoulli", "--N", "2") == 0
    report = json.loads((tmp_path / "validation.json").read_text())
    text = json.dumps(report)
    assert "bernoulli_profit" in text and "antisymmetry" in text


def test_both_variants(tmp_path):
    assert _run(tmp_path, "solve", "--family", "trinomial", "--N", "2", "--variant", "both") == 0
    assert (tmp_path / "dealer" / "solution.json").exists()
    assert (tmp_path / "same_price" / "solution.json").exists()


def test_sweep_summary(tmp_path):
    code = _run(tmp_path, "sweep", "--family", "trinomial", "--axis", "sigma", "--values", "0.5", "2")
    assert code == 0
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    spreads = [float(r["spread"]) for r in rows]
    assert spreads[0] == pytest.approx(spreads[1], abs=1e-3)
    assert (tmp_path / "sigma=0.5").is_dir()
