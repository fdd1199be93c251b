import csv
import json
from pathlib import Path

import numpy as np
import pytest

from lapbloch.cli import CONFIG_SCHEMA, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main

ROOT = Path(__file__).resolve().parents[1]
FREE1 = {"dimension": 1, "A": [{"j": [0], "matrix": [[1.0]]}], "V": []}
FREE2 = {"dimension": 2, "A": [{"j": [0, 0], "matrix": [[1.0, 0.0], [0.0, 1.0]]}], "V": []}


def write_config(tmp_path, **kw):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(kw))
    return str(p)


def run(tmp_path, command, cfg, *extra, out="out"):
    return main([command, "--config", cfg, "--out", str(tmp_path / out), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_published_schema_matches():
    assert json.loads((ROOT / "docs" / "config_schema.json").read_text()) == CONFIG_SCHEMA


def test_bands_row_count(tmp_path):
    cfg = write_config(tmp_path, dimension=2, medium=FREE2, N=16, num_bands=4, J_max=2)
    assert run(tmp_path, "bands", cfg) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "bands.csv")
    assert rows[0] == ["alpha1", "alpha2", "band", "mu", "dmu1", "dmu2"]
    assert len(rows) - 1 == 16 ** 2 * 4


def test_bands_deterministic(tmp_path):
    cfg = write_config(tmp_path, dimension=1, medium=FREE1, N=16, num_bands=3, J_max=4)
    assert run(tmp_path, "bands", cfg, out="a") == EXIT_OK
    assert run(tmp_path, "bands", cfg, "--threads", "0", out="b") == EXIT_OK
    a = (tmp_path / "a" / "bands.csv").read_bytes()
    assert a == (tmp_path / "b" / "bands.csv").read_bytes()
    assert b"\r" not in a


def test_bands_json_format(tmp_path):
    cfg = write_config(tmp_path, dimension=1, medium=FREE1, N=8, num_bands=1, J_max=2)
    assert run(tmp_path, "bands", cfg, "--format", "json") == EXIT_OK
    rows = json.loads((tmp_path / "out" / "bands.json").read_text())
    assert len(rows) == 8 and set(rows[0]) == {"alpha1", "band", "mu", "dmu1"}


def test_medium_from_file(tmp_path):
    (tmp_path / "medium.json").write_text(json.dumps(FREE1))
    cfg = write_config(tmp_path, dimension=1, medium="medium.json", N=8, num_bands=1, J_max=2)
    assert run(tmp_path, "bands", cfg) == EXIT_OK


def test_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{dimension: 1")
    assert main(["bands", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == EXIT_CONFIG and err["error"] == "ConfigError"


@pytest.mark.parametrize("patch", [
    {"J_max": 0},
    {"N": 4},
    {"dimension": 3},
    {"direction": [0.0]},
    {"contour": {"sigma1": -1.0}},
    {"unknown_key": 1},
    {"medium": "missing.json"},
    {"medium": FREE2},
])
def test_invalid_configs(tmp_path, patch):
    raw = dict(dimension=1, medium=FREE1, N=8, num_bands=1, J_max=2, eval_points=[[3.0]])
    raw.update(patch)
    cfg = write_config(tmp_path, **raw)
    assert run(tmp_path, "solve", cfg) == EXIT_CONFIG


def test_bad_command_line(tmp_path):
    cfg = write_config(tmp_path, dimension=1, medium=FREE1)
    assert main(["nonsense", "--config", cfg]) == EXIT_CONFIG
    assert main(["bands"]) == EXIT_CONFIG
    assert run(tmp_path, "bands", cfg, "--threads", "-2") == EXIT_CONFIG


def test_fermi_outputs(tmp_path):
    cfg = write_config(tmp_path, dimension=2, medium=FREE2, N=16, num_bands=2, J_max=2, direction=[1.0, 0.0],
                       contour={"sigma1": 0.05, "sigma2": 0.05, "halo": 0.1, "slices": 8, "nodes_per_slice": 64},
                       **{"lambda": 0.09})
    assert run(tmp_path, "fermi", cfg) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "fermi.csv")
    assert rows[0] == ["band", "segment", "point", "alpha1", "alpha2", "grad1", "grad2", "grad_dot_n", "tag"]
    assert {r[-1] for r in rows[1:]} >= {"plus", "minus"}
    crows = read_csv(tmp_path / "out" / "fermi_complex.csv")
    assert crows[0] == ["band", "anchor1", "anchor2", "gamma", "re_s", "im_s", "G", "sign"]
    assert len(crows) > 1


def test_solve_1d(tmp_path):
    cfg = write_config(tmp_path, dimension=1, medium=FREE1, N=16, num_bands=3, J_max=32,
                       contour={"sigma1": 2.5, "sigma2": 2.5, "nodes_per_slice": 512},
                       eval_points=[[5.0]], **{"lambda": 0.09})
    assert run(tmp_path, "solve", cfg) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "solution.csv")
    assert rows[0] == ["x1", "re_total", "im_total", "re_evan", "im_evan", "re_prop", "im_prop", "re_cext",
                       "im_cext"]
    total = complex(float(rows[1][1]), float(rows[1][2]))
    assert total == pytest.approx(1j * np.exp(1.5j) / 0.6, abs=1e-6)
    diag = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert diag["points"][0]["nodes_per_slice"] == 512


def test_solve_irregular_level_is_numerical(tmp_path):
    # lambda = 0 is the bottom of the first band
    cfg = write_config(tmp_path, dimension=1, medium=FREE1, N=16, num_bands=2, J_max=4, eval_points=[[2.0]],
                       **{"lambda": 0.0})
    assert run(tmp_path, "solve", cfg) == EXIT_NUMERICAL


def _converge_cfg(tmp_path, ladder):
    return write_config(tmp_path, dimension=1, medium=FREE1, N=16, num_bands=3, J_max=16,
                        contour={"sigma1": 2.5, "sigma2": 2.5, "nodes_per_slice": 512},
                        eval_points=[[1.0], [3.0], [5.0]], epsilon_ladder=ladder, **{"lambda": 0.09})


def test_converge_decreasing(tmp_path):
    assert run(tmp_path, "converge", _converge_cfg(tmp_path, [0.2, 0.1, 0.05])) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "convergence.csv")
    assert rows[0] == ["epsilon", "max_abs_error"]
    err = [float(r[1]) for r in rows[1:]]
    assert len(err) == 3 and err[0] > err[1] > err[2]


def test_converge_single(tmp_path):
    assert run(tmp_path, "converge", _converge_cfg(tmp_path, [0.1])) == EXIT_OK
    assert len(read_csv(tmp_path / "out" / "convergence.csv")) == 2


@pytest.mark.parametrize("ladder", [[], [0.1, 0.2], [0.1, 0.1]])
def test_converge_bad_ladder(tmp_path, ladder):
    assert run(tmp_path, "converge", _converge_cfg(tmp_path, ladder)) == EXIT_CONFIG


def test_verify_subset(tmp_path):
    cfg = write_config(tmp_path, dimension=1, medium=FREE1)
    assert run(tmp_path, "verify", cfg, "--checks", "residue,parseval") == EXIT_OK
    rows = read_csv(tmp_path / "out" / "verify.csv")
    assert rows[0] == ["check", "value", "tolerance", "passed"]
    assert [r[0] for r in rows[1:]] == ["residue", "parseval"]
    assert all(r[3] == "1" for r in rows[1:])


def test_verify_unknown_check(tmp_path):
    cfg = write_config(tmp_path, dimension=1, medium=FREE1)
    assert run(tmp_path, "verify", cfg, "--checks", "nope") == EXIT_CONFIG


def test_verify_failure_exit(tmp_path, monkeypatch):
    from lapbloch import verify

    monkeypatch.setitem(verify.CHECKS, "residue", lambda: verify.CheckResult("residue", 1.0, 1e-10))
    cfg = write_config(tmp_path, dimension=1, medium=FREE1)
    assert run(tmp_path, "verify", cfg, "--checks", "residue") == EXIT_NUMERICAL


@pytest.mark.parametrize("name", ["free1d.json", "free2d.json"])
def test_shipped_configs_validate(name):
    from lapbloch.cli import RunConfig

    cfg = RunConfig.load(ROOT / "docs" / "configs" / name)
    assert cfg.points.shape[1] == cfg.dim
