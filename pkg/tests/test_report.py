import io
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from foliacert import cli
from foliacert import report as rp
from foliacert.config import ConfigError, config_from_dict, load_config, shipped_config


def _bare_floats(node, path="", skip=("config",)):
    """Paths of floats that are not the value of a provenance entry."""
    found = []
    if isinstance(node, dict):
        if set(node) == {"value", "provenance"}:
            return found
        for k, v in node.items():
            if k in skip:
                continue
            found += _bare_floats(v, f"{path}/{k}", skip)
    elif isinstance(node, (list, tuple)):
        for i, v in enumerate(node):
            found += _bare_floats(v, f"{path}/{i}", skip)
    elif isinstance(node, float) or isinstance(node, Fraction):
        found.append(path)
    return found


def _entries(node):
    if isinstance(node, dict):
        if set(node) == {"value", "provenance"}:
            yield node
            return
        for v in node.values():
            yield from _entries(v)
    elif isinstance(node, list):
        for v in node:
            yield from _entries(v)


@pytest.fixture(scope="module")
def lorenz_report():
    return rp.cmd_certify(load_config("lorenz"))


def test_certify_lorenz(lorenz_report):
    rep = lorenz_report
    assert rep.exit_code == 0 and rep.status == "certified"
    d = rep.tree["dissipativity"]
    assert d["q_max"]["value"] >= 1.278
    assert d["q1"]["value"] == pytest.approx(1.7045, abs=1e-3)
    assert d["q2"]["value"] == pytest.approx(1 + (41 / 3) / 49.043, abs=1e-4)
    assert d["binding"] == "cond_b"
    assert rp.CONDITIONALITY in rep.tree["headline"]["statement"]


def test_every_number_has_provenance(lorenz_report):
    assert _bare_floats(lorenz_report.tree) == []
    for e in _entries(lorenz_report.tree):
        assert isinstance(e["provenance"], str) and e["provenance"]


def test_sections_tagged(lorenz_report):
    for key in ("spectral", "bound_chain", "dissipativity", "headline"):
        assert lorenz_report.tree[key]["tag"] == rp.CERTIFIED


def test_canonical_report_is_deterministic(lorenz_report):
    again = rp.cmd_certify(load_config("lorenz"))
    assert again.to_json(canonical=True) == lorenz_report.to_json(canonical=True)
    assert again.to_text(canonical=True) == lorenz_report.to_text(canonical=True)
    assert "timings" not in lorenz_report.document(canonical=True)
    assert "timings" in lorenz_report.document(canonical=False)


def test_json_floats_use_17_digits(lorenz_report):
    text = lorenz_report.to_json()
    doc = json.loads(text)
    q = doc["dissipativity"]["q2"]["value"]
    assert format(q, ".17g") in text
    assert '"rho": 0.20000000000000001' in text
    # exact chain values are written as fractions
    r2 = [s for s in doc["bound_chain"]["steps"] if s["name"] == "R2"][0]
    assert r2["exact"]["value"] == "12544/15"


def test_dumps_special_values():
    text = rp.dumps({"a": math.nan, "b": math.inf, "c": Fraction(1, 3), "d": [1.0, True, None]})
    doc = json.loads(text)
    assert doc == {"a": "nan", "b": "inf", "c": "1/3", "d": [1, True, None]}


def test_keys_keep_insertion_order(lorenz_report):
    keys = list(json.loads(lorenz_report.to_json()))
    assert keys[:6] == ["version", "command", "status", "exit_code", "seed", "config"]


def test_write_json_and_text(tmp_path, lorenz_report):
    js, txt = lorenz_report.write(tmp_path / "cert.json")
    assert json.loads(js.read_text())["status"] == "certified"
    assert "q_max" in txt.read_text()


def test_certify_neg_x_reaches_ceiling():
    rep = rp.cmd_certify(load_config("neg_x"))
    assert rep.exit_code == 0
    assert rep.tree["dissipativity"]["q_max"]["value"] == 2.0
    assert rep.tree["dissipativity"]["binding"] == "ceiling"


def test_certify_b_one_fails_cleanly():
    cfg = load_config("lorenz").with_parameter("b", 1.0)
    rep = rp.cmd_certify(cfg)
    assert rep.status == "failed" and rep.exit_code == rp.EXIT_INVALID
    assert rep.tree["failure"]["stage"] == "lorenz_ellipsoid_bound"
    assert "b > 1" in rep.tree["failure"]["message"]


def test_certify_exact_mode():
    rep = rp.cmd_certify(load_config("lorenz"), exact=True)
    assert rep.exit_code == 0
    assert rep.tree["config"]["region"]["rounding"] == "exact"
    assert rep.tree["dissipativity"]["q_max"]["value"] >= 1.278


def test_certify_diagonal_refuted():
    rep = rp.cmd_certify(load_config("diagonal"))
    assert rep.exit_code == rp.EXIT_FAIL


def test_bunching_lorenz_pass_and_fail():
    cfg = load_config("lorenz")
    good = rp.cmd_bunching(cfg, 1.278, [5, 20], 20)
    assert good.exit_code == 0
    assert good.tree["bunching"]["tag"] == rp.EMPIRICAL
    assert [p["t"] for p in good.tree["bunching"]["per_t"]] == [5.0, 20.0]
    assert _bare_floats(good.tree, skip=("config", "q", "t")) == []
    bad = rp.cmd_bunching(cfg, 3.0, [20], 20)
    assert bad.exit_code == rp.EXIT_FAIL
    assert bad.tree["bunching"]["worst_sample"]["label"] == "equilibrium"


def test_bunching_linear_borderline():
    rep = rp.cmd_bunching(load_config("diagonal"), 1.0, [1, 2], 1)
    eta = rep.tree["bunching"]["per_t"][-1]["eta"]["max"]["value"]
    assert abs(eta) <= 1e-8


def test_bunching_rejects_bad_input():
    assert rp.cmd_bunching(load_config("lorenz"), 1.278, [-1]).exit_code == rp.EXIT_INVALID


def test_foliate_isolates_failures(tmp_path):
    cfg = load_config("lorenz")
    pts = np.array([[-6.0, -7.5, 21.5], [300.0, 300.0, 300.0]])
    from foliacert import cocycle as cy

    pts[0] = cy.attractor_samples(cfg.spec(), 1, seed=3, history=0.0).pasts[0]
    rep = rp.cmd_foliate(cfg, pts, out_dir=tmp_path)
    rows = rep.tree["foliation"]["points"]
    assert rows[0]["status"] == "pass" and rows[1]["status"] == "failed"
    assert rep.exit_code == 0
    assert rows[0]["tangency"]["value"] <= 1e-3
    assert (tmp_path / "leaf_000.csv").exists()


def test_foliate_all_fail():
    rep = rp.cmd_foliate(load_config("lorenz"), [[300.0, 300.0, 300.0]])
    assert rep.exit_code == rp.EXIT_FAIL


def test_read_points(tmp_path):
    p = tmp_path / "pts.txt"
    p.write_text("# base points\n1, 2, 3\n4 5 6\n")
    assert np.array_equal(rp.read_points(p), [[1, 2, 3], [4, 5, 6]])


def test_sweep_r():
    rows = rp.cmd_sweep(load_config("lorenz"), "r", 27, 29, 11, jobs=1)
    assert len(rows) == 11 and all(r.status == "certified" for r in rows)
    assert all(abs(r.q_max - 1.28) < 0.05 for r in rows)
    assert not any(r.flag for r in rows)
    assert rp.sweep_exit_code(rows) == 0
    buf = io.StringIO()
    rp.write_sweep_csv(buf, "r", rows)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("r,status,q_max") and len(lines) == 12


def test_sweep_single_step():
    rows = rp.cmd_sweep(load_config("lorenz"), "r", 28, 30, 1)
    assert len(rows) == 1 and rows[0].value == 28


def test_sweep_records_failures():
    rows = rp.cmd_sweep(load_config("lorenz"), "b", 1.0, 1.2, 3)
    assert rows[0].status == "failed" and rows[0].q_max is None
    assert rows[0].stage == "lorenz_ellipsoid_bound"
    buf = io.StringIO()
    rp.write_sweep_csv(buf, "b", rows)
    assert buf.getvalue().splitlines()[1].split(",")[2] == ""
    assert rp.sweep_exit_code(rows) == rp.EXIT_INCONCLUSIVE


def test_sweep_unknown_parameter():
    with pytest.raises(ConfigError):
        rp.cmd_sweep(load_config("lorenz"), "rho", 1, 2, 3)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"field_text": "dx1 = -x1\ndx2 = -x2\ndx3 = -x3\n", "q_tol": -1})
    with pytest.raises(ConfigError):
        config_from_dict({"field_text": "dx1 = -x1\n", "region": {"mode": "ball"}})
    with pytest.raises(ConfigError):
        config_from_dict({"q_tol": 1e-4})
    bad = tmp_path / "bad.yaml"
    bad.write_text("field: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_shipped_configs_load():
    for name in ("lorenz", "neg_x", "diagonal"):
        assert shipped_config(name).exists()
        assert load_config(name).spec().dimension == 3


def test_cli_certify(tmp_path, capsys):
    out = tmp_path / "cert.json"
    code = cli.main(["--canonical", "certify", "--config", "lorenz", "--out", str(out)])
    assert code == 0
    assert "q_max" in capsys.readouterr().out
    assert json.loads(out.read_text())["status"] == "certified"
    assert out.with_suffix(".txt").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["certify", "--config", str(tmp_path / "missing.yaml")]) == 4
    assert cli.main(["certify", "--config", "diagonal"]) == 2
    assert cli.main(["--jobs", "0", "certify", "--config", "lorenz"]) == 4
    capsys.readouterr()


def test_cli_sweep_stdout(capsys):
    code = cli.main(["sweep", "--config", "lorenz", "--param", "r", "--from", "28", "--to", "28", "--steps", "1"])
    out = capsys.readouterr().out.splitlines()
    assert code == 0 and len(out) == 2


def test_cli_jobs_do_not_change_results(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    cli.main(["--canonical", "--jobs", "1", "certify", "--config", "lorenz", "--out", str(a)])
    cli.main(["--canonical", "--jobs", "4", "certify", "--config", "lorenz", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
