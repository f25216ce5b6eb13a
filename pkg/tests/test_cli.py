import json
import math

import pytest

from treetasep import cli
from treetasep.config import parse_config


def write_cfg(tmp_path, command, **kw):
    raw = {"version": 1, "command": command, "tree": {"law": {"2": 1.0}},
           "rates": {"kind": "exponential", "d": 3}}
    raw.update(kw)
    p = tmp_path / f"{command}.json"
    p.write_text(json.dumps(raw))
    return str(p)


def invoke(tmp_path, command, fmt="json", sub="out", **kw):
    path = write_cfg(tmp_path, command, **kw)
    out = tmp_path / sub
    code = cli.main([command, "--config", path, "--out", str(out), "--format", fmt])
    return code, out / f"{command}.{fmt}"


def report(path):
    return json.loads(path.read_text())


def test_simulate_is_byte_reproducible(tmp_path):
    kw = dict(lam=1.0, seed=1, stop={"horizon": 10.0}, replicas=2)
    c1, a = invoke(tmp_path, "simulate", "csv", "a", **kw)
    c2, b = invoke(tmp_path, "simulate", "csv", "b", **kw)
    assert c1 == c2 == 0
    assert a.read_bytes() == b.read_bytes()
    head = a.read_text().splitlines()
    assert head[0].startswith("# command=simulate seed=1 config_hash=")
    assert head[2] == "replica,t,J_root,max_generation"
    assert len(head) == 3 + 2 * 11
    c3, c = invoke(tmp_path, "simulate", "csv", "c", **dict(kw, seed=2))
    assert c.read_bytes() != a.read_bytes()


def test_workers_do_not_change_output(tmp_path):
    kw = dict(lam=1.0, seed=4, stop={"horizon": 5.0}, replicas=3)
    _, a = invoke(tmp_path, "simulate", "csv", "a", **kw)
    _, b = invoke(tmp_path, "simulate", "csv", "b", workers=2, **kw)
    strip = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("#")]
    assert strip(a) == strip(b)


def test_bounds_report(tmp_path):
    code, p = invoke(tmp_path, "bounds", params={"n": 100})
    assert code == 0
    rep = report(p)["report"]
    assert rep["D_n"] == 26
    assert rep["c_o"] == pytest.approx(1 / math.log(2))
    assert rep["M_n"] == pytest.approx(2 * 26 + 2.1 * math.log(100) / math.log(2))
    assert rep["time_window"]["ell"] == math.ceil(rep["M_n"])
    assert report(p)["meta"]["command"] == "bounds"


def test_bounds_with_generation_window(tmp_path):
    code, p = invoke(tmp_path, "bounds", rates={"kind": "constant"}, params={"n": 10, "t": 100.0})
    assert code == 0
    gw = report(p)["report"]["generation_window"]
    assert gw["L_low"] <= gw["L_up"]


def test_classify_rates(tmp_path):
    code, p = invoke(tmp_path, "classify-rates")
    assert code == 0
    rep = report(p)["report"]
    assert rep["summary"] == "Flow, strength 1"
    code, p = invoke(tmp_path, "classify-rates", "json", "c", rates={"kind": "constant"})
    assert report(p)["report"]["summary"] == "Superflow"


def test_disentangle_small(tmp_path):
    code, p = invoke(tmp_path, "disentangle", replicas=20, params={"n": 4})
    rep = report(p)["report"]
    assert code == (0 if rep["fraction_within"] >= 0.99 else 1)
    assert rep["n"] == 4


def test_lpp_command(tmp_path):
    code, p = invoke(tmp_path, "lpp", replicas=2, params={"n": 4, "m": 2, "M_n": 3, "samples": 50})
    rep = report(p)["report"]
    assert rep["slowed_equals_dp"]
    assert len(rep["G"]) == 2


@pytest.mark.parametrize("kind", ["canonical", "irw", "slowed"])
def test_couple_command(tmp_path, kind):
    params = {"kind": kind, "T": 5.0}
    if kind == "canonical":
        params["lam2"] = 2.0
    code, p = invoke(tmp_path, "couple", replicas=2, params=params)
    assert code == 0
    assert report(p)["report"]["violations"] == [0, 0]


def test_equilibrium_command(tmp_path):
    code, p = invoke(tmp_path, "equilibrium", params={"depth": 1, "functions": 20})
    assert code == 0
    rep = report(p)["report"]
    assert all(rep["monotone"])
    assert max(rep["residuals"]) <= 1e-10


def test_window_commands_run(tmp_path):
    code, p = invoke(tmp_path, "current-window", replicas=3, rates={"kind": "constant"},
                     params={"n": 4})
    assert code in (0, 1)
    assert report(p)["report"]["t_low"] < report(p)["report"]["t_up"]
    code, p = invoke(tmp_path, "generation-window", replicas=2, params={"t": 20.0})
    assert code in (0, 1)
    assert "refined_L_up" in report(p)["report"]


def test_svg_output(tmp_path):
    code, p = invoke(tmp_path, "bounds", "svg", params={"n": 20})
    text = p.read_text()
    assert code == 0
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert "<polyline" in text


def test_bad_config_exits_two(tmp_path, capsys):
    code, _ = invoke(tmp_path, "simulate", tree={"law": {"0": 0.5, "3": 0.5}})
    assert code == 2
    assert "tree.law" in capsys.readouterr().err
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert cli.main(["bounds", "--config", str(p)]) == 2
    assert cli.main(["bounds", "--config", str(tmp_path / "missing.json")]) == 2


def test_command_mismatch(tmp_path):
    path = write_cfg(tmp_path, "bounds")
    assert cli.main(["simulate", "--config", path, "--out", str(tmp_path)]) == 2


def test_config_echoed_in_output(tmp_path):
    _, p = invoke(tmp_path, "bounds", seed=9, params={"n": 5})
    meta = report(p)["meta"]
    again = parse_config(dict(meta["config"], out="x"))
    assert again.hash() == meta["config_hash"]
    assert meta["seed"] == 9
