import csv
import io
import json

import pytest
import yaml

from rangerenewal import cli
from rangerenewal.dist import make_power_law
from rangerenewal.engine import SamplerState, sample_stream


def write(tmp_path, doc, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def rows(path):
    return list(csv.reader(io.StringIO(path.read_text())))


PL_DIST = {"family": "power_law", "alpha": 2.0}


def test_exact_mode(tmp_path):
    cfg = write(tmp_path, {"distribution": PL_DIST,
                           "experiment": {"mode": "exact", "n_schedule": [10**6], "ells": [1, 2]}})
    out = tmp_path / "out"
    assert cli.run(cfg, out=str(out)) == 0
    body = rows(out / "theory.csv")
    assert body[0] == ["name", "params", "value", "trunc_err"]
    names = {r[0] for r in body[1:]}
    assert {"E", "r_ell", "E_ell", "S_kl", "f_k"} <= names
    r2 = [r for r in body if r[0] == "r_ell" and r[1] == "ell=2"][0]
    assert float(r2[2]) == pytest.approx(0.125)
    for f in ["theory.json", "resolved_config.yaml", "summary.txt"]:
        assert (out / f).exists()
    json.loads((out / "theory.json").read_text())


@pytest.mark.parametrize("doc", [
    {"distribution": PL_DIST, "experiment": {"mode": "exact", "bogus": 1}},
    {"distribution": {"family": "zipf", "alpha": 2}},
    {"distribution": {"family": "power_law", "alpha": 2, "beta": 3}},
    {"distribution": {"family": "power_law", "alpha": 0.5}},
    {"distribution": PL_DIST, "experiment": {"mode": "dance"}},
    {"distribution": PL_DIST, "experiment": {"n_schedule": [10, 5]}},
    {"distribution": PL_DIST, "experiment": {"mode": "verify", "claims": [{"claim_id": "x"}]}},
    {"distribution": PL_DIST, "experiment": {"mode": "verify",
                                             "claims": [{"claim_id": "x", "estimator": "ratio_R", "tolerance": -1}]}},
    {"distribution": PL_DIST, "output": {"formats": ["xml"]}},
    {"experiment": {"mode": "exact"}},
    ["not", "a", "mapping"],
])
def test_schema_errors_leave_no_outputs(tmp_path, doc):
    cfg = write(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.run(cfg, out=str(out)) == 2
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert cli.run(tmp_path / "absent.yaml", out=str(tmp_path / "o")) == 2


def test_simulate_is_byte_reproducible(tmp_path):
    doc = {"distribution": {"family": "geometric", "a": 0.6931471805599453},
           "experiment": {"mode": "simulate", "n_schedule": [100, 1000], "replicas": 3, "graph": True, "seed": 9}}
    cfg = write(tmp_path, doc)
    a = tmp_path / "a"
    assert cli.run(cfg, out=str(a)) == 0
    first = {p.name: p.read_bytes() for p in a.iterdir()}
    assert cli.run(cfg, out=str(a), jobs=2) == 0
    second = {p.name: p.read_bytes() for p in a.iterdir()}
    assert first == second
    sim = rows(a / "simulate.csv")
    assert len(sim) == 1 + 3 * 2
    conv = rows(a / "plot_convergence.csv")
    assert conv[0] == ["n", "R_n_over_E"] and len(conv) == 3
    sw = rows(a / "plot_small_world.csv")
    assert len(sw) == 3


def test_seed_flag_changes_stream(tmp_path):
    doc = {"distribution": PL_DIST, "experiment": {"mode": "simulate", "n_schedule": [1000], "seed": 1}}
    cfg = write(tmp_path, doc)
    cli.run(cfg, out=str(tmp_path / "a"))
    cli.run(cfg, out=str(tmp_path / "b"), seed=2)
    assert (tmp_path / "a" / "simulate.csv").read_text() != (tmp_path / "b" / "simulate.csv").read_text()
    resolved = yaml.safe_load((tmp_path / "b" / "resolved_config.yaml").read_text())
    assert resolved["experiment"]["seed"] == 2


def test_verify_status_codes(tmp_path):
    good = {"distribution": PL_DIST, "experiment": {
        "mode": "verify", "n_schedule": [1000, 10000], "replicas": 5,
        "claims": [{"claim_id": "THM1-slln", "estimator": "range_slln", "tolerance": 0.1},
                   {"claim_id": "THM2.1-ratio-l1", "estimator": "ratio_R", "ell": 1, "tolerance": 0.1}]}}
    out = tmp_path / "good"
    assert cli.run(write(tmp_path, good), out=str(out)) == 0
    v = rows(out / "verify.csv")
    assert v[0] == ["claim_id", "n", "estimate", "theory", "SE", "pass"]
    assert {r[0] for r in v[1:]} == {"THM1-slln", "THM2.1-ratio-l1"}
    assert len(rows(out / "plot_convergence.csv")) == 3
    bad = {"distribution": PL_DIST, "experiment": {
        "mode": "verify", "n_schedule": [1000], "seed": 1,
        "claims": [{"claim_id": "tight", "estimator": "ratio_R", "ell": 2, "tolerance": 1e-9}]}}
    assert cli.run(write(tmp_path, bad, "bad.yaml"), out=str(tmp_path / "bad")) == 1
    assert "tight: fail" in (tmp_path / "bad" / "summary.txt").read_text()


def test_claim_with_own_distribution(tmp_path):
    doc = {"distribution": PL_DIST, "experiment": {
        "mode": "verify", "n_schedule": [10**5], "claims": [
            {"claim_id": "LP", "estimator": "ratio_R2plus", "ell": 3, "tolerance": 0.1,
             "distribution": {"family": "log_power", "beta": 2.0, "M": 4096}}]}}
    assert cli.run(write(tmp_path, doc), out=str(tmp_path / "o")) == 0


def test_counterexample_mode(tmp_path):
    doc = {"distribution": {"family": "glued", "gamma1": 0.4, "gamma2": 0.8},
           "experiment": {"mode": "counterexample",
                          "calibration": {"stages": 2, "budget": 10**6, "replicas": 3}}}
    out = tmp_path / "o"
    status = cli.run(write(tmp_path, doc), out=str(out))
    assert status in (0, 1)
    cal = rows(out / "calibration.csv")
    assert cal[0][:3] == ["stage", "n_j", "m_j"] and len(cal) == 3


def test_emit_plot_data_empty_and_full(tmp_path):
    files = cli.emit_plot_data({}, tmp_path / "empty")
    for f in files:
        assert len(rows(f)) == 1
    res = sample_stream(SamplerState(make_power_law(2.0), 0), 10**7, {"range"})
    cli.emit_plot_data({"hist": res.counters.hist, "fit_range": (2, 20),
                        "convergence": [(10, 1.0), (100, 0.99)]}, tmp_path / "full")
    assert len(rows(tmp_path / "full" / "plot_power_law.csv")) == 1 + 19
    assert len(rows(tmp_path / "full" / "plot_convergence.csv")) == 3


def test_main_flags(tmp_path, capsys):
    cfg = write(tmp_path, {"distribution": PL_DIST, "experiment": {"mode": "simulate", "n_schedule": [100]}})
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o"), "--mode", "exact", "--jobs", "1"]) == 0
    assert (tmp_path / "o" / "theory.csv").exists()
    with pytest.raises(SystemExit):
        cli.main(["--config", str(cfg), "--jobs", "0"])
    with pytest.raises(SystemExit):
        cli.main(["--config", str(cfg), "--mode", "other"])
