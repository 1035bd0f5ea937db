import json

import numpy as np
import pytest

from wcpfnn.cli import load_config, main
from wcpfnn.dataset import load_csv
from wcpfnn.enrich import RunLog
from wcpfnn.grid import InputDomain, build_quadratic_forms, load_case
from wcpfnn.nn import PfnnPair, TrainingConfig, init_pfnn, train
from wcpfnn.report import compare_runs, normalized_curve, reduction_percent

from conftest import abs_net
from test_grid import TWO_BUS_TEXT

TOY_CONFIG = """[experiment]
case = tiny.m
n = 10
hidden = 6 6
[nn]
learning_rate = 0.01
[enrich]
T = 30
T_int = 10
T_enr = 10
points_per_round = 20
baseline_extra_points = 0
"""


@pytest.fixture
def toy_dir(tmp_path):
    (tmp_path / "tiny.m").write_text(TWO_BUS_TEXT)
    (tmp_path / "toy.ini").write_text(TOY_CONFIG)
    return tmp_path


def run(args, capsys=None):
    code = main([str(a) for a in args])
    return code


def test_generate_toy(toy_dir):
    out = toy_dir / "gen"
    assert run(["generate", "--config", toy_dir / "toy.ini", "--out", out]) == 0
    case = load_case(toy_dir / "tiny.m")
    ds = load_csv(out / "dataset.csv", case)
    assert len(ds) == 10 and ds.labeled.all()
    assert [int(np.sum(ds.split == s)) for s in ("train", "validation", "test")] == [5, 2, 3]
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["rows"] == 10 and prov["split_counts"]["train"] == 5


def test_generate_rerun_identical(toy_dir):
    cfg = toy_dir / "toy.ini"
    run(["generate", "--config", cfg, "--out", toy_dir / "a"])
    run(["generate", "--config", cfg, "--out", toy_dir / "b"])
    for name in ("dataset.csv", "provenance.json"):
        assert (toy_dir / "a" / name).read_bytes() == (toy_dir / "b" / name).read_bytes()


def test_seed_changes_dataset(toy_dir):
    cfg = toy_dir / "toy.ini"
    run(["generate", "--config", cfg, "--out", toy_dir / "a"])
    run(["generate", "--config", cfg, "--out", toy_dir / "b", "--seed", 5])
    assert (toy_dir / "a/dataset.csv").read_bytes() != (toy_dir / "b/dataset.csv").read_bytes()


def test_missing_case_is_config_error(tmp_path):
    (tmp_path / "bad.ini").write_text("[experiment]\ncase = nowhere.m\n")
    assert run(["generate", "--config", tmp_path / "bad.ini", "--out", tmp_path]) == 2


@pytest.mark.parametrize("text", ["[experiment]\nbogus = 1\n", "[nn]\nepochs = many\n",
                                  "[extra]\nx = 1\n", "[experiment]\nfractions = 0.5 0.5 0.5\n"])
def test_bad_config_values(tmp_path, text):
    (tmp_path / "tiny.m").write_text(TWO_BUS_TEXT)
    (tmp_path / "c.ini").write_text("[experiment]\ncase = tiny.m\n" + text.replace(
        "[experiment]\n", ""))
    assert run(["generate", "--config", tmp_path / "c.ini", "--out", tmp_path / "o"]) == 2


def test_config_seed_propagates(toy_dir):
    cfg = load_config(str(toy_dir / "toy.ini"), seed=9)
    assert cfg.seed == cfg.nn.seed == cfg.enrich.seed == cfg.verifier.seed == 9
    assert cfg.enrich.verifier.seed == 9
    assert cfg.enrich.T == 30 and cfg.hidden == (6, 6)


def test_train_pfnn_matches_library(toy_dir):
    out = toy_dir / "p"
    code = run(["train", "--config", toy_dir / "toy.ini", "--out", out, "--method", "pfnn"])
    assert code in (0, 4)
    cfg = load_config(str(toy_dir / "toy.ini"))
    case = load_case(cfg.case)
    qf = build_quadratic_forms(case)
    dom = InputDomain.from_case(case, cfg.demand_low, cfg.demand_high)
    from wcpfnn.dataset import OPFLabeler, generate_labeled_dataset
    ds = generate_labeled_dataset(case, qf, dom, 10, 0, OPFLabeler(qf, dom))
    pair = init_pfnn(qf.n_load, qf.n_gen, qf.n_bus, qf.slack, qf.gen_lower, qf.gen_upper,
                     dom.lower, dom.upper, (6, 6), 0)
    train(pair, ds, qf, TrainingConfig(learning_rate=0.01, epochs=30))
    saved = PfnnPair.from_json((out / "pfnn_model.json").read_text())
    for a, b in zip(saved.parameters(), pair.parameters()):
        np.testing.assert_array_equal(a, b)


def test_train_wc_twice_identical(toy_dir):
    cfg = toy_dir / "toy.ini"
    outs = [toy_dir / "w1", toy_dir / "w2"]
    for out in outs:
        assert run(["train", "--config", cfg, "--out", out, "--method", "wc-pfnn"]) in (0, 4)
    logs = [json.loads((o / "wc-pfnn_runlog.json").read_text()) for o in outs]
    assert [r["epoch"] for r in logs[0]["rounds"]] == [10, 20, 30]
    for log in logs:
        for r in log["rounds"]:
            r.pop("milp_wall_ms")
    assert logs[0] == logs[1]
    for name in ("wc-pfnn_model.json", "wc-pfnn_runlog.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def _abs_model(tmp_path):
    path = tmp_path / "abs.json"
    path.write_text(json.dumps(abs_net().to_dict()))
    return path


def test_verify_toy_model(tmp_path):
    model = _abs_model(tmp_path)
    code = run(["verify", "--model", model, "--out", tmp_path, "--alpha", 0.8,
                "--box-lower", "-1", "--box-upper", "2", "--gen-lower", "0",
                "--gen-upper", "1.5"])
    assert code == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert rep["v_g_max_pu"] == pytest.approx(0.5, abs=1e-6)
    assert rep["D_WC"][0] == pytest.approx(2.0, abs=1e-6)
    assert rep["hypercube"]["d_normalized"] == pytest.approx(0.1, abs=1e-6)


def test_verify_in_bounds_model(tmp_path):
    model = _abs_model(tmp_path)
    assert run(["verify", "--model", model, "--out", tmp_path, "--box-lower", "-1",
                "--box-upper", "1", "--gen-lower", "0", "--gen-upper", "1.5"]) == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert rep["v_g_max_pu"] == 0.0 and rep["hypercube"] is None


def test_verify_dimension_mismatch(tmp_path):
    model = _abs_model(tmp_path)
    assert run(["verify", "--model", model, "--out", tmp_path, "--box-lower", "0,0",
                "--box-upper", "1,1", "--gen-lower", "0", "--gen-upper", "1"]) == 2


def _log(values, method="pfnn"):
    rounds = [{"epoch": 200 * (k + 1), "v_g_max_mva": v, "d_normalized": 0.1,
               "d_fraction_nominal": 0.05} for k, v in enumerate(values)]
    return RunLog(method, [], rounds, {"G_percent_of_range": 1.0})


@pytest.mark.parametrize("pfnn,wc,expected", [(1280, 304, 76.25), (6.08, 4.18, 31.25),
                                              (5.0, 5.0, 0.0)])
def test_reduction_percent(pfnn, wc, expected):
    assert reduction_percent(wc, pfnn) == pytest.approx(expected)
    assert compare_runs(_log([pfnn]), _log([wc], "wc-pfnn")).reduction_percent == \
        pytest.approx(expected)


def test_normalized_curve_relative_to_first_round():
    assert normalized_curve(_log([8.0, 4.0, 2.0]).rounds) == [(200, 1.0), (400, 0.5), (600, 0.25)]


def test_report_command(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(_log([10.0, 8.0, 6.08]).to_json())
    b.write_text(_log([10.0, 5.0, 4.18], "wc-pfnn").to_json())
    assert run(["report", "--pfnn", a, "--wc", b, "--out", tmp_path]) == 0
    rep = json.loads((tmp_path / "comparison.json").read_text())
    assert rep["reduction_percent"] == pytest.approx(31.25)
    assert rep["pfnn"]["v_g_mva"] == 6.08
    lines = (tmp_path / "curves.csv").read_text().splitlines()
    assert lines[0] == "method,epoch,v_g_max_normalized" and len(lines) == 7
