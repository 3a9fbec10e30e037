import csv
import json

import pytest

from twopoint.cli import ERROR, OK, SKIPPED, main
from twopoint.experiments import ExperimentConfig, run_robustness, run_scale_sweep
from twopoint.model import save_instance

TINY = {"structures": ["identity2"], "costs": [1], "markups": [2], "moments": [1], "budgets": [0.5]}


def _config(tmp_path, name="cfg.json", **kw):
    path = tmp_path / name
    path.write_text(json.dumps(kw))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_validate_and_lower_level(tmp_path, newsvendor, nv_moments, capsys):
    inst = tmp_path / "nv.json"
    save_instance(inst, newsvendor, nv_moments)
    assert main(["validate", str(inst)]) == OK
    cfg = _config(tmp_path, mechanism={"varsigma": [10**0.5], "tau": [10, 11]})
    out = tmp_path / "ll.json"
    capsys.readouterr()
    assert main(["lower-level", str(inst), "--config", cfg, "--out", str(out)]) == OK
    doc = json.loads(out.read_text())
    assert doc["value"] == pytest.approx(-19.0, abs=1e-7)
    assert doc["d_h"] == pytest.approx([11.0])


def test_validate_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "none.json")]) == ERROR


def test_gen_instances(tmp_path):
    cfg = _config(tmp_path, instances={"structures": ["identity2"], "budgets": [0.5]})
    assert main(["gen-instances", "--config", cfg, "--out", str(tmp_path / "inst")]) == OK
    ids = json.loads((tmp_path / "inst" / "index.json").read_text())
    assert len(ids) == 40 and (tmp_path / "inst" / f"{ids[0]}.json").exists()


def test_scale_sweep_cli(tmp_path, capsys):
    cfg = _config(tmp_path, instances=TINY, k_list=[1, 2], mechanisms=[[0, 0], [1, 1]])
    out = tmp_path / "sweep"
    assert main(["scale-sweep", "--config", cfg, "--out", str(out)]) == OK
    rows = _rows(out / "scale_sweep.csv")
    assert len(rows) == 4
    assert all(float(r["wcr"]) <= 1 + 1e-9 for r in rows)
    assert "avg_wcr=" in capsys.readouterr().out


def test_scale_sweep_skips_unsupported_risk(tmp_path):
    cfg = _config(tmp_path, instances=TINY, k_list=[1], risk={"kind": "cvar", "beta": 0.05})
    out = tmp_path / "sweep"
    assert main(["scale-sweep", "--config", cfg, "--out", str(out)]) == SKIPPED
    assert len(_rows(out / "scale_skipped.csv")) == 1


def test_unknown_config_key(tmp_path):
    cfg = _config(tmp_path, k_lst=[1])
    assert main(["scale-sweep", "--config", cfg, "--out", str(tmp_path / "x")]) == ERROR


def test_config_hash_ignores_output():
    a = ExperimentConfig(out="a", jobs=1)
    b = ExperimentConfig(out="b", jobs=4)
    assert a.hash() == b.hash()
    assert a.hash() != ExperimentConfig(master_seed=1).hash()


ROBUST = dict(
    instances=TINY, rho_tr=[0.0], rho_te=[0.0, 1.0], n_tr=[20], n_te=60, folds=2, cv_grid=[0.0, 1.0],
    risk={"kind": "cvar", "beta": 0.05},
)


def test_robustness_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        run_robustness(ExperimentConfig(out=str(tmp_path / name), **ROBUST))
    for f in ("robustness.csv", "sign_tests.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_signtest_recomputes_table(tmp_path, capsys):
    cfg = _config(tmp_path, **ROBUST)
    out = tmp_path / "rob"
    assert main(["robustness", "--config", cfg, "--out", str(out)]) == OK
    capsys.readouterr()
    assert main(["signtest", str(out / "robustness.csv"), "--out", str(tmp_path / "signs.csv")]) == OK
    assert (tmp_path / "signs.csv").read_bytes() == (out / "sign_tests.csv").read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    base = dict(instances={**TINY, "moments": [1, 2]}, k_list=[1], mechanisms=[[1, 1]])
    s = run_scale_sweep(ExperimentConfig(jobs=1, **base), write=False)
    p = run_scale_sweep(ExperimentConfig(jobs=2, **base), write=False)
    key = ("instance_id", "C_mech", "C_tldr", "wcr")
    assert [tuple(r[k] for k in key) for r in s.rows] == [tuple(r[k] for k in key) for r in p.rows]


def test_ingest_sales_cli(tmp_path):
    from test_instancegen import _write_sales

    path = tmp_path / "sales.csv"
    _write_sales(path)
    out = tmp_path / "sales"
    assert main(["ingest-sales", str(path), "--n-select", "2", "--test-percent", "50", "--seed", "1", "--out", str(out)]) == OK
    assert len(_rows(out / "train.csv")) == 2 and (out / "instance.json").exists()
    assert main(["ingest-sales", str(path), "--n-select", "9", "--out", str(out)]) == ERROR
