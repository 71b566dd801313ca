import json
import math

import numpy as np
import pytest

from mnar_debias.cli import config_hash, main, read_csv
from mnar_debias.core import ErrorSpec, imputed_error, pointwise_error
from mnar_debias.dynamic import JointObjective, alpha_opt_closed_form, alpha_schedule
from mnar_debias.estimators import eval_dynamic


def run(tmp_path, command, cfg=None, out="out", extra=()):
    args = [command, "--out", str(tmp_path / out)]
    if cfg is not None:
        path = tmp_path / f"{out}.json"
        path.write_text(json.dumps(cfg))
        args += ["--config", str(path)]
    return main(args + list(extra))


def load(tmp_path, out, name):
    return json.loads((tmp_path / out / name).read_text())


@pytest.fixture
def dataset(tmp_path):
    assert run(tmp_path, "generate", {"M": 25, "N": 30}, "gen", ["--seed", "3"]) == 0
    return str(tmp_path / "gen" / "dataset.json")


def test_generate_stamps_provenance(tmp_path, dataset):
    body = load(tmp_path, "gen", "dataset.json")
    assert body["seed"] == 3
    assert body["config_hash"] == config_hash(body["config"])
    assert np.asarray(body["result"]["y_true"]).shape == (25, 30)
    assert (tmp_path / "gen" / "config.json").exists()


def test_estimate_matches_library(tmp_path, dataset):
    assert run(tmp_path, "estimate", {"data": dataset}, "est") == 0
    got = load(tmp_path, "est", "estimate.json")["result"]["estimate"]
    d = load(tmp_path, "gen", "dataset.json")["result"]
    y = np.asarray(d["y_true"], dtype=float)
    mask = np.asarray(d["train_mask"], dtype=bool)
    p = np.asarray(d["p_true"], dtype=float)
    center = float(y[mask].mean())
    spec = ErrorSpec("squared", 1.0, center)
    pred = np.full(y.shape, center)
    e = np.asarray(pointwise_error(np.where(mask, y, 0.0), pred, spec))
    e_hat = np.asarray(imputed_error(pred, spec))
    alpha = alpha_schedule(JointObjective(1.0, 0.1), "log1p", p)
    assert abs(got - eval_dynamic("d_dr", e, e_hat, p, mask, "log1p", alpha)) <= 1e-12


def test_train_evaluate_analyze(tmp_path, dataset):
    assert run(tmp_path, "train", {"data": dataset, "epochs": 2}, "tr") == 0
    model = str(tmp_path / "tr" / "model.json")
    stamp, rows = read_csv(str(tmp_path / "tr" / "train_log.csv"))
    assert len(rows) == 2 and stamp["seed"] == "0"
    assert run(tmp_path, "evaluate", {"data": dataset, "model": model}, "ev") == 0
    res = load(tmp_path, "ev", "evaluation.json")["result"]
    assert 0.0 <= res["auc"] <= 1.0 and 0.0 <= res["ndcg_at_k"] <= 1.0
    assert run(tmp_path, "analyze", {"data": dataset, "model": model}, "an") == 0
    est = load(tmp_path, "an", "analysis.json")["result"]["estimators"]
    assert est["ips"]["bias"] == pytest.approx(0.0, abs=1e-12)
    assert est["d_dr"]["tail_bound"] > 0


def test_train_from_ratings_file(tmp_path):
    lines = [f"{u}\t{i}\t{(u * 7 + i * 3) % 5 + 1}" for u in range(8) for i in range(6) if (u + i) % 3]
    (tmp_path / "r.tsv").write_text("\n".join(lines) + "\n")
    cfg = {"ratings": str(tmp_path / "r.tsv"), "loss_family": "ips", "propensity": "factorized_popularity",
           "epochs": 2}
    assert run(tmp_path, "train", cfg, "rt") == 0


def test_alpha_csv_matches_closed_form(tmp_path):
    assert run(tmp_path, "alpha", {"p_num": 20}, "al") == 0
    stamp, rows = read_csv(str(tmp_path / "al" / "alpha.csv"))
    assert len(rows) == 80
    obj = JointObjective(1.0, 0.1)
    for r in rows:
        expected = alpha_opt_closed_form(obj, r["shaping"], float(r["p"]))
        assert math.isclose(float(r["alpha_opt"]), expected, rel_tol=1e-5, abs_tol=1e-6)


def test_mc_verify_unbiased_flag(tmp_path):
    assert run(tmp_path, "mc-verify", {"family": "ips"}, "mc", ["--threads", "2"]) == 0
    res = load(tmp_path, "mc", "mc_report.json")["result"]
    assert res["unbiased_within_4se"] is True
    assert res["replicas"] == 200_000


def test_sweep_has_twenty_rows(tmp_path):
    cfg = {"M": 12, "N": 15, "epochs": 1, "seeds": 2}
    assert run(tmp_path, "sweep", cfg, "sw") == 0
    _, rows = read_csv(str(tmp_path / "sw" / "sweep.csv"))
    assert len(rows) == 20
    assert list(rows[0]) == ["shaping", "w1", "w2", "auc_mean", "auc_std", "ndcg_mean", "ndcg_std", "seeds"]
    assert {r["shaping"] for r in rows} == {"identity", "sine", "log1p", "tanh"}


def test_report_grid(tmp_path):
    assert run(tmp_path, "report", {"p_num": 5, "alpha_num": 3, "shapings": ["log1p"]}, "rp") == 0
    _, rows = read_csv(str(tmp_path / "rp" / "surfaces.csv"))
    assert len(rows) == 15
    assert {float(r["alpha"]) for r in rows} == {0.0, 0.5, 1.0}


def test_byte_identical_reruns(tmp_path):
    assert run(tmp_path, "alpha", {"p_num": 7}, "a1") == 0
    assert run(tmp_path, "alpha", {"p_num": 7}, "a2") == 0
    assert (tmp_path / "a1" / "alpha.csv").read_bytes() == (tmp_path / "a2" / "alpha.csv").read_bytes()


def test_unknown_key_exit_1(tmp_path, capsys):
    assert run(tmp_path, "alpha", {"bogus": 1}, "bad") == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "bogus" in err["message"]


def test_domain_error_exit_1(tmp_path, capsys):
    assert run(tmp_path, "alpha", {"w2": 0.0}, "bad") == 1
    assert json.loads(capsys.readouterr().err)["exit_code"] == 1


def test_missing_file_exit_2(tmp_path, capsys):
    assert main(["alpha", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_env_overrides_out(tmp_path, monkeypatch):
    monkeypatch.setenv("MNAR_DEBIAS_OUT", str(tmp_path / "env_out"))
    assert main(["report"]) == 0
    assert (tmp_path / "env_out" / "surfaces.csv").exists()
