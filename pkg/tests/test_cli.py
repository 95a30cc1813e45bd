import csv
import json
import time
from pathlib import Path

import numpy as np
import yaml

from funboost.boost import FittedModel, Hyper
from funboost.cli import main
from funboost.data import DatasetSchema, ingest_dataset
from funboost.resample import cv_mstop, read_risk_matrix
from funboost.simulate import SCENARIO_STEP, ScenarioTruth, evaluate_metrics, generate_scenario, scenario_spec

ROOT = Path(__file__).resolve().parents[1]
SMALL_MODEL = {
    "family": "gaussian",
    "terms": {"mu": [{"kind": "functional_intercept"},
                     {"kind": "group_intercept", "covariates": ["g1"]},
                     {"kind": "group_intercept", "covariates": ["g2"]}],
              "sigma": [{"kind": "functional_intercept"}]},
}


def write_config(path, tree):
    path.write_text(yaml.safe_dump(tree))
    return str(path)


def simulate(tmp_path, name="sim", **kw):
    sim = {"scenario": "categorical", "N": 30, "G": 12, "level": "independent", "seed": 3}
    sim.update(kw)
    cfg = write_config(tmp_path / f"{name}.yaml", {"simulate": sim, "output": name})
    assert main(["simulate", "--config", cfg]) == 0
    return tmp_path / name


def fit_config(tmp_path, data, **extra):
    tree = {"data": str(data), "schema": {"categorical": ["g1", "g2"]}, "model": SMALL_MODEL,
            "hyper": {"step_length": 0.2, "mstop": 30}, "output": "fit"}
    tree.update(extra)
    return write_config(tmp_path / "fit.yaml", tree)


def read_matrix(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]])


def test_unknown_term_kind_exit_code(tmp_path, capsys):
    model = {"family": "gaussian", "terms": {"mu": [{"kind": "wiggly"}]}}
    cfg = write_config(tmp_path / "c.yaml", {"model": model, "data": "x.csv", "output": "o"})
    assert main(["fit", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "model.terms.mu[0]" in err and "wiggly" in err


def test_folds_one_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", {"model": SMALL_MODEL, "resampling": {"folds": 1},
                                             "data": "x.csv", "output": "o"})
    assert main(["cv", "--config", cfg]) == 2
    assert "resampling.folds" in capsys.readouterr().err


def test_missing_data_is_data_error(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", {"model": SMALL_MODEL, "data": "nope.csv", "output": "o"})
    assert main(["fit", "--config", cfg]) == 3


def test_unknown_top_level_key(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", {"modle": SMALL_MODEL})
    assert main(["fit", "--config", cfg]) == 2
    assert "modle" in capsys.readouterr().err


def test_simulate_is_byte_identical(tmp_path):
    a = simulate(tmp_path, "a")
    b = simulate(tmp_path, "b")
    for name in ("data.csv", "truth.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_ingest_matches_manifest(tmp_path):
    out = simulate(tmp_path)
    man = json.loads((out / "manifest.json").read_text())
    data = ingest_dataset(out / "data.csv", DatasetSchema.from_dict(man["schema"]))
    assert data.response.shape == (man["N"], man["G"])
    _, truth = generate_scenario("categorical", 30, 12, "independent", seed=3)
    np.testing.assert_allclose(ScenarioTruth.load(out / "truth.json").predictor(data), truth.H, atol=1e-12)


def test_fit_predict_roundtrip(tmp_path):
    out = simulate(tmp_path)
    cfg = fit_config(tmp_path, out / "data.csv")
    assert main(["fit", "--config", cfg]) == 0
    assert main(["predict", "--config", cfg, "--model", str(tmp_path / "fit" / "model.json"),
                 "--out", str(tmp_path / "pred")]) == 0
    model = FittedModel.load(tmp_path / "fit" / "model.json")
    data = ingest_dataset(out / "data.csv", {"categorical": ["g1", "g2"]})
    ref = model.predict(data)
    for p in ("mu", "sigma"):
        got = read_matrix(tmp_path / "pred" / f"param_{p}.csv")
        assert np.max(np.abs(got - ref["params"][p])) < 1e-10
    assert (tmp_path / "fit" / "risk.csv").exists()
    assert (tmp_path / "fit" / "surfaces" / "mu__functional_intercept.csv").exists()


def test_fit_is_byte_identical(tmp_path):
    out = simulate(tmp_path)
    cfg = fit_config(tmp_path, out / "data.csv")
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "f1")]) == 0
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "f2")]) == 0
    for name in ("model.json", "risk.csv"):
        assert (tmp_path / "f1" / name).read_bytes() == (tmp_path / "f2" / name).read_bytes()


def test_fit_with_bands(tmp_path):
    out = simulate(tmp_path)
    cfg = fit_config(tmp_path, out / "data.csv", bands={"n_boot": 50, "level": 0.9},
                     resampling={"method": "bootstrap", "folds": 3, "seed": 1})
    assert main(["fit", "--config", cfg]) == 0
    meta = json.loads((tmp_path / "fit" / "bands" / "bands.json").read_text())
    assert 0 <= meta["mstop"] <= 30 and meta["n_boot"] == 50
    with open(tmp_path / "fit" / "bands" / "mu__functional_intercept.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["lower"]) <= float(r["upper"]) for r in rows)


def test_cv_is_deterministic(tmp_path):
    out = simulate(tmp_path)
    cfg = fit_config(tmp_path, out / "data.csv", resampling={"method": "bootstrap", "folds": 4, "seed": 2})
    assert main(["cv", "--config", cfg, "--out", str(tmp_path / "c1")]) == 0
    assert main(["cv", "--config", cfg, "--out", str(tmp_path / "c2"), "--jobs", "2"]) == 0
    for name in ("cv_risk.csv", "cv.json", "cv_mean_risk.csv"):
        assert (tmp_path / "c1" / name).read_bytes() == (tmp_path / "c2" / name).read_bytes()
    R = read_risk_matrix(tmp_path / "c1" / "cv_risk.csv")
    assert R.shape == (4, 31)
    assert json.loads((tmp_path / "c1" / "cv.json").read_text())["mstop"] == int(np.argmin(R.mean(axis=0)))


def test_evaluate_truth_against_itself(tmp_path):
    out = simulate(tmp_path)
    truth = str(out / "truth.json")
    assert main(["evaluate", "--data", str(out / "data.csv"), "--model", truth, "--truth", truth,
                 "--out", str(tmp_path / "ev")]) == 0
    with open(tmp_path / "ev" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["metric"] == "mean_kld"
    assert all(float(r["value"]) == 0.0 for r in rows if r["status"] == "ok")


def test_evaluate_matches_in_process(tmp_path):
    out = simulate(tmp_path)
    cfg = fit_config(tmp_path, out / "data.csv")
    assert main(["fit", "--config", cfg]) == 0
    assert main(["evaluate", "--config", cfg, "--model", str(tmp_path / "fit" / "model.json"),
                 "--truth", str(out / "truth.json"), "--out", str(tmp_path / "ev")]) == 0
    with open(tmp_path / "ev" / "metrics.csv") as fh:
        got = list(csv.DictReader(fh))
    data = ingest_dataset(out / "data.csv", {"categorical": ["g1", "g2"]})
    ref = evaluate_metrics(FittedModel.load(tmp_path / "fit" / "model.json"),
                           ScenarioTruth.load(out / "truth.json"), data)
    assert len(got) == len(ref)
    for g, r in zip(got, ref):
        assert g["metric"] == r["metric"] and g["term"] == r["term"]
        if r["status"] == "ok":
            assert abs(float(g["value"]) - r["value"]) < 1e-12


def test_evaluate_family_mismatch(tmp_path):
    out = simulate(tmp_path)
    app = simulate(tmp_path, "app", scenario="application", N=20, G=15)
    code = main(["evaluate", "--data", str(out / "data.csv"), "--model", str(app / "truth.json"),
                 "--truth", str(out / "truth.json"), "--out", str(tmp_path / "ev")])
    assert code == 3


def test_za_gamma_template_end_to_end(tmp_path):
    start = time.perf_counter()
    sim = yaml.safe_load((ROOT / "configs" / "simulate_application.yaml").read_text())
    sim["output"] = str(tmp_path / "app")
    assert main(["simulate", "--config", write_config(tmp_path / "s.yaml", sim)]) == 0
    tmpl = str(ROOT / "configs" / "za_gamma_template.yaml")
    assert main(["fit", "--config", tmpl, "--data", str(tmp_path / "app" / "data.csv"),
                 "--out", str(tmp_path / "zfit")]) == 0
    model = FittedModel.load(tmp_path / "zfit" / "model.json")
    assert model.family.n_params == 3 and model.risk[-1] < model.risk[0]
    assert time.perf_counter() - start < 300


def test_cv_dependency_shortens_stopping():
    # bootstrap-selected stopping iteration on the categorical scenario, 20 seeds
    spec = scenario_spec("categorical")
    hyper = Hyper(step_length=SCENARIO_STEP, mstop=500)
    wins = 0
    for seed in range(20):
        m = {}
        for level in ("independent", "high_dependency"):
            data, _ = generate_scenario("categorical", 50, 50, level, seed=seed)
            m[level] = cv_mstop(data, spec, hyper, "bootstrap", 10, seed=seed)[2]
        wins += m["high_dependency"] < m["independent"]
    assert wins > 10
