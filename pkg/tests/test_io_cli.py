import csv
import json
import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from martpost.cli import main
from martpost.config import CopulaConfig, InitialDensity
from martpost.density import eval_cdf_conditionals, eval_density, fit_multivariate
from martpost.io import DataError, load_fit, read_csv, save_fit, write_csv
from martpost.regression import eval_class_prob, eval_conditional_density, fit_classifier, fit_regression
from martpost.special import AlphaSchedule

from . import oracles


def write_data(path, header, data):
    write_csv(path, header, [tuple(map(float, row)) for row in np.atleast_2d(data)])
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def gmm_csv(tmp_path):
    return write_data(tmp_path / "gmm.csv", ["y"], oracles.gmm_sample(60, 0)[:, None])


@pytest.fixture
def reg_csv(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 2))
    y = np.sin(x[:, 0]) + 0.3 * rng.normal(size=40)
    lab = (x[:, 1] > 0).astype(float)
    return write_data(tmp_path / "reg.csv", ["x1", "x2", "y", "c"], np.c_[x, y, lab])


# -- fit documents ---------------------------------------------------------


def test_density_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    Y = rng.normal(size=(30, 2))
    cfg = CopulaConfig(rho=(0.7, 0.8), permutations=3, alpha=AlphaSchedule("scaled_harmonic", 0.39),
                       init=InitialDensity("user_normal", (0.5, -1.0), (2.0, 1.5)))
    fit = fit_multivariate(Y, cfg, ordering=[1, 0], names=["a", "b"])
    save_fit(tmp_path / "f.json", fit, ["a", "b"])
    back, cols = load_fit(tmp_path / "f.json")
    assert cols == ["a", "b"]
    probes = rng.normal(size=(20, 2))
    assert_array_equal(eval_density(back, probes), eval_density(fit, probes))
    assert_array_equal(eval_cdf_conditionals(back, probes), eval_cdf_conditionals(fit, probes))
    assert back.config == fit.config


@pytest.mark.parametrize("mode", ["conditional", "joint"])
def test_regression_and_classifier_round_trip(tmp_path, mode):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(25, 2))
    y = x[:, 0] + 0.2 * rng.normal(size=25)
    cfg = CopulaConfig(rho=0.7, rho_y=0.6, init=InitialDensity(beta=(0.3, -0.1)) if mode == "conditional" else InitialDensity())
    reg = fit_regression(x, y, cfg, mode)
    save_fit(tmp_path / "r.json", reg)
    back, _ = load_fit(tmp_path / "r.json")
    xp, yp = rng.normal(size=(20, 2)), rng.normal(size=20)
    assert_array_equal(eval_conditional_density(back, xp, yp), eval_conditional_density(reg, xp, yp))
    cls = fit_classifier(x, (y > 0).astype(int), cfg, mode)
    save_fit(tmp_path / "c.json", cls)
    back, _ = load_fit(tmp_path / "c.json")
    assert_array_equal(eval_class_prob(back, xp), eval_class_prob(cls, xp))


def test_fit_document_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError):
        load_fit(bad)
    bad.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(DataError):
        load_fit(bad)


# -- CSV ingestion -----------------------------------------------------------


@pytest.mark.parametrize("body, message", [
    ("a,b\n1,2\n3\n", "line 3: expected 2 fields"),
    ("a,b\n1,2\n3,x\n", "line 3, column 'b': non-numeric"),
    ("a,b\n1,nan\n", "line 2, column 'b': non-finite"),
    ("a,b\ninf,1\n", "line 2, column 'a': non-finite"),
    ("a,a\n1,2\n", "duplicate"),
    ("", "header row is required"),
])
def test_csv_errors_are_located(tmp_path, body, message):
    p = tmp_path / "d.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=message):
        read_csv(p)


def test_csv_writes_17_digits(tmp_path):
    write_csv(tmp_path / "o.csv", ["i", "v"], [(1, 0.1), (2, 1 / 3)])
    rows = read_rows(tmp_path / "o.csv")
    assert rows[1] == ["1", "0.10000000000000001"]
    assert float(rows[2][1]) == 1 / 3


# -- command line ------------------------------------------------------------


def test_fit_happy_path_and_manifest(tmp_path, gmm_csv):
    out = tmp_path / "fit"
    assert main(["fit", "--input", gmm_csv, "--cols", "y", "--rho", "0.8", "--perms", "10", "--seed", "42",
                 "--out", str(out)]) == 0
    fit, cols = load_fit(out / "fit.json")
    assert fit.v_history.shape[0] == 10 and cols == ["y"]
    score = json.loads((out / "score.json").read_text())
    assert len(score["permutation_seeds"]) == 10 and score["rho"] == [0.8]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "fit" and manifest["master_seed"] == 42
    resolved = manifest["config"]["resolved"]
    assert resolved["permutations"] == 10 and resolved["alpha"]["form"] == "paper_default"
    assert "version" in manifest and "total_s" in manifest["timings"]
    assert [f for f in os.listdir(out) if f.startswith("manifest")] == ["manifest.json"]


def test_fit_auto_rho_writes_trace(tmp_path, gmm_csv):
    out = tmp_path / "auto"
    assert main(["fit", "--input", gmm_csv, "--rho", "auto", "--perms", "3", "--out", str(out)]) == 0
    rows = read_rows(out / "optimization_trace.csv")
    assert rows[0] == ["iteration", "coordinate", "rho", "score"] and len(rows) > 5
    assert json.loads((out / "score.json").read_text())["rho_selected"] is True


def test_fit_regression_and_classifier_modes(tmp_path, reg_csv):
    out = tmp_path / "reg"
    assert main(["fit", "--input", reg_csv, "--cols", "x1,x2", "--response", "y", "--mode", "conditional",
                 "--rho", "0.7", "--out", str(out)]) == 0
    fit, cols = load_fit(out / "fit.json")
    assert fit.mode == "conditional" and fit.d == 2 and cols == ["x1", "x2", "y"]
    out = tmp_path / "cls"
    assert main(["fit", "--input", reg_csv, "--cols", "x1,x2", "--label", "c", "--rho", "0.7",
                 "--out", str(out)]) == 0
    assert load_fit(out / "fit.json")[0].labels.sum() > 0


def test_config_precedence(tmp_path, gmm_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rho": "0.6", "perms": 4, "seed": 5}))
    out = tmp_path / "p"
    assert main(["fit", "--input", gmm_csv, "--config", str(cfg), "--perms", "2", "--out", str(out)]) == 0
    resolved = json.loads((out / "manifest.json").read_text())["config"]["resolved"]
    assert resolved["rho"] == [0.6] and resolved["permutations"] == 2 and resolved["seed"] == 5
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["fit", "--input", gmm_csv, "--config", str(cfg), "--out", str(out)]) == 1


def test_exit_codes(tmp_path, gmm_csv):
    out = str(tmp_path / "x")
    assert main(["fit", "--input", gmm_csv, "--rho", "1.5", "--out", out]) == 1
    assert main(["fit"]) == 1
    assert main(["resample", "--fit", "f.json", "--forward", "-1"]) == 1
    assert main(["fit", "--input", str(tmp_path / "missing.csv"), "--out", out]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("y\n1\nzz\n")
    assert main(["fit", "--input", str(bad), "--out", out]) == 2
    const = write_data(tmp_path / "const.csv", ["a", "b"], np.c_[np.arange(5.0), np.ones(5)])
    assert main(["fit", "--input", const, "--out", out]) == 2
    assert main(["bootstrap", "--input", gmm_csv, "--statistic", "modes", "--out", out]) == 2


def test_resample_outputs(tmp_path, gmm_csv):
    fit_dir = tmp_path / "fit"
    main(["fit", "--input", gmm_csv, "--rho", "0.8", "--perms", "2", "--out", str(fit_dir)])
    out = tmp_path / "rs"
    assert main(["resample", "--fit", str(fit_dir / "fit.json"), "--forward", "0", "--samples", "3",
                 "--grid-size", "11", "--out", str(out)]) == 0
    rows = read_rows(out / "ensemble.csv")[1:]
    dens = np.array([float(r[2]) for r in rows]).reshape(3, 11)
    assert_array_equal(dens, np.broadcast_to(dens[0], (3, 11)))
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["density"]) == {"mean", "q025", "q975"} and len(summary["density"]["mean"]) == 11
    out = tmp_path / "tr"
    assert main(["resample", "--fit", str(fit_dir / "fit.json"), "--forward", "100", "--samples", "2",
                 "--trace", "--stride", "50", "--statistic", "quantile:0.1", "--out", str(out)]) == 0
    trace = read_rows(out / "trace.csv")
    assert trace[0][:4] == ["trajectory", "step", "l1_p", "l1_P"] and len(trace) == 1 + 2 * 3
    assert float(trace[1][2]) == 0.0
    stats_rows = read_rows(out / "statistics.csv")
    assert len(stats_rows) == 3 and stats_rows[1][1] == "quantile:0.1"


def test_resample_reruns_byte_identical(tmp_path, reg_csv, monkeypatch):
    fit_dir = tmp_path / "fit"
    main(["fit", "--input", reg_csv, "--cols", "x1,x2", "--response", "y", "--rho", "0.7", "--out", str(fit_dir)])
    outputs = []
    for threads in ("1", "8"):
        monkeypatch.setenv("MARTPOST_THREADS", threads)
        out = tmp_path / f"t{threads}"
        assert main(["resample", "--fit", str(fit_dir / "fit.json"), "--forward", "50", "--samples", "300",
                     "--grid-size", "9", "--seed", "3", "--out", str(out)]) == 0
        outputs.append((out / "ensemble.csv").read_bytes())
    assert outputs[0] == outputs[1]
    out = tmp_path / "again"
    main(["resample", "--fit", str(fit_dir / "fit.json"), "--forward", "50", "--samples", "300",
          "--grid-size", "9", "--seed", "3", "--threads", "3", "--out", str(out)])
    assert (out / "ensemble.csv").read_bytes() == outputs[0]


def test_bootstrap_command(tmp_path):
    data = write_data(tmp_path / "two.csv", ["y"], np.array([[0.0], [1.0]]))
    runs = []
    for k in range(2):
        out = tmp_path / f"b{k}"
        assert main(["bootstrap", "--input", data, "--kind", "bayes", "--samples", "1", "--seed", "9",
                     "--out", str(out)]) == 0
        runs.append((out / "bootstrap.csv").read_bytes())
    assert runs[0] == runs[1]
    out = tmp_path / "big"
    assert main(["bootstrap", "--input", data, "--samples", "2000", "--out", str(out)]) == 0
    vals = np.array([float(r[1]) for r in read_rows(out / "bootstrap.csv")[1:]])
    assert vals.min() >= 0 and vals.max() <= 1 and abs(vals.mean() - 0.5) < 0.03


def test_diagnose_command(tmp_path, gmm_csv):
    fit_dir = tmp_path / "fit"
    main(["fit", "--input", gmm_csv, "--rho", "0.8", "--perms", "2", "--out", str(fit_dir)])
    out = tmp_path / "diag"
    assert main(["diagnose", "--fit", str(fit_dir / "fit.json"), "--suite", "martingale,normalization",
                 "--out", str(out)]) == 0
    report = json.loads((out / "diagnostics.json").read_text())
    assert report["passed"] and [r["check"] for r in report["reports"]] == ["martingale_quadrature", "normalization", "cdf_validity"]


def test_example_normal_default(tmp_path):
    out = tmp_path / "ex"
    assert main(["example-normal", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and report["posterior_mean"] == pytest.approx(1.84, abs=1e-12)
    assert len(read_rows(out / "paths.csv")) == 1 + 20 * 1001


def test_example_normal_one_step_variance(tmp_path):
    out = tmp_path / "one"
    assert main(["example-normal", "--forward", "1", "--samples", "100000", "--paths", "0", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    expected = 1 / 11 - 1 / 12
    assert abs(report["terminal_var"] / expected - 1) < 0.02


def test_example_normal_from_prior(tmp_path):
    out = tmp_path / "prior"
    assert main(["example-normal", "--n", "0", "--forward", "2000", "--samples", "4000", "--paths", "0",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["posterior_mean"] == 0.0 and report["posterior_var"] == 1.0
    assert abs(report["terminal_mean"]) < 3 * np.sqrt(1 / 4000)
    assert abs(report["terminal_var"] - (1 - 1 / 2001)) < 0.07
