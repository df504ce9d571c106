import csv
import json

import numpy as np
import pytest

from mtcov.cli import main
from mtcov.cv import biased_holdout, save_coefficients
from mtcov.data import load_edgelist, save_mask
from mtcov.em import RescaleCoefficients


@pytest.fixture(scope="module")
def sample(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--preset", "G1", "--n", "80", "--match", "0.7", "--seed", "1", "--out", str(out)]) == 0
    return out


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_generate_writes_all_files(sample):
    for name in ("edges.txt", "attributes.csv", "truth.json", "manifest.json"):
        assert (sample / name).exists()
    g = load_edgelist(sample / "edges.txt")
    assert g.n_layers == 2
    m = manifest(sample)
    assert m["seeds"]["generation"] == 1 and m["command"][1] == "generate"


def test_generate_g3_small_and_byte_identical(tmp_path):
    for k in range(2):
        assert main(["generate", "--preset", "G3", "--n", "200", "--seed", "3", "--out", str(tmp_path / str(k))]) == 0
    assert (tmp_path / "0" / "truth.json").read_bytes() == (tmp_path / "1" / "truth.json").read_bytes()
    assert load_edgelist(tmp_path / "0" / "edges.txt").n_layers == 4


def test_generate_from_spec_file(tmp_path, sample):
    spec = json.loads((sample / "truth.json").read_text())["spec"]
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["generate", "--spec-file", str(tmp_path / "spec.json"), "--seed", "1", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "edges.txt").read_text() == (sample / "edges.txt").read_text()
    assert str(tmp_path / "spec.json") in manifest(tmp_path / "o")["inputs"]


def fit_args(sample, out, *extra):
    return [
        "fit",
        "--edges", str(sample / "edges.txt"),
        "--attributes", str(sample / "attributes.csv"),
        "--communities", "2",
        "--restarts", "2",
        "--out", str(out),
        *extra,
    ]


def test_fit_writes_params_and_manifest(sample, tmp_path, capsys):
    assert main(fit_args(sample, tmp_path, "--gamma", "0.7")) == 0
    for name in ("U.csv", "V.csv", "W.csv", "beta.csv", "fit.json", "manifest.json"):
        assert (tmp_path / name).exists()
    meta = json.loads((tmp_path / "fit.json").read_text())
    assert meta["config"]["gamma"] == 0.7
    m = manifest(tmp_path)
    assert set(m["inputs"]) == {str(sample / "edges.txt"), str(sample / "attributes.csv")}
    assert len(m["inputs"][str(sample / "edges.txt")]) == 64
    assert "converged=" in capsys.readouterr().out


def test_fit_is_deterministic(sample, tmp_path):
    main(fit_args(sample, tmp_path / "a", "--seed", "4"))
    main(fit_args(sample, tmp_path / "b", "--seed", "4"))
    assert (tmp_path / "a" / "U.csv").read_text() == (tmp_path / "b" / "U.csv").read_text()


def test_fit_structure_only_without_attributes(sample, tmp_path):
    args = ["fit", "--edges", str(sample / "edges.txt"), "--communities", "2", "--gamma", "0", "--out", str(tmp_path)]
    assert main(args) == 0
    assert (tmp_path / "beta.csv").read_text() == ""


def test_fit_missing_attributes_is_usage_error(sample, tmp_path):
    args = ["fit", "--edges", str(sample / "edges.txt"), "--communities", "2", "--gamma", "0.5", "--out", str(tmp_path)]
    with pytest.raises(SystemExit) as info:
        main(args)
    assert info.value.code == 2


def test_fit_bad_input_exits_nonzero(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("a b\n")
    assert main(["fit", "--edges", str(tmp_path / "bad.txt"), "--communities", "2", "--gamma", "0", "--out", str(tmp_path / "o")]) == 1
    assert ":1:" in capsys.readouterr().err


def test_fit_with_holdout_and_rescaling(sample, tmp_path):
    save_coefficients(RescaleCoefficients.social_support_defaults(), tmp_path / "c.json")
    args = fit_args(sample, tmp_path / "o", "--holdout-fraction", "0.2", "--rescale", str(tmp_path / "c.json"))
    assert main(args) == 0
    mask = json.loads((tmp_path / "o" / "mask.json").read_text())
    assert len(mask["triples"]) == round(0.2 * 80 * 80 * 2)
    assert manifest(tmp_path / "o")["config"]["rescaling"]["cG_E"] == -6.158


def test_predict_and_evaluate(sample, tmp_path, capsys):
    main(fit_args(sample, tmp_path / "fit", "--holdout-fraction", "0.2", "--gamma", "0.7"))
    mask = tmp_path / "fit" / "mask.json"
    assert main(["predict", "--params", str(tmp_path / "fit"), "--mask", str(mask), "--out", str(tmp_path / "p")]) == 0
    rows = list(csv.reader(open(tmp_path / "p" / "scores.csv")))
    assert rows[0] == ["source", "target", "layer", "expected"] and len(rows) == 1 + round(0.2 * 80 * 80 * 2)
    assert (tmp_path / "p" / "attributes.csv").exists()

    args = [
        "evaluate",
        "--params", str(tmp_path / "fit"),
        "--truth", str(sample / "truth.json"),
        "--edges", str(sample / "edges.txt"),
        "--attributes", str(sample / "attributes.csv"),
        "--mask", str(mask),
        "--out", str(tmp_path / "e"),
    ]
    assert main(args) == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    for k in ("f1", "jaccard", "cs", "l1", "auc", "accuracy"):
        assert 0.0 <= rep[k] <= 1.0
    assert len(rep["entropy"]) >= 1 and rep["baselines"]["rp"] == 0.5
    assert "auc" in capsys.readouterr().out


def test_evaluate_perfect_recovery(sample, tmp_path):
    truth = json.loads((sample / "truth.json").read_text())
    U0 = np.array(truth["U0"], float)
    out = tmp_path / "params"
    out.mkdir()
    np.savetxt(out / "U.csv", U0, delimiter=",")
    np.savetxt(out / "V.csv", U0, delimiter=",")
    (out / "beta.csv").write_text("")
    (out / "W.csv").write_text("# layer 0\n1,0\n0,1\n")
    assert main(["evaluate", "--params", str(out), "--truth", str(sample / "truth.json"), "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["f1"] == rep["jaccard"] == 1.0 and rep["cs"] == pytest.approx(1.0) and rep["l1"] == 0.0


def test_evaluate_biased_mask_reports_auc_only(sample, tmp_path):
    main(fit_args(sample, tmp_path / "fit", "--gamma", "0.5"))
    g = load_edgelist(sample / "edges.txt")
    save_mask(biased_holdout(g, 0.05, 0.03, 0), tmp_path / "m.json")
    args = [
        "evaluate",
        "--params", str(tmp_path / "fit"),
        "--edges", str(sample / "edges.txt"),
        "--attributes", str(sample / "attributes.csv"),
        "--mask", str(tmp_path / "m.json"),
        "--metrics", "auc,accuracy",
        "--out", str(tmp_path / "e"),
    ]
    assert main(args) == 0
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert rep["auc"] is not None and rep["accuracy"] is None and rep["f1"] is None


def test_evaluate_shape_mismatch(sample, tmp_path):
    out = tmp_path / "params"
    out.mkdir()
    np.savetxt(out / "U.csv", np.ones((3, 1)), delimiter=",")
    np.savetxt(out / "V.csv", np.ones((3, 1)), delimiter=",")
    (out / "beta.csv").write_text("")
    (out / "W.csv").write_text("# layer 0\n1\n")
    assert main(["evaluate", "--params", str(out), "--truth", str(sample / "truth.json"), "--out", str(tmp_path / "e")]) == 1


def test_cv_single_cell(sample, tmp_path, capsys):
    args = [
        "cv",
        "--edges", str(sample / "edges.txt"),
        "--attributes", str(sample / "attributes.csv"),
        "--communities", "2",
        "--gamma", "0.5",
        "--folds", "2",
        "--restarts", "1",
        "--max-iterations", "30",
        "--out", str(tmp_path),
    ]
    assert main(args) == 0
    rep = json.loads((tmp_path / "cv_report.json").read_text())
    assert rep["n_fits"] == 2 and rep["selected"] == {"C": 2, "gamma": 0.5}
    assert "C=2 gamma=0.5 auc=" in capsys.readouterr().out
    assert (tmp_path / "manifest.json").exists()


def test_cv_biased_and_defaults(sample, tmp_path):
    args = [
        "cv",
        "--edges", str(sample / "edges.txt"),
        "--attributes", str(sample / "attributes.csv"),
        "--gamma", "0.5",
        "--tpe", "0.03",
        "--restarts", "1",
        "--max-iterations", "20",
        "--out", str(tmp_path),
    ]
    assert main(args) == 0
    rep = json.loads((tmp_path / "cv_report.json").read_text())
    assert rep["grid"]["n_folds"] == 5 and rep["grid"]["tpe"] == 0.03
    assert rep["cells"][0]["acc_mean"] is None


def test_cv_partial_failure_exits_nonzero(sample, tmp_path, monkeypatch):
    from mtcov import cv

    real = cv.fit

    def flaky(graph, design, mask, config):
        if config.n_communities == 3:
            raise RuntimeError("boom")
        return real(graph, design, mask, config)

    monkeypatch.setattr(cv, "fit", flaky)
    args = [
        "cv",
        "--edges", str(sample / "edges.txt"),
        "--attributes", str(sample / "attributes.csv"),
        "--communities", "2,3",
        "--gamma", "0.5",
        "--folds", "2",
        "--restarts", "1",
        "--max-iterations", "10",
        "--out", str(tmp_path),
    ]
    assert main(args) == 1
    rep = json.loads((tmp_path / "cv_report.json").read_text())
    assert rep["selected"] == {"C": 2, "gamma": 0.5}


def test_benchmark_smoke(tmp_path):
    args = [
        "benchmark", "--preset", "G1", "--n", "60", "--match", "0.7",
        "--samples", "1", "--restarts", "1", "--max-iterations", "30", "--out", str(tmp_path),
    ]
    assert main(args) == 0
    rows = list(csv.reader(open(tmp_path / "table.csv")))
    assert rows[0] == ["method", "G1_f1", "G1_jaccard", "G1_cs", "G1_l1"]
    assert [r[0] for r in rows[1:]] == ["MTCOV-γ0", "MTCOV_0.7"]
    assert all("±" in c for c in rows[1][1:])
    assert (tmp_path / "samples.csv").exists() and (tmp_path / "manifest.json").exists()
