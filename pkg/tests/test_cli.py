import csv
import json
import subprocess
import sys

import pytest

from llot.cli import main


def run(argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run(["simulate", "--out", out, "--m", 30, "--n", 40, "--d", 5,
                "--extra-genes", 2, "--seed", 7]) == 0
    return out


def fit_args(data, out, *extra):
    return ["fit", "--spatial", data / "spatial.csv", "--coords", data / "coords.csv",
            "--scrna", data / "scrna.csv", "--celltypes", data / "celltypes.csv",
            "--config", data / "config.toml", "--iters", 3, "--out", out, *extra]


@pytest.fixture(scope="module")
def model_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run(fit_args(dataset, out)) == 0
    return out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_files(dataset):
    for name in ("spatial.csv", "coords.csv", "scrna.csv", "celltypes.csv", "truth.json",
                 "manifest.json", "config.toml"):
        assert (dataset / name).exists()
    assert json.loads((dataset / "manifest.json").read_text())["command"] == "simulate"


def test_simulate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run(["simulate", "--out", tmp_path / name, "--m", 10, "--n", 12, "--d", 3, "--seed", 2]) == 0
    for f in ("spatial.csv", "scrna.csv", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_invalid_spec_exits_2(tmp_path, capsys):
    assert run(["simulate", "--out", tmp_path, "--d", 1]) == 2
    assert "d must be" in capsys.readouterr().err


def test_missing_coords_exits_2(dataset, tmp_path, capsys):
    code = run(["fit", "--spatial", dataset / "spatial.csv", "--scrna", dataset / "scrna.csv",
                "--out", tmp_path / "m"])
    assert code == 2
    err = capsys.readouterr().err
    assert "--coords" in err and "usage" in err


def test_fit_writes_model_directory(model_dir):
    assert (model_dir / "coupling.bin").read_bytes()[:8] == b"LLOTCPL1"
    manifest = json.loads((model_dir / "manifest.json").read_text())
    run_info = manifest["run"]
    assert run_info["command"] == "fit"
    assert run_info["resolved_config"]["solver"]["outer_iterations"] == 3
    assert run_info["resolved_config"]["preprocessing"]["log_transform"] is False
    assert len(run_info["inputs"]) == 4 and all(len(i["hash"]) == 16 for i in run_info["inputs"])
    assert (model_dir / "platform_map.csv").exists() and (model_dir / "graph_edges.csv").exists()


def test_fit_rerun_is_deterministic(dataset, model_dir, tmp_path):
    assert run(fit_args(dataset, tmp_path / "again")) == 0
    a = json.loads((model_dir / "manifest.json").read_text())["run"]["inputs"]
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())["run"]["inputs"]
    assert [(x["size"], x["hash"]) for x in a] == [(x["size"], x["hash"]) for x in b]
    assert (model_dir / "coupling.bin").read_bytes() == (tmp_path / "again" / "coupling.bin").read_bytes()


def test_flags_override_toml(dataset, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("outer_iterations = 2\nknn_k = 4\n[preprocess]\nlog_transform = false\n")
    args = fit_args(dataset, tmp_path / "m")
    args[args.index("--config") + 1] = cfg
    assert run(args) == 0  # --iters 3 on the command line wins
    solver = json.loads((tmp_path / "m" / "manifest.json").read_text())["run"]["resolved_config"]["solver"]
    assert solver["outer_iterations"] == 3 and solver["knn_k"] == 4


def test_bad_toml_key_exits_2(dataset, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("bogus = 1\n")
    args = fit_args(dataset, tmp_path / "m")
    args[args.index("--config") + 1] = cfg
    assert run(args) == 2


def test_log1p_on_negative_values_is_data_error(dataset, tmp_path, capsys):
    args = fit_args(dataset, tmp_path / "m", "--log1p")
    assert run(args) == 3


def test_missing_input_file_is_data_error(dataset, tmp_path, capsys):
    args = fit_args(dataset, tmp_path / "m")
    args[args.index("--scrna") + 1] = tmp_path / "absent.csv"
    assert run(args) == 3
    assert "absent.csv" in capsys.readouterr().err


def test_predict(dataset, model_dir, tmp_path):
    out = tmp_path / "pred.csv"
    assert run(["predict", "--model", model_dir, "--scrna", dataset / "scrna.csv",
                "--genes", "G000,X001", "--out", out, "--svg", tmp_path / "svg"]) == 0
    table = rows(out)
    assert table[0] == ["spot_id", "G000", "X001"] and len(table) == 31
    assert (tmp_path / "svg" / "X001.svg").exists()
    assert json.loads((tmp_path / "pred.csv.manifest.json").read_text())["command"] == "predict"


def test_predict_unknown_gene_exits_3(dataset, model_dir, tmp_path, capsys):
    code = run(["predict", "--model", model_dir, "--scrna", dataset / "scrna.csv",
                "--genes", "G000,eve", "--out", tmp_path / "p.csv"])
    assert code == 3
    assert "eve" in capsys.readouterr().err


def test_corrupt_model_exits_3(dataset, model_dir, tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    for f in model_dir.iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    raw = (bad / "coupling.bin").read_bytes()
    (bad / "coupling.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    code = run(["predict", "--model", bad, "--scrna", dataset / "scrna.csv",
                "--genes", "G000", "--out", tmp_path / "p.csv"])
    assert code == 3
    assert "coupling.bin" in capsys.readouterr().err


def test_locate_long_and_per_cell(model_dir, tmp_path):
    out = tmp_path / "post.csv"
    assert run(["locate", "--model", model_dir, "--cells", "all", "--out", out, "--top", 3]) == 0
    table = rows(out)
    assert table[0] == ["cell_id", "spot_id", "probability", "rank"] and len(table) == 1 + 40 * 3
    per = tmp_path / "per"
    assert run(["locate", "--model", model_dir, "--cells", "c0000,c0003", "--out", per,
                "--format", "per-cell"]) == 0
    assert sorted(p.name for p in per.glob("*.csv")) == ["c0000.csv", "c0003.csv"]
    assert len(rows(per / "c0000.csv")) == 31


def test_locate_unknown_cell_exits_3(model_dir, tmp_path, capsys):
    assert run(["locate", "--model", model_dir, "--cells", "c0000,zz9", "--out", tmp_path / "x.csv"]) == 3
    assert "zz9" in capsys.readouterr().err


def test_deconvolve(dataset, model_dir, tmp_path):
    out = tmp_path / "mix.csv"
    assert run(["deconvolve", "--model", model_dir, "--scrna", dataset / "scrna.csv",
                "--celltypes", dataset / "celltypes.csv", "--out", out]) == 0
    table = rows(out)
    assert table[0][0] == "spot_id" and len(table) == 31
    for r in table[1:]:
        assert sum(float(v) for v in r[1:]) == pytest.approx(1.0, abs=1e-9)


def cv_args(data, out, *extra):
    return ["cv", "--spatial", data / "spatial.csv", "--coords", data / "coords.csv",
            "--scrna", data / "scrna.csv", "--config", data / "config.toml", "--iters", 3,
            "--out", out, *extra]


def test_cv_loocv_with_ablation(dataset, tmp_path, capsys):
    assert run(cv_args(dataset, tmp_path, "--mode", "loocv", "--ablation")) == 0
    assert len(rows(tmp_path / "report.csv")) == 6
    assert len(rows(tmp_path / "ablation_report.csv")) == 6
    assert json.loads((tmp_path / "ablation_report.json").read_text())["label"] == "ablation"
    assert "median PCC" in capsys.readouterr().out


def test_cv_kfold_requires_folds(dataset, tmp_path):
    assert run(cv_args(dataset, tmp_path, "--mode", "kfold")) == 2


def test_cv_failed_folds_exit_5(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("LLOT_MEMORY_BUDGET_GB", "1e-12")
    assert run(cv_args(dataset, tmp_path, "--mode", "kfold", "--folds", 2)) == 5
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["failed_folds"]) == 2


def test_fit_memory_budget_exits_4(dataset, tmp_path):
    assert run(fit_args(dataset, tmp_path / "m", "--memory-budget", "1e-12")) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "llot", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("llot ")
