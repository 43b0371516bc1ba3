"""End-to-end command tests run in process through main()."""

import numpy as np
import pytest

from cfassign import gnn
from cfassign import scenario as sc
from cfassign import training as tr
from cfassign.cli import main

TINY_INI = """\
[scenario]
n_aps = 3
grid_cols = 3
grid_rows = 1
n_users = 3
area_side = 60.0
train_samples = 32
test_samples = 8

[model]
n_layers = 1
hidden_width = 4
message_width = 3

[training]
learning_rate = 0.005
batch_size = 8
max_inner_iters = 30
convergence_window = 6
convergence_tol = 0.001
heldin_size = 8
eval_chunk = 8
max_outer_rounds = 2
"""


@pytest.fixture(scope="module")
def tiny_cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI)
    return str(path)


@pytest.fixture(scope="module")
def trained_run(tiny_cfg_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    code = main(["train", "--scenario", "custom", "--config", tiny_cfg_path,
                 "--seed", "1", "--out", str(out)])
    assert code == 0
    return out


def test_version_flag_exits_zero(capsys):
    assert main(["--version"]) == 0
    capsys.readouterr()


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["gen-data", "--scenario", "galactic"]) == 1
    assert main(["eval"]) == 1
    capsys.readouterr()


def test_gen_data_reproducible(tiny_cfg_path, tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out in (a, b):
        assert main(["gen-data", "--scenario", "custom", "--config",
                     tiny_cfg_path, "--seed", "7", "--out", str(out)]) == 0
    assert (a / "train.txt").read_bytes() == (b / "train.txt").read_bytes()
    assert (a / "test.txt").read_bytes() == (b / "test.txt").read_bytes()
    assert (a / "manifest.txt").read_text() == (b / "manifest.txt").read_text()
    assert "sha256" in (a / "manifest.txt").read_text()
    assert (a / "config.ini").exists() and (a / "VERSION").exists()
    assert main(["gen-data", "--scenario", "custom", "--config",
                 tiny_cfg_path, "--seed", "8", "--out", str(c)]) == 0
    assert (a / "train.txt").read_bytes() != (c / "train.txt").read_bytes()
    capsys.readouterr()


def test_gen_data_large_scenario_shape(tmp_path, capsys):
    ini = tmp_path / "large.ini"
    ini.write_text("[scenario]\ntrain_samples = 4\ntest_samples = 2\n")
    out = tmp_path / "out"
    assert main(["gen-data", "--scenario", "large", "--config", str(ini),
                 "--seed", "0", "--out", str(out)]) == 0
    ds = sc.load_dataset(str(out / "test.txt"))
    assert ds.scenario.n_aps == 20
    assert ds.scenario.n_users == 15
    capsys.readouterr()


def test_train_artifacts(trained_run, capsys):
    for name in ("metrics.csv", "model.txt", "config.ini", "VERSION",
                 "checkpoint_final.txt", "checkpoint_phase1.txt"):
        assert (trained_run / name).exists(), name
    metrics = tr.Metrics.from_csv(trained_run / "metrics.csv")
    assert len(metrics) > 0
    phases = metrics.column("phase")
    blocks = [phases[0]]
    for p in phases[1:]:
        if p != blocks[-1]:
            blocks.append(p)
    assert blocks == [p for p in tr.PHASES[:3] if p in blocks]
    _, _, meta = gnn.load_model(trained_run / "model.txt")
    assert meta["topology_rule"] == "full"
    capsys.readouterr()


def test_train_resume_bit_identical(tiny_cfg_path, trained_run, tmp_path,
                                    capsys):
    out2 = tmp_path / "resumed"
    ck = trained_run / "checkpoint_phase1.txt"
    assert main(["train", "--scenario", "custom", "--config", tiny_cfg_path,
                 "--seed", "1", "--out", str(out2),
                 "--resume", str(ck)]) == 0
    boundary = gnn.load_model(ck)[2]["iteration"]
    full = tr.Metrics.from_csv(trained_run / "metrics.csv")
    resumed = tr.Metrics.from_csv(out2 / "metrics.csv")
    tail = [r for r in full.records if r.iteration > boundary]
    assert resumed.records == tail
    capsys.readouterr()


def test_eval_prints_summary(tiny_cfg_path, trained_run, capsys):
    code = main(["eval", "--scenario", "custom", "--config", tiny_cfg_path,
                 "--seed", "1", "--model", str(trained_run / "model.txt")])
    assert code == 0
    text = capsys.readouterr().out
    assert "mean_binary_sum_rate=" in text
    assert "n_samples=8" in text


def test_eval_missing_model_is_runtime_error(tiny_cfg_path, tmp_path,
                                             capsys):
    code = main(["eval", "--scenario", "custom", "--config", tiny_cfg_path,
                 "--model", str(tmp_path / "nope.txt")])
    assert code == 2
    capsys.readouterr()


def _read_rows(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    return header, [dict(zip(header, line.split(","))) for line in lines[1:]]


def test_baseline_command(tiny_cfg_path, tmp_path, capsys):
    out = tmp_path / "base"
    assert main(["baseline", "--scenario", "custom", "--config",
                 tiny_cfg_path, "--seed", "1", "--out", str(out)]) == 0
    header, rows = _read_rows(out / "baselines.csv")
    assert header == ["method", "scenario", "n_samples", "mean_sum_rate",
                      "feasibility_rate", "available"]
    assert [r["method"] for r in rows] == ["exhaustive", "random", "gsd"]
    for r in rows:
        assert r["available"] == "yes"
        assert r["n_samples"] == "8"
        assert float(r["feasibility_rate"]) == 1.0
    assert float(rows[0]["mean_sum_rate"]) >= float(rows[2]["mean_sum_rate"])
    capsys.readouterr()


def test_baseline_budget_marks_unavailable(tiny_cfg_path, tmp_path, capsys):
    out = tmp_path / "base"
    assert main(["baseline", "--scenario", "custom", "--config",
                 tiny_cfg_path, "--seed", "1", "--out", str(out),
                 "--budget", "1"]) == 0
    _, rows = _read_rows(out / "baselines.csv")
    ex = [r for r in rows if r["method"] == "exhaustive"][0]
    assert ex["available"] == "no"
    assert np.isnan(float(ex["mean_sum_rate"]))
    capsys.readouterr()


def test_compare_command(tiny_cfg_path, trained_run, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--scenario", "custom", "--config",
                 tiny_cfg_path, "--seed", "1", "--out", str(out),
                 "--model", str(trained_run / "model.txt")]) == 0
    _, rows = _read_rows(out / "comparison.csv")
    assert [r["method"] for r in rows] == ["proposed", "exhaustive",
                                           "random", "gsd"]
    bound = float(rows[1]["mean_sum_rate"])
    assert float(rows[0]["mean_sum_rate"]) <= bound + 1e-9
    assert (out / "config.ini").exists()
    capsys.readouterr()


def test_viz_long_format(tmp_path, capsys):
    metrics = tr.Metrics()
    base = dict(lambda1=0.0, lambda2=0.0, nu1=0.0, nu2=0.0, train_f=1.0,
                test_f=2.0, conn_pen=0.1, disc_pen=0.2, test_conn_pen=0.3,
                test_disc_pen=0.4)
    metrics.append(tr.MetricsRecord(iteration=1, phase="unconstrained",
                                    **base))
    metrics.append(tr.MetricsRecord(iteration=2, phase="connection", **base))
    src = tmp_path / "metrics.csv"
    metrics.to_csv(src)
    out = tmp_path / "viz.csv"
    assert main(["viz", "--metrics", str(src), "--out", str(out)]) == 0
    header, rows = _read_rows(out)
    assert header == ["figure", "series", "iteration", "value"]
    figures = {r["figure"] for r in rows}
    assert figures == {"sum_rate", "connection_penalty",
                       "discreteness_penalty"}
    series = {(r["figure"], r["series"]) for r in rows}
    assert len(series) == 6
    assert len(rows) == 12
    sum_train = [r for r in rows if r["figure"] == "sum_rate"
                 and r["series"] == "train"]
    assert [r["value"] for r in sum_train] == ["1.0", "1.0"]
    capsys.readouterr()


def test_viz_empty_metrics(tmp_path, capsys):
    src = tmp_path / "metrics.csv"
    tr.Metrics().to_csv(src)
    out = tmp_path / "viz.csv"
    assert main(["viz", "--metrics", str(src), "--out", str(out)]) == 0
    assert out.read_text().strip() == "figure,series,iteration,value"
    capsys.readouterr()


def test_viz_malformed_metrics(tmp_path, capsys):
    src = tmp_path / "metrics.csv"
    src.write_text("bogus\n1,2\n")
    assert main(["viz", "--metrics", str(src),
                 "--out", str(tmp_path / "v.csv")]) == 2
    capsys.readouterr()
