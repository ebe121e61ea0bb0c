import csv
import hashlib
import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from condot.cli import main
from condot.data import load_csv
from condot.diffnet import forward_batch
from condot.trainer import TrainConfig, init_state, load_state

SMALL_CONFIG = {"hidden_widths": [6] * 6, "batch_size": 8, "mc_samples": 3, "iterations": 20,
                "history_every": 5}


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--n", "40", "--counts", "1,3", "--n-val", "6", "--n-test", "6",
                 "--eval-responses", "200", "--seed", "3", "--out", str(data)]) == 0
    cfg = root / "config.json"
    cfg.write_text(json.dumps(SMALL_CONFIG))
    run = root / "run"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    return root, data, cfg, run


def test_synth_is_reproducible(tmp_path):
    args = ["synth", "--n", "30", "--counts", "1,4", "--n-val", "5", "--n-test", "5",
            "--eval-responses", "10", "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("train.csv", "val.csv", "test.csv", "oracle.json", "manifest.json"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_synth_single_covariate(tmp_path):
    assert main(["synth", "--n", "1", "--n-val", "0", "--n-test", "0", "--out", str(tmp_path)]) == 0
    assert len(load_csv(tmp_path / "train.csv")) == 1
    assert not (tmp_path / "val.csv").exists()


def test_synth_default_held_out_sizes(tmp_path):
    assert main(["synth", "--n", "50", "--eval-responses", "3", "--out", str(tmp_path)]) == 0
    sets = [load_csv(tmp_path / f"{n}.csv") for n in ("train", "val", "test")]
    assert [len(s) for s in sets] == [50, 200, 200]
    keys = [g.x.tobytes() for s in sets for g in s.groups]
    assert len(set(keys)) == len(keys)


def test_train_outputs(workspace):
    _, _, _, run = workspace
    for name in ("model.ckpt", "history.csv", "pairs.json", "manifest.json"):
        assert (run / name).is_file()
    man = json.loads((run / "manifest.json").read_text())
    assert man["command"] == "train" and man["seed"] == 0
    assert len(man["dataset_fingerprint"]) == 64
    hist = read_rows(run / "history.csv")
    assert hist[0] == ["iteration", "fit", "reg", "loss"]
    assert [int(r[0]) for r in hist[1:]] == [0, 4, 9, 14, 19]


def test_train_is_byte_identical(workspace, tmp_path):
    _, data, cfg, run = workspace
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path)]) == 0
    assert digest(tmp_path / "model.ckpt") == digest(run / "model.ckpt")
    assert digest(tmp_path / "history.csv") == digest(run / "history.csv")


def test_train_zero_iterations(workspace, tmp_path):
    _, data, cfg, _ = workspace
    assert main(["train", "--config", str(cfg), "--data", str(data), "--iterations", "0",
                 "--out", str(tmp_path)]) == 0
    model = load_state(tmp_path / "model.ckpt")
    init = init_state(1, TrainConfig.from_dict(SMALL_CONFIG))
    assert model.state.iteration == 0
    assert model.state.gen.params.tobytes() == init.gen.params.tobytes()


@pytest.mark.parametrize("flag,check", [("no-reg", lambda c: c.lam == 0.0),
                                        ("no-smooth", lambda c: c.r1 == c.r2 == 0.0)])
def test_train_ablation_flags(workspace, tmp_path, flag, check):
    _, data, cfg, _ = workspace
    assert main(["train", "--config", str(cfg), "--data", str(data), "--ablation", flag,
                 "--iterations", "2", "--out", str(tmp_path)]) == 0
    assert check(load_state(tmp_path / "model.ckpt").config)


def test_generate_grid_single_sample(workspace, tmp_path, capsys):
    _, _, _, run = workspace
    out = tmp_path / "g.csv"
    assert main(["generate", "--checkpoint", str(run / "model.ckpt"), "--x", "0.4",
                 "--k", "1", "--mode", "grid", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["covariate", "x0", "y"]
    model = load_state(run / "model.ckpt")
    xn = model.normalizer.covariates(np.array([0.4]))
    expect = model.normalizer.unscale_responses(forward_batch(model.state.gen, np.array([[xn[0], 0.5]])))
    assert float(rows[1][2]) == expect[0]
    assert "monotone_fraction 1.000000" in capsys.readouterr().out


def test_generate_default_count_and_covariate_file(workspace, tmp_path):
    _, _, _, run = workspace
    cov = tmp_path / "x.csv"
    cov.write_text("x0\n0.1\n0.9\n")
    out = tmp_path / "g.csv"
    assert main(["generate", "--checkpoint", str(run / "model.ckpt"), "--covariates", str(cov),
                 "--out", str(out)]) == 0
    rows = read_rows(out)[1:]
    assert len(rows) == 20_000
    assert {r[0] for r in rows} == {"0", "1"}


def test_generate_dimension_mismatch(workspace, tmp_path):
    _, _, _, run = workspace
    assert main(["generate", "--checkpoint", str(run / "model.ckpt"), "--x", "0.1,0.2",
                 "--out", str(tmp_path / "g.csv")]) == 3


def test_eval_report(workspace, tmp_path):
    _, data, _, run = workspace
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data),
                 "--k", "300", "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    schema = json.loads(resources.files("condot").joinpath("schemas/metric_report.schema.json").read_text())
    jsonschema.validate(doc, schema)
    assert doc["n_covariates"] == 6
    dens = sorted((out / "densities").iterdir())
    assert len(dens) == 6
    rows = read_rows(dens[0])
    assert rows[0] == ["y", "generated", "truth"] and len(rows) == 513


def test_eval_trained_beats_untrained(workspace, tmp_path):
    _, data, cfg, _ = workspace
    config = dict(SMALL_CONFIG, hidden_widths=[16] * 6, batch_size=16, mc_samples=4,
                  iterations=1500, alpha=3e-3, beta=3e-3)
    (tmp_path / "c.json").write_text(json.dumps(config))
    scores = {}
    for iters in ("0", "1500"):
        run = tmp_path / f"r{iters}"
        assert main(["train", "--config", str(tmp_path / "c.json"), "--data", str(data),
                     "--iterations", iters, "--out", str(run)]) == 0
        assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data),
                     "--oracle", str(data / "oracle.json"), "--k", "500",
                     "--out", str(run / "ev")]) == 0
        doc = json.loads((run / "ev" / "report.json").read_text())
        scores[iters] = doc["aggregate"]["w2_squared"]["mean"]
        assert all(c["n_true"] == 10_000 for c in doc["per_covariate"])
    assert scores["1500"] < scores["0"]


def test_sweep(workspace, tmp_path, capsys):
    _, data, cfg, _ = workspace
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"h": [0.2, 0.2]}))
    assert main(["sweep", "--config", str(cfg), "--data", str(data), "--grid", str(grid),
                 "--k", "50", "--out", str(tmp_path / "sw")]) == 0
    assert 'best: {"h": 0.2}' in capsys.readouterr().out
    rows = read_rows(tmp_path / "sw" / "sweep.csv")
    assert len(rows) == 3 and rows[1][2] == rows[2][2]
    best = json.loads((tmp_path / "sw" / "best_config.json").read_text())
    assert best["h"] == 0.2 and best["iterations"] == SMALL_CONFIG["iterations"]


def test_single_file_is_split_by_frequency(tmp_path):
    rows = [["x", "y"]]
    rows += [["1.0", str(v)] for v in range(35)]
    rows += [["2.0", str(v)] for v in range(25)]
    rows += [[str(3.0 + k), "0.5"] for k in range(10)]
    (tmp_path / "data.csv").write_text("\n".join(",".join(r) for r in rows) + "\n")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(SMALL_CONFIG, iterations=3)))
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path), "--out", str(tmp_path / "r")]) == 0
    pairs = json.loads((tmp_path / "r" / "pairs.json").read_text())
    assert pairs["n"] == 10
    assert main(["eval", "--checkpoint", str(tmp_path / "r" / "model.ckpt"), "--data", str(tmp_path),
                 "--k", "20", "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "report.json").read_text())["n_covariates"] == 1


def test_scatter(tmp_path):
    lines = ["x,y"] + [f"0,{v}" for v in range(20)] + [f"1,{v + 2}" for v in range(20)] + ["2,0"]
    (tmp_path / "data.csv").write_text("\n".join(lines) + "\n")
    out = tmp_path / "s.csv"
    assert main(["scatter", "--data", str(tmp_path), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 2 and float(rows[1][1]) == pytest.approx(2.0)


def test_out_root_env(workspace, tmp_path, monkeypatch):
    _, data, cfg, _ = workspace
    monkeypatch.setenv("CONDOT_OUT_ROOT", str(tmp_path / "root"))
    assert main(["train", "--config", str(cfg), "--data", str(data), "--iterations", "1"]) == 0
    assert (tmp_path / "root" / "train" / "model.ckpt").is_file()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(workspace, tmp_path, capsys):
    _, data, cfg, run = workspace
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"r1": 1.0, "r2": 1.0}))
    assert main(["train", "--config", str(bad), "--data", str(data), "--out", str(tmp_path / "o")]) == 4
    assert "r2" in capsys.readouterr().err
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    assert main(["generate", "--checkpoint", str(tmp_path / "junk.ckpt"), "--x", "0"]) == 5
    assert main(["generate", "--checkpoint", str(tmp_path / "missing.ckpt"), "--x", "0"]) == 5
    hot = tmp_path / "hot.json"
    hot.write_text(json.dumps(dict(SMALL_CONFIG, alpha=1e300, beta=1e300, iterations=50)))
    assert main(["train", "--config", str(hot), "--data", str(data), "--out", str(tmp_path / "o")]) == 6
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["train", "--config", str(cfg), "--data", str(data), "--iterations", "1",
                 "--out", str(blocker / "sub")]) == 7
