import csv
import json

import numpy as np
import pytest

from spdda.cli import main
from spdda.config import RunConfig
from spdda.data import HyperCube, read_cube, synthesize_scene, write_cube
from spdda.metrics import gray, psnr
from spdda.training import TrainConfig, init_state

SMALL = {
    "scene": {"channels": 16, "height": 24, "width": 24},
    "eval": {"bands": [11, 7, 3]},
    "train": {"epochs": 2, "batch_size": 16, "lr": 0.001, "hidden": 16, "max_per_class": 10, "checkpoint_every": 1},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture
def scene(tmp_path, config):
    out = tmp_path / "scene"
    assert main(["synthesize", "--config", config, "--run-dir", str(out), "--seed", "3", "-q"]) == 0
    return out


def run(*argv):
    return main([*map(str, argv), "-q"])


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------

def test_synthesize_shapes_and_determinism(tmp_path, config, scene):
    source, target = read_cube(scene / "source.hsc"), read_cube(scene / "target.hsc")
    assert source.values.shape == (16, 24, 24) and target.values.shape == (12, 24, 24)
    again = tmp_path / "again"
    assert run("synthesize", "--config", config, "--run-dir", again, "--seed", 3) == 0
    for name in ["source.hsc", "target.hsc", "manifest.json"]:
        assert (scene / name).read_bytes() == (again / name).read_bytes()


def test_manifest_reproduces_cubes(tmp_path, scene):
    manifest = json.loads((scene / "manifest.json").read_text())
    assert manifest["seed"] == 3
    replay = tmp_path / "replay"
    assert run("synthesize", "--config", scene / "manifest.json", "--run-dir", replay) == 0
    assert (replay / "source.hsc").read_bytes() == (scene / "source.hsc").read_bytes()
    assert (replay / "target.hsc").read_bytes() == (scene / "target.hsc").read_bytes()


def test_default_scene_shapes(tmp_path):
    assert run("synthesize", "--run-dir", tmp_path / "d") == 0
    assert read_cube(tmp_path / "d" / "source.hsc").values.shape == (64, 64, 64)
    assert read_cube(tmp_path / "d" / "target.hsc").values.shape == (48, 64, 64)


def test_refuses_to_clobber(config, scene, capsys):
    before = (scene / "source.hsc").read_bytes()
    assert run("synthesize", "--config", config, "--run-dir", scene, "--seed", 4) == 2
    assert "--overwrite" in capsys.readouterr().err
    assert (scene / "source.hsc").read_bytes() == before
    assert run("synthesize", "--config", config, "--run-dir", scene, "--seed", 4, "--overwrite") == 0
    assert (scene / "source.hsc").read_bytes() != before


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def train(tmp_path, config, scene, name, *extra):
    out = tmp_path / name
    code = run("train", "--config", config, "--run-dir", out, "--source", scene / "source.hsc",
               "--target", scene / "target.hsc", *extra)
    return code, out


def test_train_writes_run_directory(tmp_path, config, scene):
    code, out = train(tmp_path, config, scene, "run")
    assert code == 0
    assert {"steps.csv", "eval.csv", "config.json", "checkpoint_0001.bin", "checkpoint_0002.bin"} <= {
        p.name for p in out.iterdir()}
    echo = json.loads((out / "config.json").read_text())
    assert echo == RunConfig.from_dict(echo).to_dict()
    assert echo["train"]["epochs"] == 2 and echo["train"]["temperature"] == 0.07
    assert echo["paths"]["source"].endswith("source.hsc")
    rows = list(csv.DictReader((out / "eval.csv").open()))
    assert [r["split"] for r in rows] == ["source", "target"]
    assert train(tmp_path, config, scene, "run")[0] == 2


def test_config_echo_reproduces_run(tmp_path, config, scene):
    _, out = train(tmp_path, config, scene, "orig")
    replay = tmp_path / "replay"
    assert run("train", "--config", out / "config.json", "--run-dir", replay) == 0
    for name in ["steps.csv", "eval.csv", "checkpoint_0002.bin"]:
        assert (out / name).read_bytes() == (replay / name).read_bytes()


def test_ablation_and_lambda_flags(tmp_path, config, scene):
    code, out = train(tmp_path, config, scene, "row1", "--ablation", "table2-row1", "--epochs", "1")
    assert code == 0
    t = json.loads((out / "config.json").read_text())["train"]
    assert (t["casm_mode"], t["use_sf"], t["use_sc"]) == ("fixed", False, False)
    code, out = train(tmp_path, config, scene, "fix1", "--lambda", "fixed:1.0", "--epochs", "1")
    assert code == 0
    assert json.loads((out / "config.json").read_text())["train"]["lambda_mode"] == "fixed:1.0"
    lambdas = {r["lambda"] for r in csv.DictReader((out / "steps.csv").open())}
    assert lambdas == {"1.0"}
    code, out = train(tmp_path, config, scene, "vare", "--ablation", "var-e", "--epochs", "8")
    assert json.loads((out / "config.json").read_text())["train"]["lambda_mode"] == "staged_epoch:0.1,2.0,4"


def test_resume_matches_uninterrupted(tmp_path, config, scene):
    _, full = train(tmp_path, config, scene, "full")
    _, cut = train(tmp_path, config, scene, "cut", "--epochs", "1")
    # the first epoch is identical; resuming with the full epoch count finishes the run
    assert train(tmp_path, config, scene, "cut", "--resume")[0] == 0
    for name in ["steps.csv", "checkpoint_0002.bin", "eval.csv"]:
        assert (full / name).read_bytes() == (cut / name).read_bytes(), name


def test_seed_fan_out(tmp_path, config, scene):
    code, out = train(tmp_path, config, scene, "multi", "--seeds", "1,2", "--epochs", "1")
    assert code == 0
    s1 = json.loads((out / "seed_1" / "config.json").read_text())
    assert s1["seed"] == 1 and s1["train"]["seed"] == 1
    assert (out / "seed_2" / "steps.csv").read_bytes() != (out / "seed_1" / "steps.csv").read_bytes()


@pytest.mark.parametrize("extra,key", [
    (["--ablation", "table9"], "ablation"),
    (["--lambda", "bogus"], "train.lambda_mode"),
    (["--epochs", "0"], "train.epochs"),
    (["--seeds", "a,b"], "--seeds"),
])
def test_config_errors_exit_2(tmp_path, config, scene, capsys, extra, key):
    code, _ = train(tmp_path, config, scene, "bad", *extra)
    assert code == 2
    assert key in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path, scene, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"epohcs": 1}}))
    assert run("train", "--config", path, "--run-dir", tmp_path / "x", "--source", scene / "source.hsc") == 2
    assert "train.epohcs" in capsys.readouterr().err


def test_data_errors_exit_3(tmp_path, config, scene, capsys):
    assert run("train", "--config", config, "--run-dir", tmp_path / "a", "--source", tmp_path / "none.hsc") == 3
    bad = tmp_path / "bad.hsc"
    bad.write_bytes(b"JUNKJUNKJUNKJUNKJ")
    assert run("train", "--config", config, "--run-dir", tmp_path / "b", "--source", bad) == 3
    assert "bad magic" in capsys.readouterr().err
    unlabeled = tmp_path / "u.hsc"
    write_cube(HyperCube(np.zeros((4, 16, 16))), unlabeled)
    assert run("train", "--config", config, "--run-dir", tmp_path / "c", "--source", unlabeled) == 3


def test_non_finite_data_exit_4(tmp_path, config, scene, capsys):
    cube = read_cube(scene / "source.hsc")
    cube.values[:, 5, 5] = np.nan
    poisoned = tmp_path / "nan.hsc"
    write_cube(cube, poisoned)
    assert run("train", "--config", config, "--run-dir", tmp_path / "n", "--source", poisoned) == 4
    assert "non-finite" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# augment and evaluate
# ---------------------------------------------------------------------------

def test_augment_identity_generator(tmp_path, config, scene):
    cfg = TrainConfig(casm_mode="off", k_min_fraction=1.0, zero_residual=True, hidden=16)
    ck = tmp_path / "identity.bin"
    init_state(cfg, 16, 3).save(ck)
    out = tmp_path / "aug"
    assert run("augment", "--config", config, "--checkpoint", ck, "--source", scene / "source.hsc",
               "--run-dir", out) == 0
    report = json.loads((out / "augment" / "report.json").read_text())
    assert report["k"] == 16 and report["sam_mean"] < 1e-6 and report["psnr"] == 99.0
    ed = read_cube(out / "augment" / "ed.hsc")
    np.testing.assert_allclose(ed.values, read_cube(scene / "source.hsc").values, atol=1e-6)


def test_augment_trained_generator(tmp_path, config, scene):
    _, run_dir = train(tmp_path, config, scene, "gen")
    assert run("augment", "--config", config, "--run-dir", run_dir, "--source", scene / "source.hsc") == 0
    aug = run_dir / "augment"
    mixer = json.loads((aug / "mixer.json").read_text())
    ed, source = read_cube(aug / "ed.hsc"), read_cube(scene / "source.hsc")
    assert ed.channels == mixer["k"] == len(mixer["mixer"]["weights"])
    report = json.loads((aug / "report.json").read_text())
    assert abs(report["psnr"] - psnr(gray(source.values), gray(ed.values))) < 1e-9
    for name in ["source.ppm", "ed.ppm"]:
        assert (aug / name).read_bytes().startswith(b"P6\n24 24\n255\n")
    assert run("augment", "--config", config, "--run-dir", run_dir, "--source", scene / "source.hsc") == 2
    # the default display bands need 48+ channels
    assert run("augment", "--run-dir", run_dir, "--source", scene / "source.hsc", "--overwrite") == 2


def test_augment_channel_mismatch_exit_3(tmp_path, config, scene, capsys):
    _, run_dir = train(tmp_path, config, scene, "gen2", "--epochs", "1")
    assert run("augment", "--run-dir", run_dir, "--source", scene / "target.hsc") == 3
    assert "channels" in capsys.readouterr().err


def test_augment_rejects_erm_checkpoint(tmp_path, config, scene):
    _, run_dir = train(tmp_path, config, scene, "erm", "--ablation", "erm", "--epochs", "1")
    assert run("augment", "--run-dir", run_dir, "--source", scene / "source.hsc") == 3


def test_evaluate_appends_identical_rows(tmp_path, config, scene):
    _, run_dir = train(tmp_path, config, scene, "ev")
    out = tmp_path / "evals"
    for _ in range(2):
        assert run("evaluate", "--run-dir", out, "--checkpoint", run_dir / "checkpoint_0002.bin",
                   "--cube", scene / "target.hsc") == 0
    rows = list(csv.DictReader((out / "eval.csv").open()))
    assert len(rows) == 2 and rows[0] == rows[1] and rows[0]["split"] == "target"
    unlabeled = tmp_path / "u.hsc"
    write_cube(HyperCube(np.zeros((16, 16, 16))), unlabeled)
    assert run("evaluate", "--run-dir", out, "--checkpoint", run_dir / "checkpoint_0002.bin",
               "--cube", unlabeled) == 3
    assert run("evaluate", "--run-dir", tmp_path / "empty", "--cube", scene / "target.hsc") == 3


def test_converged_run_scores_well_on_training_cube(tmp_path, scene):
    path = tmp_path / "long.json"
    path.write_text(json.dumps({**SMALL, "train": {**SMALL["train"], "epochs": 10, "max_per_class": 0,
                                                   "checkpoint_every": 0}}))
    code, run_dir = train(tmp_path, str(path), scene, "long")
    assert code == 0
    out = tmp_path / "ev"
    assert run("evaluate", "--run-dir", out, "--checkpoint", run_dir / "checkpoint_0010.bin",
               "--cube", scene / "source.hsc") == 0
    oa = float(next(csv.DictReader((out / "eval.csv").open()))["oa"])
    assert oa > 0.9


def test_bench_command(tmp_path, config, monkeypatch):
    path = tmp_path / "b.json"
    path.write_text(json.dumps({**SMALL, "bench": {"seeds": [0], "methods": ["spdda", "erm"], "epochs": 1,
                                                   "max_per_class": 5}}))
    monkeypatch.setenv("SPDDA_THREADS", "1")
    out = tmp_path / "bench"
    assert run("bench", "--config", path, "--run-dir", out, "--seeds", "0,1") == 0
    rows = json.loads((out / "bench.json").read_text())
    assert {(r["seed"], r["method"]) for r in rows} == {(0, "spdda"), (0, "erm"), (1, "spdda"), (1, "erm")}
    assert "spdda vs erm" in (out / "bench.md").read_text()
    assert run("bench", "--config", path, "--run-dir", out) == 2
