import json
import subprocess
import sys

import pytest
import yaml

from swaplab.cli import main
from swaplab.config import (RunConfig, load_config, load_datasets, output_dir, preset_names,
                            resolve_config_path)
from swaplab.errors import ConfigError
from swaplab.experiments import run_mode
from swaplab.schedules import lr_at

TINY = {
    "name": "tiny", "seed": 1, "output": "tiny",
    "data": {"kind": "gaussian_blobs", "n": 300, "d": 4, "classes": 3, "noise": 1.0},
    "model": {"hidden": [8], "batchnorm": True},
    "phase_plan": {"tau": 0.9, "max_epochs_phase1": 3, "epochs_phase2": 1,
                   "B1": 40, "B2": 16, "W": 2},
    "schedules": {"phase1": {"kind": "constant", "lr": 0.1},
                  "phase2": {"kind": "constant", "lr": 0.02},
                  "swa": {"kind": "cyclic", "cycle_length": 1, "lr_peak": 0.05,
                          "lr_min": 0.005, "cycles": 2},
                  "sgd_small": {"kind": "constant", "lr": 0.05}},
    "swa": {"variant": "lb_then_sb_swa", "cycles": 2, "cycle_epochs": 1},
    "sgd_small": {"batch_size": 16, "epochs": 1, "workers": 1},
    "diagnostics": {"trace_every": 2},
}


def write_cfg(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def with_(raw, path, value):
    out = json.loads(json.dumps(raw))
    node = out
    *head, last = path.split(".")
    for k in head:
        node = node.setdefault(k, {})
    node[last] = value
    return out


@pytest.mark.parametrize("path,value", [
    ("phase_plan.B1", "big"),
    ("phase_plan.W", 3),
    ("phase_plan.bogus", 1),
    ("schedules.phase1.lr", -1),
    ("schedules.phase1.kind", "zigzag"),
    ("model.activation", "gelu"),
    ("data.test_fraction", 1.5),
])
def test_errors_name_the_field(path, value):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(with_(TINY, path, value))
    assert info.value.path.startswith(path.rsplit(".", 1)[0])


def test_mode_validation():
    cfg = RunConfig.from_dict(with_(TINY, "sgd_small.workers", 2))
    with pytest.raises(ConfigError) as info:
        cfg.validate_mode("sgd_small")
    assert info.value.path == "sgd_small.workers"
    bad = RunConfig.from_dict(with_(TINY, "swa.cycles", 3))
    with pytest.raises(ConfigError):
        bad.validate_mode("swa")
    with pytest.raises(ConfigError):
        RunConfig.from_dict(TINY).validate_mode("sgd_large")
    RunConfig.from_dict(TINY).validate_mode("swap")


def test_echo_round_trip(tmp_path):
    cfg = load_config(write_cfg(tmp_path, TINY))
    echo = cfg.to_dict()
    assert RunConfig.from_dict(echo) == cfg
    assert RunConfig.from_dict(json.loads(json.dumps(echo))) == cfg
    assert RunConfig.from_dict(yaml.safe_load(yaml.safe_dump(echo))) == cfg


def test_presets_parse():
    names = preset_names()
    assert {"desk.toy", "cifar10-shape.toy", "cifar100-shape.toy"} <= set(names)
    for n in names:
        cfg = load_config(n.removesuffix(".toy"))
        cfg.validate_mode("swap")
    c10 = load_config("cifar10-shape")
    assert lr_at(c10.schedule("phase1"), 30) == pytest.approx(1.2)
    assert c10.phase_plan.B1 == 4096 and c10.phase_plan.W == 8
    with pytest.raises(ConfigError):
        resolve_config_path("no-such-preset")


def test_cifar10_shape_runs_at_toy_scale():
    cfg = load_config("cifar10-shape")
    small = RunConfig.from_dict(with_(with_(with_(cfg.to_dict(), "phase_plan.max_epochs_phase1",
                                                  2), "phase_plan.epochs_phase2", 1),
                                      "data.n", 1500))
    small = RunConfig.from_dict(with_(small.to_dict(), "phase_plan.B1", 256))
    small = RunConfig.from_dict(with_(small.to_dict(), "phase_plan.B2", 32))
    out = run_mode(small, "swap")
    assert out.summary()["n_models"] == 8


def test_output_dir_env(monkeypatch, tmp_path):
    cfg = RunConfig.from_dict(TINY)
    monkeypatch.delenv("SWAPLAB_OUT", raising=False)
    assert str(output_dir(cfg)) == "tiny"
    monkeypatch.setenv("SWAPLAB_OUT", str(tmp_path))
    assert output_dir(cfg) == tmp_path / "tiny"
    assert output_dir(cfg, "/abs/x").as_posix() == "/abs/x"


def test_csv_data_source(tmp_path):
    from swaplab.data import generate_synthetic, save_csv
    save_csv(generate_synthetic("gaussian_blobs", 50, 3, 2, 1.0, seed=0), tmp_path / "d.csv")
    raw = with_(TINY, "data", {"source": "csv", "path": "d.csv", "standardize": False})
    train, test = load_datasets(RunConfig.from_dict(raw), tmp_path)
    assert len(train) + len(test) == 50 and train.dim == 3


# --- CLI --------------------------------------------------------------------

@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(root, TINY)
    for mode in ("swap", "swa", "sgd_small"):
        assert main(["train", mode, "--config", cfg, "--out", str(root / mode)]) == 0
    return root, cfg


def test_train_artifacts(runs):
    root, _ = runs
    files = {p.name for p in (root / "swap").iterdir()}
    assert {"config.json", "summary.json", "timing.json", "history.csv", "steps.csv",
            "history.json", "trace.bundle", "cosine_trace.csv", "checkpoints"} <= files
    ck = {p.name for p in (root / "swap" / "checkpoints").iterdir()}
    assert ck == {"phase1.ckpt", "worker_0.ckpt", "worker_1.ckpt", "final.ckpt"}
    hist = json.loads((root / "swap" / "history.json").read_text())
    assert hist["config"] == json.loads((root / "swap" / "config.json").read_text())
    assert RunConfig.from_dict(hist["config"]) == load_config(str(root / "swap" / "config.json"))
    assert {p.name for p in (root / "swa" / "checkpoints").iterdir()} == {
        "lead_in.ckpt", "sample_0.ckpt", "sample_1.ckpt", "final.ckpt"}
    assert json.loads((root / "sgd_small" / "summary.json").read_text())["mode"] == "sgd_small"


def test_compare_and_self_compare(runs, capsys):
    root, _ = runs
    assert main(["compare", str(root / "swa"), str(root / "swap"), "--out", str(root / "cmp")]) == 0
    rows = (root / "cmp" / "comparison.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["lb_then_sb_swa", "swap"]
    assert main(["compare", str(root / "swap"), str(root / "swap")]) == 0
    a, b = capsys.readouterr().out.splitlines()[-2:]
    assert a == b
    assert main(["compare", str(root / "missing"), str(root / "swap")]) == 5
    assert main(["compare", str(root / "sgd_small"), str(root / "swap")]) == 5


def test_diag_and_landscape(runs, capsys, tmp_path):
    root, cfg = runs
    assert main(["diag", str(root / "swap"), "--phase", "2", "--out", str(root / "diag")]) == 0
    assert (root / "diag" / "cosine_trace.csv").is_file()
    assert main(["diag", str(tmp_path)]) == 5
    ck = root / "swap" / "checkpoints"
    lb, w0, fin = ck / "phase1.ckpt", ck / "worker_0.ckpt", ck / "final.ckpt"
    assert main(["landscape", str(lb), str(w0), str(fin), "--config", cfg, "--resolution", "3",
                 "--out", str(root / "ls")]) == 0
    assert "BEST at" in capsys.readouterr().out
    assert (root / "ls" / "surface.csv").is_file()
    assert main(["landscape", str(lb), str(lb), str(fin), "--config", cfg]) == 4
    assert main(["landscape", str(lb), str(root / "nope.ckpt"), str(fin), "--config", cfg]) == 5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_invalid_config_exit_code(tmp_path, capsys):
    bad = write_cfg(tmp_path, with_(TINY, "phase_plan.B1", "x"))
    assert main(["train", "swap", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "phase_plan.B1" in capsys.readouterr().err
    worker = write_cfg(tmp_path, with_(TINY, "sgd_small.workers", 4), "w.yaml")
    assert main(["train", "sgd_small", "--config", worker]) == 2
    assert main(["train", "swap", "--config", str(tmp_path / "none.yaml")]) == 2
    diverge = write_cfg(tmp_path, with_(TINY, "schedules.phase1.lr", 1e200), "d.yaml")
    assert main(["train", "swap", "--config", diverge, "--out", str(tmp_path / "d")]) == 3


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "swaplab.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "landscape" in r.stdout
