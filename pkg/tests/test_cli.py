"""End-to-end tests for the command-line interface.

Commands run in-process through cli.main(argv) so the suite stays fast;
one subprocess test covers the module entry point. Expensive artifacts
(dataset, trained model, memory image) are built once per module.
"""

import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mcsnn import cli
from mcsnn import data as data_mod
from mcsnn import energy as energy_mod
from mcsnn import processor as proc
from mcsnn import quantization as qz
from mcsnn import training
from mcsnn.encoding import encode_windows

N_WINDOWS = 60
WINDOW_LEN = 128
T_STEPS = 10


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def manifest_path(work):
    path = work / "manifest.json"
    path.write_text(json.dumps(
        {"synthetic": {"n_windows": N_WINDOWS, "window_len": WINDOW_LEN,
                       "seed": 7}}))
    return path


@pytest.fixture(scope="module")
def ds_path(work, manifest_path):
    path = work / "ds.mcqd"
    assert cli.main(["ingest", "--manifest", str(manifest_path),
                     "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def train_dir(work, ds_path):
    out = work / "train"
    assert cli.main(["train", "--data", str(ds_path), "--out-dir", str(out),
                     "--epochs", "2", "--hidden", "16", "--neuron", "qmcleaky",
                     "--t-steps", str(T_STEPS), "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def quant_dir(work, train_dir):
    out = work / "quant"
    assert cli.main(["quantize", "--checkpoint", str(train_dir / "model.mcqm"),
                     "--out-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def stream_file(work, ds_path, quant_dir):
    path = work / "in.aer"
    assert cli.main(["encode", "--data", str(ds_path),
                     "--map", str(quant_dir / "addrmap.json"),
                     "--out", str(path), "--t-steps", str(T_STEPS),
                     "--seed", "0", "--index", "3"]) == 0
    return path


# ---------------------------------------------------------------------------
# Usage and help
# ---------------------------------------------------------------------------

def test_help_exits_zero_on_every_subcommand():
    for argv in [["--help"]] + [[c, "--help"] for c in cli.COMMANDS]:
        with pytest.raises(SystemExit) as err:
            cli.main(argv)
        assert err.value.code in (0, None)


def test_no_subcommand_is_usage_error(capsys):
    assert cli.main([]) == 1
    assert "subcommand" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    assert cli.main(["bogus"]) == 1


def test_missing_flag_value_is_usage_error():
    assert cli.main(["train", "--data"]) == 1


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def test_ingest_writes_declared_window_len(ds_path):
    ds = data_mod.read_dataset(ds_path)
    assert ds.windows.shape == (N_WINDOWS, WINDOW_LEN)


def test_ingest_missing_manifest_names_path(tmp_path, capsys):
    rc = cli.main(["ingest", "--manifest", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "nope.json" in capsys.readouterr().err


def test_ingest_rerun_is_byte_identical(work, manifest_path, ds_path):
    again = work / "ds_again.mcqd"
    assert cli.main(["ingest", "--manifest", str(manifest_path),
                     "--out", str(again)]) == 0
    assert sha256(again) == sha256(ds_path)


def test_ingest_does_not_mutate_manifest(work, manifest_path):
    before = sha256(manifest_path)
    assert cli.main(["ingest", "--manifest", str(manifest_path),
                     "--out", str(work / "ds_mut.mcqd")]) == 0
    assert sha256(manifest_path) == before


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_emits_checkpoint_metrics_and_stats(train_dir):
    model, history = training.load_checkpoint(train_dir / "model.mcqm")
    assert len(history) == 2
    rows = list(csv.DictReader(open(train_dir / "metrics.csv")))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    assert set(rows[0]) == {"epoch", "lr", "loss", "train_acc", "test_acc"}
    stats = json.loads((train_dir / "stats.json").read_text())
    assert set(stats) == {"test_accuracy", "t_windows", "layers"}
    assert len(stats["layers"]) == 2


def test_train_is_seed_reproducible(work, ds_path):
    dirs = [work / "rep_a", work / "rep_b"]
    for out in dirs:
        assert cli.main(["train", "--data", str(ds_path),
                         "--out-dir", str(out), "--epochs", "1",
                         "--hidden", "8", "--neuron", "lif",
                         "--t-steps", "8", "--seed", "5"]) == 0
    assert sha256(dirs[0] / "model.mcqm") == sha256(dirs[1] / "model.mcqm")
    assert sha256(dirs[0] / "metrics.csv") == sha256(dirs[1] / "metrics.csv")


def test_train_does_not_mutate_dataset(work, ds_path):
    before = sha256(ds_path)
    assert cli.main(["train", "--data", str(ds_path),
                     "--out-dir", str(work / "mut"), "--epochs", "1",
                     "--hidden", "8", "--neuron", "lif", "--t-steps", "8",
                     "--seed", "0"]) == 0
    assert sha256(ds_path) == before


def test_train_missing_dataset_names_path(tmp_path, capsys):
    rc = cli.main(["train", "--data", str(tmp_path / "absent.mcqd"),
                   "--out-dir", str(tmp_path / "out")])
    assert rc == 2
    assert "absent.mcqd" in capsys.readouterr().err


def test_train_spec_json_overrides_architecture(work, ds_path):
    from mcsnn.network import LayerSpec, NetworkSpec

    spec = NetworkSpec(WINDOW_LEN, [
        LayerSpec("dense", units=4),
        LayerSpec("activation", neuron="lif", threshold=0.5),
        LayerSpec("dense", units=2),
        LayerSpec("activation", neuron="lif", threshold=0.5),
    ], t_steps=8)
    spec_file = work / "spec.json"
    spec_file.write_text(spec.to_json())
    out = work / "spec_train"
    assert cli.main(["train", "--data", str(ds_path), "--out-dir", str(out),
                     "--epochs", "1", "--t-steps", "8", "--seed", "0",
                     "--spec-json", str(spec_file)]) == 0
    model, _ = training.load_checkpoint(out / "model.mcqm")
    assert model.spec.layers[0].units == 4


# ---------------------------------------------------------------------------
# quantize, encode, simulate
# ---------------------------------------------------------------------------

def test_quantize_emits_image_and_address_map(quant_dir):
    image = proc.load_memory_image(quant_dir / "model.mcqi")
    image.validate()
    amap = proc.AddressMap.from_json(
        json.loads((quant_dir / "addrmap.json").read_text()))
    assert amap.input_len == WINDOW_LEN
    assert [n for _, n in amap.layers] == [16, 2]


def test_encode_simulate_matches_integer_reference(work, ds_path, train_dir,
                                                   quant_dir, stream_file):
    """CLI encode + simulate reproduces the quantized reference exactly."""
    out_file = work / "out.aer"
    index = 3
    assert cli.main(["simulate", "--image", str(quant_dir / "model.mcqi"),
                     "--input", str(stream_file), "--t-steps", str(T_STEPS),
                     "--out", str(out_file)]) == 0

    ds = data_mod.read_dataset(ds_path)
    enc = encode_windows(ds.windows, T_STEPS, seed=0)[:, index, :]
    model, _ = training.load_checkpoint(train_dir / "model.mcqm")
    qnet = qz.quantize_network(model)
    ref_spikes = qz.q_forward(qnet, enc)

    image = proc.load_memory_image(quant_dir / "model.mcqi")
    amap = proc.AddressMap.from_json(
        json.loads((quant_dir / "addrmap.json").read_text()))
    result = proc.run_inference(image, proc.read_stream(stream_file), T_STEPS)
    trains = proc.spike_trains(result, amap)
    for sim, ref in zip(trains, ref_spikes):
        np.testing.assert_array_equal(sim, ref)
    # the written stream holds the same events the live run produced
    assert proc.read_stream(out_file) == result.events


def test_encode_index_out_of_range(work, ds_path, quant_dir):
    rc = cli.main(["encode", "--data", str(ds_path),
                   "--map", str(quant_dir / "addrmap.json"),
                   "--out", str(work / "bad.aer"), "--index", "9999"])
    assert rc == 2


def test_simulate_missing_image_is_validation_error(tmp_path, stream_file,
                                                    capsys):
    rc = cli.main(["simulate", "--image", str(tmp_path / "ghost.mcqi"),
                   "--input", str(stream_file), "--t-steps", "5",
                   "--out", str(tmp_path / "o.aer")])
    assert rc == 2
    assert "ghost.mcqi" in capsys.readouterr().err


def test_simulate_fifo_overflow_is_runtime_error(work, quant_dir, stream_file,
                                                 capsys):
    rc = cli.main(["simulate", "--image", str(quant_dir / "model.mcqi"),
                   "--input", str(stream_file), "--t-steps", str(T_STEPS),
                   "--out", str(work / "overflow.aer"), "--fifo-capacity", "1"])
    assert rc == 3
    assert "runtime error" in capsys.readouterr().err


def test_simulate_prints_class_decision_with_map(work, quant_dir, stream_file,
                                                 capsys):
    assert cli.main(["simulate", "--image", str(quant_dir / "model.mcqi"),
                     "--input", str(stream_file),
                     "--t-steps", str(T_STEPS),
                     "--out", str(work / "mapped.aer"),
                     "--map", str(quant_dir / "addrmap.json")]) == 0
    assert "class decision:" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------

def test_evolve_logs_monotone_best_fitness(work, ds_path):
    out = work / "evolve"
    assert cli.main(["evolve", "--data", str(ds_path), "--out-dir", str(out),
                     "--generations", "2", "--parents", "4",
                     "--offspring", "4", "--train-epochs", "1",
                     "--t-steps", "8", "--seed", "3"]) == 0
    rows = list(csv.DictReader(open(out / "evolution.csv")))
    assert len(rows) == 3  # initial population plus two generations
    best = [float(r["best_fitness"]) for r in rows]
    assert all(b >= a for a, b in zip(best, best[1:]))

    best_blob = json.loads((out / "best.json").read_text())
    assert best_blob["fitness"] == pytest.approx(best[-1])
    assert best_blob["network_spec"]["layers"]
    archive = json.loads((out / "archive.json").read_text())
    assert len(archive) == 4 + 2 * 4


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_sweep_emits_width_epoch_accuracy_csv(work, ds_path):
    out = work / "sweep"
    assert cli.main(["sweep", "--data", str(ds_path), "--out-dir", str(out),
                     "--widths", "4,8", "--epochs", "2", "--hidden", "8",
                     "--t-steps", "8", "--seed", "2"]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert set(rows[0]) == {"width", "epoch", "test_accuracy"}
    assert [(r["width"], r["epoch"]) for r in rows] == [
        ("4", "0"), ("4", "1"), ("8", "0"), ("8", "1")]


def test_sweep_empty_width_list_is_validation_error(work, ds_path):
    rc = cli.main(["sweep", "--data", str(ds_path),
                   "--out-dir", str(work / "sweep_bad"), "--widths", ","])
    assert rc == 2


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def test_energy_report_matches_module_output(work, train_dir, capsys):
    out_file = work / "energy.txt"
    assert cli.main(["energy", "--stats", str(train_dir / "stats.json"),
                     "--lambda", "5", "--out", str(out_file)]) == 0
    capsys.readouterr()
    blob = json.loads((train_dir / "stats.json").read_text())
    expected = energy_mod.energy_report(
        blob["layers"], t_windows=blob["t_windows"], lam=5.0,
        latency_ratio=energy_mod.LATENCY_RATIO_DEFAULT)
    assert out_file.read_text() == expected.to_text() + "\n"


def test_energy_prints_to_stdout_without_out(train_dir, capsys):
    assert cli.main(["energy", "--stats", str(train_dir / "stats.json")]) == 0
    assert "spike ratio" in capsys.readouterr().out


def test_energy_rejects_malformed_stats(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"wrong": 1}))
    assert cli.main(["energy", "--stats", str(bad)]) == 2


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

PNG_MAGIC = b"\x89PNG"


def test_report_renders_training_figures(work, train_dir):
    out = work / "figs"
    assert cli.main(["report", "--from", str(train_dir),
                     "--out-dir", str(out)]) == 0
    for name in ["training.png", "energy.png"]:
        assert (out / name).read_bytes()[:4] == PNG_MAGIC
    listed = (out / "report.txt").read_text().splitlines()
    assert len(listed) >= 3


def test_report_renders_spike_raster(work, quant_dir, stream_file):
    # put output.aer next to addrmap.json so report can pair them
    assert cli.main(["simulate", "--image", str(quant_dir / "model.mcqi"),
                     "--input", str(stream_file),
                     "--t-steps", str(T_STEPS),
                     "--out", str(quant_dir / "output.aer")]) == 0
    assert cli.main(["report", "--from", str(quant_dir)]) == 0
    assert (quant_dir / "raster.png").read_bytes()[:4] == PNG_MAGIC


def test_report_on_empty_dir_is_validation_error(tmp_path):
    assert cli.main(["report", "--from", str(tmp_path)]) == 2


# ---------------------------------------------------------------------------
# config file precedence
# ---------------------------------------------------------------------------

def test_config_file_overrides_defaults_and_flags_win(work, ds_path):
    cfg = work / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1, "hidden": 8,
                                         "t_steps": 8, "neuron": "lif"}}))
    out_a = work / "cfg_a"
    assert cli.main(["--config", str(cfg), "train", "--data", str(ds_path),
                     "--out-dir", str(out_a), "--seed", "0"]) == 0
    assert len(list(csv.DictReader(open(out_a / "metrics.csv")))) == 1

    out_b = work / "cfg_b"
    assert cli.main(["--config", str(cfg), "train", "--data", str(ds_path),
                     "--out-dir", str(out_b), "--seed", "0",
                     "--epochs", "2"]) == 0
    assert len(list(csv.DictReader(open(out_b / "metrics.csv")))) == 2


def test_config_file_must_hold_object(work, ds_path):
    cfg = work / "cfg_list.json"
    cfg.write_text("[1, 2]")
    rc = cli.main(["--config", str(cfg), "train", "--data", str(ds_path),
                   "--out-dir", str(work / "never")])
    assert rc == 2


# ---------------------------------------------------------------------------
# module entry point
# ---------------------------------------------------------------------------

def test_module_entry_point_runs():
    p = subprocess.run([sys.executable, "-m", "mcsnn.cli", "--help"],
                       capture_output=True, text=True)
    assert p.returncode == 0
    assert "ingest" in p.stdout and "simulate" in p.stdout
