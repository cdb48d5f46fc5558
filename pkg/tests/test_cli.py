import csv
import json
import os

import numpy as np
import pytest

from evject.cli import main
from evject.conversion import events_to_single_pc
from evject.events import read_event_file
from evject.model import CodecArchitecture, CodecModel, ModelSet
from evject.task_proxy import ProxyClassifier

TINY = {"hidden": [4, 8], "latent_channels": 8, "hyper_channels": 4, "kernel": 3}
LAMBDAS = [0.00125, 0.0025, 0.005, 0.01, 0.02]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("generate", "-o", data, "--n-per-class", 3, "--n-val", 1, "--seed", 11) == 0
    models = root / "models"
    arch = CodecArchitecture(block_size=16, **{k: tuple(v) if isinstance(v, list) else v for k, v in TINY.items()})
    ModelSet([CodecModel(arch, seed=i) for i in range(5)], LAMBDAS).save(models)
    ProxyClassifier(seed=0).save(models / "classifier.evwt", models / "classifier.json")
    return root, data, models


def json_out(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_generate_counts(tmp_path):
    cfg = tmp_path / "gen.toml"
    cfg.write_text(f'output = "{tmp_path / "ds"}"\nn_per_class = 60\nseed = 11\nn_val = 10\n')
    assert run("generate", "--config", cfg) == 0
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert len(manifest["sequences"]) == 240
    assert len([f for f in os.listdir(tmp_path / "ds") if f.endswith(".bin")]) == 240
    assert sum(e["split"] == "val" for e in manifest["sequences"]) == 40


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("EVJECT_SEED", "5")
    assert run("generate", "-o", tmp_path / "a", "--n-per-class", 1, "--seed", 11) == 0
    monkeypatch.delenv("EVJECT_SEED")
    assert run("generate", "-o", tmp_path / "b", "--n-per-class", 1, "--seed", 5) == 0
    assert (tmp_path / "a" / "seq_00000.bin").read_bytes() == (tmp_path / "b" / "seq_00000.bin").read_bytes()


def test_encode_decode_cob_count(workspace, tmp_path, capsys):
    _, data, models = workspace
    src = data / "seq_00000.bin"
    stream = read_event_file(src.read_bytes())
    n_vox = len(events_to_single_pc(stream, 128)[0])
    capsys.readouterr()
    assert run("encode", src, "-o", tmp_path / "a.dlje", "--models", models, "--mode", "cob") == 0
    stats = json_out(capsys)
    assert stats["n_events"] == len(stream) and sum(stats["k"]) == n_vox and stats["n_voxels"] == n_vox
    assert run("decode", tmp_path / "a.dlje", "-o", tmp_path / "a.bin", "--models", models) == 0
    assert json_out(capsys)["n_events"] == n_vox
    assert run("decode", tmp_path / "a.dlje", "-o", tmp_path / "b.bin", "--models", models) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    # re-encoding the decoded stream is deterministic
    assert run("encode", tmp_path / "a.bin", "-o", tmp_path / "r1.dlje", "--models", models, "--mode", "cob") == 0
    assert run("encode", tmp_path / "a.bin", "-o", tmp_path / "r2.dlje", "--models", models, "--mode", "cob") == 0
    assert (tmp_path / "r1.dlje").read_bytes() == (tmp_path / "r2.dlje").read_bytes()
    assert run("evaluate", src, tmp_path / "a.bin", "--bitstream", tmp_path / "a.dlje") == 0
    ev = json_out(capsys)
    assert ev["decoded_count"] == n_vox and ev["bpe"] > 0


def test_all_modes_encode(workspace, tmp_path):
    _, data, models = workspace
    for mode in ("qub", "cob", "cob_split", "cib"):
        assert run("encode", data / "seq_00001.bin", "-o", tmp_path / f"{mode}.dlje", "--models", models,
                   "--mode", mode, "--model-id", 2) == 0


def test_convert_paths(workspace, tmp_path, capsys):
    _, data, _ = workspace
    src = data / "seq_00002.bin"
    assert run("convert", src, tmp_path / "x.csv") == 0
    assert read_event_file((tmp_path / "x.csv").read_bytes(), "CSV").width == 32
    assert run("convert", src, tmp_path / "x.plc1") == 0
    capsys.readouterr()
    assert run("decode", tmp_path / "x.plc1", "-o", tmp_path / "x.bin") == 0
    assert run("convert", src, tmp_path / "v.bin", "--voxelize") == 0
    assert (tmp_path / "x.bin").read_bytes() == (tmp_path / "v.bin").read_bytes()


def test_exit_codes(workspace, tmp_path, capsys):
    _, data, models = workspace
    assert run("bogus") == 1
    assert run("encode", data / "seq_00000.bin", "-o", tmp_path / "o.dlje", "--models", models, "--mode", "x") == 1
    assert run("encode", data / "seq_00000.bin", "-o", tmp_path / "o.dlje", "--models", tmp_path / "none") == 1
    assert run("encode", data / "seq_00000.bin", "-o", tmp_path / "o.dlje", "--models", models) == 0
    blob = bytearray((tmp_path / "o.dlje").read_bytes())
    blob[len(blob) // 2] ^= 0x55
    (tmp_path / "bad.dlje").write_bytes(bytes(blob))
    capsys.readouterr()
    assert run("decode", tmp_path / "bad.dlje", "-o", tmp_path / "bad.bin", "--models", models) == 2
    assert "corruption" in capsys.readouterr().err.lower()
    assert run("decode", tmp_path / "o.dlje", "-o", tmp_path / "o.bin") == 1
    assert run("decode", tmp_path / "missing.dlje", "-o", tmp_path / "o.bin", "--models", models) == 2
    (tmp_path / "junk.bin").write_bytes(b"nonsense")
    assert run("convert", tmp_path / "junk.bin", tmp_path / "j.csv") == 2


def test_train_config_errors(workspace, tmp_path, capsys):
    _, data, _ = workspace
    bad = tmp_path / "bad.toml"
    bad.write_text(f'dataset = "{data}"\noutput = "{tmp_path / "m"}"\nlambdas = [0.02, 0.01]\n')
    capsys.readouterr()
    assert run("train", bad) == 1
    assert "lambdas" in capsys.readouterr().err
    bad.write_text(f'dataset = "{data}"\noutput = "{tmp_path / "m"}"\nlamdas = [0.01]\n')
    assert run("train", bad) == 1
    assert "lamdas" in capsys.readouterr().err
    bad.write_text('dataset = "x"\npatience = "many"\n')
    assert run("train", bad) == 1
    assert "patience" in capsys.readouterr().err


def test_train_writes_one_weight_file_per_lambda(workspace, tmp_path):
    _, data, _ = workspace
    cfg = {
        "dataset": str(data), "output": str(tmp_path / "m"), "block_size": 16, "min_occupancy": 10,
        "max_epochs": 1, "batch_size": 8, "learning_rate": 1e-3, "lambdas": LAMBDAS, "architecture": TINY,
    }
    (tmp_path / "t.json").write_text(json.dumps(cfg))
    assert run("train", tmp_path / "t.json") == 0
    files = sorted(f for f in os.listdir(tmp_path / "m") if f.endswith(".evwt"))
    assert files == [f"model_{i}.evwt" for i in range(5)]
    ms = ModelSet.load(tmp_path / "m")
    assert ms.lambdas == LAMBDAS
    rows = list(csv.DictReader(open(tmp_path / "m" / "training_log.csv")))
    assert [float(r["lambda"]) for r in rows] == LAMBDAS


def test_sweep_rows_and_determinism(workspace, tmp_path):
    _, data, models = workspace
    out = tmp_path / "rep"
    assert run("sweep", "--dataset", data, "--models", models, "--modes", "qub,cob", "--split", "val", "-o", out) == 0
    rows = list(csv.DictReader(open(str(out) + ".csv")))
    assert len(rows) == 2 * 5 + 2
    assert [r["codec"] for r in rows[-2:]] == ["lossless", "voxelized"]
    assert rows[-1]["bpe"] == rows[-2]["bpe"]
    assert all(r["n_sequences"] == "4" for r in rows)
    rep = json.loads(open(str(out) + ".json").read())
    assert len(rep["rows"]) == 12 and "QUB/0" in rep["sequences"]
    out2 = tmp_path / "rep2"
    assert run("sweep", "--dataset", data, "--models", models, "--modes", "qub,cob", "--split", "val", "-o", out2,
               "--workers", 2) == 0
    assert open(str(out) + ".csv").read() == open(str(out2) + ".csv").read()
    assert run("sweep", "--dataset", data, "--models", models, "--split", "nope", "-o", out) == 1
