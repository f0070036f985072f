import json
import os

import numpy as np
import pytest

from specnovo import __version__, synth
from specnovo.cli import main
from specnovo.model import load_checkpoint
from specnovo.spectra import SpectrumRecord, write_records

FAST = ["--preset", "micro", "--max-peaks", "4"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    smi = synth.molecule_set(41, 12, "A", 3, 6)
    recs = synth.make_records(smi, seed=1)
    write_records(d / "train.jsonl", recs)
    write_records(d / "test.jsonl", [SpectrumRecord(r.spectrum, r.formula) for r in recs[:4]])
    write_records(d / "ext.jsonl", recs[:5] + synth.make_records(synth.molecule_set(42, 3, "A", 3, 6), 2))
    return d


@pytest.fixture(scope="module")
def trained(data):
    out = data / "run"
    rc = main(["train", "--data", str(data / "train.jsonl"), "--out", str(out), "--epochs", "2",
               "--preset", "toy", "--max-peaks", "4", "--fingerprint-width", "32"])
    assert rc == 0
    return out / "model.ckpt"


def run(*argv):
    return main([str(a) for a in argv])


def test_train_outputs(trained):
    out = trained.parent
    assert sorted(os.listdir(out)) == ["VERSION", "config.json", "model.ckpt", "train_log.jsonl"]
    assert (out / "VERSION").read_text().strip() == f"specnovo {__version__}"
    frozen = json.loads((out / "config.json").read_text())
    assert frozen["command"] == "train" and frozen["settings"]["batch_size"] == 16
    assert frozen["model"]["fingerprint_width"] == 32
    log = [json.loads(x) for x in (out / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log if "ce" in r] == [1, 2]
    assert all("val_token_acc" in r for r in log if "ce" not in r)


def test_resume_continues_steps(data, trained, tmp_path):
    assert run("train", "--data", data / "train.jsonl", "--checkpoint", trained, "--out", tmp_path,
               "--epochs", "1", "--max-peaks", "4") == 0
    log = [json.loads(x) for x in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    steps = [r["step"] for r in log if "ce" in r]
    assert steps[0] == load_checkpoint(trained).step + 1
    assert load_checkpoint(tmp_path / "model.ckpt").epoch == load_checkpoint(trained).epoch + 1


def test_finetune_schedule(data, trained, tmp_path):
    assert run("finetune", "--data", data / "train.jsonl", "--checkpoint", trained, "--out", tmp_path,
               "--epochs", "1", "--max-peaks", "4") == 0
    st = load_checkpoint(tmp_path / "model.ckpt")
    assert st.phase == "finetune" and st.lr == 5e-5 and st.step > load_checkpoint(trained).step


def test_finetune_needs_checkpoint(data, tmp_path):
    assert run("finetune", "--data", data / "train.jsonl", "--out", tmp_path) == 2


def test_bad_line(data, tmp_path, capsys):
    lines = (data / "train.jsonl").read_text().splitlines()[:6]
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + '\n{"formula": "CH4", "spectrum": [[1.0, "x"]]}\n')
    assert run("train", "--data", bad, "--out", tmp_path / "o", *FAST) == 3
    assert "line 7" in capsys.readouterr().err


def test_missing_path(tmp_path, capsys):
    assert run("train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "o") == 3
    assert "IoError" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert run("train", "--out", tmp_path) == 2
    assert run("nonsense") == 2
    assert run("predict", "--k", "x") == 2


def test_config_env_flag_precedence(data, tmp_path, monkeypatch):
    ini = tmp_path / "c.ini"
    ini.write_text(f"[specnovo]\nseed = 5\n[train]\ndata = {data / 'train.jsonl'}\nepochs = 1\n"
                   f"preset = micro\nmax_peaks = 4\nout = {tmp_path / 'o'}\n")

    def seed_used(*extra):
        assert run("train", "--config", ini, *extra) == 0
        return json.loads((tmp_path / "o" / "config.json").read_text())["settings"]["seed"]

    assert seed_used() == 5
    monkeypatch.setenv("SPECNOVO_SEED", "7")
    assert seed_used() == 7
    assert seed_used("--seed", "9") == 9


def test_bad_env_value(data, tmp_path, monkeypatch):
    monkeypatch.setenv("SPECNOVO_EPOCHS", "many")
    assert run("train", "--data", data / "train.jsonl", "--out", tmp_path) == 2


def test_ttt_command(data, trained, tmp_path):
    rc = run("ttt", "--checkpoint", trained, "--pool", data / "train.jsonl", "--extend-pool", data / "ext.jsonl",
             "--test", data / "test.jsonl", "--out", tmp_path, "--patience", "2", "--neighbors", "3",
             "--max-peaks", "4", "--lr", "0")
    assert rc == 0
    manifest = json.loads((tmp_path / "pool_manifest.json").read_text())
    assert [s["name"] for s in manifest["sources"]] == [str(data / "train.jsonl"), str(data / "ext.jsonl")]
    assert manifest["duplicates"] == 5 and manifest["total"] == 12 + 3
    last = json.loads((tmp_path / "trace.jsonl").read_text().splitlines()[-1])
    assert last["final"] and last["reason"] == "saturated"
    a, b = load_checkpoint(trained), load_checkpoint(tmp_path / "model.ckpt")
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert b.phase == "ttt"


def test_ttt_width_mismatch(data, trained, tmp_path, capsys):
    rc = run("ttt", "--checkpoint", trained, "--pool", data / "train.jsonl", "--test", data / "test.jsonl",
             "--out", tmp_path, "--fingerprint-width", "2048")
    assert rc == 3 and "CheckpointError" in capsys.readouterr().err


def test_predict_and_evaluate(data, trained, tmp_path, capsys):
    src = tmp_path / "in.jsonl"
    lines = (data / "train.jsonl").read_text().splitlines()[:3]
    lines.insert(1, '{"formula": "C2H6Xx", "spectrum": [[10.0, 1.0]]}')
    src.write_text("\n".join(lines) + "\n")
    args = ["predict", "--checkpoint", trained, "--data", src, "--k", "2", "--beam", "3", "--max-peaks", "4"]
    assert run(*args, "--out", tmp_path / "p1") == 0
    assert run(*args, "--out", tmp_path / "p2", "--workers", "3") == 0
    a = (tmp_path / "p1" / "predictions.jsonl").read_bytes()
    assert a == (tmp_path / "p2" / "predictions.jsonl").read_bytes()
    recs = [json.loads(x) for x in a.decode().splitlines()]
    assert len(recs) == 4 and recs[1]["error"] == "FormulaError" and recs[1]["line"] == 2
    assert all(len(r["candidates"]) <= 2 for r in recs if "error" not in r)

    capsys.readouterr()
    assert run("evaluate", "--predictions", tmp_path / "p1" / "predictions.jsonl", "--out", tmp_path / "e",
               "--k", "2") == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    assert report["n_sets"] == 3 and report["n_error_records"] == 1 and report["k"] == 2
    assert "accuracy" in capsys.readouterr().out
    assert (tmp_path / "e" / "report.txt").exists()


def test_evaluate_all_exact(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text('{"target": "CCO", "candidates": ["OCC"]}\n{"target": "c1ccccc1", "candidates": ["c1ccccc1"]}\n')
    assert run("evaluate", "--predictions", p, "--out", tmp_path / "e") == 0
    r = json.loads((tmp_path / "e" / "report.json").read_text())
    assert r["top1_accuracy"] == r["topk_accuracy"] == 1.0 and r["mean_mces_top1"] == 0.0


def test_evaluate_errors(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text("")
    assert run("evaluate", "--predictions", p, "--out", tmp_path / "e") == 3
    p.write_text('{"candidates": ["CCO"]}\n')
    assert run("evaluate", "--predictions", p, "--out", tmp_path / "e") == 3


def test_ingest_mgf(tmp_path):
    mgf = tmp_path / "a.mgf"
    mgf.write_text("BEGIN IONS\nFORMULA=CH4O\nSMILES=CO\n33.0 10\n15.0 3\nEND IONS\n")
    assert run("ingest-mgf", "--mgf", mgf, "--out", tmp_path / "o") == 0
    (line,) = (tmp_path / "o" / "records.jsonl").read_text().splitlines()
    assert json.loads(line)["spectrum"] == [[15.0, 3.0], [33.0, 10.0]]


def test_numerics_exit_code(data, trained, tmp_path, monkeypatch):
    from specnovo import cli
    from specnovo.errors import NumericsError

    def boom(*a, **k):
        raise NumericsError("non-finite gradient in tensor 'out.W'")

    monkeypatch.setattr(cli, "train_step", boom)
    assert run("train", "--data", data / "train.jsonl", "--out", tmp_path, *FAST) == 4


@pytest.mark.slow
def test_train_toy_overfit(tmp_path):
    smi = synth.molecule_set(0, 32, "A", 4, 8)
    write_records(tmp_path / "d.jsonl", synth.make_records(smi, seed=1))
    rc = run("train", "--data", tmp_path / "d.jsonl", "--out", tmp_path / "o", "--preset", "toy",
             "--lr", "1e-3", "--gamma", "1.0", "--max-peaks", "8", "--epochs", "200",
             "--target-acc", "0.99", "--patience", "200")
    assert rc == 0
    log = [json.loads(x) for x in (tmp_path / "o" / "train_log.jsonl").read_text().splitlines()]
    assert max(r["val_token_acc"] for r in log if "val_token_acc" in r) >= 0.99
