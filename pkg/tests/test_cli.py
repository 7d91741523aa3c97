import json
import subprocess
import sys

import pytest

from fcac.checkpoint import load_checkpoint
from fcac.harness.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synth", "--out", str(root / "data"), "--seed", "3", "--num-base-classes", "6",
                 "--n-way", "3", "--k-shot", "2", "--k-query", "4"]) == EXIT_OK
    cfg = {"manifest": "data/manifest.json", "pan_epochs": 2, "n_way": 3, "k_shot": 2, "k_query": 4}
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def run(data, *argv):
    return main([*argv, "--config", str(data / "cfg.json")])


def test_gen_synth_spec_file_and_flags(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps({"num_base_classes": 3, "num_sessions": 1, "n_way": 2}))
    assert main(["gen-synth", "--spec", str(tmp_path / "spec.json"), "--dim", "8", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["synth"]["dim"] == 8 and doc["base"]["classes"] == [0, 1, 2] and doc["n_way"] == 2
    (tmp_path / "spec.json").write_text(json.dumps({"colour": 1}))
    assert main(["gen-synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_run_protocol_writes_reports(data, capsys):
    out = data / "full"
    assert run(data, "run-protocol", "--out", str(out)) == EXIT_OK
    for name in ("report.json", "report.csv", "report.md", "timing.json", "final.ckpt", "prototypes.tsv"):
        assert (out / name).is_file()
    assert "| Both |" in capsys.readouterr().out
    assert load_checkpoint(out / "final.ckpt").store.session_index == 2


def test_staged_run_matches_single_run(data):
    assert run(data, "run-protocol", "--out", str(data / "one")) == EXIT_OK
    assert run(data, "train-base", "--out", str(data / "staged")) == EXIT_OK
    assert run(data, "run-incremental", "--out", str(data / "staged")) == EXIT_OK
    assert (data / "staged" / "session_1.ckpt").is_file() and (data / "staged" / "session_2.ckpt").is_file()
    assert (data / "one" / "report.json").read_bytes() == (data / "staged" / "report.json").read_bytes()


def test_until_and_evaluate(data):
    out = data / "partial"
    assert run(data, "train-base", "--out", str(out)) == EXIT_OK
    assert run(data, "run-incremental", "--out", str(out), "--until", "1") == EXIT_OK
    assert load_checkpoint(out / "final.ckpt").store.session_index == 1
    assert run(data, "evaluate", "--out", str(out), "--eval-mode", "plain") == EXIT_OK
    ev = json.loads((out / "evaluation.json").read_text())
    assert ev["session"] == 1 and ev["eval_mode"] == "plain"
    report = json.loads((out / "report.json").read_text())
    assert ev["accuracy"] == report["sessions"][-1]["alt_accuracy"]


def test_report_rerenders(data):
    out = data / "rerender"
    assert run(data, "run-protocol", "--out", str(data / "full2")) == EXIT_OK
    assert main(["report", "--report", str(data / "full2" / "report.json"), "--out", str(out)]) == EXIT_OK
    assert (out / "report.md").read_text() == (data / "full2" / "report.md").read_text()
    assert (out / "report.csv").read_text() == (data / "full2" / "report.csv").read_text()


def test_naive_mode_and_seed_override(data):
    assert run(data, "run-protocol", "--mode", "naive", "--seed", "5", "--out", str(data / "naive")) == EXIT_OK
    doc = json.loads((data / "naive" / "report.json").read_text())
    assert doc["config"]["mode"] == "naive" and doc["config"]["seed"] == 5 and doc["eval_mode"] == "plain"


def test_config_errors_exit_2(data, tmp_path, capsys):
    assert main(["run-protocol", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run-protocol", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    (tmp_path / "bad.json").write_text(json.dumps({"mode": "greedy"}))
    assert main(["run-protocol", "--config", str(tmp_path / "bad.json")]) == EXIT_CONFIG
    assert main(["report", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_runtime_errors_exit_3(data, tmp_path):
    (tmp_path / "broken.ckpt").write_bytes(b"FCACCKPT" + b"\0" * 20)
    assert run(data, "run-incremental", "--checkpoint", str(tmp_path / "broken.ckpt"), "--out", str(tmp_path)) \
        == EXIT_RUNTIME
    assert run(data, "evaluate", "--checkpoint", str(tmp_path / "absent.ckpt"), "--out", str(tmp_path)) \
        == EXIT_RUNTIME


def test_failed_session_exits_3(data, tmp_path):
    cfg = json.loads((data / "cfg.json").read_text())
    cfg.update(manifest=str(data / "data" / "manifest.json"))
    doc = json.loads((data / "data" / "manifest.json").read_text())
    for item in doc["sessions"][1]["train"]:
        item.pop("role")
    doc.pop("k_shot")
    doc["sessions"][1]["train"] = [i for i in doc["sessions"][1]["train"] if i["label"] is not None][::2]
    (data / "data" / "pool.json").write_text(json.dumps(doc))
    cfg["manifest"] = str(data / "data" / "pool.json")
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["run-protocol", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == EXIT_RUNTIME
    report = json.loads((tmp_path / "report.json").read_text())
    assert not report["completed"] and len(report["sessions"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fcac", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "run-protocol" in proc.stdout


def test_featurize_writes_one_cache_file_per_clip(tiny_audio_manifest, tmp_path):
    assert main(["featurize", "--manifest", str(tiny_audio_manifest), "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads(tiny_audio_manifest.read_text())
    clips = sum(len(s["train"]) + len(s["eval"]) for s in [doc["base"]] + doc["sessions"])
    assert len(list(tmp_path.glob("*.feat"))) == clips


def test_featurize_rejects_embedding_manifests(data, tmp_path):
    assert run(data, "featurize", "--out", str(tmp_path)) == EXIT_CONFIG
