import csv
import json
import subprocess
import sys

import pytest

from accent_vits.cli import main, registry_for_manifest
from accent_vits.dsp import load_wav


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-toy", "--out", str(root / "data")]) == 0
    assert main(["train", "--toy", "--data", str(root / "data" / "manifest.txt"), "--out", str(root / "run"), "--steps", "3"]) == 0
    return root


def test_make_toy_layout(trained):
    data = trained / "data"
    names = sorted(p.name for p in data.iterdir())
    assert names == ["m001.dur", "m001.wav", "mandarin.g2p", "manifest.txt", "s001.dur", "s001.wav", "sichuan.g2p"]


def test_registry_matches_toy_inventories(trained):
    reg = registry_for_manifest(trained / "data" / "manifest.txt")
    assert reg.inventory("mandarin").symbols == ("<pad>", "a", "b", "c", "d", "e")
    assert reg.inventory("sichuan").symbols == ("<pad>", "a", "c", "e", "f")


def test_train_outputs(trained):
    run = trained / "run"
    rows = [json.loads(line) for line in (run / "train.log").read_text().splitlines()]
    assert [r["step"] for r in rows] == [1, 2, 3]
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["model"]["ablation"] == "full" and cfg["train"]["steps"] == 3
    assert (run / "last.ckpt").exists()


def test_train_resume_continues(trained):
    run = trained / "run"
    data = trained / "data" / "manifest.txt"
    assert main(["train", "--toy", "--data", str(data), "--out", str(run), "--steps", "4", "--resume"]) == 0
    steps = [json.loads(line)["step"] for line in (run / "train.log").read_text().splitlines()]
    assert steps == [1, 2, 3, 4]


def test_synth_text(trained, tmp_path):
    out = tmp_path / "a.wav"
    rc = main(["synth", "--checkpoint", str(trained / "run" / "last.ckpt"), "--accent", "sichuan",
               "--speaker", "spk_m", "--text", "abcde", "--out", str(out)])
    assert rc == 0
    w = load_wav(out)
    assert len(w.samples) > 0 and len(w.samples) % 200 == 0


def test_synth_alignment_file(trained, tmp_path):
    out = tmp_path / "b.wav"
    rc = main(["synth", "--checkpoint", str(trained / "run" / "last.ckpt"), "--accent", "mandarin",
               "--speaker", "spk_s", "--phonemes", str(trained / "data" / "m001.dur"), "--out", str(out)])
    assert rc == 0
    assert len(load_wav(out).samples) == 20 * 200


def test_eval_report(trained, tmp_path):
    out = tmp_path / "report.csv"
    rc = main(["eval", "--checkpoint", str(trained / "run" / "last.ckpt"),
               "--manifest", str(trained / "data" / "manifest.txt"), "--out", str(out)])
    assert rc == 0
    with open(out, newline="") as f:
        assert [r["accent"] for r in csv.DictReader(f)] == ["mandarin", "sichuan", "average"]


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "accent_vits.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("train", "synth", "eval", "make-toy"):
        assert cmd in res.stdout


def test_bad_ablation_is_rejected():
    with pytest.raises(SystemExit):
        main(["train", "--data", "x", "--out", "y", "--ablation", "nothing"])
