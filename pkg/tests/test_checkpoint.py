import struct

import pytest
import torch

from accent_vits.checkpoint import MAGIC, Checkpoint, CheckpointError, read_checkpoint, write_checkpoint
from accent_vits.config import TrainConfig
from accent_vits.training import Trainer, make_batch
from tests.conftest import toy_model_config


@pytest.fixture
def trained(tmp_path, registry, toy_utts):
    tr = Trainer(toy_model_config(registry), TrainConfig.toy(), registry)
    tr.fit(toy_utts, 2)
    path = tmp_path / "a.ckpt"
    tr.save(path)
    return tr, path


def test_round_trip_is_bit_identical(trained):
    tr, path = trained
    back = Trainer.from_checkpoint(path)
    for a, b in [(tr.gen, back.gen), (tr.disc, back.disc)]:
        sa, sb = a.state_dict(), b.state_dict()
        assert sa.keys() == sb.keys()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert back.step == 2
    assert back.registry.to_dict() == tr.registry.to_dict()


def test_resumed_training_matches_uninterrupted(trained, registry, toy_utts):
    tr, path = trained
    Trainer.from_checkpoint(path)  # rewind the global torch generator to its saved state
    a = tr.fit(toy_utts, 2)
    resumed = Trainer.from_checkpoint(path)
    b = resumed.fit(toy_utts, 2)
    assert [r.total_g for r in a] == [r.total_g for r in b]
    assert resumed.step == 4
    assert resumed.opt_g.param_groups[0]["lr"] == tr.opt_g.param_groups[0]["lr"]


def test_config_mismatch_is_rejected(trained, registry):
    _, path = trained
    other = toy_model_config(registry, ablation="no_bn_both")
    with pytest.raises(CheckpointError, match="config"):
        Trainer.from_checkpoint(path, expected=other)
    tr = Trainer(other, TrainConfig.toy(), registry)
    with pytest.raises(CheckpointError):
        tr.load(path)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\0" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(p)


def test_version_mismatch(trained):
    _, path = trained
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 99"):
        read_checkpoint(path)


def test_truncated_payload(trained):
    _, path = trained
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 100])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(path)


def test_corrupt_header(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(MAGIC + struct.pack("<IQ", 1, 5) + b"{{{{{")
    with pytest.raises(CheckpointError, match="header"):
        read_checkpoint(p)


def test_layout(tmp_path):
    t = torch.arange(6, dtype=torch.float32).view(2, 3)
    p = tmp_path / "small.ckpt"
    write_checkpoint(p, Checkpoint({"a": 1}, None, 7, {"w": t}))
    raw = p.read_bytes()
    assert raw[:8] == MAGIC
    version, hlen = struct.unpack("<IQ", raw[8:20])
    assert version == 1
    assert raw[20 + hlen :] == t.numpy().astype("<f4").tobytes()
    back = read_checkpoint(p)
    assert back.step == 7 and torch.equal(back.tensors["w"], t)


def test_non_float32_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="float32"):
        write_checkpoint(tmp_path / "x.ckpt", Checkpoint({}, None, 0, {"i": torch.ones(2, dtype=torch.int64)}))
    assert not list(tmp_path.iterdir())  # nothing half-written


def test_failed_write_keeps_previous_file(trained, monkeypatch):
    tr, path = trained
    before = path.read_bytes()
    monkeypatch.setattr("accent_vits.checkpoint.os.replace", lambda *a: (_ for _ in ()).throw(OSError("disk full")))
    with pytest.raises(OSError):
        tr.save(path)
    assert path.read_bytes() == before
    assert [p.name for p in path.parent.iterdir()] == [path.name]


def test_step_counter_survives(trained, toy_utts):
    _, path = trained
    tr = Trainer.from_checkpoint(path)
    tr.train_step(make_batch(toy_utts, tr.train_cfg, tr.rng))
    assert tr.step == 3
