import numpy as np
import pytest

from accent_vits.checkpoint import CheckpointError
from accent_vits.config import TrainConfig
from accent_vits.frontend import FrontendError
from accent_vits.inference import Synthesizer, read_phoneme_file
from accent_vits.training import SpeakerTable, Trainer
from tests.conftest import toy_model_config


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory, toy_corpus):
    _, registry, _ = toy_corpus
    tr = Trainer(toy_model_config(registry), TrainConfig.toy(), registry, SpeakerTable(["spk_m", "spk_s"]))
    path = tmp_path_factory.mktemp("inf") / "model.ckpt"
    tr.save(path)
    return path


@pytest.fixture(scope="module")
def synth(ckpt):
    return Synthesizer.from_checkpoint(ckpt)


def test_zero_noise_is_bit_reproducible(ckpt):
    a = Synthesizer.from_checkpoint(ckpt).synthesize("abcde", "mandarin", "spk_m", 0.0, 0.0, seed=1)
    b = Synthesizer.from_checkpoint(ckpt).synthesize("abcde", "mandarin", "spk_m", 0.0, 0.0, seed=2)
    assert np.array_equal(a.waveform.samples, b.waveform.samples)
    assert a.durations == b.durations


def test_seeded_noise_is_reproducible(synth):
    a = synth.synthesize("abc", "mandarin", "spk_m", seed=3).waveform.samples
    b = synth.synthesize("abc", "mandarin", "spk_m", seed=3).waveform.samples
    c = synth.synthesize("abc", "mandarin", "spk_m", seed=4).waveform.samples
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_given_durations_fix_length(synth, registry):
    seq = registry.g2p("ab", "mandarin")
    res = synth.synthesize_with_given_durations(seq, "spk_m", [2, 3])
    assert len(res.waveform.samples) == 1000
    assert res.durations == [2, 3]


def test_predicted_durations_set_length(synth):
    res = synth.synthesize("abcde", "mandarin", 0)
    assert all(d >= 1 for d in res.durations)
    assert len(res.waveform.samples) == 200 * sum(res.durations)
    assert np.abs(res.waveform.samples).max() <= 1.0


@pytest.mark.parametrize("accent", ["mandarin", "sichuan"])
@pytest.mark.parametrize("speaker", ["spk_m", "spk_s"])
def test_cross_accent_and_speaker(synth, accent, speaker):
    res = synth.synthesize("abcde", accent, speaker, seed=0)
    assert np.isfinite(res.waveform.samples).all()
    assert len(res.durations) == 5


def test_duration_length_mismatch(synth, registry):
    seq = registry.g2p("abc", "mandarin")
    with pytest.raises(FrontendError, match="2 durations for 3"):
        synth.synthesize_with_given_durations(seq, "spk_m", [2, 3])
    with pytest.raises(FrontendError):
        synth.synthesize_with_given_durations(seq, "spk_m", [2, 0, 1])


def test_unknown_speaker_and_accent(synth):
    with pytest.raises(Exception, match="nobody"):
        synth.synthesize("abc", "mandarin", "nobody")
    with pytest.raises(FrontendError):
        synth.synthesize("abc", "klingon", "spk_m")


def test_checkpoint_without_registry(tmp_path, registry):
    tr = Trainer(toy_model_config(registry), TrainConfig.toy())
    tr.save(tmp_path / "bare.ckpt")
    with pytest.raises(CheckpointError, match="registry"):
        Synthesizer.from_checkpoint(tmp_path / "bare.ckpt")


def test_read_phoneme_file_formats(tmp_path, registry):
    p = tmp_path / "p.txt"
    p.write_text("a\nc\n")
    seq = read_phoneme_file(p, registry, "sichuan")
    assert [registry.decode(i)[1] for i in seq.ids] == ["a", "c"] and seq.durations is None
    p.write_text("a 2\nc 4\n")
    assert read_phoneme_file(p, registry, "sichuan").durations == [2, 4]


def test_predict_durations_nonnegative(synth, registry):
    d = synth.predict_durations(registry.g2p("abcde", "mandarin"))
    assert len(d) == 5 and min(d) >= 0
