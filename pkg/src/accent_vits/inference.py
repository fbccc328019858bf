"""Text-to-wave synthesis along the accent-transfer path."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from accent_vits.checkpoint import CheckpointError, read_checkpoint
from accent_vits import checkpoint as ckpt_io
from accent_vits.config import ModelConfig
from accent_vits.dsp import Waveform
from accent_vits.frontend import AccentId, FrontendError, PhonemeSequence, Registry, parse_alignment
from accent_vits.model import AccentVITS
from accent_vits.training import SpeakerTable

DEFAULT_NOISE = 0.667


@dataclass
class SynthesisResult:
    waveform: Waveform
    durations: list[int]


class Synthesizer:
    """Read-only generator snapshot plus the phoneme registry and speaker table."""

    def __init__(self, gen: AccentVITS, registry: Registry, speakers: SpeakerTable):
        self.gen = gen.eval()
        self.registry = registry
        self.speakers = speakers
        if registry.n_symbols > gen.cfg.n_symbols:
            raise CheckpointError("registry has more symbols than the model's embedding table")

    @classmethod
    def from_checkpoint(cls, path: str | Path, expected: ModelConfig | None = None) -> Synthesizer:
        ck = read_checkpoint(path)
        cfg = ModelConfig.from_dict(ck.model_config)
        if expected is not None and expected.to_dict() != cfg.to_dict():
            raise CheckpointError(f"{path}: model config differs from the requested one")
        if not ck.meta.get("registry") or not ck.meta.get("speakers"):
            raise CheckpointError(f"{path}: checkpoint carries no phoneme registry / speaker table")
        gen = AccentVITS(cfg)
        ckpt_io.load_module("gen", gen, ck.tensors)
        return cls(gen, Registry.from_dict(ck.meta["registry"]), SpeakerTable(ck.meta["speakers"]))

    def _speaker_index(self, speaker: str | int) -> int:
        if isinstance(speaker, str):
            return self.speakers.get(speaker).index
        if not 0 <= speaker < self.gen.cfg.n_speakers:
            raise IndexError(f"speaker index {speaker} out of range")
        return speaker

    def _run(self, seq: PhonemeSequence, speaker, durations, noise_pr: float, noise_ac: float, seed: int | None) -> SynthesisResult:
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        ids = torch.tensor(seq.ids, dtype=torch.long)
        y, d = self.gen.infer(ids, self._speaker_index(speaker), durations, noise_pr, noise_ac, gen)
        return SynthesisResult(Waveform(y.clamp(-1, 1).numpy()), d.tolist())

    def synthesize(
        self,
        text_or_seq: str | PhonemeSequence,
        accent: AccentId | str,
        speaker: str | int,
        noise_pr: float = DEFAULT_NOISE,
        noise_ac: float = DEFAULT_NOISE,
        seed: int | None = 0,
    ) -> SynthesisResult:
        """Predict durations, then sample the hierarchical prior for ``speaker``."""
        if isinstance(text_or_seq, str):
            seq = self.registry.g2p(text_or_seq, accent)
        else:
            seq = text_or_seq
            if seq.accent.name != self.registry.accent(accent.name if isinstance(accent, AccentId) else accent).name:
                raise FrontendError("phoneme sequence accent differs from the requested accent")
        return self._run(seq, speaker, None, noise_pr, noise_ac, seed)

    def synthesize_with_given_durations(
        self,
        seq: PhonemeSequence,
        speaker: str | int,
        durations: list[int] | None = None,
        noise_pr: float = DEFAULT_NOISE,
        noise_ac: float = DEFAULT_NOISE,
        seed: int | None = 0,
    ) -> SynthesisResult:
        durations = seq.durations if durations is None else durations
        if durations is None:
            raise FrontendError("no durations given")
        if len(durations) != len(seq.ids):
            raise FrontendError(f"{len(durations)} durations for {len(seq.ids)} phonemes")
        if any(d <= 0 for d in durations):
            raise FrontendError("durations must be positive")
        return self._run(seq, speaker, list(durations), noise_pr, noise_ac, seed)

    def predict_durations(self, seq: PhonemeSequence) -> list[float]:
        with torch.no_grad():
            ids = torch.tensor(seq.ids, dtype=torch.long).unsqueeze(0)
            mask = torch.ones(1, 1, ids.shape[1])
            return self.gen.duration_predict(self.gen.text_encode(ids, mask), mask)[0].tolist()


def read_phoneme_file(path: str | Path, registry: Registry, accent: AccentId | str) -> PhonemeSequence:
    """One symbol per line, optionally followed by a frame count (alignment format)."""
    text = Path(path).read_text(encoding="utf-8")
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if rows and all(len(r) == 1 for r in rows):
        inv = registry.inventory(accent)
        return PhonemeSequence(inv.accent, [inv.id_of(r[0]) for r in rows])
    return parse_alignment(text, registry, accent, source=str(path))
