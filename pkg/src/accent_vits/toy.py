"""Synthetic multi-accent corpus for smoke tests and overfit runs.

Each phoneme renders as a short harmonic tone whose pitch depends on the
phoneme and whose spectral tilt depends on the speaker.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from accent_vits.config import HOP_LENGTH, SAMPLE_RATE
from accent_vits.dsp import save_wav
from accent_vits.frontend import PAD, PhonemeSequence, Registry, save_alignment

TOY_ACCENTS = {
    "mandarin": {"symbols": ["a", "b", "c", "d", "e"], "rules": {"a": "a", "b": "b", "c": "c", "d": "d", "e": "e"}},
    "sichuan": {"symbols": ["a", "c", "e", "f"], "rules": {"a": "a", "b": "c", "c": "c", "d": "f", "e": "e"}},
}


def toy_registry() -> Registry:
    reg = Registry()
    for name, spec in TOY_ACCENTS.items():
        reg.register_inventory(name, [PAD, *spec["symbols"]])
        reg.set_rules(name, spec["rules"])
    return reg.freeze()


def render(seq: PhonemeSequence, speaker: int, seed: int = 0, noise: float = 0.0) -> np.ndarray:
    """Tone sequence of exactly sum(durations) * hop samples."""
    rng = np.random.default_rng(seed)
    pieces = []
    tilt = 0.35 + 0.25 * speaker
    phase = 0.0
    for pid, d in zip(seq.ids, seq.durations):
        n = d * HOP_LENGTH
        f0 = 140.0 + 37.0 * (pid % 11)
        t = np.arange(n) / SAMPLE_RATE
        x = np.zeros(n)
        for h in range(1, 5):
            x += (tilt ** (h - 1)) * np.sin(2 * np.pi * f0 * h * t + phase * h)
        phase += 2 * np.pi * f0 * n / SAMPLE_RATE
        env = np.minimum(1.0, np.minimum(np.arange(n) + 1, n - np.arange(n)) / 80.0)
        pieces.append(x * env)
    y = np.concatenate(pieces)
    y = 0.3 * y / max(np.max(np.abs(y)), 1e-9)
    y += noise * rng.standard_normal(y.shape[0])
    return np.clip(y, -1.0, 1.0).astype(np.float32)


@dataclass
class ToyUtterance:
    utt_id: str
    speaker: str
    accent: str
    text: str
    durations: list[int]


DEFAULT_UTTS = [
    ToyUtterance("m001", "spk_m", "mandarin", "abcde", [3, 5, 2, 6, 4]),
    ToyUtterance("s001", "spk_s", "sichuan", "aceda", [4, 2, 6, 3, 5]),
]


def write_corpus(root: str | Path, utts: list[ToyUtterance] | None = None, seed: int = 0) -> tuple[Registry, Path]:
    """Write wavs, alignments, rule tables and a manifest under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    reg = toy_registry()
    utts = DEFAULT_UTTS if utts is None else utts
    for name in TOY_ACCENTS:
        lines = [f"{ch}\t{sym}" for ch, sym in reg.rules(name).items()]
        (root / f"{name}.g2p").write_text("\n".join(lines) + "\n", encoding="utf-8")
    speakers: dict[str, int] = {}
    lines = []
    for i, u in enumerate(utts):
        spk = speakers.setdefault(u.speaker, len(speakers))
        seq = reg.g2p(u.text, u.accent)
        seq = PhonemeSequence(seq.accent, seq.ids, list(u.durations))
        save_wav(root / f"{u.utt_id}.wav", render(seq, spk, seed + i))
        save_alignment(root / f"{u.utt_id}.dur", seq, reg)
        lines.append(f"{u.utt_id}|{u.speaker}|{u.accent}|{u.utt_id}.wav|{u.utt_id}.dur|PSEUDO")
    manifest = root / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return reg, manifest


def registry_from_dir(root: str | Path) -> Registry:
    """Rebuild the toy registry, then overlay any ``*.g2p`` tables found in ``root``."""
    reg = Registry()
    for name, spec in TOY_ACCENTS.items():
        reg.register_inventory(name, [PAD, *spec["symbols"]])
        reg.set_rules(name, spec["rules"])
    for p in sorted(Path(root).glob("*.g2p")):
        if p.stem in TOY_ACCENTS:
            reg.load_rules(p)
    return reg.freeze()


@dataclass
class OverfitSummary:
    recon: list[float]
    recon_step50: float
    recon_final: float
    duration_mae: float
    seconds: float
    trainer: object = field(default=None, repr=False)
    utts: list = field(default_factory=list, repr=False)

    @property
    def ratio(self) -> float:
        return self.recon_final / self.recon_step50


def overfit(
    steps: int = 2000,
    mode: str = "full",
    seed: int = 1234,
    workdir: str | Path | None = None,
    callback=None,
    **model_overrides,
) -> OverfitSummary:
    """Train the toy preset on the default corpus and summarise the recon curve.

    The step-50 and final values are 10-step means (steps 46-55 and the last
    10) so a single noisy GAN step cannot decide the comparison.
    """
    import tempfile
    import time

    from accent_vits.config import ModelConfig, TrainConfig
    from accent_vits.evaluation import training_duration_mae
    from accent_vits.training import Trainer, load_manifest, load_utterance

    if steps < 60:
        raise ValueError("need at least 60 steps to compare against step 50")
    with tempfile.TemporaryDirectory() as tmp:
        reg, manifest = write_corpus(workdir or tmp)
        utts = [load_utterance(r, reg) for r in load_manifest(manifest, reg)]
    trainer = Trainer(
        ModelConfig.toy(n_symbols=reg.n_symbols, n_speakers=2, ablation=mode, **model_overrides),
        TrainConfig.toy(steps=steps, seed=seed),
        reg,
    )
    t0 = time.time()
    reports = trainer.fit(utts, steps, callback=callback)
    recon = [r.recon for r in reports]
    return OverfitSummary(
        recon=recon,
        recon_step50=float(np.mean(recon[45:55])),
        recon_final=float(np.mean(recon[-10:])),
        duration_mae=training_duration_mae(trainer.gen, utts),
        seconds=time.time() - t0,
        trainer=trainer,
        utts=utts,
    )
