"""Objective metrics: duration MAE and speaker cosine similarity."""
from __future__ import annotations

import csv
import shlex
import subprocess
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from accent_vits.dsp import Waveform, load_wav, mel_extract, save_wav
from accent_vits.frontend import load_alignment

REPORT_COLUMNS = ["accent", "n_utts", "duration_mae", "speaker_cosine"]
UTT_COLUMNS = ["utt_id", "accent", "speaker", "duration_mae", "speaker_cosine"]

Embedder = Callable[[Waveform], np.ndarray]


class EvalError(ValueError):
    pass


def duration_mae(pred, ref) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise EvalError(f"length mismatch {pred.shape} vs {ref.shape}")
    return float(np.mean(np.abs(pred - ref)))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise EvalError(f"dimension mismatch {a.shape} vs {b.shape}")
    saa, sbb = np.dot(a, a), np.dot(b, b)
    if saa == 0 or sbb == 0:
        raise EvalError("zero-norm embedding")
    # one square root of the product keeps parallel vectors at exactly +-1
    return float(np.clip(np.dot(a, b) / np.sqrt(saa * sbb), -1.0, 1.0))


def mel_stats_embedding(w: Waveform) -> np.ndarray:
    """Per-mel-bin mean and std over frames (160 dims)."""
    frames = mel_extract(w).frames.astype(np.float64)
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0)])


def external_embedder(cmd: str) -> Embedder:
    """Wrap a command that reads a WAV path on stdin and prints floats."""
    argv = shlex.split(cmd)

    def embed(w: Waveform) -> np.ndarray:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "in.wav"
            save_wav(path, w)
            res = subprocess.run(argv, input=str(path) + "\n", capture_output=True, text=True, check=True)
        vec = np.array([float(x) for x in res.stdout.split()])
        if vec.size == 0:
            raise EvalError(f"embedder {cmd!r} printed no values")
        return vec

    return embed


def get_embedder(spec: str) -> Embedder:
    if spec == "builtin":
        return mel_stats_embedding
    if spec.startswith("external:"):
        return external_embedder(spec[len("external:") :])
    raise EvalError(f"unknown embedder backend {spec!r}")


def embed_speaker(w: Waveform, backend: str | Embedder = "builtin") -> np.ndarray:
    fn = get_embedder(backend) if isinstance(backend, str) else backend
    return np.asarray(fn(w), dtype=np.float64)


@torch.no_grad()
def training_duration_mae(gen, utts) -> float:
    """MAE of raw duration predictions on already-loaded utterances."""
    was_training = gen.training
    gen.eval()
    errs = []
    for u in utts:
        ids = torch.tensor(u.phonemes.ids).unsqueeze(0)
        mask = torch.ones(1, 1, ids.shape[1])
        d_hat = gen.duration_predict(gen.text_encode(ids, mask), mask)[0].numpy()
        errs.extend(np.abs(d_hat - np.asarray(u.phonemes.durations)))
    gen.train(was_training)
    return float(np.mean(errs))


@dataclass
class UttScore:
    utt_id: str
    accent: str
    speaker: str
    duration_mae: float
    speaker_cosine: float


def aggregate(scores: Sequence[UttScore]) -> list[dict]:
    """Per-accent rows (sorted) then an ``average`` row over all utterances."""
    by_accent: dict[str, list[UttScore]] = defaultdict(list)
    for s in scores:
        by_accent[s.accent].append(s)
    rows = []
    for acc in sorted(by_accent):
        items = by_accent[acc]
        rows.append({
            "accent": acc,
            "n_utts": len(items),
            "duration_mae": float(np.mean([s.duration_mae for s in items])),
            "speaker_cosine": float(np.mean([s.speaker_cosine for s in items])),
        })
    if scores:
        rows.append({
            "accent": "average",
            "n_utts": len(scores),
            "duration_mae": float(np.mean([s.duration_mae for s in scores])),
            "speaker_cosine": float(np.mean([s.speaker_cosine for s in scores])),
        })
    return rows


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def evaluate_manifest(
    records,
    synth,
    out_csv: str | Path,
    embedder: str | Embedder = "builtin",
    noise_pr: float = 0.667,
    noise_ac: float = 0.667,
    seed: int = 0,
) -> list[dict]:
    """Synthesize every record with its own speaker and accent, score, and write CSVs.

    Writes ``out_csv`` (aggregate rows) and ``<out_csv stem>.utts.csv``
    (one row per utterance).
    """
    out_csv = Path(out_csv)
    emb = get_embedder(embedder) if isinstance(embedder, str) else embedder
    scores = []
    for rec in records:
        ref = load_alignment(rec.dur_path, synth.registry, rec.accent)
        res = synth.synthesize(ref, rec.accent, rec.speaker.name, noise_pr, noise_ac, seed)
        mae = duration_mae(res.durations, ref.durations)
        cos = cosine_similarity(emb(res.waveform), emb(load_wav(rec.wav_path)))
        scores.append(UttScore(rec.utt_id, rec.accent.name, rec.speaker.name, mae, cos))
    rows = aggregate(scores)
    _write_csv(out_csv, REPORT_COLUMNS, rows)
    _write_csv(out_csv.with_suffix(".utts.csv"), UTT_COLUMNS, [s.__dict__ for s in scores])
    return rows
