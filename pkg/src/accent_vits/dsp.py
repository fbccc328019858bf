"""Audio I/O, the fixed mel front end, and bottleneck-feature ingestion."""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.signal import resample_poly
from torch import nn

from accent_vits.config import BN_DIM, HOP_LENGTH, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WIN_LENGTH


class AudioError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate != SAMPLE_RATE:
            raise AudioError(f"sample rate {self.sample_rate} != {SAMPLE_RATE}")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise AudioError("samples exceed [-1, 1]")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, 80) log amplitude
    frame_length_ms: float = 1000.0 * WIN_LENGTH / SAMPLE_RATE
    frame_shift_ms: float = 1000.0 * HOP_LENGTH / SAMPLE_RATE

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS or self.frames.shape[0] < 1:
            raise AudioError(f"mel must be T x {N_MELS}, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise AudioError("mel contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class BnFeature:
    frames: np.ndarray  # (T_bn, 512)
    source: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != BN_DIM or self.frames.shape[0] < 1:
            raise AudioError(f"BN feature must be T x {BN_DIM}, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise AudioError("BN feature contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


# --------------------------------------------------------------------- audio


def load_wav(path: str | Path) -> Waveform:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            n_channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as e:
        # the stdlib reader only accepts WAVE_FORMAT_PCM
        raise AudioError(f"{path}: cannot read as PCM WAV ({e})") from None
    if n_channels != 1:
        raise AudioError(f"{path}: expected mono, got {n_channels} channels")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if rate != SAMPLE_RATE:
        g = math.gcd(rate, SAMPLE_RATE)
        x = resample_poly(x, SAMPLE_RATE // g, rate // g).astype(np.float32)
        x = np.clip(x, -1.0, 1.0)
    return Waveform(x, SAMPLE_RATE)


def save_wav(path: str | Path, w: Waveform | np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float32)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())


# ----------------------------------------------------------------------- mel


def _hz_to_mel(f: np.ndarray) -> np.ndarray:
    # Slaney scale: linear below 1 kHz, logarithmic above
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = f / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, mels)


def _mel_to_hz(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = math.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(
    sr: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS, fmin: float = 0.0, fmax: float | None = None
) -> np.ndarray:
    """Slaney-normalised triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sr / 2 if fmax is None else fmax
    fft_freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    weights *= (2.0 / (hz_pts[2:] - hz_pts[:-2]))[:, None]
    return weights.astype(np.float32)


def n_frames_for(n_samples: int) -> int:
    return n_samples // HOP_LENGTH + 1


class MelExtractor(nn.Module):
    """Fixed STFT -> mel -> log layer; differentiable, no trainable weights.

    Hann window of 800 samples zero-padded to a 1024-point FFT, hop 200,
    centered with reflect padding (zero padding when the input is too short
    to reflect).
    """

    def __init__(self) -> None:
        super().__init__()
        self.register_buffer("window", torch.hann_window(WIN_LENGTH), persistent=False)
        self.register_buffer("basis", torch.from_numpy(mel_filterbank()), persistent=False)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """(B, N) or (B, 1, N) samples -> (B, 80, N // 200 + 1) log-mel."""
        if y.dim() == 3:
            y = y.squeeze(1)
        n = y.shape[-1]
        if n < HOP_LENGTH:
            raise AudioError(f"waveform of {n} samples is shorter than one hop")
        pad = N_FFT // 2
        mode = "reflect" if n > pad else "constant"
        y = F.pad(y.unsqueeze(1), (pad, pad), mode=mode).squeeze(1)
        spec = torch.stft(
            y,
            n_fft=N_FFT,
            hop_length=HOP_LENGTH,
            win_length=WIN_LENGTH,
            window=self.window.to(y.dtype),
            center=False,
            return_complex=True,
        )
        mag = spec.abs()
        mel = torch.matmul(self.basis.to(mag.dtype), mag)
        return torch.log(torch.clamp(mel, min=LOG_FLOOR))


_EXTRACTOR: MelExtractor | None = None


def mel_extract(w: Waveform) -> MelSpectrogram:
    global _EXTRACTOR
    if w.sample_rate != SAMPLE_RATE:
        raise AudioError(f"sample rate {w.sample_rate} != {SAMPLE_RATE}")
    if _EXTRACTOR is None:
        _EXTRACTOR = MelExtractor()
    with torch.no_grad():
        mel = _EXTRACTOR(torch.from_numpy(w.samples).unsqueeze(0))[0]
    return MelSpectrogram(mel.T.numpy())


# ------------------------------------------------------------------------ BN


def interpolate_bn(bn: BnFeature, target_t: int) -> BnFeature:
    """Linear resampling along time with endpoints pinned to the source endpoints."""
    if target_t < 1:
        raise AudioError(f"target length {target_t} < 1")
    src = bn.frames
    t_bn = src.shape[0]
    if target_t == t_bn:
        return BnFeature(src.copy(), dict(bn.source))
    if t_bn == 1 or target_t == 1:
        out = np.repeat(src[:1], target_t, axis=0)
        return BnFeature(out, dict(bn.source))
    pos = np.linspace(0.0, t_bn - 1, target_t)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, t_bn - 2)
    frac = (pos - lo)[:, None]
    out = (1.0 - frac) * src[lo].astype(np.float64) + frac * src[lo + 1].astype(np.float64)
    out[0] = src[0]
    out[-1] = src[-1]
    return BnFeature(out.astype(np.float32), dict(bn.source))


def pseudo_bn(mel: MelSpectrogram, seed: int = 0) -> BnFeature:
    """Deterministic stand-in for an ASR encoder: tanh of a fixed random projection."""
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((N_MELS, BN_DIM)) / math.sqrt(N_MELS)
    bias = 0.1 * rng.standard_normal(BN_DIM)
    x = (mel.frames.astype(np.float64) + 5.0) / 5.0
    out = np.tanh(x @ proj + bias)
    return BnFeature(out.astype(np.float32), {"pseudo_seed": seed})


def write_bn(path_stem: str | Path, bn: BnFeature, utt_id: str) -> tuple[Path, Path]:
    """Write ``<stem>.bn`` (float32 LE, row-major) and its ``.bn.hdr`` sidecar."""
    stem = Path(path_stem)
    data = stem.with_name(stem.name + ".bn") if stem.suffix != ".bn" else stem
    hdr = data.with_name(data.name + ".hdr")
    data.write_bytes(np.ascontiguousarray(bn.frames, dtype="<f4").tobytes())
    hdr.write_text(f"{utt_id} {bn.n_frames} {BN_DIM}\n", encoding="utf-8")
    return data, hdr


def read_bn(path: str | Path) -> BnFeature:
    data = Path(path)
    hdr = data.with_name(data.name + ".hdr")
    try:
        fields = hdr.read_text(encoding="utf-8").split()
    except FileNotFoundError:
        raise AudioError(f"missing BN header {hdr}") from None
    if len(fields) != 3:
        raise AudioError(f"{hdr}: expected '<utt_id> <T_bn> {BN_DIM}'")
    utt_id, t_bn, dim = fields[0], int(fields[1]), int(fields[2])
    if dim != BN_DIM:
        raise AudioError(f"{hdr}: BN dim {dim} != {BN_DIM}")
    raw = np.frombuffer(data.read_bytes(), dtype="<f4")
    if raw.size != t_bn * dim:
        raise AudioError(f"{data}: {raw.size} floats, header says {t_bn}x{dim}")
    return BnFeature(raw.reshape(t_bn, dim).astype(np.float32), {"utt_id": utt_id})
