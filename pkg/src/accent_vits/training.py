"""Data assembly, latent slicing, alternating GAN optimisation and checkpointing."""
from __future__ import annotations

import base64
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from accent_vits import checkpoint as ckpt_io
from accent_vits.config import HOP_LENGTH, ModelConfig, TrainConfig
from accent_vits.dsp import MelExtractor, interpolate_bn, load_wav, mel_extract, pseudo_bn, read_bn
from accent_vits.frontend import AccentId, FrontendError, PhonemeSequence, Registry, load_alignment
from accent_vits.losses import (
    LossReport,
    adv_d,
    adv_g,
    bn_mse,
    compose,
    duration_loss,
    feature_matching,
    kl_ac_with_flow,
    kl_gauss,
    recon_loss,
    weighted_total_g,
)
from accent_vits.model import build_models, slice_segments

logger = logging.getLogger(__name__)

PSEUDO = "PSEUDO"
MAX_LENGTH_MISMATCH = 2


class DataError(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class SpeakerId:
    name: str
    index: int


@dataclass
class UtteranceRecord:
    utt_id: str
    speaker: SpeakerId
    accent: AccentId
    wav_path: Path
    dur_path: Path
    bn_path: Path | None  # None means pseudo-BN


@dataclass
class Utterance:
    """Features of one record after length reconciliation (all share T frames)."""

    record: UtteranceRecord
    phonemes: PhonemeSequence
    wav: np.ndarray  # (T * 200,)
    mel: np.ndarray  # (T, 80)
    bn: np.ndarray  # (T, 512)

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]


class SpeakerTable:
    def __init__(self, names: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        for n in names:
            self.add(n)

    def add(self, name: str) -> SpeakerId:
        if name not in self._index:
            self._index[name] = len(self._index)
        return SpeakerId(name, self._index[name])

    def get(self, name: str) -> SpeakerId:
        try:
            return SpeakerId(name, self._index[name])
        except KeyError:
            raise DataError(f"speaker {name!r} is not registered") from None

    @property
    def names(self) -> list[str]:
        return list(self._index)

    def __len__(self) -> int:
        return len(self._index)


def load_manifest(
    path: str | Path,
    registry: Registry,
    speakers: SpeakerTable | None = None,
    *,
    check_files: bool = True,
) -> list[UtteranceRecord]:
    """Parse ``utt_id|speaker|accent|wav|dur|bn_or_PSEUDO`` lines.

    Relative paths resolve against the manifest's directory. When
    ``speakers`` is given, unknown speaker names are errors; otherwise a new
    table is grown in order of appearance (and can be read back from
    ``records[i].speaker``).
    """
    path = Path(path)
    root = path.parent
    grow = speakers is None
    table = SpeakerTable() if speakers is None else speakers
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.strip().split("|")
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 '|'-separated fields, got {len(parts)}")
        utt_id, spk, acc, wav, dur, bn = parts
        try:
            accent = registry.accent(acc)
        except FrontendError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        speaker = table.add(spk) if grow else table.get(spk)
        wav_p, dur_p = root / wav, root / dur
        bn_p = None if bn == PSEUDO else root / bn
        if check_files:
            for kind, p in (("wav", wav_p), ("alignment", dur_p), ("bn", bn_p)):
                if p is not None and not p.exists():
                    raise DataError(f"utterance {utt_id!r}: missing {kind} file {p}")
        records.append(UtteranceRecord(utt_id, speaker, accent, wav_p, dur_p, bn_p))
    return records


def _trim_durations(durs: list[int], excess: int) -> list[int]:
    durs = list(durs)
    i = len(durs) - 1
    while excess > 0 and i >= 0:
        take = min(excess, durs[i] - 1)
        durs[i] -= take
        excess -= take
        i -= 1
    if excess:
        raise DataError("cannot trim durations without dropping phonemes")
    return durs


def reconcile(
    phonemes: PhonemeSequence, wav: np.ndarray, mel: np.ndarray, bn: np.ndarray, utt_id: str = "?"
) -> tuple[PhonemeSequence, np.ndarray, np.ndarray, np.ndarray]:
    """Truncate the longer of (mel, durations) to the shorter and fit audio to T * hop."""
    t_mel = mel.shape[0]
    t_dur = sum(phonemes.durations)
    if abs(t_mel - t_dur) > MAX_LENGTH_MISMATCH:
        raise DataError(f"utterance {utt_id!r}: durations sum to {t_dur} but mel has {t_mel} frames")
    t = min(t_mel, t_dur)
    durs = _trim_durations(phonemes.durations, t_dur - t) if t_dur > t else list(phonemes.durations)
    n = t * HOP_LENGTH
    wav = wav[:n] if wav.shape[0] >= n else np.pad(wav, (0, n - wav.shape[0]))
    return PhonemeSequence(phonemes.accent, list(phonemes.ids), durs), wav, mel[:t], bn[:t]


def load_utterance(rec: UtteranceRecord, registry: Registry, bn_seed: int = 0) -> Utterance:
    w = load_wav(rec.wav_path)
    mel = mel_extract(w)
    phon = load_alignment(rec.dur_path, registry, rec.accent)
    bn_raw = pseudo_bn(mel, bn_seed) if rec.bn_path is None else read_bn(rec.bn_path)
    bn = interpolate_bn(bn_raw, mel.n_frames)
    phon, wav, m, b = reconcile(phon, w.samples, mel.frames, bn.frames, rec.utt_id)
    return Utterance(rec, phon, wav, m, b)


# ------------------------------------------------------------------ batching


@dataclass
class Batch:
    utt_ids: list[str]
    phonemes: torch.Tensor  # (B, P) long
    phone_lengths: torch.Tensor  # (B,)
    durations: torch.Tensor  # (B, P) long, 0 on padding
    mel: torch.Tensor  # (B, 80, T)
    bn: torch.Tensor  # (B, 512, T)
    frame_lengths: torch.Tensor  # (B,)
    wav: torch.Tensor  # (B, 1, T * 200)
    speakers: torch.Tensor  # (B,)


def collate(utts: Sequence[Utterance]) -> Batch:
    b = len(utts)
    p_max = max(len(u.phonemes.ids) for u in utts)
    t_max = max(u.n_frames for u in utts)
    phon = torch.zeros(b, p_max, dtype=torch.long)
    durs = torch.zeros(b, p_max, dtype=torch.long)
    mel = torch.zeros(b, utts[0].mel.shape[1], t_max)
    bn = torch.zeros(b, utts[0].bn.shape[1], t_max)
    wav = torch.zeros(b, 1, t_max * HOP_LENGTH)
    for i, u in enumerate(utts):
        p = len(u.phonemes.ids)
        t = u.n_frames
        phon[i, :p] = torch.tensor(u.phonemes.ids)
        durs[i, :p] = torch.tensor(u.phonemes.durations)
        mel[i, :, :t] = torch.from_numpy(u.mel.T)
        bn[i, :, :t] = torch.from_numpy(u.bn.T)
        wav[i, 0, : t * HOP_LENGTH] = torch.from_numpy(u.wav)
    return Batch(
        utt_ids=[u.record.utt_id for u in utts],
        phonemes=phon,
        phone_lengths=torch.tensor([len(u.phonemes.ids) for u in utts]),
        durations=durs,
        mel=mel,
        bn=bn,
        frame_lengths=torch.tensor([u.n_frames for u in utts]),
        wav=wav,
        speakers=torch.tensor([u.record.speaker.index for u in utts]),
    )


def make_batch(utts: Sequence[Utterance], config: TrainConfig, rng: np.random.Generator) -> Batch:
    """Draw ``config.batch`` utterances (without replacement while possible) and pad them."""
    if not utts:
        raise DataError("no utterances")
    n = len(utts)
    if config.batch <= n:
        idx = rng.permutation(n)[: config.batch]
    else:
        idx = np.concatenate([rng.permutation(n), rng.integers(0, n, config.batch - n)])
    return collate([utts[i] for i in idx])


def slice_starts(frame_lengths: torch.Tensor, slice_frames: int, rng: np.random.Generator) -> torch.Tensor:
    """Uniform start frame in [0, T - L] per item; 0 when the item is shorter than L."""
    hi = np.maximum(frame_lengths.numpy() - slice_frames, 0)
    return torch.from_numpy(np.array([rng.integers(0, h + 1) for h in hi], dtype=np.int64))


def slice_latents(z: torch.Tensor, y: torch.Tensor, slice_frames: int, rng: np.random.Generator, frame_lengths: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Random aligned crop: (z slice (B, C, L), audio (B, 1, L * hop), starts)."""
    if frame_lengths is None:
        frame_lengths = torch.full((z.shape[0],), z.shape[-1], dtype=torch.long)
    starts = slice_starts(frame_lengths, slice_frames, rng)
    z_s = slice_segments(z, starts, slice_frames)
    y_s = slice_segments(y, starts * HOP_LENGTH, slice_frames * HOP_LENGTH)
    return z_s, y_s, starts


# ------------------------------------------------------------------ trainer


def _finite_or_raise(parts: dict[str, torch.Tensor | None]) -> None:
    for k, v in parts.items():
        if v is not None and not torch.isfinite(v).all():
            raise NonFiniteLoss(f"loss term {k!r} is not finite ({float(v.detach())})")


class Trainer:
    """Owns the generator, discriminator, their optimisers and the step counter."""

    def __init__(
        self,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        registry: Registry | None = None,
        speakers: SpeakerTable | None = None,
    ):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.registry = registry
        self.speakers = speakers
        torch.manual_seed(train_cfg.seed)
        self.rng = np.random.default_rng(train_cfg.seed)
        self.gen, self.disc = build_models(model_cfg)
        kw = dict(lr=train_cfg.lr, betas=tuple(train_cfg.betas), eps=train_cfg.eps)
        self.opt_g = torch.optim.Adam(self.gen.parameters(), **kw)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), **kw)
        self.sched_g = torch.optim.lr_scheduler.ExponentialLR(self.opt_g, train_cfg.lr_decay)
        self.sched_d = torch.optim.lr_scheduler.ExponentialLR(self.opt_d, train_cfg.lr_decay)
        self.mel = MelExtractor()
        self.step = 0
        self.track_grads = False
        self.last_grads: dict[str, dict[str, torch.Tensor]] = {}

    # -- one optimisation step

    def generator_losses(self, batch: Batch, out, y: torch.Tensor, fake, real) -> dict[str, torch.Tensor | None]:
        cfg = self.train_cfg
        parts: dict[str, torch.Tensor | None] = {
            "recon": recon_loss(out.y_hat, y, self.mel),
            "kl_ac": kl_ac_with_flow(out.z_ac, out.q_ac, out.prior_ac, out.log_det, out.frame_mask, flowed=out.z_flow),
            "kl_pr": kl_gauss(out.q_pr, out.p_pr, out.frame_mask) if out.p_pr is not None else None,
            "bn_mse": bn_mse(out.bn_pred, batch.bn, out.frame_mask) if out.bn_pred is not None else None,
            "dur": duration_loss(out.d_hat, batch.durations, out.phone_mask, log_domain=cfg.log_duration),
            "adv_g": adv_g([s for s, _ in fake]),
            "fm": feature_matching([f for _, f in real], [f for _, f in fake]),
        }
        return parts

    def train_step(self, batch: Batch) -> LossReport:
        cfg = self.train_cfg
        self.gen.train()
        self.disc.train()
        starts = slice_starts(batch.frame_lengths, cfg.slice_frames, self.rng)
        out = self.gen.forward_train(
            batch.phonemes, batch.phone_lengths, batch.durations, batch.mel, batch.bn,
            batch.frame_lengths, batch.speakers, starts, cfg.slice_frames,
        )
        y = slice_segments(batch.wav, starts * HOP_LENGTH, cfg.slice_frames * HOP_LENGTH)

        # discriminator first
        real = self.disc(y)
        fake = self.disc(out.y_hat.detach())
        loss_d = adv_d([s for s, _ in real], [s for s, _ in fake])
        _finite_or_raise({"adv_d": loss_d})
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.disc.parameters(), cfg.grad_clip)
        if self.track_grads:
            self.last_grads["disc"] = _grads(self.disc)
        self.opt_d.step()

        real = self.disc(y)
        fake = self.disc(out.y_hat)
        parts = self.generator_losses(batch, out, y, fake, real)
        _finite_or_raise(parts)
        total = weighted_total_g(parts, cfg.alpha, cfg.lam, cfg.bn_mse_weight)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.gen.parameters(), cfg.grad_clip)
        if self.track_grads:
            self.last_grads["gen"] = _grads(self.gen)
        self.opt_g.step()
        self.sched_g.step()
        self.sched_d.step()
        self.step += 1
        parts["adv_d"] = loss_d
        return compose(parts, cfg.alpha, cfg.lam, cfg.bn_mse_weight)

    def fit(
        self,
        utts: Sequence[Utterance],
        steps: int | None = None,
        log_path: str | Path | None = None,
        ckpt_dir: str | Path | None = None,
        callback=None,
    ) -> list[LossReport]:
        steps = self.train_cfg.steps if steps is None else steps
        reports = []
        log_f = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            for _ in range(steps):
                batch = make_batch(utts, self.train_cfg, self.rng)
                rep = self.train_step(batch)
                reports.append(rep)
                if log_f and self.step % self.train_cfg.log_every == 0:
                    log_f.write(rep.to_json(self.step) + "\n")
                    log_f.flush()
                if ckpt_dir and self.step % self.train_cfg.checkpoint_every == 0:
                    self.save(Path(ckpt_dir) / f"step_{self.step:08d}.ckpt")
                if callback is not None:
                    callback(self, rep)
        finally:
            if log_f:
                log_f.close()
        if ckpt_dir:
            self.save(Path(ckpt_dir) / "last.ckpt")
        return reports

    # -- persistence

    def meta(self) -> dict:
        return {
            "registry": self.registry.to_dict() if self.registry is not None else None,
            "speakers": self.speakers.names if self.speakers is not None else None,
        }

    def save(self, path: str | Path) -> None:
        tensors: dict[str, torch.Tensor] = {}
        tensors.update(ckpt_io.module_tensors("gen", self.gen))
        tensors.update(ckpt_io.module_tensors("disc", self.disc))
        state = {
            "opt_g": ckpt_io.optimizer_tensors("opt_g", self.opt_g, tensors),
            "opt_d": ckpt_io.optimizer_tensors("opt_d", self.opt_d, tensors),
            "sched_g": ckpt_io.dump_state(self.sched_g.state_dict()),
            "sched_d": ckpt_io.dump_state(self.sched_d.state_dict()),
            "rng": ckpt_io.dump_state(self.rng.bit_generator.state),
            # reparameterisation noise and dropout draw from the global torch generator
            "torch_rng": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
        }
        ckpt_io.write_checkpoint(
            path,
            ckpt_io.Checkpoint(self.model_cfg.to_dict(), self.train_cfg.to_dict(), self.step, tensors, self.meta(), state),
        )

    @classmethod
    def from_checkpoint(cls, path: str | Path, expected: ModelConfig | None = None, train_cfg: TrainConfig | None = None) -> Trainer:
        ck = ckpt_io.read_checkpoint(path)
        model_cfg = ModelConfig.from_dict(ck.model_config)
        if expected is not None and expected.to_dict() != model_cfg.to_dict():
            raise ckpt_io.CheckpointError(f"{path}: model config differs from the requested one")
        if train_cfg is None:
            train_cfg = TrainConfig.from_dict(ck.train_config) if ck.train_config else TrainConfig()
        registry = Registry.from_dict(ck.meta["registry"]) if ck.meta.get("registry") else None
        speakers = SpeakerTable(ck.meta["speakers"]) if ck.meta.get("speakers") else None
        tr = cls(model_cfg, train_cfg, registry, speakers)
        tr.load_state(ck)
        return tr

    def load(self, path: str | Path) -> None:
        ck = ckpt_io.read_checkpoint(path)
        if ck.model_config != self.model_cfg.to_dict():
            raise ckpt_io.CheckpointError(f"{path}: model config differs from this trainer's")
        self.load_state(ck)

    def load_state(self, ck: ckpt_io.Checkpoint) -> None:
        ckpt_io.load_module("gen", self.gen, ck.tensors)
        ckpt_io.load_module("disc", self.disc, ck.tensors)
        if "opt_g" in ck.state:
            ckpt_io.load_optimizer("opt_g", self.opt_g, ck.state["opt_g"], ck.tensors)
            ckpt_io.load_optimizer("opt_d", self.opt_d, ck.state["opt_d"], ck.tensors)
            self.sched_g.load_state_dict(ck.state["sched_g"])
            self.sched_d.load_state_dict(ck.state["sched_d"])
        if "rng" in ck.state:
            self.rng.bit_generator.state = ck.state["rng"]
        if "torch_rng" in ck.state:
            raw = np.frombuffer(base64.b64decode(ck.state["torch_rng"]), dtype=np.uint8)
            torch.set_rng_state(torch.from_numpy(raw.copy()))
        self.step = ck.step


def _grads(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in module.named_parameters()
        if p.requires_grad
    }
