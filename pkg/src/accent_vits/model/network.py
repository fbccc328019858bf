from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from accent_vits.config import HOP_LENGTH, N_MELS, ModelConfig
from accent_vits.model.commons import (
    GaussianSeq,
    LatentSeq,
    ModeError,
    length_regulate,
    reparam_sample,
    sequence_mask,
    slice_segments,
)
from accent_vits.model.decoder import Generator
from accent_vits.model.discriminators import MultiDiscriminator
from accent_vits.model.encoders import (
    BnDecoder,
    BnEncoder,
    DurationPredictor,
    FramePrior,
    PosteriorEncoder,
    TextEncoder,
)
from accent_vits.model.flow import CouplingFlow


@dataclass
class TrainOutputs:
    y_hat: torch.Tensor  # (B, 1, L * hop)
    slice_starts: torch.Tensor  # (B,) frame index
    frame_mask: torch.Tensor
    phone_mask: torch.Tensor
    q_ac: GaussianSeq
    z_ac: LatentSeq
    z_flow: torch.Tensor
    log_det: torch.Tensor
    prior_ac: GaussianSeq
    d_hat: torch.Tensor
    q_pr: GaussianSeq | None = None
    p_pr: GaussianSeq | None = None
    bn_pred: torch.Tensor | None = None


def round_durations(d_hat: torch.Tensor, phone_mask: torch.Tensor | None = None) -> torch.Tensor:
    """max(1, round(d)) on valid phonemes, 0 on padding."""
    d = torch.clamp(torch.round(d_hat), min=1).long()
    if phone_mask is not None:
        d = d * phone_mask.squeeze(1).long()
    return d


class AccentVITS(nn.Module):
    """Generator side: encoders, hierarchical priors, flow and waveform decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h, c, s = cfg.hidden, cfg.latent, cfg.speaker_dim
        c_ac = cfg.acoustic_channels
        self.text_encoder = TextEncoder(cfg.n_symbols, h, cfg.ffn_hidden, cfg.n_heads, cfg.text_blocks, cfg.ffn_kernel, cfg.dropout)
        prior_out = {"full": c, "no_bn_decoder": c, "no_bn_encoder": cfg.bn_dim, "no_bn_both": cfg.bn_dim}[cfg.ablation]
        self.frame_prior = FramePrior(
            h, cfg.ffn_hidden, cfg.n_heads, cfg.frame_blocks, cfg.ffn_kernel, cfg.dropout, prior_out,
            deterministic=cfg.ablation == "no_bn_encoder",
        )
        self.duration_predictor = DurationPredictor(h, cfg.conv_layers, cfg.conv_kernel, cfg.dropout)
        self.bn_encoder = (
            BnEncoder(cfg.bn_dim, h, c, cfg.conv_layers, cfg.conv_kernel, cfg.dropout) if cfg.uses_bn_encoder else None
        )
        if cfg.uses_bn_decoder:
            dec_in = c if cfg.ablation == "full" else cfg.bn_dim
            self.bn_decoder = BnDecoder(dec_in, h, c_ac, s, cfg.conv_layers, cfg.conv_kernel, cfg.dropout)
        else:
            self.bn_decoder = None
        self.posterior_encoder = PosteriorEncoder(N_MELS, h, c_ac, cfg.conv_layers, cfg.conv_kernel, cfg.dropout)
        self.flow = CouplingFlow(c_ac, h, cfg.flow_kernel, cfg.flow_wn_layers, cfg.flow_layers, s, cfg.flow_mean_only)
        self.decoder = Generator(
            c_ac, cfg.upsample_initial, cfg.upsample_rates, cfg.upsample_kernels, cfg.resblock_kernels, cfg.resblock_dilations
        )
        self.speaker_emb = nn.Embedding(cfg.n_speakers, s)

    # ------------------------------------------------------------ components

    def speaker(self, spk: torch.Tensor | int) -> torch.Tensor:
        spk = torch.as_tensor(spk, dtype=torch.long, device=self.speaker_emb.weight.device).reshape(-1)
        if (spk < 0).any() or (spk >= self.cfg.n_speakers).any():
            raise IndexError(f"speaker index out of range [0, {self.cfg.n_speakers})")
        return self.speaker_emb(spk)

    def text_encode(self, ids: torch.Tensor, phone_mask: torch.Tensor | None = None) -> torch.Tensor:
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        if ids.shape[-1] == 0:
            raise ValueError("empty phoneme sequence")
        if phone_mask is None:
            phone_mask = torch.ones(ids.shape[0], 1, ids.shape[1], device=ids.device)
        return self.text_encoder(ids, phone_mask)

    def pronunciation_prior(self, h_text: torch.Tensor, frame_mask: torch.Tensor) -> GaussianSeq | torch.Tensor:
        return self.frame_prior(h_text, frame_mask)

    def bn_encode(self, bn: torch.Tensor, frame_mask: torch.Tensor) -> GaussianSeq:
        if self.bn_encoder is None:
            raise ModeError(f"BN encoder is disabled in mode {self.cfg.ablation!r}")
        return self.bn_encoder(bn, frame_mask)

    def bn_decode(self, z: LatentSeq, g: torch.Tensor) -> GaussianSeq:
        if self.bn_decoder is None:
            raise ModeError(f"BN decoder is disabled in mode {self.cfg.ablation!r}")
        want = "pronunciation" if self.cfg.ablation == "full" else "bn"
        if z.kind != want:
            raise ValueError(f"BN decoder expects a {want} latent, got {z.kind}")
        return self.bn_decoder(z.values, z.mask, g)

    def flow_forward(self, z: LatentSeq, g: torch.Tensor) -> tuple[LatentSeq, torch.Tensor]:
        if z.kind != "acoustic":
            raise ValueError(f"flow expects an acoustic latent, got {z.kind}")
        u, log_det = self.flow(z.values, z.mask, g)
        return LatentSeq(u, "acoustic", z.mask), log_det

    def flow_inverse(self, u: LatentSeq, g: torch.Tensor) -> LatentSeq:
        return LatentSeq(self.flow.inverse(u.values, u.mask, g), "acoustic", u.mask)

    def posterior_encode(self, mel: torch.Tensor, frame_mask: torch.Tensor) -> GaussianSeq:
        return self.posterior_encoder(mel, frame_mask)

    def decode_waveform(self, z: LatentSeq | torch.Tensor) -> torch.Tensor:
        values = z.values if isinstance(z, LatentSeq) else z
        if isinstance(z, LatentSeq) and z.kind != "acoustic":
            raise ValueError(f"decoder expects an acoustic latent, got {z.kind}")
        if values.shape[-1] < 1:
            raise ValueError("decoder needs at least one frame")
        return self.decoder(values)

    def duration_predict(self, h: torch.Tensor, phone_mask: torch.Tensor) -> torch.Tensor:
        return self.duration_predictor(h, phone_mask)

    # ------------------------------------------------------------- training

    def forward_train(
        self,
        phonemes: torch.Tensor,
        phone_lengths: torch.Tensor,
        durations: torch.Tensor,
        mel: torch.Tensor,
        bn: torch.Tensor,
        frame_lengths: torch.Tensor,
        speakers: torch.Tensor,
        slice_starts: torch.Tensor,
        slice_frames: int,
    ) -> TrainOutputs:
        mode = self.cfg.ablation
        phone_mask = sequence_mask(phone_lengths, phonemes.shape[1])
        frame_mask = sequence_mask(frame_lengths, mel.shape[-1])
        g = self.speaker(speakers)

        q_ac = self.posterior_encode(mel, frame_mask)
        z_ac = reparam_sample(q_ac, 1.0, "acoustic")

        h = self.text_encode(phonemes, phone_mask)
        d_hat = self.duration_predict(h, phone_mask)
        h_text, lr_lengths = length_regulate(h, durations, phone_mask)
        if h_text.shape[-1] != mel.shape[-1] or not torch.equal(lr_lengths, frame_lengths):
            raise ValueError("durations do not sum to the frame counts")
        prior_out = self.pronunciation_prior(h_text, frame_mask)

        q_pr = p_pr = bn_pred = None
        if mode == "full":
            p_pr = prior_out
            q_pr = self.bn_encode(bn, frame_mask)
            z_pr = reparam_sample(q_pr, 1.0, "pronunciation")
            prior_ac = self.bn_decode(z_pr, g)
        elif mode == "no_bn_encoder":
            bn_pred = prior_out
            prior_ac = self.bn_decode(LatentSeq(bn * frame_mask, "bn", frame_mask), g)
        elif mode == "no_bn_decoder":
            p_pr = prior_out
            q_pr = self.bn_encode(bn, frame_mask)
            prior_ac = q_pr
        else:  # no_bn_both
            prior_ac = prior_out
            bn_pred = reparam_sample(prior_out, 1.0, "bn").values

        z_flow, log_det = self.flow_forward(z_ac, g)

        z_slice = slice_segments(z_ac.values, slice_starts, slice_frames)
        y_hat = self.decode_waveform(LatentSeq(z_slice, "acoustic", torch.ones_like(z_slice[:, :1])))
        return TrainOutputs(
            y_hat=y_hat,
            slice_starts=slice_starts,
            frame_mask=frame_mask,
            phone_mask=phone_mask,
            q_ac=q_ac,
            z_ac=z_ac,
            z_flow=z_flow.values,
            log_det=log_det,
            prior_ac=prior_ac,
            d_hat=d_hat,
            q_pr=q_pr,
            p_pr=p_pr,
            bn_pred=bn_pred,
        )

    # ------------------------------------------------------------ inference

    @torch.no_grad()
    def infer(
        self,
        phonemes: torch.Tensor,
        speaker: int | torch.Tensor,
        durations: torch.Tensor | None = None,
        noise_pr: float = 0.667,
        noise_ac: float = 0.667,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Text-side synthesis for a single utterance.

        Returns the waveform (N,) and the integer durations that were used.
        """
        if phonemes.dim() == 1:
            phonemes = phonemes.unsqueeze(0)
        if phonemes.shape[-1] == 0:
            raise ValueError("empty phoneme sequence")
        mode = self.cfg.ablation
        phone_mask = torch.ones(1, 1, phonemes.shape[1], device=phonemes.device)
        g = self.speaker(speaker)
        h = self.text_encode(phonemes, phone_mask)
        if durations is None:
            durations = round_durations(self.duration_predict(h, phone_mask), phone_mask)
        else:
            durations = torch.as_tensor(durations, dtype=torch.long, device=phonemes.device).reshape(1, -1)
            if durations.shape[-1] != phonemes.shape[-1]:
                raise ValueError(f"{durations.shape[-1]} durations for {phonemes.shape[-1]} phonemes")
        h_text, lengths = length_regulate(h, durations, phone_mask)
        frame_mask = sequence_mask(lengths, h_text.shape[-1])
        prior_out = self.pronunciation_prior(h_text, frame_mask)
        if mode == "full":
            z_pr = reparam_sample(prior_out, noise_pr, "pronunciation", generator)
            u = reparam_sample(self.bn_decode(z_pr, g), noise_ac, "acoustic", generator)
        elif mode == "no_bn_encoder":
            u = reparam_sample(self.bn_decode(LatentSeq(prior_out, "bn", frame_mask), g), noise_ac, "acoustic", generator)
        elif mode == "no_bn_decoder":
            # the sampled pronunciation latent feeds the flow directly
            u = reparam_sample(prior_out, noise_pr, "acoustic", generator)
        else:
            u = reparam_sample(prior_out, noise_ac, "acoustic", generator)
        z_ac = self.flow_inverse(u, g)
        y = self.decode_waveform(z_ac)
        return y[0, 0], durations[0]


def build_models(cfg: ModelConfig) -> tuple[AccentVITS, MultiDiscriminator]:
    gen = AccentVITS(cfg)
    disc = MultiDiscriminator(cfg.mpd_periods, cfg.mpd_channels, cfg.msd_channels, cfg.msd_scales)
    return gen, disc


def expected_samples(n_frames: int) -> int:
    return n_frames * HOP_LENGTH
