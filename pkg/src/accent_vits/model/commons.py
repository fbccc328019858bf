from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

LATENT_KINDS = ("pronunciation", "acoustic", "bn")


class ModeError(RuntimeError):
    """Raised when a submodule is used in an ablation mode that removes it."""


@dataclass
class GaussianSeq:
    """Per-frame diagonal Gaussian; tensors are (B, C, T), mask is (B, 1, T)."""

    mean: torch.Tensor
    log_var: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.log_var.shape:
            raise ValueError(f"mean {tuple(self.mean.shape)} vs log_var {tuple(self.log_var.shape)}")

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)


@dataclass
class LatentSeq:
    values: torch.Tensor
    kind: str
    mask: torch.Tensor

    def __post_init__(self) -> None:
        if self.kind not in LATENT_KINDS:
            raise ValueError(f"unknown latent kind {self.kind!r}")


def sequence_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    """(B,) lengths -> (B, 1, T) float mask."""
    if max_len is None:
        max_len = int(lengths.max())
    ar = torch.arange(max_len, device=lengths.device)
    return (ar[None, :] < lengths[:, None]).unsqueeze(1).float()


def sinusoidal_positions(length: int, channels: int, device=None) -> torch.Tensor:
    """(1, C, T) sinusoidal position table."""
    pos = torch.arange(length, dtype=torch.float32, device=device)[:, None]
    half = channels // 2
    div = torch.exp(torch.arange(half, dtype=torch.float32, device=device) * (-math.log(10000.0) / max(half - 1, 1)))
    table = torch.zeros(length, channels, device=device)
    table[:, 0 : 2 * half : 2] = torch.sin(pos * div)
    table[:, 1 : 2 * half : 2] = torch.cos(pos * div)
    return table.T.unsqueeze(0)


def length_regulate(h: torch.Tensor, durations: torch.Tensor, phone_mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Repeat phoneme vectors by their frame durations.

    h: (B, H, P); durations: (B, P) integer frames. Padded phonemes (mask 0)
    must carry duration 0; valid phonemes must be >= 1.
    Returns (B, H, T_max) and (B,) frame lengths.
    """
    if durations.dim() == 1:
        durations = durations.unsqueeze(0)
    durations = durations.long()
    if phone_mask is None:
        phone_mask = torch.ones(durations.shape[0], 1, durations.shape[1], device=durations.device)
    valid = phone_mask[:, 0] > 0
    if (durations[valid] <= 0).any():
        raise ValueError("durations must be positive for every phoneme")
    durations = durations * valid.long()
    lengths = durations.sum(dim=1)
    t_max = int(lengths.max())
    out = h.new_zeros(h.shape[0], h.shape[1], t_max)
    for b in range(h.shape[0]):
        rep = torch.repeat_interleave(h[b], durations[b], dim=1)
        out[b, :, : rep.shape[1]] = rep
    return out, lengths


def reparam_sample(g: GaussianSeq, noise_scale: float = 1.0, kind: str = "acoustic", generator: torch.Generator | None = None) -> LatentSeq:
    """mean + std * eps * noise_scale, eps ~ N(0, I)."""
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")
    if noise_scale == 0:
        z = g.mean
    else:
        eps = torch.randn(g.mean.shape, generator=generator, device=g.mean.device, dtype=g.mean.dtype)
        z = g.mean + g.std * eps * noise_scale
    return LatentSeq(z * g.mask, kind, g.mask)


def slice_segments(x: torch.Tensor, starts: torch.Tensor, size: int) -> torch.Tensor:
    """Gather x[b, :, s_b : s_b + size] for every b; pads with zeros past the end."""
    out = x.new_zeros(x.shape[0], x.shape[1], size)
    for b in range(x.shape[0]):
        s = int(starts[b])
        piece = x[b, :, s : s + size]
        out[b, :, : piece.shape[-1]] = piece
    return out


def leaky(x: torch.Tensor, slope: float = 0.1) -> torch.Tensor:
    return F.leaky_relu(x, slope)
