"""Feed-forward Transformer blocks and the convolutional encoder stacks."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from accent_vits.model.commons import GaussianSeq, sinusoidal_positions


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of a (B, C, T) tensor."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, channels: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = channels // n_heads
        self.q = nn.Conv1d(channels, channels, 1)
        # a key bias only shifts every score of a query equally, so softmax cancels it
        self.k = nn.Conv1d(channels, channels, 1, bias=False)
        self.v = nn.Conv1d(channels, channels, 1)
        self.out = nn.Conv1d(channels, channels, 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, c, t = x.shape
        q, k, v = self.q(x), self.k(x), self.v(x)
        q = q.view(b, self.n_heads, self.head_dim, t).transpose(2, 3)
        k = k.view(b, self.n_heads, self.head_dim, t)
        v = v.view(b, self.n_heads, self.head_dim, t).transpose(2, 3)
        scores = torch.matmul(q, k) / math.sqrt(self.head_dim)  # (b, h, t, t)
        attn_mask = (mask.unsqueeze(2) * mask.unsqueeze(-1)) > 0  # (b, 1, t, t)
        scores = scores.masked_fill(~attn_mask, -1e4)
        p = self.drop(torch.softmax(scores, dim=-1))
        y = torch.matmul(p, v).transpose(2, 3).reshape(b, c, t)
        return self.out(y)


class FFTBlock(nn.Module):
    """Self-attention followed by a two-layer convolutional feed-forward, post-norm."""

    def __init__(self, channels: int, ffn_channels: int, n_heads: int, kernel: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadSelfAttention(channels, n_heads, dropout)
        self.norm1 = ChannelLayerNorm(channels)
        self.ffn1 = nn.Conv1d(channels, ffn_channels, kernel, padding=kernel // 2)
        self.ffn2 = nn.Conv1d(ffn_channels, channels, kernel, padding=kernel // 2)
        self.norm2 = ChannelLayerNorm(channels)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.drop(self.attn(x, mask)))
        y = self.ffn2(self.drop(F.relu(self.ffn1(x * mask))) * mask)
        return self.norm2(x + self.drop(y)) * mask


class FFTStack(nn.Module):
    def __init__(self, channels: int, ffn_channels: int, n_heads: int, n_blocks: int, kernel: int, dropout: float):
        super().__init__()
        self.channels = channels
        self.blocks = nn.ModuleList(
            FFTBlock(channels, ffn_channels, n_heads, kernel, dropout) for _ in range(n_blocks)
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = (x + sinusoidal_positions(x.shape[-1], self.channels, x.device)) * mask
        for block in self.blocks:
            x = block(x, mask)
        return x


class TextEncoder(nn.Module):
    """Phoneme embedding + FFT blocks, phoneme-level output (B, H, P)."""

    def __init__(self, n_symbols: int, channels: int, ffn_channels: int, n_heads: int, n_blocks: int, kernel: int, dropout: float):
        super().__init__()
        self.channels = channels
        self.emb = nn.Embedding(n_symbols, channels)
        nn.init.normal_(self.emb.weight, 0.0, channels**-0.5)
        self.stack = FFTStack(channels, ffn_channels, n_heads, n_blocks, kernel, dropout)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.emb(ids).transpose(1, 2) * math.sqrt(self.channels)
        return self.stack(x * mask, mask)


class ConvStack(nn.Module):
    """Repeated Conv1d -> ReLU -> LayerNorm -> Dropout."""

    def __init__(self, in_channels: int, channels: int, n_layers: int, kernel: int, dropout: float):
        super().__init__()
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        for i in range(n_layers):
            self.convs.append(nn.Conv1d(in_channels if i == 0 else channels, channels, kernel, padding=kernel // 2))
            self.norms.append(ChannelLayerNorm(channels))
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        for conv, norm in zip(self.convs, self.norms):
            x = self.drop(norm(F.relu(conv(x * mask))))
        return x * mask


class GaussianHead(nn.Module):
    """1x1 projection to 2C channels split into mean / log-variance."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.proj = nn.Conv1d(in_channels, 2 * out_channels, 1)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> GaussianSeq:
        stats = self.proj(h) * mask
        mean, log_var = stats.chunk(2, dim=1)
        return GaussianSeq(mean, log_var, mask)


class FramePrior(nn.Module):
    """Frame-level FFT blocks over h_text followed by a linear projection.

    With ``deterministic=True`` the head regresses a point estimate (used by
    the BN-regression ablation) instead of a Gaussian.
    """

    def __init__(self, channels: int, ffn_channels: int, n_heads: int, n_blocks: int, kernel: int, dropout: float, out_channels: int, deterministic: bool = False):
        super().__init__()
        self.deterministic = deterministic
        self.stack = FFTStack(channels, ffn_channels, n_heads, n_blocks, kernel, dropout)
        if deterministic:
            self.proj = nn.Conv1d(channels, out_channels, 1)
        else:
            self.head = GaussianHead(channels, out_channels)

    def forward(self, h_text: torch.Tensor, mask: torch.Tensor) -> GaussianSeq | torch.Tensor:
        h = self.stack(h_text, mask)
        if self.deterministic:
            return self.proj(h) * mask
        return self.head(h, mask)


class BnEncoder(nn.Module):
    def __init__(self, bn_dim: int, channels: int, out_channels: int, n_layers: int, kernel: int, dropout: float):
        super().__init__()
        self.stack = ConvStack(bn_dim, channels, n_layers, kernel, dropout)
        self.head = GaussianHead(channels, out_channels)

    def forward(self, bn: torch.Tensor, mask: torch.Tensor) -> GaussianSeq:
        return self.head(self.stack(bn, mask), mask)


class PosteriorEncoder(nn.Module):
    def __init__(self, n_mels: int, channels: int, out_channels: int, n_layers: int, kernel: int, dropout: float):
        super().__init__()
        self.stack = ConvStack(n_mels, channels, n_layers, kernel, dropout)
        self.head = GaussianHead(channels, out_channels)

    def forward(self, mel: torch.Tensor, mask: torch.Tensor) -> GaussianSeq:
        return self.head(self.stack(mel, mask), mask)


class BnDecoder(nn.Module):
    """Pronunciation latent + speaker -> prior over z_ac."""

    def __init__(self, in_channels: int, channels: int, out_channels: int, speaker_dim: int, n_layers: int, kernel: int, dropout: float):
        super().__init__()
        self.pre = nn.Conv1d(in_channels, channels, 1)
        self.spk = nn.Linear(speaker_dim, channels)
        self.stack = ConvStack(channels, channels, n_layers, kernel, dropout)
        self.head = GaussianHead(channels, out_channels)

    def forward(self, z: torch.Tensor, mask: torch.Tensor, g: torch.Tensor) -> GaussianSeq:
        x = self.pre(z) + self.spk(g).unsqueeze(-1)
        return self.head(self.stack(x * mask, mask), mask)


class DurationPredictor(nn.Module):
    """Conv stack regressing nonnegative per-phoneme frame counts."""

    def __init__(self, channels: int, n_layers: int, kernel: int, dropout: float):
        super().__init__()
        self.stack = ConvStack(channels, channels, n_layers, kernel, dropout)
        self.proj = nn.Conv1d(channels, 1, 1)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.proj(self.stack(h.detach(), mask))
        return F.softplus(x).squeeze(1) * mask.squeeze(1)
