"""HiFi-GAN style generator: z_ac frames -> waveform at hop-size upsampling."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from accent_vits.model.commons import leaky


def _pad(kernel: int, dilation: int = 1) -> int:
    return (kernel * dilation - dilation) // 2


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int, dilations: tuple[int, ...]):
        super().__init__()
        self.convs1 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel, dilation=d, padding=_pad(kernel, d))) for d in dilations
        )
        self.convs2 = nn.ModuleList(
            weight_norm(nn.Conv1d(channels, channels, kernel, padding=_pad(kernel))) for _ in dilations
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for c1, c2 in zip(self.convs1, self.convs2):
            x = x + c2(leaky(c1(leaky(x))))
        return x


class Generator(nn.Module):
    def __init__(
        self,
        in_channels: int,
        initial_channels: int,
        upsample_rates: tuple[int, ...],
        upsample_kernels: tuple[int, ...],
        resblock_kernels: tuple[int, ...],
        resblock_dilations: tuple[tuple[int, ...], ...],
    ):
        super().__init__()
        self.hop = 1
        for r in upsample_rates:
            self.hop *= r
        self.conv_pre = weight_norm(nn.Conv1d(in_channels, initial_channels, 7, padding=3))
        self.ups = nn.ModuleList()
        self.resblocks = nn.ModuleList()
        ch = initial_channels
        for u, k in zip(upsample_rates, upsample_kernels):
            # (L - 1) * u - 2p + k + op == L * u
            p = (k - u + 1) // 2
            op = 2 * p - (k - u)
            out_ch = max(ch // 2, 1)
            self.ups.append(weight_norm(nn.ConvTranspose1d(ch, out_ch, k, u, padding=p, output_padding=op)))
            ch = out_ch
            for rk, rd in zip(resblock_kernels, resblock_dilations):
                self.resblocks.append(ResBlock(ch, rk, tuple(rd)))
        self.n_kernels = len(resblock_kernels)
        self.conv_post = weight_norm(nn.Conv1d(ch, 1, 7, padding=3, bias=False))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """(B, C, L) -> (B, 1, L * hop) in [-1, 1]."""
        x = self.conv_pre(z)
        for i, up in enumerate(self.ups):
            x = up(leaky(x))
            acc = None
            for j in range(self.n_kernels):
                r = self.resblocks[i * self.n_kernels + j](x)
                acc = r if acc is None else acc + r
            x = acc / self.n_kernels
        x = self.conv_post(leaky(x, 0.01))
        return torch.tanh(x)
