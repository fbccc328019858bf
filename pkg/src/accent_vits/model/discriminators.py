"""Multi-period and multi-scale waveform discriminators."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from accent_vits.model.commons import leaky

DiscOutput = tuple[torch.Tensor, list[torch.Tensor]]


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels: tuple[int, ...], kernel: int = 5, stride: int = 3):
        super().__init__()
        self.period = period
        self.convs = nn.ModuleList()
        c_in = 1
        for c in channels:
            self.convs.append(weight_norm(nn.Conv2d(c_in, c, (kernel, 1), (stride, 1), padding=(kernel // 2, 0))))
            c_in = c
        self.convs.append(weight_norm(nn.Conv2d(c_in, c_in, (kernel, 1), 1, padding=(kernel // 2, 0))))
        self.post = weight_norm(nn.Conv2d(c_in, 1, (3, 1), 1, padding=(1, 0)))

    def forward(self, y: torch.Tensor) -> DiscOutput:
        b, c, t = y.shape
        if t % self.period:
            n_pad = self.period - t % self.period
            y = F.pad(y, (0, n_pad), mode="reflect" if t > n_pad else "constant")
            t = t + n_pad
        x = y.view(b, c, t // self.period, self.period)
        feats = []
        for conv in self.convs:
            x = leaky(conv(x))
            feats.append(x)
        x = self.post(x)
        feats.append(x)
        return torch.flatten(x, 1, -1), feats


class ScaleDiscriminator(nn.Module):
    def __init__(self, channels: tuple[int, ...]):
        super().__init__()
        self.convs = nn.ModuleList()
        c_in = 1
        specs = [(15, 1)] + [(41, 4)] * (len(channels) - 2) + [(5, 1)]
        for i, (c, (k, s)) in enumerate(zip(channels, specs)):
            groups = 1 if i == 0 or i == len(channels) - 1 else max(1, c_in // 4)
            while c_in % groups or c % groups:
                groups -= 1
            self.convs.append(weight_norm(nn.Conv1d(c_in, c, k, s, groups=groups, padding=k // 2)))
            c_in = c
        self.post = weight_norm(nn.Conv1d(c_in, 1, 3, 1, padding=1))

    def forward(self, y: torch.Tensor) -> DiscOutput:
        feats = []
        x = y
        for conv in self.convs:
            x = leaky(conv(x))
            feats.append(x)
        x = self.post(x)
        feats.append(x)
        return torch.flatten(x, 1, -1), feats


class MultiDiscriminator(nn.Module):
    """MPD (one per period) followed by MSD (one per scale, average-pooled)."""

    def __init__(self, periods: tuple[int, ...], mpd_channels: tuple[int, ...], msd_channels: tuple[int, ...], n_scales: int = 3):
        super().__init__()
        self.discriminators = nn.ModuleList(PeriodDiscriminator(p, tuple(mpd_channels)) for p in periods)
        self.n_periods = len(periods)
        for _ in range(n_scales):
            self.discriminators.append(ScaleDiscriminator(tuple(msd_channels)))
        self.pool = nn.AvgPool1d(4, 2, padding=2)

    def forward(self, y: torch.Tensor) -> list[DiscOutput]:
        outs = []
        y_scaled = y
        for i, d in enumerate(self.discriminators):
            if i > self.n_periods:
                y_scaled = self.pool(y_scaled)
            outs.append(d(y if i < self.n_periods else y_scaled))
        return outs
