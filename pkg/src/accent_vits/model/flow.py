"""Speaker-conditioned residual coupling flow over z_ac."""
from __future__ import annotations

import torch
from torch import nn


class WN(nn.Module):
    """Non-causal WaveNet body with gated activations and global conditioning."""

    def __init__(self, channels: int, kernel: int, n_layers: int, cond_channels: int):
        super().__init__()
        self.channels = channels
        self.n_layers = n_layers
        self.cond = nn.Conv1d(cond_channels, 2 * channels * n_layers, 1)
        self.in_layers = nn.ModuleList(
            nn.Conv1d(channels, 2 * channels, kernel, padding=kernel // 2) for _ in range(n_layers)
        )
        self.res_skip = nn.ModuleList(
            nn.Conv1d(channels, 2 * channels if i < n_layers - 1 else channels, 1) for i in range(n_layers)
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        out = torch.zeros_like(x)
        g_all = self.cond(g.unsqueeze(-1))
        c2 = 2 * self.channels
        for i in range(self.n_layers):
            a = self.in_layers[i](x) + g_all[:, i * c2 : (i + 1) * c2]
            t, s = a.chunk(2, dim=1)
            acts = torch.tanh(t) * torch.sigmoid(s)
            rs = self.res_skip[i](acts)
            if i < self.n_layers - 1:
                x = (x + rs[:, : self.channels]) * mask
                out = out + rs[:, self.channels :]
            else:
                out = out + rs
        return out * mask


class ResidualCoupling(nn.Module):
    """Affine coupling: second half <- m(first half) + second half * exp(logs(first half)).

    With ``mean_only`` the scale is fixed at 1 and the layer is volume preserving.
    """

    def __init__(self, channels: int, hidden: int, kernel: int, n_layers: int, cond_channels: int, mean_only: bool = True):
        super().__init__()
        self.half = channels // 2
        self.mean_only = mean_only
        self.pre = nn.Conv1d(self.half, hidden, 1)
        self.enc = WN(hidden, kernel, n_layers, cond_channels)
        self.post = nn.Conv1d(hidden, self.half * (1 if mean_only else 2), 1)
        # small rather than zero: a zero post layer would block gradients to the WN body on step one
        nn.init.normal_(self.post.weight, 0.0, 1e-2)
        nn.init.zeros_(self.post.bias)

    def _stats(self, x0: torch.Tensor, mask: torch.Tensor, g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.pre(x0) * mask
        stats = self.post(self.enc(h, mask, g)) * mask
        if self.mean_only:
            return stats, torch.zeros_like(stats)
        m, logs = stats.chunk(2, dim=1)
        return m, logs

    def forward(self, x: torch.Tensor, mask: torch.Tensor, g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x0, x1 = x[:, : self.half], x[:, self.half :]
        m, logs = self._stats(x0, mask, g)
        x1 = (m + x1 * torch.exp(logs)) * mask
        return torch.cat([x0, x1], 1), torch.sum(logs * mask, dim=(1, 2))

    def inverse(self, x: torch.Tensor, mask: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        x0, x1 = x[:, : self.half], x[:, self.half :]
        m, logs = self._stats(x0, mask, g)
        x1 = (x1 - m) * torch.exp(-logs) * mask
        return torch.cat([x0, x1], 1)

    def reset_to_identity(self) -> None:
        nn.init.zeros_(self.post.weight)
        nn.init.zeros_(self.post.bias)


class CouplingFlow(nn.Module):
    """Stack of (channel flip, coupling) pairs."""

    def __init__(self, channels: int, hidden: int, kernel: int, n_wn_layers: int, n_flows: int, cond_channels: int, mean_only: bool = True):
        super().__init__()
        if channels % 2:
            raise ValueError(f"flow needs an even channel count, got {channels}")
        self.channels = channels
        self.couplings = nn.ModuleList(
            ResidualCoupling(channels, hidden, kernel, n_wn_layers, cond_channels, mean_only) for _ in range(n_flows)
        )

    def forward(self, z: torch.Tensor, mask: torch.Tensor, g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if z.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {z.shape[1]}")
        log_det = z.new_zeros(z.shape[0])
        for layer in self.couplings:
            z = torch.flip(z, [1])
            z, ld = layer(z, mask, g)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, u: torch.Tensor, mask: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        if u.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {u.shape[1]}")
        for layer in reversed(self.couplings):
            u = layer.inverse(u, mask, g)
            u = torch.flip(u, [1])
        return u

    def reset_to_identity(self) -> None:
        for layer in self.couplings:
            layer.reset_to_identity()
