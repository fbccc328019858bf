"""Training objectives: hierarchical CVAE terms, LSGAN terms, and their composition."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import torch

from accent_vits.dsp import MelExtractor
from accent_vits.model.commons import GaussianSeq, LatentSeq

LOG_2PI = math.log(2 * math.pi)


class LossError(ValueError):
    pass


def _mask_for(g: GaussianSeq, mask: torch.Tensor | None) -> torch.Tensor:
    m = g.mask if mask is None else mask
    if m.dim() == 2:
        m = m.unsqueeze(1)
    return m


def kl_gauss(q: GaussianSeq, p: GaussianSeq, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians.

    Summed over channels, averaged over valid frames (across the batch).
    """
    if q.mean.shape != p.mean.shape:
        raise LossError(f"shape mismatch {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}")
    m = _mask_for(q, mask)
    kl = 0.5 * (p.log_var - q.log_var) + (torch.exp(q.log_var) + (q.mean - p.mean) ** 2) / (2 * torch.exp(p.log_var)) - 0.5
    return torch.sum(kl * m) / torch.sum(m)


def gaussian_log_prob(x: torch.Tensor, g: GaussianSeq) -> torch.Tensor:
    """Elementwise log N(x; mean, exp(log_var))."""
    return -0.5 * (LOG_2PI + g.log_var + (x - g.mean) ** 2 * torch.exp(-g.log_var))


def kl_ac_with_flow(
    q_sample: LatentSeq | torch.Tensor,
    q: GaussianSeq,
    prior: GaussianSeq,
    log_det: torch.Tensor | float,
    mask: torch.Tensor | None = None,
    flowed: torch.Tensor | None = None,
) -> torch.Tensor:
    """Single-sample estimate of KL(q(z|y) || p(z|...)) through an invertible flow.

    ``q_sample`` is z drawn from ``q``; ``flowed`` is f(z) (defaults to z for an
    identity flow). ``log_det`` is the total log |det df/dz| per batch item.
    The sum over frames and channels is divided by the number of valid frames.
    """
    z = q_sample.values if isinstance(q_sample, LatentSeq) else q_sample
    fz = z if flowed is None else flowed
    if z.shape != q.mean.shape or fz.shape != prior.mean.shape:
        raise LossError("sample / distribution shape mismatch")
    m = _mask_for(q, mask)
    log_q = gaussian_log_prob(z, q)
    log_p = gaussian_log_prob(fz, prior)
    log_det = torch.as_tensor(log_det, dtype=z.dtype, device=z.device)
    total = torch.sum((log_q - log_p) * m) - torch.sum(log_det.expand(z.shape[0]) if log_det.dim() == 0 else log_det)
    return total / torch.sum(m)


_MEL: MelExtractor | None = None


def _mel() -> MelExtractor:
    global _MEL
    if _MEL is None:
        _MEL = MelExtractor()
    return _MEL


def recon_loss(y_hat: torch.Tensor, y: torch.Tensor, extractor: MelExtractor | None = None) -> torch.Tensor:
    """Mean absolute log-mel difference between two equal-length waveforms."""
    if y_hat.shape != y.shape:
        raise LossError(f"length mismatch {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    ext = extractor if extractor is not None else _mel()
    return torch.mean(torch.abs(ext(y_hat) - ext(y)))


def adv_g(fake_scores: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(fake_scores) == 0:
        raise LossError("empty score list")
    return sum(torch.mean((f - 1) ** 2) for f in fake_scores)


def adv_d(real_scores: Sequence[torch.Tensor], fake_scores: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(real_scores) == 0 or len(real_scores) != len(fake_scores):
        raise LossError("score lists empty or of different length")
    return sum(torch.mean((r - 1) ** 2) + torch.mean(f**2) for r, f in zip(real_scores, fake_scores))


def feature_matching(real_feats: Sequence[Sequence[torch.Tensor]], fake_feats: Sequence[Sequence[torch.Tensor]]) -> torch.Tensor:
    if len(real_feats) != len(fake_feats):
        raise LossError("different number of sub-discriminators")
    total = None
    for rs, fs in zip(real_feats, fake_feats):
        if len(rs) != len(fs):
            raise LossError("different number of feature layers")
        for r, f in zip(rs, fs):
            if r.shape != f.shape:
                raise LossError(f"feature shape mismatch {tuple(r.shape)} vs {tuple(f.shape)}")
            term = torch.mean(torch.abs(r.detach() - f))
            total = term if total is None else total + term
    if total is None:
        raise LossError("no features")
    return total


def duration_loss(d_hat: torch.Tensor, d: torch.Tensor, mask: torch.Tensor | None = None, log_domain: bool = False) -> torch.Tensor:
    """Mean squared error over valid phonemes, linear frame domain by default."""
    if d_hat.shape != d.shape:
        raise LossError(f"length mismatch {tuple(d_hat.shape)} vs {tuple(d.shape)}")
    d = d.to(d_hat.dtype)
    if log_domain:
        d_hat, d = torch.log1p(d_hat), torch.log1p(d)
    if mask is None:
        return torch.mean((d_hat - d) ** 2)
    mask = mask.reshape(d.shape).to(d_hat.dtype)
    return torch.sum((d_hat - d) ** 2 * mask) / torch.sum(mask)


def bn_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """MSE between predicted and reference BN frames, valid frames only."""
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    m = mask if mask.dim() == 3 else mask.unsqueeze(1)
    return torch.sum((pred - target) ** 2 * m) / (torch.sum(m) * pred.shape[1])


# ------------------------------------------------------------------ report

GENERATOR_TERMS = ("recon", "kl_pr", "kl_ac", "bn_mse", "adv_g", "fm", "dur")


@dataclass
class LossReport:
    recon: float
    kl_ac: float
    adv_g: float
    adv_d: float
    fm: float
    dur: float
    total_g: float
    total_d: float
    alpha: float
    lam: float
    kl_pr: float | None = None
    bn_mse: float | None = None
    bn_mse_weight: float = 1.0

    def terms(self) -> set[str]:
        present = {"recon", "kl_ac", "adv_g", "adv_d", "fm", "dur"}
        if self.kl_pr is not None:
            present.add("kl_pr")
        if self.bn_mse is not None:
            present.add("bn_mse")
        return present

    def to_json(self, step: int) -> str:
        row: dict[str, float | int] = {"step": step}
        for k in ("recon", "kl_pr", "kl_ac", "bn_mse", "adv_g", "adv_d", "fm", "dur", "total_g", "total_d"):
            v = getattr(self, k)
            if v is not None:
                row[k] = v
        return json.dumps(row)


def weighted_total_g(parts: dict, alpha: float, lam: float, bn_mse_weight: float = 1.0):
    """adv_g + fm + (alpha * recon + kl_pr + kl_ac) + lam * dur (+ weighted BN MSE in ablations)."""
    total = parts["adv_g"] + parts["fm"] + alpha * parts["recon"] + parts["kl_ac"] + lam * parts["dur"]
    if parts.get("kl_pr") is not None:
        total = total + parts["kl_pr"]
    if parts.get("bn_mse") is not None:
        total = total + bn_mse_weight * parts["bn_mse"]
    return total


def compose(parts: dict, alpha: float = 45.0, lam: float = 1.0, bn_mse_weight: float = 1.0) -> LossReport:
    vals: dict[str, float | None] = {}
    for k in ("recon", "kl_pr", "kl_ac", "bn_mse", "adv_g", "adv_d", "fm", "dur"):
        v = parts.get(k)
        if v is None:
            if k in ("kl_pr", "bn_mse"):
                vals[k] = None
                continue
            raise LossError(f"missing loss term {k!r}")
        v = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(v):
            raise LossError(f"non-finite loss term {k!r} = {v}")
        vals[k] = v
    total_g = weighted_total_g(vals, alpha, lam, bn_mse_weight)
    return LossReport(
        recon=vals["recon"],
        kl_ac=vals["kl_ac"],
        adv_g=vals["adv_g"],
        adv_d=vals["adv_d"],
        fm=vals["fm"],
        dur=vals["dur"],
        total_g=total_g,
        total_d=vals["adv_d"],
        alpha=alpha,
        lam=lam,
        kl_pr=vals["kl_pr"],
        bn_mse=vals["bn_mse"],
        bn_mse_weight=bn_mse_weight,
    )
