"""Independent reference computations used to freeze or cross-check values."""
from __future__ import annotations

import math

import numpy as np

from accent_vits.dsp import mel_filterbank


def mel_oracle(x: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """Frame-by-frame numpy log-mel: reflect pad 512, periodic Hann(800) centred in 1024."""
    x = np.asarray(x, dtype=np.float64)
    n_fft, win, hop = 1024, 800, 200
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect") if x.size > pad else np.pad(x, pad)
    n = np.arange(win)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * n / win)
    window = np.zeros(n_fft)
    off = (n_fft - win) // 2
    window[off : off + win] = w
    n_frames = 1 + (xp.size - n_fft) // hop
    basis = mel_filterbank().astype(np.float64)
    out = np.empty((n_frames, basis.shape[0]))
    for t in range(n_frames):
        seg = xp[t * hop : t * hop + n_fft] * window
        mag = np.abs(np.fft.rfft(seg))
        out[t] = np.log(np.maximum(basis @ mag, floor))
    return out


def kl_monte_carlo(mq, lvq, mp, lvp, n: int, rng: np.random.Generator) -> float:
    """E_q[log q(z) - log p(z)], summed over channels, averaged over frames."""
    sq, sp = np.exp(0.5 * lvq), np.exp(0.5 * lvp)
    z = mq[None] + sq[None] * rng.standard_normal((n,) + mq.shape)
    log_q = -0.5 * (math.log(2 * math.pi) + lvq + ((z - mq) / sq) ** 2)
    log_p = -0.5 * (math.log(2 * math.pi) + lvp + ((z - mp) / sp) ** 2)
    per_frame = (log_q - log_p).sum(axis=-1)  # (n, T)
    return float(per_frame.mean())


def central_jacobian(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(f(x)).ravel()
    jac = np.empty((y0.size, x.size))
    for i in range(x.size):
        d = np.zeros(x.size)
        d[i] = eps
        jac[:, i] = (np.asarray(f(x + d.reshape(x.shape))).ravel() - np.asarray(f(x - d.reshape(x.shape))).ravel()) / (2 * eps)
    return jac
