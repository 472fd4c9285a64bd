"""Text-video alignment: cross-modal attention, nearest upsampling, and
the diagonal attention-rate constraint.

Video hidden states query the phoneme hidden states directly (no learned
projections, a single head of width d):

    A = softmax(H_vid @ H_pho^T / sqrt(d))        rows are video frames
    H_con = A @ H_pho + dropout(H_vid)

The dropout sits on the residual branch only, so at training time the
model cannot cheaply copy visual features into the acoustic path; in
eval mode the residual passes through unscaled.

The diagonal rate of an attention matrix is the fraction of its mass
inside a band of half-width ``b`` around the line t = (T_p / T_v) * s.
Its negation is the diagonal-constraint training loss.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


def default_bandwidth(t_p: int) -> float:
    return float(max(1, round(0.2 * t_p)))


def text_video_attention(
    h_vid: torch.Tensor,
    h_pho: torch.Tensor,
    video_mask: torch.Tensor | None = None,
    phoneme_mask: torch.Tensor | None = None,
    dropout: float = 0.5,
    training: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Attend video frames over phonemes.

    Accepts [T, d] or [B, T, d] inputs; returns (H_con, A) with A of
    shape [(B,) T_v, T_p]. Rows of A at padded video positions are
    zeroed; padded phoneme columns receive no mass.
    """
    squeeze = h_vid.ndim == 2
    if squeeze:
        h_vid, h_pho = h_vid.unsqueeze(0), h_pho.unsqueeze(0)
        video_mask = video_mask.unsqueeze(0) if video_mask is not None else None
        phoneme_mask = phoneme_mask.unsqueeze(0) if phoneme_mask is not None else None
    if h_vid.shape[-1] != h_pho.shape[-1]:
        raise ValueError(f"hidden sizes differ: video d={h_vid.shape[-1]}, phoneme d={h_pho.shape[-1]}")
    d = h_vid.shape[-1]
    scores = h_vid @ h_pho.transpose(-2, -1) / (d**0.5)
    if phoneme_mask is not None:
        if not bool(phoneme_mask.any(dim=-1).all()):
            raise ValueError("a sample has no valid phonemes to attend to")
        scores = scores.masked_fill(~phoneme_mask.unsqueeze(-2), float("-inf"))
    attn = torch.softmax(scores, dim=-1)
    if video_mask is not None:
        attn = attn * video_mask.unsqueeze(-1)
    h_con = attn @ h_pho + F.dropout(h_vid, p=dropout, training=training)
    if squeeze:
        return h_con.squeeze(0), attn.squeeze(0)
    return h_con, attn


def upsample_nearest(h: torch.Tensor, n: int) -> torch.Tensor:
    """Repeat each time step n times: output row j is input row floor(j / n)."""
    if n < 1:
        raise ValueError(f"upsample factor must be >= 1, got {n}")
    return torch.repeat_interleave(h, n, dim=-2)


def diagonal_band_mask(t_v: int, t_p: int, b: float, device=None) -> torch.Tensor:
    """Boolean [t_v, t_p] band around the ideal linear alignment.

    Row s (1-based) covers phoneme indices max(round(k*s - b), 1) ..
    min(round(k*s + b), t_p) with k = t_p / t_v; the band is empty when
    that range is. Index arithmetic runs in float64 with half-to-even
    rounding so the vectorized mask agrees exactly with a scalar loop.
    """
    k = t_p / t_v
    s = np.arange(1, t_v + 1, dtype=np.float64)
    lo = np.maximum(np.round(k * s - b), 1)
    hi = np.minimum(np.round(k * s + b), t_p)
    t = np.arange(1, t_p + 1, dtype=np.float64)
    band = (t[None, :] >= lo[:, None]) & (t[None, :] <= hi[:, None])
    return torch.from_numpy(band).to(device=device)


def diagonal_rate(
    attn: torch.Tensor,
    b: float,
    video_mask: torch.Tensor | None = None,
    phoneme_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Fraction of attention mass inside the diagonal band, in [0, 1].

    Differentiable with respect to ``attn``. Padded video rows are
    excluded from both the numerator and the denominator; padded phoneme
    columns are excluded by computing the band over valid lengths only
    (padding must be on the right).
    """
    if attn.ndim != 2:
        raise ValueError(f"diagonal_rate expects a single [T_v, T_p] matrix, got {tuple(attn.shape)}")
    t_v = int(video_mask.sum()) if video_mask is not None else attn.shape[0]
    t_p = int(phoneme_mask.sum()) if phoneme_mask is not None else attn.shape[1]
    if t_v < 1:
        raise ValueError("all video rows are masked")
    if t_p < 1:
        raise ValueError("all phoneme columns are masked")
    band = diagonal_band_mask(t_v, t_p, b, device=attn.device)
    inside = (attn[:t_v, :t_p] * band.to(attn.dtype)).sum()
    return inside / t_v


def diagonal_constraint_loss(
    attn: torch.Tensor,
    b: float,
    video_mask: torch.Tensor | None = None,
    phoneme_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """The training penalty: minus the diagonal rate."""
    return -diagonal_rate(attn, b, video_mask=video_mask, phoneme_mask=phoneme_mask)
