"""Feed-forward transformer blocks and the phoneme / video encoders.

Both encoders preserve sequence length and keep padded positions out of
every computation that could leak across the batch: attention masks the
padded keys and each sub-layer output is zeroed at padded positions
before the next convolution sees it.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


def sinusoid_positions(length: int, dim: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """Classic sine/cosine position table, shape [length, dim]."""
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.pow(10000.0, torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position / div)
    table[:, 1::2] = torch.cos(position / div[: dim // 2])
    return table.to(device=device, dtype=dtype)


def _check_mask(mask: torch.Tensor | None, x: torch.Tensor) -> torch.Tensor | None:
    if mask is None:
        return None
    if mask.shape != x.shape[:-1]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match sequence {tuple(x.shape[:-1])}")
    return mask


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention with padded keys masked to -inf."""

    def __init__(self, d: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (b, t, self.n_heads, self.d_head)
        q = q.view(shape).transpose(1, 2)  # [B, H, T, d_head]
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if mask is not None:
            pad = ~mask.view(b, 1, 1, t)
            scores = scores.masked_fill(pad, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        attn = self.dropout(attn)
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(ctx)


class ConvFeedForward(nn.Module):
    """Two 1D convolutions over time (the FFT block's position-wise layer)."""

    def __init__(self, d: int, filter_size: int, kernels: tuple[int, int], dropout: float):
        super().__init__()
        k1, k2 = kernels
        self.conv1 = nn.Conv1d(d, filter_size, k1, padding=(k1 - 1) // 2)
        self.conv2 = nn.Conv1d(filter_size, d, k2, padding=(k2 - 1) // 2)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x.transpose(1, 2)
        y = self.conv2(F.relu(self.conv1(y)))
        return self.dropout(y.transpose(1, 2))


class FFTBlock(nn.Module):
    """Self-attention + 1D convolution, each with residual and layer norm."""

    def __init__(self, d: int, n_heads: int, filter_size: int, kernels: tuple[int, int], dropout: float):
        super().__init__()
        self.attention = MultiHeadSelfAttention(d, n_heads, dropout)
        self.attn_dropout = nn.Dropout(dropout)
        self.attn_norm = nn.LayerNorm(d)
        self.feed_forward = ConvFeedForward(d, filter_size, kernels, dropout)
        self.ff_norm = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        mask = _check_mask(mask, x)
        y = self.attn_norm(x + self.attn_dropout(self.attention(x, mask)))
        if mask is not None:
            y = y.masked_fill(~mask.unsqueeze(-1), 0.0)
        z = self.ff_norm(y + self.feed_forward(y))
        if mask is not None:
            z = z.masked_fill(~mask.unsqueeze(-1), 0.0)
        return z


class FFTStack(nn.Module):
    def __init__(self, n_blocks: int, d: int, n_heads: int, filter_size: int,
                 kernels: tuple[int, int], dropout: float):
        super().__init__()
        self.blocks = nn.ModuleList(
            FFTBlock(d, n_heads, filter_size, kernels, dropout) for _ in range(n_blocks)
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return x


class PhonemeEncoder(nn.Module):
    """Embedding + positional encoding + N FFT blocks; output [B, T_p, d]."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.d, padding_idx=0)
        self.blocks = FFTStack(config.n_phoneme_blocks, config.d, config.n_heads,
                               config.conv_filter_size, config.conv_kernel_sizes, config.dropout)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValueError(
                f"phoneme id out of range [0, {self.config.vocab_size}): "
                f"min {int(ids.min())}, max {int(ids.max())}"
            )
        x = self.embedding(ids)
        x = x + sinusoid_positions(x.shape[1], x.shape[2], device=x.device, dtype=x.dtype)
        return self.blocks(x, mask)


class MouthCropFrontend(nn.Module):
    """Feature extractor for raw mouth crops [B, T_v, H, W].

    The first convolution is 3D and spans 5 frames with temporal padding,
    so T_v is preserved and each output frame sees at most 2 neighbors on
    either side; a 2D convolution and spatial average pooling follow.
    """

    def __init__(self, feature_dim: int, channels: int = 16):
        super().__init__()
        self.conv3d = nn.Conv3d(1, channels, kernel_size=(5, 5, 5), stride=(1, 2, 2), padding=(2, 2, 2))
        self.conv2d = nn.Conv2d(channels, feature_dim, kernel_size=3, stride=2, padding=1)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        b, t, h, w = crops.shape
        y = F.relu(self.conv3d(crops.unsqueeze(1)))  # [B, C, T, H', W']
        c = y.shape[1]
        y = y.transpose(1, 2).reshape(b * t, c, y.shape[3], y.shape[4])
        y = F.relu(self.conv2d(y))
        y = y.mean(dim=(2, 3))  # spatial pooling to the feature dim
        return y.view(b, t, -1)


class VideoEncoder(nn.Module):
    """Mouth-region frames to hidden sequence [B, T_v, d].

    Accepts either precomputed per-frame features [B, T_v, F] or raw
    crops [B, T_v, H, W] depending on ``config.video_input``.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.video_input == "crops":
            self.frontend = MouthCropFrontend(config.video_feature_dim)
        else:
            self.frontend = None
        self.project = nn.Linear(config.video_feature_dim, config.d)
        self.blocks = FFTStack(config.n_video_blocks, config.d, config.n_heads,
                               config.conv_filter_size, config.conv_kernel_sizes, config.dropout)

    def extract_features(self, video: torch.Tensor) -> torch.Tensor:
        """Per-frame features [B, T_v, F]; temporally local for raw crops."""
        if self.frontend is None:
            if video.ndim != 3 or video.shape[-1] != self.config.video_feature_dim:
                raise ValueError(
                    f"expected features [B, T_v, {self.config.video_feature_dim}], got {tuple(video.shape)}"
                )
            return video
        if video.ndim != 4 or video.shape[-2:] != (self.config.crop_size, self.config.crop_size):
            raise ValueError(
                f"expected crops [B, T_v, {self.config.crop_size}, {self.config.crop_size}], "
                f"got {tuple(video.shape)}"
            )
        return self.frontend(video)

    def forward(self, video: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        feats = self.extract_features(video)
        x = self.project(feats)
        x = x + sinusoid_positions(x.shape[1], x.shape[2], device=x.device, dtype=x.dtype)
        return self.blocks(x, mask)
