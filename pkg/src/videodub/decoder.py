"""Variance adaptor (pitch and energy, no durations) and mel decoder.

The adaptor predicts pitch (in log1p Hz) and energy per mel frame with
small convolutional stacks. The conditioning value added back into the
hidden sequence is the ground-truth target during training (teacher
forcing) and the prediction at inference; either way it is quantized
onto a fixed linear grid and looked up in a learned embedding table, so
gradients reach the predictors only through their regression losses.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .encoders import FFTStack, sinusoid_positions


class VariancePredictor(nn.Module):
    """Conv1d x2 with ReLU, layer norm, and dropout, then a scalar head."""

    def __init__(self, d: int, filter_size: int, kernel_size: int, dropout: float):
        super().__init__()
        pad = (kernel_size - 1) // 2
        self.conv1 = nn.Conv1d(d, filter_size, kernel_size, padding=pad)
        self.norm1 = nn.LayerNorm(filter_size)
        self.conv2 = nn.Conv1d(filter_size, filter_size, kernel_size, padding=pad)
        self.norm2 = nn.LayerNorm(filter_size)
        self.dropout = nn.Dropout(dropout)
        self.head = nn.Linear(filter_size, 1)

    def forward(self, h: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        # Padded positions are re-zeroed between the convolutions so the
        # second kernel sees the same zeros it would without batching.
        y = F.relu(self.conv1(h.transpose(1, 2))).transpose(1, 2)
        y = self.dropout(self.norm1(y))
        if mask is not None:
            y = y.masked_fill(~mask.unsqueeze(-1), 0.0)
        y = F.relu(self.conv2(y.transpose(1, 2))).transpose(1, 2)
        y = self.dropout(self.norm2(y))
        out = self.head(y).squeeze(-1)
        if mask is not None:
            out = out.masked_fill(~mask, 0.0)
        return out


class VarianceAdaptor(nn.Module):
    """Adds quantized pitch/energy embeddings to the hidden sequence."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.d
        self.pitch_predictor = VariancePredictor(
            d, config.variance_filter_size, config.variance_kernel_size, config.variance_dropout
        )
        self.energy_predictor = VariancePredictor(
            d, config.variance_filter_size, config.variance_kernel_size, config.variance_dropout
        )
        n_bins = config.n_variance_bins
        # Zero-initialized so that bins never seen in training condition the
        # decoder with nothing rather than with noise at inference time.
        self.pitch_embedding = nn.Embedding(n_bins, d)
        self.energy_embedding = nn.Embedding(n_bins, d)
        nn.init.zeros_(self.pitch_embedding.weight)
        nn.init.zeros_(self.energy_embedding.weight)
        self.register_buffer(
            "pitch_bins", torch.linspace(config.pitch_range[0], config.pitch_range[1], n_bins - 1)
        )
        self.register_buffer(
            "energy_bins", torch.linspace(config.energy_range[0], config.energy_range[1], n_bins - 1)
        )

    def set_ranges(self, pitch_range: tuple[float, float], energy_range: tuple[float, float]) -> None:
        n_bins = self.pitch_embedding.num_embeddings
        self.pitch_bins.copy_(torch.linspace(pitch_range[0], pitch_range[1], n_bins - 1))
        self.energy_bins.copy_(torch.linspace(energy_range[0], energy_range[1], n_bins - 1))

    def forward(
        self,
        h: torch.Tensor,
        mask: torch.Tensor | None = None,
        pitch_target: torch.Tensor | None = None,
        energy_target: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (adapted hidden [B, T, d], pitch_pred [B, T], energy_pred [B, T]).

        Targets, when given, must match the sequence length; supplying
        one target but not the other is rejected.
        """
        if (pitch_target is None) != (energy_target is None):
            raise ValueError("pitch and energy targets must be supplied together")
        for name, target in (("pitch", pitch_target), ("energy", energy_target)):
            if target is not None and target.shape != h.shape[:-1]:
                raise ValueError(
                    f"{name} target shape {tuple(target.shape)} does not match hidden {tuple(h.shape[:-1])}"
                )

        pitch_pred = self.pitch_predictor(h, mask)
        pitch_cond = pitch_target if pitch_target is not None else pitch_pred.detach()
        h = h + self.pitch_embedding(torch.bucketize(pitch_cond, self.pitch_bins))
        if mask is not None:
            h = h.masked_fill(~mask.unsqueeze(-1), 0.0)

        energy_pred = self.energy_predictor(h, mask)
        energy_cond = energy_target if energy_target is not None else energy_pred.detach()
        h = h + self.energy_embedding(torch.bucketize(energy_cond, self.energy_bins))
        if mask is not None:
            h = h.masked_fill(~mask.unsqueeze(-1), 0.0)
        return h, pitch_pred, energy_pred


class MelDecoder(nn.Module):
    """FFT-block stack plus a linear projection to mel bins; length preserving."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.blocks = FFTStack(config.n_decoder_blocks, config.d, config.n_heads,
                               config.conv_filter_size, config.conv_kernel_sizes, config.dropout)
        self.project = nn.Linear(config.d, config.n_mels)

    def forward(self, h: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        x = h + sinusoid_positions(h.shape[1], h.shape[2], device=h.device, dtype=h.dtype)
        x = self.blocks(x, mask)
        return self.project(x)
