"""End-to-end dubbing model: phonemes + mouth frames -> mel frames.

Flow: encode both modalities, align video frames over phonemes, upsample
the context sequence by the mel/video frame-rate ratio, add the speaker
embedding (multi-speaker only), run the variance adaptor, and decode.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .aligner import text_video_attention, upsample_nearest
from .config import ModelConfig
from .decoder import MelDecoder, VarianceAdaptor
from .encoders import PhonemeEncoder, VideoEncoder
from .speaker import SpeakerEncoder, broadcast_add


@dataclass
class ModelOutput:
    mel: torch.Tensor  # [B, T_m, n_mels]
    pitch: torch.Tensor  # [B, T_m], log1p Hz
    energy: torch.Tensor  # [B, T_m]
    attention: torch.Tensor  # [B, T_v, T_p]
    mel_mask: torch.Tensor  # [B, T_m] bool


class DubbingModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.phoneme_encoder = PhonemeEncoder(config)
        self.video_encoder = VideoEncoder(config)
        self.speaker_encoder = (
            SpeakerEncoder(config.face_feature_dim, config.ise_hidden, config.d)
            if config.multi_speaker
            else None
        )
        self.variance_adaptor = VarianceAdaptor(config)
        self.mel_decoder = MelDecoder(config)

    def forward(
        self,
        phoneme_ids: torch.Tensor,  # [B, T_p] long
        video: torch.Tensor,  # [B, T_v, F] or [B, T_v, H, W]
        phoneme_mask: torch.Tensor | None = None,
        video_mask: torch.Tensor | None = None,
        face: torch.Tensor | None = None,  # [B, face_dim]
        pitch_target: torch.Tensor | None = None,  # [B, T_m], log1p Hz
        energy_target: torch.Tensor | None = None,  # [B, T_m]
    ) -> ModelOutput:
        cfg = self.config
        if phoneme_mask is None:
            phoneme_mask = torch.ones(phoneme_ids.shape, dtype=torch.bool, device=phoneme_ids.device)
        if video_mask is None:
            video_mask = torch.ones(video.shape[:2], dtype=torch.bool, device=video.device)

        h_pho = self.phoneme_encoder(phoneme_ids, phoneme_mask)
        h_vid = self.video_encoder(video, video_mask)
        h_con, attention = text_video_attention(
            h_vid,
            h_pho,
            video_mask=video_mask,
            phoneme_mask=phoneme_mask,
            dropout=cfg.aligner_dropout,
            training=self.training,
        )
        h_mel = upsample_nearest(h_con, cfg.upsample_factor)
        mel_mask = torch.repeat_interleave(video_mask, cfg.upsample_factor, dim=-1)

        if self.speaker_encoder is not None:
            if face is None:
                raise ValueError("multi-speaker model requires a face feature")
            h_mel = broadcast_add(h_mel, self.speaker_encoder(face))

        adapted, pitch, energy = self.variance_adaptor(
            h_mel, mel_mask, pitch_target=pitch_target, energy_target=energy_target
        )
        mel = self.mel_decoder(adapted, mel_mask)
        mel = mel.masked_fill(~mel_mask.unsqueeze(-1), 0.0)
        return ModelOutput(mel=mel, pitch=pitch, energy=energy, attention=attention, mel_mask=mel_mask)

    @torch.no_grad()
    def infer(
        self,
        phoneme_ids: torch.Tensor,
        video: torch.Tensor,
        face: torch.Tensor | None = None,
    ) -> ModelOutput:
        """Single-sample inference; accepts unbatched inputs and keeps eval semantics."""
        was_training = self.training
        self.eval()
        try:
            squeeze = phoneme_ids.ndim == 1
            if squeeze:
                phoneme_ids = phoneme_ids.unsqueeze(0)
                video = video.unsqueeze(0)
                face = face.unsqueeze(0) if face is not None else None
            out = self.forward(phoneme_ids, video, face=face)
            if squeeze:
                out = ModelOutput(
                    mel=out.mel.squeeze(0),
                    pitch=out.pitch.squeeze(0),
                    energy=out.energy.squeeze(0),
                    attention=out.attention.squeeze(0),
                    mel_mask=out.mel_mask.squeeze(0),
                )
            return out
        finally:
            self.train(was_training)
