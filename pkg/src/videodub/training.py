"""Composite loss, Noam schedule, batching, the training loop, and
finite-difference gradient verification.

All masked reductions are per sample first, then averaged over the
batch, so the loss of a padded batch equals the mean of the per-sample
losses computed one at a time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .aligner import default_bandwidth, diagonal_rate, text_video_attention
from .config import LossWeights, ModelConfig, TrainConfig
from .data import Sample, load_sample, load_split
from .decoder import VarianceAdaptor
from .errors import DataError, NumericError
from .model import DubbingModel
from .speaker import SpeakerEncoder


def lr_schedule(step: int, d_model: int, warmup: int) -> float:
    """Noam learning rate: d^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError(f"schedule is defined for step >= 1, got {step}")
    return d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


@dataclass
class LossBreakdown:
    mel_loss: float
    pitch_loss: float
    energy_loss: float
    dc_loss: float
    total: float
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def diagonal_rate(self) -> float:
        return -self.dc_loss


@dataclass
class Batch:
    ids: list[str]
    phoneme_ids: torch.Tensor  # [B, T_p] long
    phoneme_mask: torch.Tensor  # [B, T_p] bool
    video: torch.Tensor  # [B, T_v, F]
    video_mask: torch.Tensor  # [B, T_v] bool
    mel: torch.Tensor  # [B, T_m, n_mels]
    pitch: torch.Tensor  # [B, T_m], log1p Hz
    energy: torch.Tensor  # [B, T_m]
    mel_mask: torch.Tensor  # [B, T_m] bool
    faces: torch.Tensor  # [B, face_dim]

    def __len__(self) -> int:
        return len(self.ids)


def collate_batch(samples: list[Sample]) -> Batch:
    """Right-pad each modality to the batch maximum and build validity masks."""
    if not samples:
        raise DataError("cannot collate an empty batch")
    geo = samples[0].geometry
    for s in samples[1:]:
        if s.geometry != geo:
            raise DataError(f"geometry mismatch in batch: {s.id} has {s.geometry}, expected {geo}")
    n = geo.upsample_factor
    b = len(samples)
    t_p = max(s.t_p for s in samples)
    t_v = max(s.t_v for s in samples)
    t_m = n * t_v

    phoneme_ids = torch.zeros(b, t_p, dtype=torch.long)
    phoneme_mask = torch.zeros(b, t_p, dtype=torch.bool)
    video = torch.zeros(b, t_v, *samples[0].mouth.shape[1:])
    video_mask = torch.zeros(b, t_v, dtype=torch.bool)
    mel = torch.zeros(b, t_m, samples[0].mel.shape[1])
    pitch = torch.zeros(b, t_m)
    energy = torch.zeros(b, t_m)
    mel_mask = torch.zeros(b, t_m, dtype=torch.bool)
    faces = torch.zeros(b, len(samples[0].face))

    for i, s in enumerate(samples):
        phoneme_ids[i, : s.t_p] = torch.from_numpy(s.phoneme_ids)
        phoneme_mask[i, : s.t_p] = True
        video[i, : s.t_v] = torch.from_numpy(s.mouth)
        video_mask[i, : s.t_v] = True
        mel[i, : s.t_m] = torch.from_numpy(s.mel)
        pitch[i, : s.t_m] = torch.log1p(torch.from_numpy(s.pitch))
        energy[i, : s.t_m] = torch.from_numpy(s.energy)
        mel_mask[i, : s.t_m] = True
        faces[i] = torch.from_numpy(s.face)
    return Batch(
        ids=[s.id for s in samples],
        phoneme_ids=phoneme_ids,
        phoneme_mask=phoneme_mask,
        video=video,
        video_mask=video_mask,
        mel=mel,
        pitch=pitch,
        energy=energy,
        mel_mask=mel_mask,
        faces=faces,
    )


def _per_sample_mean(err: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked mean per sample; samples with empty masks contribute 0."""
    if err.ndim == 3:
        mask = mask.unsqueeze(-1).expand_as(err)
    total = (err * mask).sum(dim=tuple(range(1, err.ndim)))
    count = mask.sum(dim=tuple(range(1, err.ndim)))
    return torch.where(count > 0, total / count.clamp(min=1), torch.zeros_like(total))


def total_loss(
    mel_pred: torch.Tensor,
    mel_target: torch.Tensor,
    pitch_pred: torch.Tensor,
    pitch_target: torch.Tensor,
    energy_pred: torch.Tensor,
    energy_target: torch.Tensor,
    attention: torch.Tensor,
    mel_mask: torch.Tensor,
    video_mask: torch.Tensor,
    phoneme_mask: torch.Tensor,
    weights: LossWeights | None = None,
    bandwidth: float | None = None,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of masked mel L1, pitch/energy MSE, and the diagonal loss.

    Pitch regression only counts voiced frames (target > 0); a sample
    with no voiced frames contributes zero pitch loss. The diagonal
    term uses ``bandwidth`` or, when None, max(1, round(0.2 * T_p))
    per sample.
    """
    weights = weights or LossWeights()
    if mel_pred.shape != mel_target.shape:
        raise ValueError(f"mel shapes differ: {tuple(mel_pred.shape)} vs {tuple(mel_target.shape)}")
    if not bool(mel_mask.any()):
        raise ValueError("empty mel mask")

    mel_loss = _per_sample_mean((mel_pred - mel_target).abs(), mel_mask).mean()
    voiced = mel_mask & (pitch_target > 0)
    pitch_loss = _per_sample_mean((pitch_pred - pitch_target) ** 2, voiced).mean()
    energy_loss = _per_sample_mean((energy_pred - energy_target) ** 2, mel_mask).mean()

    rates = []
    for i in range(attention.shape[0]):
        t_p = int(phoneme_mask[i].sum())
        b = bandwidth if bandwidth is not None else default_bandwidth(t_p)
        rates.append(diagonal_rate(attention[i], b, video_mask=video_mask[i], phoneme_mask=phoneme_mask[i]))
    dc_loss = -torch.stack(rates).mean()

    total = (
        weights.mel * mel_loss
        + weights.pitch * pitch_loss
        + weights.energy * energy_loss
        + weights.dc * dc_loss
    )
    breakdown = LossBreakdown(
        mel_loss=mel_loss.detach().item(),
        pitch_loss=pitch_loss.detach().item(),
        energy_loss=energy_loss.detach().item(),
        dc_loss=dc_loss.detach().item(),
        total=total.detach().item(),
        weights=weights,
    )
    return total, breakdown


@dataclass
class TrainResult:
    checkpoint_dir: Path
    metrics_path: Path
    steps: int
    history: list[dict]


def _epoch_permutation(seed: int, num_samples: int, epoch: int) -> np.ndarray:
    """Shuffle order for one epoch, reproducible from (seed, epoch) alone."""
    rng = np.random.default_rng(seed + 7919)
    perm = rng.permutation(num_samples)
    for _ in range(epoch):
        perm = rng.permutation(num_samples)
    return perm


def fit_variance_ranges(config: ModelConfig, samples: list[Sample]) -> ModelConfig:
    """Pin the variance quantization grids to the training-set value ranges."""
    pitch_vals = np.concatenate([np.log1p(s.pitch) for s in samples])
    energy_vals = np.concatenate([s.energy for s in samples])
    pitch_hi = float(pitch_vals.max())
    energy_hi = float(energy_vals.max())
    return replace(
        config,
        pitch_range=(float(pitch_vals.min()), pitch_hi if pitch_hi > 0 else 1.0),
        energy_range=(float(energy_vals.min()), energy_hi if energy_hi > 0 else 1.0),
    )


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset_dir: str | Path,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the training loop on the train split of ``dataset_dir``.

    Deterministic given the seed: fixed init, per-epoch seeded shuffles,
    and checkpoints that capture optimizer and RNG state so a resumed
    run replays the interrupted one exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index, vocab = load_split(dataset_dir, "train")
    if len(index) == 0:
        raise DataError(f"no training samples in {dataset_dir}")
    samples = [load_sample(rec, index.root, vocab) for rec in index.records]

    if resume_from is None:
        torch.manual_seed(train_config.seed)
        model_config = replace(model_config, vocab_size=len(vocab))
        model_config = fit_variance_ranges(model_config, samples)
        model = DubbingModel(model_config)
        start_step = 0
        epoch, cursor = 0, 0
    else:
        model, info = ckpt.load_model(resume_from)
        model_config = info.model_config
        start_step = info.step
        torch_rng, data_state = ckpt.load_rng_states(resume_from)
        if torch_rng is not None:
            torch.set_rng_state(torch_rng)
        epoch = int(data_state["epoch"]) if data_state else 0
        cursor = int(data_state["cursor"]) if data_state else 0

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=1e-7,
        betas=(train_config.adam_beta1, train_config.adam_beta2),
        eps=train_config.adam_eps,
    )
    if resume_from is not None:
        ckpt.load_optimizer_state(resume_from, optimizer)

    metrics_path = out_dir / "metrics.jsonl"
    history: list[dict] = []
    perm = _epoch_permutation(train_config.seed, len(samples), epoch)
    last_ckpt: Path | None = Path(resume_from) if resume_from is not None else None
    model.train()

    def save(step: int) -> Path:
        return ckpt.save_checkpoint(
            out_dir / f"checkpoint_{step:06d}",
            model,
            step,
            vocab.symbols,
            optimizer=optimizer,
            train_config=train_config,
            torch_rng_state=torch.get_rng_state(),
            data_state={"epoch": epoch, "cursor": cursor},
            extra={"dataset_dir": str(dataset_dir)},
        )

    with open(metrics_path, "a", encoding="utf-8") as log:
        for step in range(start_step + 1, train_config.max_steps + 1):
            if cursor >= len(perm):
                epoch += 1
                cursor = 0
                perm = _epoch_permutation(train_config.seed, len(samples), epoch)
            chosen = perm[cursor : cursor + train_config.batch_size]
            cursor += len(chosen)
            batch = collate_batch([samples[i] for i in chosen])

            lr = train_config.lr_scale * lr_schedule(step, model_config.d, train_config.warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr

            out = model(
                batch.phoneme_ids,
                batch.video,
                phoneme_mask=batch.phoneme_mask,
                video_mask=batch.video_mask,
                face=batch.faces if model_config.multi_speaker else None,
                pitch_target=batch.pitch,
                energy_target=batch.energy,
            )
            loss, breakdown = total_loss(
                out.mel,
                batch.mel,
                out.pitch,
                batch.pitch,
                out.energy,
                batch.energy,
                out.attention,
                out.mel_mask,
                batch.video_mask,
                batch.phoneme_mask,
                weights=train_config.weights,
                bandwidth=model_config.dc_bandwidth,
            )
            if not math.isfinite(breakdown.total):
                raise NumericError(
                    f"non-finite loss at step {step}"
                    + (f"; last good checkpoint: {last_ckpt}" if last_ckpt else "")
                )

            optimizer.zero_grad()
            loss.backward()
            if train_config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_config.grad_clip)
            optimizer.step()

            entry = {
                "step": step,
                "mel": breakdown.mel_loss,
                "pitch": breakdown.pitch_loss,
                "energy": breakdown.energy_loss,
                "dc": breakdown.dc_loss,
                "total": breakdown.total,
                "r": breakdown.diagonal_rate,
                "lr": lr,
            }
            log.write(json.dumps(entry) + "\n")
            history.append(entry)

            if step % train_config.checkpoint_every == 0 or step == train_config.max_steps:
                last_ckpt = save(step)

    if last_ckpt is None:
        last_ckpt = save(train_config.max_steps)
    return TrainResult(
        checkpoint_dir=last_ckpt, metrics_path=metrics_path, steps=train_config.max_steps, history=history
    )


# ---------------------------------------------------------------------------
# Gradient verification


def finite_difference_gradients(loss_fn, params: list[torch.Tensor], eps: float = 1e-6) -> list[torch.Tensor]:
    """Central differences of ``loss_fn()`` with respect to each tensor in ``params``.

    Inputs should be float64 and drawn from continuous distributions so
    kinks (ReLU corners, L1 at zero) are not hit exactly.
    """
    grads = []
    with torch.no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = float(loss_fn())
                flat[i] = orig - eps
                down = float(loss_fn())
                flat[i] = orig
                g[i] = (up - down) / (2 * eps)
            grads.append(g.view_as(p))
    return grads


def max_relative_gradient_error(loss_fn, params: list[torch.Tensor], eps: float = 1e-6) -> float:
    """Compare autograd gradients with central finite differences."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    numeric = finite_difference_gradients(loss_fn, params, eps)
    scale = max(g.abs().max().item() for g in numeric)
    worst = max((a - n).abs().max().item() for a, n in zip(analytic, numeric))
    return worst / max(scale, 1e-12)


def _subgraph_aligner_dc(seed: int):
    gen = torch.Generator().manual_seed(seed)
    h_vid = torch.randn(5, 8, dtype=torch.float64, generator=gen).requires_grad_(True)
    h_pho = torch.randn(7, 8, dtype=torch.float64, generator=gen).requires_grad_(True)

    def loss_fn():
        h_con, attn = text_video_attention(h_vid, h_pho, dropout=0.0, training=False)
        return -diagonal_rate(attn, b=1.0) + 0.05 * (h_con**2).mean()

    return loss_fn, [h_vid, h_pho]


def _subgraph_ise_mlp(seed: int):
    torch.manual_seed(seed)
    mlp = SpeakerEncoder(face_dim=12, hidden=6, d=4).double()
    feature = torch.randn(3, 12, dtype=torch.float64)

    def loss_fn():
        return (mlp(feature) ** 2).mean()

    return loss_fn, list(mlp.parameters())


def _subgraph_variance_adaptor(seed: int):
    torch.manual_seed(seed)
    cfg = ModelConfig(
        d=6,
        n_heads=1,
        variance_filter_size=8,
        variance_kernel_size=3,
        variance_dropout=0.0,
        n_variance_bins=8,
        pitch_range=(0.0, 2.0),
        energy_range=(0.0, 2.0),
    )
    adaptor = VarianceAdaptor(cfg).double().eval()
    h = torch.randn(1, 5, 6, dtype=torch.float64)
    pitch_t = torch.rand(1, 5, dtype=torch.float64) * 2
    energy_t = torch.rand(1, 5, dtype=torch.float64) * 2

    def loss_fn():
        adapted, pitch, energy = adaptor(h, pitch_target=pitch_t, energy_target=energy_t)
        return (adapted**2).mean() + (pitch**2).mean() + (energy**2).mean()

    return loss_fn, list(adaptor.parameters())


GRADIENT_SUBGRAPHS = {
    "aligner_dc": _subgraph_aligner_dc,
    "ise_mlp": _subgraph_ise_mlp,
    "variance_adaptor": _subgraph_variance_adaptor,
}


def gradient_check(name: str, eps: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between autograd and finite differences for a named subgraph."""
    try:
        builder = GRADIENT_SUBGRAPHS[name]
    except KeyError:
        raise ValueError(f"unknown gradient-check subgraph {name!r}; known: {sorted(GRADIENT_SUBGRAPHS)}") from None
    loss_fn, params = builder(seed)
    return max_relative_gradient_error(loss_fn, params, eps)
