"""Audio-visual synchronization metrics and the evaluation harness.

Sync metrics follow the offset-sweep recipe: embed the audio (grouped n
mel frames per video frame) and the video into sequences at the video
frame rate, slide one against the other over a range of offsets, and
report the distance-curve minimum (LSE-D) and its depth below the
median (LSE-C, the confidence surrogate: flat curves score near zero,
sharply dipped ones score high).

Embedders are pluggable. The bundled "oracle" embedder only works on
synthetic datasets: it snaps video features to the generator's phoneme
centers and inverts the mel rendering map, so perfectly paired streams
embed identically.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .aligner import default_bandwidth, diagonal_rate
from .audio import griffin_lim, mel_spectrogram, MelSpectrogram
from .data import DatasetIndex, Sample, fit_to_length, load_sample, load_vocab, reconcile_lengths
from .errors import ConfigError, DataError, SignalError
from .ndf import save_array
from .synthetic import SyntheticWorld


class SyncEmbedder:
    """Interface: map both streams to embeddings at the video frame rate."""

    def embed_video(self, video_feats: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def embed_audio(self, mel: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError


class OracleEmbedder(SyncEmbedder):
    """Ground-truth embedder for synthetic datasets.

    Both sides are mapped to the generator's phoneme center for the
    frame: video features by nearest-center lookup, audio by solving
    the (overdetermined, exactly invertible) rendering system for the
    center component and snapping.
    """

    def __init__(self, world: SyntheticWorld):
        self.world = world
        self.feature_dim = world.config.feature_dim
        self._pinv = np.linalg.pinv(world.render)

    @classmethod
    def from_dataset_dir(cls, dataset_dir: str | Path) -> "OracleEmbedder":
        return cls(SyntheticWorld.load(dataset_dir))

    def _snap(self, vectors: np.ndarray) -> np.ndarray:
        dists = np.linalg.norm(vectors[:, None, :] - self.world.centers[None, :, :], axis=2)
        return self.world.centers[np.argmin(dists, axis=1)]

    def embed_video(self, video_feats: np.ndarray) -> np.ndarray:
        return self._snap(np.asarray(video_feats, dtype=np.float64))

    def embed_audio(self, mel: np.ndarray, n: int) -> np.ndarray:
        mel = np.asarray(mel, dtype=np.float64)
        t_v = len(mel) // n
        grouped = mel[: t_v * n].reshape(t_v, -1)
        solved = grouped @ self._pinv.T
        return self._snap(solved[:, : self.feature_dim])


_EMBEDDERS = {"oracle": OracleEmbedder.from_dataset_dir}


def register_embedder(name: str, factory) -> None:
    _EMBEDDERS[name] = factory


def make_embedder(name: str, dataset_dir: str | Path) -> SyncEmbedder:
    try:
        factory = _EMBEDDERS[name]
    except KeyError:
        raise ConfigError(f"unknown sync embedder {name!r}; registered: {sorted(_EMBEDDERS)}") from None
    return factory(dataset_dir)


def sync_embed(
    mel: np.ndarray, video_feats: np.ndarray, embedder: SyncEmbedder, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Paired embedding sequences, one per video frame.

    The audio stream must cover the same span as the video within one
    video frame (n mel frames); it is trimmed/padded to exactly n * T_v
    before grouping.
    """
    t_v = len(video_feats)
    reconcile_lengths(len(mel), t_v, n, sample_id="sync-embed")  # raises beyond 1-frame slack
    mel = fit_to_length(np.asarray(mel), n * t_v)
    audio_emb = np.asarray(embedder.embed_audio(mel, n))
    video_emb = np.asarray(embedder.embed_video(np.asarray(video_feats)))
    if audio_emb.shape != video_emb.shape:
        raise DataError(
            f"embedder returned mismatched shapes {audio_emb.shape} vs {video_emb.shape}"
        )
    return audio_emb, video_emb


@dataclass
class SyncCurve:
    offsets: np.ndarray  # [2 * max_offset + 1] ints
    distances: np.ndarray  # mean embedding distance per offset

    @property
    def argmin_offset(self) -> int:
        return int(self.offsets[int(np.argmin(self.distances))])


def _window_means(x: np.ndarray, window: int) -> np.ndarray:
    cums = np.cumsum(np.concatenate([np.zeros((1, x.shape[1])), x], axis=0), axis=0)
    return (cums[window:] - cums[:-window]) / window


def lse_metrics(
    audio_emb: np.ndarray, video_emb: np.ndarray, max_offset: int = 15, window: int = 5
) -> tuple[float, float, SyncCurve]:
    """Lip-sync error distance and confidence from an offset sweep.

    distance(o) averages the Euclidean distance between window-mean
    embeddings of audio shifted by o against video. LSE-D is the curve
    minimum, LSE-C the median minus the minimum.
    """
    audio_emb = np.asarray(audio_emb, dtype=np.float64)
    video_emb = np.asarray(video_emb, dtype=np.float64)
    if audio_emb.shape != video_emb.shape or audio_emb.ndim != 2:
        raise DataError("embedding sequences must share shape [T, E]")
    t = len(audio_emb)
    if t < 2 * max_offset + window:
        raise DataError(f"sequences of length {t} too short for max_offset={max_offset}, window={window}")

    offsets = np.arange(-max_offset, max_offset + 1)
    distances = np.zeros(len(offsets))
    for idx, o in enumerate(offsets):
        if o >= 0:
            a, v = audio_emb[o:], video_emb[: t - o]
        else:
            a, v = audio_emb[: t + o], video_emb[-o:]
        wa, wv = _window_means(a, window), _window_means(v, window)
        distances[idx] = float(np.mean(np.linalg.norm(wa - wv, axis=1)))
    lse_d = float(distances.min())
    lse_c = float(np.median(distances) - distances.min())
    return lse_d, lse_c, SyncCurve(offsets=offsets, distances=distances)


@dataclass
class EvalReport:
    lse_d: float | None
    lse_c: float | None
    mean_diagonal_rate: float
    mel_l1: float
    num_samples: int
    curve_offsets: list[int] | None = None
    curve_distances: list[float] | None = None  # mean over samples per offset
    per_sample: list[dict] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def inference_mel_l1(model, sample: Sample) -> tuple[float, float, torch.Tensor]:
    """Inference-mode mel L1 and diagonal rate for one sample."""
    ids = torch.from_numpy(sample.phoneme_ids)
    video = torch.from_numpy(sample.mouth).float()
    face = torch.from_numpy(sample.face).float() if model.config.multi_speaker else None
    out = model.infer(ids, video, face=face)
    target = torch.from_numpy(sample.mel).float()
    t = min(len(target), len(out.mel))
    mel_l1 = float((out.mel[:t] - target[:t]).abs().mean())
    r = float(diagonal_rate(out.attention, default_bandwidth(sample.t_p)))
    return mel_l1, r, out.mel


def mean_inference_mel_l1(model, samples: list[Sample]) -> float:
    return float(np.mean([inference_mel_l1(model, s)[0] for s in samples]))


def evaluate(
    checkpoint_dir: str | Path,
    index: DatasetIndex,
    embedder: SyncEmbedder | None = None,
    max_offset: int = 15,
    window: int = 5,
    griffin_lim_iters: int = 30,
    seed: int = 0,
) -> EvalReport:
    """Run inference over a split and aggregate quality and sync metrics.

    Sync metrics go through the full audio path: predicted mel, then
    Griffin-Lim, then mel re-extraction, then the embedder. Samples too
    short for the offset sweep, or whose vocoding fails, are recorded in
    ``errors`` and skipped for the sync part; the report is still produced.
    """
    model, info = ckpt.load_model(checkpoint_dir)
    model.eval()
    vocab = load_vocab(index.root)
    if list(vocab.symbols) != list(info.vocab_symbols):
        raise DataError("dataset vocabulary does not match the checkpoint's")

    per_sample: list[dict] = []
    errors: list[str] = []
    mel_l1s, rates, lse_ds, lse_cs, curves = [], [], [], [], []
    for i, rec in enumerate(index.records):
        sample = load_sample(rec, index.root, vocab)
        mel_l1, r, mel_pred = inference_mel_l1(model, sample)
        mel_l1s.append(mel_l1)
        rates.append(r)
        entry = {"id": sample.id, "mel_l1": mel_l1, "r": r}
        if embedder is not None:
            try:
                n = sample.geometry.upsample_factor
                mel_obj = MelSpectrogram(
                    frames=mel_pred.numpy(), geometry=sample.geometry, n_mels=mel_pred.shape[1]
                )
                wave = griffin_lim(mel_obj, iters=griffin_lim_iters, seed=seed + i)
                remel = mel_spectrogram(wave, sample.geometry, n_mels=mel_pred.shape[1])
                audio_emb, video_emb = sync_embed(remel.frames, sample.mouth, embedder, n)
                lse_d, lse_c, curve = lse_metrics(audio_emb, video_emb, max_offset=max_offset, window=window)
                lse_ds.append(lse_d)
                lse_cs.append(lse_c)
                curves.append(curve.distances)
                entry.update({"lse_d": lse_d, "lse_c": lse_c, "argmin_offset": curve.argmin_offset})
            except (DataError, SignalError, ValueError) as exc:
                errors.append(f"{sample.id}: {exc}")
        per_sample.append(entry)

    offsets = np.arange(-max_offset, max_offset + 1)
    return EvalReport(
        lse_d=float(np.mean(lse_ds)) if lse_ds else None,
        lse_c=float(np.mean(lse_cs)) if lse_cs else None,
        mean_diagonal_rate=float(np.mean(rates)) if rates else 0.0,
        mel_l1=float(np.mean(mel_l1s)) if mel_l1s else 0.0,
        num_samples=len(index.records),
        curve_offsets=offsets.tolist() if curves else None,
        curve_distances=np.mean(curves, axis=0).tolist() if curves else None,
        per_sample=per_sample,
        errors=errors,
    )


def save_report(report: EvalReport, out_dir: str | Path) -> Path:
    """Write report.json, plus the mean per-offset distance table as NDF1."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(asdict(report), indent=1, default=_json_default) + "\n", encoding="utf-8")
    if report.curve_offsets is not None:
        save_array(
            out_dir / "sync_curve.ndf",
            np.stack([np.asarray(report.curve_offsets, dtype=np.float64),
                      np.asarray(report.curve_distances, dtype=np.float64)]),
        )
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
