"""Deterministic synthetic dataset generator.

Every sample is built from shared per-vocabulary structure drawn once
from the seed: each phoneme owns a feature-space center, each speaker a
low-dim timbre code and a 4096-D face cluster center, and a fixed
linear map renders (phoneme center, position-in-phoneme code, speaker
code) into the n mel rows of one video frame. Mouth-frame features are
the phoneme centers plus small noise, so lip frames determine phoneme
timing; mel targets are rendered exactly, so the rendering map can be
inverted by tests and by the oracle sync embedder.

The ground-truth frame-to-phoneme alignment of each sample is stored
next to its features as ``<id>_align.ndf`` (not part of the manifest
schema; test plumbing only).
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import GenerateConfig
from .data import DatasetIndex, FrameGeometry, ManifestRecord, manifest_path, save_manifest
from .errors import DataError
from .ndf import load_array, save_array

POS_CODE_DIM = 4
SPEAKER_CODE_DIM = 4
MOUTH_NOISE = 0.05
FACE_NOISE = 0.05
PITCH_VIBRATO_HZ = 3.0
PITCH_VIBRATO_PERIOD = 16.0

_CENTER_SCALE = 0.5
_POS_SCALE = 0.25
_SPEAKER_SCALE = 0.45


class SyntheticWorld:
    """The frozen per-dataset structure every sample is rendered from."""

    def __init__(self, config: GenerateConfig, geometry: FrameGeometry):
        self.config = config
        self.geometry = geometry
        self.n = geometry.upsample_factor
        rng = np.random.default_rng(config.seed)
        v, f = config.vocab_size, config.feature_dim
        self.centers = rng.standard_normal((v, f))
        self.pos_codes = rng.standard_normal((config.max_frames_per_phoneme, POS_CODE_DIM))
        self.speaker_codes = rng.standard_normal((config.num_speakers, SPEAKER_CODE_DIM))
        self.face_centers = rng.standard_normal((config.num_speakers, 4096))
        render = rng.standard_normal((self.n * config.n_mels, f + POS_CODE_DIM + SPEAKER_CODE_DIM))
        render[:, :f] *= _CENTER_SCALE / np.sqrt(f)
        render[:, f : f + POS_CODE_DIM] *= _POS_SCALE / np.sqrt(POS_CODE_DIM)
        render[:, f + POS_CODE_DIM :] *= _SPEAKER_SCALE / np.sqrt(SPEAKER_CODE_DIM)
        self.render = render
        self.voiced = rng.random(v) < 0.75

    def pitch_hz(self, phoneme: int, speaker: int) -> float:
        if not self.voiced[phoneme]:
            return 0.0
        return 100.0 + 40.0 * (speaker % 4) + 8.0 * (phoneme % 6)

    def render_frame(self, phoneme: int, pos: int, speaker: int) -> np.ndarray:
        """The n mel rows for one video frame, shape [n, n_mels]."""
        x = np.concatenate([self.centers[phoneme], self.pos_codes[pos], self.speaker_codes[speaker]])
        return (self.render @ x).reshape(self.n, self.config.n_mels)

    def save(self, out_dir: Path) -> None:
        gen_dir = out_dir / "generator"
        save_array(gen_dir / "centers.ndf", self.centers)
        save_array(gen_dir / "pos_codes.ndf", self.pos_codes)
        save_array(gen_dir / "speaker_codes.ndf", self.speaker_codes)
        save_array(gen_dir / "face_centers.ndf", self.face_centers)
        save_array(gen_dir / "render.ndf", self.render)
        save_array(gen_dir / "voiced.ndf", self.voiced.astype(np.float32))
        meta = {"config": asdict(self.config), "geometry": asdict_geometry(self.geometry)}
        (gen_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, dataset_dir: str | Path) -> "SyntheticWorld":
        gen_dir = Path(dataset_dir) / "generator"
        if not gen_dir.exists():
            raise DataError(f"{dataset_dir} has no generator/ directory (not a synthetic dataset?)")
        meta = json.loads((gen_dir / "meta.json").read_text(encoding="utf-8"))
        config = GenerateConfig(**meta["config"])
        world = cls(config, FrameGeometry(**meta["geometry"]))
        # Arrays were drawn from the same seed, but read them back anyway so a
        # moved/edited dataset stays self-describing.
        world.centers = load_array(gen_dir / "centers.ndf").astype(np.float64)
        world.pos_codes = load_array(gen_dir / "pos_codes.ndf").astype(np.float64)
        world.speaker_codes = load_array(gen_dir / "speaker_codes.ndf").astype(np.float64)
        world.face_centers = load_array(gen_dir / "face_centers.ndf").astype(np.float64)
        world.render = load_array(gen_dir / "render.ndf").astype(np.float64)
        world.voiced = load_array(gen_dir / "voiced.ndf") > 0.5
        return world


def asdict_geometry(g: FrameGeometry) -> dict:
    return {"sample_rate": g.sample_rate, "hop_size": g.hop_size, "win_size": g.win_size, "video_fps": g.video_fps}


def phoneme_symbol(index: int) -> str:
    return f"p{index + 1:02d}"


def synthetic_vocab_symbols(vocab_size: int) -> list[str]:
    return ["<pad>", "<unk>"] + [phoneme_symbol(i) for i in range(vocab_size)]


def generate_synthetic_dataset(
    config: GenerateConfig,
    out_dir: str | Path,
    geometry: FrameGeometry | None = None,
) -> dict[str, DatasetIndex]:
    """Write a full synthetic dataset and return its per-split indexes.

    Output is byte-identical for identical configs: the RNG draw order is
    fixed, manifests are written with sorted keys, and all payloads are
    little-endian float32.
    """
    geometry = geometry or FrameGeometry()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = SyntheticWorld(config, geometry)
    world.save(out_dir)

    vocab_symbols = synthetic_vocab_symbols(config.vocab_size)
    (out_dir / "vocab.txt").write_text("\n".join(vocab_symbols) + "\n", encoding="utf-8")

    rng = np.random.default_rng(config.seed + 1)
    n = world.n
    records: list[ManifestRecord] = []
    for i in range(config.num_samples):
        sample_id = f"syn-{i:04d}"
        speaker = i % config.num_speakers
        t_p = int(rng.integers(config.min_phonemes, config.max_phonemes + 1))
        phonemes = rng.integers(0, config.vocab_size, size=t_p)
        frames_per = rng.integers(
            config.min_frames_per_phoneme, config.max_frames_per_phoneme + 1, size=t_p
        )
        alignment = np.repeat(np.arange(t_p), frames_per)  # frame -> phoneme position
        t_v = len(alignment)

        mouth = world.centers[phonemes[alignment]] + MOUTH_NOISE * rng.standard_normal(
            (t_v, config.feature_dim)
        )
        pos_in_phoneme = np.concatenate([np.arange(k) for k in frames_per])
        mel = np.concatenate(
            [
                world.render_frame(int(phonemes[alignment[j]]), int(pos_in_phoneme[j]), speaker)
                for j in range(t_v)
            ],
            axis=0,
        )
        base_pitch = np.repeat(
            [world.pitch_hz(int(p), speaker) for p in phonemes[alignment]], n
        )
        vibrato = PITCH_VIBRATO_HZ * np.sin(2 * np.pi * np.arange(len(base_pitch)) / PITCH_VIBRATO_PERIOD)
        pitch = np.where(base_pitch > 0, base_pitch + vibrato, 0.0).astype(np.float32)
        energy = np.linalg.norm(mel, axis=1) / np.sqrt(config.n_mels)
        face = world.face_centers[speaker] + FACE_NOISE * rng.standard_normal(4096)

        save_array(out_dir / f"{sample_id}_mouth.ndf", mouth)
        save_array(out_dir / f"{sample_id}_face.ndf", face)
        save_array(out_dir / f"{sample_id}_mel.ndf", mel)
        save_array(out_dir / f"{sample_id}_pitch.ndf", pitch)
        save_array(out_dir / f"{sample_id}_energy.ndf", energy)
        save_array(out_dir / f"{sample_id}_align.ndf", alignment.astype(np.float32))

        records.append(
            ManifestRecord(
                id=sample_id,
                phonemes=[phoneme_symbol(int(p)) for p in phonemes],
                mouth_features_path=f"{sample_id}_mouth.ndf",
                face_feature_path=f"{sample_id}_face.ndf",
                mel_path=f"{sample_id}_mel.ndf",
                pitch_path=f"{sample_id}_pitch.ndf",
                energy_path=f"{sample_id}_energy.ndf",
                fps=geometry.video_fps,
                sr=geometry.sample_rate,
            )
        )

    n_val = int(round(config.num_samples * config.val_fraction))
    n_test = int(round(config.num_samples * config.test_fraction))
    n_train = config.num_samples - n_val - n_test
    if n_train < 1:
        raise DataError("split fractions leave no training samples")
    splits = {
        "train": records[:n_train],
        "val": records[n_train : n_train + n_val],
        "test": records[n_train + n_val :],
    }
    indexes: dict[str, DatasetIndex] = {}
    for split, recs in splits.items():
        index = DatasetIndex(records=recs, split=split, root=out_dir)
        save_manifest(index, manifest_path(out_dir, split))
        indexes[split] = index
    return indexes


def load_alignment(dataset_dir: str | Path, sample_id: str) -> np.ndarray:
    """Ground-truth frame-to-phoneme-position alignment stored by the generator."""
    return load_array(Path(dataset_dir) / f"{sample_id}_align.ndf").astype(np.int64)
