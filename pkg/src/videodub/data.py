"""Dataset schema: frame geometry, manifest records, and sample loading.

A dataset lives in one directory: a line-delimited manifest per split
(``manifest.train.jsonl`` etc.), a ``vocab.txt`` with one phoneme symbol
per line, and NDF1 feature files referenced by relative path from the
manifest records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DataError, GeometryError, SchemaError
from .ndf import load_array
from .text import PhonemeVocabulary

MANIFEST_FIELDS = (
    "id",
    "phonemes",
    "mouth_features_path",
    "face_feature_path",
    "mel_path",
    "pitch_path",
    "energy_path",
    "fps",
    "sr",
)

FACE_FEATURE_DIM = 4096


def compute_upsample_factor(sample_rate: int, hop_size: int, video_fps: int) -> int:
    """Mel frames per video frame: (sample_rate / hop_size) / video_fps.

    The mel frame rate must be an integer multiple of the video frame
    rate; anything else cannot be reconciled by integer upsampling.
    """
    if sample_rate <= 0 or hop_size <= 0 or video_fps <= 0:
        raise GeometryError(
            f"sample_rate={sample_rate}, hop_size={hop_size}, video_fps={video_fps}: "
            "all must be positive"
        )
    denom = hop_size * video_fps
    if sample_rate % denom != 0:
        raise GeometryError(
            f"(sample_rate / hop_size) / video_fps = ({sample_rate} / {hop_size}) / "
            f"{video_fps} = {sample_rate / denom:.6g} is not a positive integer"
        )
    return sample_rate // denom


@dataclass(frozen=True)
class FrameGeometry:
    """Audio/video frame-rate bookkeeping for one dataset."""

    sample_rate: int = 16000
    hop_size: int = 160
    win_size: int = 640
    video_fps: int = 25

    def __post_init__(self):
        if self.win_size <= 0:
            raise GeometryError(f"win_size={self.win_size} must be positive")
        # Validates positivity of the remaining fields and integrality of n.
        compute_upsample_factor(self.sample_rate, self.hop_size, self.video_fps)

    @property
    def upsample_factor(self) -> int:
        return compute_upsample_factor(self.sample_rate, self.hop_size, self.video_fps)


def reconcile_lengths(t_m_raw: int, t_v: int, n: int, sample_id: str = "?") -> int:
    """Target mel length for a clip of ``t_v`` video frames.

    Real clips rarely produce exactly ``n * t_v`` mel frames, so callers
    trim down or right-pad (repeating the final frame) to the returned
    length. A gap of more than ``n`` frames means the audio and video do
    not belong together, and is refused.
    """
    if t_m_raw < 1 or t_v < 1:
        raise DataError(f"sample {sample_id}: lengths must be >= 1, got T_m={t_m_raw}, T_v={t_v}")
    target = n * t_v
    if abs(t_m_raw - target) > n:
        raise DataError(
            f"sample {sample_id}: mel length {t_m_raw} is {abs(t_m_raw - target)} frames "
            f"away from n*T_v = {target}; gap exceeds n = {n} (corrupt pairing?)"
        )
    return target


def fit_to_length(values: np.ndarray, target: int) -> np.ndarray:
    """Trim or right-pad (repeating the final frame) along axis 0."""
    if len(values) == target:
        return values
    if len(values) > target:
        return values[:target]
    pad = np.repeat(values[-1:], target - len(values), axis=0)
    return np.concatenate([values, pad], axis=0)


@dataclass
class Sample:
    """One fully loaded training/evaluation example."""

    id: str
    phoneme_ids: np.ndarray  # [T_p] int64
    mouth: np.ndarray  # [T_v, F] features or [T_v, 96, 96] crops
    face: np.ndarray  # [4096]
    mel: np.ndarray  # [T_m, n_mels], T_m == n * T_v
    pitch: np.ndarray  # [T_m] Hz, 0 where unvoiced
    energy: np.ndarray  # [T_m], nonnegative
    geometry: FrameGeometry

    @property
    def t_p(self) -> int:
        return len(self.phoneme_ids)

    @property
    def t_v(self) -> int:
        return len(self.mouth)

    @property
    def t_m(self) -> int:
        return len(self.mel)


@dataclass
class ManifestRecord:
    id: str
    phonemes: list[str]
    mouth_features_path: str
    face_feature_path: str
    mel_path: str
    pitch_path: str
    energy_path: str
    fps: int
    sr: int


@dataclass
class DatasetIndex:
    """A manifest for one split, plus the directory its paths are relative to."""

    records: list[ManifestRecord]
    split: str = "train"
    root: Path = field(default_factory=Path, compare=False)

    def __len__(self) -> int:
        return len(self.records)


def _record_from_json(obj: dict, line_no: int) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"manifest record {line_no}: expected an object, got {type(obj).__name__}")
    missing = [k for k in MANIFEST_FIELDS if k not in obj]
    if missing:
        raise SchemaError(f"manifest record {line_no}: missing field(s) {', '.join(missing)}")
    unknown = [k for k in obj if k not in MANIFEST_FIELDS]
    if unknown:
        raise SchemaError(f"manifest record {line_no}: unknown field(s) {', '.join(unknown)}")
    phonemes = obj["phonemes"]
    if not isinstance(phonemes, list) or not phonemes or not all(isinstance(p, str) for p in phonemes):
        raise SchemaError(f"manifest record {line_no}: phonemes must be a non-empty list of symbols")
    return ManifestRecord(**{k: obj[k] for k in MANIFEST_FIELDS})


def _infer_split(path: Path) -> str:
    for split in ("train", "val", "test"):
        if f".{split}." in path.name or path.stem == split:
            return split
    return "train"


def load_manifest(path: str | Path, split: str | None = None, check_files: bool = True) -> DatasetIndex:
    """Parse a JSONL manifest, validating the schema and referenced files."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"manifest not found: {path}")
    root = path.parent
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"manifest record {line_no}: invalid JSON ({exc})") from exc
            rec = _record_from_json(obj, line_no)
            if rec.id in seen:
                raise SchemaError(f"manifest record {line_no}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            if check_files:
                for f in ("mouth_features_path", "face_feature_path", "mel_path", "pitch_path", "energy_path"):
                    rel = getattr(rec, f)
                    if not (root / rel).exists():
                        raise SchemaError(
                            f"manifest record {line_no} (id {rec.id!r}): {f} points at missing file {rel!r}"
                        )
            records.append(rec)
    return DatasetIndex(records=records, split=split or _infer_split(path), root=root)


def save_manifest(index: DatasetIndex, path: str | Path) -> None:
    """Write one JSON object per line, keys sorted so output is reproducible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in index.records:
            obj = {f.name: getattr(rec, f.name) for f in fields(ManifestRecord)}
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def manifest_path(root: str | Path, split: str) -> Path:
    return Path(root) / f"manifest.{split}.jsonl"


def load_vocab(root: str | Path) -> PhonemeVocabulary:
    vocab_file = Path(root) / "vocab.txt"
    if not vocab_file.exists():
        raise SchemaError(f"vocab.txt not found in dataset directory {root}")
    symbols = [line.strip() for line in vocab_file.read_text(encoding="utf-8").splitlines() if line.strip()]
    return PhonemeVocabulary(tuple(symbols))


def load_sample(record: ManifestRecord, root: str | Path, vocab: PhonemeVocabulary) -> Sample:
    """Read feature files for one record, reconciling mel-side lengths to n * T_v."""
    root = Path(root)
    geometry = FrameGeometry(sample_rate=record.sr, hop_size=160, win_size=640, video_fps=record.fps)
    n = geometry.upsample_factor

    mouth = load_array(root / record.mouth_features_path)
    if mouth.ndim not in (2, 3) or len(mouth) < 1:
        raise DataError(f"sample {record.id}: mouth features must be [T_v, F] or [T_v, H, W]")
    face = load_array(root / record.face_feature_path).reshape(-1)
    if face.shape[0] != FACE_FEATURE_DIM:
        raise DataError(f"sample {record.id}: face feature has dim {face.shape[0]}, expected {FACE_FEATURE_DIM}")
    mel = load_array(root / record.mel_path)
    pitch = load_array(root / record.pitch_path).reshape(-1)
    energy = load_array(root / record.energy_path).reshape(-1)
    if mel.ndim != 2:
        raise DataError(f"sample {record.id}: mel must be rank 2, got rank {mel.ndim}")

    t_m = reconcile_lengths(len(mel), len(mouth), n, sample_id=record.id)
    mel = fit_to_length(mel, t_m)
    pitch = fit_to_length(pitch, t_m)
    energy = fit_to_length(energy, t_m)

    for name, arr in (("mouth", mouth), ("face", face), ("mel", mel), ("pitch", pitch), ("energy", energy)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"sample {record.id}: non-finite values in {name}")

    ids = np.array([vocab.encode_symbol(p) for p in record.phonemes], dtype=np.int64)
    if len(ids) < 1:
        raise DataError(f"sample {record.id}: empty phoneme sequence")
    return Sample(
        id=record.id,
        phoneme_ids=ids,
        mouth=mouth,
        face=face,
        mel=mel,
        pitch=pitch,
        energy=energy,
        geometry=geometry,
    )


def load_split(root: str | Path, split: str, check_files: bool = True) -> tuple[DatasetIndex, PhonemeVocabulary]:
    """Convenience: manifest + vocabulary for one split of a dataset directory."""
    index = load_manifest(manifest_path(root, split), split=split, check_files=check_files)
    return index, load_vocab(root)
