"""Model, training, and generation configuration dataclasses.

Defaults follow the full-scale setup (hidden size 256, 4 phoneme and
decoder blocks, 2 video blocks, upsample factor 4); tests and the
acceptance suite override them with desk-scale values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


def _validate_range(name: str, lo, hi) -> None:
    if lo > hi:
        raise ConfigError(f"{name}: min {lo} exceeds max {hi}")


@dataclass
class ModelConfig:
    d: int = 256
    n_phoneme_blocks: int = 4
    n_video_blocks: int = 2
    n_decoder_blocks: int = 4
    n_heads: int = 2
    conv_filter_size: int = 1024
    conv_kernel_sizes: tuple[int, int] = (9, 1)
    dropout: float = 0.1
    aligner_dropout: float = 0.5
    vocab_size: int = 64
    video_feature_dim: int = 32
    video_input: str = "features"  # "features" or "crops"
    crop_size: int = 96
    n_mels: int = 80
    upsample_factor: int = 4
    multi_speaker: bool = False
    face_feature_dim: int = 4096
    ise_hidden: int = 512
    n_variance_bins: int = 256
    variance_filter_size: int = 256
    variance_kernel_size: int = 3
    variance_dropout: float = 0.5
    # Quantization ranges for the variance embeddings; pitch is in log1p(Hz).
    pitch_range: tuple[float, float] = (0.0, 6.5)
    energy_range: tuple[float, float] = (0.0, 10.0)
    dc_bandwidth: float | None = None  # None: per-sample max(1, round(0.2 * T_p))

    def __post_init__(self):
        if self.d <= 0:
            raise ConfigError(f"hidden size d must be positive, got {self.d}")
        for name in ("n_phoneme_blocks", "n_video_blocks", "n_decoder_blocks", "n_heads",
                     "vocab_size", "video_feature_dim", "n_mels", "upsample_factor",
                     "n_variance_bins", "face_feature_dim", "ise_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("dropout", "aligner_dropout", "variance_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {p}")
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.video_input not in ("features", "crops"):
            raise ConfigError(f"video_input must be 'features' or 'crops', got {self.video_input!r}")
        if self.dc_bandwidth is not None and self.dc_bandwidth < 0:
            raise ConfigError(f"dc_bandwidth must be >= 0, got {self.dc_bandwidth}")
        self.conv_kernel_sizes = tuple(self.conv_kernel_sizes)
        self.pitch_range = tuple(self.pitch_range)
        self.energy_range = tuple(self.energy_range)
        _validate_range("pitch_range", *self.pitch_range)
        _validate_range("energy_range", *self.energy_range)


@dataclass
class LossWeights:
    mel: float = 1.0
    pitch: float = 0.1
    energy: float = 0.1
    dc: float = 0.1

    def __post_init__(self):
        for name in ("mel", "pitch", "energy", "dc"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_steps: int = 2000
    warmup_steps: int = 1000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    lr_scale: float = 0.5
    grad_clip: float = 1.0
    checkpoint_every: int = 500
    holdout_every: int = 0  # 0 disables periodic validation
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("batch_size", "max_steps", "warmup_steps", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr_scale <= 0:
            raise ConfigError(f"lr_scale must be positive, got {self.lr_scale}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)


@dataclass
class GenerateConfig:
    """Synthetic dataset knobs; see ``videodub.synthetic``."""

    num_samples: int = 200
    vocab_size: int = 20
    num_speakers: int = 1
    min_phonemes: int = 6
    max_phonemes: int = 12
    min_frames_per_phoneme: int = 2
    max_frames_per_phoneme: int = 4
    feature_dim: int = 32
    n_mels: int = 80
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.num_samples < 3:
            raise ConfigError(f"num_samples must be >= 3, got {self.num_samples}")
        if self.num_speakers < 1:
            raise ConfigError(f"num_speakers must be >= 1, got {self.num_speakers}")
        if self.min_phonemes < 1 or self.min_frames_per_phoneme < 1:
            raise ConfigError("phoneme and frames-per-phoneme minima must be >= 1")
        _validate_range("phoneme count range", self.min_phonemes, self.max_phonemes)
        _validate_range("frames-per-phoneme range", self.min_frames_per_phoneme, self.max_frames_per_phoneme)
        if not 0 <= self.val_fraction < 0.5 or not 0 <= self.test_fraction < 0.5:
            raise ConfigError("val/test fractions must lie in [0, 0.5)")


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(cls, data: dict):
    """Build a config dataclass, rejecting unknown keys."""
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} key(s): {', '.join(unknown)}")
    return cls(**data)
