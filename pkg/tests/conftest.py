import sys
from pathlib import Path

import pytest
import torch

from videodub.config import GenerateConfig, ModelConfig
from videodub.data import load_sample, load_split
from videodub.synthetic import generate_synthetic_dataset

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        d=16,
        n_phoneme_blocks=1,
        n_video_blocks=1,
        n_decoder_blocks=1,
        n_heads=2,
        conv_filter_size=32,
        vocab_size=12,
        video_feature_dim=8,
        n_mels=10,
        upsample_factor=4,
        variance_filter_size=8,
        n_variance_bins=16,
        ise_hidden=8,
        dropout=0.1,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return tiny_config()


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """A small single-speaker synthetic dataset shared by read-only tests."""
    out = tmp_path_factory.mktemp("synth") / "data"
    config = GenerateConfig(
        num_samples=30,
        vocab_size=8,
        num_speakers=1,
        min_phonemes=4,
        max_phonemes=7,
        min_frames_per_phoneme=2,
        max_frames_per_phoneme=3,
        feature_dim=8,
        n_mels=10,
        seed=11,
    )
    generate_synthetic_dataset(config, out)
    return out


def load_samples(dataset_dir, split="train", limit=None):
    index, vocab = load_split(dataset_dir, split)
    records = index.records[:limit] if limit else index.records
    return [load_sample(rec, index.root, vocab) for rec in records], vocab
