import math

import numpy as np
import pytest
import torch

from videodub.checkpoint import save_checkpoint
from videodub.config import TrainConfig
from videodub.data import load_split
from videodub.errors import DataError
from videodub.evaluation import (
    OracleEmbedder,
    evaluate,
    lse_metrics,
    make_embedder,
    sync_embed,
)
from videodub.model import DubbingModel
from videodub.training import train

from conftest import load_samples, tiny_config


@pytest.fixture(scope="module")
def oracle(synth_dataset):
    return OracleEmbedder.from_dataset_dir(synth_dataset)


@pytest.fixture(scope="module")
def long_streams(synth_dataset, oracle):
    """Concatenated mouth/mel streams embedded once; length >= 160 frames."""
    samples, _ = load_samples(synth_dataset, "train")
    mouth = np.concatenate([s.mouth for s in samples], axis=0)
    mel = np.concatenate([s.mel for s in samples], axis=0)
    n = samples[0].geometry.upsample_factor
    audio_emb, video_emb = sync_embed(mel, mouth, oracle, n)
    assert len(audio_emb) >= 160
    return audio_emb, video_emb


class TestSyncEmbed:
    def test_paired_streams_embed_identically(self, synth_dataset, oracle):
        samples, _ = load_samples(synth_dataset, "train", limit=5)
        for s in samples:
            audio_emb, video_emb = sync_embed(s.mel, s.mouth, oracle, s.geometry.upsample_factor)
            assert audio_emb.shape == video_emb.shape == (s.t_v, s.mouth.shape[1])
            assert np.array_equal(audio_emb, video_emb)

    def test_shift_commutes_with_embedding(self, synth_dataset, oracle):
        samples, _ = load_samples(synth_dataset, "train", limit=1)
        s = samples[0]
        n = s.geometry.upsample_factor
        full_audio, _ = sync_embed(s.mel, s.mouth, oracle, n)
        shifted_audio, _ = sync_embed(s.mel[3 * n :], s.mouth[: s.t_v - 3], oracle, n)
        assert np.array_equal(shifted_audio, full_audio[3:])

    def test_span_mismatch_rejected(self, synth_dataset, oracle):
        samples, _ = load_samples(synth_dataset, "train", limit=1)
        s = samples[0]
        n = s.geometry.upsample_factor
        with pytest.raises(DataError):
            sync_embed(s.mel[: s.t_m - 2 * n], s.mouth, oracle, n)


class TestLseMetrics:
    def test_identical_streams_zero_at_offset_zero(self, long_streams):
        audio_emb, video_emb = long_streams
        lse_d, lse_c, curve = lse_metrics(audio_emb[:80], video_emb[:80])
        assert lse_d == pytest.approx(0.0, abs=1e-9)
        assert curve.argmin_offset == 0
        assert lse_c > 0

    @pytest.mark.parametrize("j", [-15, -7, -1, 0, 1, 4, 15])
    def test_offset_recovery(self, long_streams, j):
        audio_emb, video_emb = long_streams
        audio = audio_emb[50 - j : 50 - j + 80]
        video = video_emb[50 : 50 + 80]
        lse_d, _, curve = lse_metrics(audio, video, max_offset=15, window=5)
        assert curve.argmin_offset == j
        assert lse_d < 1e-6

    def test_random_streams_flat_curve(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((100, 16))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        v = rng.standard_normal((100, 16))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        lse_d, lse_c, curve = lse_metrics(a, v)
        assert lse_c < 0.1 * np.median(curve.distances)

    def test_metrics_recomputable_from_curve(self, long_streams):
        audio_emb, video_emb = long_streams
        lse_d, lse_c, curve = lse_metrics(audio_emb[:70], video_emb[2:72])
        assert lse_d == pytest.approx(curve.distances.min())
        assert lse_c == pytest.approx(np.median(curve.distances) - curve.distances.min())

    def test_rotation_invariance(self, long_streams):
        audio_emb, video_emb = long_streams
        audio, video = audio_emb[:60].copy(), video_emb[5:65].copy()
        rng = np.random.default_rng(1)
        q, _ = np.linalg.qr(rng.standard_normal((audio.shape[1], audio.shape[1])))
        d1, c1, _ = lse_metrics(audio, video)
        d2, c2, _ = lse_metrics(audio @ q, video @ q)
        assert d1 == pytest.approx(d2, abs=1e-9)
        assert c1 == pytest.approx(c2, abs=1e-9)

    def test_too_short_rejected(self):
        with pytest.raises(DataError):
            lse_metrics(np.zeros((10, 4)), np.zeros((10, 4)), max_offset=15, window=5)


class TestEvaluate:
    def _untrained_checkpoint(self, synth_dataset, tmp_path, **cfg_overrides):
        _, vocab = load_split(synth_dataset, "train")
        torch.manual_seed(0)
        model = DubbingModel(tiny_config(vocab_size=len(vocab), **cfg_overrides))
        return save_checkpoint(tmp_path / "untrained", model, 0, list(vocab.symbols))

    def test_report_finite_and_deterministic(self, synth_dataset, tmp_path):
        ckpt_dir = self._untrained_checkpoint(synth_dataset, tmp_path)
        index, _ = load_split(synth_dataset, "val")
        embedder = make_embedder("oracle", synth_dataset)
        r1 = evaluate(ckpt_dir, index, embedder=embedder, griffin_lim_iters=3, seed=4)
        r2 = evaluate(ckpt_dir, index, embedder=embedder, griffin_lim_iters=3, seed=4)
        assert r1 == r2
        assert math.isfinite(r1.mel_l1) and math.isfinite(r1.mean_diagonal_rate)
        assert r1.num_samples == len(index)
        for entry in r1.per_sample:
            assert all(math.isfinite(v) for k, v in entry.items() if k != "id")

    def test_trained_beats_untrained(self, synth_dataset, tmp_path):
        untrained = self._untrained_checkpoint(synth_dataset, tmp_path)
        cfg = TrainConfig(batch_size=8, max_steps=250, warmup_steps=80, seed=3,
                          checkpoint_every=250, lr_scale=0.5)
        trained = train(tiny_config(d=32, conv_filter_size=64), cfg, synth_dataset, tmp_path / "run")
        index, _ = load_split(synth_dataset, "val")
        before = evaluate(untrained, index)
        after = evaluate(trained.checkpoint_dir, index)
        assert after.mel_l1 < before.mel_l1

    def test_errors_recorded_but_report_produced(self, synth_dataset, tmp_path):
        ckpt_dir = self._untrained_checkpoint(synth_dataset, tmp_path)
        index, _ = load_split(synth_dataset, "val")

        class BrokenEmbedder:
            def embed_video(self, feats):
                raise ValueError("broken on purpose")

            def embed_audio(self, mel, n):
                raise ValueError("broken on purpose")

        report = evaluate(ckpt_dir, index, embedder=BrokenEmbedder(), griffin_lim_iters=2)
        assert len(report.errors) == len(index)
        assert report.lse_d is None
        assert math.isfinite(report.mel_l1)
