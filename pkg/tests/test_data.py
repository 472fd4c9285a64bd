import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videodub.config import GenerateConfig
from videodub.data import (
    DatasetIndex,
    FrameGeometry,
    ManifestRecord,
    compute_upsample_factor,
    fit_to_length,
    load_manifest,
    load_sample,
    load_split,
    manifest_path,
    reconcile_lengths,
    save_manifest,
)
from videodub.errors import ConfigError, DataError, GeometryError, SchemaError
from videodub.ndf import save_array
from videodub.synthetic import generate_synthetic_dataset, load_alignment

from conftest import load_samples


class TestUpsampleFactor:
    def test_default_geometry_gives_four(self):
        assert compute_upsample_factor(16000, 160, 25) == 4

    def test_equal_frame_rates_give_one(self):
        assert compute_upsample_factor(16000, 160, 100) == 1

    def test_non_integral_ratio_rejected(self):
        with pytest.raises(GeometryError) as err:
            compute_upsample_factor(22050, 256, 25)
        msg = str(err.value)
        assert "22050" in msg and "256" in msg and "25" in msg

    def test_nonpositive_rejected(self):
        with pytest.raises(GeometryError):
            compute_upsample_factor(16000, 0, 25)

    def test_geometry_property_and_validation(self):
        assert FrameGeometry().upsample_factor == 4
        with pytest.raises(GeometryError):
            FrameGeometry(sample_rate=22050, hop_size=256)


class TestReconcileLengths:
    def test_trims_when_longer(self):
        assert reconcile_lengths(103, 25, 4) == 100

    def test_noop_when_exact(self):
        assert reconcile_lengths(100, 25, 4) == 100

    def test_refuses_large_gap(self):
        with pytest.raises(DataError, match="sample-7"):
            reconcile_lengths(90, 25, 4, sample_id="sample-7")

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 50), st.integers(1, 8), st.integers(-8, 8))
    def test_accepts_within_n(self, t_v, n, delta):
        t_m_raw = max(1, n * t_v + max(-n, min(n, delta)))
        assert reconcile_lengths(t_m_raw, t_v, n) == n * t_v

    def test_fit_to_length_pads_by_repeating_last(self):
        arr = np.arange(6, dtype=np.float32).reshape(3, 2)
        out = fit_to_length(arr, 5)
        assert out.shape == (5, 2)
        assert np.array_equal(out[3], arr[-1]) and np.array_equal(out[4], arr[-1])


class TestManifest:
    def _record(self, tmp_path, ident="s1"):
        for kind in ("mouth", "face", "mel", "pitch", "energy"):
            save_array(tmp_path / f"{ident}_{kind}.ndf", np.zeros((4, 2), dtype=np.float32))
        return ManifestRecord(
            id=ident,
            phonemes=["p01", "p02"],
            mouth_features_path=f"{ident}_mouth.ndf",
            face_feature_path=f"{ident}_face.ndf",
            mel_path=f"{ident}_mel.ndf",
            pitch_path=f"{ident}_pitch.ndf",
            energy_path=f"{ident}_energy.ndf",
            fps=25,
            sr=16000,
        )

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "manifest.train.jsonl"
        path.write_text("")
        index = load_manifest(path)
        assert len(index) == 0 and index.split == "train"

    def test_round_trip_identity(self, tmp_path):
        index = DatasetIndex(records=[self._record(tmp_path)], split="val", root=tmp_path)
        path = manifest_path(tmp_path, "val")
        save_manifest(index, path)
        assert load_manifest(path) == index

    def test_single_valid_record(self, tmp_path):
        index = DatasetIndex(records=[self._record(tmp_path)], split="train", root=tmp_path)
        save_manifest(index, manifest_path(tmp_path, "train"))
        loaded = load_manifest(manifest_path(tmp_path, "train"))
        assert len(loaded) == 1 and loaded.records[0].id == "s1"

    def test_missing_field_names_it(self, tmp_path):
        rec = self._record(tmp_path)
        obj = {f: getattr(rec, f) for f in rec.__dataclass_fields__}
        del obj["mel_path"]
        path = tmp_path / "manifest.train.jsonl"
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(SchemaError, match="mel_path"):
            load_manifest(path)

    def test_dangling_path_names_record(self, tmp_path):
        rec = self._record(tmp_path)
        rec.mel_path = "gone.ndf"
        save_manifest(DatasetIndex([rec], "train", tmp_path), manifest_path(tmp_path, "train"))
        with pytest.raises(SchemaError, match="mel_path"):
            load_manifest(manifest_path(tmp_path, "train"))

    def test_duplicate_ids_rejected(self, tmp_path):
        rec = self._record(tmp_path)
        save_manifest(DatasetIndex([rec, rec], "train", tmp_path), manifest_path(tmp_path, "train"))
        with pytest.raises(SchemaError, match="duplicate"):
            load_manifest(manifest_path(tmp_path, "train"))


class TestSyntheticGenerator:
    def test_same_seed_byte_identical(self, tmp_path):
        config = GenerateConfig(num_samples=6, vocab_size=4, feature_dim=6, n_mels=8, seed=7,
                                min_phonemes=3, max_phonemes=5)
        generate_synthetic_dataset(config, tmp_path / "a")
        generate_synthetic_dataset(config, tmp_path / "b")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_vocab_of_one_rejected(self):
        with pytest.raises(ConfigError):
            GenerateConfig(vocab_size=1)

    def test_degenerate_range_rejected(self):
        with pytest.raises(ConfigError):
            GenerateConfig(min_phonemes=5, max_phonemes=3)

    def test_alignment_monotonic_surjection(self, synth_dataset):
        index, vocab = load_split(synth_dataset, "train")
        checked = 0
        for rec in index.records:
            sample = load_sample(rec, index.root, vocab)
            align = load_alignment(synth_dataset, rec.id)
            assert len(align) == sample.t_v
            assert np.all(np.diff(align) >= 0)
            assert set(align.tolist()) == set(range(sample.t_p))
            checked += 1
        assert checked == len(index.records)

    def test_lengths_exact(self, synth_dataset):
        samples, _ = load_samples(synth_dataset, "train")
        for s in samples:
            n = s.geometry.upsample_factor
            assert s.t_m == n * s.t_v
            assert len(s.pitch) == s.t_m and len(s.energy) == s.t_m

    def test_pitch_in_valid_range(self, synth_dataset):
        samples, _ = load_samples(synth_dataset, "train")
        for s in samples:
            voiced = s.pitch[s.pitch > 0]
            assert np.all((voiced >= 50) & (voiced <= 600))
            assert np.all(s.energy >= 0)

    def test_splits_written(self, synth_dataset):
        for split in ("train", "val", "test"):
            index, _ = load_split(synth_dataset, split)
            assert len(index) > 0


class TestLoadSample:
    def test_reconciles_overlong_mel(self, tmp_path):
        config = GenerateConfig(num_samples=3, vocab_size=3, feature_dim=4, n_mels=6, seed=1,
                                min_phonemes=2, max_phonemes=3)
        indexes = generate_synthetic_dataset(config, tmp_path)
        index, vocab = load_split(tmp_path, "train")
        rec = index.records[0]
        sample = load_sample(rec, tmp_path, vocab)
        mel_long = np.concatenate([sample.mel, sample.mel[-2:]], axis=0)
        save_array(tmp_path / rec.mel_path, mel_long)
        again = load_sample(rec, tmp_path, vocab)
        assert again.t_m == sample.t_m

    def test_rejects_nonfinite(self, tmp_path):
        config = GenerateConfig(num_samples=3, vocab_size=3, feature_dim=4, n_mels=6, seed=2,
                                min_phonemes=2, max_phonemes=3)
        generate_synthetic_dataset(config, tmp_path)
        index, vocab = load_split(tmp_path, "train")
        rec = index.records[0]
        bad = load_sample(rec, tmp_path, vocab).mel
        bad[0, 0] = np.nan
        save_array(tmp_path / rec.mel_path, bad)
        with pytest.raises(DataError, match=rec.id):
            load_sample(rec, tmp_path, vocab)
