import pytest
import torch

from videodub.encoders import FFTBlock, PhonemeEncoder, VideoEncoder, sinusoid_positions

from conftest import tiny_config


def make_block(d=16, heads=2, seed=0):
    torch.manual_seed(seed)
    return FFTBlock(d, heads, filter_size=32, kernels=(9, 1), dropout=0.0).eval()


class TestFFTBlock:
    def test_shape_preserved(self):
        block = make_block()
        x = torch.randn(1, 7, 16)
        assert block(x).shape == x.shape

    def test_masked_tail_cannot_leak(self):
        block = make_block()
        torch.manual_seed(1)
        x = torch.randn(1, 9, 16)
        mask = torch.tensor([[True] * 6 + [False] * 3])
        base = block(x, mask)
        scrambled = x.clone()
        scrambled[0, 6:] = torch.randn(3, 16) * 10
        other = block(scrambled, mask)
        assert torch.allclose(base[0, :6], other[0, :6], atol=1e-6)

    def test_zero_weights_reduce_to_layer_norms(self):
        block = make_block()
        with torch.no_grad():
            for p in block.parameters():
                p.zero_()
            for norm in (block.attn_norm, block.ff_norm):
                norm.weight.fill_(1.0)
        x = torch.randn(2, 5, 16)
        expected = block.ff_norm(block.attn_norm(x))
        assert torch.allclose(block(x), expected, atol=1e-6)


class TestPhonemeEncoder:
    def test_single_phoneme_shape(self):
        torch.manual_seed(0)
        enc = PhonemeEncoder(tiny_config()).eval()
        out = enc(torch.tensor([[3]]))
        assert out.shape == (1, 1, 16)

    def test_positional_encoding_breaks_ties(self):
        torch.manual_seed(0)
        enc = PhonemeEncoder(tiny_config()).eval()
        out = enc(torch.tensor([[4, 4, 4]]))
        assert not torch.allclose(out[0, 0], out[0, 1], atol=1e-4)
        assert not torch.allclose(out[0, 1], out[0, 2], atol=1e-4)

    def test_out_of_range_id_rejected(self):
        enc = PhonemeEncoder(tiny_config()).eval()
        with pytest.raises(ValueError):
            enc(torch.tensor([[99]]))

    def test_padded_batch_matches_unbatched(self):
        torch.manual_seed(0)
        enc = PhonemeEncoder(tiny_config()).eval()
        a = torch.tensor([1, 2, 3, 4, 5])
        b = torch.tensor([6, 7])
        ids = torch.zeros(2, 5, dtype=torch.long)
        ids[0], ids[1, :2] = a, b
        mask = torch.tensor([[True] * 5, [True, True, False, False, False]])
        batched = enc(ids, mask)
        alone_a = enc(a.unsqueeze(0))
        alone_b = enc(b.unsqueeze(0))
        assert torch.allclose(batched[0], alone_a[0], atol=1e-5)
        assert torch.allclose(batched[1, :2], alone_b[0], atol=1e-5)


class TestVideoEncoder:
    def test_precomputed_features_shape(self):
        torch.manual_seed(0)
        enc = VideoEncoder(tiny_config()).eval()
        out = enc(torch.randn(1, 10, 8))
        assert out.shape == (1, 10, 16)

    def test_raw_crops_shape_preserved(self):
        torch.manual_seed(0)
        enc = VideoEncoder(tiny_config(video_input="crops", crop_size=32)).eval()
        out = enc(torch.rand(1, 5, 32, 32))
        assert out.shape == (1, 5, 16)

    def test_crop_frontend_receptive_field(self):
        # The conv stack spans 5 frames temporally: a change in frame 0
        # may touch rows 0..2 of the features and nothing beyond.
        torch.manual_seed(0)
        enc = VideoEncoder(tiny_config(video_input="crops", crop_size=32)).eval()
        video = torch.rand(1, 8, 32, 32)
        other = video.clone()
        other[0, 0] = torch.rand(32, 32)
        feats_a = enc.extract_features(video)
        feats_b = enc.extract_features(other)
        assert not torch.allclose(feats_a[0, 0], feats_b[0, 0])
        assert torch.allclose(feats_a[0, 3:], feats_b[0, 3:], atol=1e-6)

    def test_wrong_dims_rejected(self):
        enc = VideoEncoder(tiny_config()).eval()
        with pytest.raises(ValueError):
            enc(torch.randn(1, 4, 5))

    def test_eval_mode_deterministic(self):
        torch.manual_seed(0)
        enc = VideoEncoder(tiny_config(dropout=0.3)).eval()
        x = torch.randn(1, 6, 8)
        assert torch.equal(enc(x), enc(x))


def test_sinusoid_positions_shape_and_range():
    table = sinusoid_positions(12, 16)
    assert table.shape == (12, 16)
    assert table.abs().max() <= 1.0
    assert not torch.allclose(table[0], table[1])
