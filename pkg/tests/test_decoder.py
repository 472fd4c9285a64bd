import pytest
import torch

from videodub.decoder import MelDecoder, VarianceAdaptor

from conftest import tiny_config


def make_adaptor(seed=0, **overrides):
    torch.manual_seed(seed)
    cfg = tiny_config(variance_dropout=0.0, pitch_range=(0.0, 6.0), energy_range=(0.0, 4.0), **overrides)
    return VarianceAdaptor(cfg).eval(), cfg


class TestVarianceAdaptor:
    def test_shape_law(self):
        adaptor, _ = make_adaptor()
        h = torch.randn(1, 12, 16)
        adapted, pitch, energy = adaptor(h)
        assert adapted.shape == (1, 12, 16)
        assert pitch.shape == (1, 12) and energy.shape == (1, 12)

    def test_teacher_forcing_uses_targets_not_predictions(self):
        adaptor, _ = make_adaptor()
        h = torch.randn(1, 8, 16)
        pitch_t = torch.rand(1, 8) * 6
        energy_t = torch.rand(1, 8) * 4
        adapted, _, _ = adaptor(h, pitch_target=pitch_t, energy_target=energy_t)
        with torch.no_grad():  # zero the predictors; conditioning must not move
            for p in adaptor.pitch_predictor.parameters():
                p.zero_()
            for p in adaptor.energy_predictor.parameters():
                p.zero_()
        adapted_again, pitch_pred, _ = adaptor(h, pitch_target=pitch_t, energy_target=energy_t)
        assert torch.all(pitch_pred == 0)
        assert torch.allclose(adapted, adapted_again, atol=1e-6)

    def test_inference_deterministic(self):
        adaptor, _ = make_adaptor()
        h = torch.randn(2, 6, 16)
        a = adaptor(h)
        b = adaptor(h)
        for x, y in zip(a, b):
            assert torch.equal(x, y)

    def test_mismatched_targets_rejected(self):
        adaptor, _ = make_adaptor()
        h = torch.randn(1, 6, 16)
        with pytest.raises(ValueError):
            adaptor(h, pitch_target=torch.zeros(1, 5), energy_target=torch.zeros(1, 6))
        with pytest.raises(ValueError):
            adaptor(h, pitch_target=torch.zeros(1, 6))

    def test_gradient_isolated_from_mel_path(self):
        # With teacher forcing, a loss on the adapted hidden must not
        # reach the predictor weights.
        adaptor, _ = make_adaptor()
        adaptor.train()
        h = torch.randn(1, 8, 16, requires_grad=True)
        pitch_t = torch.rand(1, 8) * 6
        energy_t = torch.rand(1, 8) * 4
        adapted, pitch_pred, energy_pred = adaptor(h, pitch_target=pitch_t, energy_target=energy_t)
        adapted.sum().backward()
        for p in adaptor.pitch_predictor.parameters():
            assert p.grad is None or torch.all(p.grad == 0)
        for p in adaptor.energy_predictor.parameters():
            assert p.grad is None or torch.all(p.grad == 0)


class TestMelDecoder:
    def test_output_shape(self):
        torch.manual_seed(0)
        dec = MelDecoder(tiny_config(n_mels=80)).eval()
        out = dec(torch.randn(1, 8, 16))
        assert out.shape == (1, 8, 80)

    def test_padding_invariance(self):
        torch.manual_seed(0)
        dec = MelDecoder(tiny_config()).eval()
        x = torch.randn(1, 10, 16)
        mask = torch.tensor([[True] * 7 + [False] * 3])
        base = dec(x, mask)
        noisy = x.clone()
        noisy[0, 7:] = torch.randn(3, 16) * 5
        other = dec(noisy, mask)
        assert torch.allclose(base[0, :7], other[0, :7], atol=1e-5)

    def test_zero_projection_outputs_bias(self):
        torch.manual_seed(0)
        dec = MelDecoder(tiny_config()).eval()
        with torch.no_grad():
            dec.project.weight.zero_()
            dec.project.bias.fill_(0.25)
        out = dec(torch.randn(1, 5, 16))
        assert torch.allclose(out, torch.full((1, 5, 10), 0.25))
