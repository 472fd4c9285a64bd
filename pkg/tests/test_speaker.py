import numpy as np
import pytest
import torch

from videodub.errors import ConfigError, DataError
from videodub.speaker import (
    SpeakerEncoder,
    broadcast_add,
    face_feature,
    register_face_backend,
    select_face_frame,
)
from videodub.training import max_relative_gradient_error

from oracles import broadcast_add_reference


class TestSelectFaceFrame:
    def test_index_strategy(self):
        frames = np.arange(12).reshape(3, 4).astype(np.float32)
        assert np.array_equal(select_face_frame(frames, "index", index=0), frames[0])

    def test_random_deterministic_given_seed(self):
        frames = np.random.default_rng(0).standard_normal((5, 4))
        a = select_face_frame(frames, "random", seed=9)
        b = select_face_frame(frames, "random", seed=9)
        assert np.array_equal(a, b)

    def test_mean_of_identical_frames(self):
        frame = np.full((4,), 2.5, dtype=np.float32)
        frames = np.stack([frame] * 3)
        assert np.allclose(select_face_frame(frames, "mean"), frame)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            select_face_frame(np.zeros((0, 4)), "index")


class TestFaceBackends:
    def test_precomputed_is_identity(self):
        vec = np.random.default_rng(0).standard_normal(4096).astype(np.float32)
        assert np.array_equal(face_feature(vec, "precomputed"), vec)

    def test_precomputed_rejects_wrong_dim(self):
        with pytest.raises(DataError):
            face_feature(np.zeros(100, dtype=np.float32), "precomputed")

    def test_hash_backend_deterministic(self):
        img = np.random.default_rng(1).random((224, 224)).astype(np.float32)
        assert np.array_equal(face_feature(img, "hash"), face_feature(img, "hash"))

    def test_hash_backend_separates_clusters(self):
        rng = np.random.default_rng(2)
        img_a = rng.random((224, 224)).astype(np.float32)
        img_b = rng.random((224, 224)).astype(np.float32)
        fa, fb = face_feature(img_a, "hash"), face_feature(img_b, "hash")
        cos = fa @ fb / (np.linalg.norm(fa) * np.linalg.norm(fb))
        assert abs(cos) < 0.5

    def test_projection_backend_frozen_and_norm_preserving(self):
        vec = np.random.default_rng(3).standard_normal(4096).astype(np.float32)
        out1 = face_feature(vec, "projection")
        out2 = face_feature(vec, "projection")
        assert np.array_equal(out1, out2)
        assert np.linalg.norm(out1) == pytest.approx(np.linalg.norm(vec), rel=1e-6)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ConfigError):
            face_feature(np.zeros(4096, dtype=np.float32), "nope")

    def test_plugin_registration(self):
        register_face_backend("unit", lambda face: np.ones(4096, dtype=np.float32))
        assert np.all(face_feature(np.zeros(3), "unit") == 1.0)


class TestSpeakerEncoder:
    def test_zero_weights_give_zero_embedding(self):
        mlp = SpeakerEncoder(face_dim=32, hidden=8, d=4)
        with torch.no_grad():
            for p in mlp.parameters():
                p.zero_()
        out = mlp(torch.randn(2, 32))
        assert torch.all(out == 0)

    @pytest.mark.parametrize("d", [16, 256])
    def test_output_dim_matches_config(self, d):
        mlp = SpeakerEncoder(face_dim=64, hidden=32, d=d)
        assert mlp(torch.randn(3, 64)).shape == (3, d)

    def test_dim_mismatch_rejected(self):
        mlp = SpeakerEncoder(face_dim=64, hidden=32, d=8)
        with pytest.raises(ValueError):
            mlp(torch.randn(1, 63))

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        mlp = SpeakerEncoder(face_dim=10, hidden=5, d=3).double()
        feature = torch.randn(2, 10, dtype=torch.float64)

        def loss_fn():
            return (mlp(feature) ** 2).mean()

        err = max_relative_gradient_error(loss_fn, list(mlp.parameters()), eps=1e-6)
        assert err < 1e-4


def test_backend_frozen_through_training_step():
    # The face-feature path must not move when the ISE MLP trains: same
    # input, same feature, before and after an optimizer step.
    vec = np.random.default_rng(4).standard_normal(4096).astype(np.float32)
    before = face_feature(vec, "projection")
    mlp = SpeakerEncoder(face_dim=4096, hidden=16, d=8)
    opt = torch.optim.Adam(mlp.parameters(), lr=1e-2)
    loss = (mlp(torch.from_numpy(before)) ** 2).sum()
    loss.backward()
    opt.step()
    after = face_feature(vec, "projection")
    assert np.array_equal(before, after)


class TestBroadcastAdd:
    def test_zero_embedding_is_identity(self):
        h = torch.randn(4, 6)
        assert torch.equal(broadcast_add(h, torch.zeros(6)), h)

    def test_hand_case(self):
        h = torch.zeros(3, 2)
        out = broadcast_add(h, torch.tensor([1.0, -1.0]))
        assert torch.equal(out, torch.tensor([[1.0, -1.0]] * 3))

    def test_matches_per_row_loop(self):
        torch.manual_seed(0)
        h = torch.randn(7, 5)
        e = torch.randn(5)
        expected = broadcast_add_reference(h.numpy(), e.numpy())
        assert np.allclose(broadcast_add(h, e).numpy(), expected)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            broadcast_add(torch.zeros(2, 3), torch.zeros(4))
