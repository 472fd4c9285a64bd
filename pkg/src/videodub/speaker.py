"""Image-based speaker embedding: frozen face-feature backends plus the
trainable projection that conditions the acoustic path.

Face-feature backends are plain functions (face input -> 4096-D numpy
vector) held in a registry. No backend participates in autograd, which
is how the "pre-trained and fixed" extractor contract is enforced: there
is simply nothing to update. Real face networks can be plugged in by
registering a backend.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, DataError

FACE_FEATURE_DIM = 4096
_PROJECTION_SEED = 0x15E  # frozen signed-permutation projection

FaceBackend = Callable[[np.ndarray], np.ndarray]
_BACKENDS: dict[str, FaceBackend] = {}


def register_face_backend(name: str, fn: FaceBackend) -> None:
    _BACKENDS[name] = fn


def face_backend(name: str) -> FaceBackend:
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ConfigError(f"unknown face backend {name!r}; registered: {sorted(_BACKENDS)}") from None


def _precomputed_backend(face: np.ndarray) -> np.ndarray:
    vec = np.asarray(face, dtype=np.float32).reshape(-1)
    if vec.shape[0] != FACE_FEATURE_DIM:
        raise DataError(f"precomputed face feature has dim {vec.shape[0]}, expected {FACE_FEATURE_DIM}")
    return vec


class _FrozenProjection:
    """Signed permutation of the input coordinates, drawn once from a fixed seed."""

    def __init__(self):
        rng = np.random.default_rng(_PROJECTION_SEED)
        self.perm = rng.permutation(FACE_FEATURE_DIM)
        self.signs = rng.choice([-1.0, 1.0], size=FACE_FEATURE_DIM).astype(np.float32)

    def __call__(self, face: np.ndarray) -> np.ndarray:
        vec = _precomputed_backend(face)
        return vec[self.perm] * self.signs


def _hash_backend(face: np.ndarray) -> np.ndarray:
    """Deterministic pseudo-feature from the raw input bytes.

    Works for any input (images or vectors): identical inputs map to
    identical features, unrelated inputs to effectively independent
    Gaussian vectors.
    """
    data = np.ascontiguousarray(np.asarray(face, dtype=np.float32))
    digest = hashlib.blake2b(data.tobytes(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(FACE_FEATURE_DIM).astype(np.float32)


register_face_backend("precomputed", _precomputed_backend)
register_face_backend("projection", _FrozenProjection())
register_face_backend("hash", _hash_backend)


def face_feature(face: np.ndarray, backend: str = "precomputed") -> np.ndarray:
    """Run the named frozen backend; output is always a 4096-D float32 vector."""
    out = face_backend(backend)(face)
    out = np.asarray(out, dtype=np.float32).reshape(-1)
    if out.shape[0] != FACE_FEATURE_DIM:
        raise DataError(f"backend {backend!r} returned dim {out.shape[0]}, expected {FACE_FEATURE_DIM}")
    return out


def select_face_frame(
    face_frames: np.ndarray,
    strategy: str = "random",
    seed: int = 0,
    index: int = 0,
) -> np.ndarray:
    """Pick one face input from a stack of frames.

    Strategies: "random" (seeded), "index" (fixed position), or "mean"
    (average feature across frames).
    """
    frames = np.asarray(face_frames)
    if len(frames) == 0:
        raise DataError("cannot select a face frame from an empty sequence")
    if strategy == "random":
        rng = np.random.default_rng(seed)
        return frames[int(rng.integers(len(frames)))]
    if strategy == "index":
        if not 0 <= index < len(frames):
            raise DataError(f"face frame index {index} out of range for {len(frames)} frames")
        return frames[index]
    if strategy == "mean":
        return frames.mean(axis=0)
    raise ConfigError(f"unknown face selection strategy {strategy!r}")


class SpeakerEncoder(nn.Module):
    """Trainable MLP from a face feature to a d-dim speaker embedding."""

    def __init__(self, face_dim: int, hidden: int, d: int):
        super().__init__()
        self.fc1 = nn.Linear(face_dim, hidden)
        self.fc2 = nn.Linear(hidden, d)
        self.norm = nn.LayerNorm(d)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        if feature.shape[-1] != self.fc1.in_features:
            raise ValueError(
                f"face feature dim {feature.shape[-1]} does not match MLP input {self.fc1.in_features}"
            )
        return self.norm(self.fc2(torch.relu(self.fc1(feature))))


def broadcast_add(h: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
    """Add one embedding to every time step: out[..., j, :] = h[..., j, :] + e."""
    if h.shape[-1] != embedding.shape[-1]:
        raise ValueError(f"dim mismatch: hidden d={h.shape[-1]}, embedding d={embedding.shape[-1]}")
    return h + embedding.unsqueeze(-2)
