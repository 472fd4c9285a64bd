"""Waveform <-> mel-spectrogram conversion and pitch/energy target extraction.

All framing is centered: frame ``t`` covers ``win_size`` samples around
``t * hop_size`` with reflection padding at the edges, and the frame
count for a waveform of length ``L`` is ``ceil(L / hop_size)``. Mel,
pitch, and energy extractors share this framing, so their lengths agree
for any input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .data import FrameGeometry
from .errors import SignalError

N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5

PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 600.0
_VOICING_THRESHOLD = 0.5
_SILENCE_RMS = 1e-4


@dataclass
class MelSpectrogram:
    """Log-magnitude mel filterbank energies, one row per frame."""

    frames: np.ndarray  # [T_m, n_mels]
    geometry: FrameGeometry = field(default_factory=FrameGeometry)
    n_mels: int = N_MELS
    fmin: float = FMIN
    fmax: float = FMAX
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or len(self.frames) < 1:
            raise SignalError("mel frames must be a non-empty [T_m, n_mels] matrix")
        if self.frames.shape[1] != self.n_mels:
            raise SignalError(
                f"mel has {self.frames.shape[1]} bins, n_mels says {self.n_mels}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise SignalError("non-finite values in mel frames")

    def __len__(self) -> int:
        return len(self.frames)


def frame_count(num_samples: int, hop_size: int) -> int:
    return math.ceil(num_samples / hop_size)


def _check_waveform(waveform: np.ndarray, hop_size: int) -> np.ndarray:
    waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if len(waveform) < hop_size:
        raise SignalError(f"waveform of {len(waveform)} samples is shorter than one hop ({hop_size})")
    if not np.all(np.isfinite(waveform)):
        raise SignalError("waveform contains non-finite samples")
    return waveform


def _frame_signal(waveform: np.ndarray, hop: int, win: int) -> np.ndarray:
    """Centered frames [T, win] with reflection padding, T = ceil(len/hop)."""
    n = len(waveform)
    t = frame_count(n, hop)
    pad = win // 2
    padded = np.pad(waveform, pad, mode="reflect")
    idx = np.arange(win)[None, :] + hop * np.arange(t)[:, None]
    return padded[idx]


def stft_magnitude(waveform: np.ndarray, geometry: FrameGeometry) -> np.ndarray:
    """|STFT| with a periodic Hann window, shape [T, win_size // 2 + 1]."""
    waveform = _check_waveform(waveform, geometry.hop_size)
    frames = _frame_signal(waveform, geometry.hop_size, geometry.win_size)
    window = get_window("hann", geometry.win_size, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, axis=1))


def _stft_complex(waveform: np.ndarray, hop: int, win: int) -> np.ndarray:
    frames = _frame_signal(waveform, hop, win)
    window = get_window("hann", win, fftbins=True)
    return np.fft.rfft(frames * window, axis=1)


def _istft(spec: np.ndarray, hop: int, win: int, length: int) -> np.ndarray:
    """Least-squares overlap-add inverse of ``_stft_complex``."""
    window = get_window("hann", win, fftbins=True)
    frames = np.fft.irfft(spec, n=win, axis=1) * window
    t = len(frames)
    pad = win // 2
    total = hop * (t - 1) + win
    out = np.zeros(total)
    norm = np.zeros(total)
    win_sq = window**2
    for i in range(t):
        out[i * hop : i * hop + win] += frames[i]
        norm[i * hop : i * hop + win] += win_sq
    out = out / np.maximum(norm, 1e-10)
    out = out[pad : pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filters [n_mels, n_fft // 2 + 1] with unit peaks."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-10)
        down = (hi - fft_freqs) / max(hi - center, 1e-10)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


def mel_spectrogram(
    waveform: np.ndarray,
    geometry: FrameGeometry | None = None,
    n_mels: int = N_MELS,
    fmin: float = FMIN,
    fmax: float = FMAX,
    log_floor: float = LOG_FLOOR,
) -> MelSpectrogram:
    """Log mel filterbank energies of a waveform; values = log(max(E, log_floor))."""
    geometry = geometry or FrameGeometry()
    mag = stft_magnitude(waveform, geometry)
    bank = mel_filterbank(geometry.sample_rate, geometry.win_size, n_mels, fmin, fmax)
    mel = mag @ bank.T
    frames = np.log(np.maximum(mel, log_floor)).astype(np.float32)
    return MelSpectrogram(
        frames=frames, geometry=geometry, n_mels=n_mels, fmin=fmin, fmax=fmax, log_floor=log_floor
    )


def griffin_lim(mel: MelSpectrogram, iters: int = 60, seed: int = 0) -> np.ndarray:
    """Iterative phase reconstruction from a log-mel spectrogram.

    The mel filterbank is inverted with a clipped pseudo-inverse, then
    the phase is refined for ``iters`` rounds starting from seeded
    random noise. Output length is exactly T_m * hop_size.
    """
    if iters < 1:
        raise SignalError(f"griffin_lim needs iters >= 1, got {iters}")
    geometry = mel.geometry
    hop, win = geometry.hop_size, geometry.win_size
    bank = mel_filterbank(geometry.sample_rate, win, mel.n_mels, mel.fmin, mel.fmax)
    energies = np.exp(mel.frames.astype(np.float64))
    linear = np.maximum(energies @ np.linalg.pinv(bank).T, 0.0)  # [T, bins]

    length = len(mel) * hop
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(linear.shape))
    for _ in range(iters):
        wave = _istft(linear * phase, hop, win, length)
        spec = _stft_complex(wave, hop, win)[: len(linear)]
        mag = np.abs(spec)
        phase = spec / np.maximum(mag, 1e-10)
    wave = _istft(linear * phase, hop, win, length)
    peak = np.max(np.abs(wave))
    if peak > 1.0:
        wave = wave / peak
    return wave.astype(np.float32)


def extract_pitch(waveform: np.ndarray, geometry: FrameGeometry | None = None) -> np.ndarray:
    """Per-frame fundamental frequency in Hz via normalized autocorrelation.

    Unvoiced or silent frames report 0; voiced estimates are clamped to
    [50, 600] Hz. Frame count matches ``mel_spectrogram`` on the same input.
    """
    geometry = geometry or FrameGeometry()
    waveform = _check_waveform(waveform, geometry.hop_size)
    frames = _frame_signal(waveform, geometry.hop_size, geometry.win_size)
    sr = geometry.sample_rate
    win = geometry.win_size
    lag_min = max(2, int(math.ceil(sr / PITCH_MAX_HZ)))
    lag_max = min(win - 2, int(math.floor(sr / PITCH_MIN_HZ)))

    pitch = np.zeros(len(frames), dtype=np.float32)
    for i, frame in enumerate(frames):
        x = frame - frame.mean()
        rms = np.sqrt(np.mean(x**2))
        if rms < _SILENCE_RMS:
            continue
        # Unbiased normalized autocorrelation, so long lags are not penalized.
        full = np.fft.irfft(np.abs(np.fft.rfft(x, n=2 * win)) ** 2)[:win]
        counts = win - np.arange(win)
        r = (full / counts) / max(full[0] / win, 1e-12)
        band = r[lag_min : lag_max + 1]
        best = int(np.argmax(band))
        peak_val = band[best]
        if peak_val < _VOICING_THRESHOLD:
            continue
        # Prefer the shortest lag whose peak is comparable, to avoid octave-down errors.
        for cand in range(len(band)):
            if band[cand] >= 0.9 * peak_val and _is_local_max(band, cand):
                best = cand
                break
        lag = lag_min + best
        lag = lag + _parabolic_offset(r, lag)
        f0 = sr / lag
        pitch[i] = float(np.clip(f0, PITCH_MIN_HZ, PITCH_MAX_HZ))
    return pitch


def _is_local_max(values: np.ndarray, i: int) -> bool:
    left = values[i - 1] if i > 0 else -np.inf
    right = values[i + 1] if i < len(values) - 1 else -np.inf
    return values[i] >= left and values[i] >= right


def _parabolic_offset(r: np.ndarray, lag: int) -> float:
    if lag <= 0 or lag >= len(r) - 1:
        return 0.0
    denom = r[lag - 1] - 2.0 * r[lag] + r[lag + 1]
    if abs(denom) < 1e-12:
        return 0.0
    offset = 0.5 * (r[lag - 1] - r[lag + 1]) / denom
    return float(np.clip(offset, -0.5, 0.5))


def extract_energy(waveform: np.ndarray, geometry: FrameGeometry | None = None) -> np.ndarray:
    """Per-frame L2 norm of the STFT magnitude; linear in waveform amplitude."""
    geometry = geometry or FrameGeometry()
    mag = stft_magnitude(waveform, geometry)
    return np.sqrt(np.sum(mag**2, axis=1)).astype(np.float32)


def read_wav(path: str | Path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Mono float32 waveform in [-1, 1] plus its sample rate."""
    sr, data = wavfile.read(path)
    if expected_rate is not None and sr != expected_rate:
        raise SignalError(f"{path}: sample rate {sr} Hz, expected {expected_rate} Hz")
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        wave = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        wave = data.astype(np.float32) / 2147483648.0
    else:
        wave = data.astype(np.float32)
    return wave, int(sr)


def write_wav(path: str | Path, waveform: np.ndarray, sample_rate: int) -> None:
    wave = np.clip(np.asarray(waveform, dtype=np.float32), -1.0, 1.0)
    wavfile.write(path, sample_rate, (wave * 32767.0).astype(np.int16))
