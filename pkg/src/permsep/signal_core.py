"""Waveform <-> spectrogram plumbing and the input feature recipe.

Everything downstream works on magnitude spectrograms from a 32 ms / 8 ms
STFT at 8 kHz (window 256, hop 64, 129 bins). Analysis and synthesis both
use the square root of a periodic Hann window, so the overlap-added
window product sums to a constant in the interior and the round trip is
exact up to float error there.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from .errors import EmptyCorpus, InputTooShort, ShapeMismatch

SAMPLE_RATE = 8000
WINDOW_LEN = 256
HOP = 64
N_FREQ = WINDOW_LEN // 2 + 1  # 129

LOG_FLOOR = -300.0
STD_CLAMP = 1e-12
_OLA_CLAMP = 1e-8


@dataclass
class SignalBuffer:
    """Mono waveform in [-1, 1] float64 at SAMPLE_RATE."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeMismatch(f"expected 1-d samples, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class Spectrogram:
    """Complex STFT, shape (T, F) with F = 129."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[1] != N_FREQ:
            raise ShapeMismatch(f"expected (T, {N_FREQ}), got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass
class FeatureMatrix:
    """Normalized log-magnitude features, shape (T, F)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != N_FREQ:
            raise ShapeMismatch(f"expected (T, {N_FREQ}), got {self.values.shape}")


@dataclass
class NormalizationStats:
    """Per-frequency mean and standard deviation of log magnitudes."""

    mean: np.ndarray  # (F,)
    std: np.ndarray  # (F,), clamped from below at STD_CLAMP
    n_frames: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (N_FREQ,) or self.std.shape != (N_FREQ,):
            raise ShapeMismatch("stats must have shape (F,)")

    def to_section(self):
        from .records import Section

        sec = Section("stats")
        sec.set("mean", [float(x) for x in self.mean])
        sec.set("std", [float(x) for x in self.std])
        sec.set("n_frames", self.n_frames)
        return sec

    @staticmethod
    def from_section(sec) -> "NormalizationStats":
        return NormalizationStats(
            mean=np.array(sec.get_floats("mean")),
            std=np.array(sec.get_floats("std")),
            n_frames=sec.get_int("n_frames", 0),
        )


def _sqrt_hann() -> np.ndarray:
    # periodic Hann so shifted window-squares tile exactly
    n = np.arange(WINDOW_LEN)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / WINDOW_LEN)
    return np.sqrt(hann)


_WINDOW = _sqrt_hann()


def n_frames_for(n_samples: int) -> int:
    if n_samples < WINDOW_LEN:
        raise InputTooShort(f"need at least {WINDOW_LEN} samples, got {n_samples}")
    return 1 + (n_samples - WINDOW_LEN) // HOP


def stft(signal: SignalBuffer) -> Spectrogram:
    """Windowed one-sided DFT. Trailing samples beyond the last full
    window are dropped (no padding)."""
    x = signal.samples
    n_t = n_frames_for(len(x))
    idx = np.arange(WINDOW_LEN)[None, :] + HOP * np.arange(n_t)[:, None]
    frames = x[idx] * _WINDOW[None, :]
    return Spectrogram(np.fft.rfft(frames, axis=1))


def istft(spec: Spectrogram, n_samples: int | None = None) -> SignalBuffer:
    """Overlap-add inverse with window-square normalization.

    Edge frames are only partially covered by overlapping windows, so
    the first and last WINDOW_LEN - HOP samples are attenuated relative
    to the input; the interior round-trips exactly.
    """
    frames = np.fft.irfft(spec.values, n=WINDOW_LEN, axis=1) * _WINDOW[None, :]
    n_t = spec.n_frames
    total = WINDOW_LEN + HOP * (n_t - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = _WINDOW * _WINDOW
    for t in range(n_t):
        lo = t * HOP
        out[lo:lo + WINDOW_LEN] += frames[t]
        norm[lo:lo + WINDOW_LEN] += w2
    out /= np.maximum(norm, _OLA_CLAMP)
    if n_samples is not None:
        if n_samples <= total:
            out = out[:n_samples]
        else:
            out = np.concatenate([out, np.zeros(n_samples - total)])
    return SignalBuffer(out)


def cola_interior(n_samples: int) -> slice:
    """Sample range where overlap-add weight is full, i.e. the round
    trip through stft/istft is exact up to float error."""
    return slice(WINDOW_LEN - HOP, n_samples - (WINDOW_LEN - HOP))


def log_magnitude(spec: Spectrogram) -> np.ndarray:
    """Natural log of magnitudes, floored at LOG_FLOOR so silent bins
    stay finite."""
    mag = spec.magnitude()
    with np.errstate(divide="ignore"):
        logmag = np.log(mag)
    return np.maximum(logmag, LOG_FLOOR)


def compute_stats(corpus_features) -> NormalizationStats:
    """Per-frequency mean/std over all frames of the given (T, F)
    log-magnitude matrices (any iterable, consumed once). Population
    std (ddof=0), clamped from below at STD_CLAMP."""
    total = np.zeros(N_FREQ)
    total_sq = np.zeros(N_FREQ)
    count = 0
    for mat in corpus_features:
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != N_FREQ:
            raise ShapeMismatch(f"expected (T, {N_FREQ}) features, got {mat.shape}")
        total += mat.sum(axis=0)
        total_sq += (mat * mat).sum(axis=0)
        count += mat.shape[0]
    if count == 0:
        raise EmptyCorpus("cannot compute stats on an empty corpus")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_CLAMP)
    return NormalizationStats(mean=mean, std=std, n_frames=count)


def extract_features(
    spec: Spectrogram,
    stats: NormalizationStats,
    noise_std: float = 0.0,
    rng_seed: int = 0,
) -> FeatureMatrix:
    """Floored log magnitude, normalized per frequency; optional
    Gaussian noise (training-time regularizer, noise_std = 0 at eval).
    The noise is a pure function of rng_seed."""
    feats = (log_magnitude(spec) - stats.mean[None, :]) / stats.std[None, :]
    if noise_std > 0.0:
        rng = np.random.default_rng(rng_seed)
        feats = feats + noise_std * rng.standard_normal(feats.shape)
    return FeatureMatrix(feats)


# --- 16-bit PCM WAV round trip ----------------------------------------

def quantize(x: np.ndarray) -> np.ndarray:
    ints = np.rint(np.asarray(x, dtype=np.float64) * 32767.0)
    return np.clip(ints, -32768, 32767).astype(np.int16)


def dequantize(ints: np.ndarray) -> np.ndarray:
    return ints.astype(np.float64) / 32767.0


def write_wav(path: str | Path, signal: SignalBuffer) -> None:
    scipy.io.wavfile.write(str(path), signal.sample_rate, quantize(signal.samples))


def read_wav(path: str | Path) -> SignalBuffer:
    rate, data = scipy.io.wavfile.read(str(path))
    if data.ndim != 1:
        raise ShapeMismatch(f"expected mono wav, got shape {data.shape}")
    if data.dtype != np.int16:
        raise ShapeMismatch(f"expected 16-bit PCM, got dtype {data.dtype}")
    return SignalBuffer(dequantize(data), sample_rate=rate)
