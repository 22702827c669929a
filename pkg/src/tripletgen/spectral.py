"""Signal-level distances between audio clips.

Covers the single- and multi-resolution STFT losses, the multi-scale mel
loss, log spectral distance, and the scale-invariant SDR/SNR ratios. All
functions compare the mono mixdowns of the two clips and return a
:class:`MetricValue` tagging the direction of improvement.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import AudioClip
from .errors import IncompatibilityError, UndefinedInputError

LOG_FLOOR = 1e-7  # applied to magnitudes before any logarithm
SDR_CAP_DB = 100.0


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    direction: str  # "lower" or "higher" is better

    def __post_init__(self):
        if self.direction not in ("lower", "higher"):
            raise ValueError(f"direction must be 'lower' or 'higher', got {self.direction!r}")


@dataclass(frozen=True)
class StftConfig:
    """Analysis resolutions shared by the spectral losses.

    ``mel_bins`` defines the mel scales; each count is paired with one of the
    largest ``fft_sizes`` (64 bands with 1024, 128 with 2048 by default).
    """

    fft_sizes: tuple[int, ...] = (512, 1024, 2048)
    hop_ratio: float = 0.25
    window: str = "hann"
    mel_bins: tuple[int, ...] = (64, 128)
    sample_rate: int = 44100

    def __post_init__(self):
        if not self.fft_sizes:
            raise ValueError("fft_sizes must be non-empty")
        if list(self.fft_sizes) != sorted(set(self.fft_sizes)):
            raise ValueError("fft_sizes must be strictly increasing")
        if not 0 < self.hop_ratio <= 1:
            raise ValueError("hop_ratio must be in (0, 1]")
        if len(self.mel_bins) > len(self.fft_sizes):
            raise ValueError("more mel scales than fft sizes")

    def mel_scales(self) -> list[tuple[int, int]]:
        sizes = self.fft_sizes[len(self.fft_sizes) - len(self.mel_bins):]
        return list(zip(sizes, self.mel_bins))


def _window(name: str, size: int) -> np.ndarray:
    from scipy.signal import get_window

    return get_window(name, size, fftbins=True)


def _stft_magnitude(x: np.ndarray, fft_size: int, hop: int, window: str) -> np.ndarray:
    """Magnitude spectrogram of shape (bins, frames)."""
    if len(x) < fft_size:
        x = np.pad(x, (0, fft_size - len(x)))
    n_frames = 1 + (len(x) - fft_size) // hop
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * _window(window, fft_size)
    return np.abs(np.fft.rfft(frames, axis=1)).T


def _aligned_mono(reference: AudioClip, estimate: AudioClip) -> tuple[np.ndarray, np.ndarray]:
    if reference.sample_rate != estimate.sample_rate:
        raise IncompatibilityError(
            f"sample rate mismatch: {reference.sample_rate} vs {estimate.sample_rate}"
        )
    if reference.n_samples == 0 or estimate.n_samples == 0:
        raise UndefinedInputError("spectral metrics are undefined on empty clips")
    a, b = reference.mono(), estimate.mono()
    n = max(len(a), len(b))
    if len(a) < n:
        a = np.pad(a, (0, n - len(a)))
    if len(b) < n:
        b = np.pad(b, (0, n - len(b)))
    return a, b


def _stft_loss_single(a: np.ndarray, b: np.ndarray, fft_size: int, hop: int, window: str) -> float:
    ref = _stft_magnitude(a, fft_size, hop, window)
    est = _stft_magnitude(b, fft_size, hop, window)
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0.0:
        convergence = 0.0 if np.linalg.norm(est) == 0.0 else 1.0
    else:
        convergence = np.linalg.norm(ref - est) / ref_norm
    log_l1 = np.mean(np.abs(np.log(np.maximum(ref, LOG_FLOOR)) - np.log(np.maximum(est, LOG_FLOOR))))
    return float(convergence + log_l1)


def stft_loss(reference: AudioClip, estimate: AudioClip, config: StftConfig | None = None) -> MetricValue:
    """Spectral convergence plus log-magnitude L1 at the largest resolution."""
    config = config or StftConfig()
    a, b = _aligned_mono(reference, estimate)
    fft_size = config.fft_sizes[-1]
    hop = max(1, int(fft_size * config.hop_ratio))
    return MetricValue("stft", _stft_loss_single(a, b, fft_size, hop, config.window), "lower")


def mr_stft_loss(reference: AudioClip, estimate: AudioClip, config: StftConfig | None = None) -> MetricValue:
    """Mean of the single-resolution loss over every configured FFT size."""
    config = config or StftConfig()
    a, b = _aligned_mono(reference, estimate)
    losses = [
        _stft_loss_single(a, b, size, max(1, int(size * config.hop_ratio)), config.window)
        for size in config.fft_sizes
    ]
    return MetricValue("mr_stft", float(np.mean(losses)), "lower")


@lru_cache(maxsize=32)
def _mel_filterbank(sample_rate: int, fft_size: int, n_mels: int) -> np.ndarray:
    """Triangular HTK-mel filterbank, (n_mels, fft_size//2 + 1)."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = fft_size // 2 + 1
    freqs = np.linspace(0, sample_rate / 2, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(center - lo, 1e-12)
        down = (hi - freqs) / max(hi - center, 1e-12)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


def ms_mel_loss(reference: AudioClip, estimate: AudioClip, config: StftConfig | None = None) -> MetricValue:
    """Mean over mel scales of the L1 distance between log-mel spectrograms."""
    config = config or StftConfig()
    a, b = _aligned_mono(reference, estimate)
    losses = []
    for fft_size, n_mels in config.mel_scales():
        hop = max(1, int(fft_size * config.hop_ratio))
        bank = _mel_filterbank(reference.sample_rate, fft_size, n_mels)
        mel_a = np.log(np.maximum(bank @ _stft_magnitude(a, fft_size, hop, config.window), LOG_FLOOR))
        mel_b = np.log(np.maximum(bank @ _stft_magnitude(b, fft_size, hop, config.window), LOG_FLOOR))
        losses.append(np.mean(np.abs(mel_a - mel_b)))
    return MetricValue("ms_mel", float(np.mean(losses)), "lower")


def lsd(reference: AudioClip, estimate: AudioClip, config: StftConfig | None = None) -> MetricValue:
    """Log spectral distance: per-frame RMS difference of log10 power spectra."""
    config = config or StftConfig()
    a, b = _aligned_mono(reference, estimate)
    fft_size = config.fft_sizes[-1]
    hop = max(1, int(fft_size * config.hop_ratio))
    ref = np.log10(np.maximum(_stft_magnitude(a, fft_size, hop, config.window), LOG_FLOOR) ** 2)
    est = np.log10(np.maximum(_stft_magnitude(b, fft_size, hop, config.window), LOG_FLOOR) ** 2)
    per_frame = np.sqrt(np.mean((ref - est) ** 2, axis=0))
    return MetricValue("lsd", float(np.mean(per_frame)), "lower")


def _projection_ratio_db(s: np.ndarray, s_hat: np.ndarray) -> float:
    energy = float(np.dot(s, s))
    if energy == 0.0:
        raise UndefinedInputError("reference is silent")
    alpha = float(np.dot(s_hat, s)) / energy
    target = alpha * s
    noise = s_hat - target
    target_e = float(np.dot(target, target))
    noise_e = float(np.dot(noise, noise))
    if noise_e <= target_e * 10 ** (-SDR_CAP_DB / 10):
        return SDR_CAP_DB
    return min(SDR_CAP_DB, 10.0 * np.log10(target_e / noise_e))


def si_sdr(reference: AudioClip, estimate: AudioClip) -> MetricValue:
    """Scale-invariant SDR in dB, capped at +100 dB for identical signals."""
    a, b = _aligned_mono(reference, estimate)
    return MetricValue("si_sdr", _projection_ratio_db(a, b), "higher")


def si_snr(reference: AudioClip, estimate: AudioClip) -> MetricValue:
    """As :func:`si_sdr` with both signals zero-meaned before projection."""
    a, b = _aligned_mono(reference, estimate)
    return MetricValue("si_snr", _projection_ratio_db(a - a.mean(), b - b.mean()), "higher")
