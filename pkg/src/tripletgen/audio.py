"""Canonical audio representation and signal primitives.

Audio is carried as an :class:`AudioClip`: a float32 array of shape
(channels, samples) plus a sample rate. All operations are pure; clips are
treated as immutable (the sample buffers are marked read-only).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import (
    ConstraintError,
    IncompatibilityError,
    UndefinedInputError,
    UnsupportedWavError,
    WavFormatError,
)

_PCM16_SCALE = 32768.0
_PCM24_SCALE = 8388608.0
_PCM32_SCALE = 2147483648.0


@dataclass(frozen=True)
class AudioClip:
    """Multichannel PCM buffer: ``samples`` is (channels, n) float32."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got shape {arr.shape}")
        if arr.shape[0] not in (1, 2):
            raise ValueError(f"channels must be 1 or 2, got {arr.shape[0]}")
        if not isinstance(self.sample_rate, (int, np.integer)) or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate

    def mono(self) -> np.ndarray:
        """Analysis mixdown: mean across channels, 1-D float64."""
        return self.samples.mean(axis=0, dtype=np.float64)

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def silence(duration: float, sample_rate: int = 44100, channels: int = 2) -> AudioClip:
    n = max(0, round(duration * sample_rate))
    return AudioClip(np.zeros((channels, n), dtype=np.float32), sample_rate)


def sine(
    frequency: float,
    duration: float,
    sample_rate: int = 44100,
    amplitude: float = 0.5,
    channels: int = 2,
    phase: float = 0.0,
) -> AudioClip:
    n = round(duration * sample_rate)
    t = np.arange(n, dtype=np.float64) / sample_rate
    wave = amplitude * np.sin(2.0 * np.pi * frequency * t + phase)
    return AudioClip(np.tile(wave, (channels, 1)), sample_rate)


def white_noise(
    duration: float,
    sample_rate: int = 44100,
    amplitude: float = 0.5,
    channels: int = 2,
    rng: np.random.Generator | None = None,
) -> AudioClip:
    rng = rng or np.random.default_rng(0)
    n = round(duration * sample_rate)
    buf = rng.uniform(-amplitude, amplitude, size=(channels, n))
    return AudioClip(buf, sample_rate)


def to_channels(clip: AudioClip, channels: int) -> AudioClip:
    """Convert channel count: mono to stereo duplicates, stereo to mono averages."""
    if clip.channels == channels:
        return clip
    if channels == 2 and clip.channels == 1:
        return AudioClip(np.vstack([clip.samples, clip.samples]), clip.sample_rate)
    if channels == 1 and clip.channels == 2:
        return AudioClip(clip.samples.mean(axis=0, keepdims=True), clip.sample_rate)
    raise IncompatibilityError(f"cannot convert {clip.channels} -> {channels} channels")


# --------------------------------------------------------------------------
# WAV I/O (RIFF): read PCM 16/24/32-bit and 32-bit float, write 16-bit PCM.


def load_wav(path) -> AudioClip:
    """Read a WAV file. Integer PCM is mapped to [-1, 1] by its full scale."""
    return decode_wav(Path(path).read_bytes(), source=str(path))


def decode_wav(data: bytes, source: str = "<bytes>") -> AudioClip:
    """Parse RIFF/WAVE bytes. Integer PCM is mapped to [-1, 1] by full scale."""
    path = source
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if chunk_id == b"fmt ":
            if size < 16 or body_start + 16 > len(data):
                raise WavFormatError(f"{path}: fmt chunk too short")
            code, n_channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", data, body_start)
            if code == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: real code leads the GUID
                if size < 40 or body_start + 26 > len(data):
                    raise WavFormatError(f"{path}: extensible fmt chunk too short")
                (code,) = struct.unpack_from("<H", data, body_start + 24)
            fmt = (code, n_channels, rate, bits)
        elif chunk_id == b"data":
            if body_start + size > len(data):
                raise WavFormatError(f"{path}: truncated data chunk")
            raw = data[body_start : body_start + size]
        pos = body_start + size + (size & 1)

    if fmt is None or raw is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    code, n_channels, rate, bits = fmt
    if n_channels not in (1, 2):
        raise UnsupportedWavError(f"{path}: {n_channels} channels not supported")
    if rate <= 0:
        raise WavFormatError(f"{path}: invalid sample rate {rate}")

    if code == 1 and bits == 16:
        flat = np.frombuffer(raw[: len(raw) - len(raw) % (2 * n_channels)], dtype="<i2")
        samples = flat.astype(np.float32) / _PCM16_SCALE
    elif code == 1 and bits == 24:
        usable = len(raw) - len(raw) % (3 * n_channels)
        bytes3 = np.frombuffer(raw[:usable], dtype=np.uint8).reshape(-1, 3)
        ints = (
            bytes3[:, 0].astype(np.int32)
            | (bytes3[:, 1].astype(np.int32) << 8)
            | (bytes3[:, 2].astype(np.int32) << 16)
        )
        ints = np.where(ints >= 0x800000, ints - 0x1000000, ints)
        samples = ints.astype(np.float32) / _PCM24_SCALE
    elif code == 1 and bits == 32:
        flat = np.frombuffer(raw[: len(raw) - len(raw) % (4 * n_channels)], dtype="<i4")
        samples = flat.astype(np.float64) / _PCM32_SCALE
        samples = samples.astype(np.float32)
    elif code == 3 and bits == 32:
        samples = np.frombuffer(raw[: len(raw) - len(raw) % (4 * n_channels)], dtype="<f4").copy()
    else:
        raise UnsupportedWavError(f"{path}: format code {code} at {bits} bit not supported")

    frames = samples.reshape(-1, n_channels).T
    return AudioClip(frames, int(rate))


def encode_wav(clip: AudioClip) -> bytes:
    """Serialize as 16-bit PCM. Samples outside [-1, 1] are clipped."""
    # scale matches the loader's /32768 so a round trip stays within 1 LSB
    ints = np.round(clip.samples.T.astype(np.float64) * 32768.0)
    ints = np.clip(ints, -32768, 32767).astype("<i2")
    raw = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(raw),
        b"WAVE",
        b"fmt ",
        16,
        1,
        clip.channels,
        clip.sample_rate,
        clip.sample_rate * clip.channels * 2,
        clip.channels * 2,
        16,
        b"data",
        len(raw),
    )
    return header + raw


def save_wav(clip: AudioClip, path) -> None:
    """Write 16-bit PCM. Samples outside [-1, 1] are clipped."""
    Path(path).write_bytes(encode_wav(clip))


# --------------------------------------------------------------------------
# Resampling: windowed-sinc polyphase via an explicit Kaiser design.
# The stopband starts at the narrower Nyquist so the round-trip used for
# SUPER_RES pair construction is spectrally clean (>= 60 dB rejection).

_KAISER_BETA = 8.6  # ~90 dB stopband
_TRANSITION_FRACTION = 0.15  # of the narrower band, kept fully below Nyquist


@lru_cache(maxsize=64)
def _resample_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    attenuation_db = 90.0
    width = _TRANSITION_FRACTION * np.pi / max_rate
    numtaps = int(math.ceil((attenuation_db - 7.95) / (2.285 * width))) | 1
    cutoff = (1.0 - _TRANSITION_FRACTION / 2.0) / max_rate
    return sps.firwin(numtaps, cutoff, window=("kaiser", _KAISER_BETA))


def _resample_channel(x: np.ndarray, up: int, down: int) -> np.ndarray:
    h = _resample_filter(up, down)
    n_out = -(-len(x) * up // down)  # ceil
    half = (len(h) // 2 + up - 1) // up  # filter half-length in input samples
    pad = (-(-half // down) + 1) * down  # multiple of down -> integer output offset
    if len(x) > pad:
        padded = np.pad(x, pad, mode="reflect", reflect_type="odd")
    else:
        padded = np.pad(x, pad, mode="constant")
    out = sps.resample_poly(padded, up, down, window=h)
    offset = pad * up // down
    return out[offset : offset + n_out]


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample to ``target_rate``; identity when the rates already match."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(int(target_rate), clip.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    out = np.stack([_resample_channel(ch.astype(np.float64), up, down) for ch in clip.samples])
    return AudioClip(out, int(target_rate))


# --------------------------------------------------------------------------
# Mixing and concatenation.


def mix(base: AudioClip, overlay: AudioClip, offset: float) -> AudioClip:
    """Sum ``overlay`` into ``base`` starting at ``offset`` seconds.

    The overlay must fit inside the base. If the summed peak exceeds 1.0 the
    whole output is scaled by 1/peak so the result stays in range while
    relative balance is preserved.
    """
    if base.sample_rate != overlay.sample_rate:
        raise IncompatibilityError(
            f"sample rate mismatch: {base.sample_rate} vs {overlay.sample_rate}"
        )
    if base.channels != overlay.channels:
        raise IncompatibilityError(f"channel mismatch: {base.channels} vs {overlay.channels}")
    if offset < 0:
        raise ConstraintError([("mix", "offset >= 0", offset)])
    start = round(offset * base.sample_rate)
    if start + overlay.n_samples > base.n_samples:
        raise ConstraintError(
            [("mix", "offset + overlay duration <= base duration", offset)]
        )
    out = base.samples.astype(np.float64).copy()
    out[:, start : start + overlay.n_samples] += overlay.samples
    peak = np.abs(out).max() if out.size else 0.0
    if peak > 1.0:
        out /= peak
    return AudioClip(out, base.sample_rate)


def concat(first: AudioClip, second: AudioClip) -> AudioClip:
    if first.sample_rate != second.sample_rate:
        raise IncompatibilityError(
            f"sample rate mismatch: {first.sample_rate} vs {second.sample_rate}"
        )
    if first.channels != second.channels:
        raise IncompatibilityError(f"channel mismatch: {first.channels} vs {second.channels}")
    return AudioClip(np.hstack([first.samples, second.samples]), first.sample_rate)


def dominant_frequency(clip: AudioClip) -> float:
    """Frequency of the maximum-magnitude FFT bin of the mono mixdown."""
    mono = clip.mono()
    if mono.size == 0 or not np.any(mono):
        raise UndefinedInputError("dominant_frequency of a silent clip is undefined")
    spectrum = np.abs(np.fft.rfft(mono))
    return int(np.argmax(spectrum)) * clip.sample_rate / mono.size


def rms(clip: AudioClip) -> float:
    return float(np.sqrt(np.mean(np.square(clip.samples.astype(np.float64)))))


def band_energy_above(clip: AudioClip, cutoff_hz: float) -> float:
    """Fraction of spectral energy above ``cutoff_hz`` in the mono mixdown.

    Uses a Hann-windowed periodogram; a plain rectangular FFT would report
    truncation leakage of the finite segment instead of signal content.
    """
    mono = clip.mono()
    windowed = mono * np.hanning(len(mono))
    spectrum = np.abs(np.fft.rfft(windowed)) ** 2
    total = spectrum.sum()
    if total == 0.0:
        raise UndefinedInputError("band energy of a silent clip is undefined")
    freqs = np.fft.rfftfreq(len(mono), 1.0 / clip.sample_rate)
    return float(spectrum[freqs > cutoff_hz].sum() / total)
