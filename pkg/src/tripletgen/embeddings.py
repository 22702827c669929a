"""Embedding-space metrics behind pluggable embedder/classifier interfaces.

Cosine-similarity terms for the search objective, Frechet distance between
embedding distributions, KL divergence over paired classifier outputs, and
the inception score. Deterministic mock backends (mel-statistics embedder,
band-energy classifier) ship here so the whole pipeline runs without any ML
runtime; real CLAP/PANNs services attach through the same interfaces.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import AudioClip
from .errors import IncompatibilityError, NumericError, UndefinedInputError
from .spectral import _mel_filterbank, _stft_magnitude

PROB_FLOOR = 1e-10
_ZERO_DELTA_NORM = 1e-9


class Embedder(ABC):
    """Joint audio/text embedding backend."""

    dimension: int

    @abstractmethod
    def embed_audio(self, clip: AudioClip) -> np.ndarray: ...

    @abstractmethod
    def embed_text(self, caption: str) -> np.ndarray: ...


class Classifier(ABC):
    """Audio tagger producing a class-probability vector."""

    n_classes: int

    @abstractmethod
    def class_probabilities(self, clip: AudioClip) -> np.ndarray: ...


def caption_hash(caption: str) -> int:
    digest = hashlib.blake2b(caption.strip().lower().encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def caption_tone_scene(
    caption: str, sample_rate: int = 8000, duration: float = 0.5, channels: int = 1
) -> AudioClip:
    """Render a caption as a deterministic small tone mixture.

    The mock embedder embeds text by rendering it through this function, so
    text and audio land in one comparable space: audio that actually is the
    rendered scene of a caption scores cosine 1 against that caption.
    """
    rng = np.random.default_rng(caption_hash(caption))
    n = round(duration * sample_rate)
    t = np.arange(n) / sample_rate
    scene = np.zeros(n)
    for _ in range(3):
        freq = rng.uniform(120.0, min(3600.0, sample_rate * 0.45))
        amp = rng.uniform(0.1, 0.3)
        phase = rng.uniform(0, 2 * np.pi)
        scene += amp * np.sin(2 * np.pi * freq * t + phase)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t)
    scene *= envelope / max(1.0, np.abs(scene * envelope).max())
    # a quiet scene-specific bed keeps every mel band above the log floor
    scene += 5e-3 * rng.uniform(-1.0, 1.0, n)
    return AudioClip(np.tile(scene, (channels, 1)), sample_rate)


class MockEmbedder(Embedder):
    """Deterministic embedder: log-mel band statistics, randomly projected.

    Not a perceptual model; it is stable, fast, and discriminates tone scenes
    well enough to drive the candidate filter and objective at desk scale.
    """

    def __init__(self, dimension: int = 32, seed: int = 0, n_mels: int = 24, fft_size: int = 512):
        self.dimension = dimension
        self._n_mels = n_mels
        self._fft_size = fft_size
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((dimension, 2 * n_mels)) / np.sqrt(2 * n_mels)
        self._text_cache: dict[str, np.ndarray] = {}

    def embed_audio(self, clip: AudioClip) -> np.ndarray:
        mono = clip.mono()
        hop = self._fft_size // 4
        mags = _stft_magnitude(mono, self._fft_size, hop, "hann")
        bank = _mel_filterbank(clip.sample_rate, self._fft_size, self._n_mels)
        log_mel = np.log(np.maximum(bank @ mags, 1e-7))
        features = np.concatenate([log_mel.mean(axis=1), log_mel.std(axis=1)])
        vec = self._projection @ features
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_text(self, caption: str) -> np.ndarray:
        key = caption.strip().lower()
        if key not in self._text_cache:
            self._text_cache[key] = self.embed_audio(caption_tone_scene(caption))
        return self._text_cache[key]


class MockClassifier(Classifier):
    """Band-energy softmax over ``n_classes`` equal spectral bands."""

    def __init__(self, n_classes: int = 10, fft_size: int = 1024):
        self.n_classes = n_classes
        self._fft_size = fft_size

    def class_probabilities(self, clip: AudioClip) -> np.ndarray:
        mono = clip.mono()
        if len(mono) < self._fft_size:
            mono = np.pad(mono, (0, self._fft_size - len(mono)))
        spectrum = np.abs(np.fft.rfft(mono)) ** 2
        bands = np.array_split(spectrum, self.n_classes)
        energies = np.log(np.array([b.sum() for b in bands]) + 1e-12)
        energies -= energies.max()
        probs = np.exp(energies)
        return probs / probs.sum()


# --------------------------------------------------------------------------
# Cosine similarity terms.


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def clap_out(out_audio: AudioClip, out_caption: str, embedder: Embedder) -> float:
    """Cosine similarity between the output audio and output caption."""
    return _cosine(embedder.embed_audio(out_audio), embedder.embed_text(out_caption))


def clap_dir(
    in_audio: AudioClip,
    out_audio: AudioClip,
    in_caption: str,
    out_caption: str,
    embedder: Embedder,
) -> float:
    """Cosine between the audio-embedding delta and the text-embedding delta.

    A delta with norm below 1e-9 carries no direction and yields 0.
    """
    audio_delta = embedder.embed_audio(out_audio) - embedder.embed_audio(in_audio)
    text_delta = embedder.embed_text(out_caption) - embedder.embed_text(in_caption)
    if np.linalg.norm(audio_delta) < _ZERO_DELTA_NORM or np.linalg.norm(text_delta) < _ZERO_DELTA_NORM:
        return 0.0
    return _cosine(audio_delta, text_delta)


def clap_sim(in_audio: AudioClip, out_audio: AudioClip, embedder: Embedder) -> float:
    """Cosine similarity between the two audio embeddings."""
    return _cosine(embedder.embed_audio(in_audio), embedder.embed_audio(out_audio))


# --------------------------------------------------------------------------
# Distributional metrics.


@dataclass(frozen=True)
class EmbeddingStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"inconsistent shapes: mean {mean.shape}, cov {cov.shape}")
        if self.count < 2:
            raise ValueError("count must be >= 2")
        if np.abs(cov - cov.T).max() > 1e-9:
            raise ValueError("covariance must be symmetric within 1e-9")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", (cov + cov.T) / 2.0)


def collect_stats(clips, embedder: Embedder) -> EmbeddingStats:
    clips = list(clips)
    if len(clips) < 2:
        raise UndefinedInputError("need at least 2 clips for embedding statistics")
    vectors = np.stack([embedder.embed_audio(c) for c in clips])
    mean = vectors.mean(axis=0)
    cov = np.cov(vectors, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return EmbeddingStats(mean, cov, len(clips))


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    if values.min() < -1e-6:
        raise NumericError(f"matrix not PSD: min eigenvalue {values.min():.3e}")
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def frechet_distance(stats_a: EmbeddingStats, stats_b: EmbeddingStats) -> float:
    """Frechet distance between two Gaussian fits of embedding sets.

    ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), computed via
    symmetric eigendecompositions so the matrix square roots stay stable.
    """
    if stats_a.mean.size != stats_b.mean.size:
        raise IncompatibilityError(
            f"dimension mismatch: {stats_a.mean.size} vs {stats_b.mean.size}"
        )
    a_sqrt = _psd_sqrt(stats_a.covariance)
    inner = a_sqrt @ stats_b.covariance @ a_sqrt
    inner = (inner + inner.T) / 2.0
    values = np.linalg.eigvalsh(inner)
    if values.min() < -1e-6:
        raise NumericError(f"cross term not PSD: min eigenvalue {values.min():.3e}")
    cross_trace = np.sqrt(np.clip(values, 0.0, None)).sum()
    mean_term = float(np.sum((stats_a.mean - stats_b.mean) ** 2))
    trace_term = float(np.trace(stats_a.covariance) + np.trace(stats_b.covariance) - 2.0 * cross_trace)
    return mean_term + trace_term


def _floored(p: np.ndarray) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=np.float64), PROB_FLOOR)
    return p / p.sum()


def kl_divergence(prob_pairs) -> float:
    """Mean KL(reference || estimate) over paired probability vectors."""
    pairs = list(prob_pairs)
    if not pairs:
        raise UndefinedInputError("no probability pairs")
    total = 0.0
    for ref, est in pairs:
        ref, est = np.asarray(ref, dtype=np.float64), np.asarray(est, dtype=np.float64)
        if ref.shape != est.shape:
            raise IncompatibilityError(f"length mismatch: {ref.shape} vs {est.shape}")
        p, q = _floored(ref), _floored(est)
        total += float(np.sum(p * np.log(p / q)))
    return total / len(pairs)


def inception_score(prob_set) -> float:
    """exp of the mean KL between each distribution and their marginal."""
    probs = [np.asarray(p, dtype=np.float64) for p in prob_set]
    if len(probs) < 2:
        raise UndefinedInputError("need at least 2 probability vectors")
    matrix = np.stack([_floored(p) for p in probs])
    marginal = _floored(matrix.mean(axis=0))
    kls = np.sum(matrix * np.log(matrix / marginal), axis=1)
    return float(np.exp(kls.mean()))
