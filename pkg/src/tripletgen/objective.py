"""Weighted objective that scores a generated audio pair against its captions.

The score combines three embedding-similarity terms with a multi-scale mel
penalty. Both optimization loops maximize it. The default weights are the
calibrated values selected through the pairwise listening study run by the
rating service.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .audio import AudioClip
from .embeddings import Embedder, clap_dir, clap_out, clap_sim
from .errors import NumericError
from .spectral import StftConfig, ms_mel_loss


@dataclass(frozen=True)
class MetricReport:
    """The four objective inputs for one audio pair."""

    m_out: float  # output audio vs output caption, cosine
    m_dir: float  # audio delta vs caption delta, cosine
    m_sim: float  # input audio vs output audio, cosine
    m_mel: float  # multi-scale mel loss between the pair, >= 0

    def __post_init__(self):
        for name in ("m_out", "m_dir", "m_sim"):
            value = getattr(self, name)
            if not math.isfinite(value) or not -1.0 - 1e-9 <= value <= 1.0 + 1e-9:
                raise ValueError(f"{name} must be a finite cosine in [-1, 1], got {value!r}")
        if not math.isfinite(self.m_mel) or self.m_mel < 0.0:
            raise ValueError(f"m_mel must be finite and >= 0, got {self.m_mel!r}")


@dataclass(frozen=True)
class ObjectiveWeights:
    w_out: float = 8.0
    w_dir: float = 14.0
    w_sim: float = 0.5
    w_mel: float = 1.5

    def __post_init__(self):
        for name in ("w_out", "w_dir", "w_sim", "w_mel"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_out, self.w_dir, self.w_sim, self.w_mel)


DEFAULT_WEIGHTS = ObjectiveWeights()


def evaluate_objective(report: MetricReport, weights: ObjectiveWeights = DEFAULT_WEIGHTS) -> float:
    """Weighted sum of the report terms; the mel loss is subtracted."""
    value = (
        weights.w_out * report.m_out
        + weights.w_dir * report.m_dir
        + weights.w_sim * report.m_sim
        - weights.w_mel * report.m_mel
    )
    if not math.isfinite(value):
        raise NumericError(f"objective is not finite: {value!r}")
    return value


def score_pair(
    in_audio: AudioClip,
    out_audio: AudioClip,
    in_caption: str,
    out_caption: str,
    embedder: Embedder,
    stft_config: StftConfig | None = None,
    weights: ObjectiveWeights = DEFAULT_WEIGHTS,
) -> tuple[MetricReport, float]:
    """Assemble the metric report for a pair and evaluate the objective."""
    report = MetricReport(
        m_out=clap_out(out_audio, out_caption, embedder),
        m_dir=clap_dir(in_audio, out_audio, in_caption, out_caption, embedder),
        m_sim=clap_sim(in_audio, out_audio, embedder),
        m_mel=ms_mel_loss(in_audio, out_audio, stft_config).value,
    )
    return report, evaluate_objective(report, weights)
