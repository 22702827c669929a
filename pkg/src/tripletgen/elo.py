"""Pairwise listening-study engine: scheduling, ELO updates, MOS collection.

One study holds contenders (e.g. objective-weight configurations), samples
(an input clip, its instruction, and one output clip per contender), and an
append-only event log. Ratings follow the standard ELO update with a
base-10/400 logistic curve; every verdict is zero-sum, so replaying the log
reproduces the ratings exactly.
"""

from __future__ import annotations

import itertools
import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConflictError, NotFoundError

DEFAULT_K = 32.0
DEFAULT_INITIAL_RATING = 1000.0

# Instructions shown to participants for the MOS categories.
MOS_INSTRUCTIONS = {
    "quality": (
        "Quality: How good is the sound quality of the edited audio compared to "
        "the input? 1 = Poor quality with strong artifacts, 5 = Same quality as "
        "the input audio"
    ),
    "relevance": (
        "Relevance: How well does the edited audio match the given instruction? "
        "1 = Completely irrelevant to instruction, 5 = Perfectly follows instruction"
    ),
    "faithfulness": (
        "Faithfulness: How similar does the edited audio sound to the input audio? "
        "1 = Completely different from the input audio, 5 = Same as input audio"
    ),
}


@dataclass
class Contender:
    id: str
    label: str
    rating: float = DEFAULT_INITIAL_RATING
    games: int = 0


@dataclass(frozen=True)
class StudySample:
    id: str
    input_ref: str
    instruction: str
    outputs: dict  # contender id -> clip ref


@dataclass
class Comparison:
    id: str
    study_id: str
    sample_id: str
    input_ref: str
    instruction: str
    contender_a: str
    clip_a: str
    contender_b: str
    clip_b: str
    verdict: str | None = None  # "a", "b", or "tie"
    created_at: float = 0.0
    decided_at: float | None = None

    @property
    def pending(self) -> bool:
        return self.verdict is None


@dataclass(frozen=True)
class MosRating:
    sample_ref: str
    quality: int
    relevance: int
    faithfulness: int

    def __post_init__(self):
        for name in ("quality", "relevance", "faithfulness"):
            value = getattr(self, name)
            if not isinstance(value, int) or not 1 <= value <= 5:
                raise ValueError(f"{name} must be an integer in 1..5, got {value!r}")


def expected_score(rating: float, opponent: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((opponent - rating) / 400.0))


class EloStudy:
    """State and rules for one study; mutations go through the event log."""

    def __init__(
        self,
        study_id: str,
        name: str = "",
        k_factor: float = DEFAULT_K,
        initial_rating: float = DEFAULT_INITIAL_RATING,
        allow_ties: bool = True,
    ):
        self.id = study_id
        self.name = name
        self.k_factor = k_factor
        self.initial_rating = initial_rating
        self.allow_ties = allow_ties
        self.contenders: dict[str, Contender] = {}
        self.samples: dict[str, StudySample] = {}
        self.comparisons: dict[str, Comparison] = {}
        self.mos: list[MosRating] = []
        self.log: list[dict] = []
        self._served: set[tuple] = set()  # (sample id, frozenset of contender pair)

    # -- construction ------------------------------------------------------

    def add_contender(self, contender_id: str, label: str = "") -> Contender:
        if contender_id in self.contenders:
            raise ConflictError(f"contender {contender_id!r} already exists")
        contender = Contender(contender_id, label or contender_id, self.initial_rating)
        self.contenders[contender_id] = contender
        self._log("add_contender", id=contender_id, label=contender.label)
        return contender

    def add_sample(self, sample_id: str, input_ref: str, instruction: str, outputs: dict) -> StudySample:
        if sample_id in self.samples:
            raise ConflictError(f"sample {sample_id!r} already exists")
        unknown = set(outputs) - set(self.contenders)
        if unknown:
            raise NotFoundError(f"outputs reference unknown contenders {sorted(unknown)}")
        sample = StudySample(sample_id, input_ref, instruction, dict(outputs))
        self.samples[sample_id] = sample
        self._log("add_sample", id=sample_id, input_ref=input_ref,
                  instruction=instruction, outputs=dict(outputs))
        return sample

    # -- scheduling ---------------------------------------------------------

    def schedule_pair(self) -> Comparison | None:
        """Create the next pending comparison, or None when exhausted.

        Pairs with the fewest combined games come first (ties broken by the
        closest ratings, then ids); each (sample, pair) is served once.
        """
        pairs = sorted(
            itertools.combinations(sorted(self.contenders), 2),
            key=lambda pair: (
                self.contenders[pair[0]].games + self.contenders[pair[1]].games,
                abs(self.contenders[pair[0]].rating - self.contenders[pair[1]].rating),
                pair,
            ),
        )
        for a, b in pairs:
            for sample_id in sorted(self.samples):
                sample = self.samples[sample_id]
                if a not in sample.outputs or b not in sample.outputs:
                    continue
                key = (sample_id, frozenset((a, b)))
                if key in self._served:
                    continue
                comparison = Comparison(
                    id=uuid.uuid4().hex,
                    study_id=self.id,
                    sample_id=sample_id,
                    input_ref=sample.input_ref,
                    instruction=sample.instruction,
                    contender_a=a,
                    clip_a=sample.outputs[a],
                    contender_b=b,
                    clip_b=sample.outputs[b],
                    created_at=time.time(),
                )
                self._served.add(key)
                self.comparisons[comparison.id] = comparison
                self._log("schedule", comparison_id=comparison.id, sample_id=sample_id,
                          a=a, b=b)
                return comparison
        return None

    # -- verdicts ------------------------------------------------------------

    def submit_verdict(self, comparison_id: str, verdict: str) -> dict:
        if comparison_id not in self.comparisons:
            raise NotFoundError(f"unknown comparison {comparison_id!r}")
        comparison = self.comparisons[comparison_id]
        if not comparison.pending:
            raise ConflictError(f"comparison {comparison_id!r} already decided")
        if verdict not in ("a", "b", "tie"):
            raise ValueError(f"verdict must be 'a', 'b', or 'tie', got {verdict!r}")
        if verdict == "tie" and not self.allow_ties:
            raise ValueError("ties are disabled for this study")
        comparison.verdict = verdict
        comparison.decided_at = time.time()
        self._apply_elo(comparison.contender_a, comparison.contender_b, verdict)
        self._log("verdict", comparison_id=comparison_id, verdict=verdict)
        return {
            comparison.contender_a: self.contenders[comparison.contender_a].rating,
            comparison.contender_b: self.contenders[comparison.contender_b].rating,
        }

    def _apply_elo(self, a: str, b: str, verdict: str) -> None:
        score_a = {"a": 1.0, "b": 0.0, "tie": 0.5}[verdict]
        ca, cb = self.contenders[a], self.contenders[b]
        expected_a = expected_score(ca.rating, cb.rating)
        delta = self.k_factor * (score_a - expected_a)
        ca.rating += delta
        cb.rating -= delta  # zero sum by construction
        ca.games += 1
        cb.games += 1

    # -- reporting ------------------------------------------------------------

    def ranking(self) -> list[Contender]:
        return sorted(
            self.contenders.values(), key=lambda c: (-c.rating, c.games, c.id)
        )

    def pending(self) -> list[Comparison]:
        return [c for c in self.comparisons.values() if c.pending]

    def progress(self) -> dict:
        total = len(self.comparisons)
        decided = sum(1 for c in self.comparisons.values() if not c.pending)
        return {"scheduled": total, "decided": decided}

    # -- MOS -------------------------------------------------------------------

    def submit_mos(self, rating: MosRating) -> None:
        self.mos.append(rating)
        self._log("mos", **rating.__dict__)

    def aggregate_mos(self) -> dict:
        out = {}
        for category in ("quality", "relevance", "faithfulness"):
            values = [getattr(r, category) for r in self.mos]
            if not values:
                out[category] = {"mean": None, "std": None, "count": 0}
                continue
            mean = sum(values) / len(values)
            variance = sum((v - mean) ** 2 for v in values) / len(values)  # population
            out[category] = {"mean": mean, "std": variance**0.5, "count": len(values)}
        return out

    # -- persistence -------------------------------------------------------------

    def _log(self, event: str, **payload) -> None:
        self.log.append({"event": event, "at": time.time(), **payload})

    def save_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"event": "create", "id": self.id, "name": self.name,
                                "k": self.k_factor, "initial": self.initial_rating,
                                "allow_ties": self.allow_ties}) + "\n")
            for entry in self.log:
                f.write(json.dumps(entry) + "\n")

    @classmethod
    def replay(cls, events: list[dict]) -> "EloStudy":
        """Reconstruct a study by replaying its event log."""
        head = events[0]
        if head.get("event") != "create":
            raise ValueError("log must start with a create event")
        study = cls(head["id"], head.get("name", ""), head.get("k", DEFAULT_K),
                    head.get("initial", DEFAULT_INITIAL_RATING), head.get("allow_ties", True))
        pending_meta: dict[str, dict] = {}
        for entry in events[1:]:
            kind = entry["event"]
            if kind == "add_contender":
                study.add_contender(entry["id"], entry.get("label", ""))
            elif kind == "add_sample":
                study.add_sample(entry["id"], entry["input_ref"], entry["instruction"],
                                 entry["outputs"])
            elif kind == "schedule":
                sample = study.samples[entry["sample_id"]]
                comparison = Comparison(
                    id=entry["comparison_id"], study_id=study.id,
                    sample_id=entry["sample_id"], input_ref=sample.input_ref,
                    instruction=sample.instruction,
                    contender_a=entry["a"], clip_a=sample.outputs[entry["a"]],
                    contender_b=entry["b"], clip_b=sample.outputs[entry["b"]],
                    created_at=entry.get("at", 0.0),
                )
                study._served.add((entry["sample_id"], frozenset((entry["a"], entry["b"]))))
                study.comparisons[comparison.id] = comparison
                study._log("schedule", comparison_id=comparison.id,
                           sample_id=entry["sample_id"], a=entry["a"], b=entry["b"])
            elif kind == "verdict":
                study.submit_verdict(entry["comparison_id"], entry["verdict"])
            elif kind == "mos":
                study.submit_mos(MosRating(entry["sample_ref"], entry["quality"],
                                           entry["relevance"], entry["faithfulness"]))
        return study

    @classmethod
    def load_log(cls, path) -> "EloStudy":
        events = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls.replay(events)
