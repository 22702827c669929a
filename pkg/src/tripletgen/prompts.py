"""LLM-driven prompt and instruction generation, plus candidate search.

Three surfaces live here: structured prompt-triplet generation with the
element-count filter and optional negative captions, the three-stage
instruction pipeline for the deterministic edit tasks, and the seed/guidance
candidate search that filters generations through a judge before ranking by
embedding similarity. Every model call goes through a pluggable client;
deterministic mocks keyed on input content ship with the package so the
whole pipeline runs offline.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .audio import AudioClip
from .edits import EditKind, EditParams
from .embeddings import Embedder, caption_hash, clap_out
from .errors import BackendError, CandidateSearchExhausted

ELEMENT_FILTER_MAX = 2
JUDGE_THRESHOLD = 6  # strictly greater-than, applied to both clips of a pair
CFG_RANGE = (3.0, 9.0)
N_CANDIDATES = 7
CANDIDATE_STEPS = 50


@dataclass(frozen=True)
class PromptTriplet:
    input_caption: str
    edit_instruction: str
    output_caption: str
    element_count: int
    negative_input: str | None = None
    negative_output: str | None = None
    source_dataset: str = ""

    def __post_init__(self):
        if not self.input_caption.strip() or not self.output_caption.strip():
            raise ValueError("captions must be non-empty")
        if not self.edit_instruction.strip():
            raise ValueError("instruction must be non-empty")
        if self.element_count < 1:
            raise ValueError(f"element_count must be >= 1, got {self.element_count}")

    def as_dict(self) -> dict:
        return {
            "input_caption": self.input_caption,
            "edit_instruction": self.edit_instruction,
            "output_caption": self.output_caption,
            "element_count": self.element_count,
            "negative_input": self.negative_input,
            "negative_output": self.negative_output,
            "source_dataset": self.source_dataset,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PromptTriplet":
        return cls(**{k: data.get(k) for k in (
            "input_caption", "edit_instruction", "output_caption", "element_count",
            "negative_input", "negative_output",
        )}, source_dataset=data.get("source_dataset", ""))


class TripletSchema(BaseModel):
    """Wire schema for prompt-triplet responses."""

    reasoning: str = ""
    instruction: str = Field(min_length=1)
    output_caption: str = Field(min_length=1)
    element_count: int = Field(ge=1)
    negative_input: str | None = None
    negative_output: str | None = None


class InstructionSchema(BaseModel):
    instruction: str = Field(min_length=1)


class LlmClient(ABC):
    """Structured-output language model client."""

    model: str = "unknown"

    @abstractmethod
    def complete(self, task: str, payload: dict) -> dict:
        """Return the raw structured response for one request."""


def request_structured(client: LlmClient, task: str, payload: dict, schema, retries: int = 3):
    """Call the client and validate against ``schema``, retrying on bad output."""
    last_error = None
    for _ in range(retries):
        try:
            raw = client.complete(task, payload)
        except BackendError as err:
            last_error = err
            continue
        try:
            return schema.model_validate(raw)
        except ValidationError as err:
            last_error = err
    raise BackendError(f"{task}: no schema-valid response in {retries} attempts") from last_error


class JudgeClient(ABC):
    """Scores how well a clip matches a caption, integer 1..10."""

    @abstractmethod
    def score(self, clip: AudioClip, caption: str) -> int: ...


# --------------------------------------------------------------------------
# Deterministic mock clients.

_SEPARATORS = (" and ", " as ", " while ", " with ", " during ")

# Known caption rows reproduced exactly by the mock (element counts included).
_TRIPLET_CATALOG = {
    "a man speaks as birds chirp": {
        "instruction": "Remove the birds chirping",
        "output_caption": "A man speaks",
        "element_count": 2,
        "negative_input": None,
        "negative_output": "birds chirp",
    },
    "thunder and rain": {
        "instruction": "add distant wind",
        "output_caption": "Thunder and rain with distant wind",
        "element_count": 2,
        "negative_input": "distant wind",
        "negative_output": None,
    },
    "a car accelerates": {
        "instruction": "Change it to a motorcycle",
        "output_caption": "A motorcycle accelerates",
        "element_count": 1,
        "negative_input": "motorcycle",
        "negative_output": "car",
    },
    "a plane takes off": {
        "instruction": "it should be further away",
        "output_caption": "A plane takes off in the distance",
        "element_count": 1,
        "negative_input": None,
        "negative_output": None,
    },
}

_INSTRUCTION_CATALOG = {
    (
        "ADD",
        "people talking in a roadside cafe",
        "a chirping bird",
    ): "Add the sound of a bird chirping to the people talking in a roadside cafe",
}

_VARIATION_CATALOG = {
    "add the sound of a bird chirping to the people talking in a roadside cafe":
        "Add some chirping birds to the chatter in a roadside cafe",
}

_MINIMIZATION_CATALOG = {
    "add some chirping birds to the chatter in a roadside cafe": "Add bird sounds",
    "add the sound of a bird chirping to the people talking in a roadside cafe": "Add bird sounds",
}


def estimate_element_count(caption: str) -> int:
    """Conjunction-based element count used by the mock client."""
    lowered = f" {caption.strip().lower()} "
    return 1 + sum(lowered.count(sep) for sep in _SEPARATORS)


def _strip_article(caption: str) -> str:
    words = caption.strip().split()
    if words and words[0].lower() in ("a", "an", "the"):
        words = words[1:]
    return " ".join(words)


class MockLlmClient(LlmClient):
    """Deterministic stand-in: catalog rows verbatim, templates elsewhere."""

    model = "mock-llm"

    def complete(self, task: str, payload: dict) -> dict:
        if task == "prompt_triplet":
            return self._triplet(payload["input_caption"])
        if task == "instruction_initial":
            return {"instruction": self._initial_instruction(payload)}
        if task == "instruction_variation":
            return {"instruction": self._variation(payload["instruction"])}
        if task == "instruction_minimization":
            return {"instruction": self._minimization(payload["instruction"])}
        raise BackendError(f"mock client has no task {task!r}")

    def _triplet(self, caption: str) -> dict:
        key = caption.strip().lower()
        if key in _TRIPLET_CATALOG:
            entry = dict(_TRIPLET_CATALOG[key])
            entry["reasoning"] = "catalog row"
            return entry
        count = estimate_element_count(caption)
        if count >= 2:
            # drop the final element named after the last separator
            lowered = f" {key} "
            cut = max(lowered.rfind(sep) for sep in _SEPARATORS)
            sep_len = next(len(s) for s in _SEPARATORS if lowered.startswith(s, cut))
            head = lowered[1:cut].strip()
            tail = lowered[cut + sep_len : -1].strip()
            return {
                "reasoning": f"{count} elements; removing the last",
                "instruction": f"Remove the {tail}",
                "output_caption": head.capitalize(),
                "element_count": count,
                "negative_input": None,
                "negative_output": tail,
            }
        return {
            "reasoning": "single element; pushing it into the distance",
            "instruction": "Make it sound distant",
            "output_caption": f"{caption.strip()} in the distance",
            "element_count": count,
            "negative_input": None,
            "negative_output": None,
        }

    def _initial_instruction(self, payload: dict) -> str:
        kind = payload["task"]
        captions = [c.strip() for c in payload.get("captions", [])]
        key = (kind, *[c.lower() for c in captions])
        if key in _INSTRUCTION_CATALOG:
            return _INSTRUCTION_CATALOG[key]
        params = payload.get("params", {})
        base = _strip_article(captions[0]).lower() if captions else "the audio"
        extra = _strip_article(captions[1]).lower() if len(captions) > 1 else "a new sound"
        if kind == "ADD":
            return f"Add the sound of {extra} to the {base}"
        if kind == "REPLACE":
            replacement = _strip_article(captions[2]).lower() if len(captions) > 2 else "another sound"
            return f"Replace the {extra} with {replacement}"
        if kind == "DROP":
            return f"Remove the {extra} from the {base}"
        if kind == "SWAP":
            return "Swap the order of the two sounds"
        if kind == "LOOP":
            return f"Repeat the {base} {params.get('loop_count', 2)} times"
        if kind == "PITCH":
            amount = params.get("semitones", 0.0)
            direction = "up" if amount >= 0 else "down"
            return f"Shift the pitch of the {base} {direction} by {abs(amount):.0f} semitones"
        if kind == "SPEED":
            factor = params.get("speed", 1.0)
            verb = "Speed up" if factor >= 1.0 else "Slow down"
            return f"{verb} the {base} by a factor of {factor:.2f}"
        if kind == "LOW_PASS":
            return f"Filter out the high frequencies from the {base}"
        if kind == "HIGH_PASS":
            return f"Remove the low rumble from the {base}"
        if kind == "INPAINT":
            return f"Restore the missing audio in the {base}"
        if kind == "SUPER_RES":
            return f"Enhance the quality of this low-resolution recording of {base}"
        return f"Remove the background noise from the {base}"

    def _variation(self, instruction: str) -> str:
        key = instruction.strip().lower()
        if key in _VARIATION_CATALOG:
            return _VARIATION_CATALOG[key]
        body = instruction.strip()
        return f"Please {body[0].lower()}{body[1:]}" if body else body

    def _minimization(self, instruction: str) -> str:
        key = instruction.strip().lower()
        if key in _MINIMIZATION_CATALOG:
            return _MINIMIZATION_CATALOG[key]
        words = instruction.strip().split()
        return " ".join(words[: min(4, len(words))]).rstrip(".,;")


class MockJudgeClient(JudgeClient):
    """Maps embedding cosine between clip and caption onto the 1..10 scale."""

    def __init__(self, embedder: Embedder):
        self._embedder = embedder

    def score(self, clip: AudioClip, caption: str) -> int:
        similarity = clap_out(clip, caption, self._embedder)
        return int(np.clip(round(1 + 9 * max(0.0, similarity)), 1, 10))


class ScriptedJudge(JudgeClient):
    """Replays a fixed score sequence; for protocol tests."""

    def __init__(self, scores):
        self._scores = list(scores)
        self.calls = 0

    def score(self, clip, caption) -> int:
        value = self._scores[self.calls % len(self._scores)]
        self.calls += 1
        return int(value)


# --------------------------------------------------------------------------
# Pipeline operations.


def generate_prompt_triplet(
    input_caption: str, llm: LlmClient, source_dataset: str = ""
) -> PromptTriplet:
    """Generate instruction, output caption, and metadata for one caption."""
    if not input_caption.strip():
        raise ValueError("input caption must be non-empty")
    response = request_structured(
        llm, "prompt_triplet", {"input_caption": input_caption}, TripletSchema
    )
    return PromptTriplet(
        input_caption=input_caption,
        edit_instruction=response.instruction,
        output_caption=response.output_caption,
        element_count=response.element_count,
        negative_input=response.negative_input,
        negative_output=response.negative_output,
        source_dataset=source_dataset,
    )


def filter_by_elements(triplets) -> tuple[list[PromptTriplet], list[PromptTriplet]]:
    """Split triplets into (kept, rejected); kept have at most two elements."""
    kept, rejected = [], []
    for triplet in triplets:
        (kept if triplet.element_count <= ELEMENT_FILTER_MAX else rejected).append(triplet)
    return kept, rejected


@dataclass(frozen=True)
class CandidateConfig:
    seed: int
    cfg: float
    judge_scores: tuple[int, int]
    mean_clap: float | None = None

    def __post_init__(self):
        if not CFG_RANGE[0] <= self.cfg <= CFG_RANGE[1]:
            raise ValueError(f"cfg must be in {CFG_RANGE}, got {self.cfg}")
        for score in self.judge_scores:
            if not 1 <= score <= 10:
                raise ValueError(f"judge scores must be in [1, 10], got {score}")


def candidate_search(
    triplet: PromptTriplet,
    backend,
    judge: JudgeClient,
    embedder: Embedder,
    rng: np.random.Generator,
    n_candidates: int = N_CANDIDATES,
    steps: int = CANDIDATE_STEPS,
) -> CandidateConfig:
    """Find a seed/guidance configuration for one caption pair.

    Generates ``n_candidates`` audio pairs, keeps those where both clips
    score strictly above the judge threshold, and returns the passing
    configuration with the highest mean embedding similarity across input
    and output. Embedding similarity is never computed for failing pairs.
    """
    passing: list[CandidateConfig] = []
    for _ in range(n_candidates):
        seed = int(rng.integers(0, 2**31 - 1))
        cfg = float(rng.uniform(*CFG_RANGE))
        in_audio = backend.generate(triplet.input_caption, triplet.negative_input, seed, cfg, steps)
        out_audio = backend.generate(triplet.output_caption, triplet.negative_output, seed, cfg, steps)
        score_in = judge.score(in_audio, triplet.input_caption)
        score_out = judge.score(out_audio, triplet.output_caption)
        if score_in > JUDGE_THRESHOLD and score_out > JUDGE_THRESHOLD:
            mean_clap = (
                clap_out(in_audio, triplet.input_caption, embedder)
                + clap_out(out_audio, triplet.output_caption, embedder)
            ) / 2.0
            passing.append(CandidateConfig(seed, cfg, (score_in, score_out), mean_clap))
    if not passing:
        raise CandidateSearchExhausted(
            f"none of {n_candidates} candidates passed the judge threshold"
        )
    return max(passing, key=lambda c: c.mean_clap)


@dataclass(frozen=True)
class InstructionTrace:
    initial: str
    variation_applied: bool
    variation: str | None
    minimization_applied: bool
    minimization: str | None
    final: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def generate_instruction(
    task: EditKind,
    params: EditParams,
    captions: list[str],
    llm: LlmClient,
    rng: np.random.Generator,
) -> tuple[str, InstructionTrace]:
    """Three-stage instruction synthesis for a deterministic edit.

    Stage one always runs; the variation and minimization stages each fire
    independently with probability one half. The trace records every stage
    so a run can be replayed exactly.
    """
    apply_variation = bool(rng.random() < 0.5)
    apply_minimization = bool(rng.random() < 0.5)

    payload_params = {k: v for k, v in params.__dict__.items() if v is not None}
    initial = request_structured(
        llm,
        "instruction_initial",
        {"task": task.value, "params": payload_params, "captions": list(captions)},
        InstructionSchema,
    ).instruction

    current = initial
    variation = None
    if apply_variation:
        variation = request_structured(
            llm, "instruction_variation", {"instruction": current}, InstructionSchema
        ).instruction
        current = variation
    minimization = None
    if apply_minimization:
        minimization = request_structured(
            llm, "instruction_minimization", {"instruction": current}, InstructionSchema
        ).instruction
        current = minimization

    trace = InstructionTrace(
        initial=initial,
        variation_applied=apply_variation,
        variation=variation,
        minimization_applied=apply_minimization,
        minimization=minimization,
        final=current,
    )
    return current, trace
