"""Triplet dataset persistence: manifest records, assembly, verification.

A manifest is a line-delimited UTF-8 file, one JSON record per line, so
appends are atomic under a file lock and a crash can corrupt at most the
final line (which readers and appenders repair). Audio lives beside the
manifest under content-hash filenames.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio
from .errors import CapacityError, ValidationFailure, WavFormatError

METHODS = ("p2p", "ddpm", "manual")
MAX_DURATION_SECONDS = 47.0


@dataclass(frozen=True)
class TripletRecord:
    """One dataset row binding WAV paths, instruction, provenance, scores."""

    id: str
    input_wav: str
    output_wav: str
    instruction: str
    method: str
    task: str | None = None  # manual method only
    prompt: dict | None = None  # PromptTriplet.as_dict()
    trial: dict | None = None  # best TrialRecord summary, p2p/ddpm only
    objective: float | None = None
    backends: dict = field(default_factory=dict)
    created_at: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "manual":
            if self.task is None:
                raise ValueError("manual records must carry a task kind")
            if self.trial is not None:
                raise ValueError("manual records carry no trial")
        else:
            if self.task is not None:
                raise ValueError(f"{self.method} records carry no task kind")
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")

    def to_json_line(self) -> str:
        return json.dumps(self.__dict__, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "TripletRecord":
        return cls(**json.loads(line))


def new_record_id() -> str:
    return uuid.uuid4().hex


def content_hash_name(clip: audio.AudioClip) -> str:
    digest = hashlib.sha1(clip.samples.tobytes() + str(clip.sample_rate).encode()).hexdigest()
    return f"{digest}.wav"


def store_clip(clip: audio.AudioClip, audio_dir) -> str:
    """Write the clip under its content hash; returns the path."""
    audio_dir = Path(audio_dir)
    audio_dir.mkdir(parents=True, exist_ok=True)
    path = audio_dir / content_hash_name(clip)
    if not path.exists():
        audio.save_wav(clip, path)
    return str(path)


def _validate_record(record: TripletRecord, base_dir: Path, check_audio: bool) -> None:
    if not check_audio:
        return
    for label, rel in (("input_wav", record.input_wav), ("output_wav", record.output_wav)):
        path = Path(rel)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ValidationFailure("missing audio", f"{label} {path}")


def append_record(manifest_path, record: TripletRecord, check_audio: bool = True) -> None:
    """Validated, lock-guarded, newline-atomic append."""
    manifest_path = Path(manifest_path)
    _validate_record(record, manifest_path.parent, check_audio)
    line = record.to_json_line() + "\n"
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(manifest_path, os.O_CREAT | os.O_RDWR | os.O_APPEND, 0o644)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX)
        # repair a torn final line left by a crashed writer
        size = os.fstat(fd).st_size
        if size > 0:
            os.lseek(fd, size - 1, os.SEEK_SET)
            if os.read(fd, 1) != b"\n":
                os.write(fd, b"\n")
        os.write(fd, line.encode("utf-8"))
    finally:
        fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)


def read_manifest(manifest_path, strict: bool = True) -> list[TripletRecord]:
    """Parse every line; a malformed final line is dropped (torn write)."""
    lines = Path(manifest_path).read_text(encoding="utf-8").splitlines()
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(TripletRecord.from_json_line(line))
        except (json.JSONDecodeError, TypeError, ValueError) as err:
            if i == len(lines) - 1:
                continue  # recoverable torn tail
            if strict:
                raise ValidationFailure("malformed line", f"line {i + 1}: {err}") from err
    return records


@dataclass(frozen=True)
class DatasetSpec:
    total: int
    proportions: dict  # method -> fraction

    def __post_init__(self):
        if self.total < 0:
            raise ValueError("total must be >= 0")
        unknown = set(self.proportions) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if abs(sum(self.proportions.values()) - 1.0) > 1e-9:
            raise ValueError("proportions must sum to 1")

    def counts(self) -> dict:
        """Largest-remainder apportionment so the counts sum to ``total``."""
        raw = {m: self.total * p for m, p in self.proportions.items()}
        counts = {m: int(v) for m, v in raw.items()}
        shortfall = self.total - sum(counts.values())
        remainders = sorted(raw, key=lambda m: (raw[m] - counts[m], m), reverse=True)
        for m in remainders[:shortfall]:
            counts[m] += 1
        return counts


def assemble(
    spec: DatasetSpec,
    method_manifests: dict,
    out_path,
    rng: np.random.Generator,
) -> list[TripletRecord]:
    """Sample records per method without replacement and write one manifest."""
    counts = spec.counts()
    chosen: list[TripletRecord] = []
    for method in METHODS:
        count = counts.get(method, 0)
        if count == 0:
            continue
        pool = [r for r in read_manifest(method_manifests[method]) if r.method == method]
        if len(pool) < count:
            raise CapacityError(
                f"method {method!r} pool has {len(pool)} records, need {count}"
            )
        picks = rng.choice(len(pool), size=count, replace=False)
        chosen.extend(pool[i] for i in picks)
    seen = set()
    for record in chosen:
        if record.id in seen:
            raise ValidationFailure("duplicate id", record.id)
        seen.add(record.id)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        for record in chosen:
            f.write(record.to_json_line() + "\n")
    return chosen


@dataclass
class IntegrityReport:
    total: int = 0
    passed: int = 0
    failures: list = field(default_factory=list)  # (record id, check, detail)

    @property
    def failed(self) -> int:
        return self.total - self.passed

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "passed": self.passed,
            "failed": self.failed,
            "failures": [list(f) for f in self.failures],
        }


def verify(
    manifest_path,
    expected_rate: int = 44100,
    expected_channels: int = 2,
) -> IntegrityReport:
    """Per-record checks: WAV readability, format, instruction, duration cap."""
    manifest_path = Path(manifest_path)
    report = IntegrityReport()
    for record in read_manifest(manifest_path):
        report.total += 1
        problems = []
        if not record.instruction.strip():
            problems.append(("instruction", "empty"))
        for label, rel in (("input_wav", record.input_wav), ("output_wav", record.output_wav)):
            path = Path(rel)
            if not path.is_absolute():
                path = manifest_path.parent / path
            try:
                clip = audio.load_wav(path)
            except (OSError, WavFormatError, ValueError) as err:
                problems.append((label, f"unreadable: {err}"))
                continue
            if clip.sample_rate != expected_rate:
                problems.append((label, f"rate {clip.sample_rate} != {expected_rate}"))
            if clip.channels != expected_channels:
                problems.append((label, f"channels {clip.channels} != {expected_channels}"))
            if label == "output_wav" and clip.duration_seconds > MAX_DURATION_SECONDS:
                problems.append(("duration cap", f"{clip.duration_seconds:.2f}s > 47s"))
        if problems:
            report.failures.extend((record.id, check, detail) for check, detail in problems)
        else:
            report.passed += 1
    return report


def stats(manifest_path) -> dict:
    """Per-method and per-task record counts."""
    records = read_manifest(manifest_path)
    by_method: dict = {}
    by_task: dict = {}
    for record in records:
        by_method[record.method] = by_method.get(record.method, 0) + 1
        if record.task:
            by_task[record.task] = by_task.get(record.task, 0) + 1
    return {"total": len(records), "by_method": by_method, "by_task": by_task}
