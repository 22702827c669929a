"""Command-line orchestration for every pipeline stage.

Configuration precedence is flags over config file over environment
(``TRIPLETGEN_*``). All randomness derives from one root seed per
invocation, split per stage and per sample, so reruns with the same
arguments reproduce the same dataset. Exit codes: 0 success, 2 usage,
3 data errors, 4 backend errors.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np
import yaml

from . import audio, bayesopt, edits, manifest
from .edits import EditKind
from .embeddings import MockClassifier, MockEmbedder, clap_out, collect_stats, frechet_distance, kl_divergence, inception_score
from .errors import (
    BackendError,
    CandidateSearchExhausted,
    CapacityError,
    ConfigurationError,
    ConstraintError,
    StudyError,
    ValidationFailure,
    WavFormatError,
)
from .objective import DEFAULT_WEIGHTS, ObjectiveWeights
from .prompts import (
    CandidateConfig,
    MockJudgeClient,
    MockLlmClient,
    PromptTriplet,
    candidate_search,
    estimate_element_count,
    filter_by_elements,
    generate_instruction,
    generate_prompt_triplet,
)
from .spectral import StftConfig, lsd, mr_stft_loss, ms_mel_loss, si_sdr, si_snr, stft_loss

EXIT_DATA_ERROR = 3
EXIT_BACKEND_ERROR = 4

DETERMINISTIC_TASKS = tuple(
    k.value for k in EditKind if k not in (EditKind.ADD, EditKind.REPLACE)
)


def pipeline_command(func):
    """Map domain errors onto the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (BackendError, StudyError) as err:
            click.echo(f"backend error: {err}", err=True)
            sys.exit(EXIT_BACKEND_ERROR)
        except (
            ValidationFailure,
            ConstraintError,
            CapacityError,
            ConfigurationError,
            WavFormatError,
            FileNotFoundError,
            ValueError,
        ) as err:
            click.echo(f"data error: {err}", err=True)
            sys.exit(EXIT_DATA_ERROR)

    return wrapper


def _setting(ctx, key, flag_value, default):
    """flags > config file > environment > default."""
    if flag_value is not None:
        return flag_value
    config = (ctx.obj or {}).get("config", {})
    if key in config:
        return config[key]
    env = os.environ.get(f"TRIPLETGEN_{key.upper()}")
    if env is not None:
        return env
    return default


def _stage_rng(ctx, stage: str) -> np.random.Generator:
    root = int(ctx.obj["seed"])
    digest = sum(ord(c) * 31**i for i, c in enumerate(stage)) % (2**31)
    return np.random.default_rng(np.random.SeedSequence([root, digest]))


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    caption: str
    elements: int


def load_corpus(path) -> list[CorpusEntry]:
    """CSV (path, caption[, elements]) or JSON/JSONL corpus manifest."""
    path = Path(path)
    entries = []
    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                entries.append(_corpus_entry(row, path))
    else:
        text = path.read_text(encoding="utf-8")
        rows = (
            [json.loads(line) for line in text.splitlines() if line.strip()]
            if path.suffix.lower() == ".jsonl"
            else json.loads(text)
        )
        for row in rows:
            entries.append(_corpus_entry(row, path))
    if not entries:
        return entries
    return entries


def _corpus_entry(row: dict, base: Path) -> CorpusEntry:
    if "path" not in row or "caption" not in row:
        raise ValidationFailure("corpus row", f"needs path and caption, got {sorted(row)}")
    clip_path = Path(row["path"])
    if not clip_path.is_absolute():
        clip_path = base.parent / clip_path
    elements = row.get("elements")
    if elements in (None, ""):
        elements = estimate_element_count(row["caption"])
    return CorpusEntry(str(clip_path), row["caption"], int(elements))


def _make_llm(spec: str):
    if spec == "mock":
        return MockLlmClient()
    from .remote import RemoteLlmClient

    return RemoteLlmClient(spec)


def _make_backend(spec: str):
    if spec.startswith("synthetic:"):
        return bayesopt.make_synthetic_backend(spec.split(":", 1)[1])
    if spec.startswith(("http://", "https://")):
        from .remote import RemoteGeneratorBackend

        return RemoteGeneratorBackend(spec)
    raise ConfigurationError(f"unknown backend spec {spec!r}")


def _make_embedder(spec: str):
    if spec == "mock":
        return MockEmbedder()
    if spec.startswith(("http://", "https://")):
        from .remote import RemoteEmbedder

        base, _, dim = spec.partition("#")
        return RemoteEmbedder(base, int(dim or 512))
    raise ConfigurationError(f"unknown embedder spec {spec!r}")


def _make_judge(spec: str, embedder):
    if spec == "mock":
        return MockJudgeClient(embedder)
    from .remote import RemoteJudgeClient

    return RemoteJudgeClient(spec)


def _normalize_clip(clip: audio.AudioClip, rate: int, channels: int) -> audio.AudioClip:
    return audio.to_channels(audio.resample(clip, rate), channels)


def _store_relative(clip: audio.AudioClip, out_dir: Path) -> str:
    """Store under <out_dir>/audio and return the manifest-relative path."""
    stored = manifest.store_clip(clip, Path(out_dir) / "audio")
    return os.path.relpath(stored, out_dir)


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML config file supplying flag defaults.")
@click.option("--seed", type=int, default=None, help="Root seed for every stage.")
@click.pass_context
def main(ctx, config, seed):
    """Synthesize, score, and curate audio-editing triplet datasets."""
    loaded = {}
    if config:
        loaded = yaml.safe_load(Path(config).read_text()) or {}
    ctx.obj = {"config": loaded}
    ctx.obj["seed"] = int(_setting(ctx, "seed", seed, 0))


@main.command("generate-prompts")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--llm", default=None, help="'mock' or a service URL.")
@click.pass_context
@pipeline_command
def cmd_generate_prompts(ctx, corpus, out, llm):
    """Generate prompt triplets for a caption corpus and filter by elements."""
    client = _make_llm(_setting(ctx, "llm", llm, "mock"))
    entries = load_corpus(corpus)
    triplets, failures = [], []
    for entry in entries:
        try:
            triplets.append(
                generate_prompt_triplet(entry.caption, client, source_dataset=entry.path)
            )
        except BackendError as err:
            failures.append((entry.caption, str(err)))
    kept, rejected = filter_by_elements(triplets)
    with open(out, "w", encoding="utf-8") as f:
        for triplet in kept:
            f.write(json.dumps(triplet.as_dict(), sort_keys=True) + "\n")
    summary = {
        "corpus": len(entries),
        "generated": len(triplets),
        "kept": len(kept),
        "rejected_elements": len(rejected),
        "client_failures": failures,
    }
    click.echo(json.dumps(summary))
    if entries and not triplets:
        sys.exit(EXIT_BACKEND_ERROR)


@main.command("candidate-search")
@click.argument("prompts", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--backend", default=None, help="'synthetic:<profile>' or a service URL.")
@click.option("--judge", default=None, help="'mock' or a service URL.")
@click.option("--embedder", default=None, help="'mock' or a service URL.")
@click.pass_context
@pipeline_command
def cmd_candidate_search(ctx, prompts, out, backend, judge, embedder):
    """Find seed/CFG configurations for prompt triplets."""
    generator = _make_backend(_setting(ctx, "backend", backend, "synthetic:bowl"))
    emb = _make_embedder(_setting(ctx, "embedder", embedder, "mock"))
    judge_client = _make_judge(_setting(ctx, "judge", judge, "mock"), emb)
    rng = _stage_rng(ctx, "candidate-search")
    kept = discarded = 0
    with open(out, "w", encoding="utf-8") as f:
        for line in Path(prompts).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            triplet = PromptTriplet.from_dict(json.loads(line))
            try:
                config = candidate_search(triplet, generator, judge_client, emb, rng)
            except CandidateSearchExhausted:
                discarded += 1
                continue
            f.write(json.dumps({
                "prompt": triplet.as_dict(),
                "candidate": {"seed": config.seed, "cfg": config.cfg,
                              "judge_scores": list(config.judge_scores),
                              "mean_clap": config.mean_clap},
            }, sort_keys=True) + "\n")
            kept += 1
    click.echo(json.dumps({"kept": kept, "discarded": discarded}))


def _weights_from(ctx) -> ObjectiveWeights:
    spec = _setting(ctx, "weights", None, None)
    if spec is None:
        return DEFAULT_WEIGHTS
    if isinstance(spec, str):
        parts = [float(x) for x in spec.split(",")]
    else:
        parts = [float(x) for x in spec]
    return ObjectiveWeights(*parts)


@main.command("optimize-p2p")
@click.argument("candidates", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--backend", default=None)
@click.option("--embedder", default=None)
@click.option("--rate", type=int, default=None, help="Stored WAV sample rate.")
@click.option("--channels", type=int, default=None)
@click.option("--limit", type=int, default=None, help="Process at most N prompts.")
@click.pass_context
@pipeline_command
def cmd_optimize_p2p(ctx, candidates, out_dir, backend, embedder, rate, channels, limit):
    """Run the injection-parameter search for each candidate prompt."""
    generator = _make_backend(_setting(ctx, "backend", backend, "synthetic:bowl"))
    emb = _make_embedder(_setting(ctx, "embedder", embedder, "mock"))
    rate = int(_setting(ctx, "rate", rate, 44100))
    channels = int(_setting(ctx, "channels", channels, 2))
    out_dir = Path(out_dir)
    manifest_path = out_dir / "p2p.jsonl"
    rows = [json.loads(line) for line in Path(candidates).read_text().splitlines() if line.strip()]
    if limit:
        rows = rows[:limit]
    written = failed = 0
    weights = _weights_from(ctx)
    for i, row in enumerate(rows):
        triplet = PromptTriplet.from_dict(row["prompt"])
        candidate = CandidateConfig(
            seed=row["candidate"]["seed"], cfg=row["candidate"]["cfg"],
            judge_scores=tuple(row["candidate"]["judge_scores"]),
            mean_clap=row["candidate"]["mean_clap"],
        )
        config = bayesopt.StudyConfig(
            n_trials=10, search_steps=50, final_steps=100,
            seed=ctx.obj["seed"] * 100003 + i, weights=weights,
        )
        try:
            best, records, pair = bayesopt.run_p2p_study(triplet, candidate, generator, emb, config)
        except StudyError as err:
            failed += 1
            click.echo(f"prompt {i}: study failed: {err}", err=True)
            continue
        in_clip = _normalize_clip(pair.input_audio, rate, channels)
        out_clip = _normalize_clip(pair.output_audio, rate, channels)
        record = manifest.TripletRecord(
            id=manifest.new_record_id(),
            input_wav=_store_relative(in_clip, out_dir),
            output_wav=_store_relative(out_clip, out_dir),
            instruction=triplet.edit_instruction,
            method="p2p",
            prompt=triplet.as_dict(),
            trial={"params": best.params, "objective": best.objective,
                   "trials": len(records), "seed": best.seed},
            objective=best.objective,
            backends={"generator": getattr(generator, "identity", "synthetic"),
                      "embedder": getattr(emb, "identity", "mock")},
            created_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        )
        manifest.append_record(manifest_path, record)
        written += 1
    click.echo(json.dumps({"written": written, "failed": failed,
                           "manifest": str(manifest_path)}))


@main.command("optimize-ddpm")
@click.argument("prompts", type=click.Path(exists=True, dir_okay=False))
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--backend", default=None)
@click.option("--embedder", default=None)
@click.option("--rate", type=int, default=None)
@click.option("--channels", type=int, default=None)
@click.option("--limit", type=int, default=None)
@click.pass_context
@pipeline_command
def cmd_optimize_ddpm(ctx, prompts, corpus, out_dir, backend, embedder, rate, channels, limit):
    """Run the inversion-parameter search over real input clips."""
    generator = _make_backend(_setting(ctx, "backend", backend, "synthetic:zeta-bowl"))
    emb = _make_embedder(_setting(ctx, "embedder", embedder, "mock"))
    rate = int(_setting(ctx, "rate", rate, 44100))
    channels = int(_setting(ctx, "channels", channels, 2))
    out_dir = Path(out_dir)
    manifest_path = out_dir / "ddpm.jsonl"
    triplets = [PromptTriplet.from_dict(json.loads(line))
                for line in Path(prompts).read_text().splitlines() if line.strip()]
    entries = load_corpus(corpus)
    pairs = list(zip(triplets, entries))
    if limit:
        pairs = pairs[:limit]
    written = failed = 0
    weights = _weights_from(ctx)
    for i, (triplet, entry) in enumerate(pairs):
        in_clip = audio.load_wav(entry.path)
        config = bayesopt.StudyConfig(
            n_trials=7, search_steps=70, final_steps=None,
            seed=ctx.obj["seed"] * 100003 + i, weights=weights,
        )
        try:
            best, records, out_audio = bayesopt.run_zeta_study(triplet, in_clip, generator, emb, config)
        except StudyError as err:
            failed += 1
            click.echo(f"prompt {i}: study failed: {err}", err=True)
            continue
        record = manifest.TripletRecord(
            id=manifest.new_record_id(),
            input_wav=_store_relative(_normalize_clip(in_clip, rate, channels), out_dir),
            output_wav=_store_relative(_normalize_clip(out_audio, rate, channels), out_dir),
            instruction=triplet.edit_instruction,
            method="ddpm",
            prompt=triplet.as_dict(),
            trial={"params": best.params, "objective": best.objective,
                   "trials": len(records), "seed": best.seed},
            objective=best.objective,
            backends={"generator": getattr(generator, "identity", "synthetic"),
                      "embedder": getattr(emb, "identity", "mock")},
            created_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        )
        manifest.append_record(manifest_path, record)
        written += 1
    click.echo(json.dumps({"written": written, "failed": failed,
                           "manifest": str(manifest_path)}))


# --------------------------------------------------------------------------
# Manual edits.


def _pick(rng, items):
    return items[int(rng.integers(0, len(items)))]


def select_inputs(kind: EditKind, corpus: list[CorpusEntry], clips: dict,
                  rng: np.random.Generator, max_tries: int = 30):
    """Draw corpus entries satisfying the task's input constraints."""
    single = [e for e in corpus if e.elements == 1]
    for _ in range(max_tries):
        if kind == EditKind.ADD:
            base, target = _pick(rng, corpus), _pick(rng, corpus)
            if clips[target.path].duration_seconds <= clips[base.path].duration_seconds:
                return [base, target]
        elif kind == EditKind.REPLACE:
            if len(single) < 3:
                break
            base, target, repl = (_pick(rng, single) for _ in range(3))
            if (clips[target.path].duration_seconds <= clips[base.path].duration_seconds
                    and clips[repl.path].duration_seconds <= clips[base.path].duration_seconds):
                return [base, target, repl]
        elif kind == EditKind.DROP:
            if not single:
                break
            base, target = _pick(rng, corpus), _pick(rng, single)
            if clips[target.path].duration_seconds <= clips[base.path].duration_seconds:
                return [base, target]
        elif kind == EditKind.SWAP:
            if len(single) < 2:
                break
            first, second = _pick(rng, single), _pick(rng, single)
            total = clips[first.path].duration_seconds + clips[second.path].duration_seconds
            if total <= edits.MAX_OUTPUT_SECONDS:
                return [first, second]
        else:
            entry = _pick(rng, corpus)
            if clips[entry.path].duration_seconds <= edits.MAX_OUTPUT_SECONDS:
                return [entry]
    raise ConstraintError([(kind.value, "no suitable inputs in corpus", None)])


def build_manual_triplet(kind, entries, clips, llm, rng):
    """One end-to-end manual triplet: edit pair plus generated instruction."""
    selected = [clips[e.path] for e in entries]
    params = edits.sample_params(kind, selected, rng)
    validated = edits.validate_constraints(
        kind, selected, params, [e.elements for e in entries]
    )
    pair = edits.apply_edit(validated, rng, captions=tuple(e.caption for e in entries))
    instruction, trace = generate_instruction(
        kind, params, [e.caption for e in entries], llm, rng
    )
    return pair, instruction, trace


@main.command("make-manual")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--count", type=int, required=True)
@click.option("--llm", default=None)
@click.option("--rate", type=int, default=None)
@click.option("--channels", type=int, default=None)
@click.pass_context
@pipeline_command
def cmd_make_manual(ctx, corpus, out_dir, count, llm, rate, channels):
    """Create manual-edit triplets end to end."""
    client = _make_llm(_setting(ctx, "llm", llm, "mock"))
    rate = int(_setting(ctx, "rate", rate, 44100))
    channels = int(_setting(ctx, "channels", channels, 2))
    entries = load_corpus(corpus)
    if not entries:
        raise ValidationFailure("corpus", "no entries")
    clips = {
        e.path: _normalize_clip(audio.load_wav(e.path), rate, channels) for e in entries
    }
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manual.jsonl"
    root = np.random.SeedSequence([int(ctx.obj["seed"]), 0x6D616E75])
    created, skipped = 0, []
    started = time.time()
    for index, child in enumerate(root.spawn(count)):
        rng = np.random.default_rng(child)
        kind = edits.sample_task(rng)
        try:
            selected = select_inputs(kind, entries, clips, rng)
            pair, instruction, trace = build_manual_triplet(kind, selected, clips, client, rng)
        except ConstraintError as err:
            skipped.append({"index": index, "task": kind.value, "reason": str(err)})
            continue
        record = manifest.TripletRecord(
            id=manifest.new_record_id(),
            input_wav=_store_relative(pair.input_audio, out_dir),
            output_wav=_store_relative(pair.output_audio, out_dir),
            instruction=instruction,
            method="manual",
            task=kind.value,
            prompt={
                "captions": [e.caption for e in selected],
                "params": pair.params.describe(),
                "stages": trace.as_dict(),
            },
            backends={"llm": client.model},
            created_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        )
        manifest.append_record(manifest_path, record)
        created += 1
    elapsed = time.time() - started
    click.echo(json.dumps({
        "created": created,
        "skipped": skipped,
        "seconds_per_sample": elapsed / max(1, count),
        "manifest": str(manifest_path),
    }))


@main.command("assemble")
@click.option("--total", type=int, required=True)
@click.option("--p2p", "p2p_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--ddpm", "ddpm_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manual", "manual_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--proportions", default="1/3,1/3,1/3",
              help="Comma-separated p2p,ddpm,manual fractions.")
@click.argument("out", type=click.Path(dir_okay=False))
@click.pass_context
@pipeline_command
def cmd_assemble(ctx, total, p2p_path, ddpm_path, manual_path, proportions, out):
    """Mix per-method manifests into one dataset manifest."""
    from fractions import Fraction

    fractions = [float(Fraction(part.strip())) for part in proportions.split(",")]
    if len(fractions) != 3:
        raise ValidationFailure("proportions", "need three comma-separated fractions")
    spec = manifest.DatasetSpec(total, dict(zip(manifest.METHODS, fractions)))
    rng = _stage_rng(ctx, "assemble")
    chosen = manifest.assemble(
        spec, {"p2p": p2p_path, "ddpm": ddpm_path, "manual": manual_path}, out, rng
    )
    counts = {}
    for record in chosen:
        counts[record.method] = counts.get(record.method, 0) + 1
    click.echo(json.dumps({"written": len(chosen), "by_method": counts, "out": out}))


@main.command("verify")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--rate", type=int, default=44100)
@click.option("--channels", type=int, default=2)
@pipeline_command
def cmd_verify(manifest_path, rate, channels):
    """Integrity-check every record of a manifest."""
    report = manifest.verify(manifest_path, expected_rate=rate, expected_channels=channels)
    click.echo(json.dumps(report.as_dict()))
    if report.failed:
        sys.exit(EXIT_DATA_ERROR)


@main.command("stats")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@pipeline_command
def cmd_stats(manifest_path):
    """Per-method and per-task record counts."""
    click.echo(json.dumps(manifest.stats(manifest_path)))


# --------------------------------------------------------------------------
# Evaluation.


def _reference_clip(mode, record, reference_records, generator, rate, channels, base_dir):
    if reference_records is not None:
        ref = reference_records.get(record.id)
        if ref is None:
            return None
        return _resolve_clip(ref.output_wav, base_dir)
    if mode == "original":
        return _resolve_clip(record.input_wav, base_dir)
    caption = (record.prompt or {}).get("output_caption") or record.instruction
    clip = generator.generate(caption, None, seed=0, cfg=5.0, steps=50)
    return _normalize_clip(clip, rate, channels)


def _resolve_clip(path, base_dir):
    p = Path(path)
    if not p.is_absolute():
        p = base_dir / p
    return audio.load_wav(p)


def evaluate_manifest(
    manifest_path,
    reference_mode: str = "original",
    reference_manifest=None,
    generator=None,
    embedder=None,
    stft_config: StftConfig | None = None,
) -> dict:
    """Dual-reference metric table plus signal metrics for deterministic tasks."""
    manifest_path = Path(manifest_path)
    records = manifest.read_manifest(manifest_path)
    embedder = embedder or MockEmbedder()
    classifier = MockClassifier()
    reference_records = None
    if reference_manifest is not None:
        reference_records = {
            r.id: r for r in manifest.read_manifest(Path(reference_manifest))
        }

    outputs, references, pairs = [], [], []
    clap_values = []
    signal_rows = {}
    for record in records:
        out_clip = _resolve_clip(record.output_wav, manifest_path.parent)
        ref_clip = _reference_clip(
            reference_mode, record, reference_records, generator,
            out_clip.sample_rate, out_clip.channels, manifest_path.parent,
        )
        if ref_clip is None:
            continue
        outputs.append(out_clip)
        references.append(ref_clip)
        pairs.append(record)
        caption = (record.prompt or {}).get("output_caption")
        if caption:
            clap_values.append(clap_out(out_clip, caption, embedder))
        if record.task in DETERMINISTIC_TASKS:
            row = {
                "STFT": stft_loss(ref_clip, out_clip, stft_config).value,
                "MR-STFT": mr_stft_loss(ref_clip, out_clip, stft_config).value,
                "MR-MEL": ms_mel_loss(ref_clip, out_clip, stft_config).value,
                "SI-SDR": si_sdr(ref_clip, out_clip).value,
                "SI-SNR": si_snr(ref_clip, out_clip).value,
            }
            signal_rows.setdefault(record.task, []).append(row)

    metrics: dict = {}
    if len(outputs) >= 2:
        metrics["FD"] = frechet_distance(
            collect_stats(references, embedder), collect_stats(outputs, embedder)
        )
    else:
        metrics["FD"] = None
    metrics["LSD"] = (
        float(np.mean([lsd(r, o, stft_config).value for r, o in zip(references, outputs)]))
        if outputs else None
    )
    metrics["KL"] = (
        kl_divergence([
            (classifier.class_probabilities(r), classifier.class_probabilities(o))
            for r, o in zip(references, outputs)
        ]) if outputs else None
    )
    metrics["IS"] = (
        inception_score([classifier.class_probabilities(o) for o in outputs])
        if len(outputs) >= 2 else None
    )
    metrics["CLAP"] = float(np.mean(clap_values)) if clap_values else None

    deterministic = {}
    all_rows = [row for rows in signal_rows.values() for row in rows]
    if all_rows:
        columns = ["STFT", "MR-STFT", "MR-MEL", "SI-SDR", "SI-SNR"]
        deterministic = {
            "columns": columns,
            "mean": {c: float(np.mean([r[c] for r in all_rows])) for c in columns},
            "per_task": {
                task: {c: float(np.mean([r[c] for r in rows])) for c in columns}
                for task, rows in sorted(signal_rows.items())
            },
        }
    return {
        "reference": reference_mode if reference_manifest is None else "manifest",
        "records": len(pairs),
        "columns": ["FD", "LSD", "KL", "IS", "CLAP"],
        "metrics": metrics,
        "deterministic": deterministic,
    }


@main.command("evaluate")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--reference-mode", type=click.Choice(["original", "regenerated"]),
              default="original")
@click.option("--reference-manifest", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--backend", default=None, help="Generator for regenerated references.")
@click.option("--embedder", default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
@pipeline_command
def cmd_evaluate(ctx, manifest_path, reference_mode, reference_manifest, backend, embedder, out):
    """Compute the metric table for a dataset manifest."""
    generator = None
    if reference_mode == "regenerated" and reference_manifest is None:
        generator = _make_backend(_setting(ctx, "backend", backend, "synthetic:bowl"))
    emb = _make_embedder(_setting(ctx, "embedder", embedder, "mock"))
    table = evaluate_manifest(
        manifest_path,
        reference_mode=reference_mode,
        reference_manifest=reference_manifest,
        generator=generator,
        embedder=emb,
    )
    text = json.dumps(table, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command("elo-serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
@click.option("--storage", type=click.Path(file_okay=False), default=None)
@pipeline_command
def cmd_elo_serve(host, port, storage):
    """Serve the listening-study API."""
    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(storage_dir=storage), host=host, port=port)


if __name__ == "__main__":
    main()
