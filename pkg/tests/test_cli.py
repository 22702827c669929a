import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from tripletgen import audio, manifest
from tripletgen.cli import main

RATE = 8000  # desk-scale runs store small WAVs


def write_corpus(tmp_path, rows, rate=RATE, channels=1):
    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir(exist_ok=True)
    entries = []
    rng = np.random.default_rng(0)
    for i, (caption, elements, duration) in enumerate(rows):
        clip = audio.white_noise(duration, rate, amplitude=0.3, channels=channels, rng=rng)
        path = corpus_dir / f"clip{i}.wav"
        audio.save_wav(clip, path)
        entries.append({"path": str(path), "caption": caption, "elements": elements})
    csv_path = tmp_path / "corpus.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["path", "caption", "elements"])
        writer.writeheader()
        writer.writerows(entries)
    return csv_path


DEFAULT_ROWS = [
    ("a dog barks", 1, 1.0),
    ("rain falls", 1, 2.0),
    ("a violin plays", 1, 1.5),
    ("a man speaks as birds chirp", 2, 2.5),
    ("waves crash", 1, 3.0),
    ("an engine idles", 1, 2.0),
]


class TestGeneratePrompts:
    def test_empty_corpus_succeeds(self, tmp_path):
        csv_path = tmp_path / "empty.csv"
        csv_path.write_text("path,caption,elements\n")
        out = tmp_path / "prompts.jsonl"
        result = CliRunner().invoke(main, ["generate-prompts", str(csv_path), str(out)])
        assert result.exit_code == 0, result.output
        assert out.read_text() == ""

    def test_element_filter_counts(self, tmp_path):
        rows = [(f"sound {i}", 1 if i < 4 else (2 if i < 7 else 3), 0.2) for i in range(10)]
        csv_path = write_corpus(tmp_path, rows)
        out = tmp_path / "prompts.jsonl"
        result = CliRunner().invoke(main, ["generate-prompts", str(csv_path), str(out)])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output.strip().splitlines()[-1])
        # mock client derives its own counts from captions: all simple -> kept
        assert summary["kept"] + summary["rejected_elements"] == summary["generated"]
        kept_lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert all(t["element_count"] <= 2 for t in kept_lines)

    def test_missing_corpus_is_usage_error(self, tmp_path):
        result = CliRunner().invoke(
            main, ["generate-prompts", str(tmp_path / "gone.csv"), str(tmp_path / "o")]
        )
        assert result.exit_code == 2


def _prompts_file(tmp_path, count=2):
    lines = []
    captions = [
        ("a dog barks", "remove the dog", "a quiet street"),
        ("rain falls", "add thunder", "rain falls with thunder"),
        ("a violin plays", "make it distant", "a violin plays in the distance"),
    ]
    for i in range(count):
        ic, ei, oc = captions[i % len(captions)]
        lines.append(json.dumps({
            "input_caption": ic, "edit_instruction": ei, "output_caption": oc,
            "element_count": 1, "negative_input": None, "negative_output": None,
            "source_dataset": "test",
        }))
    path = tmp_path / "prompts.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


class TestCandidateSearchCommand:
    def test_writes_candidates(self, tmp_path):
        prompts = _prompts_file(tmp_path)
        out = tmp_path / "candidates.jsonl"
        result = CliRunner().invoke(main, [
            "--seed", "5", "candidate-search", str(prompts), str(out),
            "--backend", "synthetic:bowl",
        ])
        assert result.exit_code == 0, result.output
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) >= 1
        for row in rows:
            assert 3.0 <= row["candidate"]["cfg"] <= 9.0


class TestOptimizeCommands:
    def test_p2p_end_to_end(self, tmp_path):
        prompts = _prompts_file(tmp_path, count=1)
        candidates = tmp_path / "candidates.jsonl"
        runner = CliRunner()
        result = runner.invoke(main, [
            "--seed", "1", "candidate-search", str(prompts), str(candidates),
        ])
        assert result.exit_code == 0, result.output
        out_dir = tmp_path / "p2p"
        result = runner.invoke(main, [
            "--seed", "1", "optimize-p2p", str(candidates), str(out_dir),
            "--rate", str(RATE), "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        records = manifest.read_manifest(out_dir / "p2p.jsonl")
        assert len(records) == 1
        assert records[0].method == "p2p"
        assert records[0].trial["trials"] == 10
        clip = audio.load_wav(records[0].output_wav)
        assert clip.sample_rate == RATE

    def test_ddpm_end_to_end(self, tmp_path):
        prompts = _prompts_file(tmp_path, count=2)
        corpus = write_corpus(tmp_path, DEFAULT_ROWS[:2])
        out_dir = tmp_path / "ddpm"
        result = CliRunner().invoke(main, [
            "--seed", "2", "optimize-ddpm", str(prompts), str(corpus), str(out_dir),
            "--backend", "synthetic:zeta-bowl", "--rate", str(RATE), "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        records = manifest.read_manifest(out_dir / "ddpm.jsonl")
        assert len(records) == 2
        assert all(r.method == "ddpm" for r in records)
        assert all(r.trial["trials"] == 7 for r in records)


class TestMakeManual:
    def test_deterministic_task_multiset(self, tmp_path):
        corpus = write_corpus(tmp_path, DEFAULT_ROWS)
        runner = CliRunner()
        outputs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            result = runner.invoke(main, [
                "--seed", "12", "make-manual", str(corpus), str(out_dir),
                "--count", "12", "--rate", str(RATE), "--channels", "1",
            ])
            assert result.exit_code == 0, result.output
            records = manifest.read_manifest(out_dir / "manual.jsonl")
            outputs.append(sorted(r.task for r in records))
        assert outputs[0] == outputs[1]

    def test_constraint_skips_logged(self, tmp_path):
        # two-element clips only: DROP/REPLACE/SWAP cannot find single-element inputs
        rows = [("a and b", 2, 1.0), ("c with d", 2, 1.0)]
        corpus = write_corpus(tmp_path, rows)
        out_dir = tmp_path / "manual"
        result = CliRunner().invoke(main, [
            "--seed", "3", "make-manual", str(corpus), str(out_dir),
            "--count", "30", "--rate", str(RATE), "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output.strip().splitlines()[-1])
        skipped_tasks = {s["task"] for s in summary["skipped"]}
        assert skipped_tasks & {"DROP", "REPLACE", "SWAP"}
        assert all(s["reason"] for s in summary["skipped"])
        selection_skips = [s for s in summary["skipped"] if s["task"] in ("DROP", "REPLACE", "SWAP")]
        assert all("no suitable inputs" in s["reason"] for s in selection_skips)

    def test_records_verify(self, tmp_path):
        corpus = write_corpus(tmp_path, DEFAULT_ROWS)
        out_dir = tmp_path / "manual"
        runner = CliRunner()
        result = runner.invoke(main, [
            "--seed", "4", "make-manual", str(corpus), str(out_dir),
            "--count", "8", "--rate", str(RATE), "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        result = runner.invoke(main, [
            "verify", str(out_dir / "manual.jsonl"),
            "--rate", str(RATE), "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["failed"] == 0


def _build_method_manifest(tmp_path, method, n):
    out = tmp_path / f"{method}.jsonl"
    for i in range(n):
        clip = audio.sine(200 + 10 * i, 0.05, RATE, channels=1)
        wav = manifest.store_clip(clip, tmp_path / "audio")
        manifest.append_record(out, manifest.TripletRecord(
            id=f"{method}-{i}", input_wav=wav, output_wav=wav, instruction="x",
            method=method, task="LOOP" if method == "manual" else None,
            trial=None if method == "manual" else {"objective": 0.0},
        ))
    return out


class TestAssembleVerifyStats:
    def test_assemble_equal_thirds(self, tmp_path):
        paths = {m: _build_method_manifest(tmp_path, m, 50) for m in manifest.METHODS}
        out = tmp_path / "combined.jsonl"
        result = CliRunner().invoke(main, [
            "--seed", "9", "assemble", "--total", "150",
            "--p2p", str(paths["p2p"]), "--ddpm", str(paths["ddpm"]),
            "--manual", str(paths["manual"]), str(out),
        ])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert summary["by_method"] == {"p2p": 50, "ddpm": 50, "manual": 50}

    def test_assemble_pool_exhaustion_exit_code(self, tmp_path):
        paths = {m: _build_method_manifest(tmp_path, m, 2) for m in manifest.METHODS}
        result = CliRunner().invoke(main, [
            "assemble", "--total", "30",
            "--p2p", str(paths["p2p"]), "--ddpm", str(paths["ddpm"]),
            "--manual", str(paths["manual"]), str(tmp_path / "c.jsonl"),
        ])
        assert result.exit_code == 3

    def test_stats(self, tmp_path):
        path = _build_method_manifest(tmp_path, "manual", 4)
        result = CliRunner().invoke(main, ["stats", str(path)])
        assert result.exit_code == 0
        assert json.loads(result.output)["total"] == 4


class TestEvaluate:
    def test_self_reference_is_zero(self, tmp_path):
        corpus = write_corpus(tmp_path, DEFAULT_ROWS)
        out_dir = tmp_path / "manual"
        runner = CliRunner()
        result = runner.invoke(main, [
            "--seed", "6", "make-manual", str(corpus), str(out_dir),
            "--count", "6", "--rate", str(RATE), "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        m = out_dir / "manual.jsonl"
        result = runner.invoke(main, [
            "evaluate", str(m), "--reference-manifest", str(m),
        ])
        assert result.exit_code == 0, result.output
        table = json.loads(result.output)
        assert table["columns"] == ["FD", "LSD", "KL", "IS", "CLAP"]
        assert abs(table["metrics"]["FD"]) < 1e-6
        assert table["metrics"]["LSD"] == 0.0
        assert abs(table["metrics"]["KL"]) < 1e-9

    def test_original_reference_and_signal_block(self, tmp_path):
        corpus = write_corpus(tmp_path, DEFAULT_ROWS)
        out_dir = tmp_path / "manual"
        runner = CliRunner()
        result = runner.invoke(main, [
            "--seed", "7", "make-manual", str(corpus), str(out_dir),
            "--count", "10", "--rate", str(RATE), "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        result = runner.invoke(main, [
            "evaluate", str(out_dir / "manual.jsonl"), "--reference-mode", "original",
            "--out", str(tmp_path / "table.json"),
        ])
        assert result.exit_code == 0, result.output
        table = json.loads((tmp_path / "table.json").read_text())
        if table["deterministic"]:
            assert table["deterministic"]["columns"] == [
                "STFT", "MR-STFT", "MR-MEL", "SI-SDR", "SI-SNR"
            ]


class TestConfigPrecedence:
    def test_config_file_supplies_defaults(self, tmp_path):
        corpus = write_corpus(tmp_path, DEFAULT_ROWS[:3])
        config = tmp_path / "config.yaml"
        config.write_text(f"rate: {RATE}\nchannels: 1\nllm: mock\n")
        out_dir = tmp_path / "manual"
        result = CliRunner().invoke(main, [
            "--config", str(config), "--seed", "8",
            "make-manual", str(corpus), str(out_dir), "--count", "3",
        ])
        assert result.exit_code == 0, result.output
        records = manifest.read_manifest(out_dir / "manual.jsonl")
        if records:
            assert audio.load_wav(records[0].output_wav).sample_rate == RATE

    def test_flag_beats_config(self, tmp_path):
        corpus = write_corpus(tmp_path, DEFAULT_ROWS[:3], rate=16000)
        config = tmp_path / "config.yaml"
        config.write_text("rate: 44100\n")
        out_dir = tmp_path / "manual"
        result = CliRunner().invoke(main, [
            "--config", str(config), "--seed", "8",
            "make-manual", str(corpus), str(out_dir), "--count", "3",
            "--rate", "16000", "--channels", "1",
        ])
        assert result.exit_code == 0, result.output
        records = manifest.read_manifest(out_dir / "manual.jsonl")
        if records:
            assert audio.load_wav(records[0].output_wav).sample_rate == 16000

    def test_env_supplies_seed(self, tmp_path, monkeypatch):
        corpus = write_corpus(tmp_path, DEFAULT_ROWS[:3])
        monkeypatch.setenv("TRIPLETGEN_SEED", "21")
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        runner = CliRunner()
        for out_dir in (out_a, out_b):
            result = runner.invoke(main, [
                "make-manual", str(corpus), str(out_dir), "--count", "3",
                "--rate", str(RATE), "--channels", "1",
            ])
            assert result.exit_code == 0, result.output
        tasks_a = sorted(r.task for r in manifest.read_manifest(out_a / "manual.jsonl"))
        tasks_b = sorted(r.task for r in manifest.read_manifest(out_b / "manual.jsonl"))
        assert tasks_a == tasks_b
