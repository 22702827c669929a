import json
import multiprocessing
import os

import numpy as np
import pytest

from tripletgen import audio, manifest
from tripletgen.errors import CapacityError, ValidationFailure
from tripletgen.manifest import DatasetSpec, TripletRecord, append_record, read_manifest


def make_record(tmp_path, rid="r1", method="manual", duration=0.2, rate=44100, channels=2):
    clip = audio.sine(440, duration, rate, channels=channels)
    in_path = manifest.store_clip(clip, tmp_path / "audio")
    out_path = manifest.store_clip(audio.sine(550, duration, rate, channels=channels), tmp_path / "audio")
    return TripletRecord(
        id=rid,
        input_wav=in_path,
        output_wav=out_path,
        instruction="raise the pitch",
        method=method,
        task="PITCH" if method == "manual" else None,
        trial=None if method == "manual" else {"objective": 1.0},
        created_at="2026-01-01T00:00:00Z",
    )


class TestRecord:
    def test_method_field_coupling(self, tmp_path):
        with pytest.raises(ValueError):
            TripletRecord("x", "a.wav", "b.wav", "do it", "manual")  # no task
        with pytest.raises(ValueError):
            TripletRecord("x", "a.wav", "b.wav", "do it", "p2p", task="PITCH")
        with pytest.raises(ValueError):
            TripletRecord("x", "a.wav", "b.wav", "do it", "teleport")
        with pytest.raises(ValueError):
            TripletRecord("x", "a.wav", "b.wav", "   ", "p2p")

    def test_json_roundtrip(self, tmp_path):
        record = make_record(tmp_path)
        again = TripletRecord.from_json_line(record.to_json_line())
        assert again == record


class TestAppend:
    def test_append_readback(self, tmp_path):
        record = make_record(tmp_path)
        path = tmp_path / "m.jsonl"
        append_record(path, record)
        assert read_manifest(path) == [record]

    def test_missing_wav_rejected(self, tmp_path):
        record = make_record(tmp_path)
        record = TripletRecord(**{**record.__dict__, "input_wav": str(tmp_path / "gone.wav")})
        with pytest.raises(ValidationFailure):
            append_record(tmp_path / "m.jsonl", record)

    def test_torn_tail_repaired_on_append(self, tmp_path):
        record = make_record(tmp_path)
        path = tmp_path / "m.jsonl"
        append_record(path, record)
        with open(path, "ab") as f:
            f.write(b'{"partial": ')  # simulated crash mid-write
        second = make_record(tmp_path, rid="r2")
        append_record(path, second)
        records = read_manifest(path, strict=False)
        assert [r.id for r in records] == ["r1", "r2"]

    def test_torn_final_line_dropped_on_read(self, tmp_path):
        record = make_record(tmp_path)
        path = tmp_path / "m.jsonl"
        append_record(path, record)
        with open(path, "ab") as f:
            f.write(b'{"partial": ')
        assert [r.id for r in read_manifest(path)] == ["r1"]

    def test_malformed_middle_line_is_error(self, tmp_path):
        path = tmp_path / "m.jsonl"
        record = make_record(tmp_path)
        path.write_text("not json\n" + record.to_json_line() + "\n")
        with pytest.raises(ValidationFailure):
            read_manifest(path)


def _writer(args):
    path, audio_dir, worker, count = args
    for i in range(count):
        clip = audio.sine(200 + worker, 0.05, 8000)
        wav = manifest.store_clip(clip, audio_dir)
        record = TripletRecord(
            id=f"w{worker}-{i}",
            input_wav=wav,
            output_wav=wav,
            instruction="noop",
            method="manual",
            task="LOOP",
        )
        append_record(path, record)
    return worker


class TestConcurrentWriters:
    def test_two_processes_thousand_each(self, tmp_path):
        path = tmp_path / "m.jsonl"
        audio_dir = tmp_path / "audio"
        with multiprocessing.Pool(2) as pool:
            pool.map(_writer, [(str(path), str(audio_dir), w, 1000) for w in (0, 1)])
        records = read_manifest(path)
        assert len(records) == 2000
        ids = {r.id for r in records}
        assert len(ids) == 2000


class TestDatasetSpec:
    def test_proportions_must_sum(self):
        with pytest.raises(ValueError):
            DatasetSpec(10, {"p2p": 0.5, "ddpm": 0.2})

    def test_counts_equal_thirds(self):
        spec = DatasetSpec(150, {"p2p": 1 / 3, "ddpm": 1 / 3, "manual": 1 / 3})
        assert spec.counts() == {"p2p": 50, "ddpm": 50, "manual": 50}

    def test_counts_sum_always(self):
        spec = DatasetSpec(10, {"p2p": 0.24, "ddpm": 0.38, "manual": 0.38})
        counts = spec.counts()
        assert sum(counts.values()) == 10


def _build_pool(tmp_path, method, n):
    path = tmp_path / f"{method}.jsonl"
    for i in range(n):
        clip = audio.sine(300 + i, 0.05, 8000)
        wav = manifest.store_clip(clip, tmp_path / "audio")
        record = TripletRecord(
            id=f"{method}-{i}",
            input_wav=wav,
            output_wav=wav,
            instruction="x",
            method=method,
            task="LOOP" if method == "manual" else None,
            trial=None if method == "manual" else {"objective": 0.0},
        )
        append_record(path, record)
    return path


class TestAssemble:
    def test_one_per_method(self, tmp_path):
        manifests = {m: _build_pool(tmp_path, m, 1) for m in manifest.METHODS}
        spec = DatasetSpec(3, {m: 1 / 3 for m in manifest.METHODS})
        out = manifest.assemble(spec, manifests, tmp_path / "combined.jsonl", np.random.default_rng(0))
        assert len(out) == 3
        assert {r.method for r in out} == set(manifest.METHODS)

    def test_equal_thirds_exact(self, tmp_path):
        manifests = {m: _build_pool(tmp_path, m, 50) for m in manifest.METHODS}
        spec = DatasetSpec(150, {m: 1 / 3 for m in manifest.METHODS})
        out = manifest.assemble(spec, manifests, tmp_path / "combined.jsonl", np.random.default_rng(1))
        by_method = {}
        for r in out:
            by_method[r.method] = by_method.get(r.method, 0) + 1
        assert by_method == {"p2p": 50, "ddpm": 50, "manual": 50}

    def test_capacity_error(self, tmp_path):
        manifests = {m: _build_pool(tmp_path, m, 5) for m in manifest.METHODS}
        spec = DatasetSpec(30, {"p2p": 0.0, "ddpm": 0.0, "manual": 1.0})
        with pytest.raises(CapacityError) as err:
            manifest.assemble(spec, manifests, tmp_path / "c.jsonl", np.random.default_rng(0))
        assert "manual" in str(err.value)

    def test_replay_determinism(self, tmp_path):
        manifests = {m: _build_pool(tmp_path, m, 20) for m in manifest.METHODS}
        spec = DatasetSpec(30, {m: 1 / 3 for m in manifest.METHODS})
        ids1 = [r.id for r in manifest.assemble(spec, manifests, tmp_path / "a.jsonl", np.random.default_rng(7))]
        ids2 = [r.id for r in manifest.assemble(spec, manifests, tmp_path / "b.jsonl", np.random.default_rng(7))]
        assert ids1 == ids2
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


class TestVerify:
    def test_fresh_manifest_clean(self, tmp_path):
        path = tmp_path / "m.jsonl"
        for i in range(3):
            append_record(path, make_record(tmp_path, rid=f"r{i}"))
        report = manifest.verify(path, expected_rate=44100, expected_channels=2)
        assert report.total == 3
        assert report.passed == 3
        assert report.failures == []

    def test_wrong_rate_flagged(self, tmp_path):
        path = tmp_path / "m.jsonl"
        append_record(path, make_record(tmp_path, rate=8000))
        report = manifest.verify(path, expected_rate=44100)
        assert report.passed == 0
        assert any("rate" in detail for _, _, detail in report.failures)

    def test_counts_sum_to_total(self, tmp_path):
        path = tmp_path / "m.jsonl"
        append_record(path, make_record(tmp_path, rid="ok"))
        append_record(path, make_record(tmp_path, rid="bad", rate=8000))
        report = manifest.verify(path, expected_rate=44100)
        assert report.passed + len({rid for rid, _, _ in report.failures}) == report.total

    def test_duration_cap_flagged(self, tmp_path):
        # 48 s output at a tiny rate keeps the file small
        clip = audio.silence(48.0, 1000, channels=2)
        long_wav = manifest.store_clip(clip, tmp_path / "audio")
        record = TripletRecord(
            id="long", input_wav=long_wav, output_wav=long_wav,
            instruction="x", method="manual", task="LOOP",
        )
        path = tmp_path / "m.jsonl"
        append_record(path, record)
        report = manifest.verify(path, expected_rate=1000)
        assert any(check == "duration cap" for _, check, _ in report.failures)


def test_stats(tmp_path):
    path = tmp_path / "m.jsonl"
    append_record(path, make_record(tmp_path, rid="a"))
    append_record(path, make_record(tmp_path, rid="b"))
    summary = manifest.stats(path)
    assert summary["total"] == 2
    assert summary["by_method"] == {"manual": 2}
    assert summary["by_task"] == {"PITCH": 2}
