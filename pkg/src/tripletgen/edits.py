"""The twelve deterministic edit tasks.

Each task builds an (input_audio, output_audio) training pair either by
construction (mixing, reordering, looping) or by degradation (the pair
teaches the model to invert the degradation: inpainting, super-resolution,
denoising). Every edit validates its constraints and is deterministic given
its inputs, parameters, and random generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .audio import AudioClip, concat, mix, resample
from .errors import ConstraintError

MAX_OUTPUT_SECONDS = 47.0

PITCH_RANGE = (-12.0, 12.0)
SPEED_RANGE = (1.0 / 3.0, 3.0)
BLANK_RANGE = (0.0, 95.0)
LOW_PASS_HZ = 8000.0
HIGH_PASS_HZ = 1000.0
FILTER_ORDER = 8

POSITION_KEYWORDS = ("start", "middle", "end")


class EditKind(str, Enum):
    ADD = "ADD"
    REPLACE = "REPLACE"
    DROP = "DROP"
    SWAP = "SWAP"
    LOOP = "LOOP"
    PITCH = "PITCH"
    SPEED = "SPEED"
    LOW_PASS = "LOW_PASS"
    HIGH_PASS = "HIGH_PASS"
    INPAINT = "INPAINT"
    SUPER_RES = "SUPER_RES"
    DENOISE = "DENOISE"


INPUT_ARITY = {
    EditKind.ADD: 2,
    EditKind.REPLACE: 3,
    EditKind.DROP: 2,
    EditKind.SWAP: 2,
    EditKind.LOOP: 1,
    EditKind.PITCH: 1,
    EditKind.SPEED: 1,
    EditKind.LOW_PASS: 1,
    EditKind.HIGH_PASS: 1,
    EditKind.INPAINT: 1,
    EditKind.SUPER_RES: 1,
    EditKind.DENOISE: 1,
}

PARAMETRIC_KINDS = (EditKind.ADD, EditKind.LOOP, EditKind.PITCH, EditKind.SPEED, EditKind.INPAINT)


@dataclass(frozen=True)
class EditParams:
    """One optional knob per task; unused fields stay None."""

    position: float | str | None = None  # ADD: seconds or start/middle/end
    loop_count: int | None = None  # LOOP
    semitones: float | None = None  # PITCH
    speed: float | None = None  # SPEED
    blank_percent: float | None = None  # INPAINT

    def describe(self) -> str:
        parts = [f"{k}={v}" for k, v in self.__dict__.items() if v is not None]
        return ", ".join(parts) if parts else "none"


@dataclass(frozen=True)
class EditPair:
    input_audio: AudioClip
    output_audio: AudioClip
    task: EditKind | None
    params: EditParams = field(default_factory=EditParams)
    source_captions: tuple[str, ...] = ()

    def __post_init__(self):
        if self.input_audio.sample_rate != self.output_audio.sample_rate:
            raise ValueError("pair must share one sample rate")
        if self.input_audio.channels != self.output_audio.channels:
            raise ValueError("pair must share one channel count")
        if self.output_audio.duration_seconds > MAX_OUTPUT_SECONDS + 1e-9:
            raise ValueError(
                f"output exceeds {MAX_OUTPUT_SECONDS} s: {self.output_audio.duration_seconds:.2f}"
            )


def sample_task(rng: np.random.Generator) -> EditKind:
    """Draw one of the twelve kinds with equal probability."""
    kinds = list(EditKind)
    return kinds[int(rng.integers(0, len(kinds)))]


def resolve_position(position: float | str, base_duration: float, overlay_duration: float) -> float:
    """Map a position keyword or timestamp to an offset in seconds."""
    slack = base_duration - overlay_duration
    if isinstance(position, str):
        if position == "start":
            return 0.0
        if position == "middle":
            return slack / 2.0
        if position == "end":
            return slack
        raise ConstraintError([("ADD", "t in {start, middle, end} or [0, L - l]", position)])
    if not 0.0 <= position <= slack + 1e-9:
        raise ConstraintError([("ADD", "t in [0, L - l]", position)])
    return min(float(position), slack)


def sample_params(kind: EditKind, clips: list[AudioClip], rng: np.random.Generator) -> EditParams:
    """Draw the task parameter from its configured distribution.

    Length-coupled bounds (loop count, minimum speed) are derived from the
    first clip so the 47 s output cap always holds.
    """
    if kind == EditKind.ADD:
        base, target = clips[0], clips[1]
        if rng.random() < 0.5:
            return EditParams(position=POSITION_KEYWORDS[int(rng.integers(0, 3))])
        slack = max(0.0, base.duration_seconds - target.duration_seconds)
        return EditParams(position=float(rng.uniform(0.0, slack)))
    if kind == EditKind.LOOP:
        max_loops = int(MAX_OUTPUT_SECONDS // clips[0].duration_seconds)
        if max_loops < 1:
            raise ConstraintError([("LOOP", "len(result) <= 47 s", clips[0].duration_seconds)])
        return EditParams(loop_count=int(rng.integers(1, max_loops + 1)))
    if kind == EditKind.PITCH:
        return EditParams(semitones=float(rng.uniform(*PITCH_RANGE)))
    if kind == EditKind.SPEED:
        lo = max(SPEED_RANGE[0], clips[0].duration_seconds / MAX_OUTPUT_SECONDS)
        if lo > SPEED_RANGE[1]:
            raise ConstraintError([("SPEED", "len(result) <= 47 s", clips[0].duration_seconds)])
        return EditParams(speed=float(np.exp(rng.uniform(np.log(lo), np.log(SPEED_RANGE[1])))))
    if kind == EditKind.INPAINT:
        return EditParams(blank_percent=float(rng.uniform(*BLANK_RANGE)))
    return EditParams()


# --------------------------------------------------------------------------
# Phase vocoder: time stretch preserving pitch, plus resampling for pitch
# shifts. rate > 1 shortens the signal.


def _stft(x: np.ndarray, fft_size: int, hop: int, window: np.ndarray) -> np.ndarray:
    pad = fft_size // 2
    x = np.pad(x, pad)
    n_frames = 1 + (len(x) - fft_size) // hop
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(x[idx] * window, axis=1).T


def _istft(frames: np.ndarray, fft_size: int, hop: int, window: np.ndarray, length: int) -> np.ndarray:
    n_frames = frames.shape[1]
    out_len = fft_size + hop * (n_frames - 1)
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    chunks = np.fft.irfft(frames.T, n=fft_size, axis=1) * window
    win_sq = window * window
    if fft_size % hop == 0:
        # frames within one stride group abut exactly: vectorized overlap-add
        stride = fft_size // hop
        for g in range(min(stride, n_frames)):
            group = chunks[g::stride]
            start = g * hop
            out[start : start + group.size] += group.reshape(-1)
            norm[start : start + group.size] += np.tile(win_sq, len(group))
    else:
        for t in range(n_frames):
            start = t * hop
            out[start : start + fft_size] += chunks[t]
            norm[start : start + fft_size] += win_sq
    out = out / np.maximum(norm, 1e-8)
    pad = fft_size // 2
    out = out[pad:]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out[:length]


def _time_stretch_channel(x: np.ndarray, rate: float, fft_size: int = 2048, hop: int = 512) -> np.ndarray:
    window = sps.get_window("hann", fft_size, fftbins=True)
    spec = _stft(x, fft_size, hop, window)
    steps = np.arange(0.0, spec.shape[1], rate)
    spec = np.pad(spec, [(0, 0), (0, 2)])
    phase_advance = np.linspace(0.0, np.pi * hop, spec.shape[0])[:, None]

    idx = steps.astype(int)
    frac = steps - idx
    mags = (1.0 - frac) * np.abs(spec[:, idx]) + frac * np.abs(spec[:, idx + 1])
    # per-step deviation of the measured phase advance from the bin's nominal
    dphase = np.angle(spec[:, idx + 1]) - np.angle(spec[:, idx]) - phase_advance
    dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
    increments = phase_advance + dphase
    phases = np.angle(spec[:, 0])[:, None] + np.concatenate(
        [np.zeros((spec.shape[0], 1)), np.cumsum(increments[:, :-1], axis=1)], axis=1
    )
    stretched = mags * np.exp(1j * phases)
    target_len = int(round(len(x) / rate))
    return _istft(stretched, fft_size, hop, window, target_len)


def _time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    out = np.stack([_time_stretch_channel(ch.astype(np.float64), rate) for ch in clip.samples])
    return AudioClip(out, clip.sample_rate)


def _pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    factor = 2.0 ** (semitones / 12.0)
    stretched = _time_stretch(clip, 1.0 / factor)
    ratio = Fraction(1.0 / factor).limit_denominator(1000)
    resampled = resample(
        AudioClip(stretched.samples, stretched.sample_rate * ratio.denominator),
        stretched.sample_rate * ratio.numerator,
    )
    out = np.asarray(resampled.samples, dtype=np.float64)
    n = clip.n_samples
    if out.shape[1] < n:
        out = np.pad(out, [(0, 0), (0, n - out.shape[1])])
    return AudioClip(out[:, :n], clip.sample_rate)


# --------------------------------------------------------------------------
# The twelve edits.


def edit_add(
    base: AudioClip, target: AudioClip, position: float | str, captions: tuple[str, ...] = ()
) -> EditPair:
    """Mix a target clip into a base clip at a resolved position."""
    violations = _check_lengths(EditKind.ADD, base, [target])
    if violations:
        raise ConstraintError(violations)
    offset = resolve_position(position, base.duration_seconds, target.duration_seconds)
    return EditPair(
        input_audio=base,
        output_audio=mix(base, target, offset),
        task=EditKind.ADD,
        params=EditParams(position=position),
        source_captions=captions,
    )


def edit_replace(
    base: AudioClip,
    target: AudioClip,
    replacement: AudioClip,
    rng: np.random.Generator,
    captions: tuple[str, ...] = (),
) -> EditPair:
    """Swap the target element for the replacement at one shared offset."""
    violations = _check_lengths(EditKind.REPLACE, base, [target, replacement])
    if violations:
        raise ConstraintError(violations)
    longest = max(target.duration_seconds, replacement.duration_seconds)
    offset = float(rng.uniform(0.0, base.duration_seconds - longest))
    return EditPair(
        input_audio=mix(base, target, offset),
        output_audio=mix(base, replacement, offset),
        task=EditKind.REPLACE,
        source_captions=captions,
    )


def edit_drop(
    base: AudioClip, target: AudioClip, rng: np.random.Generator, captions: tuple[str, ...] = ()
) -> EditPair:
    """Input carries the target mixed in; the output is the bare base."""
    violations = _check_lengths(EditKind.DROP, base, [target])
    if violations:
        raise ConstraintError(violations)
    offset = float(rng.uniform(0.0, base.duration_seconds - target.duration_seconds))
    return EditPair(
        input_audio=mix(base, target, offset),
        output_audio=base,
        task=EditKind.DROP,
        source_captions=captions,
    )


def edit_swap(first: AudioClip, second: AudioClip, captions: tuple[str, ...] = ()) -> EditPair:
    total = first.duration_seconds + second.duration_seconds
    if total > MAX_OUTPUT_SECONDS:
        raise ConstraintError([("SWAP", "len(first) + len(second) <= 47 s", total)])
    return EditPair(
        input_audio=concat(first, second),
        output_audio=concat(second, first),
        task=EditKind.SWAP,
        source_captions=captions,
    )


def edit_loop(clip: AudioClip, loop_count: int, captions: tuple[str, ...] = ()) -> EditPair:
    if not isinstance(loop_count, (int, np.integer)) or loop_count < 1:
        raise ConstraintError([("LOOP", "l is a positive integer", loop_count)])
    result_seconds = loop_count * clip.duration_seconds
    if result_seconds > MAX_OUTPUT_SECONDS:
        raise ConstraintError([("LOOP", "len(result) <= 47 s", result_seconds)])
    return EditPair(
        input_audio=clip,
        output_audio=AudioClip(np.tile(clip.samples, (1, int(loop_count))), clip.sample_rate),
        task=EditKind.LOOP,
        params=EditParams(loop_count=int(loop_count)),
        source_captions=captions,
    )


def edit_pitch(clip: AudioClip, semitones: float, captions: tuple[str, ...] = ()) -> EditPair:
    if not PITCH_RANGE[0] <= semitones <= PITCH_RANGE[1]:
        raise ConstraintError([("PITCH", "p in [-12, 12]", semitones)])
    output = clip if semitones == 0.0 else _pitch_shift(clip, semitones)
    return EditPair(
        input_audio=clip,
        output_audio=output,
        task=EditKind.PITCH,
        params=EditParams(semitones=float(semitones)),
        source_captions=captions,
    )


def edit_speed(clip: AudioClip, speed: float, captions: tuple[str, ...] = ()) -> EditPair:
    if not SPEED_RANGE[0] <= speed <= SPEED_RANGE[1]:
        raise ConstraintError([("SPEED", "s in [1/3, 3]", speed)])
    result_seconds = clip.duration_seconds / speed
    if result_seconds > MAX_OUTPUT_SECONDS:
        raise ConstraintError([("SPEED", "len(result) <= 47 s", result_seconds)])
    output = clip if speed == 1.0 else _time_stretch(clip, speed)
    return EditPair(
        input_audio=clip,
        output_audio=output,
        task=EditKind.SPEED,
        params=EditParams(speed=float(speed)),
        source_captions=captions,
    )


def _butter_filter(clip: AudioClip, cutoff_hz: float, btype: str) -> AudioClip:
    sos = sps.butter(FILTER_ORDER, cutoff_hz, btype=btype, fs=clip.sample_rate, output="sos")
    zi = sps.sosfilt_zi(sos)
    out = np.empty_like(clip.samples, dtype=np.float64)
    for i, channel in enumerate(clip.samples):
        filtered, _ = sps.sosfilt(sos, channel.astype(np.float64), zi=zi * channel[0])
        out[i] = filtered
    return AudioClip(out, clip.sample_rate)


def edit_low_pass(clip: AudioClip, captions: tuple[str, ...] = ()) -> EditPair:
    if clip.sample_rate <= 2 * LOW_PASS_HZ:
        raise ConstraintError([("LOW_PASS", "sample_rate > 16000", clip.sample_rate)])
    return EditPair(
        input_audio=clip,
        output_audio=_butter_filter(clip, LOW_PASS_HZ, "lowpass"),
        task=EditKind.LOW_PASS,
        source_captions=captions,
    )


def edit_high_pass(clip: AudioClip, captions: tuple[str, ...] = ()) -> EditPair:
    if clip.sample_rate <= 2 * HIGH_PASS_HZ:
        raise ConstraintError([("HIGH_PASS", "sample_rate > 2000", clip.sample_rate)])
    return EditPair(
        input_audio=clip,
        output_audio=_butter_filter(clip, HIGH_PASS_HZ, "highpass"),
        task=EditKind.HIGH_PASS,
        source_captions=captions,
    )


def edit_inpaint(
    clip: AudioClip, blank_percent: float, rng: np.random.Generator, captions: tuple[str, ...] = ()
) -> EditPair:
    """Blank one contiguous region covering ``blank_percent`` of the samples."""
    if not BLANK_RANGE[0] <= blank_percent <= BLANK_RANGE[1]:
        raise ConstraintError([("INPAINT", "alpha in [0, 95]", blank_percent)])
    n = clip.n_samples
    blank = round(n * blank_percent / 100.0)
    masked = clip.samples.copy()
    if blank > 0:
        start = int(rng.integers(0, n - blank + 1))
        masked[:, start : start + blank] = 0.0
    return EditPair(
        input_audio=AudioClip(masked, clip.sample_rate),
        output_audio=clip,
        task=EditKind.INPAINT,
        params=EditParams(blank_percent=float(blank_percent)),
        source_captions=captions,
    )


def edit_super_res(clip: AudioClip, captions: tuple[str, ...] = ()) -> EditPair:
    """Input is the clip run down to a quarter rate and back up."""
    quarter = max(1, round(clip.sample_rate / 4))
    degraded = resample(resample(clip, quarter), clip.sample_rate)
    buf = np.asarray(degraded.samples, dtype=np.float64)
    n = clip.n_samples
    if buf.shape[1] < n:
        buf = np.pad(buf, [(0, 0), (0, n - buf.shape[1])])
    return EditPair(
        input_audio=AudioClip(buf[:, :n], clip.sample_rate),
        output_audio=clip,
        task=EditKind.SUPER_RES,
        source_captions=captions,
    )


NOISE_VARIANCE = 0.01  # N(0, 0.01) read as variance, i.e. std 0.1


def edit_denoise(
    clip: AudioClip, rng: np.random.Generator, captions: tuple[str, ...] = ()
) -> EditPair:
    noise = rng.normal(0.0, math.sqrt(NOISE_VARIANCE), size=clip.samples.shape)
    return EditPair(
        input_audio=AudioClip(clip.samples + noise, clip.sample_rate),
        output_audio=clip,
        task=EditKind.DENOISE,
        source_captions=captions,
    )


# --------------------------------------------------------------------------
# Constraint validation over a full request, reporting every violation.


@dataclass(frozen=True)
class ValidatedEdit:
    task: EditKind
    clips: tuple[AudioClip, ...]
    params: EditParams
    elem_counts: tuple[int, ...]


def _check_lengths(kind: EditKind, base: AudioClip, others: list[AudioClip]):
    violations = []
    names = {EditKind.ADD: "target", EditKind.DROP: "target"}
    for i, other in enumerate(others):
        label = "replace" if kind == EditKind.REPLACE and i == 1 else names.get(kind, "target")
        if other.duration_seconds > base.duration_seconds:
            violations.append((kind.value, f"len({label}) <= len(base)", other.duration_seconds))
    return violations


def validate_constraints(
    task: EditKind,
    inputs: list[AudioClip],
    params: EditParams,
    elem_counts: list[int],
) -> ValidatedEdit:
    """Check arity, length, element-count, and parameter constraints.

    Raises :class:`ConstraintError` carrying one entry per violated
    constraint; returns the validated request otherwise.
    """
    violations = []
    arity = INPUT_ARITY[task]
    if len(inputs) != arity:
        violations.append((task.value, f"requires {arity} input clip(s)", len(inputs)))
    if len(elem_counts) != len(inputs):
        violations.append((task.value, "one element count per input", len(elem_counts)))
    if violations:
        raise ConstraintError(violations)

    def elem(i):
        return elem_counts[i]

    if task == EditKind.ADD:
        violations += _check_lengths(task, inputs[0], [inputs[1]])
        if params.position is None:
            violations.append((task.value, "position t required", None))
        else:
            slack = inputs[0].duration_seconds - inputs[1].duration_seconds
            if isinstance(params.position, str):
                if params.position not in POSITION_KEYWORDS:
                    violations.append((task.value, "t keyword in {start, middle, end}", params.position))
            elif not 0.0 <= params.position <= max(0.0, slack) + 1e-9:
                violations.append((task.value, "t in [0, L - l]", params.position))
    elif task == EditKind.REPLACE:
        violations += _check_lengths(task, inputs[0], [inputs[1], inputs[2]])
        if elem(0) != 1:
            violations.append((task.value, "elem(base) = 1", elem(0)))
        if elem(1) != 1:
            violations.append((task.value, "elem(target) = 1", elem(1)))
    elif task == EditKind.DROP:
        violations += _check_lengths(task, inputs[0], [inputs[1]])
        if elem(1) != 1:
            violations.append((task.value, "elem(target) = 1", elem(1)))
    elif task == EditKind.SWAP:
        total = inputs[0].duration_seconds + inputs[1].duration_seconds
        if total > MAX_OUTPUT_SECONDS:
            violations.append((task.value, "len(first) + len(second) <= 47 s", total))
        if elem(0) != 1:
            violations.append((task.value, "elem(first) = 1", elem(0)))
        if elem(1) != 1:
            violations.append((task.value, "elem(second) = 1", elem(1)))
    elif task == EditKind.LOOP:
        if params.loop_count is None or params.loop_count < 1:
            violations.append((task.value, "l is a positive integer", params.loop_count))
        else:
            total = params.loop_count * inputs[0].duration_seconds
            if total > MAX_OUTPUT_SECONDS:
                violations.append((task.value, "len(result) <= 47 s", total))
    elif task == EditKind.PITCH:
        if params.semitones is None or not PITCH_RANGE[0] <= params.semitones <= PITCH_RANGE[1]:
            violations.append((task.value, "p in [-12, 12]", params.semitones))
    elif task == EditKind.SPEED:
        if params.speed is None or not SPEED_RANGE[0] <= params.speed <= SPEED_RANGE[1]:
            violations.append((task.value, "s in [1/3, 3]", params.speed))
        elif inputs[0].duration_seconds / params.speed > MAX_OUTPUT_SECONDS:
            violations.append(
                (task.value, "len(result) <= 47 s", inputs[0].duration_seconds / params.speed)
            )
    elif task == EditKind.LOW_PASS:
        if inputs[0].sample_rate <= 2 * LOW_PASS_HZ:
            violations.append((task.value, "sample_rate > 16000", inputs[0].sample_rate))
    elif task == EditKind.INPAINT:
        if params.blank_percent is None or not BLANK_RANGE[0] <= params.blank_percent <= BLANK_RANGE[1]:
            violations.append((task.value, "alpha in [0, 95]", params.blank_percent))

    if violations:
        raise ConstraintError(violations)
    return ValidatedEdit(task, tuple(inputs), params, tuple(elem_counts))


def apply_edit(
    validated: ValidatedEdit, rng: np.random.Generator, captions: tuple[str, ...] = ()
) -> EditPair:
    """Run a validated request through the matching edit function."""
    task, clips, params = validated.task, validated.clips, validated.params
    if task == EditKind.ADD:
        return edit_add(clips[0], clips[1], params.position, captions)
    if task == EditKind.REPLACE:
        return edit_replace(clips[0], clips[1], clips[2], rng, captions)
    if task == EditKind.DROP:
        return edit_drop(clips[0], clips[1], rng, captions)
    if task == EditKind.SWAP:
        return edit_swap(clips[0], clips[1], captions)
    if task == EditKind.LOOP:
        return edit_loop(clips[0], params.loop_count, captions)
    if task == EditKind.PITCH:
        return edit_pitch(clips[0], params.semitones, captions)
    if task == EditKind.SPEED:
        return edit_speed(clips[0], params.speed, captions)
    if task == EditKind.LOW_PASS:
        return edit_low_pass(clips[0], captions)
    if task == EditKind.HIGH_PASS:
        return edit_high_pass(clips[0], captions)
    if task == EditKind.INPAINT:
        return edit_inpaint(clips[0], params.blank_percent, rng, captions)
    if task == EditKind.SUPER_RES:
        return edit_super_res(clips[0], captions)
    return edit_denoise(clips[0], rng, captions)
