"""Synthetic EDF corpora and image fixtures for tests, demos and the CLI.

The writer here is deliberately minimal: it emits exactly the subset of
EDF/EDF+ that :mod:`eegmobile.edf` reads, using Sleep-EDF file naming
(``SC4ssNE0-PSG.edf`` paired with ``SC4ssNEC-Hypnogram.edf``).
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .edf import (
    ANNOTATION_LABEL,
    EdfHeader,
    SignalSpec,
    SleepAnnotation,
    Stage,
    serialize_tals,
)

__all__ = [
    "encode_header",
    "encode_edf",
    "make_psg",
    "make_hypnogram",
    "physical_to_digital",
    "synth_eeg",
    "stage_runs",
    "make_corpus",
    "separable_images",
    "STAGE_TEXT",
    "EEG_CHANNEL",
]

EEG_CHANNEL = "EEG Fpz-Cz"

STAGE_TEXT = {
    Stage.W: "Sleep stage W",
    Stage.N1: "Sleep stage 1",
    Stage.N2: "Sleep stage 2",
    Stage.N3: "Sleep stage 3",
    Stage.REM: "Sleep stage R",
}

# (dominant frequency Hz, amplitude uV) per stage for the synthetic EEG
_STAGE_RHYTHM = {
    Stage.W: (10.0, 30.0),
    Stage.N1: (6.0, 25.0),
    Stage.N2: (13.0, 35.0),
    Stage.N3: (2.0, 90.0),
    Stage.REM: (4.5, 15.0),
}


def _field(text: str, width: int) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _num(x: float, width: int) -> bytes:
    x = float(x)
    if x.is_integer():
        text = str(int(x))
    else:
        text = repr(x)
        prec = width
        while len(text) > width and prec > 1:
            prec -= 1
            text = f"{x:.{prec}g}"
    return _field(text, width)


def encode_header(header: EdfHeader) -> bytes:
    """Encode `header` into its 256 + 256*ns byte ASCII layout."""
    d = header.start_date
    t = header.start_time
    sigs = header.signals
    out = [
        _field(header.version, 8),
        _field(header.patient_id, 80),
        _field(header.recording_id, 80),
        _field(f"{d.day:02d}.{d.month:02d}.{d.year % 100:02d}", 8),
        _field(f"{t.hour:02d}.{t.minute:02d}.{t.second:02d}", 8),
        _field(str(header.header_bytes), 8),
        _field(header.reserved, 44),
        _field(str(header.n_records), 8),
        _num(header.record_duration_s, 8),
        _field(str(len(sigs)), 4),
    ]
    out += [_field(s.label, 16) for s in sigs]
    out += [_field(s.transducer, 80) for s in sigs]
    out += [_field(s.physical_dim, 8) for s in sigs]
    out += [_num(s.physical_min, 8) for s in sigs]
    out += [_num(s.physical_max, 8) for s in sigs]
    out += [_field(str(s.digital_min), 8) for s in sigs]
    out += [_field(str(s.digital_max), 8) for s in sigs]
    out += [_field(s.prefiltering, 80) for s in sigs]
    out += [_field(str(s.samples_per_record), 8) for s in sigs]
    out += [_field(s.reserved, 32) for s in sigs]
    return b"".join(out)


def encode_edf(header: EdfHeader, digital: Sequence[np.ndarray], n_records: int | None = None) -> bytes:
    """Encode a header plus per-signal digital streams (record-interleaved)."""
    if len(digital) != header.n_signals:
        raise ValueError("one digital stream per signal required")
    if n_records is None:
        n_records = header.n_records
    blocks = []
    for sig, stream in zip(header.signals, digital):
        stream = np.asarray(stream, dtype="<i2")
        if stream.size != n_records * sig.samples_per_record:
            raise ValueError(f"{sig.label!r}: expected {n_records * sig.samples_per_record} samples")
        blocks.append(stream.reshape(n_records, sig.samples_per_record))
    body = np.concatenate(blocks, axis=1) if blocks else np.zeros((0, 0), "<i2")
    return encode_header(header) + body.astype("<i2").tobytes()


def physical_to_digital(x: np.ndarray, spec: SignalSpec) -> np.ndarray:
    scale = (spec.digital_max - spec.digital_min) / (spec.physical_max - spec.physical_min)
    d = np.rint((np.asarray(x, dtype=float) - spec.physical_min) * scale + spec.digital_min)
    return np.clip(d, spec.digital_min, spec.digital_max).astype("<i2")


def _eeg_spec(label: str, spr: int) -> SignalSpec:
    return SignalSpec(
        label=label,
        transducer="Ag-AgCl electrodes",
        physical_dim="uV",
        physical_min=-200.0,
        physical_max=200.0,
        digital_min=-2048,
        digital_max=2047,
        prefiltering="HP:0.5Hz LP:100Hz",
        samples_per_record=spr,
    )


def _header(signals, n_records, duration, *, reserved="", recording_id="Startdate X X X X"):
    return EdfHeader(
        version="0",
        patient_id="X X X X",
        recording_id=recording_id,
        start_date=datetime.date(1989, 4, 24),
        start_time=datetime.time(16, 13, 0),
        header_bytes=256 + 256 * len(signals),
        reserved=reserved,
        n_records=n_records,
        record_duration_s=duration,
        signals=tuple(signals),
    )


def _annotation_slots(per_record: list[bytes]) -> tuple[int, list[np.ndarray]]:
    spr = max(math.ceil(len(b) / 2) for b in per_record)
    streams = []
    for b in per_record:
        b = b.ljust(2 * spr, b"\x00")
        streams.append(np.frombuffer(b, dtype="<i2"))
    return spr, streams


def _annotation_spec(spr: int) -> SignalSpec:
    return SignalSpec(
        label=ANNOTATION_LABEL,
        transducer="",
        physical_dim="",
        physical_min=-1.0,
        physical_max=1.0,
        digital_min=-32768,
        digital_max=32767,
        prefiltering="",
        samples_per_record=spr,
    )


def make_psg(
    channels: dict[str, np.ndarray],
    fs: float = 100.0,
    record_duration: float = 30.0,
    *,
    annotations: Sequence[SleepAnnotation] | None = None,
    n_records_field: int | None = None,
) -> bytes:
    """Build an EDF file from physical-unit channel data.

    With `annotations`, an ``EDF Annotations`` signal is embedded (EDF+C):
    every record gets its time-keeping TAL, and the first record also carries
    the annotations themselves.
    """
    spr = int(round(fs * record_duration))
    lengths = {len(v) for v in channels.values()}
    if len(lengths) != 1:
        raise ValueError("channels must share a length")
    (length,) = lengths
    if length % spr:
        raise ValueError(f"channel length {length} is not a multiple of {spr}")
    n_records = length // spr
    specs = [_eeg_spec(label, spr) for label in channels]
    digital = [physical_to_digital(v, s) for v, s in zip(channels.values(), specs)]
    reserved = ""
    if annotations is not None:
        per_record = []
        for r in range(n_records):
            keep = f"+{r * record_duration:g}\x14\x14\x00".encode("ascii")
            if r == 0:
                keep += serialize_tals(annotations)
            per_record.append(keep)
        aspr, streams = _annotation_slots(per_record)
        specs.append(_annotation_spec(aspr))
        digital.append(np.concatenate(streams))
        reserved = "EDF+C"
    header = _header(
        specs,
        n_records if n_records_field is None else n_records_field,
        record_duration,
        reserved=reserved,
    )
    return encode_edf(header, digital, n_records=n_records)


def make_hypnogram(annotations: Sequence[SleepAnnotation]) -> bytes:
    """Annotation-only EDF+ file in the Sleep-EDF hypnogram style."""
    stream = b"+0\x14\x14\x00" + serialize_tals(annotations)
    spr, streams = _annotation_slots([stream])
    header = _header([_annotation_spec(spr)], 1, 0.0, reserved="EDF+C")
    return encode_edf(header, streams)


def synth_eeg(stages: Sequence[Stage], fs: float = 100.0, epoch_s: float = 30.0, rng=None) -> np.ndarray:
    """Synthetic single-channel EEG: per-epoch stage rhythm plus noise (uV)."""
    rng = np.random.default_rng(rng)
    n = int(round(fs * epoch_s))
    t = np.arange(n) / fs
    out = []
    for stage in stages:
        if stage in _STAGE_RHYTHM:
            freq, amp = _STAGE_RHYTHM[stage]
        else:
            freq, amp = 1.0, 5.0
        phase = rng.uniform(0, 2 * np.pi)
        x = amp * np.sin(2 * np.pi * freq * t + phase) + rng.normal(0, 5.0, n)
        out.append(x)
    return np.concatenate(out) if out else np.zeros(0)


def stage_runs(stages: Sequence, epoch_s: float = 30.0, texts=None) -> list[SleepAnnotation]:
    """Collapse a per-epoch stage sequence into hypnogram annotations.

    Entries may be :class:`Stage` members or raw label strings.
    """
    texts = STAGE_TEXT if texts is None else texts
    labels = [texts.get(s, s) if not isinstance(s, str) else s for s in stages]
    out = []
    i = 0
    while i < len(labels):
        j = i
        while j < len(labels) and labels[j] == labels[i]:
            j += 1
        out.append(SleepAnnotation(i * epoch_s, (j - i) * epoch_s, labels[i]))
        i = j
    return out


@dataclass
class CorpusFile:
    subject_id: str
    night: int
    psg: Path
    hypnogram: Path
    stages: list = field(default_factory=list)


def make_corpus(
    out_dir,
    n_subjects: int = 2,
    nights: Sequence[int] = (1,),
    epochs_per_night: int = 10,
    *,
    seed: int = 0,
    excluded_per_night: int = 0,
    fs: float = 100.0,
) -> list[CorpusFile]:
    """Write a Sleep-EDF-style fixture corpus and return what was written.

    Each night cycles through the five stages in short runs; the last
    `excluded_per_night` epochs are scored ``Sleep stage ?``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    written = []
    for s in range(n_subjects):
        for night in nights:
            scored = epochs_per_night - excluded_per_night
            order = [Stage.W, Stage.N1, Stage.N2, Stage.N3, Stage.N2, Stage.REM]
            stages: list = []
            k = int(rng.integers(0, len(order)))
            while len(stages) < scored:
                run = int(rng.integers(1, 4))
                stages.extend([order[k % len(order)]] * run)
                k += 1
            stages = stages[:scored] + ["Sleep stage ?"] * excluded_per_night
            eeg_stages = [st if isinstance(st, Stage) else None for st in stages]
            fpz = synth_eeg(eeg_stages, fs=fs, rng=rng)
            pz = synth_eeg(eeg_stages, fs=fs, rng=rng) * 0.5
            stem = f"SC4{s:02d}{night}"
            psg = out_dir / f"{stem}E0-PSG.edf"
            hyp = out_dir / f"{stem}EC-Hypnogram.edf"
            psg.write_bytes(make_psg({EEG_CHANNEL: fpz, "EEG Pz-Oz": pz}, fs=fs))
            hyp.write_bytes(make_hypnogram(stage_runs(stages)))
            written.append(CorpusFile(f"SC4{s:02d}", night, psg, hyp, stages))
    return written


_CLASS_COLORS = np.array(
    [
        [230, 40, 40],
        [40, 200, 40],
        [40, 60, 230],
        [230, 210, 40],
        [200, 40, 220],
    ],
    dtype=float,
)


def separable_images(n_classes: int = 5, per_class: int = 64, size: int = 64, seed: int = 0):
    """Class-colored noisy images; a linear probe on mean color separates them.

    Returns ``(images uint8 (N, size, size, 3), labels int64 (N,))``.
    """
    rng = np.random.default_rng(seed)
    imgs, labels = [], []
    for c in range(n_classes):
        base = _CLASS_COLORS[c % len(_CLASS_COLORS)]
        noise = rng.normal(0, 25.0, size=(per_class, size, size, 3))
        imgs.append(np.clip(base + noise, 0, 255).astype(np.uint8))
        labels.append(np.full(per_class, c, dtype=np.int64))
    return np.concatenate(imgs), np.concatenate(labels)
