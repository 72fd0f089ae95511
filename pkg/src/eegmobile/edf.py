"""Reader for EDF/EDF+ polysomnography files and hypnogram annotations.

Only the 16-bit EDF flavour is handled. Headers are decoded field by field
from their fixed-width ASCII layout, samples are de-interleaved per channel
and mapped to physical units, and EDF+ time-stamped annotation lists (TALs)
are decoded from either a stand-alone hypnogram file or an embedded
``EDF Annotations`` signal.
"""

from __future__ import annotations

import datetime
import enum
import os
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import (
    ClippedSamples,
    InvariantViolation,
    MalformedField,
    MalformedTAL,
    NonMonotonicOnsets,
    TruncatedData,
    TruncatedHeader,
    UnknownChannel,
)

__all__ = [
    "Stage",
    "SignalSpec",
    "EdfHeader",
    "EdfRecording",
    "SleepAnnotation",
    "parse_edf_header",
    "read_header",
    "read_channel",
    "read_edf",
    "digital_to_physical",
    "parse_tals",
    "parse_annotations",
    "format_tal",
    "serialize_tals",
    "remap_stage",
    "ANNOTATION_LABEL",
]

Source = Union[str, os.PathLike, bytes, bytearray, memoryview]

ANNOTATION_LABEL = "EDF Annotations"

GLOBAL_HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256

# (name, width) in file order
_GLOBAL_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration_s", 8),
    ("n_signals", 4),
)

# per-signal fields are stored column-wise: all labels, then all transducers, ...
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


class Stage(enum.IntEnum):
    """Five-class sleep stage taxonomy plus a marker for unusable epochs."""

    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4
    EXCLUDED = -1

    @property
    def trainable(self) -> bool:
        return self is not Stage.EXCLUDED


TRAINABLE_STAGES = tuple(s for s in Stage if s.trainable)

_STAGE_MAP = {
    "Sleep stage W": Stage.W,
    "Sleep stage 1": Stage.N1,
    "Sleep stage 2": Stage.N2,
    "Sleep stage 3": Stage.N3,
    "Sleep stage 4": Stage.N3,
    "Sleep stage R": Stage.REM,
}


def remap_stage(raw_label: str) -> Stage:
    """Map a Sleep-EDF (R&K) hypnogram label to the five-class scheme.

    Stages 3 and 4 both become N3. Movement time, unscored epochs and any
    unrecognized text map to ``Stage.EXCLUDED``.
    """
    return _STAGE_MAP.get(raw_label, Stage.EXCLUDED)


def is_stage_annotation(raw_label: str) -> bool:
    """True for annotations that occupy 30 s scoring slots."""
    return raw_label.startswith("Sleep stage") or raw_label == "Movement time"


@dataclass(frozen=True)
class SignalSpec:
    label: str
    transducer: str
    physical_dim: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    prefiltering: str
    samples_per_record: int
    reserved: str = ""

    @property
    def is_annotation(self) -> bool:
        return self.label == ANNOTATION_LABEL


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: datetime.date
    start_time: datetime.time
    header_bytes: int
    reserved: str
    n_records: int
    record_duration_s: float
    signals: tuple[SignalSpec, ...]

    @property
    def n_signals(self) -> int:
        return len(self.signals)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.signals]

    @property
    def record_samples(self) -> int:
        return sum(s.samples_per_record for s in self.signals)

    @property
    def record_bytes(self) -> int:
        return 2 * self.record_samples

    def signal_index(self, label: str) -> int:
        label = label.strip()
        for i, sig in enumerate(self.signals):
            if sig.label == label:
                return i
        raise UnknownChannel(f"channel {label!r} not in {self.labels}")

    def sample_rate(self, label: str) -> float:
        sig = self.signals[self.signal_index(label)]
        return sig.samples_per_record / self.record_duration_s


@dataclass(frozen=True)
class EdfRecording:
    header: EdfHeader
    channels: dict[str, np.ndarray]
    sample_rates: dict[str, float]
    n_clipped: int = 0


@dataclass(frozen=True)
class SleepAnnotation:
    onset_s: float
    duration_s: float | None
    raw_label: str

    @property
    def duration(self) -> float:
        return 0.0 if self.duration_s is None else self.duration_s

    @property
    def stage(self) -> Stage:
        return remap_stage(self.raw_label)


# -- header ------------------------------------------------------------------


def _text(raw: bytes, name: str) -> str:
    if any(b < 32 or b > 126 for b in raw):
        raise MalformedField(f"{name}: non-printable byte in {raw!r}")
    return raw.decode("ascii").rstrip(" ")


def _int(raw: bytes, name: str) -> int:
    text = _text(raw, name).strip()
    try:
        return int(text)
    except ValueError:
        raise MalformedField(f"{name}: expected integer, got {text!r}") from None


def _float(raw: bytes, name: str) -> float:
    text = _text(raw, name).strip()
    try:
        value = float(text)
    except ValueError:
        raise MalformedField(f"{name}: expected number, got {text!r}") from None
    if not np.isfinite(value):
        raise MalformedField(f"{name}: non-finite value {text!r}")
    return value


def _date(raw: bytes) -> datetime.date:
    text = _text(raw, "start_date")
    m = re.fullmatch(r"(\d\d)\.(\d\d)\.(\d\d)", text)
    if m is None:
        raise MalformedField(f"start_date: expected dd.mm.yy, got {text!r}")
    day, month, yy = (int(g) for g in m.groups())
    # EDF clipping date: 85-99 -> 1985-1999, 00-84 -> 2000-2084
    year = 1900 + yy if yy >= 85 else 2000 + yy
    try:
        return datetime.date(year, month, day)
    except ValueError as exc:
        raise MalformedField(f"start_date: {exc}") from None


def _time(raw: bytes) -> datetime.time:
    text = _text(raw, "start_time")
    m = re.fullmatch(r"(\d\d)\.(\d\d)\.(\d\d)", text)
    if m is None:
        raise MalformedField(f"start_time: expected hh.mm.ss, got {text!r}")
    try:
        return datetime.time(*(int(g) for g in m.groups()))
    except ValueError as exc:
        raise MalformedField(f"start_time: {exc}") from None


def parse_edf_header(data: bytes) -> EdfHeader:
    """Decode the global and per-signal header of an EDF file.

    Parameters
    ----------
    data : bytes
        At least the first ``header_bytes`` bytes of the file.

    Returns
    -------
    EdfHeader

    Raises
    ------
    TruncatedHeader
        If `data` is shorter than 256 bytes or than the declared header size.
    MalformedField
        If a field holds non-ASCII bytes or non-numeric text where a number
        is expected.
    InvariantViolation
        If the header size, digital or physical ranges, or sample counts are
        inconsistent.
    """
    data = bytes(data)
    if len(data) < GLOBAL_HEADER_BYTES:
        raise TruncatedHeader(f"need {GLOBAL_HEADER_BYTES} bytes, got {len(data)}")

    raw = {}
    pos = 0
    for name, width in _GLOBAL_FIELDS:
        raw[name] = data[pos : pos + width]
        pos += width

    version = _text(raw["version"], "version")
    patient_id = _text(raw["patient_id"], "patient_id")
    recording_id = _text(raw["recording_id"], "recording_id")
    start_date = _date(raw["start_date"])
    start_time = _time(raw["start_time"])
    header_bytes = _int(raw["header_bytes"], "header_bytes")
    reserved = _text(raw["reserved"], "reserved")
    n_records = _int(raw["n_records"], "n_records")
    record_duration = _float(raw["record_duration_s"], "record_duration_s")
    n_signals = _int(raw["n_signals"], "n_signals")

    if n_signals < 1:
        raise InvariantViolation(f"n_signals must be positive, got {n_signals}")
    expected = GLOBAL_HEADER_BYTES + SIGNAL_HEADER_BYTES * n_signals
    if header_bytes != expected:
        raise InvariantViolation(
            f"header_bytes {header_bytes} != 256 + 256 * {n_signals} = {expected}"
        )
    if len(data) < header_bytes:
        raise TruncatedHeader(f"need {header_bytes} header bytes, got {len(data)}")
    if n_records < -1:
        raise InvariantViolation(f"n_records must be >= -1, got {n_records}")
    if record_duration < 0:
        raise InvariantViolation(f"negative record duration {record_duration}")

    columns: dict[str, list[bytes]] = {}
    for name, width in _SIGNAL_FIELDS:
        columns[name] = [
            data[pos + i * width : pos + (i + 1) * width] for i in range(n_signals)
        ]
        pos += width * n_signals

    signals = []
    for i in range(n_signals):
        label = _text(columns["label"][i], f"label[{i}]")
        sig = SignalSpec(
            label=label,
            transducer=_text(columns["transducer"][i], f"transducer[{i}]"),
            physical_dim=_text(columns["physical_dim"][i], f"physical_dim[{i}]"),
            physical_min=_float(columns["physical_min"][i], f"physical_min[{i}]"),
            physical_max=_float(columns["physical_max"][i], f"physical_max[{i}]"),
            digital_min=_int(columns["digital_min"][i], f"digital_min[{i}]"),
            digital_max=_int(columns["digital_max"][i], f"digital_max[{i}]"),
            prefiltering=_text(columns["prefiltering"][i], f"prefiltering[{i}]"),
            samples_per_record=_int(
                columns["samples_per_record"][i], f"samples_per_record[{i}]"
            ),
            reserved=_text(columns["reserved"][i], f"reserved[{i}]"),
        )
        if sig.digital_min >= sig.digital_max:
            raise InvariantViolation(
                f"{label!r}: digital_min {sig.digital_min} >= digital_max {sig.digital_max}"
            )
        if sig.physical_min == sig.physical_max:
            raise InvariantViolation(f"{label!r}: physical_min == physical_max")
        if sig.samples_per_record <= 0:
            raise InvariantViolation(f"{label!r}: samples_per_record must be > 0")
        signals.append(sig)

    if record_duration == 0 and any(not s.is_annotation for s in signals):
        raise InvariantViolation("record duration 0 is only valid for annotation-only files")

    return EdfHeader(
        version=version,
        patient_id=patient_id,
        recording_id=recording_id,
        start_date=start_date,
        start_time=start_time,
        header_bytes=header_bytes,
        reserved=reserved,
        n_records=n_records,
        record_duration_s=record_duration,
        signals=tuple(signals),
    )


# -- data records ------------------------------------------------------------


def _load(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    return Path(source).read_bytes()


def read_header(source: Source) -> EdfHeader:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return parse_edf_header(bytes(source))
    with open(source, "rb") as fh:
        head = fh.read(GLOBAL_HEADER_BYTES)
        if len(head) < GLOBAL_HEADER_BYTES:
            raise TruncatedHeader(f"need {GLOBAL_HEADER_BYTES} bytes, got {len(head)}")
        n_signals = _int(head[252:256], "n_signals")
        head += fh.read(SIGNAL_HEADER_BYTES * max(n_signals, 0))
    return parse_edf_header(head)


def _records(header: EdfHeader, data: bytes) -> np.ndarray:
    """Return the data section as an (n_records, record_samples) int16 array."""
    body = len(data) - header.header_bytes
    width = header.record_bytes
    if header.n_records == -1:
        if body % width:
            raise TruncatedData(
                f"{body} data bytes is not a whole number of {width}-byte records"
            )
        n_records = body // width
    else:
        n_records = header.n_records
        if body < n_records * width:
            raise TruncatedData(
                f"expected {n_records} records of {width} bytes, file holds {body} bytes"
            )
    raw = np.frombuffer(
        data, dtype="<i2", count=n_records * header.record_samples, offset=header.header_bytes
    )
    return raw.reshape(n_records, header.record_samples)


def _signal_slice(header: EdfHeader, index: int) -> slice:
    start = sum(s.samples_per_record for s in header.signals[:index])
    return slice(start, start + header.signals[index].samples_per_record)


def digital_to_physical(digital: np.ndarray, spec: SignalSpec) -> tuple[np.ndarray, int]:
    """Clamp digital values to the declared range and map them linearly.

    Returns the physical samples and the number of clamped values. Both
    range endpoints map exactly onto ``physical_min`` / ``physical_max``.
    """
    d = np.asarray(digital, dtype=np.int64)
    dmin, dmax = spec.digital_min, spec.digital_max
    pmin, pmax = spec.physical_min, spec.physical_max
    n_clipped = int(np.count_nonzero((d < dmin) | (d > dmax)))
    d = np.clip(d, dmin, dmax)
    gain = (pmax - pmin) / (dmax - dmin)
    phys = pmin + (d - dmin) * gain
    phys = np.clip(phys, min(pmin, pmax), max(pmin, pmax))
    phys[d == dmin] = pmin
    phys[d == dmax] = pmax
    return phys, n_clipped


def read_channel(source: Source, channel_label: str) -> tuple[np.ndarray, float]:
    """Read one channel in physical units.

    Parameters
    ----------
    source : path or bytes
        The EDF file.
    channel_label : str
        Signal label; padding spaces are ignored, matching is case-sensitive.

    Returns
    -------
    samples : np.ndarray, float64
        Contiguous stream of ``n_records * samples_per_record`` values.
    sample_rate : float
        ``samples_per_record / record_duration_s`` in Hz.
    """
    data = _load(source)
    header = parse_edf_header(data)
    idx = header.signal_index(channel_label)
    spec = header.signals[idx]
    digital = _records(header, data)[:, _signal_slice(header, idx)].reshape(-1)
    samples, n_clipped = digital_to_physical(digital, spec)
    if n_clipped:
        warnings.warn(
            f"{n_clipped} samples of {spec.label!r} outside digital range were clamped",
            ClippedSamples,
            stacklevel=2,
        )
    return samples, spec.samples_per_record / header.record_duration_s


def read_edf(source: Source, channels: Iterable[str] | None = None) -> EdfRecording:
    """Parse a recording, converting the requested (default: all ordinary) channels."""
    data = _load(source)
    header = parse_edf_header(data)
    if channels is None:
        channels = [s.label for s in header.signals if not s.is_annotation]
    records = _records(header, data)
    out, rates, clipped = {}, {}, 0
    for label in channels:
        idx = header.signal_index(label)
        spec = header.signals[idx]
        samples, n = digital_to_physical(
            records[:, _signal_slice(header, idx)].reshape(-1), spec
        )
        samples.setflags(write=False)
        out[spec.label] = samples
        rates[spec.label] = spec.samples_per_record / header.record_duration_s
        clipped += n
    if clipped:
        warnings.warn(f"{clipped} samples clamped", ClippedSamples, stacklevel=2)
    return EdfRecording(header=header, channels=out, sample_rates=rates, n_clipped=clipped)


# -- annotations -------------------------------------------------------------

_ONSET_RE = re.compile(rb"[+-]\d+(\.\d+)?")
_DURATION_RE = re.compile(rb"\d+(\.\d+)?")


def parse_tals(stream: bytes, *, check_monotonic: bool = True) -> list[SleepAnnotation]:
    """Decode a byte stream of EDF+ time-stamped annotation lists.

    Zero bytes between TALs (record padding) are skipped. Time-keeping TALs,
    which carry no annotation text, are dropped. A TAL holding several texts
    yields one annotation per text.
    """
    stream = bytes(stream)
    out: list[SleepAnnotation] = []
    last_onset = None
    pos, n = 0, len(stream)
    while pos < n:
        if stream[pos] == 0:
            pos += 1
            continue
        end = stream.find(b"\x14\x00", pos)
        if end < 0:
            raise MalformedTAL(f"TAL at byte {pos} lacks the 0x14 0x00 terminator")
        tal = stream[pos : end + 1]
        pos = end + 2
        head, sep, body = tal.partition(b"\x14")
        if not sep:
            raise MalformedTAL(f"TAL {tal!r} has no 0x14 after its onset")
        onset_raw, dsep, duration_raw = head.partition(b"\x15")
        if not _ONSET_RE.fullmatch(onset_raw):
            raise MalformedTAL(f"bad onset {onset_raw!r}")
        onset = float(onset_raw)
        duration = None
        if dsep:
            if not _DURATION_RE.fullmatch(duration_raw):
                raise MalformedTAL(f"bad duration {duration_raw!r}")
            duration = float(duration_raw)
        texts = body.split(b"\x14")[:-1]
        for raw in texts:
            if b"\x15" in raw or b"\x00" in raw:
                raise MalformedTAL(f"delimiter byte inside annotation text {raw!r}")
            if not raw:
                continue
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise MalformedTAL(f"annotation text is not UTF-8: {raw!r}") from None
            if check_monotonic and last_onset is not None and onset < last_onset:
                raise NonMonotonicOnsets(f"onset {onset} follows {last_onset}")
            last_onset = onset
            out.append(SleepAnnotation(onset, duration, text))
    return out


def _annotation_stream(header: EdfHeader, data: bytes) -> bytes:
    idx = [i for i, s in enumerate(header.signals) if s.is_annotation]
    if not idx:
        raise UnknownChannel(f"no {ANNOTATION_LABEL!r} signal in {header.labels}")
    records = _records(header, data)
    parts = []
    for row in records:
        for i in idx:
            parts.append(row[_signal_slice(header, i)].astype("<i2").tobytes())
    return b"".join(parts)


def parse_annotations(source: Source) -> list[SleepAnnotation]:
    """Read sleep annotations from a hypnogram/EDF+ file or a raw TAL stream.

    EDF files are recognized by their leading version field; their
    ``EDF Annotations`` signal(s) are concatenated record by record and
    decoded. Anything else is decoded directly as a TAL stream.
    """
    data = _load(source)
    if data[:8] == b"0       ":
        header = parse_edf_header(data)
        data = _annotation_stream(header, data)
    return parse_tals(data)


def _fmt_number(x: float) -> str:
    x = float(x)
    if x.is_integer():
        return str(int(abs(x)))
    return repr(abs(x))


def format_tal(annotation: SleepAnnotation) -> bytes:
    sign = "-" if annotation.onset_s < 0 else "+"
    head = sign + _fmt_number(annotation.onset_s)
    if annotation.duration_s is not None:
        head += "\x15" + _fmt_number(annotation.duration_s)
    return head.encode("ascii") + b"\x14" + annotation.raw_label.encode("utf-8") + b"\x14\x00"


def serialize_tals(annotations: Iterable[SleepAnnotation]) -> bytes:
    return b"".join(format_tal(a) for a in annotations)
