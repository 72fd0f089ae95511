"""Epoch extraction, subject-wise folds and parallel spectrogram ingestion."""

from __future__ import annotations

import json
import logging
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .cache import CacheIndex, CacheWriter, open_cache
from .edf import SleepAnnotation, Stage, is_stage_annotation, parse_annotations, read_channel
from .errors import (
    CoverageGap,
    IngestError,
    MisalignedDuration,
    TooFewSubjects,
)
from .fixtures import EEG_CHANNEL
from .spectro import RenderConfig, SpectrogramConfig, epoch_to_image

__all__ = [
    "EPOCH_SECONDS",
    "LabeledEpoch",
    "EpochingResult",
    "epoch_signal",
    "FoldPlan",
    "build_folds",
    "Recording",
    "pair_sleep_edf",
    "ingest",
    "PAPER_EDF20_SAMPLES",
]

log = logging.getLogger(__name__)

EPOCH_SECONDS = 30
# total epochs reported for Sleep-EDF20; used only for the soft real-data comparison
PAPER_EDF20_SAMPLES = 42308


@dataclass(frozen=True)
class LabeledEpoch:
    subject_id: str
    night: int
    epoch_index: int
    samples: np.ndarray
    label: Stage

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.subject_id, self.night, self.epoch_index)


@dataclass
class EpochingResult:
    """Emitted epochs plus the bookkeeping of every annotated 30 s slot.

    ``len(epochs) + n_excluded + n_trimmed + n_truncated == n_slots``.
    """

    epochs: list[LabeledEpoch]
    n_slots: int = 0
    n_excluded: int = 0
    n_trimmed: int = 0
    n_truncated: int = 0

    def stage_counts(self) -> dict[str, int]:
        counts = {s.name: 0 for s in Stage if s.trainable}
        for e in self.epochs:
            counts[e.label.name] += 1
        return counts


def epoch_signal(
    samples,
    fs: float,
    annotations: Iterable[SleepAnnotation],
    *,
    subject_id: str = "",
    night: int = 1,
    trim_minutes: Optional[float] = 30.0,
) -> EpochingResult:
    """Cut a channel into labelled 30 s epochs following its hypnogram.

    Each stage annotation of duration D contributes D/30 slots, labelled via
    :func:`~eegmobile.edf.remap_stage`. Excluded slots (movement, unscored)
    are dropped and counted. Slots extending past the end of the signal are
    truncated with a :class:`CoverageGap` warning. With `trim_minutes`, wake
    epochs more than that far before the first or after the last sleep epoch
    are discarded; ``None`` disables trimming. Annotations that are not
    stage scores (e.g. "Lights off") are ignored.

    ``epoch_index`` is the slot's position on the recording timeline
    (onset // 30), so indices are stable regardless of trimming.
    """
    x = np.asarray(samples, dtype=np.float64)
    n_per = int(round(EPOCH_SECONDS * fs))
    slots: list[tuple[int, Stage]] = []
    for ann in annotations:
        if not is_stage_annotation(ann.raw_label):
            continue
        dur = ann.duration
        n = dur / EPOCH_SECONDS
        if n != int(n):
            raise MisalignedDuration(
                f"{ann.raw_label!r} at {ann.onset_s}s lasts {dur}s, not a multiple of {EPOCH_SECONDS}"
            )
        first = ann.onset_s / EPOCH_SECONDS
        if first != int(first):
            raise MisalignedDuration(f"onset {ann.onset_s}s is not on the {EPOCH_SECONDS}s grid")
        stage = ann.stage
        slots.extend((int(first) + i, stage) for i in range(int(n)))

    result = EpochingResult(epochs=[], n_slots=len(slots))
    sleep_slots = [i for i, s in slots if s.trainable and s is not Stage.W]
    lo = hi = None
    if trim_minutes is not None and sleep_slots:
        margin = trim_minutes * 60 / EPOCH_SECONDS
        lo, hi = min(sleep_slots) - margin, max(sleep_slots) + margin

    truncated = 0
    for index, stage in slots:
        if not stage.trainable:
            result.n_excluded += 1
            continue
        if lo is not None and not lo <= index <= hi:
            result.n_trimmed += 1
            continue
        start = index * n_per
        if index < 0 or start + n_per > x.size:
            truncated += 1
            continue
        seg = x[start : start + n_per].copy()
        seg.setflags(write=False)
        result.epochs.append(LabeledEpoch(subject_id, night, index, seg, stage))
    if truncated:
        result.n_truncated = truncated
        warnings.warn(
            f"{subject_id} night {night}: {truncated} annotated epochs fall outside the signal",
            CoverageGap,
            stacklevel=2,
        )
    result.epochs.sort(key=lambda e: e.epoch_index)
    return result


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[frozenset, frozenset], ...]  # (validation, training)

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def subjects(self) -> frozenset:
        return frozenset().union(*(v for v, _ in self.folds))

    def fold_of(self, subject_id) -> int:
        for i, (val, _) in enumerate(self.folds):
            if subject_id in val:
                return i
        raise KeyError(subject_id)


def build_folds(epochs_or_subjects: Iterable, k: int = 20) -> FoldPlan:
    """Deal subjects round-robin (sorted by id) into `k` validation groups.

    Accepts epochs (anything with ``subject_id``) or bare subject ids; all
    nights of a subject therefore share its fold.
    """
    subjects = sorted({getattr(e, "subject_id", e) for e in epochs_or_subjects})
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(subjects) < k:
        raise TooFewSubjects(f"{len(subjects)} subjects cannot fill {k} folds")
    groups = [subjects[i::k] for i in range(k)]
    everyone = frozenset(subjects)
    folds = tuple((frozenset(g), everyone - frozenset(g)) for g in groups)
    return FoldPlan(folds)


# -- ingestion ----------------------------------------------------------------

_SLEEP_EDF_RE = re.compile(r"^(S[CT])(\d)(\d\d)(\d)")


@dataclass(frozen=True)
class Recording:
    subject_id: str
    night: int
    psg: Path
    hypnogram: Optional[Path] = None  # None -> annotations embedded in the PSG
    channel: str = EEG_CHANNEL


def pair_sleep_edf(data_dir, channel: str = EEG_CHANNEL) -> tuple[list[Recording], list[str]]:
    """Pair ``*-PSG.edf`` files with their hypnograms by 7-char prefix.

    Returns the recordings and one error line per PSG lacking a partner.
    """
    data_dir = Path(data_dir)
    hyps = sorted(data_dir.glob("*-Hypnogram.edf"))
    recs, errors = [], []
    for psg in sorted(data_dir.glob("*-PSG.edf")):
        prefix = psg.name[:7]
        partners = [h for h in hyps if h.name.startswith(prefix)]
        if not partners:
            errors.append(f"missing hypnogram partner for {psg.name}")
            continue
        m = _SLEEP_EDF_RE.match(psg.name)
        if m:
            subject, night = f"{m[1]}{m[2]}{m[3]}", int(m[4])
        else:
            subject, night = psg.name[:-8], 1
        recs.append(Recording(subject, night, psg, partners[0], channel))
    return recs, errors


@dataclass
class IngestSummary:
    subject_id: str
    night: int
    emitted: int
    excluded: int
    trimmed: int
    truncated: int
    stage_counts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "subject": self.subject_id,
                "night": self.night,
                "emitted": self.emitted,
                "excluded": self.excluded,
                "trimmed": self.trimmed,
                "truncated": self.truncated,
                "stages": self.stage_counts,
            },
            sort_keys=True,
        )


def load_epochs(rec: Recording, trim_minutes: Optional[float] = 30.0) -> EpochingResult:
    try:
        samples, fs = read_channel(rec.psg, rec.channel)
        anns = parse_annotations(rec.hypnogram if rec.hypnogram is not None else rec.psg)
        return epoch_signal(
            samples, fs, anns, subject_id=rec.subject_id, night=rec.night, trim_minutes=trim_minutes
        )
    except Exception as exc:
        raise IngestError(rec.subject_id, rec.night, None, exc) from exc


def ingest(
    recordings: Sequence[Recording],
    spectro_cfg: Optional[SpectrogramConfig] = None,
    render_cfg: Optional[RenderConfig] = None,
    cache_path=None,
    worker_count: int = 1,
    *,
    trim_minutes: Optional[float] = 30.0,
    manifest_path=None,
    on_error: Optional[Callable[[Recording, Exception], None]] = None,
    chunk_size: int = 256,
) -> tuple[CacheIndex, list[IngestSummary]]:
    """Transform every kept epoch to an image and write it to a cache file.

    Recordings are processed in canonical ``(subject, night)`` order and each
    recording's epochs fan out to a pool of `worker_count` threads. Results
    are consumed in submission order by a single writer, so the file is
    byte-identical for any worker count or input order.

    Returns the disk-tier index of the written cache and one summary per
    recording (also written as JSON lines to `manifest_path` if given).
    With `on_error`, a recording whose file fails to parse is reported
    through the callback and skipped instead of aborting the run; at most
    `chunk_size` rendered images are held in memory at once.
    """
    if worker_count < 1:
        raise ValueError(f"worker_count must be >= 1, got {worker_count}")
    if cache_path is None:
        raise ValueError("cache_path is required")
    spectro_cfg = spectro_cfg or SpectrogramConfig()
    render_cfg = render_cfg or RenderConfig()
    ordered = sorted(recordings, key=lambda r: (r.subject_id, r.night))
    keys = [(r.subject_id, r.night) for r in ordered]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate (subject, night) among recordings")

    def transform(epoch: LabeledEpoch):
        try:
            return epoch, epoch_to_image(epoch.samples, spectro_cfg, render_cfg)
        except Exception as exc:
            raise IngestError(epoch.subject_id, epoch.night, epoch.epoch_index, exc) from exc

    summaries = []
    with CacheWriter(cache_path) as writer, ThreadPoolExecutor(max_workers=worker_count) as pool:
        for rec in ordered:
            try:
                res = load_epochs(rec, trim_minutes)
            except IngestError as exc:
                if on_error is None:
                    raise
                on_error(rec, exc)
                continue
            for start in range(0, len(res.epochs), chunk_size):
                chunk = res.epochs[start : start + chunk_size]
                for epoch, img in pool.map(transform, chunk):
                    writer.put(epoch.key, img, epoch.label)
            summaries.append(
                IngestSummary(
                    rec.subject_id,
                    rec.night,
                    len(res.epochs),
                    res.n_excluded,
                    res.n_trimmed,
                    res.n_truncated,
                    res.stage_counts(),
                )
            )
            log.info("ingested %s night %d: %d epochs", rec.subject_id, rec.night, len(res.epochs))
    if manifest_path is not None:
        Path(manifest_path).write_text("".join(s.to_json() + "\n" for s in summaries))
    return open_cache(cache_path, tier="disk").index, summaries
