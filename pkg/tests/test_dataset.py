import random
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eegmobile.cache import file_checksum, open_cache
from eegmobile.dataset import Recording, build_folds, epoch_signal, ingest, pair_sleep_edf
from eegmobile.edf import SleepAnnotation, Stage
from eegmobile.errors import CoverageGap, IngestError, MisalignedDuration, TooFewSubjects
from eegmobile.fixtures import stage_runs
from eegmobile.spectro import RenderConfig, SpectrogramConfig

FS = 100.0


def _signal(n_epochs):
    return np.zeros(int(n_epochs * 30 * FS))


# -- epoching -----------------------------------------------------------------


def test_ninety_seconds_of_n2_gives_three_epochs():
    res = epoch_signal(_signal(3), FS, [SleepAnnotation(0, 90, "Sleep stage 2")])
    assert [e.label for e in res.epochs] == [Stage.N2] * 3
    assert all(e.samples.size == 3000 for e in res.epochs)
    assert [e.epoch_index for e in res.epochs] == [0, 1, 2]


def test_unscored_is_excluded_and_counted():
    res = epoch_signal(_signal(2), FS, [SleepAnnotation(0, 60, "Sleep stage ?")])
    assert res.epochs == []
    assert res.n_excluded == 2
    assert res.n_slots == 2


def test_eight_hours_of_sleep():
    res = epoch_signal(_signal(960), FS, [SleepAnnotation(0, 8 * 3600, "Sleep stage 2")])
    assert len(res.epochs) == 960
    assert {e.samples.size for e in res.epochs} == {3000}


def test_misaligned_duration():
    with pytest.raises(MisalignedDuration):
        epoch_signal(_signal(2), FS, [SleepAnnotation(0, 45, "Sleep stage 1")])


def test_annotation_past_signal_end_is_truncated_with_warning():
    with pytest.warns(CoverageGap):
        res = epoch_signal(_signal(2), FS, [SleepAnnotation(0, 120, "Sleep stage 2")])
    assert len(res.epochs) == 2
    assert res.n_truncated == 2


def test_non_stage_annotations_ignored():
    anns = [SleepAnnotation(0, 30, "Sleep stage 1"), SleepAnnotation(10, 0, "Lights off")]
    res = epoch_signal(_signal(1), FS, anns)
    assert len(res.epochs) == 1 and res.n_slots == 1


def test_wake_trimming_keeps_thirty_minutes_each_side():
    stages = [Stage.W] * 200 + [Stage.N2] * 10 + [Stage.W] * 200
    anns = stage_runs(stages)
    res = epoch_signal(_signal(len(stages)), FS, anns, trim_minutes=30)
    counts = res.stage_counts()
    assert counts["N2"] == 10
    assert counts["W"] == 120
    assert res.n_trimmed == 280
    kept = [e.epoch_index for e in res.epochs]
    assert kept[0] == 140 and kept[-1] == 269
    untrimmed = epoch_signal(_signal(len(stages)), FS, anns, trim_minutes=None)
    assert len(untrimmed.epochs) == len(stages)


def test_all_wake_night_is_not_trimmed():
    res = epoch_signal(_signal(5), FS, stage_runs([Stage.W] * 5), trim_minutes=0)
    assert len(res.epochs) == 5


_raw = st.sampled_from(
    ["Sleep stage W", "Sleep stage 1", "Sleep stage 2", "Sleep stage 3", "Sleep stage 4",
     "Sleep stage R", "Sleep stage ?", "Movement time"]
)


@given(st.lists(_raw, min_size=1, max_size=80), st.integers(0, 20), st.sampled_from([None, 0, 5, 30]))
def test_epoch_count_conservation_and_no_excluded(labels, missing, trim):
    n_signal = max(len(labels) - missing, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageGap)
        res = epoch_signal(_signal(n_signal), FS, stage_runs(labels), trim_minutes=trim)
    assert len(res.epochs) + res.n_excluded + res.n_trimmed + res.n_truncated == res.n_slots == len(labels)
    assert res.n_excluded == sum(1 for s in labels if s in ("Sleep stage ?", "Movement time"))
    assert all(e.label.trainable for e in res.epochs)
    if trim is None:
        assert res.n_trimmed == 0


# -- folds --------------------------------------------------------------------


def test_twenty_subjects_leave_one_out():
    plan = build_folds([f"S{i:02d}" for i in range(20)], k=20)
    assert plan.k == 20
    for val, train in plan.folds:
        assert len(val) == 1 and len(train) == 19


def test_single_fold():
    plan = build_folds(["a", "b", "c"], k=1)
    ((val, train),) = plan.folds
    assert val == {"a", "b", "c"} and train == set()


def test_too_few_subjects():
    with pytest.raises(TooFewSubjects):
        build_folds(["a", "b"], k=3)


def test_round_robin_is_sorted_and_deterministic():
    plan = build_folds(["d", "b", "a", "c", "e"], k=2)
    assert plan.folds[0][0] == {"a", "c", "e"}
    assert plan.folds[1][0] == {"b", "d"}
    assert build_folds(["e", "d", "c", "b", "a"], k=2) == plan


@given(st.sets(st.text(min_size=1, max_size=6), min_size=1, max_size=60), st.data())
def test_fold_partition(subjects, data):
    k = data.draw(st.integers(1, len(subjects)))
    epochs = [Recording(s, n, None) for s in subjects for n in (1, 2)]
    plan = build_folds(epochs, k)
    vals = [v for v, _ in plan.folds]
    assert sum(len(v) for v in vals) == len(subjects)
    assert set().union(*vals) == subjects
    for val, train in plan.folds:
        assert not val & train
        assert val | train == subjects
    # both nights of a subject share one fold by construction of the subject key
    for s in subjects:
        assert sum(s in v for v in vals) == 1


# -- ingestion ----------------------------------------------------------------


def test_pairing(corpus_dir):
    recs, errors = pair_sleep_edf(corpus_dir)
    assert errors == []
    assert [(r.subject_id, r.night) for r in recs] == [("SC400", 1), ("SC401", 1)]


def test_missing_partner_names_psg(tmp_path, corpus_dir):
    for f in corpus_dir.iterdir():
        if not f.name.startswith("SC4011EC"):
            (tmp_path / f.name).write_bytes(f.read_bytes())
    recs, errors = pair_sleep_edf(tmp_path)
    assert len(recs) == 1
    assert errors == ["missing hypnogram partner for SC4011E0-PSG.edf"]


def test_two_recordings_of_ten_epochs(tmp_path, corpus_dir):
    recs, _ = pair_sleep_edf(corpus_dir)
    index, summaries = ingest(recs, cache_path=tmp_path / "c.egmc", manifest_path=tmp_path / "m.jsonl")
    assert len(index) == 20
    assert [s.emitted for s in summaries] == [10, 10]
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    assert len(lines) == 2 and '"emitted": 10' in lines[0]


def test_ingest_determinism_across_workers_and_order(tmp_path, corpus4_dir):
    recs, _ = pair_sleep_edf(corpus4_dir)
    sums = set()
    for i, workers in enumerate([1, 3, 8]):
        order = list(recs)
        random.Random(i).shuffle(order)
        path = tmp_path / f"c{workers}.egmc"
        ingest(order, cache_path=path, worker_count=workers, chunk_size=5)
        sums.add(file_checksum(path))
    assert len(sums) == 1


def test_ingest_excludes_unscored(tmp_path, corpus4_dir):
    recs, _ = pair_sleep_edf(corpus4_dir)
    index, summaries = ingest(recs, cache_path=tmp_path / "c.egmc", worker_count=2)
    assert len(index) == sum(s.emitted for s in summaries) == 8 * 10
    assert all(s.excluded == 2 for s in summaries)
    cache = open_cache(tmp_path / "c.egmc", "memory")
    assert all(cache.label(k).trainable for k in cache.keys())


def test_ingest_tags_failures(tmp_path, corpus_dir):
    recs, _ = pair_sleep_edf(corpus_dir)
    bad = Recording(recs[0].subject_id, 1, recs[0].psg, recs[0].hypnogram, channel="EEG nope")
    with pytest.raises(IngestError) as info:
        ingest([bad], cache_path=tmp_path / "c.egmc")
    assert info.value.subject_id == recs[0].subject_id
    assert not (tmp_path / "c.egmc").exists()

    seen = []
    index, _ = ingest([bad, recs[1]], cache_path=tmp_path / "c.egmc", on_error=lambda r, e: seen.append(r))
    assert seen == [bad] and len(index) == 10


def test_custom_configs_change_image_size(tmp_path, corpus_dir):
    recs, _ = pair_sleep_edf(corpus_dir)
    ingest(recs[:1], SpectrogramConfig(nfft=256), RenderConfig(out_width=32, out_height=48),
           tmp_path / "c.egmc")
    cache = open_cache(tmp_path / "c.egmc")
    img, _ = cache.get(cache.keys()[0])
    assert (img.width, img.height) == (32, 48)
