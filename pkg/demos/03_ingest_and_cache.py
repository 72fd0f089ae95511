"""
Ingesting a corpus into the spectrogram cache
=============================================

Writes a fixture corpus in the Sleep-EDF file-naming convention, pairs
each PSG with its hypnogram, renders every scored epoch in parallel and
reads the resulting cache back through the disk and memory tiers.
"""

import tempfile
import time
from pathlib import Path

from eegmobile.cache import file_checksum, open_cache
from eegmobile.dataset import build_folds, ingest, pair_sleep_edf
from eegmobile.fixtures import make_corpus

root = Path(tempfile.mkdtemp())
make_corpus(root / "edf", n_subjects=4, nights=(1, 2), epochs_per_night=12, seed=5, excluded_per_night=2)
recordings, problems = pair_sleep_edf(root / "edf")
print(len(recordings), "recordings,", len(problems), "pairing problems")

index, summaries = ingest(recordings, cache_path=root / "a.egmc", worker_count=4)
for s in summaries:
    print(f"{s.subject_id} night {s.night}: {s.emitted} epochs, {s.excluded} unscored, stages {s.stage_counts}")

# the bytes on disk do not depend on the worker count
ingest(recordings, cache_path=root / "b.egmc", worker_count=1)
print("same checksum for 4 and 1 workers:", file_checksum(root / "a.egmc") == file_checksum(root / "b.egmc"))

for tier in ("disk", "memory"):
    cache = open_cache(root / "a.egmc", tier)
    keys = cache.keys()
    t0 = time.perf_counter()
    for k in keys:
        cache.get(k)
    rate = len(keys) / (time.perf_counter() - t0)
    print(f"{tier:>6} tier: {len(cache)} images, {rate:,.0f} images/s")
    cache.close()

# both nights of a subject always land in the same fold
plan = build_folds(recordings, k=2)
for i, (val, train) in enumerate(plan.folds):
    print(f"fold {i}: validate on {sorted(val)}, train on {sorted(train)}")
