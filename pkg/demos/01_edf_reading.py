"""
Reading an EDF+ recording and its hypnogram
===========================================

Builds a small synthetic recording, writes it to disk and reads it back:
header fields, the physical-unit signal and the remapped sleep stages.
"""

import tempfile
from pathlib import Path

import numpy as np

from eegmobile import edf
from eegmobile.fixtures import make_hypnogram, make_psg, stage_runs, synth_eeg

out = Path(tempfile.mkdtemp())

# six 30 s epochs, one stage per run, at 100 Hz
stages = ["Sleep stage W", "Sleep stage 1", "Sleep stage 2", "Sleep stage 3", "Sleep stage 4", "Sleep stage R"]
signal = synth_eeg([edf.remap_stage(s) for s in stages], rng=0)
(out / "demo-PSG.edf").write_bytes(make_psg({"EEG Fpz-Cz": signal}))
(out / "demo-Hypnogram.edf").write_bytes(make_hypnogram(stage_runs(stages)))

header = edf.read_header(out / "demo-PSG.edf")
print("signals:", header.labels, "records:", header.n_records, "x", header.record_duration_s, "s")

samples, fs = edf.read_channel(out / "demo-PSG.edf", "EEG Fpz-Cz")
# the 16-bit quantisation step bounds the round-trip error
print(f"{samples.size} samples at {fs:g} Hz, max abs error vs source {np.max(np.abs(samples - signal)):.3f} uV")

for ann in edf.parse_annotations(out / "demo-Hypnogram.edf"):
    print(f"{ann.onset_s:6.0f}s {ann.duration:4.0f}s  {ann.raw_label:<15} -> {ann.stage.name}")
