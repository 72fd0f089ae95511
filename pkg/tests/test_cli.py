import json

import numpy as np
import pytest
from PIL import Image

from eegmobile.cache import file_checksum, open_cache
from eegmobile.cli import main
from eegmobile.fixtures import make_hypnogram, make_psg, stage_runs

TRAIN_FLAGS = ["--k", "2", "--epochs", "2", "--input-size", "16", "--set", "train.phase1_epochs=1",
               "--strict"]


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_fx")
    assert main(["fixtures", str(out), "--subjects", "2", "--epochs-per-night", "10", "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def ingested(tmp_path_factory, fixture_dir):
    cache = tmp_path_factory.mktemp("cli_cache") / "c.egmc"
    assert main(["ingest", str(fixture_dir), "--cache", str(cache), "--set", "render.width=16",
                 "--set", "render.height=16"]) == 0
    return cache


def test_ingest_two_subjects(ingested, capsys):
    assert len(open_cache(ingested)) == 20
    lines = (ingested.parent / "c.egmc.ingest.jsonl").read_text().splitlines()
    assert [json.loads(l)["emitted"] for l in lines] == [10, 10]
    manifest = json.loads((ingested.parent / "c.egmc.manifest.json").read_text())
    assert manifest["entries"] == 20
    assert manifest["cache_sha256"] == file_checksum(ingested)
    assert len(manifest["inputs"]) == 4


def test_ingest_prints_stage_counts(fixture_dir, tmp_path, capsys):
    assert main(["ingest", str(fixture_dir), "--cache", str(tmp_path / "c.egmc")]) == 0
    out = capsys.readouterr().out
    assert "stages: W=" in out and "total 20 epochs" in out


def test_worker_count_does_not_change_cache(fixture_dir, tmp_path):
    sums = set()
    for w in ("1", "8"):
        path = tmp_path / f"c{w}.egmc"
        assert main(["ingest", str(fixture_dir), "--cache", str(path), "--workers", w]) == 0
        sums.add(file_checksum(path))
    assert len(sums) == 1


def test_cache_location_from_environment(fixture_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("EEGM_CACHE", str(tmp_path / "env.egmc"))
    assert main(["ingest", str(fixture_dir)]) == 0
    assert len(open_cache(tmp_path / "env.egmc")) == 20


def test_missing_partner_is_reported(fixture_dir, tmp_path, capsys):
    for f in fixture_dir.iterdir():
        if f.suffix == ".edf" and not f.name.startswith("SC4011EC"):
            (tmp_path / f.name).write_bytes(f.read_bytes())
    code = main(["ingest", str(tmp_path)])
    err = capsys.readouterr().err
    assert code != 0
    assert "SC4011E0-PSG.edf" in err
    assert err.startswith("error: [dataset]")


def test_empty_directory_fails(tmp_path):
    assert main(["ingest", str(tmp_path)]) == 1


def test_train_writes_reports_and_reruns_identically(ingested, tmp_path, capsys):
    out1 = tmp_path / "run1"
    assert main(["train", "--cache", str(ingested), "--out", str(out1), *TRAIN_FLAGS]) == 0
    folds = sorted(out1.glob("fold_*.json"))
    assert len(folds) == 2
    agg = json.loads((out1 / "aggregate.json").read_text())
    accs = [json.loads(f.read_text())["accuracy"] for f in folds]
    assert agg["accuracy"] == pytest.approx(np.mean(accs), abs=1e-15)
    assert "aggregate: ACC" in capsys.readouterr().out

    # rerun from the recorded manifest alone
    out2 = tmp_path / "run2"
    assert main(["train", "--config", str(out1 / "manifest.json"), "--cache", str(ingested), "--k", "2",
                 "--out", str(out2)]) == 0
    assert (out1 / "aggregate.json").read_bytes() == (out2 / "aggregate.json").read_bytes()
    assert (out1 / "fold_00.egmw").read_bytes() == (out2 / "fold_00.egmw").read_bytes()


def test_train_rejects_impossible_fold_count(ingested, tmp_path, capsys):
    assert main(["train", "--cache", str(ingested), "--out", str(tmp_path), "--k", "3"]) == 1
    assert "error: [dataset]" in capsys.readouterr().err


def test_eval_checkpoint(ingested, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--cache", str(ingested), "--out", str(run), *TRAIN_FLAGS]) == 0
    fold = json.loads((run / "fold_00.json").read_text())
    out = tmp_path / "eval.json"
    assert main(["eval", str(run / "fold_00.egmw"), "--cache", str(ingested), "--out", str(out),
                 "--subjects", *fold["validation_subjects"]]) == 0
    assert json.loads(out.read_text())["accuracy"] == fold["accuracy"]
    assert main(["eval", str(run / "fold_00.egmw"), "--cache", str(ingested), "--subjects", "nobody"]) == 1


def test_bench_io_reports_both_patterns(ingested, tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench-io", "--cache", str(ingested), "--passes", "1", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert set(res) == {"disk", "memory"}
    for tier in res.values():
        assert set(tier) == {"sequential", "shuffled"} and all(v > 0 for v in tier.values())
    printed = capsys.readouterr().out
    assert "sequential" in printed and "shuffled" in printed


def test_bench_io_zero_passes_is_usage_error(ingested):
    with pytest.raises(SystemExit) as info:
        main(["bench-io", "--cache", str(ingested), "--passes", "0"])
    assert info.value.code == 2


def test_bench_io_unreadable_cache(tmp_path):
    (tmp_path / "bad.egmc").write_bytes(b"junk")
    assert main(["bench-io", "--cache", str(tmp_path / "bad.egmc"), "--passes", "1"]) == 1


@pytest.fixture(scope="module")
def sine_psg(tmp_path_factory):
    t = np.arange(3 * 3000) / 100.0
    path = tmp_path_factory.mktemp("sine") / "sine.edf"
    path.write_bytes(make_psg({"EEG Fpz-Cz": 80 * np.sin(2 * np.pi * 20.0 * t)}))
    return path


def test_spectrogram_brightest_row_is_the_sine(sine_psg, tmp_path):
    png = tmp_path / "s.png"
    assert main(["spectrogram", str(sine_psg), str(png), "--epoch-index", "1"]) == 0
    rgb = np.asarray(Image.open(png).convert("RGB"), dtype=np.float64)
    assert rgb.shape == (224, 224, 3)
    luma = rgb @ [0.299, 0.587, 0.114]
    row = int(np.argmax(luma.mean(axis=1)))
    # row 0 is the Nyquist bin after the vertical flip
    freq = (223.5 - row) / 224 * 50.0
    assert abs(freq - 20.0) < 0.5


def test_spectrogram_is_deterministic(sine_psg, tmp_path):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    assert main(["spectrogram", str(sine_psg), str(a)]) == 0
    assert main(["spectrogram", str(sine_psg), str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_spectrogram_epoch_out_of_range(sine_psg, tmp_path, capsys):
    assert main(["spectrogram", str(sine_psg), str(tmp_path / "x.png"), "--epoch-index", "3"]) == 1
    assert "outside recording" in capsys.readouterr().err


def test_spectrogram_missing_channel(sine_psg, tmp_path):
    assert main(["spectrogram", str(sine_psg), str(tmp_path / "x.png"), "--channel", "EOG"]) == 1


def test_hypnogram_only_file_has_no_signal(tmp_path):
    path = tmp_path / "h.edf"
    path.write_bytes(make_hypnogram(stage_runs(["Sleep stage W"])))
    assert main(["spectrogram", str(path), str(tmp_path / "x.png")]) == 1
