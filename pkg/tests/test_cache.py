import numpy as np
import pytest
from hypothesis import given, strategies as st

from eegmobile.cache import MAGIC, CacheWriter, cache_get, open_cache
from eegmobile.edf import Stage
from eegmobile.errors import CacheFormatError, ChecksumMismatch, MissingKey
from eegmobile.spectro import RgbImage

TIERS = ["disk", "memory"]


def _img(seed, w=6, h=4):
    return RgbImage(np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def _write(path, items):
    with CacheWriter(path) as w:
        for key, img, label in items:
            w.put(key, img, label)


@pytest.mark.parametrize("tier", TIERS)
def test_put_then_get(tmp_path, tier):
    items = [(("SC400", 1, i), _img(i), Stage(i % 5)) for i in range(7)]
    _write(tmp_path / "c.egmc", items)
    cache = open_cache(tmp_path / "c.egmc", tier)
    assert len(cache) == 7
    for key, img, label in items:
        got, lab = cache_get(cache, key)
        assert got.tobytes() == img.tobytes()
        assert lab is label


@pytest.mark.parametrize("tier", TIERS)
def test_empty_cache_missing_key(tmp_path, tier):
    _write(tmp_path / "c.egmc", [])
    cache = open_cache(tmp_path / "c.egmc", tier)
    assert len(cache) == 0
    with pytest.raises(MissingKey):
        cache.get(("SC400", 1, 0))


def test_flipped_byte_detected(tmp_path):
    path = tmp_path / "c.egmc"
    _write(path, [(("A", 1, 0), _img(0), Stage.W), (("A", 1, 1), _img(1), Stage.N1)])
    raw = bytearray(path.read_bytes())
    raw[len(raw) - 20] ^= 0xFF  # inside the pixels of the last record
    path.write_bytes(bytes(raw))
    disk = open_cache(path, "disk")
    disk.get(("A", 1, 0))
    with pytest.raises(ChecksumMismatch):
        disk.get(("A", 1, 1))
    with pytest.raises(ChecksumMismatch):
        open_cache(path, "memory")


def test_record_layout(tmp_path):
    path = tmp_path / "c.egmc"
    img = _img(3, w=2, h=1)
    _write(path, [(("ab", 2, 70000), img, Stage.REM)])
    raw = path.read_bytes()
    assert raw[:6] == MAGIC + b"\x01\x00"
    body = raw[6:-4]
    assert body == b"\x02\x00ab" + bytes([2]) + (70000).to_bytes(4, "little") + bytes([4]) \
        + b"\x02\x00\x01\x00" + img.tobytes()
    import zlib

    assert raw[-4:] == zlib.crc32(body).to_bytes(4, "little")


def test_bad_magic(tmp_path):
    path = tmp_path / "c.egmc"
    path.write_bytes(b"NOPE\x01\x00")
    with pytest.raises(CacheFormatError):
        open_cache(path)


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(ValueError):
        _write(tmp_path / "c.egmc", [(("A", 1, 0), _img(0), Stage.W)] * 2)
    assert not (tmp_path / "c.egmc").exists()


def test_excluded_label_rejected(tmp_path):
    with pytest.raises(ValueError):
        _write(tmp_path / "c.egmc", [(("A", 1, 0), _img(0), Stage.EXCLUDED)])


_keys = st.tuples(st.text(min_size=1, max_size=8), st.integers(1, 2), st.integers(0, 2**32 - 1))


@given(st.dictionaries(_keys, st.tuples(st.integers(0, 2**16), st.integers(0, 4)), max_size=12))
def test_round_trip_is_identity(tmp_path_factory, entries):
    path = tmp_path_factory.mktemp("rt") / "c.egmc"
    items = [(k, _img(seed, w=1 + seed % 5, h=1 + seed % 3), Stage(lab)) for k, (seed, lab) in entries.items()]
    _write(path, items)
    for tier in TIERS:
        cache = open_cache(path, tier)
        assert set(cache.keys()) == set(entries)
        for key, img, label in items:
            got, lab = cache.get(key)
            assert got == img and lab is label
