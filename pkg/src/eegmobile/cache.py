"""Checksummed binary cache of rendered spectrogram images.

File layout (little-endian throughout)::

    b"EGMC"  u16 version
    repeated records:
        u16 len, subject id (UTF-8) | u8 night | u32 epoch_index | u8 label
        u16 width | u16 height | width*height*3 RGB bytes | u32 CRC32

The CRC covers every record byte before it. Two read tiers share one
interface: ``disk`` reads records on demand with ``pread``; ``memory`` loads
the whole file once, verifying records in parallel, and serves from RAM.
"""

from __future__ import annotations

import hashlib
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .edf import Stage
from .errors import CacheFormatError, CacheWriteFailure, ChecksumMismatch, MissingKey
from .spectro import RgbImage

__all__ = [
    "MAGIC",
    "VERSION",
    "CacheEntry",
    "CacheIndex",
    "CacheWriter",
    "DiskCache",
    "MemoryCache",
    "open_cache",
    "cache_get",
    "file_checksum",
    "encode_record",
]

MAGIC = b"EGMC"
VERSION = 1
_FILE_HEADER = struct.Struct("<4sH")
_META = struct.Struct("<BIBHH")  # night, epoch_index, label, width, height
_CRC = struct.Struct("<I")

Key = tuple  # (subject_id, night, epoch_index)


@dataclass(frozen=True)
class CacheEntry:
    offset: int
    length: int
    crc: int
    label: Stage
    width: int
    height: int

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class CacheIndex:
    tier: str
    path: Path
    entries: dict

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return tuple(key) in self.entries

    def keys(self):
        return self.entries.keys()

    def subjects(self) -> list[str]:
        return sorted({k[0] for k in self.entries})


def encode_record(key: Key, image: RgbImage, label: Stage) -> bytes:
    subject, night, epoch_index = key
    sid = subject.encode("utf-8")
    label = Stage(label)
    if not label.trainable:
        raise ValueError("excluded epochs are never cached")
    body = (
        struct.pack("<H", len(sid))
        + sid
        + _META.pack(night, epoch_index, int(label), image.width, image.height)
        + image.tobytes()
    )
    return body + _CRC.pack(zlib.crc32(body))


class CacheWriter:
    """Single-writer append of records; the file appears atomically on close."""

    def __init__(self, path):
        self.path = Path(path)
        self._tmp = self.path.with_name(self.path.name + ".tmp")
        self._keys: set = set()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self._tmp, "wb")
            self._fh.write(_FILE_HEADER.pack(MAGIC, VERSION))
        except OSError as exc:
            raise CacheWriteFailure(f"cannot create cache {self.path}: {exc}") from exc

    def put(self, key: Key, image: RgbImage, label: Stage) -> None:
        key = (str(key[0]), int(key[1]), int(key[2]))
        if key in self._keys:
            raise ValueError(f"duplicate cache key {key}")
        self._keys.add(key)
        try:
            self._fh.write(encode_record(key, image, label))
        except OSError as exc:
            raise CacheWriteFailure(f"write to {self._tmp} failed: {exc}") from exc

    def close(self, commit: bool = True) -> None:
        if self._fh.closed:
            return
        try:
            self._fh.close()
            if commit:
                os.replace(self._tmp, self.path)
            else:
                self._tmp.unlink(missing_ok=True)
        except OSError as exc:
            raise CacheWriteFailure(f"cannot finalize {self.path}: {exc}") from exc

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close(commit=exc_type is None)


def _scan(size: int, read) -> dict:
    head = read(0, _FILE_HEADER.size)
    if len(head) < _FILE_HEADER.size:
        raise CacheFormatError("cache file too short")
    magic, version = _FILE_HEADER.unpack(head)
    if magic != MAGIC:
        raise CacheFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CacheFormatError(f"unsupported cache version {version}")
    entries = {}
    pos = _FILE_HEADER.size
    while pos < size:
        raw = read(pos, 2)
        if len(raw) < 2:
            raise CacheFormatError(f"truncated record at {pos}")
        (n,) = struct.unpack("<H", raw)
        meta = read(pos + 2, n + _META.size)
        if len(meta) < n + _META.size:
            raise CacheFormatError(f"truncated record at {pos}")
        try:
            subject = meta[:n].decode("utf-8")
        except UnicodeDecodeError:
            raise ChecksumMismatch(f"undecodable subject id in record at {pos}") from None
        night, epoch_index, label, width, height = _META.unpack(meta[n:])
        length = 2 + n + _META.size + width * height * 3 + _CRC.size
        if pos + length > size:
            raise CacheFormatError(f"truncated record at {pos}")
        (crc,) = _CRC.unpack(read(pos + length - _CRC.size, _CRC.size))
        try:
            stage = Stage(label)
        except ValueError:
            raise ChecksumMismatch(f"invalid label {label} in record at {pos}") from None
        key = (subject, night, epoch_index)
        if key in entries:
            raise CacheFormatError(f"duplicate key {key}")
        entries[key] = CacheEntry(pos, length, crc, stage, width, height)
        pos += length
    return entries


def _decode(record: bytes | memoryview, entry: CacheEntry, key, verify: bool = True) -> tuple[RgbImage, Stage]:
    body = record[: entry.length - _CRC.size]
    (stored,) = _CRC.unpack(record[entry.length - _CRC.size : entry.length])
    if verify and zlib.crc32(body) != stored:
        raise ChecksumMismatch(f"record {key} failed CRC check; re-ingest the cache")
    n = struct.unpack("<H", body[:2])[0]
    night, epoch_index, label, width, height = _META.unpack(body[2 + n : 2 + n + _META.size])
    if (width, height, label) != (entry.width, entry.height, int(entry.label)):
        raise ChecksumMismatch(f"record {key} metadata changed since indexing")
    pixels = np.frombuffer(body, dtype=np.uint8, offset=2 + n + _META.size)
    return RgbImage(pixels.reshape(height, width, 3)), Stage(label)


class _Cache:
    index: CacheIndex

    def __len__(self):
        return len(self.index)

    def __contains__(self, key):
        return key in self.index

    def keys(self) -> list:
        return list(self.index.entries)

    def label(self, key) -> Stage:
        return self._entry(key).label

    def _entry(self, key) -> CacheEntry:
        try:
            return self.index.entries[tuple(key)]
        except KeyError:
            raise MissingKey(f"{tuple(key)} not in cache") from None

    def get(self, key) -> tuple[RgbImage, Stage]:
        raise NotImplementedError

    def __iter__(self) -> Iterator:
        return iter(self.index.entries)


class DiskCache(_Cache):
    """Reads each record from the file on request."""

    def __init__(self, path):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        size = os.fstat(self._fd).st_size
        entries = _scan(size, lambda off, n: os.pread(self._fd, n, off))
        self.index = CacheIndex("disk", self.path, entries)

    def get(self, key):
        entry = self._entry(key)
        record = os.pread(self._fd, entry.length, entry.offset)
        if len(record) != entry.length:
            raise ChecksumMismatch(f"record {tuple(key)} truncated on disk")
        return _decode(record, entry, tuple(key))

    def close(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


class MemoryCache(_Cache):
    """Holds the whole cache in RAM after a parallel verifying preload.

    The resident buffer is an immutable ``bytes`` object, so every record is
    CRC-checked once at load time rather than on each read.
    """

    def __init__(self, path, workers: int = 4):
        self.path = Path(path)
        self._buf = memoryview(self.path.read_bytes())
        entries = _scan(len(self._buf), lambda off, n: bytes(self._buf[off : off + n]))
        self.index = CacheIndex("memory", self.path, entries)
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            list(pool.map(lambda kv: self._verify(*kv), entries.items()))

    def _verify(self, key, entry):
        rec = self._buf[entry.offset : entry.end]
        if zlib.crc32(rec[: entry.length - _CRC.size]) != entry.crc:
            raise ChecksumMismatch(f"record {key} failed CRC check; re-ingest the cache")

    def get(self, key):
        entry = self._entry(key)
        return _decode(self._buf[entry.offset : entry.end], entry, tuple(key), verify=False)

    def close(self):
        pass


def open_cache(path, tier: str = "disk", workers: int = 4) -> _Cache:
    if tier == "disk":
        return DiskCache(path)
    if tier == "memory":
        return MemoryCache(path, workers=workers)
    raise ValueError(f"unknown tier {tier!r}; expected 'disk' or 'memory'")


def cache_get(cache: _Cache, key) -> tuple[RgbImage, Stage]:
    """Fetch and CRC-verify one ``(image, label)`` pair."""
    return cache.get(key)


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
