"""Append-only on-disk store of local scores.

File layout (all little-endian)::

    header   8s  magic b"GPNSCORE"
             H   format version (1)
             H   record size in bytes (31)
    record   H   node index
             Q   parent-set bitmask
             B   score kind code (1 laplace, 2 bridge, 3 bge)
             Q   seed fingerprint
             d   log score
             I   CRC-32 of the 27 bytes above

Records are only ever appended; when a key appears twice the later record
wins. Records failing their checksum, and a truncated tail, are skipped with
a warning and recomputed on demand.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
import zlib
from pathlib import Path
from typing import Callable

from filelock import FileLock

from .dag import bits, to_mask
from .scores import KIND_CODES, ScoreEntry

log = logging.getLogger(__name__)

MAGIC = b"GPNSCORE"
VERSION = 1
HEADER = struct.Struct("<8sHH")
BODY = struct.Struct("<HQBQd")
RECORD = struct.Struct("<HQBQdI")
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


def encode_record(node: int, mask: int, kind: str, fingerprint: int, log_score: float) -> bytes:
    body = BODY.pack(node, mask, KIND_CODES[kind], fingerprint, log_score)
    return body + struct.pack("<I", zlib.crc32(body))


class ScoreCache:
    """Persistent memo of local scores keyed by (node, parents, kind, fingerprint).

    ``path=None`` gives an in-memory cache with the same interface.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._flock = FileLock(str(self.path) + ".lock") if self.path is not None else None
        self._entries: dict[tuple[int, int, str, int], float] = {}
        self.n_computed = 0
        self.n_corrupt = 0
        if self.path is not None:
            self._load()

    def _load(self) -> None:
        with self._flock:
            if not self.path.exists() or self.path.stat().st_size == 0:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_bytes(HEADER.pack(MAGIC, VERSION, RECORD.size))
                return
            raw = self.path.read_bytes()
            if len(raw) < HEADER.size or HEADER.unpack_from(raw)[0] != MAGIC:
                log.warning("score cache %s has an unknown header; starting a fresh file", self.path)
                self.path.replace(self.path.with_suffix(self.path.suffix + ".bad"))
                self.path.write_bytes(HEADER.pack(MAGIC, VERSION, RECORD.size))
                return
            _, version, size = HEADER.unpack_from(raw)
            if version != VERSION or size != RECORD.size:
                raise ValueError(f"score cache {self.path}: unsupported version {version} / record size {size}")
            body = raw[HEADER.size :]
            n_full = len(body) // size
            for k in range(n_full):
                rec = body[k * size : (k + 1) * size]
                node, mask, code, fp, score, crc = RECORD.unpack(rec)
                if zlib.crc32(rec[:-4]) != crc or code not in CODE_KINDS:
                    self.n_corrupt += 1
                    continue
                self._entries[(node, mask, CODE_KINDS[code], fp)] = score
            tail = len(body) - n_full * size
            if tail:
                log.warning("score cache %s: dropping %d-byte truncated tail", self.path, tail)
                with open(self.path, "r+b") as fh:
                    fh.truncate(HEADER.size + n_full * size)
            if self.n_corrupt:
                log.warning("score cache %s: skipped %d corrupt records", self.path, self.n_corrupt)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def get(self, node: int, mask: int, kind: str, fingerprint: int) -> float | None:
        return self._entries.get((node, mask, kind, fingerprint))

    def put(self, node: int, mask: int, kind: str, fingerprint: int, log_score: float) -> None:
        if self.path is None:
            self._entries[(node, mask, kind, fingerprint)] = float(log_score)
            return
        rec = encode_record(node, mask, kind, fingerprint, float(log_score))
        with self._lock, self._flock:
            with open(self.path, "ab") as fh:
                fh.write(rec)
                fh.flush()
                os.fsync(fh.fileno())
            self._entries[(node, mask, kind, fingerprint)] = float(log_score)

    def get_or_compute(self, node: int, parent_set, kind: str, fingerprint: int, compute_fn: Callable[[], float]) -> ScoreEntry:
        mask = parent_set if isinstance(parent_set, int) else to_mask(parent_set)
        val = self.get(node, mask, kind, fingerprint)
        if val is None:
            val = float(compute_fn())
            self.n_computed += 1
            self.put(node, mask, kind, fingerprint, val)
        return ScoreEntry(node, tuple(bits(mask)), kind, val, fingerprint)


def score_cache_get_or_compute(cache: ScoreCache, node: int, parent_set, kind: str, compute_fn, fingerprint: int = 0) -> ScoreEntry:
    return cache.get_or_compute(node, parent_set, kind, fingerprint, compute_fn)
