"""
Chunked on-disk frame stacks.

Layout::

    8 bytes   magic  b"CPIFRAME"
    2 bytes   format version, uint16 little-endian
    4 bytes   header length H, uint32 little-endian
    H bytes   UTF-8 JSON header (scenario echo, seed, mask, sensor grids)
    chunks, each:
        4 bytes   b"CHNK"
        4 bytes   frame count c, uint32
        8 bytes   first frame id, int64
        4 bytes   CRC-32 of the two payload blocks, uint32
        c * n_a   float32 little-endian, sensor a
        c * n_b   float32 little-endian, sensor b

Chunk headers have a fixed size, so the index (offset, ids) of every chunk
is recovered by hopping from header to header without reading payloads.
A trailing chunk cut short by an interrupted write is ignored on read and
removed by :meth:`FrameStore.append`.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import SampledGrid, ScenarioConfig
from .errors import ConfigError, FormatError
from .speckle import FrameStack

__all__ = ["FrameStore", "ChunkInfo"]

MAGIC = b"CPIFRAME"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_CHUNK = struct.Struct("<4sIqI")


@dataclass(frozen=True)
class ChunkInfo:
    offset: int
    first: int
    count: int
    crc: int


class FrameStore:
    """A frame-stack file opened for streaming reads and appends."""

    def __init__(self, path, header: dict, data_start: int):
        self.path = Path(path)
        self.header = header
        self._data_start = data_start
        self.grid_a = SampledGrid(**header["grid_a"])
        self.grid_b = SampledGrid(**header["grid_b"])
        self.scenario = ScenarioConfig(**header["scenario"])
        self.seed = int(header["seed"])
        self.mask = header["mask"]

    # -- creation and opening ------------------------------------------------

    @classmethod
    def create(cls, path, stack: FrameStack) -> "FrameStore":
        """New file holding the metadata of ``stack`` (frames are not written)."""
        header = {"scenario": stack.scenario.as_dict(), "seed": int(stack.seed),
                  "mask": stack.mask, "grid_a": stack.grid_a.as_dict(),
                  "grid_b": stack.grid_b.as_dict()}
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)) + blob)
        return cls.open(path)

    @classmethod
    def open(cls, path) -> "FrameStore":
        try:
            with open(path, "rb") as fh:
                prefix = fh.read(_PREFIX.size)
                if len(prefix) < _PREFIX.size:
                    raise FormatError(f"{path}: truncated file")
                magic, version, hlen = _PREFIX.unpack(prefix)
                if magic != MAGIC:
                    raise FormatError(f"{path}: not a frame-stack file (bad magic)")
                if version != VERSION:
                    raise FormatError(f"{path}: unsupported format version {version} "
                                      f"(expected {VERSION})")
                header = json.loads(fh.read(hlen).decode("utf-8"))
        except OSError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
        except (ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: corrupt header") from exc
        try:
            return cls(path, header, _PREFIX.size + hlen)
        except (KeyError, TypeError, ConfigError) as exc:
            raise FormatError(f"{path}: corrupt header ({exc})") from exc

    # -- index -----------------------------------------------------------------

    def _chunk_bytes(self, count: int) -> int:
        return 4 * count * (self.grid_a.n + self.grid_b.n)

    def _scan(self) -> tuple[list[ChunkInfo], int]:
        """Complete chunks and the offset where valid data ends."""
        size = self.path.stat().st_size
        chunks = []
        pos = self._data_start
        with open(self.path, "rb") as fh:
            while pos + _CHUNK.size <= size:
                fh.seek(pos)
                tag, count, first, crc = _CHUNK.unpack(fh.read(_CHUNK.size))
                if tag != b"CHNK":
                    raise FormatError(f"{self.path}: bad chunk marker at byte {pos}")
                end = pos + _CHUNK.size + self._chunk_bytes(count)
                if end > size:
                    break
                chunks.append(ChunkInfo(pos, first, count, crc))
                pos = end
        return chunks, pos

    def index(self) -> list[ChunkInfo]:
        return self._scan()[0]

    @property
    def n_frames(self) -> int:
        return sum(c.count for c in self.index())

    def frame_ids(self) -> np.ndarray:
        idx = self.index()
        if not idx:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.arange(c.first, c.first + c.count) for c in idx])

    # -- reading ---------------------------------------------------------------

    def iter_chunks(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield ``(ids, frames_a, frames_b)`` chunk by chunk, verifying checksums."""
        na, nb = self.grid_a.n, self.grid_b.n
        with open(self.path, "rb") as fh:
            for c in self.index():
                fh.seek(c.offset + _CHUNK.size)
                raw = fh.read(self._chunk_bytes(c.count))
                if zlib.crc32(raw) != c.crc:
                    raise FormatError(f"{self.path}: checksum mismatch in chunk at byte {c.offset}")
                arr = np.frombuffer(raw, dtype="<f4")
                a = arr[:c.count * na].reshape(c.count, na)
                b = arr[c.count * na:].reshape(c.count, nb)
                yield np.arange(c.first, c.first + c.count), a, b

    def load(self) -> FrameStack:
        parts = list(self.iter_chunks())
        if not parts:
            raise FormatError(f"{self.path}: no complete frames stored")
        return FrameStack(np.concatenate([p[1] for p in parts]),
                          np.concatenate([p[2] for p in parts]), self.grid_a, self.grid_b,
                          self.seed, np.concatenate([p[0] for p in parts]), self.scenario,
                          self.mask)

    # -- writing ---------------------------------------------------------------

    def compatible(self, stack: FrameStack) -> bool:
        return (stack.seed == self.seed and stack.grid_a == self.grid_a
                and stack.grid_b == self.grid_b and stack.scenario == self.scenario
                and stack.mask == self.mask)

    def append(self, stack: FrameStack):
        """Append the frames of ``stack`` as one chunk (ids must be consecutive)."""
        if not self.compatible(stack):
            raise ConfigError(f"{self.path}: frames belong to a different run "
                              "(scenario, seed, mask or sensor grids differ)")
        ids = stack.frame_ids
        if ids.size == 0:
            return
        if np.any(np.diff(ids) != 1):
            raise ConfigError("appended frame ids must be consecutive")
        chunks, end = self._scan()
        if chunks and ids[0] != chunks[-1].first + chunks[-1].count:
            raise ConfigError(f"{self.path}: next frame id is {chunks[-1].first + chunks[-1].count}, "
                              f"got {ids[0]}")
        payload = (np.ascontiguousarray(stack.intensities_a, dtype="<f4").tobytes()
                   + np.ascontiguousarray(stack.intensities_b, dtype="<f4").tobytes())
        head = _CHUNK.pack(b"CHNK", ids.size, int(ids[0]), zlib.crc32(payload))
        with open(self.path, "r+b") as fh:
            fh.truncate(end)  # drop a partial chunk left by an interrupted write
            fh.seek(end)
            fh.write(head + payload)
