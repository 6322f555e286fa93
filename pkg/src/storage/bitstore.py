"""
Bit-addressable codeword storage with exact probe accounting.

Every codeword read or write in the toolkit goes through
:class:`ProbeMeteredBits`. Probes are raw accesses: reading the same bit twice
counts twice. Bit index 0 is the most significant bit of the first byte of
the serialized form.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from bitarray import bitarray
from bitarray.util import ba2int, int2ba, zeros

from src.errors import OutOfRange


@dataclass(frozen=True)
class ProbeCounts:
    reads: int = 0
    writes: int = 0

    @property
    def total(self) -> int:
        return self.reads + self.writes

    def __sub__(self, other: "ProbeCounts") -> "ProbeCounts":
        return ProbeCounts(self.reads - other.reads, self.writes - other.writes)

    def __add__(self, other: "ProbeCounts") -> "ProbeCounts":
        return ProbeCounts(self.reads + other.reads, self.writes + other.writes)


class _ProbeLedger:
    """Counters shared by a buffer and all of its windows."""

    def __init__(self, size: int, track_distinct: bool) -> None:
        self.reads = 0
        self.writes = 0
        self._lock = threading.Lock()
        self.touched = zeros(size) if track_distinct else None

    def charge(self, start: int, width: int, *, write: bool) -> None:
        with self._lock:
            if write:
                self.writes += width
            else:
                self.reads += width
                if self.touched is not None and width:
                    self.touched[start:start + width] = 1


class ProbeMeteredBits:
    """A window over a bit buffer that counts every bit it reads or writes."""

    def __init__(
        self,
        length_bits: int,
        *,
        payload: bitarray | None = None,
        track_distinct: bool = False,
    ) -> None:
        if length_bits < 0:
            raise ValueError(f"length_bits must be non-negative, got {length_bits}")
        if payload is None:
            payload = zeros(length_bits, endian="big")
        elif len(payload) < length_bits:
            raise ValueError(f"payload holds {len(payload)} bits, need {length_bits}")
        self._bits = payload
        self._origin = 0
        self._length = length_bits
        self._ledger = _ProbeLedger(len(payload), track_distinct)

    @classmethod
    def from_bytes(cls, data: bytes, length_bits: int, *, track_distinct: bool = False) -> "ProbeMeteredBits":
        payload = bitarray(endian="big")
        payload.frombytes(bytes(data))
        if len(payload) < length_bits:
            raise OutOfRange(f"{len(data)} bytes cannot hold {length_bits} bits")
        del payload[length_bits:]
        return cls(length_bits, payload=payload, track_distinct=track_distinct)

    @classmethod
    def from_bitarray(cls, bits: bitarray, *, track_distinct: bool = False) -> "ProbeMeteredBits":
        payload = bitarray(bits, endian="big")
        return cls(len(payload), payload=payload, track_distinct=track_distinct)

    # ------------------------------------------------------------------ views
    def window(self, offset: int, length: int) -> "ProbeMeteredBits":
        """Return a view of ``length`` bits starting at ``offset``.

        The view shares storage and counters with this buffer.
        """
        self._check(offset, length)
        view = object.__new__(ProbeMeteredBits)
        view._bits = self._bits
        view._origin = self._origin + offset
        view._length = length
        view._ledger = self._ledger
        return view

    @property
    def length_bits(self) -> int:
        return self._length

    def __len__(self) -> int:
        return self._length

    def _check(self, offset: int, width: int) -> None:
        if offset < 0 or width < 0 or offset + width > self._length:
            raise OutOfRange(
                f"bit window [{offset}, {offset + width}) outside buffer of {self._length} bits"
            )

    # ------------------------------------------------------------- probing
    def read_bits(self, offset: int, width: int) -> int:
        """Read ``width`` bits as an unsigned integer, MSB first."""
        self._check(offset, width)
        start = self._origin + offset
        self._ledger.charge(start, width, write=False)
        if width == 0:
            return 0
        return ba2int(self._bits[start:start + width], signed=False)

    def write_bits(self, offset: int, width: int, value: int) -> None:
        """Overwrite ``width`` bits with the binary form of ``value``."""
        self._check(offset, width)
        if value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        start = self._origin + offset
        self._ledger.charge(start, width, write=True)
        if width:
            self._bits[start:start + width] = int2ba(value, length=width, endian="big")

    def read_span(self, offset: int, width: int) -> bitarray:
        """Read an arbitrarily wide span as a bitarray copy."""
        self._check(offset, width)
        start = self._origin + offset
        self._ledger.charge(start, width, write=False)
        return self._bits[start:start + width]

    def write_span(self, offset: int, bits: bitarray) -> None:
        width = len(bits)
        self._check(offset, width)
        start = self._origin + offset
        self._ledger.charge(start, width, write=True)
        self._bits[start:start + width] = bits

    # ------------------------------------------------------------ counters
    def checkpoint_counters(self) -> ProbeCounts:
        return ProbeCounts(self._ledger.reads, self._ledger.writes)

    def reset_counters(self) -> None:
        with self._ledger._lock:
            self._ledger.reads = 0
            self._ledger.writes = 0
            if self._ledger.touched is not None:
                self._ledger.touched.setall(0)

    @property
    def distinct_reads(self) -> int | None:
        """Number of distinct bits read since the last reset (debug mode only)."""
        touched = self._ledger.touched
        return None if touched is None else touched.count()

    @contextmanager
    def probe_scope(self) -> Iterator["_ScopeDelta"]:
        """Measure the probes of one logical operation."""
        scope = _ScopeDelta(self)
        try:
            yield scope
        finally:
            scope.close()

    # -------------------------------------------------------- unmetered
    def snapshot(self) -> bitarray:
        """Copy of the window's payload; serialization, not a probe."""
        return self._bits[self._origin:self._origin + self._length]

    def to_bytes(self) -> bytes:
        return self.snapshot().tobytes()

    def copy(self) -> "ProbeMeteredBits":
        """Independent buffer with the same payload and fresh counters."""
        return ProbeMeteredBits(
            self._length,
            payload=self.snapshot(),
            track_distinct=self._ledger.touched is not None,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbeMeteredBits):
            return NotImplemented
        return self._length == other._length and self.snapshot() == other.snapshot()

    def __repr__(self) -> str:
        counts = self.checkpoint_counters()
        return f"ProbeMeteredBits(length_bits={self._length}, reads={counts.reads}, writes={counts.writes})"


class _ScopeDelta:
    def __init__(self, buf: ProbeMeteredBits) -> None:
        self._buf = buf
        self._start = buf.checkpoint_counters()
        self._end: ProbeCounts | None = None

    def close(self) -> None:
        self._end = self._buf.checkpoint_counters()

    @property
    def counts(self) -> ProbeCounts:
        end = self._end if self._end is not None else self._buf.checkpoint_counters()
        return end - self._start

    @property
    def reads(self) -> int:
        return self.counts.reads

    @property
    def writes(self) -> int:
        return self.counts.writes


def pack_symbols(symbols: Sequence[int] | np.ndarray, width: int) -> bitarray:
    """Serialize symbols at a fixed bit width, MSB first."""
    out = bitarray(endian="big")
    arr = np.asarray(symbols, dtype=np.int64)
    if width == 0 or arr.size == 0:
        return out
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    bits = ((arr[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    out.frombytes(np.packbits(bits).tobytes())
    del out[bits.size:]
    return out


def unpack_symbols(bits: bitarray, width: int) -> np.ndarray:
    """Inverse of :func:`pack_symbols`; ``len(bits)`` must be a multiple of ``width``."""
    if width == 0:
        return np.zeros(0, dtype=np.int64)
    if len(bits) % width:
        raise ValueError(f"{len(bits)} bits is not a multiple of symbol width {width}")
    raw = np.unpackbits(np.frombuffer(bits.tobytes(), dtype=np.uint8))[: len(bits)]
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return raw.reshape(-1, width).astype(np.int64) @ weights
