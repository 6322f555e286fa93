"""
Compressed indicator bitvectors with low-bitprobe rank.

The bitvector is cut into blocks of ``t`` bits. Each block is stored as a
class field (its weight) and a variable-width offset field (its binomial
rank among the blocks of that weight). Every ``s_b`` blocks a directory
entry records the absolute rank and payload offset, so one rank query reads
a directory entry, at most ``s_b`` class fields and a single offset field.

Serialized layout, starting at ``base``::

    [directory: n_super x (rank_width + offset_width)]
    [classes:   n_blocks x class_width]
    [payload:   concatenated offset fields]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from bitarray import bitarray
from bitarray.util import int2ba

from src.coding.codecs import bit_width
from src.coding.enumcode import as_fraction, binom_rank, binom_unrank
from src.errors import CorruptCodeword, DensityTooHigh, IndexOutOfRange, OutOfRange
from src.storage.bitstore import ProbeMeteredBits, pack_symbols, unpack_symbols


def _uint(value: int, width: int) -> bitarray:
    if width == 0:
        return bitarray(endian="big")
    return int2ba(value, length=width, endian="big")


def _as_bits(bits: bitarray | str | Iterable[int]) -> bitarray:
    if isinstance(bits, bitarray):
        return bitarray(bits, endian="big")
    if isinstance(bits, str):
        return bitarray(bits, endian="big")
    return bitarray([int(b) for b in bits], endian="big")


def binary_entropy(alpha: float) -> float:
    if alpha <= 0 or alpha >= 1:
        return 0.0
    return -alpha * math.log2(alpha) - (1 - alpha) * math.log2(1 - alpha)


@dataclass(frozen=True)
class RankDictLayout:
    """Geometry of a class/offset rank dictionary over ``m`` bits of density <= alpha."""

    m: int
    alpha: Fraction
    t: int
    s_b: int
    max_weight: int = field(init=False)
    payload_capacity: int = field(init=False)

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"rank dictionary length must be positive, got {self.m}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"density bound must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "max_weight", math.floor(self.alpha * self.m))
        object.__setattr__(self, "payload_capacity", self._knapsack())

    @classmethod
    def for_length(cls, m: int, alpha: int | float | str | Fraction) -> "RankDictLayout":
        log_m = bit_width(m)
        t = max(4, math.ceil(log_m / 2))
        s_b = max(1, log_m)
        return cls(m, as_fraction(alpha), t, s_b)

    # -------------------------------------------------------------- geometry
    @property
    def n_blocks(self) -> int:
        return -(-self.m // self.t)

    @property
    def n_super(self) -> int:
        return -(-self.n_blocks // self.s_b)

    def block_len(self, b: int) -> int:
        return min(self.t, self.m - b * self.t)

    @property
    def class_width(self) -> int:
        return bit_width(self.t + 1)

    @property
    def rank_width(self) -> int:
        return bit_width(self.max_weight + 1)

    @property
    def offset_width(self) -> int:
        return bit_width(self.payload_capacity + 1)

    @property
    def entry_width(self) -> int:
        return self.rank_width + self.offset_width

    @property
    def directory_bits(self) -> int:
        return self.n_super * self.entry_width

    @property
    def class_bits(self) -> int:
        return self.n_blocks * self.class_width

    @property
    def header_bits(self) -> int:
        return self.directory_bits + self.class_bits

    @property
    def fixed_bits(self) -> int:
        """Size that holds every admissible bitvector."""
        return self.header_bits + self.payload_capacity

    @property
    def probe_bound(self) -> int:
        widest = max(bit_width(math.comb(self.t, c)) for c in range(self.t + 1))
        return self.entry_width + self.s_b * self.class_width + widest

    def _knapsack(self) -> int:
        # largest payload over all block weight assignments with total weight <= max_weight
        best = [0] * (self.max_weight + 1)
        for b in range(self.n_blocks):
            length = self.block_len(b)
            widths = [bit_width(math.comb(length, c)) for c in range(length + 1)]
            nxt = list(best)
            for w in range(self.max_weight + 1):
                for c in range(1, min(length, w) + 1):
                    candidate = best[w - c] + widths[c]
                    if candidate > nxt[w]:
                        nxt[w] = candidate
            best = nxt
        return max(best)

    # --------------------------------------------------------------- encode
    def serialize(self, bits: bitarray | str | Iterable[int], *, pad: bool = False) -> bitarray:
        bits = _as_bits(bits)
        if len(bits) != self.m:
            raise ValueError(f"expected {self.m} bits, got {len(bits)}")
        weight = bits.count()
        if weight > self.max_weight:
            raise DensityTooHigh(
                f"weight {weight} exceeds density bound {self.alpha} x {self.m} = {self.max_weight}"
            )
        directory = bitarray(endian="big")
        payload = bitarray(endian="big")
        classes: list[int] = []
        running = 0
        for b in range(self.n_blocks):
            if b % self.s_b == 0:
                directory += _uint(running, self.rank_width) + _uint(len(payload), self.offset_width)
            chunk = bits[b * self.t:b * self.t + self.block_len(b)]
            c = chunk.count()
            classes.append(c)
            payload += _uint(binom_rank(chunk), bit_width(math.comb(len(chunk), c)))
            running += c
        out = directory + pack_symbols(classes, self.class_width) + payload
        if pad:
            out += _uint(0, self.fixed_bits - len(out))
        return out

    # ---------------------------------------------------------------- query
    def _block_bits(self, buf: ProbeMeteredBits, base: int, b: int, c: int, payload_offset: int) -> bitarray:
        length = self.block_len(b)
        if c > length:
            raise CorruptCodeword(f"block {b} claims weight {c} over {length} bits")
        width = bit_width(math.comb(length, c))
        offset = buf.read_bits(base + self.header_bits + payload_offset, width)
        try:
            return binom_unrank(length, c, offset)
        except IndexOutOfRange as exc:
            raise CorruptCodeword(f"block {b} offset {offset} is out of range") from exc

    def rank_pair(self, buf: ProbeMeteredBits, base: int, i: int) -> tuple[int, int]:
        """(rank_{i-1}, rank_i) for 1 <= i <= m, with the probes of a single query."""
        if not 1 <= i <= self.m:
            raise OutOfRange(f"rank position {i} outside [1, {self.m}]")
        b = (i - 1) // self.t
        within = i - b * self.t
        sk = b // self.s_b
        entry = base + sk * self.entry_width
        rank_before = buf.read_bits(entry, self.rank_width)
        payload_offset = buf.read_bits(entry + self.rank_width, self.offset_width)
        first = sk * self.s_b
        raw = buf.read_span(base + self.directory_bits + first * self.class_width, (b - first + 1) * self.class_width)
        classes = [int(c) for c in unpack_symbols(raw, self.class_width)]
        for k, c in enumerate(classes[:-1], start=first):
            rank_before += c
            payload_offset += bit_width(math.comb(self.block_len(k), c))
        c = classes[-1]
        length = self.block_len(b)
        if c == 0:
            return rank_before, rank_before
        if c == length:
            return rank_before + within - 1, rank_before + within
        block = self._block_bits(buf, base, b, c, payload_offset)
        prefix = block[:within - 1].count()
        return rank_before + prefix, rank_before + prefix + block[within - 1]

    def rank(self, buf: ProbeMeteredBits, base: int, i: int) -> int:
        return self.rank_pair(buf, base, i)[1]

    def get_bit(self, buf: ProbeMeteredBits, base: int, i: int) -> int:
        before, at = self.rank_pair(buf, base, i)
        return at - before

    def reconstruct(self, buf: ProbeMeteredBits, base: int) -> bitarray:
        raw = buf.read_span(base + self.directory_bits, self.class_bits)
        out = bitarray(endian="big")
        payload_offset = 0
        for b, c in enumerate(int(c) for c in unpack_symbols(raw, self.class_width)):
            length = self.block_len(b)
            if c in (0, length):
                out += _uint((1 << length) - 1 if c else 0, length)
                continue
            out += self._block_bits(buf, base, b, c, payload_offset)
            payload_offset += bit_width(math.comb(length, c))
        return out


@dataclass(frozen=True)
class PlainRankLayout:
    """Raw bits plus sampled absolute ranks; the differential-testing baseline."""

    m: int
    alpha: Fraction
    stride: int

    @classmethod
    def for_length(cls, m: int, alpha: int | float | str | Fraction) -> "PlainRankLayout":
        inner = RankDictLayout.for_length(m, alpha)
        return cls(m, inner.alpha, inner.t * inner.s_b)

    @property
    def max_weight(self) -> int:
        return math.floor(self.alpha * self.m)

    @property
    def rank_width(self) -> int:
        return bit_width(self.max_weight + 1)

    @property
    def n_samples(self) -> int:
        return -(-self.m // self.stride)

    @property
    def header_bits(self) -> int:
        return self.n_samples * self.rank_width

    @property
    def fixed_bits(self) -> int:
        return self.header_bits + self.m

    @property
    def probe_bound(self) -> int:
        return self.rank_width + self.stride

    def serialize(self, bits: bitarray | str | Iterable[int], *, pad: bool = False) -> bitarray:
        bits = _as_bits(bits)
        if len(bits) != self.m:
            raise ValueError(f"expected {self.m} bits, got {len(bits)}")
        if bits.count() > self.max_weight:
            raise DensityTooHigh(f"weight {bits.count()} exceeds {self.max_weight}")
        samples = bitarray(endian="big")
        for k in range(self.n_samples):
            samples += _uint(bits[:k * self.stride].count(), self.rank_width)
        return samples + bits

    def rank_pair(self, buf: ProbeMeteredBits, base: int, i: int) -> tuple[int, int]:
        if not 1 <= i <= self.m:
            raise OutOfRange(f"rank position {i} outside [1, {self.m}]")
        k = (i - 1) // self.stride
        before = buf.read_bits(base + k * self.rank_width, self.rank_width)
        start = k * self.stride
        span = buf.read_span(base + self.header_bits + start, i - start)
        prefix = before + span[:-1].count()
        return prefix, prefix + span[-1]

    def rank(self, buf: ProbeMeteredBits, base: int, i: int) -> int:
        return self.rank_pair(buf, base, i)[1]

    def get_bit(self, buf: ProbeMeteredBits, base: int, i: int) -> int:
        before, at = self.rank_pair(buf, base, i)
        return at - before

    def reconstruct(self, buf: ProbeMeteredBits, base: int) -> bitarray:
        return buf.read_span(base + self.header_bits, self.m)


class RankDictionary:
    """A built dictionary together with the metered buffer that holds it."""

    def __init__(self, layout: RankDictLayout | PlainRankLayout, buf: ProbeMeteredBits, base: int = 0) -> None:
        self.layout = layout
        self.buf = buf
        self.base = base

    @classmethod
    def build(
        cls,
        bits: bitarray | str | Sequence[int],
        alpha: int | float | str | Fraction,
        *,
        plain: bool = False,
        track_distinct: bool = False,
    ) -> "RankDictionary":
        alpha = as_fraction(alpha)
        if not 0 < alpha < Fraction(1, 2):
            raise ValueError(f"density bound must lie in (0, 1/2), got {alpha}")
        bits = _as_bits(bits)
        factory = PlainRankLayout if plain else RankDictLayout
        layout = factory.for_length(len(bits), alpha)
        payload = layout.serialize(bits)
        return cls(layout, ProbeMeteredBits.from_bitarray(payload, track_distinct=track_distinct))

    @property
    def m(self) -> int:
        return self.layout.m

    @property
    def total_bits(self) -> int:
        return self.buf.length_bits

    @property
    def probe_bound(self) -> int:
        return self.layout.probe_bound

    def rank(self, i: int) -> int:
        return self.layout.rank(self.buf, self.base, i)

    def rank_probed(self, i: int) -> tuple[int, int]:
        """Rank plus the number of bits read to answer it."""
        with self.buf.probe_scope() as scope:
            value = self.rank(i)
        return value, scope.reads

    def get_bit(self, i: int) -> int:
        return self.layout.get_bit(self.buf, self.base, i)

    def reconstruct(self) -> bitarray:
        return self.layout.reconstruct(self.buf, self.base)

    def space_report(self) -> dict[str, float]:
        """Measured size against m * h(alpha)."""
        ideal = self.m * binary_entropy(float(self.layout.alpha))
        return {"m": self.m, "total_bits": self.total_bits, "ideal_bits": ideal, "slack_bits": self.total_bits - ideal}
