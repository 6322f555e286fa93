"""
Local decoding and local updating for the multilevel scheme.

Block and symbol indices are 0-based. A block encoded at level l >= 1 is
found by ascending from level 0: at each level one indicator bit of the
ancestor's psi word says whether the ancestor holds our sub-block. A zero
word reads as a zero bit, so atypical ancestors are passed through.

Updates recompute exactly what the global encoder would produce, level by
level, and stop as soon as the working message above a level is unchanged.
Writes are staged and committed only once the whole cascade succeeds.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from bitarray import bitarray
from bitarray.util import ba2int, int2ba

from src.coding.codecs import NotStored
from src.coding.enumcode import refill_block
from src.errors import CorruptCodeword, EncodingIncomplete, OutOfRange
from src.schemes.multilevel import LevelPlan, live_subblocks, psi_decode, psi_encode
from src.storage.bitstore import ProbeCounts, ProbeMeteredBits, unpack_symbols

logger = logging.getLogger(__name__)


class AscentStrategy(str, enum.Enum):
    SINGLE_BIT = "single-bit"
    FULL_WORDS = "full-words"


@dataclass(frozen=True)
class LocalAddress:
    """Ancestors of level-0 block ``j``: ``groups[l]`` and sub-position ``slots[l]``."""

    block: int
    groups: tuple[int, ...]
    slots: tuple[int, ...]

    @classmethod
    def of(cls, plan: LevelPlan, block: int) -> "LocalAddress":
        groups = [block]
        slots = [0]
        for level in range(1, plan.level_max + 1):
            groups.append(groups[-1] // plan.blocks[level])
            slots.append(groups[-2] % plan.blocks[level])
        return cls(block, tuple(groups), tuple(slots))


class _Reader:
    """Metered reads with an optional per-call cache for repeated windows."""

    def __init__(self, buf: ProbeMeteredBits, dedup: bool) -> None:
        self.buf = buf
        self._cache: dict[tuple[int, int], bitarray] | None = {} if dedup else None

    def span(self, offset: int, width: int) -> bitarray:
        if self._cache is None:
            return self.buf.read_span(offset, width)
        key = (offset, width)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = self.buf.read_span(offset, width)
        return hit

    def bits(self, offset: int, width: int) -> int:
        return ba2int(self.span(offset, width)) if width else 0


def _check_block(plan: LevelPlan, block: int) -> None:
    if not 0 <= block < plan.group_count(0):
        raise OutOfRange(f"block {block} outside [0, {plan.group_count(0)})")


def _locate(
    reader: _Reader,
    plan: LevelPlan,
    block: int,
    strategy: AscentStrategy,
) -> tuple[int, np.ndarray]:
    """Return (encoding level, symbols) of level-0 block ``block``."""
    word = reader.bits(plan.word_offset(0, block), plan.k0)
    decoded = plan.level0.decode(word)
    if not isinstance(decoded, NotStored):
        return 0, np.asarray(decoded, dtype=np.int64)

    address = LocalAddress.of(plan, block)
    width = plan.symbol_width
    for level in range(1, plan.level_max + 1):
        base = plan.word_offset(level, address.groups[level])
        r = address.slots[level]
        b = plan.blocks[level]
        if strategy is AscentStrategy.SINGLE_BIT:
            if not reader.bits(base + r, 1):
                continue
            indicator = reader.span(base, b)
        else:
            whole = reader.span(base, plan.code_lens[level])
            if not whole.any():
                continue
            indicator = whole[:b]
            if not indicator[r]:
                raise CorruptCodeword(f"typical level-{level} ancestor of block {block} does not hold it")
        slot = indicator[:r].count()
        if slot >= plan.pad_slots[level]:
            raise CorruptCodeword(f"level-{level} indicator addresses slot {slot} beyond capacity")
        slot_bits = plan.sizes[level - 1] * width
        start = b + slot * slot_bits
        if strategy is AscentStrategy.SINGLE_BIT:
            stored = reader.span(base + start, slot_bits)
        else:
            stored = whole[start:start + slot_bits]
        within = (block % plan.ratio(level - 1)) * plan.b0
        symbols = unpack_symbols(stored, width)[within:within + plan.b0]
        if np.any(symbols >= plan.alphabet_size):
            raise CorruptCodeword(f"block {block} stored at level {level} is not raw")
        return level, symbols
    raise CorruptCodeword(f"block {block} is not stored at any level up to {plan.level_max}")


def local_decode_block(
    buf: ProbeMeteredBits,
    plan: LevelPlan,
    block: int,
    strategy: AscentStrategy = AscentStrategy.SINGLE_BIT,
) -> tuple[np.ndarray, int]:
    """Recover level-0 block ``block``; returns (symbols, bits probed)."""
    _check_block(plan, block)
    with buf.probe_scope() as scope:
        _, symbols = _locate(_Reader(buf, dedup=False), plan, block, AscentStrategy(strategy))
    return symbols, scope.reads


def encoding_level(buf: ProbeMeteredBits, plan: LevelPlan, block: int) -> int:
    """The level at which ``block`` is stored, found by probing."""
    _check_block(plan, block)
    return _locate(_Reader(buf, dedup=False), plan, block, AscentStrategy.SINGLE_BIT)[0]


def _check_range(plan: LevelPlan, start: int, length: int) -> None:
    if start < 0 or length < 0 or start + length > plan.n:
        raise OutOfRange(f"range [{start}, {start + length}) outside message of {plan.n} symbols")


def local_decode_range(
    buf: ProbeMeteredBits,
    plan: LevelPlan,
    start: int,
    length: int,
    strategy: AscentStrategy = AscentStrategy.SINGLE_BIT,
) -> tuple[np.ndarray, int]:
    """Recover ``length`` symbols from ``start``; shared ancestor reads are made once."""
    _check_range(plan, start, length)
    if length == 0:
        return np.zeros(0, dtype=np.int64), 0
    b0 = plan.b0
    first, last = start // b0, (start + length - 1) // b0
    reader = _Reader(buf, dedup=True)
    with buf.probe_scope() as scope:
        parts = [_locate(reader, plan, j, AscentStrategy(strategy))[1] for j in range(first, last + 1)]
    joined = np.concatenate(parts)
    skip = start - first * b0
    return joined[skip:skip + length], scope.reads


class _UpdateCascade:
    """One block update: old contents are read lazily, new words are staged."""

    def __init__(self, buf: ProbeMeteredBits, plan: LevelPlan) -> None:
        self.buf = buf
        self.plan = plan
        self._words: dict[tuple[int, int], bitarray] = {}
        self._before: dict[tuple[int, int], np.ndarray] = {}
        self.staged: dict[tuple[int, int], bitarray] = {}

    def word(self, level: int, group: int) -> bitarray:
        key = (level, group)
        if key not in self._words:
            self._words[key] = self.buf.read_span(self.plan.word_offset(level, group), self.plan.code_lens[level])
        return self._words[key]

    def content_before(self, level: int, group: int) -> np.ndarray:
        """Working message over level-``level`` block ``group`` before that level ran."""
        key = (level, group)
        if key in self._before:
            return self._before[key]
        plan = self.plan
        word = self.word(level, group)
        if word.any():
            content = psi_decode(word, plan.psi(level))
        elif level == plan.level_max:
            raise CorruptCodeword(f"level-{level} group {group} is unresolved in a complete codeword")
        else:
            parent = self.content_before(level + 1, group // plan.blocks[level + 1])
            k = group % plan.blocks[level + 1]
            size = plan.sizes[level]
            content = parent[k * size:(k + 1) * size]
        self._before[key] = content
        return content

    def run(self, block: int, new_block: np.ndarray) -> None:
        plan = self.plan
        diamond = plan.diamond
        old_word = self.word(0, block)
        new_word, stored = plan.level0.encode(new_block)
        self.staged[(0, block)] = _as_word(new_word, plan.k0)
        new_after = np.full(plan.b0, diamond, dtype=np.int64) if stored else new_block
        if old_word.any() and stored:
            return

        address = LocalAddress.of(plan, block)
        for level in range(1, plan.level_max + 1):
            g, r = address.groups[level], address.slots[level]
            geometry = plan.psi(level)
            old_group = self.content_before(level, g)
            new_group = old_group.copy()
            new_group[r * geometry.m:(r + 1) * geometry.m] = new_after
            old_typical = self.word(level, g).any()
            live = int(live_subblocks(new_group, geometry).sum())
            if live <= plan.thresholds[level]:
                self.staged[(level, g)] = psi_encode(new_group, geometry)
                new_after = np.full(plan.sizes[level], diamond, dtype=np.int64)
            else:
                self.staged[(level, g)] = bitarray(plan.code_lens[level], endian="big")
                self.staged[(level, g)].setall(0)
                new_after = new_group
            old_after_level = np.full(plan.sizes[level], diamond, dtype=np.int64) if old_typical else old_group
            if np.array_equal(old_after_level, new_after):
                logger.debug("Update of block %d settled at level %d", block, level)
                return
        if np.any(new_after != diamond):
            raise EncodingIncomplete(
                f"update of block {block} leaves symbols above level {plan.level_max}",
                position=block * plan.b0,
            )

    def commit(self) -> None:
        for (level, group), new in self.staged.items():
            old = self._words[(level, group)]
            diff = old ^ new
            if not diff.any():
                continue
            lo = diff.index(1)
            hi = len(diff) - diff[::-1].index(1)
            self.buf.write_span(self.plan.word_offset(level, group) + lo, new[lo:hi])


def _as_word(value: int, width: int) -> bitarray:
    return int2ba(value, length=width, endian="big")


def _validate_symbols(plan: LevelPlan, symbols: Sequence[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(symbols, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= plan.alphabet_size):
        raise ValueError(f"update symbols must lie in [0, {plan.alphabet_size})")
    return arr


def local_update_block(
    buf: ProbeMeteredBits,
    plan: LevelPlan,
    block: int,
    new_block: Sequence[int] | np.ndarray,
) -> ProbeCounts:
    """Replace level-0 block ``block``; the codeword afterwards equals a fresh encode."""
    _check_block(plan, block)
    new_block = _validate_symbols(plan, new_block)
    if new_block.size != plan.b0:
        raise ValueError(f"new block must hold {plan.b0} symbols, got {new_block.size}")
    new_block = refill_block(new_block, plan.n - block * plan.b0, plan.level0.spec)
    with buf.probe_scope() as scope:
        cascade = _UpdateCascade(buf, plan)
        cascade.run(block, new_block)
        cascade.commit()
    return scope.counts


def local_update_range(
    buf: ProbeMeteredBits,
    plan: LevelPlan,
    start: int,
    symbols: Sequence[int] | np.ndarray,
) -> ProbeCounts:
    """Overwrite ``len(symbols)`` symbols from ``start``, block by block."""
    symbols = _validate_symbols(plan, symbols)
    length = int(symbols.size)
    _check_range(plan, start, length)
    if length == 0:
        return ProbeCounts()
    b0 = plan.b0
    with buf.probe_scope() as scope:
        for j in range(start // b0, (start + length - 1) // b0 + 1):
            lo, hi = max(start, j * b0), min(start + length, (j + 1) * b0)
            if hi - lo == b0:
                merged = symbols[lo - start:hi - start]
            else:
                merged, _ = local_decode_block(buf, plan, j)
                merged = merged.copy()
                merged[lo - j * b0:hi - j * b0] = symbols[lo - start:hi - start]
            local_update_block(buf, plan, j, merged)
    return scope.counts
