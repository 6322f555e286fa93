"""
Level-0 fixed-length subcodes and the LZ78 codec behind the universal mode.

A level-0 codec maps a block of ``b_0`` symbols to a ``k_0``-bit word. The
all-zero word is reserved: it means the block is not compressible here and
must be looked up at a higher level.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from bitarray import bitarray
from bitarray.util import ba2int, int2ba

from src.coding.enumcode import (
    SourceModel,
    TypicalSetSpec,
    as_fraction,
    exact_ceil,
    log2_bounds,
    typical_count,
    typical_set,
)
from src.errors import CorruptCodeword, IndexOutOfRange, MalformedStream, PlanInfeasible

logger = logging.getLogger(__name__)


def bit_width(count: int) -> int:
    """Bits needed to address ``count`` distinct values (0 for count <= 1)."""
    return max(0, count - 1).bit_length()


class NotStored(enum.Enum):
    NOT_STORED_HERE = "not-stored-here"

    def __bool__(self) -> bool:
        return False


NOT_STORED_HERE = NotStored.NOT_STORED_HERE


# ---------------------------------------------------------------------------
# LZ78
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LZ78Codeword:
    """Parsed LZ78 phrase list; a ``None`` symbol marks the trailing End phrase."""

    phrases: tuple[tuple[int, int | None], ...]
    alphabet_size: int

    @property
    def symbol_width(self) -> int:
        return bit_width(self.alphabet_size)

    @property
    def bit_length(self) -> int:
        sym = self.symbol_width
        return sum(
            bit_width(t) + (0 if symbol is None else sym)
            for t, (_, symbol) in enumerate(self.phrases, start=1)
        )

    def to_bits(self) -> bitarray:
        out = bitarray(endian="big")
        sym = self.symbol_width
        for t, (pointer, symbol) in enumerate(self.phrases, start=1):
            width = bit_width(t)
            if width:
                out.extend(int2ba(pointer, length=width, endian="big"))
            if symbol is not None and sym:
                out.extend(int2ba(symbol, length=sym, endian="big"))
        return out

    @classmethod
    def from_bits(cls, bits: bitarray, n_symbols: int, alphabet_size: int) -> "LZ78Codeword":
        """Parse a phrase stream; trailing bits after ``n_symbols`` are ignored."""
        sym = bit_width(alphabet_size)
        lengths = [0]
        phrases: list[tuple[int, int | None]] = []
        pos = 0
        produced = 0
        while produced < n_symbols:
            t = len(phrases) + 1
            width = bit_width(t)
            if pos + width > len(bits):
                raise MalformedStream(f"phrase {t} pointer runs past the end of the stream")
            pointer = ba2int(bits[pos:pos + width]) if width else 0
            pos += width
            if pointer >= t:
                raise MalformedStream(f"phrase {t} points at unknown phrase {pointer}")
            remaining = n_symbols - produced
            base = lengths[pointer]
            if base > remaining:
                raise MalformedStream(f"phrase {t} overruns the declared {n_symbols} symbols")
            if base == remaining and pointer:
                phrases.append((pointer, None))
                produced += base
                break
            if pos + sym > len(bits):
                raise MalformedStream(f"phrase {t} symbol runs past the end of the stream")
            symbol = ba2int(bits[pos:pos + sym]) if sym else 0
            pos += sym
            if symbol >= alphabet_size:
                raise MalformedStream(f"phrase {t} carries symbol {symbol} outside the alphabet")
            phrases.append((pointer, symbol))
            lengths.append(base + 1)
            produced += base + 1
        return cls(tuple(phrases), alphabet_size)


def lz78_encode(symbols: Sequence[int], alphabet_size: int = 2) -> LZ78Codeword:
    """Standard LZ78 parse of ``symbols``."""
    trie: dict[tuple[int, int], int] = {}
    phrases: list[tuple[int, int | None]] = []
    node = 0
    for s in symbols:
        s = int(s)
        child = trie.get((node, s))
        if child is not None:
            node = child
            continue
        phrases.append((node, s))
        trie[(node, s)] = len(phrases)
        node = 0
    if node:
        phrases.append((node, None))
    return LZ78Codeword(tuple(phrases), alphabet_size)


def lz78_decode(codeword: LZ78Codeword, n_symbols: int) -> list[int]:
    table: list[list[int]] = [[]]
    out: list[int] = []
    for t, (pointer, symbol) in enumerate(codeword.phrases, start=1):
        if pointer >= t:
            raise MalformedStream(f"phrase {t} points at unknown phrase {pointer}")
        phrase = table[pointer] if symbol is None else table[pointer] + [symbol]
        table.append(phrase)
        out.extend(phrase)
    if len(out) != n_symbols:
        raise MalformedStream(f"phrase stream yields {len(out)} symbols, expected {n_symbols}")
    return out


def lz78_length(symbols: Sequence[int], alphabet_size: int = 2) -> int:
    return lz78_encode(symbols, alphabet_size).bit_length


# ---------------------------------------------------------------------------
# Level-0 codec
# ---------------------------------------------------------------------------
class Level0Mode(str, enum.Enum):
    TYPICAL_SET = "known"
    LZ78_FIXED = "universal"


@dataclass(frozen=True)
class Level0Codec:
    mode: Level0Mode
    block_len: int
    code_len: int
    alphabet_size: int
    spec: TypicalSetSpec | None = None

    @classmethod
    def typical(
        cls,
        model: SourceModel,
        block_len: int,
        epsilon: int | float | str | Fraction,
        code_len: int | None = None,
    ) -> "Level0Codec":
        spec = TypicalSetSpec.for_model(model, block_len, epsilon)
        if code_len is None:
            code_len = exact_ceil(lambda bits: tuple(block_len * (h + spec.epsilon) for h in model.entropy_bounds(bits)))
        count = typical_count(spec)
        if count + 1 > 1 << code_len:
            raise PlanInfeasible(
                f"|T| + 1 = {count + 1} does not fit in k_0 = {code_len} bits"
            )
        return cls(Level0Mode.TYPICAL_SET, block_len, code_len, model.alphabet_size, spec)

    @classmethod
    def lz78(cls, alphabet_size: int, block_len: int, code_len: int) -> "Level0Codec":
        if code_len < 1:
            raise PlanInfeasible("the LZ78 level-0 word needs at least its flag bit")
        return cls(Level0Mode.LZ78_FIXED, block_len, code_len, alphabet_size)

    @property
    def lz_budget(self) -> int:
        return self.code_len - 1

    def encode(self, block: Sequence[int]) -> tuple[int, bool]:
        if len(block) != self.block_len:
            raise ValueError(f"level-0 block must hold {self.block_len} symbols, got {len(block)}")
        if self.mode is Level0Mode.TYPICAL_SET:
            ranker = typical_set(self.spec)
            symbols = [int(s) for s in block]
            if not ranker.contains(symbols):
                return 0, False
            return ranker.rank(symbols) + 1, True
        cw = lz78_encode(block, self.alphabet_size)
        if cw.bit_length > self.lz_budget:
            return 0, False
        word = bitarray(self.code_len, endian="big")
        word.setall(0)
        word[0] = 1
        body = cw.to_bits()
        word[1:1 + len(body)] = body
        return ba2int(word), True

    def decode(self, word: int) -> list[int] | NotStored:
        if word == 0:
            return NOT_STORED_HERE
        if word >> self.code_len:
            raise CorruptCodeword(f"level-0 word {word} wider than {self.code_len} bits")
        if self.mode is Level0Mode.TYPICAL_SET:
            try:
                return typical_set(self.spec).unrank(word - 1)
            except IndexOutOfRange as exc:
                raise CorruptCodeword(f"level-0 word {word} exceeds the typical set") from exc
        bits = int2ba(word, length=self.code_len, endian="big")
        if not bits[0]:
            raise CorruptCodeword("LZ78 level-0 word lacks its leading flag bit")
        cw = LZ78Codeword.from_bits(bits[1:], self.block_len, self.alphabet_size)
        return lz78_decode(cw, self.block_len)


def level0_encode(block: Sequence[int], codec: Level0Codec) -> tuple[int, bool]:
    return codec.encode(block)


def level0_decode(word: int, codec: Level0Codec) -> list[int] | NotStored:
    return codec.decode(word)


# ---------------------------------------------------------------------------
# Universal-mode k_0
# ---------------------------------------------------------------------------
def universal_slack_bounds(
    model: SourceModel,
    block_len: int,
    epsilon: int | float | str | Fraction,
    c: int | float | str | Fraction,
    bits: int,
) -> tuple[Fraction, Fraction]:
    """Rational bracket around xi(eps_0, b_0) = (2 + max log2 1/p) eps_0 + c log2 log2 b_0 / log2 b_0, for c >= 0."""
    if block_len < 4:
        raise PlanInfeasible(f"universal mode needs b_0 >= 4, got {block_len}")
    eps = as_fraction(epsilon)
    c = as_fraction(c)
    inv_lo, inv_hi = log2_bounds(model.max_inverse_probability, bits)
    len_lo, len_hi = log2_bounds(block_len, bits)
    nested_lo, nested_hi = log2_bounds(len_lo, bits)[0], log2_bounds(len_hi, bits)[1]
    return (2 + inv_lo) * eps + c * nested_lo / len_hi, (2 + inv_hi) * eps + c * nested_hi / len_lo


def universal_slack(model: SourceModel, block_len: int, epsilon: int | float | str | Fraction, c: int | float | str | Fraction = 1) -> float:
    """xi(eps_0, b_0) for reports."""
    return float(universal_slack_bounds(model, block_len, epsilon, c, 64)[1])


def universal_k0(model: SourceModel, block_len: int, epsilon: int | float | str | Fraction, c: int | float | str | Fraction = 1) -> int:
    """k_0 = ceil(b_0 (H + xi)), evaluated exactly."""

    def bounds(bits: int) -> tuple[Fraction, Fraction]:
        slack_lo, slack_hi = universal_slack_bounds(model, block_len, epsilon, c, bits)
        h_lo, h_hi = model.entropy_bounds(bits)
        return block_len * (h_lo + slack_lo), block_len * (h_hi + slack_hi)

    return exact_ceil(bounds)


def calibrate_universal_k0(
    model: SourceModel,
    block_len: int,
    epsilon: int | float | str | Fraction,
    samples: int,
    rng: np.random.Generator,
) -> int:
    """Smallest k_0 whose Monte Carlo failure rate Pr[l_LZ >= k_0] is at most eps^4."""
    if samples < 1:
        raise ValueError("calibration needs at least one sample")
    draws = model.sample(samples * block_len, rng).reshape(samples, block_len)
    lengths = np.sort(np.array([lz78_length(row, model.alphabet_size) for row in draws]))[::-1]
    allowed = math.floor(as_fraction(epsilon) ** 4 * samples)
    k0 = 1 if allowed >= samples else int(lengths[allowed]) + 1
    logger.info(
        "Calibrated universal k_0=%d for b_0=%d over %d samples (allowed failures %d)",
        k0, block_len, samples, allowed,
    )
    return k0
