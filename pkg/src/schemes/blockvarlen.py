"""
Fixed-length blocks with variable-length subblocks, and the naive baseline.

Scheme 2 cuts the message into blocks of ``b_0`` symbols and every block into
``m = b_0/b_1`` subblocks. Typical subblocks are stored as their typical-set
rank (``typ_len`` bits), the others raw (``raw_len`` bits). A rank dictionary
over the atypicality indicator locates any subblock's field. Each block
occupies exactly ``l_c = l_z + l_y`` bits::

    [valid bit][rank dictionary, padded][y: fields in order, zero-padded]

A block whose indicator is too dense, or whose fields overflow ``l_y``, is
stored as all zeros; the cleared valid bit marks it as errored.

The naive scheme stores every ``b``-symbol block as a single typical-set
word, with the all-zero word as the error mark.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from bitarray import bitarray
from bitarray.util import ba2int, int2ba, zeros

from src.coding.codecs import Level0Codec, NotStored, bit_width
from src.coding.enumcode import (
    SourceModel,
    TypicalSetSpec,
    as_fraction,
    exact_ceil,
    log2_bounds,
    pad_to_blocks,
    refill_block,
    typical_count,
    typical_probability,
    typical_set,
)
from src.coding.rankdict import RankDictLayout
from src.errors import BlockErrored, CorruptCodeword, EncodingIncomplete, IndexOutOfRange, OutOfRange, PlanInfeasible
from src.storage.bitstore import ProbeCounts, ProbeMeteredBits, pack_symbols, unpack_symbols

logger = logging.getLogger(__name__)


def _validate(symbols: Sequence[int] | np.ndarray, alphabet_size: int) -> np.ndarray:
    arr = np.asarray(symbols, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= alphabet_size):
        raise ValueError(f"symbols must lie in [0, {alphabet_size})")
    return arr


def ceil_log_width(c: int | float | str | Fraction, n: int) -> int:
    """ceil(c log2 n) for c >= 0, evaluated exactly."""
    c = as_fraction(c)
    return exact_ceil(lambda bits: tuple(c * v for v in log2_bounds(n, bits)))


def ceil_loglog_width(c: int | float | str | Fraction, n: int) -> int:
    """ceil(c log2 log2 n) for c >= 0 and n >= 4, evaluated exactly."""
    c = as_fraction(c)

    def bounds(bits: int) -> tuple[Fraction, Fraction]:
        lo, hi = log2_bounds(n, bits)
        return c * log2_bounds(lo, bits)[0], c * log2_bounds(hi, bits)[1]

    return exact_ceil(bounds)


def _uint(value: int, width: int) -> bitarray:
    return int2ba(value, length=width, endian="big") if width else bitarray(endian="big")


# ---------------------------------------------------------------------------
# Scheme 2
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BlockPlan2:
    model: SourceModel
    n: int
    eps0: Fraction
    b0: int
    b1: int
    y_len: int
    spec: TypicalSetSpec = field(init=False)
    layout: RankDictLayout = field(init=False)

    def __post_init__(self) -> None:
        if not 0 < self.eps0 <= Fraction(1, 2):
            raise PlanInfeasible(f"eps_0 must lie in (0, 1/2], got {self.eps0}")
        if self.b1 < 1 or self.b0 % self.b1:
            raise PlanInfeasible(f"b_1 = {self.b1} must divide b_0 = {self.b0}")
        if self.n < 1:
            raise PlanInfeasible("message length must be positive")
        object.__setattr__(self, "spec", TypicalSetSpec.for_model(self.model, self.b1, self.eps0))
        object.__setattr__(self, "layout", RankDictLayout.for_length(self.m, self.alpha))
        if typical_count(self.spec) == 0:
            raise PlanInfeasible(f"no sequence of length {self.b1} is {self.eps0}-typical")
        if self.typ_len >= self.raw_len:
            raise PlanInfeasible(
                f"typical fields ({self.typ_len} bits) are no shorter than raw ones ({self.raw_len} bits)"
            )

    @property
    def m(self) -> int:
        return self.b0 // self.b1

    @property
    def alpha(self) -> Fraction:
        return 2 * self.eps0

    @property
    def max_atypical(self) -> int:
        return self.layout.max_weight

    @property
    def symbol_width(self) -> int:
        return bit_width(self.model.alphabet_size)

    @property
    def typ_len(self) -> int:
        return bit_width(typical_count(self.spec))

    @property
    def raw_len(self) -> int:
        return self.b1 * self.symbol_width

    @property
    def z_len(self) -> int:
        return 1 + self.layout.fixed_bits

    @property
    def block_bits(self) -> int:
        return self.z_len + self.y_len

    @property
    def n_blocks(self) -> int:
        return -(-self.n // self.b0)

    @property
    def padded_length(self) -> int:
        return self.n_blocks * self.b0

    @property
    def pad(self) -> int:
        return self.padded_length - self.n

    @property
    def total_bits(self) -> int:
        return self.n_blocks * self.block_bits

    @property
    def rate(self) -> Fraction:
        return Fraction(self.block_bits, self.b0)

    @property
    def decode_probe_bound(self) -> int:
        """Valid bit, two rank probes and one raw field."""
        return 1 + 2 * self.layout.probe_bound + self.raw_len

    def block_offset(self, block: int) -> int:
        return block * self.block_bits


def default_y_len(model: SourceModel, eps0: Fraction, b0: int, b1: int, typ_len: int) -> int:
    """ceil((1 - 2 eps)(H + eps) b_0 + 2 eps b_0 log2|X|), never below m typical fields."""
    eps = as_fraction(eps0)

    def bounds(bits: int) -> tuple[Fraction, Fraction]:
        (h_lo, h_hi), (x_lo, x_hi) = model.entropy_bounds(bits), log2_bounds(model.alphabet_size, bits)
        return (
            (1 - 2 * eps) * (h_lo + eps) * b0 + 2 * eps * b0 * x_lo,
            (1 - 2 * eps) * (h_hi + eps) * b0 + 2 * eps * b0 * x_hi,
        )

    formula = exact_ceil(bounds)
    return max(formula, (b0 // b1) * typ_len)


def make_plan2(
    model: SourceModel,
    eps0: int | float | str | Fraction,
    n: int,
    *,
    c0: int | float | str | Fraction = 8,
    c1: int | float | str | Fraction = 4,
    b0: int | None = None,
    b1: int | None = None,
    y_len: int | None = None,
) -> BlockPlan2:
    """b_0 = ceil(c_0 log2 n), b_1 = ceil(c_1 log2 log2 n), b_0 rounded up to a multiple of b_1."""
    eps0 = as_fraction(eps0)
    if b1 is None:
        if n < 4:
            raise PlanInfeasible(f"message length {n} is too short for a log log n subblock")
        b1 = ceil_loglog_width(c1, n)
    if b0 is None:
        b0 = ceil_log_width(c0, n)
    b1 = max(1, b1)
    b0 = -(-b0 // b1) * b1
    if y_len is None:
        spec = TypicalSetSpec.for_model(model, b1, eps0)
        y_len = default_y_len(model, eps0, b0, b1, bit_width(typical_count(spec)))
    plan = BlockPlan2(model, n, eps0, b0, b1, y_len)
    logger.debug(
        "Block plan: b0=%d b1=%d typ=%d raw=%d l_y=%d l_z=%d",
        plan.b0, plan.b1, plan.typ_len, plan.raw_len, plan.y_len, plan.z_len,
    )
    return plan


def _encode_block2(block: np.ndarray, plan: BlockPlan2) -> tuple[bitarray, bool]:
    """Serialized ``l_c`` bits of one block and whether it is valid."""
    ranker = typical_set(plan.spec)
    indicator = bitarray(endian="big")
    fields = bitarray(endian="big")
    for j in range(plan.m):
        sub = [int(s) for s in block[j * plan.b1:(j + 1) * plan.b1]]
        if ranker.contains(sub):
            indicator.append(0)
            fields += _uint(ranker.rank(sub), plan.typ_len)
        else:
            indicator.append(1)
            fields += pack_symbols(sub, plan.symbol_width)
    if indicator.count() > plan.max_atypical or len(fields) > plan.y_len:
        return zeros(plan.block_bits, endian="big"), False
    z = bitarray("1", endian="big") + plan.layout.serialize(indicator, pad=True)
    return z + fields + zeros(plan.y_len - len(fields), endian="big"), True


@dataclass
class Scheme2Stats:
    errored_blocks: list[int]
    atypical_subblocks: int


def encode2_with_stats(
    symbols: Sequence[int] | np.ndarray,
    plan: BlockPlan2,
    *,
    track_distinct: bool = False,
) -> tuple[ProbeMeteredBits, Scheme2Stats]:
    arr = _validate(symbols, plan.model.alphabet_size)
    if arr.size != plan.n:
        raise ValueError(f"message holds {arr.size} symbols, plan expects {plan.n}")
    padded = pad_to_blocks(arr, plan.padded_length, plan.spec)
    payload = bitarray(endian="big")
    errored = []
    ranker = typical_set(plan.spec)
    atypical = 0
    for i in range(plan.n_blocks):
        block = padded[i * plan.b0:(i + 1) * plan.b0]
        bits, valid = _encode_block2(block, plan)
        if not valid:
            errored.append(i)
        atypical += sum(
            not ranker.contains([int(s) for s in block[j * plan.b1:(j + 1) * plan.b1]]) for j in range(plan.m)
        )
        payload += bits
    if errored:
        logger.info("%d of %d blocks are errored", len(errored), plan.n_blocks)
    return ProbeMeteredBits(plan.total_bits, payload=payload, track_distinct=track_distinct), Scheme2Stats(
        errored, atypical
    )


def encode2(
    symbols: Sequence[int] | np.ndarray,
    plan: BlockPlan2,
    *,
    strict: bool = False,
    track_distinct: bool = False,
) -> ProbeMeteredBits:
    """Encode; with ``strict`` any errored block raises :class:`EncodingIncomplete`."""
    buf, stats = encode2_with_stats(symbols, plan, track_distinct=track_distinct)
    if strict and stats.errored_blocks:
        first = stats.errored_blocks[0]
        raise EncodingIncomplete(
            f"{len(stats.errored_blocks)} blocks are errored", partial=(buf, stats), position=first * plan.b0
        )
    return buf


def _decode_field(bits: bitarray, atypical: bool, plan: BlockPlan2) -> np.ndarray:
    if atypical:
        return unpack_symbols(bits, plan.symbol_width)
    try:
        return np.asarray(typical_set(plan.spec).unrank(ba2int(bits) if len(bits) else 0), dtype=np.int64)
    except IndexOutOfRange as exc:
        raise CorruptCodeword(f"typical field {bits.to01()} exceeds the typical set") from exc


def _decode_block2(buf: ProbeMeteredBits, plan: BlockPlan2, block: int) -> np.ndarray:
    base = plan.block_offset(block)
    if not buf.read_bits(base, 1):
        raise BlockErrored(f"block {block} is errored")
    indicator = plan.layout.reconstruct(buf, base + 1)
    y = buf.read_span(base + plan.z_len, plan.y_len)
    out = []
    pos = 0
    for atypical in indicator:
        width = plan.raw_len if atypical else plan.typ_len
        if pos + width > plan.y_len:
            raise CorruptCodeword(f"block {block} fields overrun l_y")
        out.append(_decode_field(y[pos:pos + width], bool(atypical), plan))
        pos += width
    return np.concatenate(out)


def decode2(buf: ProbeMeteredBits, plan: BlockPlan2) -> np.ndarray:
    if buf.length_bits < plan.total_bits:
        raise CorruptCodeword(f"codeword has {buf.length_bits} bits, plan needs {plan.total_bits}")
    blocks = [_decode_block2(buf, plan, i) for i in range(plan.n_blocks)]
    return np.concatenate(blocks)[:plan.n]


class _BlockReader:
    """Reads inside one block; each bit is charged to the buffer at most once."""

    def __init__(self, buf: ProbeMeteredBits, base: int, length: int) -> None:
        self.buf = buf
        self.base = base
        self._bits = zeros(length, endian="big")
        self._loaded = zeros(length, endian="big")

    def read_span(self, offset: int, width: int) -> bitarray:
        lo = offset - self.base
        if lo < 0 or width < 0 or lo + width > len(self._bits):
            raise OutOfRange(f"bit window [{offset}, {offset + width}) outside the block at {self.base}")
        i = lo
        while i < lo + width:
            if self._loaded[i]:
                i += 1
                continue
            j = i
            while j < lo + width and not self._loaded[j]:
                j += 1
            self._bits[i:j] = self.buf.read_span(self.base + i, j - i)
            self._loaded[i:j] = 1
            i = j
        return self._bits[lo:lo + width]

    def read_bits(self, offset: int, width: int) -> int:
        return ba2int(self.read_span(offset, width)) if width else 0


def _field_location(buf: ProbeMeteredBits, plan: BlockPlan2, block: int, sub: int) -> tuple[int, bool]:
    """Bit offset of subblock ``sub``'s field and whether it is stored raw."""
    if not 0 <= block < plan.n_blocks or not 0 <= sub < plan.m:
        raise OutOfRange(f"subblock ({block}, {sub}) outside {plan.n_blocks} x {plan.m}")
    base = plan.block_offset(block)
    if not buf.read_bits(base, 1):
        raise BlockErrored(f"block {block} is errored; re-compress to recover it")
    before, at = plan.layout.rank_pair(buf, base + 1, sub + 1)
    atypical = at - before == 1
    offset = before * plan.raw_len + (sub - before) * plan.typ_len
    width = plan.raw_len if atypical else plan.typ_len
    if offset + width > plan.y_len:
        raise CorruptCodeword(f"subblock ({block}, {sub}) field overruns l_y")
    return base + plan.z_len + offset, atypical


def local_decode_subblock(
    buf: ProbeMeteredBits,
    plan: BlockPlan2,
    block: int,
    sub: int,
) -> tuple[np.ndarray, int]:
    with buf.probe_scope() as scope:
        start, atypical = _field_location(buf, plan, block, sub)
        width = plan.raw_len if atypical else plan.typ_len
        symbols = _decode_field(buf.read_span(start, width), atypical, plan)
    return symbols, scope.reads


def _subblock_range(b1: int, start: int, length: int) -> range:
    return range(start // b1, (start + length - 1) // b1 + 1)


def local_decode_range2(buf: ProbeMeteredBits, plan: BlockPlan2, start: int, length: int) -> tuple[np.ndarray, int]:
    if start < 0 or length < 0 or start + length > plan.n:
        raise OutOfRange(f"range [{start}, {start + length}) outside message of {plan.n} symbols")
    if length == 0:
        return np.zeros(0, dtype=np.int64), 0
    with buf.probe_scope() as scope:
        parts = [
            local_decode_subblock(buf, plan, q // plan.m, q % plan.m)[0]
            for q in _subblock_range(plan.b1, start, length)
        ]
    skip = start - (start // plan.b1) * plan.b1
    return np.concatenate(parts)[skip:skip + length], scope.reads


def local_update_subblock(
    buf: ProbeMeteredBits,
    plan: BlockPlan2,
    block: int,
    sub: int,
    new: Sequence[int] | np.ndarray,
    *,
    strict: bool = True,
) -> ProbeCounts:
    """Replace one subblock; the block afterwards equals a fresh encode of it.

    Each block bit is read at most once, so a class flip, which rewrites the
    whole block, costs at most l_c reads and l_c writes. If the rewritten
    block would be errored, ``strict`` raises :class:`EncodingIncomplete`
    before any write; otherwise the errored form is written.
    """
    new = _validate(new, plan.model.alphabet_size)
    if new.size != plan.b1:
        raise ValueError(f"subblock must hold {plan.b1} symbols, got {new.size}")
    new = refill_block(new, plan.n - block * plan.b0 - sub * plan.b1, plan.spec)
    ranker = typical_set(plan.spec)
    new_list = [int(s) for s in new]
    new_atypical = not ranker.contains(new_list)
    if not 0 <= block < plan.n_blocks:
        raise OutOfRange(f"block {block} outside [0, {plan.n_blocks})")
    reader = _BlockReader(buf, plan.block_offset(block), plan.block_bits)
    with buf.probe_scope() as scope:
        start, old_atypical = _field_location(reader, plan, block, sub)
        if old_atypical == new_atypical:
            if new_atypical:
                buf.write_span(start, pack_symbols(new_list, plan.symbol_width))
            else:
                buf.write_bits(start, plan.typ_len, ranker.rank(new_list))
        else:
            content = _decode_block2(reader, plan, block)
            content[sub * plan.b1:(sub + 1) * plan.b1] = new
            bits, valid = _encode_block2(content, plan)
            if not valid and strict:
                raise EncodingIncomplete(
                    f"update drives block {block} into the errored state", position=block * plan.b0 + sub * plan.b1
                )
            buf.write_span(plan.block_offset(block), bits)
    return scope.counts


def local_update_range2(
    buf: ProbeMeteredBits,
    plan: BlockPlan2,
    start: int,
    symbols: Sequence[int] | np.ndarray,
    *,
    strict: bool = True,
) -> ProbeCounts:
    symbols = _validate(symbols, plan.model.alphabet_size)
    length = int(symbols.size)
    if start < 0 or start + length > plan.n:
        raise OutOfRange(f"range [{start}, {start + length}) outside message of {plan.n} symbols")
    if length == 0:
        return ProbeCounts()
    b1 = plan.b1
    with buf.probe_scope() as scope:
        for q in _subblock_range(b1, start, length):
            lo, hi = max(start, q * b1), min(start + length, (q + 1) * b1)
            if hi - lo == b1:
                merged = symbols[lo - start:hi - start]
            else:
                merged, _ = local_decode_subblock(buf, plan, q // plan.m, q % plan.m)
                merged = merged.copy()
                merged[lo - q * b1:hi - q * b1] = symbols[lo - start:hi - start]
            local_update_subblock(buf, plan, q // plan.m, q % plan.m, merged, strict=strict)
    return scope.counts


def _binomial_tail(trials: int, prob: float, above: int) -> float:
    """Pr[Bin(trials, prob) > above]."""
    return float(sum(math.comb(trials, k) * prob ** k * (1 - prob) ** (trials - k) for k in range(above + 1, trials + 1)))


def calibrate_blockvar_constants(
    model: SourceModel,
    eps0: int | float | str | Fraction,
    n: int,
    *,
    limit: int = 64,
) -> tuple[int, int]:
    """Smallest integer (c_0, c_1) meeting the desk-scale error targets.

    c_1 keeps subblock atypicality at most 1/log2^2 n; c_0 then keeps the
    probability of an over-dense indicator at most n^-2.
    """
    eps0 = as_fraction(eps0)
    log_n = math.log2(n)
    target_sub = 1 / log_n ** 2
    for c1 in range(1, limit + 1):
        b1 = ceil_loglog_width(c1, n)
        spec = TypicalSetSpec.for_model(model, b1, eps0)
        atypicality = 1 - typical_probability(spec)
        if atypicality <= target_sub:
            break
    else:
        raise PlanInfeasible(f"no c_1 <= {limit} brings subblock atypicality under {target_sub:.4g}")
    for c0 in range(1, limit + 1):
        b0 = -(-ceil_log_width(c0, n) // b1) * b1
        m = b0 // b1
        if _binomial_tail(m, atypicality, math.floor(2 * eps0 * m)) <= n ** -2:
            logger.info("Calibrated blockvar constants c0=%d c1=%d for n=%d", c0, c1, n)
            return c0, c1
    raise PlanInfeasible(f"no c_0 <= {limit} brings the block error under n^-2")


# ---------------------------------------------------------------------------
# Naive fixed-block baseline
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class NaivePlan:
    model: SourceModel
    n: int
    codec: Level0Codec

    @property
    def block_len(self) -> int:
        return self.codec.block_len

    @property
    def code_len(self) -> int:
        return self.codec.code_len

    @property
    def eps0(self) -> Fraction:
        return self.codec.spec.epsilon

    @property
    def n_blocks(self) -> int:
        return -(-self.n // self.block_len)

    @property
    def padded_length(self) -> int:
        return self.n_blocks * self.block_len

    @property
    def pad(self) -> int:
        return self.padded_length - self.n

    @property
    def total_bits(self) -> int:
        return self.n_blocks * self.code_len

    @property
    def rate(self) -> Fraction:
        return Fraction(self.code_len, self.block_len)


def make_naive_plan(
    model: SourceModel,
    eps0: int | float | str | Fraction,
    n: int,
    *,
    c: int | float | str | Fraction = 8,
    block_len: int | None = None,
) -> NaivePlan:
    """b = ceil(c log2 n), k = ceil((H + eps) b)."""
    if n < 2 and block_len is None:
        raise PlanInfeasible("the naive block length needs n >= 2")
    if block_len is None:
        block_len = ceil_log_width(c, n)
    eps0 = as_fraction(eps0)
    if not 0 < eps0 <= Fraction(1, 2):
        raise PlanInfeasible(f"eps_0 must lie in (0, 1/2], got {eps0}")
    return NaivePlan(model, n, Level0Codec.typical(model, block_len, eps0))


def naive_encode_with_errors(symbols: Sequence[int] | np.ndarray, plan: NaivePlan) -> tuple[ProbeMeteredBits, list[int]]:
    arr = _validate(symbols, plan.model.alphabet_size)
    if arr.size != plan.n:
        raise ValueError(f"message holds {arr.size} symbols, plan expects {plan.n}")
    padded = pad_to_blocks(arr, plan.padded_length, plan.codec.spec)
    buf = ProbeMeteredBits(plan.total_bits)
    errored = []
    for i in range(plan.n_blocks):
        word, stored = plan.codec.encode(padded[i * plan.block_len:(i + 1) * plan.block_len])
        if stored:
            buf.write_bits(i * plan.code_len, plan.code_len, word)
        else:
            errored.append(i)
    buf.reset_counters()
    return buf, errored


def naive_encode(symbols: Sequence[int] | np.ndarray, plan: NaivePlan, *, strict: bool = False) -> ProbeMeteredBits:
    buf, errored = naive_encode_with_errors(symbols, plan)
    if strict and errored:
        raise EncodingIncomplete(f"{len(errored)} naive blocks are atypical", partial=buf, position=errored[0] * plan.block_len)
    return buf


def _naive_block(buf: ProbeMeteredBits, plan: NaivePlan, block: int) -> np.ndarray:
    decoded = plan.codec.decode(buf.read_bits(block * plan.code_len, plan.code_len))
    if isinstance(decoded, NotStored):
        raise BlockErrored(f"naive block {block} is errored")
    return np.asarray(decoded, dtype=np.int64)


def naive_decode(buf: ProbeMeteredBits, plan: NaivePlan) -> np.ndarray:
    return np.concatenate([_naive_block(buf, plan, i) for i in range(plan.n_blocks)])[:plan.n]


def naive_local_decode(buf: ProbeMeteredBits, plan: NaivePlan, start: int, length: int) -> tuple[np.ndarray, int]:
    if start < 0 or length < 0 or start + length > plan.n:
        raise OutOfRange(f"range [{start}, {start + length}) outside message of {plan.n} symbols")
    if length == 0:
        return np.zeros(0, dtype=np.int64), 0
    b = plan.block_len
    with buf.probe_scope() as scope:
        parts = [_naive_block(buf, plan, i) for i in range(start // b, (start + length - 1) // b + 1)]
    skip = start - (start // b) * b
    return np.concatenate(parts)[skip:skip + length], scope.reads


def naive_local_update(
    buf: ProbeMeteredBits,
    plan: NaivePlan,
    start: int,
    symbols: Sequence[int] | np.ndarray,
    *,
    strict: bool = True,
) -> ProbeCounts:
    symbols = _validate(symbols, plan.model.alphabet_size)
    length = int(symbols.size)
    if start < 0 or start + length > plan.n:
        raise OutOfRange(f"range [{start}, {start + length}) outside message of {plan.n} symbols")
    b = plan.block_len
    with buf.probe_scope() as scope:
        for i in range(start // b, (start + length - 1) // b + 1) if length else ():
            lo, hi = max(start, i * b), min(start + length, (i + 1) * b)
            if hi - lo == b:
                block = symbols[lo - start:hi - start]
            else:
                block = _naive_block(buf, plan, i).copy()
                block[lo - i * b:hi - i * b] = symbols[lo - start:hi - start]
            block = refill_block(block, plan.n - i * b, plan.codec.spec)
            word, stored = plan.codec.encode(block)
            if not stored and strict:
                raise EncodingIncomplete(f"naive block {i} becomes atypical", position=i * b)
            buf.write_bits(i * plan.code_len, plan.code_len, word)
    return scope.counts
