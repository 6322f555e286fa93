"""
Multilevel fixed-length scheme: the level ladder, the psi group code and the
global encoder/decoder.

Level 0 codes each ``b_0``-symbol block on its own. A block that level 0
absorbs is replaced by the diamond sentinel in the working message. Each
level above groups ``b_l`` blocks of the level below and, when few enough of
them are still non-diamond, stores those residual blocks verbatim in a psi
word. The codeword is the concatenation of all level regions::

    [level 0: N/n_0 words of k_0 bits][level 1: N/n_1 words of k_1 bits] ...

where ``N`` is the message length padded to a multiple of ``n_lmax``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from bitarray import bitarray
from bitarray.util import ba2int

from src.coding.codecs import Level0Codec, Level0Mode, NotStored, bit_width, universal_k0
from src.coding.enumcode import SourceModel, as_fraction, lemma_block_length, pad_to_blocks
from src.errors import CorruptCodeword, EncodingIncomplete, PlanInfeasible, TooManyResiduals
from src.storage.bitstore import ProbeMeteredBits, pack_symbols, unpack_symbols

logger = logging.getLogger(__name__)

MAX_EPSILON = Fraction(1, 2)


@dataclass(frozen=True)
class PsiGeometry:
    """Shape of one psi word: ``b`` sub-blocks of ``m`` symbols, ``p`` payload slots."""

    b: int
    m: int
    p: int
    width: int
    diamond: int

    @property
    def length(self) -> int:
        return self.b + self.p * self.m * self.width

    @property
    def slot_bits(self) -> int:
        return self.m * self.width


def live_subblocks(group: np.ndarray, geometry: PsiGeometry) -> np.ndarray:
    rows = np.asarray(group, dtype=np.int64).reshape(geometry.b, geometry.m)
    return ~np.all(rows == geometry.diamond, axis=1)


def psi_encode(group: Sequence[int] | np.ndarray, geometry: PsiGeometry) -> bitarray:
    """Indicator of the non-diamond sub-blocks, then those sub-blocks, then diamond padding."""
    rows = np.asarray(group, dtype=np.int64).reshape(geometry.b, geometry.m)
    live = live_subblocks(rows, geometry)
    k = int(live.sum())
    if k > geometry.p:
        raise TooManyResiduals(f"{k} non-diamond sub-blocks exceed the {geometry.p} payload slots")
    indicator = bitarray([bool(v) for v in live], endian="big")
    padding = np.full((geometry.p - k, geometry.m), geometry.diamond, dtype=np.int64)
    payload = np.concatenate([rows[live], padding]).ravel()
    return indicator + pack_symbols(payload, geometry.width)


def psi_decode(bits: bitarray, geometry: PsiGeometry) -> np.ndarray:
    if len(bits) != geometry.length:
        raise CorruptCodeword(f"psi word has {len(bits)} bits, expected {geometry.length}")
    indicator = bits[:geometry.b]
    k = indicator.count()
    if k > geometry.p:
        raise CorruptCodeword(f"psi indicator flags {k} sub-blocks, capacity is {geometry.p}")
    slots = unpack_symbols(bits[geometry.b:], geometry.width).reshape(geometry.p, geometry.m)
    if np.any(slots > geometry.diamond):
        raise CorruptCodeword("psi payload holds a symbol code outside the extended alphabet")
    stored, padding = slots[:k], slots[k:]
    if np.any(padding != geometry.diamond):
        raise CorruptCodeword("psi padding slot is not all-diamond")
    if k and np.any(np.all(stored == geometry.diamond, axis=1)):
        raise CorruptCodeword("psi payload stores a diamond block")
    rows = np.full((geometry.b, geometry.m), geometry.diamond, dtype=np.int64)
    rows[np.flatnonzero(np.frombuffer(indicator.unpack(), dtype=np.uint8))] = stored
    return rows.ravel()


@dataclass(frozen=True)
class LevelPlan:
    """The parameter ladder (eps_l, b_l, n_l, k_l) for l = 0..l_max."""

    model: SourceModel
    level0: Level0Codec
    n: int
    epsilons: tuple[Fraction, ...]
    blocks: tuple[int, ...]
    sizes: tuple[int, ...] = field(init=False)
    code_lens: tuple[int, ...] = field(init=False)
    pad_slots: tuple[int, ...] = field(init=False)
    thresholds: tuple[int, ...] = field(init=False)
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if len(self.epsilons) != len(self.blocks):
            raise ValueError("every level needs both an epsilon and a block count")
        if self.blocks[0] != self.level0.block_len:
            raise ValueError("b_0 must equal the level-0 codec block length")
        if self.n < 1:
            raise PlanInfeasible("message length must be positive")
        sizes = [self.blocks[0]]
        for b in self.blocks[1:]:
            sizes.append(sizes[-1] * b)
        width = self.symbol_width
        code_lens = [self.level0.code_len]
        pad_slots = [0]
        thresholds = [0]
        for level in range(1, len(self.blocks)):
            slack = self.epsilons[level] * self.blocks[level]
            p = math.ceil(slack)
            if p < 1:
                raise PlanInfeasible(f"level {level} has no payload slot (eps_l b_l = {slack})")
            pad_slots.append(p)
            thresholds.append(math.floor(slack))
            code_lens.append(self.blocks[level] + p * sizes[level - 1] * width)
        object.__setattr__(self, "sizes", tuple(sizes))
        object.__setattr__(self, "code_lens", tuple(code_lens))
        object.__setattr__(self, "pad_slots", tuple(pad_slots))
        object.__setattr__(self, "thresholds", tuple(thresholds))
        padded = self.padded_length
        offsets = [0]
        for level in range(len(self.blocks) - 1):
            offsets.append(offsets[-1] + code_lens[level] * (padded // sizes[level]))
        object.__setattr__(self, "offsets", tuple(offsets))

    @classmethod
    def from_ladder(
        cls,
        model: SourceModel,
        level0: Level0Codec,
        n: int,
        epsilons: Sequence[int | float | str | Fraction],
        blocks: Sequence[int],
        eps0: int | float | str | Fraction | None = None,
    ) -> "LevelPlan":
        """Plan over an explicit ladder; ``epsilons``/``blocks`` list levels 1..l_max."""
        if eps0 is None:
            eps0 = level0.spec.epsilon if level0.spec is not None else 2 * as_fraction(epsilons[0])
        eps = (as_fraction(eps0),) + tuple(as_fraction(e) for e in epsilons)
        return cls(model, level0, n, eps, (level0.block_len,) + tuple(int(b) for b in blocks))

    # --------------------------------------------------------------- ladder
    @property
    def level_max(self) -> int:
        return len(self.blocks) - 1

    @property
    def alphabet_size(self) -> int:
        return self.model.alphabet_size

    @property
    def diamond(self) -> int:
        return self.alphabet_size

    @property
    def symbol_width(self) -> int:
        return bit_width(self.alphabet_size + 1)

    @property
    def mode(self) -> Level0Mode:
        return self.level0.mode

    @property
    def b0(self) -> int:
        return self.blocks[0]

    @property
    def k0(self) -> int:
        return self.code_lens[0]

    @property
    def padded_length(self) -> int:
        top = self.sizes[-1]
        return -(-self.n // top) * top

    @property
    def pad(self) -> int:
        return self.padded_length - self.n

    def group_count(self, level: int) -> int:
        return self.padded_length // self.sizes[level]

    def ratio(self, level: int) -> int:
        """Level-0 blocks per level-``level`` block."""
        return self.sizes[level] // self.sizes[0]

    def word_offset(self, level: int, group: int) -> int:
        return self.offsets[level] + group * self.code_lens[level]

    def psi(self, level: int) -> PsiGeometry:
        return PsiGeometry(
            b=self.blocks[level],
            m=self.sizes[level - 1],
            p=self.pad_slots[level],
            width=self.symbol_width,
            diamond=self.diamond,
        )

    @property
    def total_bits(self) -> int:
        return sum(k * self.group_count(level) for level, k in enumerate(self.code_lens))

    @property
    def rate(self) -> Fraction:
        return sum((Fraction(k, n) for k, n in zip(self.code_lens, self.sizes)), Fraction(0))

    @property
    def rate_bound(self) -> float:
        """H + eps_0 (2 + log2(|X| + 1)), before integer ceilings."""
        return self.model.entropy + float(self.eps0) * (2 + math.log2(self.alphabet_size + 1))

    @property
    def eps0(self) -> Fraction:
        return self.epsilons[0]

    def pad_message(self, symbols: Sequence[int] | np.ndarray) -> np.ndarray:
        arr = np.asarray(symbols, dtype=np.int64)
        if arr.size != self.n:
            raise ValueError(f"message holds {arr.size} symbols, plan expects {self.n}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.alphabet_size):
            raise ValueError(f"message symbols must lie in [0, {self.alphabet_size})")
        return pad_to_blocks(arr, self.padded_length, self.level0.spec)


def make_plan(
    model: SourceModel,
    eps0: int | float | str | Fraction,
    n: int,
    mode: Level0Mode | str = Level0Mode.TYPICAL_SET,
    *,
    b0: int | None = None,
    k0: int | None = None,
    lz_constant: int | float | str | Fraction = 1,
    max_level: int | None = None,
) -> LevelPlan:
    """Standard ladder: eps_l = eps_{l-1}/2, b_l = 4 b_{l-1}, up to the largest n_l <= n."""
    eps0 = as_fraction(eps0)
    mode = Level0Mode(mode)
    if not 0 < eps0 <= MAX_EPSILON:
        raise PlanInfeasible(f"eps_0 must lie in (0, 1/2], got {eps0}")
    if b0 is None:
        b0 = lemma_block_length(model, eps0)
    if n < b0:
        raise PlanInfeasible(f"message length {n} is shorter than one level-0 block ({b0})")
    if mode is Level0Mode.TYPICAL_SET:
        codec = Level0Codec.typical(model, b0, eps0, k0)
    else:
        if k0 is None:
            k0 = universal_k0(model, b0, eps0, lz_constant)
        codec = Level0Codec.lz78(model.alphabet_size, b0, k0)

    epsilons = [eps0]
    blocks = [b0]
    size = b0
    while max_level is None or len(blocks) <= max_level:
        b_next = 4 * blocks[-1]
        if size * b_next > n:
            break
        epsilons.append(epsilons[-1] / 2)
        blocks.append(b_next)
        size *= b_next
    plan = LevelPlan(model, codec, n, tuple(epsilons), tuple(blocks))
    logger.debug(
        "Plan: n=%d b=%s k=%s l_max=%d total_bits=%d", n, plan.blocks, plan.code_lens, plan.level_max, plan.total_bits
    )
    return plan


class WorkingMessage:
    """Symbols over X plus the diamond sentinel (code |X|)."""

    def __init__(self, symbols: np.ndarray, alphabet_size: int) -> None:
        self.symbols = np.array(symbols, dtype=np.int64)
        self.diamond = alphabet_size

    def block(self, size: int, index: int) -> np.ndarray:
        return self.symbols[index * size:(index + 1) * size]

    def clear(self, size: int, index: int) -> None:
        self.symbols[index * size:(index + 1) * size] = self.diamond

    def is_diamond(self, size: int, index: int) -> bool:
        return bool(np.all(self.block(size, index) == self.diamond))

    @property
    def non_diamond_count(self) -> int:
        return int(np.count_nonzero(self.symbols != self.diamond))


@dataclass
class EncodeStats:
    """Where every level-0 block ended up, and how fast the message drained."""

    block_levels: np.ndarray
    residual_symbols: list[int]
    typical_groups: list[int]

    def level_histogram(self, level_max: int) -> np.ndarray:
        stored = self.block_levels[self.block_levels >= 0]
        counts = np.bincount(stored, minlength=level_max + 1)
        return counts / max(1, self.block_levels.size)


def encode_with_stats(
    symbols: Sequence[int] | np.ndarray,
    plan: LevelPlan,
    *,
    track_distinct: bool = False,
) -> tuple[ProbeMeteredBits, EncodeStats]:
    message = WorkingMessage(plan.pad_message(symbols), plan.alphabet_size)
    buf = ProbeMeteredBits(plan.total_bits, track_distinct=track_distinct)
    n0 = plan.sizes[0]
    levels = np.full(plan.group_count(0), -1, dtype=np.int64)
    residual = []
    typical_groups = []

    typical = 0
    for j in range(plan.group_count(0)):
        word, stored = plan.level0.encode(message.block(n0, j))
        if stored:
            buf.write_bits(plan.word_offset(0, j), plan.k0, word)
            message.clear(n0, j)
            levels[j] = 0
            typical += 1
    residual.append(message.non_diamond_count)
    typical_groups.append(typical)

    for level in range(1, plan.level_max + 1):
        geometry = plan.psi(level)
        size = plan.sizes[level]
        ratio = plan.ratio(level)
        typical = 0
        for g in range(plan.group_count(level)):
            group = message.block(size, g)
            live = live_subblocks(group, geometry)
            if int(live.sum()) > plan.thresholds[level]:
                continue
            buf.write_span(plan.word_offset(level, g), psi_encode(group, geometry))
            span = levels[g * ratio:(g + 1) * ratio]
            span[span < 0] = level
            message.clear(size, g)
            typical += 1
        residual.append(message.non_diamond_count)
        typical_groups.append(typical)

    stats = EncodeStats(levels, residual, typical_groups)
    if message.non_diamond_count:
        position = int(np.flatnonzero(message.symbols != message.diamond)[0])
        logger.info("Encoding incomplete: %d symbols survive level %d", message.non_diamond_count, plan.level_max)
        raise EncodingIncomplete(
            f"{message.non_diamond_count} symbols survive the top level",
            partial=(buf, stats),
            position=position,
        )
    buf.reset_counters()
    return buf, stats


def encode(symbols: Sequence[int] | np.ndarray, plan: LevelPlan, *, track_distinct: bool = False) -> ProbeMeteredBits:
    return encode_with_stats(symbols, plan, track_distinct=track_distinct)[0]


class _Decoder:
    """Top-down reconstruction; every word is read at most once."""

    def __init__(self, buf: ProbeMeteredBits, plan: LevelPlan) -> None:
        self.buf = buf
        self.plan = plan
        self.out = np.full(plan.padded_length, -1, dtype=np.int64)

    def word(self, level: int, group: int) -> bitarray:
        return self.buf.read_span(self.plan.word_offset(level, group), self.plan.code_lens[level])

    def recover(self, level: int, group: int) -> None:
        """Restore the message over a block known to be consumed at or below ``level``."""
        plan = self.plan
        word = self.word(level, group)
        if level == 0:
            decoded = plan.level0.decode(ba2int(word))
            if isinstance(decoded, NotStored):
                raise CorruptCodeword(f"level-0 block {group} is stored nowhere")
            self.out[group * plan.b0:(group + 1) * plan.b0] = decoded
            return
        first = group * plan.blocks[level]
        if not word.any():
            for child in range(first, first + plan.blocks[level]):
                self.recover(level - 1, child)
            return
        content = psi_decode(word, plan.psi(level))
        size = plan.sizes[level - 1]
        for k in range(plan.blocks[level]):
            self.fill(level - 1, first + k, content[k * size:(k + 1) * size])

    def fill(self, level: int, block: int, content: np.ndarray) -> None:
        """``content`` is the working message over ``block`` after its own level ran."""
        plan = self.plan
        if np.all(content == plan.diamond):
            self.recover(level, block)
            return
        if level == 0:
            if np.any(content == plan.diamond):
                raise CorruptCodeword(f"level-0 block {block} is partially diamond")
            self.out[block * plan.b0:(block + 1) * plan.b0] = content
            return
        size = plan.sizes[level - 1]
        first = block * plan.blocks[level]
        for k in range(plan.blocks[level]):
            self.fill(level - 1, first + k, content[k * size:(k + 1) * size])


def decode(buf: ProbeMeteredBits, plan: LevelPlan) -> np.ndarray:
    if buf.length_bits < plan.total_bits:
        raise CorruptCodeword(f"codeword has {buf.length_bits} bits, plan needs {plan.total_bits}")
    decoder = _Decoder(buf, plan)
    for g in range(plan.group_count(plan.level_max)):
        decoder.recover(plan.level_max, g)
    return decoder.out[:plan.n].copy()
