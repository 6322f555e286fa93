"""
Enumerative coding: source models, typical-set counting/ranking and
binomial offset codes.

All counting is exact big-integer arithmetic. Typical sets are ordered
lexicographically by symbol value; the completion counts behind rank and
unrank are memoised per :class:`TypicalSetSpec`.
"""
from __future__ import annotations

import functools
import logging
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from bitarray import bitarray

from src.errors import IndexOutOfRange, NotTypical

logger = logging.getLogger(__name__)

PMF_DENOMINATOR = 1 << 32


def as_fraction(value: int | float | str | Fraction) -> Fraction:
    """Exact rational from user input; floats go through their decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


# ---------------------------------------------------------------------------
# Exact logarithms for width computations
# ---------------------------------------------------------------------------
def log2_bounds(value: int | Fraction, bits: int) -> tuple[Fraction, Fraction]:
    """Rationals ``lo <= log2(value) <= hi`` at most 2^-bits apart.

    Integer-only: the fractional bits come from repeated squaring of a
    fixed-point mantissa carried as a floor/ceil pair. Powers of two come
    back exact.
    """
    x = Fraction(value)
    if x <= 0:
        raise ValueError(f"log2 needs a positive argument, got {value}")
    p, q = x.numerator, x.denominator
    k = p.bit_length() - q.bit_length()
    if (p << max(0, -k)) < (q << max(0, k)):
        k -= 1
    y = x / Fraction(2) ** k
    if y == 1:
        return Fraction(k), Fraction(k)
    scale = 2 * bits + 16
    two = 2 << scale
    lo = (y.numerator << scale) // y.denominator
    hi = -((-y.numerator << scale) // y.denominator)
    digits = 0
    for i in range(1, bits + 1):
        lo = (lo * lo) >> scale
        hi = -((-(hi * hi)) >> scale)
        if lo >= two:
            digits = (digits << 1) | 1
            lo >>= 1
            hi = -((-hi) >> 1)
        elif hi < two:
            digits <<= 1
        else:
            base = k + Fraction(digits, 1 << (i - 1))
            return base, base + Fraction(1, 1 << (i - 1))
    base = k + Fraction(digits, 1 << bits)
    return base, base + Fraction(1, 1 << bits)


def exact_ceil(bounds: Callable[[int], tuple[Fraction, Fraction]]) -> int:
    """Ceiling of a quantity known through ``bounds(bits)`` brackets of growing precision."""
    for bits in (32, 64, 128, 256, 512):
        lo, hi = bounds(bits)
        if math.ceil(lo) == math.ceil(hi):
            return math.ceil(hi)
    # within 2^-512 of an integer: round up
    return math.ceil(hi)


@dataclass(frozen=True)
class SourceModel:
    """A memoryless source over the alphabet {0, ..., |X|-1}."""

    pmf: tuple[Fraction, ...]
    entropy: float = field(init=False, compare=False)

    def __post_init__(self) -> None:
        if not self.pmf:
            raise ValueError("a source model needs at least one symbol")
        if any(p <= 0 for p in self.pmf):
            raise ValueError(f"every probability must be strictly positive, got {self.pmf}")
        if sum(self.pmf) != 1:
            raise ValueError(f"probabilities must sum to 1, got {float(sum(self.pmf))}")
        probs = np.array([float(p) for p in self.pmf])
        object.__setattr__(self, "entropy", float(-(probs * np.log2(probs)).sum()))

    @classmethod
    def from_probabilities(cls, probs: Iterable[int | float | str | Fraction]) -> "SourceModel":
        """Quantize a pmf to numerators over 2^32 so it round-trips through headers."""
        exact = [as_fraction(p) for p in probs]
        total = sum(exact)
        if total <= 0:
            raise ValueError("probabilities must have a positive sum")
        numerators = [max(1, round(p / total * PMF_DENOMINATOR)) for p in exact]
        # absorb the rounding residue in the heaviest symbol
        heaviest = max(range(len(numerators)), key=numerators.__getitem__)
        numerators[heaviest] += PMF_DENOMINATOR - sum(numerators)
        return cls.from_numerators(numerators)

    @classmethod
    def from_numerators(cls, numerators: Sequence[int]) -> "SourceModel":
        return cls(tuple(Fraction(int(k), PMF_DENOMINATOR) for k in numerators))

    @classmethod
    def uniform(cls, alphabet_size: int) -> "SourceModel":
        return cls.from_probabilities([1] * alphabet_size)

    @property
    def alphabet_size(self) -> int:
        return len(self.pmf)

    @property
    def numerators(self) -> tuple[int, ...]:
        return tuple(int(p * PMF_DENOMINATOR) for p in self.pmf)

    @property
    def max_inverse_probability(self) -> Fraction:
        return 1 / min(self.pmf)

    def entropy_bounds(self, bits: int) -> tuple[Fraction, Fraction]:
        """Rational bracket around H(p) in bits; see :func:`log2_bounds`."""
        lo = hi = Fraction(0)
        for p in self.pmf:
            a, b = log2_bounds(1 / p, bits)
            lo += p * a
            hi += p * b
        return lo, hi

    def probabilities(self) -> np.ndarray:
        return np.array([float(p) for p in self.pmf])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` i.i.d. symbols."""
        return rng.choice(self.alphabet_size, size=n, p=self.probabilities()).astype(np.int64)


@dataclass(frozen=True)
class TypicalSetSpec:
    """ε-typicality box for blocks of ``block_len`` symbols."""

    block_len: int
    epsilon: Fraction
    pmf: tuple[Fraction, ...]
    lo: tuple[int, ...] = field(init=False)
    hi: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if self.block_len < 0:
            raise ValueError(f"block length must be non-negative, got {self.block_len}")
        lo = tuple(math.ceil(self.block_len * p * (1 - self.epsilon)) for p in self.pmf)
        hi = tuple(math.floor(self.block_len * p * (1 + self.epsilon)) for p in self.pmf)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def for_model(cls, model: SourceModel, block_len: int, epsilon: int | float | str | Fraction) -> "TypicalSetSpec":
        return cls(block_len, as_fraction(epsilon), model.pmf)

    @property
    def alphabet_size(self) -> int:
        return len(self.pmf)

    def composition_in_box(self, counts: Sequence[int]) -> bool:
        return all(lo <= c <= hi for c, lo, hi in zip(counts, self.lo, self.hi))

    def completion(self, prefix: Sequence[int]) -> list[int]:
        """Sorted filler extending ``prefix`` to ``block_len`` symbols.

        The result lies in the box whenever any extension of ``prefix`` does;
        it depends on the composition of ``prefix`` only.
        """
        remaining = self.block_len - len(prefix)
        if remaining < 0:
            raise ValueError(f"prefix of {len(prefix)} symbols exceeds the block length {self.block_len}")
        counts = [0] * self.alphabet_size
        for s in prefix:
            counts[int(s)] += 1
        extra = [max(0, lo - c) for c, lo in zip(counts, self.lo)]
        spare = remaining - sum(extra)
        for x in range(self.alphabet_size):
            if spare <= 0:
                break
            take = min(spare, max(0, self.hi[x] - counts[x] - extra[x]))
            extra[x] += take
            spare -= take
        extra[0] += max(0, spare)
        return [x for x, k in enumerate(extra) for _ in range(k)][:remaining]


def pad_to_blocks(symbols: Sequence[int] | np.ndarray, total: int, spec: TypicalSetSpec | None) -> np.ndarray:
    """Pad a message to ``total`` symbols with per-block typical fillers.

    Every ``spec.block_len`` block touching the padding gets
    :meth:`TypicalSetSpec.completion` of its real prefix. Without a spec the
    padding is symbol 0.
    """
    arr = np.asarray(symbols, dtype=np.int64)
    out = np.zeros(total, dtype=np.int64)
    out[:arr.size] = arr
    if spec is None or total == arr.size:
        return out
    b = spec.block_len
    for start in range(arr.size - arr.size % b, total, b):
        real = arr.size - start if start < arr.size else 0
        out[start + real:start + b] = spec.completion(out[start:start + real])
    return out


def refill_block(block: np.ndarray, real: int, spec: TypicalSetSpec | None) -> np.ndarray:
    """``block`` with everything after its first ``real`` symbols replaced by the padding filler."""
    real = max(real, 0)
    if real >= block.size:
        return block
    out = np.array(block, dtype=np.int64)
    out[real:] = spec.completion(out[:real]) if spec is not None else 0
    return out


class TypicalSet:
    """Counting, ranking and unranking over the sequences of one typicality box."""

    def __init__(self, spec: TypicalSetSpec) -> None:
        self.spec = spec
        self._memo: dict[tuple[int, tuple[int, ...]], int] = {}
        self._lock = threading.Lock()

    def _closed_form(self, remaining: int, counts: tuple[int, ...]) -> int | None:
        spec = self.spec
        if any(c > hi for c, hi in zip(counts, spec.hi)):
            return 0
        deficit = sum(max(0, lo - c) for c, lo in zip(counts, spec.lo))
        if deficit > remaining:
            return 0
        if remaining == 0:
            return 1
        if deficit == 0 and all(c + remaining <= hi for c, hi in zip(counts, spec.hi)):
            return spec.alphabet_size ** remaining
        return None

    def completions(self, remaining: int, counts: tuple[int, ...]) -> int:
        """Number of length-``remaining`` suffixes landing the composition in the box."""
        key = (remaining, counts)
        # entries are pure functions of their key, so lock-free reads see either nothing or the final value
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        alphabet = range(self.spec.alphabet_size)
        stack = [key]
        while stack:
            state = stack[-1]
            if state in self._memo:
                stack.pop()
                continue
            r, c = state
            direct = self._closed_form(r, c)
            if direct is not None:
                with self._lock:
                    self._memo[state] = direct
                stack.pop()
                continue
            children = [(r - 1, c[:a] + (c[a] + 1,) + c[a + 1:]) for a in alphabet]
            missing = [child for child in children if child not in self._memo]
            if missing:
                stack.extend(missing)
                continue
            with self._lock:
                self._memo[state] = sum(self._memo[child] for child in children)
            stack.pop()
        return self._memo[key]

    @property
    def count(self) -> int:
        return self.completions(self.spec.block_len, (0,) * self.spec.alphabet_size)

    def contains(self, symbols: Sequence[int]) -> bool:
        if len(symbols) != self.spec.block_len:
            return False
        counts = [0] * self.spec.alphabet_size
        for s in symbols:
            if not 0 <= s < self.spec.alphabet_size:
                return False
            counts[s] += 1
        return self.spec.composition_in_box(counts)

    def rank(self, symbols: Sequence[int]) -> int:
        if not self.contains(symbols):
            raise NotTypical(f"sequence of length {len(symbols)} is outside the typical box")
        b = self.spec.block_len
        counts = [0] * self.spec.alphabet_size
        index = 0
        for pos, sym in enumerate(symbols):
            remaining = b - pos - 1
            for smaller in range(sym):
                counts[smaller] += 1
                index += self.completions(remaining, tuple(counts))
                counts[smaller] -= 1
            counts[sym] += 1
        return index

    def unrank(self, index: int) -> list[int]:
        total = self.count
        if not 0 <= index < total:
            raise IndexOutOfRange(f"index {index} outside typical set of size {total}")
        b = self.spec.block_len
        counts = [0] * self.spec.alphabet_size
        out: list[int] = []
        for pos in range(b):
            remaining = b - pos - 1
            for sym in range(self.spec.alphabet_size):
                counts[sym] += 1
                block = self.completions(remaining, tuple(counts))
                if index < block:
                    out.append(sym)
                    break
                index -= block
                counts[sym] -= 1
            else:  # pragma: no cover - unreachable when the memo is consistent
                raise IndexOutOfRange("unrank walked past the last symbol")
        return out


@functools.lru_cache(maxsize=128)
def typical_set(spec: TypicalSetSpec) -> TypicalSet:
    """Shared memoised ranker for ``spec``."""
    return TypicalSet(spec)


def typical_count(spec: TypicalSetSpec) -> int:
    return typical_set(spec).count


def typical_rank(symbols: Sequence[int], spec: TypicalSetSpec) -> int:
    return typical_set(spec).rank([int(s) for s in symbols])


def typical_unrank(index: int, spec: TypicalSetSpec) -> list[int]:
    return typical_set(spec).unrank(index)


def _compositions(spec: TypicalSetSpec, position: int, remaining: int) -> Iterable[tuple[int, ...]]:
    lo, hi = spec.lo[position], spec.hi[position]
    if position == spec.alphabet_size - 1:
        if lo <= remaining <= hi:
            yield (remaining,)
        return
    for k in range(max(0, lo), min(hi, remaining) + 1):
        for rest in _compositions(spec, position + 1, remaining - k):
            yield (k,) + rest


def typical_probability(spec: TypicalSetSpec) -> float:
    """Exact-composition evaluation of Pr[X^b in T] under the model pmf."""
    logs = [math.log(float(p)) for p in spec.pmf]
    log_fact_b = math.lgamma(spec.block_len + 1)
    total = 0.0
    for comp in _compositions(spec, 0, spec.block_len):
        log_term = log_fact_b + sum(k * lp - math.lgamma(k + 1) for k, lp in zip(comp, logs))
        total += math.exp(log_term)
    return min(1.0, total)


def lemma_block_length(model: SourceModel, epsilon: int | float | str | Fraction, alpha: int = 4) -> int:
    """b = ceil(3 (alpha + log2|X|) max_a(1/p(a)) (1/eps^2) log2(1/eps)), evaluated exactly."""
    eps = as_fraction(epsilon)
    if not 0 < eps < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
    scale = 3 * model.max_inverse_probability / eps ** 2

    def bounds(bits: int) -> tuple[Fraction, Fraction]:
        size_lo, size_hi = log2_bounds(model.alphabet_size, bits)
        inv_lo, inv_hi = log2_bounds(1 / eps, bits)
        return scale * (alpha + size_lo) * inv_lo, scale * (alpha + size_hi) * inv_hi

    return exact_ceil(bounds)


def binom_rank(bits: Sequence[int]) -> int:
    """Lexicographic offset of ``bits`` among strings of its length and weight."""
    t = len(bits)
    ones = sum(1 for b in bits if b)
    offset = 0
    for pos, bit in enumerate(bits):
        if bit:
            # strings with a 0 here place all remaining ones after this position
            offset += math.comb(t - pos - 1, ones)
            ones -= 1
    return offset


def binom_unrank(t: int, c: int, offset: int) -> bitarray:
    total = math.comb(t, c)
    if not 0 <= offset < total:
        raise IndexOutOfRange(f"offset {offset} outside C({t},{c}) = {total}")
    out = bitarray(t, endian="big")
    out.setall(0)
    ones = c
    for pos in range(t):
        if ones == 0:
            break
        zero_here = math.comb(t - pos - 1, ones)
        if offset >= zero_here:
            out[pos] = 1
            offset -= zero_here
            ones -= 1
    return out
