import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
import pytest

from src.coding.enumcode import (
    PMF_DENOMINATOR,
    SourceModel,
    TypicalSet,
    TypicalSetSpec,
    binom_rank,
    binom_unrank,
    exact_ceil,
    lemma_block_length,
    log2_bounds,
    pad_to_blocks,
    refill_block,
    typical_count,
    typical_probability,
    typical_rank,
    typical_set,
    typical_unrank,
)
from src.errors import IndexOutOfRange, NotTypical


def _spec(pmf, b, eps):
    return TypicalSetSpec.for_model(SourceModel.from_probabilities(pmf), b, eps)


def test_box_bounds():
    spec = _spec([1, 1], 4, "1/2")
    assert spec.lo == (1, 1)
    assert spec.hi == (3, 3)


def test_small_binary_typical_set():
    spec = _spec([1, 1], 4, "1/2")
    assert typical_count(spec) == 14
    assert typical_rank([0, 0, 1, 1], spec) == 2
    assert typical_unrank(2, spec) == [0, 0, 1, 1]
    with pytest.raises(NotTypical):
        typical_rank([1, 1, 1, 1], spec)


def test_empty_typical_set():
    spec = _spec([1, 1], 3, "1/100")
    assert typical_count(spec) == 0
    with pytest.raises(IndexOutOfRange):
        typical_unrank(0, spec)


@pytest.mark.parametrize(
    "pmf, b, eps",
    [
        ([1, 1], 6, "1/2"),
        (["1/4", "3/4"], 8, "1/2"),
        (["1/10", "3/10", "3/5"], 7, "1/2"),
        ([1, 1, 1], 6, "1/4"),
    ],
)
def test_rank_is_a_lexicographic_bijection(pmf, b, eps):
    spec = _spec(pmf, b, eps)
    members = [
        list(seq)
        for seq in itertools.product(range(spec.alphabet_size), repeat=b)
        if spec.composition_in_box([seq.count(a) for a in range(spec.alphabet_size)])
    ]
    assert typical_count(spec) == len(members)
    for index, seq in enumerate(members):
        assert typical_rank(seq, spec) == index
        assert typical_unrank(index, spec) == seq


@pytest.mark.parametrize("b", [4, 8, 12])
def test_exhaustive_count_for_small_blocks(b):
    spec = _spec(["1/4", "3/4"], b, "2/5")
    expected = sum(
        math.comb(b, k)
        for k in range(b + 1)
        if spec.lo[0] <= k <= spec.hi[0] and spec.lo[1] <= b - k <= spec.hi[1]
    )
    assert typical_count(spec) == expected


@pytest.mark.parametrize(
    "pmf, b, eps",
    [([1, 1], 16, "2/5"), (["1/4", "3/4"], 40, "1/4"), (["1/10", "3/10", "3/5"], 20, "1/2"), ([1, 1], 64, "1/10")],
)
def test_count_respects_entropy_bound(pmf, b, eps):
    model = SourceModel.from_probabilities(pmf)
    spec = TypicalSetSpec.for_model(model, b, eps)
    count = typical_count(spec)
    assert count >= 1
    assert math.log2(count) <= b * model.entropy * (1 + float(Fraction(eps))) + 1e-9


def test_typical_probability_matches_enumeration():
    model = SourceModel.from_probabilities(["1/4", "3/4"])
    spec = TypicalSetSpec.for_model(model, 10, "1/2")
    p0 = float(model.pmf[0])
    exact = sum(
        math.comb(10, k) * p0 ** k * (1 - p0) ** (10 - k)
        for k in range(11)
        if spec.lo[0] <= k <= spec.hi[0] and spec.lo[1] <= 10 - k <= spec.hi[1]
    )
    assert typical_probability(spec) == pytest.approx(exact, rel=1e-9)


def test_model_quantization():
    model = SourceModel.from_probabilities([0.5, 0.5])
    assert model.pmf == (Fraction(1, 2), Fraction(1, 2))
    assert sum(model.numerators) == PMF_DENOMINATOR
    assert model.entropy == pytest.approx(1.0)
    skewed = SourceModel.from_probabilities(["1/10", "9/10"])
    assert sum(skewed.pmf) == 1
    assert skewed.entropy == pytest.approx(0.469, abs=1e-3)


def test_sampling_is_seeded():
    model = SourceModel.from_probabilities(["1/5", "4/5"])
    a = model.sample(1000, np.random.default_rng(3))
    b = model.sample(1000, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0, 1}


def test_lemma_block_length():
    assert lemma_block_length(SourceModel.uniform(2), "2/5", alpha=4) == 248
    assert lemma_block_length(SourceModel.uniform(2), "1/2") == 120
    with pytest.raises(ValueError):
        lemma_block_length(SourceModel.uniform(2), 0)


def test_log2_bounds():
    assert log2_bounds(8, 32) == (3, 3)
    assert log2_bounds(Fraction(1, 4), 32) == (-2, -2)
    for value in (3, Fraction(5, 2), Fraction(7, 1000), 10 ** 12 + 39):
        lo, hi = log2_bounds(value, 40)
        assert 0 < hi - lo <= Fraction(1, 1 << 40)
        assert float(lo) - 1e-12 <= math.log2(value) <= float(hi) + 1e-12
    with pytest.raises(ValueError):
        log2_bounds(0, 8)


def test_exact_ceil():
    assert exact_ceil(lambda bits: (Fraction(5, 2), Fraction(5, 2))) == 3
    assert exact_ceil(lambda bits: (Fraction(4), Fraction(4))) == 4
    assert exact_ceil(lambda bits: tuple(10 * v for v in log2_bounds(3, bits))) == 16


def test_entropy_bounds():
    lo, hi = SourceModel.from_probabilities(["1/4", "3/4"]).entropy_bounds(32)
    assert lo <= hi
    assert float(lo) - 1e-9 <= 0.8112781244591328 <= float(hi) + 1e-9
    assert SourceModel.uniform(4).entropy_bounds(16) == (2, 2)


@pytest.mark.slow
def test_typicality_concentration():
    model = SourceModel.uniform(2)
    b = lemma_block_length(model, "2/5")
    spec = TypicalSetSpec.for_model(model, b, "2/5")
    rng = np.random.default_rng(2024)
    samples = 100_000
    ones = np.zeros(samples, dtype=np.int64)
    for chunk in range(0, samples, 10_000):
        ones[chunk:chunk + 10_000] = model.sample(10_000 * b, rng).reshape(10_000, b).sum(axis=1)
    atypical = ~((ones >= spec.lo[1]) & (ones <= spec.hi[1]) & (b - ones >= spec.lo[0]) & (b - ones <= spec.hi[0]))
    target = 0.4 ** 4
    sigma = math.sqrt(target * (1 - target) / samples)
    assert atypical.mean() <= target + 3 * sigma


def test_binomial_ranking():
    strings = [bits for bits in itertools.product([0, 1], repeat=6) if sum(bits) == 3]
    for offset, bits in enumerate(strings):
        assert binom_rank(bits) == offset
        assert binom_unrank(6, 3, offset).tolist() == list(bits)
    with pytest.raises(IndexOutOfRange):
        binom_unrank(6, 3, math.comb(6, 3))


def test_completion_worked_example():
    spec = _spec([1, 1], 8, "2/5")
    assert (spec.lo, spec.hi) == ((3, 3), (5, 5))
    assert spec.completion([1]) == [0, 0, 0, 0, 0, 1, 1]
    assert spec.completion([]) == [0, 0, 0, 0, 0, 1, 1, 1]
    assert spec.completion([0] * 8) == []
    with pytest.raises(ValueError):
        spec.completion([0] * 9)


@pytest.mark.parametrize(
    "pmf, b, eps",
    [
        ([1, 1], 8, "2/5"),
        (["1/4", "3/4"], 8, "1/4"),
        (["1/4", "1/4", "1/2"], 6, "1/2"),
    ],
)
def test_completion_lands_in_the_box_when_possible(pmf, b, eps):
    spec = _spec(pmf, b, eps)
    ranker = typical_set(spec)
    for length in range(b + 1):
        for prefix in itertools.product(range(spec.alphabet_size), repeat=min(length, 5)):
            prefix = list(prefix) + [0] * (length - len(prefix))
            counts = tuple(prefix.count(a) for a in range(spec.alphabet_size))
            filler = spec.completion(prefix)
            assert len(filler) == b - length
            assert ranker.contains(prefix + filler) == (ranker.completions(b - length, counts) > 0)


def test_padding_fills_each_tail_block():
    spec = _spec([1, 1], 8, "2/5")
    ranker = typical_set(spec)
    padded = pad_to_blocks([1, 1, 1, 1, 1, 1, 1, 1, 1], 24, spec)
    assert padded[:9].tolist() == [1] * 9
    assert ranker.contains(padded[8:16].tolist())
    assert ranker.contains(padded[16:24].tolist())
    assert pad_to_blocks([1, 1, 1], 8, None).tolist() == [1, 1, 1, 0, 0, 0, 0, 0]


def test_refill_matches_padding():
    spec = _spec([1, 1], 8, "2/5")
    padded = pad_to_blocks([0, 1, 1], 8, spec)
    edited = np.array([0, 1, 1, 1, 1, 1, 1, 1])
    assert refill_block(edited, 3, spec).tolist() == padded.tolist()
    assert refill_block(edited, 8, spec) is edited
    assert refill_block(edited, -5, spec).tolist() == pad_to_blocks([], 8, spec).tolist()


def test_concurrent_ranking_agrees_with_serial(rng):
    spec = _spec(["1/4", "1/4", "1/2"], 24, "1/2")
    serial = TypicalSet(spec)
    words = []
    while len(words) < 64:
        candidate = rng.choice(3, size=24, p=[0.25, 0.25, 0.5]).tolist()
        if serial.contains(candidate):
            words.append(candidate)
    expected = [serial.rank(w) for w in words]
    shared = TypicalSet(spec)
    with ThreadPoolExecutor(max_workers=8) as pool:
        ranks = list(pool.map(shared.rank, words))
    assert ranks == expected
    assert shared.count == serial.count
    assert [shared.unrank(r) for r in ranks] == words
