from fractions import Fraction

import numpy as np
import pytest
from bitarray import bitarray

from src.coding.codecs import Level0Mode
from src.coding.enumcode import SourceModel
from src.errors import CorruptCodeword, EncodingIncomplete, PlanInfeasible, TooManyResiduals
from src.schemes.multilevel import (
    PsiGeometry,
    decode,
    encode,
    encode_with_stats,
    make_plan,
    psi_decode,
    psi_encode,
)
from src.storage.bitstore import ProbeMeteredBits

# binary alphabet: diamond is code 2, two bits per symbol
GEOMETRY = PsiGeometry(b=4, m=2, p=1, width=2, diamond=2)
D = 2


def test_psi_word_layout():
    word = psi_encode([D, D, D, D, 1, 0, D, D], GEOMETRY)
    assert word.to01() == "00100100"
    assert psi_encode([D] * 8, GEOMETRY).to01() == "00001010"
    assert psi_decode(word, GEOMETRY).tolist() == [D, D, D, D, 1, 0, D, D]
    assert GEOMETRY.length == 8


def test_psi_capacity():
    with pytest.raises(TooManyResiduals):
        psi_encode([0, 1, D, D, 1, 0, D, D], GEOMETRY)


@pytest.mark.parametrize(
    "bits",
    [
        "0110" "0100",  # two flags, one slot
        "0000" "0100",  # padding must be all diamond
        "0010" "1010",  # a stored block cannot be all diamond
        "0010" "1101",  # code 3 is outside the extended alphabet
        "0010010",  # short word
    ],
)
def test_psi_rejects_inconsistent_words(bits):
    with pytest.raises(CorruptCodeword):
        psi_decode(bitarray(bits), GEOMETRY)


def test_standard_ladder(binary):
    plan = make_plan(binary, "1/2", 32768, b0=8)
    assert plan.blocks == (8, 32, 128)
    assert plan.sizes[-1] == 32768
    assert plan.level_max == 2
    assert plan.symbol_width == 2
    assert plan.pad_slots[1] == 8
    assert plan.code_lens[:2] == (12, 160)
    assert plan.epsilons == (Fraction(1, 2), Fraction(1, 4), Fraction(1, 8))
    assert plan.k0 == 12
    assert plan.pad == 0
    assert float(plan.rate) <= plan.rate_bound


def test_ladder_limits(binary):
    with pytest.raises(PlanInfeasible):
        make_plan(binary, "0.6", 4096, b0=8)
    with pytest.raises(PlanInfeasible):
        make_plan(binary, "1/2", 4, b0=8)
    capped = make_plan(binary, "1/2", 32768, b0=8, max_level=1)
    assert capped.level_max == 1
    ragged = make_plan(binary, "1/2", 1000, b0=8)
    assert ragged.padded_length == 1024
    assert ragged.pad == 24


def test_universal_plan(binary):
    plan = make_plan(binary, "1/2", 1024, "universal", b0=8, k0=16)
    assert plan.mode is Level0Mode.LZ78_FIXED
    assert plan.k0 == 16


def test_toy_plan_geometry(toy_plan):
    assert toy_plan.code_lens == (6, 10, 18)
    assert toy_plan.offsets == (0, 24, 44)
    assert toy_plan.total_bits == 62
    assert toy_plan.thresholds == (0, 1, 1)


def test_encode_with_one_atypical_block(toy_plan, digits):
    message = digits("0000", "0101", "0101", "0101")
    buf, stats = encode_with_stats(message, toy_plan)
    assert stats.block_levels.tolist() == [1, 0, 0, 0]
    assert stats.residual_symbols == [4, 0, 0]
    assert stats.typical_groups == [3, 2, 1]
    assert stats.level_histogram(2).tolist() == [0.75, 0.25, 0.0]
    assert buf.checkpoint_counters().total == 0
    assert buf.read_bits(0, 6) == 0
    # level-1 group 0 holds block 0 in its only slot
    assert buf.read_span(24, 10).to01() == "10" "00000000"
    assert decode(buf, toy_plan).tolist() == message.tolist()


def test_encode_escalates_to_the_top_level(toy_plan, digits):
    message = digits("0000", "1111", "0101", "0101")
    buf, stats = encode_with_stats(message, toy_plan)
    assert stats.block_levels.tolist() == [2, 2, 0, 0]
    assert not buf.read_span(24, 10).any()
    assert decode(buf, toy_plan).tolist() == message.tolist()


def test_encode_failure_reports_partial_state(toy_plan, digits):
    with pytest.raises(EncodingIncomplete) as info:
        encode(digits("0000", "1111", "0000", "1111"), toy_plan)
    assert info.value.position == 0
    buf, stats = info.value.partial
    assert buf.length_bits == toy_plan.total_bits
    assert stats.residual_symbols == [16, 16, 16]


@pytest.mark.parametrize("n", [1024, 1000])
def test_random_round_trip(binary, rng, n):
    plan = make_plan(binary, "1/2", n, b0=8)
    message = binary.sample(n, rng)
    assert decode(encode(message, plan), plan).tolist() == message.tolist()


def test_ragged_tail_is_padded_with_a_typical_filler(binary, rng):
    plan = make_plan(binary, "1/2", 1003, b0=8)
    while True:
        message = binary.sample(1003, rng)
        message[-3:] = 0
        try:
            buf, stats = encode_with_stats(message, plan)
            break
        except EncodingIncomplete:
            continue
    # all-zero padding would make block 125 atypical
    assert stats.block_levels[125:].tolist() == [0] * (plan.group_count(0) - 125)
    assert decode(buf, plan).tolist() == message.tolist()


def test_skewed_round_trip(rng):
    model = SourceModel.from_probabilities(["1/4", "1/4", "1/2"])
    plan = make_plan(model, "1/2", 4096, b0=32)
    message = model.sample(4096, rng)
    assert decode(encode(message, plan), plan).tolist() == message.tolist()


@pytest.mark.slow
@pytest.mark.parametrize("pmf", [("1/2", "1/2"), ("1/5", "4/5")])
def test_rate_at_n_262144(pmf, rng):
    model = SourceModel.from_probabilities(list(pmf))
    n = 1 << 18
    plan = make_plan(model, "1/4", n)
    message = model.sample(n, rng)
    buf = encode(message, plan)
    measured = buf.length_bits / n
    assert buf.length_bits == plan.total_bits
    slack = measured - (model.entropy + 0.25)
    assert 0 <= slack <= 0.15
    assert measured <= plan.rate_bound + slack
    assert decode(buf, plan).tolist() == message.tolist()


def test_universal_round_trip(binary, rng):
    plan = make_plan(binary, "1/2", 1024, "universal", b0=8, k0=16)
    message = binary.sample(1024, rng)
    assert decode(encode(message, plan), plan).tolist() == message.tolist()


def test_message_validation(small_plan):
    with pytest.raises(ValueError):
        encode(np.zeros(10, dtype=np.int64), small_plan)
    with pytest.raises(ValueError):
        encode(np.full(1024, 2), small_plan)


def test_decode_rejects_bad_codewords(toy_plan):
    with pytest.raises(CorruptCodeword):
        decode(ProbeMeteredBits(40), toy_plan)
    with pytest.raises(CorruptCodeword):
        decode(ProbeMeteredBits(toy_plan.total_bits), toy_plan)
