import numpy as np
import pytest

from src.coding.codecs import Level0Codec
from src.errors import EncodingIncomplete, OutOfRange
from src.schemes.localops import (
    AscentStrategy,
    LocalAddress,
    encoding_level,
    local_decode_block,
    local_decode_range,
    local_update_block,
    local_update_range,
)
from src.schemes.multilevel import LevelPlan, encode, encode_with_stats, make_plan


def test_local_address(toy_plan):
    address = LocalAddress.of(toy_plan, 3)
    assert address.groups == (3, 1, 0)
    assert address.slots == (0, 1, 1)


def test_level0_block_reads_one_word(toy_plan, digits):
    buf = encode(digits("0000", "0101", "0101", "0101"), toy_plan)
    symbols, reads = local_decode_block(buf, toy_plan, 2)
    assert symbols.tolist() == [0, 1, 0, 1]
    assert reads == toy_plan.k0


def test_level1_block_probe_count(toy_plan, digits):
    buf = encode(digits("0000", "0101", "0101", "0101"), toy_plan)
    symbols, reads = local_decode_block(buf, toy_plan, 0)
    assert symbols.tolist() == [0, 0, 0, 0]
    # k0 + one indicator bit + the indicator + one stored slot
    assert reads == 6 + 1 + 2 + 4 * 2
    assert encoding_level(buf, toy_plan, 0) == 1


def test_level2_block_probe_count(toy_plan, digits):
    buf = encode(digits("0000", "1111", "0101", "0101"), toy_plan)
    symbols, reads = local_decode_block(buf, toy_plan, 1)
    assert symbols.tolist() == [1, 1, 1, 1]
    assert reads == 6 + 1 + 1 + 2 + 8 * 2
    assert [encoding_level(buf, toy_plan, j) for j in range(4)] == [2, 2, 0, 0]


def test_full_word_ascent_agrees(toy_plan, digits):
    buf = encode(digits("0000", "1111", "0101", "0101"), toy_plan)
    for block in range(4):
        single, single_reads = local_decode_block(buf, toy_plan, block)
        full, full_reads = local_decode_block(buf, toy_plan, block, AscentStrategy.FULL_WORDS)
        assert single.tolist() == full.tolist()
        assert single_reads <= full_reads
    assert local_decode_block(buf, toy_plan, 1, "full-words")[1] == 6 + 10 + 18


def test_block_index_checked(toy_plan, digits):
    buf = encode(digits("0101" * 4), toy_plan)
    with pytest.raises(OutOfRange):
        local_decode_block(buf, toy_plan, 4)
    with pytest.raises(OutOfRange):
        local_decode_range(buf, toy_plan, 14, 3)


def test_range_decode(small_plan, rng):
    message = small_plan.model.sample(1024, rng)
    buf = encode(message, small_plan)
    for start, length in [(0, 1), (5, 3), (6, 10), (100, 256), (1000, 24), (0, 1024)]:
        symbols, reads = local_decode_range(buf, small_plan, start, length)
        assert symbols.tolist() == message[start:start + length].tolist()
        assert reads > 0
    empty, reads = local_decode_range(buf, small_plan, 10, 0)
    assert empty.size == 0 and reads == 0


def test_range_decode_shares_ancestor_reads(toy_plan, digits):
    buf = encode(digits("0000", "1111", "0101", "0101"), toy_plan)
    _, pair = local_decode_range(buf, toy_plan, 0, 8)
    _, first = local_decode_block(buf, toy_plan, 0)
    _, second = local_decode_block(buf, toy_plan, 1)
    assert pair < first + second


def test_update_into_higher_level_matches_fresh_encode(toy_plan, digits):
    buf = encode(digits("0000", "0101", "0101", "0101"), toy_plan)
    local_update_block(buf, toy_plan, 1, digits("1111"))
    assert buf == encode(digits("0000", "1111", "0101", "0101"), toy_plan)


def test_update_back_to_typical_matches_fresh_encode(toy_plan, digits):
    buf = encode(digits("0000", "1111", "0101", "0101"), toy_plan)
    local_update_block(buf, toy_plan, 0, digits("0101"))
    assert buf == encode(digits("0101", "1111", "0101", "0101"), toy_plan)


def test_typical_to_typical_update_touches_one_word(toy_plan, digits):
    buf = encode(digits("0101", "0101", "0101", "0101"), toy_plan)
    counts = local_update_block(buf, toy_plan, 2, digits("0011"))
    assert counts.reads == toy_plan.k0
    assert counts.writes <= toy_plan.k0
    assert buf == encode(digits("0101", "0101", "0011", "0101"), toy_plan)


def test_failed_update_leaves_codeword_untouched(toy_plan, digits):
    buf = encode(digits("0000", "1111", "0000", "0101"), toy_plan)
    before = buf.copy()
    with pytest.raises(EncodingIncomplete) as info:
        local_update_block(buf, toy_plan, 3, digits("1111"))
    assert info.value.position == 12
    assert buf == before
    assert buf.checkpoint_counters().writes == 0


def test_update_validation(toy_plan, digits):
    buf = encode(digits("0101" * 4), toy_plan)
    with pytest.raises(ValueError):
        local_update_block(buf, toy_plan, 0, digits("010"))
    with pytest.raises(ValueError):
        local_update_block(buf, toy_plan, 0, [0, 1, 2, 0])
    with pytest.raises(OutOfRange):
        local_update_range(buf, toy_plan, 15, digits("01"))


def test_random_updates_match_fresh_encodes(binary):
    # three levels: b = (8, 4, 8), payload slots (1, 2)
    plan = LevelPlan.from_ladder(binary, Level0Codec.typical(binary, 8, "1/2"), 1024, ["1/4", "1/4"], [4, 8])
    rng = np.random.default_rng(77)
    message = binary.sample(1024, rng)
    while True:
        try:
            buf = encode(message, plan)
            break
        except EncodingIncomplete:
            message = binary.sample(1024, rng)
    failures = 0
    for _ in range(80):
        block = int(rng.integers(plan.group_count(0)))
        if rng.random() < 0.3:
            new_block = np.zeros(plan.b0, dtype=np.int64)
        else:
            new_block = binary.sample(plan.b0, rng)
        candidate = message.copy()
        candidate[block * plan.b0:(block + 1) * plan.b0] = new_block
        before = buf.copy()
        try:
            local_update_block(buf, plan, block, new_block)
        except EncodingIncomplete:
            failures += 1
            assert buf == before
            with pytest.raises(EncodingIncomplete):
                encode(candidate, plan)
            continue
        message = candidate
        assert buf == encode(message, plan)
    assert failures < 80


def test_range_update(small_plan, rng):
    message = small_plan.model.sample(1024, rng)
    buf = encode(message, small_plan)
    patch = np.array([1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 1], dtype=np.int64)
    local_update_range(buf, small_plan, 61, patch)
    message[61:73] = patch
    assert buf == encode(message, small_plan)
    symbols, _ = local_decode_range(buf, small_plan, 56, 24)
    assert symbols.tolist() == message[56:80].tolist()


def test_encoding_level_matches_stats(small_plan, rng):
    message = small_plan.model.sample(1024, rng)
    message[:24] = 0
    message[24:256] = np.tile([0, 1], 116)
    buf, stats = encode_with_stats(message, small_plan)
    levels = [encoding_level(buf, small_plan, j) for j in range(small_plan.group_count(0))]
    assert levels == stats.block_levels.tolist()
    assert levels[:4] == [1, 1, 1, 0]


def test_tail_updates_match_fresh_encodes(binary, rng):
    plan = make_plan(binary, "1/2", 1003, b0=8)
    while True:
        message = binary.sample(1003, rng)
        try:
            buf = encode(message, plan)
            break
        except EncodingIncomplete:
            continue
    for patch in ([0, 0, 0], [1, 1, 1], [1, 0, 1]):
        local_update_range(buf, plan, 1000, patch)
        message[1000:] = patch
        assert buf == encode(message, plan)
        symbols, _ = local_decode_range(buf, plan, 996, 7)
        assert symbols.tolist() == message[996:].tolist()
    # a block made only of padding keeps its filler whatever is written
    local_update_block(buf, plan, plan.group_count(0) - 1, np.ones(plan.b0, dtype=np.int64))
    assert buf == encode(message, plan)


def test_whole_message_full_word_reads(binary, alternating, small_plan, rng):
    single = make_plan(binary, "1/2", 64, b0=8, max_level=0)
    buf = encode(alternating(64), single)
    assert local_decode_range(buf, single, 0, 64, AscentStrategy.FULL_WORDS)[1] == single.total_bits
    assert local_decode_range(buf, single, 0, 64)[1] == single.total_bits
    while True:
        try:
            buf = encode(binary.sample(1024, rng), small_plan)
            break
        except EncodingIncomplete:
            continue
    _, full = local_decode_range(buf, small_plan, 0, 1024, AscentStrategy.FULL_WORDS)
    assert full <= small_plan.total_bits


@pytest.mark.slow
def test_thousand_updates_match_fresh_encodes(binary):
    plan = LevelPlan.from_ladder(binary, Level0Codec.typical(binary, 8, "1/2"), 1024, ["1/4", "1/4"], [4, 8])
    rng = np.random.default_rng(1000)
    while True:
        message = binary.sample(1024, rng)
        try:
            buf = encode(message, plan)
            break
        except EncodingIncomplete:
            continue
    applied = 0
    for _ in range(1000):
        block = int(rng.integers(plan.group_count(0)))
        if rng.random() < 0.5:
            start, patch = block * plan.b0, binary.sample(plan.b0, rng)
            if rng.random() < 0.3:
                patch[:] = int(rng.integers(2))
        else:
            offset = int(rng.integers(plan.b0))
            start = block * plan.b0 + offset
            patch = binary.sample(int(rng.integers(1, plan.b0 - offset + 1)), rng)
        candidate = message.copy()
        candidate[start:start + patch.size] = patch
        before = buf.copy()
        try:
            local_update_range(buf, plan, start, patch)
        except EncodingIncomplete:
            assert buf == before
            with pytest.raises(EncodingIncomplete):
                encode(candidate, plan)
            continue
        message = candidate
        applied += 1
        assert buf == encode(message, plan)
        symbols, _ = local_decode_range(buf, plan, start, patch.size)
        assert symbols.tolist() == patch.tolist()
    assert applied > 500
