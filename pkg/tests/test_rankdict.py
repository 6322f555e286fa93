import itertools
import math

import pytest
from bitarray import bitarray

from src.coding.rankdict import PlainRankLayout, RankDictionary, RankDictLayout, binary_entropy
from src.errors import CorruptCodeword, DensityTooHigh, OutOfRange
from src.storage.bitstore import ProbeMeteredBits


def _prefix_ranks(bits):
    running = 0
    out = []
    for bit in bits:
        running += bit
        out.append(running)
    return out


def test_small_example():
    rd = RankDictionary.build("0001101", "0.45")
    assert rd.rank(4) == 1
    assert rd.rank(5) == 2
    assert rd.get_bit(2) == 0
    assert rd.get_bit(4) == 1
    assert rd.reconstruct().to01() == "0001101"


@pytest.mark.parametrize("m", [1, 3, 5, 8, 12])
def test_exhaustive_rank_and_select_bits(m):
    layout = RankDictLayout.for_length(m, "1/2")
    for bits in itertools.product([0, 1], repeat=m):
        if sum(bits) > layout.max_weight:
            continue
        payload = layout.serialize(bits, pad=True)
        assert len(payload) == layout.fixed_bits
        buf = ProbeMeteredBits.from_bitarray(payload)
        expected = _prefix_ranks(bits)
        for i in range(1, m + 1):
            assert layout.rank(buf, 0, i) == expected[i - 1]
            assert layout.get_bit(buf, 0, i) == bits[i - 1]
        assert layout.reconstruct(buf, 0).tolist() == list(bits)


def test_dictionary_at_an_offset(rng):
    bits = bitarray((rng.random(300) < 0.2).tolist())
    layout = RankDictLayout.for_length(300, "1/4")
    if bits.count() > layout.max_weight:
        bits = bitarray("0") * 300
    prefix = bitarray("1") * 13
    buf = ProbeMeteredBits.from_bitarray(prefix + layout.serialize(bits, pad=True))
    expected = _prefix_ranks(bits)
    for i in (1, 17, 150, 299, 300):
        assert layout.rank(buf, 13, i) == expected[i - 1]


def test_probe_bound_holds(rng):
    bits = [int(x) for x in rng.random(2000) < 0.3]
    rd = RankDictionary.build(bits, "2/5")
    expected = _prefix_ranks(bits)
    worst = 0
    for i in range(1, 2001, 7):
        value, reads = rd.rank_probed(i)
        assert value == expected[i - 1]
        worst = max(worst, reads)
    assert worst <= rd.probe_bound


def test_plain_layout_agrees(rng):
    bits = [int(x) for x in rng.random(500) < 0.25]
    rich = RankDictionary.build(bits, "1/3")
    plain = RankDictionary.build(bits, "1/3", plain=True)
    assert isinstance(plain.layout, PlainRankLayout)
    for i in range(1, 501):
        assert rich.rank(i) == plain.rank(i)
    assert plain.reconstruct().tolist() == bits


def test_space_stays_near_entropy():
    m = 1000
    layout = RankDictLayout.for_length(m, "1/4")
    assert layout.payload_capacity <= m * binary_entropy(0.25) + layout.n_blocks
    rd = RankDictionary.build([1, 0, 0, 0] * 250, "1/4")
    report = rd.space_report()
    assert report["total_bits"] == rd.total_bits
    assert report["ideal_bits"] == pytest.approx(m * binary_entropy(0.25))


def test_layout_parameters():
    layout = RankDictLayout.for_length(1 << 10, "1/4")
    assert layout.t == 5
    assert layout.s_b == 10
    tiny = RankDictLayout.for_length(4, "1/2")
    assert (tiny.t, tiny.s_b, tiny.n_blocks) == (4, 2, 1)


def test_density_and_alpha_checks():
    with pytest.raises(DensityTooHigh):
        RankDictionary.build("1110000", "2/5")
    with pytest.raises(ValueError):
        RankDictionary.build("0001101", "1/2")
    with pytest.raises(ValueError):
        RankDictLayout.for_length(8, "1/2").serialize("0101")


def test_rank_positions_are_one_based():
    rd = RankDictionary.build("0001101", "0.45")
    with pytest.raises(OutOfRange):
        rd.rank(0)
    with pytest.raises(OutOfRange):
        rd.rank(8)


def test_corrupt_class_field():
    layout = RankDictLayout.for_length(4, "1/2")
    buf = ProbeMeteredBits.from_bitarray(layout.serialize("0100", pad=True))
    buf.write_bits(layout.directory_bits, layout.class_width, 7)
    with pytest.raises(CorruptCodeword):
        layout.rank(buf, 0, 2)


def test_binary_entropy_edges():
    assert binary_entropy(0) == 0.0
    assert binary_entropy(1) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0)
    assert math.isclose(binary_entropy(0.25), binary_entropy(0.75))


@pytest.mark.slow
@pytest.mark.parametrize("m", [64, 256, 1024])
@pytest.mark.parametrize("alpha", ["1/4", "2/5"])
def test_space_against_entropy_plus_directory(m, alpha, rng):
    layout = RankDictLayout.for_length(m, alpha)
    slack = (layout.class_width + 3) * layout.n_blocks + 64
    assert layout.fixed_bits <= m * binary_entropy(float(layout.alpha)) + slack
    density = float(layout.alpha) / 2
    for _ in range(20):
        bits = [int(x) for x in rng.random(m) < density]
        if sum(bits) > layout.max_weight:
            continue
        rd = RankDictionary.build(bits, alpha)
        assert rd.total_bits <= layout.fixed_bits
        assert rd.reconstruct().tolist() == bits
