import dataclasses

import numpy as np
import pytest

from src.coding.codecs import Level0Mode
from src.errors import BadMagic, BadVersion, ContainerFormatError, PlanInfeasible, TruncatedFile
from src.schemes import localops
from src.storage.container import (
    Container,
    ContainerHeader,
    RawPlan,
    Scheme,
    build_plan,
    bytes_to_symbols,
    estimate_model,
    parse,
    symbols_to_bytes,
    wrap_encode,
)


@pytest.fixture
def multilevel_plan(binary):
    return build_plan(Scheme.MULTILEVEL, binary, "1/2", 1024, b0=8)


@pytest.fixture
def compressed(multilevel_plan, alternating):
    message = alternating(1024)
    message[40:48] = 0
    message[600:608] = 1
    return Container.encode(message, multilevel_plan), message


def test_header_round_trip(compressed):
    container, _ = compressed
    data = container.to_bytes()
    assert data[:4] == b"LCU1"
    header, body = parse(data)
    assert header == container.header
    assert body == container.body
    assert header.plan() == container.plan


def test_header_errors(compressed):
    data = compressed[0].to_bytes()
    with pytest.raises(BadMagic):
        parse(b"LCU0" + data[4:])
    bumped = bytearray(data)
    bumped[4] = 2
    with pytest.raises(BadVersion):
        parse(bytes(bumped))
    with pytest.raises(TruncatedFile):
        parse(data[:20])
    with pytest.raises(TruncatedFile):
        parse(data[:2])
    with pytest.raises(TruncatedFile):
        parse(data[:-1])
    with pytest.raises(ContainerFormatError):
        Scheme.from_code(7)


def test_header_plan_consistency(compressed):
    header = compressed[0].header
    with pytest.raises(ContainerFormatError):
        dataclasses.replace(header, aux=header.aux + 1).plan()
    with pytest.raises(ContainerFormatError):
        dataclasses.replace(header, pad=header.pad + 1).plan()


def test_compressed_round_trip(compressed):
    container, message = compressed
    assert container.compressed
    assert container.body.length_bits == 1 + container.plan.total_bits
    assert container.rate == container.body.length_bits / 1024
    restored = Container.from_bytes(container.to_bytes())
    assert restored.decode_all().tolist() == message.tolist()


def test_get_charges_the_flag_bit(compressed):
    container, message = compressed
    symbols, reads = container.get(36, 16)
    assert symbols.tolist() == message[36:52].tolist()
    _, scheme_reads = localops.local_decode_range(container.codeword, container.plan, 36, 16)
    assert reads == 1 + scheme_reads


def test_raw_fallback(multilevel_plan):
    message = np.zeros(1024, dtype=np.int64)
    container = Container.encode(message, multilevel_plan)
    assert not container.compressed
    assert container.body.length_bits == 1 + 1024
    assert container.decode_all().tolist() == message.tolist()
    symbols, reads = container.get(3, 5)
    assert symbols.tolist() == [0] * 5
    assert reads == 1 + 5
    counts = container.set(10, [1, 1])
    assert counts.writes == 2
    assert container.get(9, 4)[0].tolist() == [0, 1, 1, 0]


def test_multilevel_update_switches_to_raw(compressed):
    container, message = compressed
    # nine atypical blocks in one level-1 group exceed its eight slots
    container.set(0, np.zeros(72, dtype=np.int64))
    message[:72] = 0
    assert not container.compressed
    assert container.decode_all().tolist() == message.tolist()
    assert Container.from_bytes(container.to_bytes()).decode_all().tolist() == message.tolist()


def test_naive_update_switches_to_raw(binary, alternating):
    plan = build_plan(Scheme.NAIVE, binary, "1/2", 64, block_len=8)
    container = Container.encode(alternating(64), plan)
    assert container.compressed
    counts = container.set(0, np.zeros(8, dtype=np.int64))
    assert not container.compressed
    assert counts.writes >= container.body.length_bits
    expected = alternating(64)
    expected[:8] = 0
    assert container.decode_all().tolist() == expected.tolist()
    assert container.header.body_bits == 1 + 64


def test_blockvar_container(skewed, rng):
    plan = build_plan(Scheme.BLOCKVAR, skewed, "1/2", 4096)
    message = skewed.sample(4096, rng)
    container = Container.encode(message, plan, (8, 4))
    assert container.compressed
    reopened = Container.from_bytes(container.to_bytes())
    assert reopened.header.aux == plan.b1
    assert reopened.get(500, 40)[0].tolist() == message[500:540].tolist()
    reopened.set(510, [0, 0, 0])
    message[510:513] = 0
    assert reopened.compressed
    assert reopened.decode_all().tolist() == message.tolist()


def test_universal_container(binary, rng):
    plan = build_plan(Scheme.MULTILEVEL, binary, "1/2", 1024, "universal", b0=8, k0=16)
    message = binary.sample(1024, rng)
    data = wrap_encode(message, plan)
    container = Container.from_bytes(data)
    assert container.header.mode is Level0Mode.LZ78_FIXED
    assert container.decode_all().tolist() == message.tolist()


def test_universal_mode_needs_multilevel(binary):
    with pytest.raises(PlanInfeasible):
        build_plan(Scheme.BLOCKVAR, binary, "1/2", 1024, "universal")


def test_save_and_open(compressed, tmp_path):
    container, message = compressed
    with pytest.raises(ValueError):
        container.save()
    path = container.save(tmp_path / "message.lcu")
    assert container.path == path
    opened = Container.open(path)
    opened.set(100, [1, 1, 1, 1])
    opened.save()
    message[100:104] = 1
    assert Container.open(path).decode_all().tolist() == message.tolist()
    assert [p.name for p in tmp_path.iterdir()] == ["message.lcu"]


def test_level_histogram(compressed, rng, multilevel_plan):
    container, _ = compressed
    report = container.level_histogram(50, rng)
    assert report["branch"] == "compressed"
    assert len(report["level_histogram"]) == multilevel_plan.level_max + 1
    assert sum(report["level_histogram"]) == pytest.approx(1.0)
    assert 0 < report["probes"] < report["body_bits"] * 50
    raw = Container.encode(np.zeros(1024, dtype=np.int64), multilevel_plan)
    assert raw.level_histogram(5, rng)["branch"] == "raw"


def test_byte_symbol_streams():
    assert bytes_to_symbols(b"\xa5", 4).tolist() == [2, 2, 1, 1]
    assert bytes_to_symbols(b"\xa5", 16).tolist() == [10, 5]
    assert symbols_to_bytes([2, 2, 1, 1], 4) == b"\xa5"
    assert symbols_to_bytes(bytes_to_symbols(b"hello", 256), 256) == b"hello"
    with pytest.raises(ValueError):
        bytes_to_symbols(b"\x00", 3)
    with pytest.raises(ValueError):
        symbols_to_bytes([1, 1, 1], 4)


def test_estimate_model():
    model = estimate_model([0, 1, 0, 1], 2)
    assert [float(p) for p in model.pmf] == [0.5, 0.5]
    skewed = estimate_model([2, 2, 2], 3)
    assert skewed.pmf[2] > skewed.pmf[0] > 0
    with pytest.raises(ValueError):
        estimate_model([0, 3], 3)
    with pytest.raises(ValueError):
        estimate_model([], 2)


def test_header_for_each_scheme(binary, skewed):
    naive = build_plan(Scheme.NAIVE, binary, "1/2", 64, block_len=8)
    header = ContainerHeader.for_plan(naive, 10)
    assert (header.scheme, header.b0, header.k0) == (Scheme.NAIVE, 8, 12)
    blockvar = build_plan(Scheme.BLOCKVAR, skewed, "1/4", 64, b0=32, b1=8)
    header = ContainerHeader.for_plan(blockvar, 10, (8, 4))
    assert (header.aux, header.k0, header.z_len, header.y_len) == (8, 44, 11, 33)
    assert header.c_a == 8 and header.c_b == 4
    parsed, _ = ContainerHeader.parse(header.pack())
    assert parsed == header


@pytest.mark.parametrize("n", [0, 5])
def test_raw_only_container(binary, n):
    plan = build_plan(Scheme.RAW, binary, "2/5", n)
    assert isinstance(plan, RawPlan)
    message = np.ones(n, dtype=np.int64)
    container = Container.encode(message, plan)
    assert not container.compressed
    assert container.body.length_bits == 1 + n
    restored = Container.from_bytes(container.to_bytes())
    assert restored.header.scheme is Scheme.RAW
    assert restored.plan == plan
    assert restored.decode_all().tolist() == message.tolist()
    assert restored.rate == (1 + n) / max(1, n)


def test_raw_only_container_rejects_compressed_flag(binary):
    container = Container.encode(np.ones(4, dtype=np.int64), build_plan(Scheme.RAW, binary, "2/5", 4))
    data = bytearray(container.to_bytes())
    data[-1] |= 0x80
    with pytest.raises(ContainerFormatError):
        Container.from_bytes(bytes(data))


@pytest.mark.slow
@pytest.mark.parametrize(
    "scheme, mode, overrides",
    [
        (Scheme.MULTILEVEL, Level0Mode.TYPICAL_SET, {"b0": 16}),
        (Scheme.MULTILEVEL, Level0Mode.LZ78_FIXED, {"b0": 16, "k0": 24}),
        (Scheme.BLOCKVAR, Level0Mode.TYPICAL_SET, {}),
        (Scheme.NAIVE, Level0Mode.TYPICAL_SET, {}),
    ],
)
def test_zero_error_suite(skewed, alternating, scheme, mode, overrides):
    # 2500 sampled messages per scheme and mode, 10^4 in all
    n = 1 << 12
    plan = build_plan(scheme, skewed, "1/2", n, mode, **overrides)
    rng = np.random.default_rng(4096)
    adversarial = [
        np.zeros(n, dtype=np.int64),
        np.ones(n, dtype=np.int64),
        alternating(n),
        1 - alternating(n),
    ]
    compressed = 0
    for trial in range(2500 + len(adversarial)):
        message = adversarial[trial - 2500] if trial >= 2500 else skewed.sample(n, rng)
        restored = Container.from_bytes(wrap_encode(message, plan))
        assert restored.decode_all().tolist() == message.tolist()
        compressed += restored.compressed
    assert compressed > 0
