"""
On-disk container format and the zero-error wrapper.

File layout (all multi-byte integers little-endian)::

    magic "LCU1" | version | scheme | mode | flag bit position
    n (u64) | pad (u64) | |X| (u16)
    eps_0 num/den | b_0 | k_0 | aux (l_max or b_1) | typ_len | raw_len | l_y | l_z (u32 each)
    c_a num/den | c_b num/den (u32 each)
    pmf numerators over 2^32 (|X| x u64)
    body bit length (u64)
    body bytes

The body starts with the wrapper flag: 1 means the scheme codeword follows,
0 means the message follows raw at max(1, ceil(log2 |X|)) bits per symbol.
Body bit 0 is the most significant bit of the first body byte.
Scheme "raw" marks a message too short for any coding plan; its body is
always the raw branch.
"""
from __future__ import annotations

import enum
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from bitarray import bitarray

from src.coding.codecs import Level0Mode, bit_width
from src.coding.enumcode import SourceModel, as_fraction
from src.errors import (
    BadMagic,
    BadVersion,
    ContainerFormatError,
    EncodingIncomplete,
    OutOfRange,
    PlanInfeasible,
    TruncatedFile,
)
from src.schemes import blockvarlen, localops, multilevel
from src.schemes.blockvarlen import BlockPlan2, NaivePlan
from src.schemes.multilevel import LevelPlan
from src.storage.bitstore import ProbeCounts, ProbeMeteredBits, pack_symbols, unpack_symbols

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawPlan:
    """Plan of a container that only holds the raw branch, used when no coding plan fits the message."""

    model: SourceModel
    n: int
    eps0: Fraction = Fraction(0)

    @property
    def pad(self) -> int:
        return 0


Plan = Union[LevelPlan, BlockPlan2, NaivePlan, RawPlan]

FILE_ALPHABETS = (2, 4, 16, 256)


class Scheme(str, enum.Enum):
    MULTILEVEL = "multilevel"
    BLOCKVAR = "blockvar"
    NAIVE = "naive"
    RAW = "raw"

    @property
    def code(self) -> int:
        return list(Scheme).index(self)

    @classmethod
    def from_code(cls, code: int) -> "Scheme":
        try:
            return list(Scheme)[code]
        except IndexError as exc:
            raise ContainerFormatError(f"unknown scheme id {code}") from exc


# schemes a caller can ask for; RAW is only ever chosen by the fallback
CODING_SCHEMES = (Scheme.MULTILEVEL, Scheme.BLOCKVAR, Scheme.NAIVE)

_MODE_CODES = {Level0Mode.TYPICAL_SET: 0, Level0Mode.LZ78_FIXED: 1}


def scheme_of(plan: Plan) -> Scheme:
    if isinstance(plan, LevelPlan):
        return Scheme.MULTILEVEL
    if isinstance(plan, BlockPlan2):
        return Scheme.BLOCKVAR
    if isinstance(plan, RawPlan):
        return Scheme.RAW
    return Scheme.NAIVE


def raw_width(alphabet_size: int) -> int:
    return max(1, bit_width(alphabet_size))


@dataclass(frozen=True)
class ContainerHeader:
    MAGIC = b"LCU1"
    VERSION = 1

    scheme: Scheme
    mode: Level0Mode
    n: int
    pad: int
    pmf_numerators: tuple[int, ...]
    eps0: Fraction
    b0: int
    k0: int
    aux: int
    typ_len: int
    raw_len: int
    y_len: int
    z_len: int
    c_a: Fraction
    c_b: Fraction
    body_bits: int
    flag_bit: int = 0

    _FIXED = struct.Struct("<4sBBBBQQH")
    _PARAMS = struct.Struct("<13I")
    _LENGTH = struct.Struct("<Q")

    @property
    def alphabet_size(self) -> int:
        return len(self.pmf_numerators)

    @property
    def model(self) -> SourceModel:
        return SourceModel.from_numerators(self.pmf_numerators)

    @classmethod
    def for_plan(
        cls,
        plan: Plan,
        body_bits: int,
        constants: tuple[Fraction, Fraction] = (Fraction(0), Fraction(0)),
    ) -> "ContainerHeader":
        scheme = scheme_of(plan)
        common = dict(
            scheme=scheme,
            n=plan.n,
            pad=plan.pad,
            pmf_numerators=plan.model.numerators,
            c_a=as_fraction(constants[0]),
            c_b=as_fraction(constants[1]),
            body_bits=body_bits,
        )
        if scheme is Scheme.MULTILEVEL:
            return cls(
                mode=plan.mode, eps0=plan.eps0, b0=plan.b0, k0=plan.k0, aux=plan.level_max,
                typ_len=0, raw_len=0, y_len=0, z_len=0, **common,
            )
        if scheme is Scheme.BLOCKVAR:
            return cls(
                mode=Level0Mode.TYPICAL_SET, eps0=plan.eps0, b0=plan.b0, k0=plan.block_bits, aux=plan.b1,
                typ_len=plan.typ_len, raw_len=plan.raw_len, y_len=plan.y_len, z_len=plan.z_len, **common,
            )
        if scheme is Scheme.RAW:
            return cls(
                mode=Level0Mode.TYPICAL_SET, eps0=plan.eps0, b0=0, k0=0, aux=0,
                typ_len=0, raw_len=0, y_len=0, z_len=0, **common,
            )
        return cls(
            mode=Level0Mode.TYPICAL_SET, eps0=plan.eps0, b0=plan.block_len, k0=plan.code_len, aux=0,
            typ_len=0, raw_len=0, y_len=0, z_len=0, **common,
        )

    def pack(self) -> bytes:
        fixed = self._FIXED.pack(
            self.MAGIC, self.VERSION, self.scheme.code, _MODE_CODES[self.mode], self.flag_bit,
            self.n, self.pad, self.alphabet_size,
        )
        params = self._PARAMS.pack(
            self.eps0.numerator, self.eps0.denominator, self.b0, self.k0, self.aux,
            self.typ_len, self.raw_len, self.y_len, self.z_len,
            self.c_a.numerator, self.c_a.denominator, self.c_b.numerator, self.c_b.denominator,
        )
        pmf = struct.pack(f"<{self.alphabet_size}Q", *self.pmf_numerators)
        return fixed + params + pmf + self._LENGTH.pack(self.body_bits)

    @classmethod
    def parse(cls, data: bytes) -> tuple["ContainerHeader", int]:
        """Parse a header; returns it with the byte offset of the body."""
        if len(data) < 4:
            raise TruncatedFile(f"{len(data)} bytes cannot hold a header")
        if data[:4] != cls.MAGIC:
            raise BadMagic(f"expected magic {cls.MAGIC!r}, found {bytes(data[:4])!r}")
        try:
            magic, version, scheme, mode, flag_bit, n, pad, alphabet = cls._FIXED.unpack_from(data, 0)
            if version != cls.VERSION:
                raise BadVersion(f"container version {version} is not supported (expected {cls.VERSION})")
            offset = cls._FIXED.size
            params = cls._PARAMS.unpack_from(data, offset)
            offset += cls._PARAMS.size
            pmf = struct.unpack_from(f"<{alphabet}Q", data, offset)
            offset += 8 * alphabet
            (body_bits,) = cls._LENGTH.unpack_from(data, offset)
            offset += cls._LENGTH.size
        except struct.error as exc:
            raise TruncatedFile("container header is truncated") from exc
        modes = {code: m for m, code in _MODE_CODES.items()}
        if mode not in modes:
            raise ContainerFormatError(f"unknown mode id {mode}")
        eps_num, eps_den, b0, k0, aux, typ_len, raw_len, y_len, z_len, ca_n, ca_d, cb_n, cb_d = params
        if not eps_den or not ca_d or not cb_d:
            raise ContainerFormatError("zero denominator in header")
        header = cls(
            scheme=Scheme.from_code(scheme), mode=modes[mode], n=n, pad=pad, pmf_numerators=tuple(pmf),
            eps0=Fraction(eps_num, eps_den), b0=b0, k0=k0, aux=aux, typ_len=typ_len, raw_len=raw_len,
            y_len=y_len, z_len=z_len, c_a=Fraction(ca_n, ca_d), c_b=Fraction(cb_n, cb_d),
            body_bits=body_bits, flag_bit=flag_bit,
        )
        return header, offset

    def plan(self) -> Plan:
        """Rebuild the plan this header describes, checking every derived width."""
        try:
            model = self.model
        except ValueError as exc:
            raise ContainerFormatError(f"header pmf is invalid: {exc}") from exc
        if self.scheme is Scheme.MULTILEVEL:
            plan = multilevel.make_plan(model, self.eps0, self.n, self.mode, b0=self.b0, k0=self.k0, max_level=self.aux)
            derived = (plan.level_max,)
            stored = (self.aux,)
        elif self.scheme is Scheme.BLOCKVAR:
            plan = blockvarlen.make_plan2(model, self.eps0, self.n, b0=self.b0, b1=self.aux, y_len=self.y_len)
            derived = (plan.block_bits, plan.typ_len, plan.raw_len, plan.z_len)
            stored = (self.k0, self.typ_len, self.raw_len, self.z_len)
        elif self.scheme is Scheme.RAW:
            plan = RawPlan(model, self.n, self.eps0)
            derived = (0, 0)
            stored = (self.b0, self.k0)
        else:
            plan = blockvarlen.make_naive_plan(model, self.eps0, self.n, block_len=self.b0)
            derived = (plan.code_len,)
            stored = (self.k0,)
        if derived != stored or plan.pad != self.pad:
            raise ContainerFormatError(f"header fields {stored} disagree with the rebuilt plan {derived}")
        return plan


def parse(data: bytes) -> tuple[ContainerHeader, ProbeMeteredBits]:
    header, offset = ContainerHeader.parse(data)
    body = data[offset:]
    if len(body) * 8 < header.body_bits:
        raise TruncatedFile(f"body holds {len(body)} bytes, header declares {header.body_bits} bits")
    return header, ProbeMeteredBits.from_bytes(body, header.body_bits)


# ---------------------------------------------------------------------------
# Plans and models
# ---------------------------------------------------------------------------
def estimate_model(symbols: Sequence[int] | np.ndarray, alphabet_size: int) -> SourceModel:
    """Empirical pmf with add-one smoothing over the declared alphabet."""
    arr = np.asarray(symbols, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("cannot estimate a model from an empty message")
    counts = np.bincount(arr, minlength=alphabet_size) + 1
    if counts.size != alphabet_size:
        raise ValueError(f"symbols exceed the declared alphabet of {alphabet_size}")
    return SourceModel.from_probabilities([Fraction(int(c)) for c in counts])


def build_plan(
    scheme: Scheme | str,
    model: SourceModel,
    eps0: int | float | str | Fraction,
    n: int,
    mode: Level0Mode | str = Level0Mode.TYPICAL_SET,
    *,
    constants: tuple[Fraction, Fraction] | None = None,
    **overrides: int,
) -> Plan:
    scheme = Scheme(scheme)
    mode = Level0Mode(mode)
    if scheme is not Scheme.MULTILEVEL and mode is Level0Mode.LZ78_FIXED:
        raise PlanInfeasible(f"universal mode is only available for the multilevel scheme, not {scheme.value}")
    if scheme is Scheme.RAW:
        return RawPlan(model, n, as_fraction(eps0))
    if scheme is Scheme.MULTILEVEL:
        c_a = constants[0] if constants else 1
        return multilevel.make_plan(model, eps0, n, mode, lz_constant=c_a, **overrides)
    if scheme is Scheme.BLOCKVAR:
        c0, c1 = constants if constants else (8, 4)
        return blockvarlen.make_plan2(model, eps0, n, c0=c0, c1=c1, **overrides)
    c = constants[0] if constants else 8
    return blockvarlen.make_naive_plan(model, eps0, n, c=c, **overrides)


def _encode_strict(symbols: np.ndarray, plan: Plan) -> ProbeMeteredBits:
    if isinstance(plan, LevelPlan):
        return multilevel.encode(symbols, plan)
    if isinstance(plan, BlockPlan2):
        return blockvarlen.encode2(symbols, plan, strict=True)
    return blockvarlen.naive_encode(symbols, plan, strict=True)


def _raw_body(symbols: np.ndarray, alphabet_size: int) -> bitarray:
    return bitarray("0", endian="big") + pack_symbols(symbols, raw_width(alphabet_size))


# ---------------------------------------------------------------------------
# Container
# ---------------------------------------------------------------------------
class Container:
    """A parsed container: header, rebuilt plan and metered body."""

    def __init__(
        self,
        header: ContainerHeader,
        plan: Plan,
        body: ProbeMeteredBits,
        path: Path | None = None,
    ) -> None:
        self.header = header
        self.plan = plan
        self.body = body
        self.path = path

    # --------------------------------------------------------- construction
    @classmethod
    def encode(
        cls,
        symbols: Sequence[int] | np.ndarray,
        plan: Plan,
        constants: tuple[Fraction, Fraction] = (Fraction(0), Fraction(0)),
    ) -> "Container":
        arr = np.asarray(symbols, dtype=np.int64)
        if arr.size != plan.n:
            raise ValueError(f"message holds {arr.size} symbols, plan expects {plan.n}")
        if isinstance(plan, RawPlan):
            body = _raw_body(arr, plan.model.alphabet_size)
        else:
            try:
                codeword = _encode_strict(arr, plan)
                body = bitarray("1", endian="big") + codeword.snapshot()
            except EncodingIncomplete as exc:
                logger.info("Falling back to raw storage: %s", exc)
                body = _raw_body(arr, plan.model.alphabet_size)
        header = ContainerHeader.for_plan(plan, len(body), constants)
        return cls(header, plan, ProbeMeteredBits.from_bitarray(body))

    @classmethod
    def from_bytes(cls, data: bytes, path: Path | None = None, *, track_distinct: bool = False) -> "Container":
        header, body = parse(data)
        plan = header.plan()
        if isinstance(plan, RawPlan) and body.snapshot()[:1] != bitarray("0"):
            raise ContainerFormatError("raw-only container must carry the raw branch")
        if track_distinct:
            body = ProbeMeteredBits.from_bitarray(body.snapshot(), track_distinct=True)
        return cls(header, plan, body, path)

    @classmethod
    def open(cls, path: str | Path, *, track_distinct: bool = False) -> "Container":
        path = Path(path)
        return cls.from_bytes(path.read_bytes(), path, track_distinct=track_distinct)

    def to_bytes(self) -> bytes:
        return self.header.pack() + self.body.to_bytes()

    def save(self, path: str | Path | None = None) -> Path:
        """Write atomically through a temporary file in the target directory."""
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ValueError("container has no path to save to")
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(self.to_bytes())
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.path = target
        return target

    # ------------------------------------------------------------- branches
    @property
    def alphabet_size(self) -> int:
        return self.plan.model.alphabet_size

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def compressed(self) -> bool:
        return bool(self.body.snapshot()[0])

    @property
    def codeword(self) -> ProbeMeteredBits:
        return self.body.window(1, self.body.length_bits - 1)

    def _read_flag(self) -> bool:
        return bool(self.body.read_bits(0, 1))

    @property
    def rate(self) -> float:
        """Body bits per message symbol."""
        return self.body.length_bits / max(1, self.n)

    # ------------------------------------------------------------ decoding
    def decode_all(self) -> np.ndarray:
        if not self._read_flag():
            width = raw_width(self.alphabet_size)
            return unpack_symbols(self.body.read_span(1, self.n * width), width)
        plan = self.plan
        if isinstance(plan, LevelPlan):
            return multilevel.decode(self.codeword, plan)
        if isinstance(plan, BlockPlan2):
            return blockvarlen.decode2(self.codeword, plan)
        return blockvarlen.naive_decode(self.codeword, plan)

    def get(self, start: int, length: int) -> tuple[np.ndarray, int]:
        """Local decode of ``length`` symbols from ``start``; probes include the flag bit."""
        with self.body.probe_scope() as scope:
            symbols = self._get(start, length)
        return symbols, scope.reads

    def _get(self, start: int, length: int) -> np.ndarray:
        if start < 0 or length < 0 or start + length > self.n:
            raise OutOfRange(f"range [{start}, {start + length}) outside message of {self.n} symbols")
        if not self._read_flag():
            width = raw_width(self.alphabet_size)
            return unpack_symbols(self.body.read_span(1 + start * width, length * width), width)
        plan = self.plan
        if isinstance(plan, LevelPlan):
            return localops.local_decode_range(self.codeword, plan, start, length)[0]
        if isinstance(plan, BlockPlan2):
            return blockvarlen.local_decode_range2(self.codeword, plan, start, length)[0]
        return blockvarlen.naive_local_decode(self.codeword, plan, start, length)[0]

    # ------------------------------------------------------------ updating
    def set(self, start: int, symbols: Sequence[int] | np.ndarray) -> ProbeCounts:
        """Local update; a failed fixed-length update flips the container to raw."""
        arr = np.asarray(symbols, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.alphabet_size):
            raise ValueError(f"symbols must lie in [0, {self.alphabet_size})")
        with self.body.probe_scope() as scope:
            try:
                self._set(start, arr)
            except EncodingIncomplete as exc:
                logger.info("Update at %d cannot stay compressed (%s); switching to raw storage", start, exc)
                message = self.decode_all()
                message[start:start + arr.size] = arr
                self._replace_body(_raw_body(message, self.alphabet_size))
                return scope.counts + ProbeCounts(writes=self.body.length_bits)
        return scope.counts

    def _replace_body(self, body: bitarray) -> None:
        self.body = ProbeMeteredBits.from_bitarray(body)
        self.header = ContainerHeader.for_plan(self.plan, len(body), (self.header.c_a, self.header.c_b))

    def _set(self, start: int, arr: np.ndarray) -> None:
        if start < 0 or start + arr.size > self.n:
            raise OutOfRange(f"range [{start}, {start + arr.size}) outside message of {self.n} symbols")
        if not self._read_flag():
            self.body.write_span(1 + start * raw_width(self.alphabet_size), pack_symbols(arr, raw_width(self.alphabet_size)))
            return
        plan = self.plan
        if isinstance(plan, LevelPlan):
            localops.local_update_range(self.codeword, plan, start, arr)
        elif isinstance(plan, BlockPlan2):
            blockvarlen.local_update_range2(self.codeword, plan, start, arr)
        else:
            blockvarlen.naive_local_update(self.codeword, plan, start, arr)

    # ------------------------------------------------------------- inspect
    def level_histogram(self, samples: int, rng: np.random.Generator) -> dict[str, object]:
        """Sampled storage statistics; reads a few words, never the whole body."""
        with self.body.probe_scope() as scope:
            stats = self._sample_stats(samples, rng)
        stats["probes"] = scope.reads
        stats["body_bits"] = self.body.length_bits
        return stats

    def _sample_stats(self, samples: int, rng: np.random.Generator) -> dict[str, object]:
        if not self._read_flag():
            return {"branch": "raw"}
        plan = self.plan
        if isinstance(plan, LevelPlan):
            picks = rng.integers(0, plan.group_count(0), size=samples)
            levels = [localops.encoding_level(self.codeword, plan, int(j)) for j in picks]
            histogram = np.bincount(levels, minlength=plan.level_max + 1) / max(1, len(levels))
            return {"branch": "compressed", "level_histogram": [float(v) for v in histogram]}
        if isinstance(plan, BlockPlan2):
            picks = rng.integers(0, plan.n_blocks, size=samples)
            valid = [self.codeword.read_bits(plan.block_offset(int(i)), 1) for i in picks]
            return {"branch": "compressed", "valid_fraction": float(np.mean(valid))}
        picks = rng.integers(0, plan.n_blocks, size=samples)
        nonzero = [
            bool(self.codeword.read_bits(int(i) * plan.code_len, plan.code_len)) for i in picks
        ]
        return {"branch": "compressed", "valid_fraction": float(np.mean(nonzero))}


def wrap_encode(
    symbols: Sequence[int] | np.ndarray,
    plan: Plan,
    constants: tuple[Fraction, Fraction] = (Fraction(0), Fraction(0)),
) -> bytes:
    """Container bytes for ``symbols``; falls back to raw when the scheme cannot encode."""
    return Container.encode(symbols, plan, constants).to_bytes()


# ---------------------------------------------------------------------------
# Files as symbol streams
# ---------------------------------------------------------------------------
def bytes_to_symbols(data: bytes, alphabet_size: int) -> np.ndarray:
    if alphabet_size not in FILE_ALPHABETS:
        raise ValueError(f"file alphabets must be one of {FILE_ALPHABETS}, got {alphabet_size}")
    bits = bitarray(endian="big")
    bits.frombytes(bytes(data))
    return unpack_symbols(bits, bit_width(alphabet_size))


def symbols_to_bytes(symbols: Sequence[int] | np.ndarray, alphabet_size: int) -> bytes:
    if alphabet_size not in FILE_ALPHABETS:
        raise ValueError(f"file alphabets must be one of {FILE_ALPHABETS}, got {alphabet_size}")
    bits = pack_symbols(symbols, bit_width(alphabet_size))
    if len(bits) % 8:
        raise ValueError(f"{len(bits)} bits do not form whole bytes")
    return bits.tobytes()
