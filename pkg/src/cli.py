"""
Command-line entry point: ``python -m src.cli <command> ...``.

Commands: compress, decompress, get, set, bench, inspect.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import fcntl
import logging
import sys
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from src.coding.codecs import Level0Mode, calibrate_universal_k0, universal_k0
from src.coding.enumcode import SourceModel, lemma_block_length
from src.config import ConfigError, Settings, load as load_config
from src.errors import BlockErrored, LocalCodingError, PlanInfeasible
from src.simulation import bench
from src.storage.container import (
    FILE_ALPHABETS,
    CODING_SCHEMES,
    Container,
    RawPlan,
    Scheme,
    build_plan,
    bytes_to_symbols,
    estimate_model,
    symbols_to_bytes,
)

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Flags that parse but do not make sense together."""


# ---------------------------------------------------------------------------
# Symbol strings
# ---------------------------------------------------------------------------
def _hex_digits(alphabet_size: int) -> int:
    return len(format(alphabet_size - 1, "x"))


def format_symbols(symbols: Sequence[int] | np.ndarray, alphabet_size: int) -> str:
    """Digits for alphabets up to 10 symbols, fixed-width hex otherwise."""
    if alphabet_size <= 10:
        return "".join(str(int(s)) for s in symbols)
    width = _hex_digits(alphabet_size)
    return "".join(format(int(s), f"0{width}x") for s in symbols)


def parse_symbols(text: str, alphabet_size: int) -> np.ndarray:
    text = text.strip()
    if alphabet_size <= 10:
        chunks = list(text)
        base = 10
    else:
        width = _hex_digits(alphabet_size)
        if len(text) % width:
            raise UsageError(f"hex data must come in groups of {width} digits")
        chunks = [text[i:i + width] for i in range(0, len(text), width)]
        base = 16
    try:
        values = [int(c, base) for c in chunks]
    except ValueError as exc:
        raise UsageError(f"cannot parse symbol string {text!r}") from exc
    if any(v >= alphabet_size for v in values):
        raise UsageError(f"symbols must lie in [0, {alphabet_size})")
    return np.asarray(values, dtype=np.int64)


def _pmf(text: str) -> tuple[Fraction, ...]:
    try:
        return tuple(Fraction(part) for part in text.split(","))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"invalid pmf {text!r}") from exc


def _s_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid s list {text!r}") from exc


@contextmanager
def _locked(path: Path) -> Iterator[None]:
    """Advisory exclusive lock on a sidecar file next to ``path``."""
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_compress(args: argparse.Namespace, settings: Settings) -> int:
    mode = Level0Mode(args.mode)
    symbols = bytes_to_symbols(args.input.read_bytes(), args.alphabet)
    if args.pmf is not None:
        model = SourceModel.from_probabilities(args.pmf)
    elif symbols.size:
        model = estimate_model(symbols, args.alphabet)
    else:
        model = SourceModel.uniform(args.alphabet)
    eps0 = args.eps if args.eps is not None else settings.default_eps
    scheme = Scheme(args.scheme)

    overrides: dict[str, int] = {}
    constants: tuple[Fraction, Fraction] | None = None
    if scheme is Scheme.MULTILEVEL:
        if args.b0 is not None:
            overrides["b0"] = args.b0
        if mode is Level0Mode.LZ78_FIXED:
            b0 = args.b0 if args.b0 is not None else lemma_block_length(model, eps0)
            overrides["b0"] = b0
            if args.k0 is not None:
                overrides["k0"] = args.k0
            elif args.calibrate:
                rng = np.random.default_rng(args.seed)
                overrides["k0"] = calibrate_universal_k0(model, b0, eps0, settings.calibration_samples, rng)
            else:
                overrides["k0"] = universal_k0(model, b0, eps0, settings.lz_constant)
        elif args.k0 is not None:
            overrides["k0"] = args.k0
        constants = (settings.lz_constant, Fraction(0))
    elif scheme is Scheme.BLOCKVAR:
        constants = (settings.blockvar_c0, settings.blockvar_c1)
    else:
        constants = (settings.naive_c, Fraction(0))

    try:
        plan = build_plan(scheme, model, eps0, int(symbols.size), mode, constants=constants, **overrides)
    except PlanInfeasible as exc:
        logger.warning("No %s plan fits %d symbols (%s); storing raw", scheme.value, symbols.size, exc)
        plan = RawPlan(model, int(symbols.size), eps0)
    container = Container.encode(symbols, plan, constants)
    container.save(args.output)
    branch = "compressed" if container.compressed else "raw"
    print(  # noqa: T201
        f"{args.input} -> {args.output}: {symbols.size} symbols, {container.body.length_bits} body bits "
        f"({container.rate:.4f} bits/symbol, {branch})"
    )
    return 0


def cmd_decompress(args: argparse.Namespace, settings: Settings) -> int:
    container = Container.open(args.input)
    if container.alphabet_size not in FILE_ALPHABETS:
        raise UsageError(f"alphabet of {container.alphabet_size} symbols has no byte mapping")
    args.output.write_bytes(symbols_to_bytes(container.decode_all(), container.alphabet_size))
    print(f"{args.input} -> {args.output}: {container.n} symbols")  # noqa: T201
    return 0


def cmd_get(args: argparse.Namespace, settings: Settings) -> int:
    container = Container.open(args.container, track_distinct=settings.track_distinct)
    length = args.length if args.length is not None else container.n - args.index
    symbols, probes = container.get(args.index, length)
    print(format_symbols(symbols, container.alphabet_size))  # noqa: T201
    print(f"probes read: {probes}", file=sys.stderr)  # noqa: T201
    if settings.track_distinct:
        print(f"distinct bits read: {container.body.distinct_reads}", file=sys.stderr)  # noqa: T201
    return 0


def cmd_set(args: argparse.Namespace, settings: Settings) -> int:
    with _locked(args.container):
        container = Container.open(args.container)
        data = parse_symbols(args.data, container.alphabet_size)
        if args.length is not None and args.length != data.size:
            raise UsageError(f"-s {args.length} disagrees with {data.size} data symbols")
        was_compressed = container.compressed
        counts = container.set(args.index, data)
        container.save()
    if was_compressed and not container.compressed:
        print("update left the compressed form; container switched to raw storage", file=sys.stderr)  # noqa: T201
    print(f"probes read: {counts.reads} written: {counts.writes}")  # noqa: T201
    return 0


def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    model = SourceModel.from_probabilities(args.pmf if args.pmf is not None else (Fraction(1, 2), Fraction(1, 2)))
    eps0 = args.eps if args.eps is not None else settings.default_eps
    report = bench.run_parallel(
        model,
        args.scheme,
        args.n,
        eps0,
        args.s,
        args.trials if args.trials is not None else settings.bench_trials,
        args.seed,
        probes=args.probes if args.probes is not None else settings.bench_probes,
        workers=args.workers if args.workers is not None else settings.workers,
        mode=args.mode,
    )
    path = bench.export_report(report, args.output, args.format)
    print(  # noqa: T201
        f"{report.scheme} n={report.n} eps0={report.eps0}: rate={report.rate:.4f} "
        f"errors={report.errors}/{report.encodes} -> {path}"
    )
    violations = report.sublinear_violations()
    if violations and report.scheme == Scheme.MULTILEVEL.value:
        print(f"reads not sublinear for s={violations}", file=sys.stderr)  # noqa: T201
    return 0


def cmd_inspect(args: argparse.Namespace, settings: Settings) -> int:
    container = Container.open(args.container)
    header = container.header
    lines = [
        f"scheme:        {header.scheme.value}",
        f"mode:          {header.mode.value}",
        f"n:             {header.n} (pad {header.pad})",
        f"alphabet:      {header.alphabet_size}",
        f"pmf:           {', '.join(str(p) for p in container.plan.model.pmf)}",
        f"eps0:          {header.eps0}",
        f"b0 / k0:       {header.b0} / {header.k0}",
        f"body bits:     {header.body_bits} ({container.rate:.4f} bits/symbol)",
    ]
    stats = container.level_histogram(args.sample, np.random.default_rng(args.seed))
    lines.append(f"branch:        {stats['branch']}")
    if "level_histogram" in stats:
        for level, share in enumerate(stats["level_histogram"]):
            lines.append(f"  level {level}:     {share:.2%}")
    if "valid_fraction" in stats:
        lines.append(f"  valid blocks:  {stats['valid_fraction']:.2%}")
    lines.append(f"probes read:   {stats['probes']}")
    for line in lines:
        print(line)  # noqa: T201
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcu", description="Locally decodable and updatable compression.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="raise log verbosity (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    schemes = [s.value for s in CODING_SCHEMES]
    modes = [m.value for m in Level0Mode]

    p = sub.add_parser("compress", help="compress a file into a container")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--scheme", choices=schemes, default=Scheme.MULTILEVEL.value)
    p.add_argument("--mode", choices=modes, default=Level0Mode.TYPICAL_SET.value)
    p.add_argument("--alphabet", type=int, choices=FILE_ALPHABETS, default=2)
    p.add_argument("--pmf", type=_pmf, help="comma-separated masses, e.g. 1/5,4/5 (known mode)")
    p.add_argument("--eps", type=Fraction, help="eps_0 as a rational, e.g. 2/5")
    p.add_argument("--b0", type=int)
    p.add_argument("--k0", type=int)
    p.add_argument("--calibrate", action="store_true", help="Monte Carlo k_0 in universal mode")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_compress)

    p = sub.add_parser("decompress", help="restore the original file")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.set_defaults(handler=cmd_decompress)

    p = sub.add_parser("get", help="locally decode a range")
    p.add_argument("container", type=Path)
    p.add_argument("-i", "--index", type=int, required=True)
    p.add_argument("-s", "--length", type=int)
    p.set_defaults(handler=cmd_get)

    p = sub.add_parser("set", help="locally update a range in place")
    p.add_argument("container", type=Path)
    p.add_argument("-i", "--index", type=int, required=True)
    p.add_argument("-s", "--length", type=int)
    p.add_argument("--data", required=True, help="symbol string (digits, or hex for |X| > 10)")
    p.set_defaults(handler=cmd_set)

    p = sub.add_parser("bench", help="run a locality trial and export the report")
    p.add_argument("--scheme", choices=schemes, default=Scheme.MULTILEVEL.value)
    p.add_argument("--mode", choices=modes, default=Level0Mode.TYPICAL_SET.value)
    p.add_argument("--pmf", type=_pmf)
    p.add_argument("-n", "--n", type=int, default=1 << 12)
    p.add_argument("--eps", type=Fraction)
    p.add_argument("-s", "--s", type=_s_list, default=bench.DEFAULT_S, help="comma-separated fragment lengths")
    p.add_argument("--trials", type=int)
    p.add_argument("--probes", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-o", "--output", type=Path, default=Path("report.csv"))
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("inspect", help="show the header and sampled storage statistics")
    p.add_argument("container", type=Path)
    p.add_argument("--sample", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_inspect)
    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.command in {"compress", "bench"}:
        if args.mode == Level0Mode.LZ78_FIXED.value and args.scheme != Scheme.MULTILEVEL.value:
            parser.error("universal mode is available for the multilevel scheme only")
    if args.command == "compress":
        if args.mode == Level0Mode.LZ78_FIXED.value and args.pmf is not None:
            parser.error("--pmf applies to known mode only")
        if args.calibrate and args.k0 is not None:
            parser.error("--calibrate and --k0 are mutually exclusive")
        if args.pmf is not None and len(args.pmf) != args.alphabet:
            parser.error(f"--pmf lists {len(args.pmf)} masses for an alphabet of {args.alphabet}")
    if args.command in {"get", "set"} and args.index < 0:
        parser.error("-i must be non-negative")
    if getattr(args, "eps", None) is not None and not 0 < args.eps <= Fraction(1, 2):
        parser.error("--eps must lie in (0, 1/2]")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(parser, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = load_config()
    except (ConfigError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)  # noqa: T201
        return 1
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else settings.log_level
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args, settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)  # noqa: T201
        return 2
    except BlockErrored as exc:
        print(f"error: {exc}; re-compress the file to recover this range", file=sys.stderr)  # noqa: T201
        return 1
    except (LocalCodingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)  # noqa: T201
        return 1


if __name__ == "__main__":
    sys.exit(main())
