"""
Monte Carlo locality harness.

Samples messages from a source model, encodes them with one of the schemes
and measures, through the codeword's probe meter only, how many bits local
decoding and local updating touch for fragments of length ``s``.

Reports are long-format tables: one row per (s, metric). Scalar metrics
(rate, entropy, errors, level histogram, survival) use ``s = 0``.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np
import pandas as pd

from src.coding.codecs import Level0Mode
from src.coding.enumcode import SourceModel, as_fraction
from src.errors import BlockErrored, EncodingIncomplete
from src.schemes import blockvarlen, localops, multilevel
from src.schemes.blockvarlen import BlockPlan2
from src.schemes.localops import AscentStrategy
from src.schemes.multilevel import LevelPlan
from src.storage.bitstore import ProbeMeteredBits
from src.storage.container import CODING_SCHEMES, Plan, Scheme, build_plan

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).resolve().parents[2] / "schemas" / "report.schema.json"
REPORT_COLUMNS = ["scheme", "n", "eps0", "seed", "s", "metric", "value"]

DEFAULT_MODELS = ((Fraction(1, 2), Fraction(1, 2)), (Fraction(1, 5), Fraction(4, 5)), (Fraction(1, 10), Fraction(3, 10), Fraction(3, 5)))
DEFAULT_LENGTHS = (1 << 12, 1 << 15, 1 << 18)
DEFAULT_EPSILONS = (Fraction(2, 5), Fraction(1, 4))
DEFAULT_S = (1, 3, 8, 32, 256)


@dataclass
class SeriesStats:
    """Running mean and max of a probe figure."""

    total: int = 0
    samples: int = 0
    peak: int = 0

    def add(self, value: int, *, sampled: bool = True) -> None:
        self.peak = max(self.peak, value)
        if sampled:
            self.total += value
            self.samples += 1

    @property
    def mean(self) -> float:
        return self.total / self.samples if self.samples else 0.0

    def merge(self, other: "SeriesStats") -> "SeriesStats":
        return SeriesStats(self.total + other.total, self.samples + other.samples, max(self.peak, other.peak))


@dataclass
class TrialReport:
    """Aggregated measurements of one (scheme, n, eps0) experiment.

    ``reads`` meters the single-bit ascent, which peeks at one indicator bit
    per level before reading any slot. ``full_word_reads`` (multilevel only)
    reads every visited word whole: at s = n it never exceeds ``total_bits`` and
    equals it once every word is visited, as in a single-level plan. Single-bit
    reads carry no such identity.
    """

    scheme: str
    n: int
    eps0: Fraction
    seed: int
    rate: float
    entropy: float
    total_bits: int
    s_values: tuple[int, ...]
    reads: dict[int, SeriesStats] = field(default_factory=dict)
    updates: dict[int, SeriesStats] = field(default_factory=dict)
    full_word_reads: dict[int, SeriesStats] = field(default_factory=dict)
    level_counts: list[int] = field(default_factory=list)
    survival_counts: list[tuple[int, int]] = field(default_factory=list)
    encodes: int = 0
    errors: int = 0
    update_failures: int = 0

    # ------------------------------------------------------------- derived
    @property
    def level_histogram(self) -> list[float]:
        total = sum(self.level_counts)
        return [c / total if total else 0.0 for c in self.level_counts]

    @property
    def survival(self) -> list[float]:
        """delta-hat per level: share of symbols entering a level that also survive it."""
        return [left / entering if entering else 0.0 for entering, left in self.survival_counts]

    @property
    def error_rate(self) -> float:
        return self.errors / self.encodes if self.encodes else 0.0

    def sublinear_violations(self) -> list[int]:
        """Every measured s >= 3 whose mean read cost is not below s times the s = 1 cost."""
        if 1 not in self.reads or not self.reads[1].samples:
            return []
        base = self.reads[1].mean
        return [s for s in self.s_values if s >= 3 and s in self.reads and self.reads[s].samples and not self.reads[s].mean < s * base]

    def rows(self) -> list[dict[str, object]]:
        head = {"scheme": self.scheme, "n": self.n, "eps0": str(self.eps0), "seed": self.seed}
        out = []

        def emit(s: int, metric: str, value: float) -> None:
            out.append({**head, "s": s, "metric": metric, "value": float(value)})

        emit(0, "rate", self.rate)
        emit(0, "entropy", self.entropy)
        emit(0, "total_bits", self.total_bits)
        emit(0, "encodes", self.encodes)
        emit(0, "errors", self.errors)
        emit(0, "update_failures", self.update_failures)
        for level, share in enumerate(self.level_histogram):
            emit(0, f"level_{level}", share)
        for level, delta in enumerate(self.survival):
            emit(0, f"survival_{level}", delta)
        for s in self.s_values:
            for name, table in (("read", self.reads), ("update", self.updates), ("read_full_words", self.full_word_reads)):
                if s in table and table[s].samples:
                    emit(s, f"{name}_mean", table[s].mean)
                    emit(s, f"{name}_max", table[s].peak)
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=REPORT_COLUMNS)


# ---------------------------------------------------------------------------
# Scheme dispatch
# ---------------------------------------------------------------------------
def _encode(symbols: np.ndarray, plan: Plan) -> tuple[ProbeMeteredBits, multilevel.EncodeStats | None]:
    if isinstance(plan, LevelPlan):
        return multilevel.encode_with_stats(symbols, plan)
    if isinstance(plan, BlockPlan2):
        return blockvarlen.encode2(symbols, plan, strict=True), None
    return blockvarlen.naive_encode(symbols, plan, strict=True), None


def _read(buf: ProbeMeteredBits, plan: Plan, start: int, length: int, strategy: AscentStrategy) -> int:
    if isinstance(plan, LevelPlan):
        return localops.local_decode_range(buf, plan, start, length, strategy)[1]
    if isinstance(plan, BlockPlan2):
        return blockvarlen.local_decode_range2(buf, plan, start, length)[1]
    return blockvarlen.naive_local_decode(buf, plan, start, length)[1]


def _update(buf: ProbeMeteredBits, plan: Plan, start: int, symbols: np.ndarray) -> int:
    if isinstance(plan, LevelPlan):
        return localops.local_update_range(buf, plan, start, symbols).total
    if isinstance(plan, BlockPlan2):
        return blockvarlen.local_update_range2(buf, plan, start, symbols).total
    return blockvarlen.naive_local_update(buf, plan, start, symbols).total


def boundary_unit(plan: Plan) -> int:
    """Length of the smallest independently stored fragment."""
    if isinstance(plan, LevelPlan):
        return plan.b0
    if isinstance(plan, BlockPlan2):
        return plan.b1
    return plan.block_len


def boundary_starts(n: int, s: int, unit: int) -> list[int]:
    """Starts of every length-``s`` window that straddles a ``unit`` boundary."""
    starts = set()
    for edge in range(unit, n, unit):
        starts.add(min(max(0, edge - 1), n - s))
        starts.add(min(max(0, edge - s // 2 - 1), n - s))
    return sorted(starts)


def _survival(stats: multilevel.EncodeStats, n: int) -> list[tuple[int, int]]:
    entering = [n] + stats.residual_symbols[:-1]
    return list(zip(entering, stats.residual_symbols))


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------
def run_locality_trial(
    model: SourceModel,
    scheme: Scheme | str,
    n: int,
    eps0: int | float | str | Fraction,
    s_list: Sequence[int],
    trials: int,
    seed: int,
    *,
    probes: int = 100,
    plan: Plan | None = None,
    mode: Level0Mode | str = Level0Mode.TYPICAL_SET,
    boundaries: bool = True,
) -> TrialReport:
    """Encode ``trials`` sampled messages and probe each with ``probes`` reads and updates per s."""
    rng = np.random.default_rng(seed)
    scheme = Scheme(scheme)
    if scheme not in CODING_SCHEMES:
        raise ValueError(f"scheme {scheme.value} has no codeword to measure")
    if plan is None:
        plan = build_plan(scheme, model, eps0, n, mode)
    s_values = tuple(s for s in s_list if 1 <= s <= n)
    report = TrialReport(
        scheme=scheme.value,
        n=n,
        eps0=as_fraction(eps0),
        seed=seed,
        rate=plan.total_bits / n,
        entropy=model.entropy,
        total_bits=plan.total_bits,
        s_values=s_values,
    )
    is_multilevel = isinstance(plan, LevelPlan)
    if is_multilevel:
        report.level_counts = [0] * (plan.level_max + 1)
        report.survival_counts = [(0, 0)] * (plan.level_max + 1)
    unit = boundary_unit(plan)

    for trial in range(trials):
        message = model.sample(n, rng)
        report.encodes += 1
        try:
            buf, stats = _encode(message, plan)
        except EncodingIncomplete as exc:
            report.errors += 1
            logger.debug("Trial %d: %s", trial, exc)
            continue
        if stats is not None:
            for level, count in enumerate(np.bincount(stats.block_levels, minlength=plan.level_max + 1)):
                report.level_counts[level] += int(count)
            report.survival_counts = [
                (a + e, b + left) for (a, b), (e, left) in zip(report.survival_counts, _survival(stats, plan.padded_length))
            ]

        for s in s_values:
            reads = report.reads.setdefault(s, SeriesStats())
            full = report.full_word_reads.setdefault(s, SeriesStats()) if is_multilevel else None
            starts = rng.integers(0, n - s + 1, size=probes)
            extra = boundary_starts(n, s, unit) if boundaries else []
            for i, start in enumerate(list(starts) + extra):
                sampled = i < probes
                reads.add(_read(buf, plan, int(start), s, AscentStrategy.SINGLE_BIT), sampled=sampled)
                if full is not None:
                    full.add(_read(buf, plan, int(start), s, AscentStrategy.FULL_WORDS), sampled=sampled)

        working = buf.copy()
        for s in s_values:
            updates = report.updates.setdefault(s, SeriesStats())
            for start in rng.integers(0, n - s + 1, size=probes):
                payload = model.sample(s, rng)
                try:
                    updates.add(_update(working, plan, int(start), payload))
                except (EncodingIncomplete, BlockErrored):
                    report.update_failures += 1

    violations = report.sublinear_violations() if is_multilevel else []
    if violations:
        logger.warning("Reads are not sublinear in s for s=%s (scheme=%s, n=%d)", violations, scheme.value, n)
    logger.info(
        "Trial %s n=%d eps0=%s seed=%d: rate=%.4f errors=%d/%d",
        scheme.value, n, report.eps0, seed, report.rate, report.errors, report.encodes,
    )
    return report


def merge_reports(reports: Iterable[TrialReport]) -> TrialReport:
    """Deterministic reduction of per-seed reports for one (scheme, n, eps0)."""
    ordered = sorted(reports, key=lambda r: r.seed)
    if not ordered:
        raise ValueError("nothing to merge")
    first = ordered[0]
    for other in ordered[1:]:
        if (other.scheme, other.n, other.eps0, other.s_values) != (first.scheme, first.n, first.eps0, first.s_values):
            raise ValueError("reports describe different experiments")
    merged = TrialReport(
        scheme=first.scheme, n=first.n, eps0=first.eps0, seed=first.seed, rate=first.rate,
        entropy=first.entropy, total_bits=first.total_bits, s_values=first.s_values,
        level_counts=[0] * len(first.level_counts), survival_counts=[(0, 0)] * len(first.survival_counts),
    )
    for report in ordered:
        for table, own in ((merged.reads, report.reads), (merged.updates, report.updates), (merged.full_word_reads, report.full_word_reads)):
            for s, stats in own.items():
                table[s] = table.get(s, SeriesStats()).merge(stats)
        merged.level_counts = [a + b for a, b in zip(merged.level_counts, report.level_counts)]
        merged.survival_counts = [(a + c, b + d) for (a, b), (c, d) in zip(merged.survival_counts, report.survival_counts)]
        merged.encodes += report.encodes
        merged.errors += report.errors
        merged.update_failures += report.update_failures
    return merged


def _trial_job(args: tuple) -> TrialReport:
    pmf, scheme, n, eps0, s_list, trials, seed, probes, mode = args
    return run_locality_trial(
        SourceModel.from_probabilities(pmf), scheme, n, eps0, s_list, trials, seed, probes=probes, mode=mode
    )


def run_parallel(
    model: SourceModel,
    scheme: Scheme | str,
    n: int,
    eps0: int | float | str | Fraction,
    s_list: Sequence[int],
    trials: int,
    seed: int,
    *,
    probes: int = 100,
    workers: int = 1,
    mode: Level0Mode | str = Level0Mode.TYPICAL_SET,
) -> TrialReport:
    """Split ``trials`` across ``workers`` seeds (seed, seed + 1, ...) and merge."""
    chunks = [trials // workers + (1 if i < trials % workers else 0) for i in range(max(1, workers))]
    jobs = [
        (model.pmf, Scheme(scheme).value, n, eps0, tuple(s_list), count, seed + i, probes, Level0Mode(mode).value)
        for i, count in enumerate(chunks) if count
    ]
    if workers <= 1 or len(jobs) == 1:
        return merge_reports(_trial_job(job) for job in jobs)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return merge_reports(pool.map(_trial_job, jobs))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------
def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))


def report_document(report: TrialReport) -> dict:
    return {
        "version": 1,
        "scheme": report.scheme,
        "n": report.n,
        "eps0": str(report.eps0),
        "seed": report.seed,
        "rows": report.rows(),
    }


def export_report(report: TrialReport, path: str | Path, fmt: str = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = fmt.lower()
    if fmt == "csv":
        report.to_frame().to_csv(path, index=False, columns=REPORT_COLUMNS)
    elif fmt == "json":
        document = report_document(report)
        jsonschema.validate(instance=document, schema=load_schema())
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r} (expected csv or json)")
    logger.info("Wrote %s report to %s", fmt, path)
    return path


def default_suite() -> list[tuple[tuple[Fraction, ...], int, Fraction]]:
    return [(pmf, n, eps) for pmf in DEFAULT_MODELS for n in DEFAULT_LENGTHS for eps in DEFAULT_EPSILONS]


def flatness(values: Sequence[float]) -> float:
    """Relative spread (max - min) / min of a series, inf when the minimum is 0."""
    lo, hi = min(values), max(values)
    return math.inf if lo == 0 else (hi - lo) / lo
