"""
Run the default locality benchmark suite and write one report per setting.

Every (pmf, n, eps_0, scheme) combination becomes a CSV or JSON file in the
output directory; one summary line per report is printed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.coding.enumcode import SourceModel
from src.config import load as load_config
from src.errors import PlanInfeasible
from src.simulation import bench
from src.storage.container import CODING_SCHEMES


def _report_name(scheme: str, pmf, n: int, eps0, fmt: str) -> str:
    pmf_tag = "-".join(f"{p.numerator}_{p.denominator}" for p in pmf)
    return f"{scheme}__p{pmf_tag}__n{n}__eps{eps0.numerator}_{eps0.denominator}.{fmt}"


def main(output_dir: Path, schemes: list[str], fmt: str, trials: int | None, probes: int | None, seed: int) -> None:
    cfg = load_config()
    logging.basicConfig(level=cfg.log_level)
    output_dir.mkdir(parents=True, exist_ok=True)
    for pmf, n, eps0 in bench.default_suite():
        model = SourceModel.from_probabilities(pmf)
        for scheme in schemes:
            try:
                report = bench.run_parallel(
                    model,
                    scheme,
                    n,
                    eps0,
                    bench.DEFAULT_S,
                    trials if trials is not None else cfg.bench_trials,
                    seed,
                    probes=probes if probes is not None else cfg.bench_probes,
                    workers=cfg.workers,
                )
            except PlanInfeasible as e:
                print(f"⚠ {scheme} n={n} eps0={eps0} p={pmf}: skipped ({e})")  # noqa: T201
                continue
            r1 = report.reads[1].mean if 1 in report.reads else float("nan")
            path = bench.export_report(report, output_dir / _report_name(scheme, pmf, n, eps0, fmt), fmt)
            print(  # noqa: T201
                f"✓ {scheme} n={n} eps0={eps0}: rate={report.rate:.4f} "
                f"r_avg(1)={r1:.1f} errors={report.errors}/{report.encodes} -> {path.name}"
            )


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the default locality benchmark suite.")
    parser.add_argument("--output-dir", type=Path, default=Path("reports"))
    parser.add_argument("--scheme", action="append", choices=[s.value for s in CODING_SCHEMES])
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--probes", type=int)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    main(args.output_dir, args.scheme or [s.value for s in CODING_SCHEMES], args.format, args.trials, args.probes, args.seed)
