#!/usr/bin/env python3
"""Parameter recovery study: simulate Model 2 at its published values and re-estimate."""

import argparse
import sys
from pathlib import Path

# Add parent directory to path to import modules
sys.path.append(str(Path(__file__).parent.parent))

from config import settings
from estimator import FitOptions
from modelspec import preset_spec, published_params
from simulate import SimConfig, bias_trend, recovery_experiment
import logging

logging.basicConfig(
    level=settings.LOG_LEVEL,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)


def run_study(model: int, n: int, seed: int, pairing: str, threads: int):
    spec = preset_spec(model)
    cfg = SimConfig(
        n_respondents=n,
        seed=seed,
        spec=spec,
        params=published_params(model, spec),
        pairing=pairing,
    )
    options = FitOptions(pairing=pairing, threads=threads)
    logger.info(f"Recovery of {spec.name}: N={n}, seed {seed}, pairing {pairing}, {threads} threads")
    return recovery_experiment(cfg, options=options)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", type=int, default=2, choices=(1, 2, 3))
    parser.add_argument("--n", type=int, default=5000, help="Respondents in the main run")
    parser.add_argument("--small-n", type=int, help="Smaller run for the bias trend")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--pairing", default=settings.PAIRING)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out", default="recovery.json")
    args = parser.parse_args()

    try:
        settings.validate_config()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        sys.exit(1)

    threads = settings.resolve_threads(args.threads)
    report = run_study(args.model, args.n, args.seed, args.pairing, threads)
    Path(args.out).write_text(report.model_dump_json(indent=2), encoding="utf-8")

    passed = report.share_within_3se >= 0.9 and report.curvatures_in_unit_interval is not False
    print("=" * 50)
    print(f"Model:                 {report.model}")
    print(f"Converged:             {report.converged}")
    print(f"Within 3 SE:           {report.share_within_3se:.1%}")
    print(f"Curvatures in (0, 1):  {report.curvatures_in_unit_interval}")
    if args.small_n:
        small = run_study(args.model, args.small_n, args.seed, args.pairing, threads)
        print(f"Bias shrank (N {args.small_n} -> {args.n}): {bias_trend(small, report):.1%} of parameters")
    print(f"Result:                {'PASS' if passed and report.converged else 'FAIL'}")
    print("=" * 50)
    sys.exit(0 if passed and report.converged else 1)


if __name__ == "__main__":
    main()
