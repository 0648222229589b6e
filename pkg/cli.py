"""Command-line front door: design, simulate, estimate, wtp, discount-rate, ladder, recovery."""

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from config import PAIRING_POLICIES, settings
from database import load_dataset, load_reported_prices, write_assignments, write_dataset
from design import DesignSpec, build_design, generate_bank, load_design_spec, write_bank
from estimator import FitOptions, fit_from_json, fit_ladder, fit_to_json, maximize_cml, neutral_start
from exceptions import (
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_VALIDATION,
    InvalidInputError,
    ManifestMismatchError,
    cli_exception_handler,
    handle_io_error,
)
from modelspec import ModelSpec, ParameterVector, load_params, load_spec, preset_spec
from simulate import SimConfig, recovery_experiment, sample_reported_prices, simulate_dataset
from wtp import ATTRIBUTES, discount_rate, format_rate, load_grid, load_profile, wtp_curve, write_curve

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Options whose values are input files; their digests go into the manifest.
INPUT_OPTIONS = ("spec", "params", "design", "respondents", "tasks", "start", "fit", "profile", "grid")


class RunManifest(BaseModel):
    """Everything needed to repeat a run."""

    subcommand: str = Field(..., description="Subcommand that produced the outputs")
    options: Dict[str, Any] = Field(..., description="Resolved option set")
    inputs: Dict[str, str] = Field(default_factory=dict, description="Input path -> sha256 digest")
    outputs: List[str] = Field(default_factory=list, description="Files written by the run")
    seed: int = Field(..., description="Master seed")
    version: str = Field(..., description="Tool version")
    wall_time: float = Field(..., ge=0, description="Seconds spent in the subcommand")
    exit_code: int = Field(EXIT_OK, description="Exit code of the run")


class UsageExitParser(argparse.ArgumentParser):
    """Parser that reports usage errors with the validation exit code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


@handle_io_error
def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@handle_io_error
def load_manifest(path) -> RunManifest:
    with open(path, encoding="utf-8") as f:
        return RunManifest.model_validate_json(f.read())


def verify_manifest(path) -> RunManifest:
    """Recompute the input digests recorded in a manifest."""
    manifest = load_manifest(path)
    for input_path, recorded in manifest.inputs.items():
        if not Path(input_path).exists() or file_digest(input_path) != recorded:
            raise ManifestMismatchError(input_path)
    logger.info(f"Manifest {path} matches {len(manifest.inputs)} inputs")
    return manifest


@handle_io_error
def write_manifest(manifest: RunManifest, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        f.write(manifest.model_dump_json(indent=2))
    return path


# Run context


class Run:
    """Resolved arguments plus the files a subcommand reads and writes."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out_dir: Optional[Path] = Path(args.out_dir) if args.out_dir else None
        self.outputs: List[Path] = []

    def output(self, path: str) -> Path:
        target = Path(path)
        if self.out_dir is not None and not target.is_absolute():
            target = self.out_dir / target
        target.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(target)
        return target

    def threads(self) -> int:
        return settings.resolve_threads(self.args.threads)

    def fit_options(self) -> FitOptions:
        overrides: Dict[str, Any] = {"threads": self.threads()}
        if getattr(self.args, "pairing", None):
            overrides["pairing"] = self.args.pairing
        if getattr(self.args, "max_iter", None):
            overrides["max_iter"] = self.args.max_iter
        if getattr(self.args, "no_covariance", False):
            overrides["covariance"] = False
        return FitOptions(**overrides)

    def manifest_dir(self) -> Path:
        if self.out_dir is not None:
            return self.out_dir
        if self.outputs:
            return self.outputs[0].parent
        return Path(".")

    def inputs(self) -> Dict[str, str]:
        return {
            str(getattr(self.args, name)): file_digest(getattr(self.args, name))
            for name in INPUT_OPTIONS
            if getattr(self.args, name, None)
        }

    def options(self) -> Dict[str, Any]:
        return {
            key: (str(value) if isinstance(value, Path) else value)
            for key, value in sorted(vars(self.args).items())
            if key != "handler"
        }


def _params_for(spec: ModelSpec, path: Optional[str]) -> ParameterVector:
    if not path:
        raise InvalidInputError("--params is required")
    return load_params(spec, path)


# Subcommands


def run_design(run: Run) -> int:
    args = run.args
    spec = load_design_spec(args.spec) if args.spec else DesignSpec()
    spec.validate_spec()
    if args.respondents:
        prices: Sequence[Tuple[str, float]] = load_reported_prices(args.respondents)
    else:
        if not args.n_respondents:
            raise InvalidInputError("give --respondents or --n-respondents")
        rng = np.random.default_rng(args.seed)
        drawn = sample_reported_prices(rng, args.n_respondents)
        prices = [(f"R{n + 1:05d}", float(price)) for n, price in enumerate(drawn)]

    assignments = build_design(spec, prices, args.seed)
    write_assignments(assignments, run.output(args.out))
    if args.out_bank:
        write_bank(generate_bank(spec, args.seed), run.output(args.out_bank))
    return EXIT_OK


def run_simulate(run: Run) -> int:
    args = run.args
    spec = load_spec(args.spec)
    cfg = SimConfig(
        n_respondents=args.n,
        seed=args.seed,
        spec=spec,
        params=_params_for(spec, args.params),
        design=load_design_spec(args.design) if args.design else DesignSpec(),
    )
    dataset = simulate_dataset(cfg)
    write_dataset(dataset, run.output(args.out_respondents), run.output(args.out_tasks))
    return EXIT_OK


def run_estimate(run: Run) -> int:
    args = run.args
    spec = load_spec(args.spec)
    dataset = load_dataset(args.respondents, args.tasks)
    dataset.require_choices()
    start = load_params(spec, args.start) if args.start else neutral_start(spec, dataset)
    fit = maximize_cml(spec, dataset, start, run.fit_options())
    fit_to_json(fit, run.output(args.out))
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def run_wtp(run: Run) -> int:
    args = run.args
    spec = load_spec(args.spec)
    if args.fit:
        fit = fit_from_json(args.fit)
        if fit.model != spec.name:
            raise InvalidInputError(f"fit belongs to {fit.model}, not {spec.name}")
        params = fit.parameter_vector()
    else:
        params = _params_for(spec, args.params)
    profile = load_profile(args.profile) if args.profile else None
    curve = wtp_curve(spec, params, args.attribute, load_grid(args.grid), profile, unit_change=args.unit_change)
    write_curve(curve, run.output(args.out))
    return EXIT_OK


def run_discount_rate(run: Run) -> int:
    args = run.args
    rate = discount_rate(args.wtp, args.weekly_saving, args.years)
    print(format_rate(rate))
    return EXIT_OK


def run_ladder(run: Run) -> int:
    args = run.args
    dataset = load_dataset(args.respondents, args.tasks)
    dataset.require_choices()
    specs = [load_spec(path) for path in args.specs] if args.specs else [preset_spec(k) for k in (1, 2, 3)]
    ladder = fit_ladder(dataset, specs, run.fit_options())

    stages = []
    for fit in ladder.fits:
        path = run.output(f"fit_{fit.model}.json")
        fit_to_json(fit, path)
        stages.append({"model": fit.model, "objective": fit.objective, "converged": fit.converged, "fit": str(path)})
    summary = run.output(args.out)
    with open(summary, "w", encoding="utf-8") as f:
        json.dump({"stages": stages, "objective_ordering_ok": ladder.objective_ordering_ok}, f, indent=2)
    return EXIT_OK if all(fit.converged for fit in ladder.fits) else EXIT_NOT_CONVERGED


def run_recovery(run: Run) -> int:
    args = run.args
    spec = load_spec(args.spec)
    options = run.fit_options()
    cfg = SimConfig(
        n_respondents=args.n,
        seed=args.seed,
        spec=spec,
        params=_params_for(spec, args.params),
        pairing=options.pairing,
    )
    report = recovery_experiment(cfg, options=options)
    with open(run.output(args.out), "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


# Parser


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags; subcommand copies default to SUPPRESS so they never clobber earlier values."""
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=default(42), help="Master seed (default 42)")
    parent.add_argument("--threads", type=int, default=default(None),
                        help="Worker threads (default REFCHOICE_THREADS or machine cores)")
    parent.add_argument("--out-dir", default=default(None), help="Directory for relative outputs and manifest.json")
    parent.add_argument("--log-level", default=default(None), help="Logging level (default REFCHOICE_LOG_LEVEL)")
    parent.add_argument("--verify-manifest", default=default(None),
                        help="Check a previous manifest's input digests before running")
    return parent


def _estimation_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pairing", choices=PAIRING_POLICIES, help="Pair enumeration policy")
    parser.add_argument("--max-iter", type=int, help="Optimizer iteration cap")
    parser.add_argument("--no-covariance", action="store_true", help="Skip sandwich standard errors")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageExitParser(
        prog=settings.APP_NAME,
        description="Reference-dependent ICLV choice models: design, simulate, estimate, report",
        parents=[_global_flags(suppress=False)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    parent = _global_flags(suppress=True)

    def command(name: str, handler: Callable[[Run], int], help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, parents=[parent])
        p.set_defaults(handler=handler)
        return p

    p = command("design", run_design, "Generate a scenario bank and assign tasks to respondents")
    p.add_argument("--spec", help="Design specification JSON (default: the built-in design)")
    p.add_argument("--respondents", help="respondents.csv supplying reported ICEV prices")
    p.add_argument("--n-respondents", type=int, help="Respondents to sample prices for when no file is given")
    p.add_argument("--out", required=True, help="Output tasks.csv")
    p.add_argument("--out-bank", help="Optional bank.csv")

    p = command("simulate", run_simulate, "Simulate respondents, indicators and choices")
    p.add_argument("--spec", required=True, help="Model specification JSON")
    p.add_argument("--params", required=True, help="True parameter JSON")
    p.add_argument("--n", type=int, required=True, help="Respondents to simulate")
    p.add_argument("--design", help="Design specification JSON")
    p.add_argument("--out-respondents", required=True, help="Output respondents.csv")
    p.add_argument("--out-tasks", required=True, help="Output tasks.csv")

    p = command("estimate", run_estimate, "Maximize the composite marginal likelihood")
    p.add_argument("--spec", required=True, help="Model specification JSON")
    p.add_argument("--respondents", required=True, help="respondents.csv")
    p.add_argument("--tasks", required=True, help="tasks.csv with observed choices")
    p.add_argument("--start", help="Starting parameter JSON (default: neutral start)")
    p.add_argument("--out", required=True, help="Output fit.json")
    _estimation_flags(p)

    p = command("wtp", run_wtp, "WTP curve over a grid of EV prices and attribute values")
    p.add_argument("--spec", required=True, help="Model specification JSON")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--fit", help="fit.json from estimate")
    source.add_argument("--params", help="Parameter JSON")
    p.add_argument("--attribute", required=True, choices=[a for a in ATTRIBUTES if a != "price"])
    p.add_argument("--profile", help="Demographic profile JSON (default: latent means at zero)")
    p.add_argument("--grid", required=True, help="Grid JSON with ev_price and attribute_values")
    p.add_argument("--unit-change", type=float, help="Attribute change in raw units")
    p.add_argument("--out", required=True, help="Output curve.csv")

    p = command("discount-rate", run_discount_rate, "Annual discount rate implied by a WTP")
    p.add_argument("--wtp", type=float, required=True, help="WTP in INR")
    p.add_argument("--weekly-saving", type=float, required=True, help="Weekly saving in INR")
    p.add_argument("--years", type=int, required=True, help="Years of savings")

    p = command("ladder", run_ladder, "Fit Model 1, 2 and 3 in sequence")
    p.add_argument("--respondents", required=True, help="respondents.csv")
    p.add_argument("--tasks", required=True, help="tasks.csv with observed choices")
    p.add_argument("--specs", nargs="+", help="Stage specification JSONs (default: shipped presets)")
    p.add_argument("--out", default="ladder.json", help="Ladder summary JSON")
    _estimation_flags(p)

    p = command("recovery", run_recovery, "Simulate, estimate and compare with the truth")
    p.add_argument("--spec", required=True, help="Model specification JSON")
    p.add_argument("--params", required=True, help="True parameter JSON")
    p.add_argument("--n", type=int, required=True, help="Respondents to simulate")
    p.add_argument("--out", default="recovery.json", help="Recovery report JSON")
    _estimation_flags(p)
    return parser


def _configure_logging(level: Optional[str]) -> None:
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION

    _configure_logging(args.log_level)
    run = Run(args)
    started = time.perf_counter()
    try:
        if args.verify_manifest:
            verify_manifest(args.verify_manifest)
        inputs = run.inputs()
        code = args.handler(run)
    except ValidationError as exc:
        logger.error(f"Invalid document: {exc}")
        return EXIT_VALIDATION
    except json.JSONDecodeError as exc:
        logger.error(f"Malformed JSON: {exc}")
        return EXIT_VALIDATION
    except Exception as exc:
        return cli_exception_handler(exc)

    manifest = RunManifest(
        subcommand=args.command,
        options=run.options(),
        inputs=inputs,
        outputs=[str(path) for path in run.outputs],
        seed=args.seed,
        version=settings.APP_VERSION,
        wall_time=time.perf_counter() - started,
        exit_code=code,
    )
    try:
        path = write_manifest(manifest, run.manifest_dir())
    except Exception as exc:
        return cli_exception_handler(exc)
    for output in run.outputs:
        logger.info(f"Wrote {output}")
    logger.info(f"Run manifest: {path}")
    if code == EXIT_NOT_CONVERGED:
        logger.warning("Optimizer did not converge; outputs are flagged")
    return code
