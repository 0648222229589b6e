"""CML maximization, sandwich standard errors and the Model 1 -> 2 -> 3 ladder."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import minimize
from scipy.special import ndtri

from cml import CompositeLikelihood
from config import settings
from exceptions import GaussianDomainError, NonFiniteObjectiveError, ParameterError, handle_io_error
from models import Dataset
from modelspec import (
    FREE_THRESHOLDS,
    ModelSpec,
    ParameterVector,
    complete_params,
    intercept_name,
    pack,
    preset_spec,
    threshold_name,
    unpack,
    validate_params,
)

logger = logging.getLogger(__name__)

DEDICATED_LOADING_START = -0.5
# Cumulative frequencies are clipped before the inverse normal CDF.
_FREQ_CLIP = 0.005
_MIN_THRESHOLD_GAP = 0.05


class FitOptions(BaseModel):
    """Optimizer and covariance settings."""

    max_iter: int = Field(default_factory=lambda: settings.MAX_ITER, ge=1, description="Iteration cap")
    gradient_tol: float = Field(default_factory=lambda: settings.GRADIENT_TOL, gt=0,
                                description="Infinity-norm gradient tolerance")
    ftol_rel: float = Field(default_factory=lambda: settings.FTOL_REL, gt=0,
                            description="Relative objective change counted as a stall")
    stall_iterations: int = Field(3, ge=1, description="Successive stalls that stop the optimizer")
    fd_step: float = Field(default_factory=lambda: settings.FD_STEP, gt=0, description="Score step")
    hessian_step: float = Field(default_factory=lambda: settings.HESSIAN_STEP, gt=0, description="Hessian step")
    pairing: str = Field(default_factory=lambda: settings.PAIRING, description="paper or extended")
    threads: Optional[int] = Field(None, ge=1, description="Worker threads for finite differences")
    covariance: bool = Field(True, description="Compute sandwich standard errors")


class FitResult(BaseModel):
    """Outcome of one CML maximization."""

    model: str = Field(..., description="ModelSpec name")
    params: Dict[str, float] = Field(..., description="Estimates on the constrained scale")
    labels: Dict[str, str] = Field(default_factory=dict, description="Report label per parameter")
    free_names: List[str] = Field(default_factory=list, description="Names of the unconstrained coordinates")
    unconstrained: List[float] = Field(default_factory=list, description="Optimum on the unconstrained scale")
    objective: float = Field(..., description="Composite log-likelihood at the optimum")
    gradient_norm: float = Field(..., description="Infinity norm of the unconstrained gradient")
    iterations: int = Field(0, description="Optimizer iterations")
    converged: bool = Field(False, description="Gradient norm within tolerance")
    stop_reason: str = Field("", description="Why the optimizer stopped")
    pairing: str = Field("paper", description="Pairing policy used")
    n_respondents: int = Field(0, description="Respondents in the estimation sample")
    covariance: Optional[List[List[float]]] = Field(None, description="Sandwich covariance, constrained scale")
    std_errors: Dict[str, Optional[float]] = Field(default_factory=dict, description="Composite standard errors")
    hessian_singular: bool = Field(False, description="Pseudo-inverse used for the Hessian")
    wall_time: float = Field(0.0, description="Seconds spent fitting")

    def parameter_vector(self) -> ParameterVector:
        return ParameterVector(model=self.model, values=self.params)

    def z_score(self, name: str, truth: float) -> Optional[float]:
        se = self.std_errors.get(name)
        if not se:
            return None
        return (self.params[name] - truth) / se


class LadderResult(BaseModel):
    fits: List[FitResult]
    objective_ordering_ok: bool = Field(..., description="CML(M3) >= CML(M2) >= CML(M1)")


# Starting values


def _threshold_start(categories: np.ndarray, loading_sq: float) -> Tuple[float, List[float]]:
    """Intercept and thresholds 2..4 reproducing the empirical cumulative frequencies."""
    counts = np.array([np.sum(categories == m) for m in range(1, 6)], dtype=float)
    cumulative = np.cumsum(counts)[:-1] / max(counts.sum(), 1.0)
    z = ndtri(np.clip(cumulative, _FREQ_CLIP, 1.0 - _FREQ_CLIP))
    for m in range(1, len(z)):
        z[m] = max(z[m], z[m - 1] + _MIN_THRESHOLD_GAP)
    scale = math.sqrt(1.0 + loading_sq)
    # psi_1 = 0 pins the intercept: P(y* <= 0) = Phi(-a / scale).
    intercept = -scale * z[0]
    return float(intercept), [float(scale * (z[k - 1] - z[0])) for k in FREE_THRESHOLDS]


def neutral_start(spec: ModelSpec, dataset: Dataset) -> ParameterVector:
    """Neutral starting values; thresholds follow the empirical indicator marginals."""
    layout = spec.layout()
    values: Dict[str, float] = {}
    for d in layout.defs:
        if d.kind == "curvature":
            values[d.name] = 1.0
        elif d.kind in ("coefficient", "pi", "correlation"):
            values[d.name] = 0.0

    dedicated = set(spec.dedicated_indicators)
    for item in spec.indicators:
        loading = DEDICATED_LOADING_START if item.indicator in dedicated else 0.0
        for latent in item.latents:
            values[f"{item.indicator}.loading.{latent}"] = loading
        categories = np.array([r.indicator(item.indicator) for r in dataset.respondents])
        intercept, cuts = _threshold_start(categories, loading * loading)
        values[intercept_name(item.indicator)] = intercept
        for k, cut in zip(FREE_THRESHOLDS, cuts):
            values[threshold_name(item.indicator, k)] = cut

    return _complete_free(spec, values)


def _complete_free(spec: ModelSpec, values: Dict[str, float]) -> ParameterVector:
    layout = spec.layout()
    free = {
        name: value for name, value in values.items()
        if name in layout.index and name not in layout.fixed and name not in layout.tie_root
    }
    return complete_params(spec, free)


def seed_start(spec: ModelSpec, source: ParameterVector, dataset: Dataset) -> ParameterVector:
    """Start for a larger model from a nested fit; new parameters take neutral values."""
    values = dict(neutral_start(spec, dataset).values)
    values.update({name: value for name, value in source.values.items() if name in values})
    return _complete_free(spec, values)


# Numerical derivatives


def numeric_hessian(func, x: np.ndarray, step: float, threads: int = 1) -> np.ndarray:
    """Forward second differences: (f(x+hi+hj) - f(x+hi) - f(x+hj) + f(x)) / h^2."""
    P = len(x)
    shifts = np.eye(P) * step

    def at(offset) -> float:
        return func(x + offset)

    pairs = [(i, j) for i in range(P) for j in range(i, P)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        f0 = func(x)
        single = list(executor.map(at, [shifts[i] for i in range(P)]))
        double = list(executor.map(at, [shifts[i] + shifts[j] for i, j in pairs]))

    hessian = np.zeros((P, P))
    for (i, j), fij in zip(pairs, double):
        hessian[i, j] = hessian[j, i] = (fij - single[i] - single[j] + f0) / (step * step)
    return hessian


def unpack_jacobian(spec: ModelSpec, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """d(constrained values)/d(unconstrained vector), rows in layout name order."""
    names = spec.layout().names
    columns = []
    for p in range(len(x)):
        up, down = x.copy(), x.copy()
        up[p] += step
        down[p] -= step
        hi, lo = unpack(spec, up).values, unpack(spec, down).values
        columns.append([(hi[name] - lo[name]) / (2.0 * step) for name in names])
    return np.array(columns).T.reshape(len(names), len(x))


# Estimation


def _stop_reason(converged: bool, stalled: bool, iterations: int, max_iter: int, message: str) -> str:
    if converged:
        return "gradient tolerance reached"
    if stalled:
        return "relative objective change stalled"
    if iterations >= max_iter:
        return "iteration cap reached"
    return str(message)


def sandwich_covariance(
    spec: ModelSpec,
    fit: FitResult,
    dataset: Dataset,
    options: Optional[FitOptions] = None,
    engine: Optional[CompositeLikelihood] = None,
) -> Tuple[np.ndarray, bool]:
    """H^-1 J H^-1 mapped to the constrained scale; second item flags a singular Hessian."""
    options = options or FitOptions()
    engine = engine or CompositeLikelihood(spec, dataset, options.pairing, options.threads)
    x = np.asarray(fit.unconstrained, dtype=float)

    hessian = numeric_hessian(engine.loglik, x, options.hessian_step, engine.threads)
    scores = engine.scores(x, options.fd_step)
    outer = scores.T @ scores

    information = -hessian
    singular = (
        not np.all(np.isfinite(information))
        or np.linalg.matrix_rank(information) < len(x)
        or np.linalg.cond(information) > 1.0 / np.finfo(float).eps
    )
    if singular:
        logger.warning(f"Hessian of {spec.name} is singular; using the pseudo-inverse")
        inverse = np.linalg.pinv(information)
    else:
        inverse = np.linalg.inv(information)

    unconstrained_cov = inverse @ outer @ inverse
    unconstrained_cov = (unconstrained_cov + unconstrained_cov.T) / 2.0
    jacobian = unpack_jacobian(spec, x)
    cov = jacobian @ unconstrained_cov @ jacobian.T
    return (cov + cov.T) / 2.0, singular


def maximize_cml(
    spec: ModelSpec,
    dataset: Dataset,
    start: ParameterVector,
    options: Optional[FitOptions] = None,
) -> FitResult:
    """Maximize the composite log-likelihood from a valid start."""
    options = options or FitOptions()
    validate_params(spec, start)
    started = time.perf_counter()
    engine = CompositeLikelihood(spec, dataset, options.pairing, options.threads)
    x0 = pack(spec, start)

    # A non-finite objective at the start is an error, not a line-search rejection.
    initial = engine.loglik(x0)
    logger.info(
        f"Fitting {spec.name}: {engine.n_params} free parameters, {engine.n_respondents} respondents, "
        f"start CML {initial:.4f}"
    )

    def objective(x: np.ndarray) -> float:
        try:
            value = -engine.loglik(x)
        except (NonFiniteObjectiveError, ParameterError, GaussianDomainError):
            return math.inf
        logger.debug(f"CML evaluation: {-value:.8f}")
        return value

    def gradient(x: np.ndarray) -> np.ndarray:
        try:
            return -engine.gradient(x, options.fd_step)
        except (NonFiniteObjectiveError, ParameterError, GaussianDomainError):
            return np.full(len(x), math.nan)

    history = {"previous": -initial, "stalls": 0, "stalled": False, "iteration": 0}

    def callback(intermediate_result):
        history["iteration"] += 1
        current = float(intermediate_result.fun)
        change = abs(current - history["previous"]) / max(1.0, abs(history["previous"]))
        history["previous"] = current
        logger.info(f"Iteration {history['iteration']}: CML {-current:.6f}, relative change {change:.3e}")
        history["stalls"] = history["stalls"] + 1 if change <= options.ftol_rel else 0
        if history["stalls"] >= options.stall_iterations:
            history["stalled"] = True
            raise StopIteration

    if engine.n_params:
        result = minimize(
            objective,
            x0,
            jac=gradient,
            method="BFGS",
            callback=callback,
            options={"maxiter": options.max_iter, "gtol": options.gradient_tol, "norm": np.inf},
        )
        x_hat, iterations, message = np.asarray(result.x, dtype=float), int(result.nit), result.message
    else:
        x_hat, iterations, message = x0, 0, "no free parameters"

    value = engine.loglik(x_hat)
    grad = engine.gradient(x_hat, options.fd_step)
    gradient_norm = float(np.max(np.abs(grad))) if len(grad) else 0.0
    converged = gradient_norm <= options.gradient_tol
    params = unpack(spec, x_hat)
    layout = spec.layout()

    fit = FitResult(
        model=spec.name,
        params=params.values,
        labels={name: layout.label(name) for name in layout.names},
        free_names=layout.free_names,
        unconstrained=[float(v) for v in x_hat],
        objective=value,
        gradient_norm=gradient_norm,
        iterations=iterations,
        converged=converged,
        stop_reason=_stop_reason(converged, history["stalled"], iterations, options.max_iter, message),
        pairing=engine.policy,
        n_respondents=engine.n_respondents,
    )
    if converged:
        logger.info(f"{spec.name} converged after {iterations} iterations: CML {value:.6f}")
    else:
        logger.warning(f"{spec.name} did not converge ({fit.stop_reason}); gradient norm {gradient_norm:.3e}")

    if options.covariance and engine.n_params:
        cov, singular = sandwich_covariance(spec, fit, dataset, options, engine)
        variances = np.diag(cov)
        std_errors = {
            name: (None if name in layout.fixed else float(math.sqrt(max(variances[k], 0.0))))
            for k, name in enumerate(layout.names)
        }
        fit = fit.model_copy(update={
            "covariance": cov.tolist(),
            "std_errors": std_errors,
            "hessian_singular": singular,
        })

    return fit.model_copy(update={"wall_time": time.perf_counter() - started})


def fit_ladder(
    dataset: Dataset,
    specs: Optional[Sequence[ModelSpec]] = None,
    options: Optional[FitOptions] = None,
    start: Optional[ParameterVector] = None,
) -> LadderResult:
    """Fit nested models in order, each seeded by the previous optimum."""
    specs = list(specs) if specs is not None else [preset_spec(k) for k in (1, 2, 3)]
    fits: List[FitResult] = []
    for stage, spec in enumerate(specs, start=1):
        if fits:
            stage_start = seed_start(spec, fits[-1].parameter_vector(), dataset)
        else:
            stage_start = start or neutral_start(spec, dataset)
        logger.info(f"Ladder stage {stage}/{len(specs)}: {spec.name}")
        fits.append(maximize_cml(spec, dataset, stage_start, options))

    # Objectives within a hair of each other count as ordered.
    ordering_ok = all(
        later.objective >= earlier.objective - 1e-6 * max(1.0, abs(earlier.objective))
        for earlier, later in zip(fits, fits[1:])
    )
    if not ordering_ok:
        logger.warning("Ladder objectives are not ordered; a stage may have stopped early")
    return LadderResult(fits=fits, objective_ordering_ok=ordering_ok)


@handle_io_error
def fit_to_json(fit: FitResult, path: Union[str, Path]) -> None:
    """Write fit.json without the wall time so repeated runs produce identical files."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(fit.model_dump_json(indent=2, exclude={"wall_time"}))
    logger.info(f"Wrote fit of {fit.model} to {path}")


@handle_io_error
def fit_from_json(path: Union[str, Path]) -> FitResult:
    with open(path, encoding="utf-8") as f:
        return FitResult.model_validate_json(f.read())
