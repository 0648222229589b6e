"""Composite marginal likelihood of the choice-and-latent-variable model.

Substituting x* = Pi s + gamma into the utility makes every respondent's
utility differences and indicator propensities jointly Gaussian. The
objective sums log probabilities of bivariate marginals of that joint
distribution: choice x indicator pairs and indicator x indicator pairs, plus
choice x choice pairs under the "extended" policy.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import PAIRING_POLICIES, settings
from exceptions import InvalidInputError, NonFiniteObjectiveError, ParameterError
from gaussian import Phi, Rect2, rect_prob, rect_prob_array
from models import INDICATORS, Dataset, Respondent
from modelspec import (
    ModelSpec,
    ParameterVector,
    alternative_features,
    latent_loading_vector,
    pack,
    systematic_utility,
    unpack,
    utility_parts,
)

logger = logging.getLogger(__name__)

PAIR_KINDS = ("choice_indicator", "indicator_indicator", "choice_choice")


def _check_policy(policy: str) -> str:
    if policy not in PAIRING_POLICIES:
        raise InvalidInputError(f"pairing policy must be one of {', '.join(PAIRING_POLICIES)}, got {policy}")
    return policy


def _cut_points(thresholds: np.ndarray) -> np.ndarray:
    """[-inf, 0, psi_2, psi_3, psi_4, inf] per indicator."""
    n = thresholds.shape[0]
    return np.concatenate(
        [np.full((n, 1), -np.inf), thresholds, np.full((n, 1), np.inf)], axis=1
    )


# Single-respondent view


@dataclass(frozen=True)
class JointMoments:
    """Joint Gaussian of the utility differences and indicator propensities of one respondent.

    Coordinates are ordered tasks first, then indicators in spec order. lower/upper
    are the observed outcome regions on the unstandardized scale.
    """
    mean: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_tasks: int
    labels: Tuple[str, ...]


@dataclass(frozen=True)
class PairTerm:
    kind: str
    first: int
    second: int
    mean: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def joint_moments(spec: ModelSpec, params: ParameterVector, respondent: Respondent) -> JointMoments:
    """Mean, covariance and outcome regions of one respondent's joint Gaussian."""
    if not respondent.tasks:
        raise InvalidInputError(f"respondent {respondent.respondent_id} has no tasks")
    layout = spec.layout()
    values = params.values
    corr = layout.correlation_matrix(values)
    latent_means = spec.covariate_vector(respondent.demographics) @ spec.pi_matrix(values)
    intercepts, loadings, thresholds = spec.measurement_arrays(values)

    loads = np.array([latent_loading_vector(spec, params, task, respondent) for task in respondent.tasks])
    utility_means = []
    for task in respondent.tasks:
        v_ev, v_icev = systematic_utility(spec, params, task, respondent, latent_means)
        utility_means.append(v_ev - v_icev)

    factor = np.vstack([loads, loadings])
    cov = factor @ corr @ factor.T + np.eye(factor.shape[0])
    mean = np.concatenate([utility_means, intercepts + loadings @ latent_means])
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ParameterError(f"joint covariance of respondent {respondent.respondent_id} is not positive definite")

    cuts = _cut_points(thresholds)
    lower, upper = [], []
    for task in respondent.tasks:
        lower.append(0.0 if task.ev_chosen else -np.inf)
        upper.append(np.inf if task.ev_chosen else 0.0)
    for i, item in enumerate(spec.indicators):
        m = respondent.indicator(item.indicator)
        lower.append(cuts[i, m - 1])
        upper.append(cuts[i, m])

    labels = tuple([f"choice:{t.task_id}" for t in respondent.tasks] + [m.indicator for m in spec.indicators])
    return JointMoments(
        mean=mean, cov=cov, lower=np.array(lower), upper=np.array(upper),
        n_tasks=len(respondent.tasks), labels=labels,
    )


def _pair(moments: JointMoments, kind: str, a: int, b: int) -> PairTerm:
    idx = [a, b]
    return PairTerm(
        kind=kind,
        first=a,
        second=b,
        mean=moments.mean[idx],
        cov=moments.cov[np.ix_(idx, idx)],
        lower=moments.lower[idx],
        upper=moments.upper[idx],
    )


def enumerate_pairs(moments: JointMoments, policy: str = "paper") -> List[PairTerm]:
    """Pair terms in their fixed evaluation order."""
    _check_policy(policy)
    T = moments.n_tasks
    n = len(moments.mean)
    pairs = [_pair(moments, "choice_indicator", t, i) for t in range(T) for i in range(T, n)]
    pairs += [_pair(moments, "indicator_indicator", i, j) for i in range(T, n) for j in range(i + 1, n)]
    if policy == "extended":
        pairs += [_pair(moments, "choice_choice", t, s) for t in range(T) for s in range(t + 1, T)]
    return pairs


def pair_logprob(term: PairTerm) -> float:
    """Log probability of the standardized 2-D outcome region."""
    sd = np.sqrt(np.diag(term.cov))
    rho = term.cov[0, 1] / (sd[0] * sd[1])
    lower = (term.lower - term.mean) / sd
    upper = (term.upper - term.mean) / sd
    return math.log(rect_prob(Rect2(lower[0], upper[0], lower[1], upper[1], rho)))


# Vectorized engine


@dataclass(frozen=True)
class CompiledData:
    """Dataset arrays aligned on (respondent, task) with respondents sorted by id."""
    respondent_ids: Tuple[str, ...]
    features: Dict[str, Dict[str, np.ndarray]]
    indicator_values: Dict[str, np.ndarray]
    categories: np.ndarray
    covariates: np.ndarray
    ev_chosen: np.ndarray
    mask: np.ndarray


def compile_dataset(spec: ModelSpec, dataset: Dataset) -> CompiledData:
    dataset.require_choices()
    respondents = dataset.sorted_by_id()
    N = len(respondents)
    T = max(len(r.tasks) for r in respondents)

    raw = {side: {name: np.zeros((N, T)) for name in
                  ("price", "range", "run_cost", "fast", "spacing", "slow", "parking", "lane")}
           for side in ("ev", "icev")}
    weekly_km = np.zeros((N, 1))
    ev_chosen = np.zeros((N, T), dtype=bool)
    mask = np.zeros((N, T), dtype=bool)

    for n, respondent in enumerate(respondents):
        weekly_km[n, 0] = respondent.weekly_km
        for t in range(T):
            # Padded slots repeat the first task and are masked out.
            task = respondent.tasks[t] if t < len(respondent.tasks) else respondent.tasks[0]
            mask[n, t] = t < len(respondent.tasks)
            ev_chosen[n, t] = task.ev_chosen
            for side, profile in (("ev", task.ev), ("icev", task.icev)):
                arrays = raw[side]
                arrays["price"][n, t] = profile.price
                arrays["range"][n, t] = profile.range
                arrays["run_cost"][n, t] = profile.running_cost
                arrays["fast"][n, t] = profile.fast_charge
                arrays["spacing"][n, t] = profile.charger_spacing
                arrays["slow"][n, t] = np.nan if profile.slow_charge is None else profile.slow_charge
                arrays["parking"][n, t] = float(profile.reserved_parking)
                arrays["lane"][n, t] = float(profile.special_lane)

    features = {
        side: alternative_features(
            price=a["price"],
            range_km=a["range"],
            weekly_fuel=a["run_cost"] * weekly_km / 100.0,
            fast_charge=a["fast"],
            spacing=a["spacing"],
            slow_charge=a["slow"],
            parking=a["parking"],
            lane=a["lane"],
        )
        for side, a in raw.items()
    }
    all_indicators = np.array([r.indicators for r in respondents], dtype=int)
    indicator_values = {name: all_indicators[:, [k]] for k, name in enumerate(INDICATORS)}
    categories = np.array(
        [[r.indicator(item.indicator) for item in spec.indicators] for r in respondents], dtype=int
    ).reshape(N, len(spec.indicators))
    covariates = np.array(
        [spec.covariate_vector(r.demographics) for r in respondents]
    ).reshape(N, len(spec.covariates))

    return CompiledData(
        respondent_ids=tuple(r.respondent_id for r in respondents),
        features=features,
        indicator_values=indicator_values,
        categories=categories,
        covariates=covariates,
        ev_chosen=ev_chosen,
        mask=mask,
    )


class CompositeLikelihood:
    """Per-respondent CML contributions for a fixed spec and dataset."""

    def __init__(
        self,
        spec: ModelSpec,
        dataset: Dataset,
        policy: Optional[str] = None,
        threads: Optional[int] = None,
    ):
        self.spec = spec
        self.policy = _check_policy(policy or settings.PAIRING)
        self.threads = settings.resolve_threads(threads)
        self.data = compile_dataset(spec, dataset)
        N, T = self.data.mask.shape
        I = len(spec.indicators)
        logger.debug(f"Compiled {N} respondents, up to {T} tasks, {I} indicators, policy {self.policy}")

    @property
    def n_respondents(self) -> int:
        return len(self.data.respondent_ids)

    @property
    def n_params(self) -> int:
        return self.spec.layout().size

    def _terms(self, vector) -> Dict[str, np.ndarray]:
        """Per-respondent log probabilities split by pair kind."""
        spec, data = self.spec, self.data
        values = unpack(spec, vector).values if not isinstance(vector, ParameterVector) else vector.values
        N, T = data.mask.shape

        parts = utility_parts(spec, values, data.features, data.indicator_values)
        base, loads = parts.difference()
        base = np.broadcast_to(base, (N, T))
        C = np.stack([np.broadcast_to(c, (N, T)) for c in loads], axis=-1)

        corr = spec.layout().correlation_matrix(values)
        latent_means = data.covariates @ spec.pi_matrix(values)
        intercepts, loadings, thresholds = spec.measurement_arrays(values)

        choice_mean = base + np.einsum("ntr,nr->nt", C, latent_means)
        CL = C @ corr
        choice_sd = np.sqrt(np.einsum("ntr,ntr->nt", CL, C) + 1.0)
        z_choice = -choice_mean / choice_sd
        c_lower = np.where(data.ev_chosen, z_choice, -np.inf)
        c_upper = np.where(data.ev_chosen, np.inf, z_choice)

        out = {kind: np.zeros(N) for kind in PAIR_KINDS}
        I = len(spec.indicators)
        if I:
            ind_mean = intercepts + latent_means @ loadings.T
            ind_cov = loadings @ corr @ loadings.T + np.eye(I)
            ind_sd = np.sqrt(np.diag(ind_cov))
            cuts = _cut_points(thresholds)
            cols = np.arange(I)
            i_lower = (cuts[cols, data.categories - 1] - ind_mean) / ind_sd
            i_upper = (cuts[cols, data.categories] - ind_mean) / ind_sd

            rho_ci = (CL @ loadings.T) / (choice_sd[:, :, None] * ind_sd[None, None, :])
            logp = np.log(rect_prob_array(
                c_lower[:, :, None], c_upper[:, :, None],
                i_lower[:, None, :], i_upper[:, None, :], rho_ci,
            ))
            out["choice_indicator"] = np.where(data.mask[:, :, None], logp, 0.0).sum(axis=(1, 2))

            a, b = np.triu_indices(I, 1)
            if len(a):
                rho_ii = ind_cov[a, b] / (ind_sd[a] * ind_sd[b])
                logp = np.log(rect_prob_array(
                    i_lower[:, a], i_upper[:, a], i_lower[:, b], i_upper[:, b], rho_ii[None, :],
                ))
                out["indicator_indicator"] = logp.sum(axis=1)

        if self.policy == "extended" and T > 1:
            t, s = np.triu_indices(T, 1)
            cov_cc = np.einsum("ntr,nsr->nts", CL, C)
            rho_cc = cov_cc[:, t, s] / (choice_sd[:, t] * choice_sd[:, s])
            logp = np.log(rect_prob_array(c_lower[:, t], c_upper[:, t], c_lower[:, s], c_upper[:, s], rho_cc))
            valid = data.mask[:, t] & data.mask[:, s]
            out["choice_choice"] = np.where(valid, logp, 0.0).sum(axis=1)
        return out

    def contributions(self, vector) -> np.ndarray:
        """Per-respondent log CML, ordered by respondent id."""
        terms = self._terms(vector)
        total = terms["choice_indicator"] + terms["indicator_indicator"] + terms["choice_choice"]
        bad = np.flatnonzero(~np.isfinite(total))
        if len(bad):
            n = int(bad[0])
            raise NonFiniteObjectiveError(self.data.respondent_ids[n], float(total[n]))
        return total

    def contributions_by_kind(self, vector) -> Dict[str, float]:
        return {kind: math.fsum(values) for kind, values in self._terms(vector).items()}

    def loglik(self, vector) -> float:
        return math.fsum(self.contributions(vector))

    def marginal_logliks(self, vector) -> Tuple[np.ndarray, np.ndarray]:
        """Per-respondent sums of univariate log probabilities of the choices and of the indicators."""
        spec, data = self.spec, self.data
        values = unpack(spec, vector).values if not isinstance(vector, ParameterVector) else vector.values
        N, T = data.mask.shape

        parts = utility_parts(spec, values, data.features, data.indicator_values)
        base, loads = parts.difference()
        C = np.stack([np.broadcast_to(c, (N, T)) for c in loads], axis=-1)
        corr = spec.layout().correlation_matrix(values)
        latent_means = data.covariates @ spec.pi_matrix(values)
        mean = np.broadcast_to(base, (N, T)) + np.einsum("ntr,nr->nt", C, latent_means)
        sd = np.sqrt(np.einsum("ntr,rs,nts->nt", C, corr, C) + 1.0)
        z = np.where(data.ev_chosen, mean / sd, -mean / sd)
        choice = np.where(data.mask, np.log(Phi(z)), 0.0).sum(axis=1)

        intercepts, loadings, thresholds = spec.measurement_arrays(values)
        I = len(spec.indicators)
        if not I:
            return choice, np.zeros(N)
        ind_mean = intercepts + latent_means @ loadings.T
        ind_sd = np.sqrt(np.diag(loadings @ corr @ loadings.T) + 1.0)
        cuts = _cut_points(thresholds)
        cols = np.arange(I)
        upper = Phi((cuts[cols, data.categories] - ind_mean) / ind_sd)
        lower = Phi((cuts[cols, data.categories - 1] - ind_mean) / ind_sd)
        return choice, np.log(upper - lower).sum(axis=1)

    def scores(self, vector: Sequence[float], step: Optional[float] = None) -> np.ndarray:
        """N x P central finite-difference scores on the unconstrained scale."""
        step = step or settings.FD_STEP
        x = np.asarray(vector, dtype=float)

        def column(p: int) -> np.ndarray:
            up, down = x.copy(), x.copy()
            up[p] += step
            down[p] -= step
            return (self.contributions(up) - self.contributions(down)) / (2.0 * step)

        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            columns = list(executor.map(column, range(len(x))))
        return np.column_stack(columns) if columns else np.zeros((self.n_respondents, 0))

    def gradient(self, vector: Sequence[float], step: Optional[float] = None) -> np.ndarray:
        scores = self.scores(vector, step)
        return np.array([math.fsum(scores[:, p]) for p in range(scores.shape[1])])


def cml_loglik(
    spec: ModelSpec,
    params: ParameterVector,
    dataset: Dataset,
    policy: Optional[str] = None,
) -> float:
    """Total composite log-likelihood at constrained parameters."""
    return CompositeLikelihood(spec, dataset, policy).loglik(pack(spec, params))


def per_respondent_scores(
    spec: ModelSpec,
    params: ParameterVector,
    dataset: Dataset,
    policy: Optional[str] = None,
    step: Optional[float] = None,
    threads: Optional[int] = None,
) -> np.ndarray:
    return CompositeLikelihood(spec, dataset, policy, threads).scores(pack(spec, params), step)
