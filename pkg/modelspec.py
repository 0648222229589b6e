"""Declarative model specification, parameter vector and utility evaluation.

A ModelSpec lists utility terms for the EV and ICEV alternatives, the latent
variables, the ordinal indicator measurement maps, the structural covariates
and the constraints (fixes and ties). Parameter names and their unconstrained
transforms are derived from it by ParameterLayout.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from config import settings
from exceptions import ModelSpecError, ParameterError, handle_io_error
from models import DEMOGRAPHIC_VOCABULARY, INDICATOR_LEVELS, INDICATORS, ChoiceTask, Demographics, Respondent, weekly_fuel_cost

logger = logging.getLogger(__name__)

ALTERNATIVES = ("ev", "icev")
ATTRIBUTES = (
    "price_lacs",
    "log_range_100km",
    "weekly_fuel_INR100",
    "fast_charge_min",
    "spacing",
    "slow_charge",
    "parking",
    "lane",
)
SIDES = ("ev", "icev", "ev_minus_icev", "icev_minus_ev")

LATENT_LABELS = {
    "climate_doubter": "Climate doubters",
    "ev_tech_believer": "EV-tech believers",
    "early_adopter": "Early adopters",
}

ATTRIBUTE_LABELS = {
    "price_lacs": "price (lacs)",
    "log_range_100km": "Log [range] (100 km)",
    "weekly_fuel_INR100": "weekly fuel cost (INR 100)",
    "fast_charge_min": "fast charging time (min)",
    "spacing": "charger spacing (km)",
    "slow_charge": "slow charging time (h)",
    "parking": "reserved parking",
    "lane": "specialised lanes",
}

N_THRESHOLDS = len(INDICATOR_LEVELS) - 1
# The first threshold is pinned at zero; the remaining ones are estimated.
FREE_THRESHOLDS = tuple(range(2, N_THRESHOLDS + 1))


def ref_power(d, alpha):
    """Sign-preserving power sign(d)*|d|**alpha; exactly d when alpha == 1."""
    if alpha == 1:
        return d
    return np.sign(d) * np.abs(d) ** alpha


class AttributeExpr(BaseModel):
    """An attribute read from one alternative or differenced across them."""
    model_config = ConfigDict(frozen=True)

    attribute: Literal[ATTRIBUTES]
    side: Literal[SIDES] = "ev"

    def evaluate(self, features: Mapping[str, Mapping[str, np.ndarray]]):
        ev = features["ev"][self.attribute] if self.side != "icev" else None
        icev = features["icev"][self.attribute] if self.side != "ev" else None
        if self.side == "ev":
            return ev
        if self.side == "icev":
            return icev
        if self.side == "ev_minus_icev":
            return ev - icev
        return icev - ev

    @property
    def ev_sign(self) -> float:
        """Derivative of the expression with respect to the EV-side feature."""
        return {"ev": 1.0, "icev": 0.0, "ev_minus_icev": 1.0, "icev_minus_ev": -1.0}[self.side]

    @property
    def label(self) -> str:
        name = ATTRIBUTE_LABELS[self.attribute]
        return {
            "ev": f"EV {name}",
            "icev": f"ICEV {name}",
            "ev_minus_icev": f"[EV - ICEV] {name}",
            "icev_minus_ev": f"[ICEV - EV] {name}",
        }[self.side]


class _TermBase(BaseModel):
    model_config = ConfigDict(frozen=True)

    alternative: Literal[ALTERNATIVES] = "ev"
    param: str = Field(..., min_length=1, description="Coefficient parameter name")


class ConstantTerm(_TermBase):
    kind: Literal["constant"] = "constant"


class LinearTerm(_TermBase):
    kind: Literal["linear"] = "linear"
    expr: AttributeExpr


class RefPowerTerm(_TermBase):
    kind: Literal["ref_power"] = "ref_power"
    expr: AttributeExpr
    curvature: str = Field(..., min_length=1, description="Curvature parameter name")


class DummyTerm(_TermBase):
    kind: Literal["dummy"] = "dummy"
    indicator: str
    level: int
    base: int = 3


class LatentMainTerm(_TermBase):
    kind: Literal["latent_main"] = "latent_main"
    latent: str


class LatentInteractionTerm(_TermBase):
    kind: Literal["latent_interaction"] = "latent_interaction"
    latent: str
    expr: AttributeExpr


Term = Annotated[
    Union[ConstantTerm, LinearTerm, RefPowerTerm, DummyTerm, LatentMainTerm, LatentInteractionTerm],
    Field(discriminator="kind"),
]


class IndicatorMap(BaseModel):
    """An ordinal indicator and the latents it loads on."""
    model_config = ConfigDict(frozen=True)

    indicator: str
    latents: Tuple[str, ...]


class CovariateRow(BaseModel):
    """A demographic dummy of the structural equation and the latents it enters."""
    model_config = ConfigDict(frozen=True)

    field: str
    level: str
    latents: Tuple[str, ...]


class FixConstraint(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["fix"] = "fix"
    params: Tuple[str, ...]
    value: float


class TieConstraint(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["tie"] = "tie"
    params: Tuple[str, ...]


Constraint = Annotated[Union[FixConstraint, TieConstraint], Field(discriminator="kind")]


class ParameterVector(BaseModel):
    """Named parameter values on the constrained scale."""
    model_config = ConfigDict(frozen=True)

    model: str = Field(..., description="Name of the ModelSpec the values belong to")
    values: Dict[str, float] = Field(..., description="Parameter values by name")

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def replace(self, **updates: float) -> "ParameterVector":
        values = dict(self.values)
        values.update(updates)
        return ParameterVector(model=self.model, values=values)


@dataclass(frozen=True)
class ParameterDef:
    name: str
    kind: str
    label: str


@dataclass(frozen=True)
class Slot:
    """A group of parameters sharing one unconstrained transform."""
    kind: str  # "identity", "log", "thresholds" or "correlation"
    names: Tuple[str, ...]


@dataclass
class ParameterLayout:
    """Parameter names, constraints and unconstrained slots derived from a spec."""
    defs: List[ParameterDef]
    fixed: Dict[str, float]
    tie_root: Dict[str, str]
    slots: List[Slot]
    latents: Tuple[str, ...]
    correlation_names: Tuple[Tuple[int, int, str], ...]
    index: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {d.name: i for i, d in enumerate(self.defs)}

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.defs]

    @property
    def free_names(self) -> List[str]:
        """One name per unconstrained coordinate."""
        return [name for slot in self.slots for name in slot.names]

    @property
    def size(self) -> int:
        return sum(len(slot.names) for slot in self.slots)

    def kind(self, name: str) -> str:
        return self.defs[self.index[name]].kind

    def label(self, name: str) -> str:
        return self.defs[self.index[name]].label

    def correlation_matrix(self, values: Mapping[str, float]) -> np.ndarray:
        R = len(self.latents)
        corr = np.eye(R)
        for i, j, name in self.correlation_names:
            corr[i, j] = corr[j, i] = values[name]
        return corr


class ModelSpec(BaseModel):
    """Utility terms, latent structure, measurement maps and constraints."""

    name: str = Field(..., min_length=1, description="Model name, e.g. model2")
    description: str = Field("", description="Free-text description")
    latents: Tuple[str, ...] = Field(..., min_length=1, description="Latent variable names in order")
    utility_terms: List[Term] = Field(..., description="Terms of the EV and ICEV utilities")
    indicators: List[IndicatorMap] = Field(default_factory=list, description="Ordinal indicator measurement maps")
    covariates: List[CovariateRow] = Field(default_factory=list, description="Structural-equation dummies")
    constraints: List[Constraint] = Field(default_factory=list, description="Fixes and ties")
    labels: Dict[str, str] = Field(default_factory=dict, description="Report labels by parameter name")

    _layout: Optional[ParameterLayout] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def check_structure(self) -> "ModelSpec":
        if len(set(self.latents)) != len(self.latents):
            raise ModelSpecError("latent names must be unique")
        for term in self.utility_terms:
            latent = getattr(term, "latent", None)
            if latent is not None and latent not in self.latents:
                raise ModelSpecError(f"term {term.param} references unknown latent {latent}")
            expr = getattr(term, "expr", None)
            if expr is not None and expr.attribute == "slow_charge" and expr.side != "ev":
                raise ModelSpecError(
                    f"term {term.param} references the ICEV slow charging time, which is absent"
                )
            if isinstance(term, DummyTerm):
                if term.indicator not in INDICATORS:
                    raise ModelSpecError(f"dummy {term.param} references unknown indicator {term.indicator}")
                if term.level not in INDICATOR_LEVELS or term.base not in INDICATOR_LEVELS:
                    raise ModelSpecError(f"dummy {term.param} levels must lie in 1..5")
                if term.level == term.base:
                    raise ModelSpecError(f"dummy {term.param} is its own base level")

        seen = set()
        for item in self.indicators:
            if item.indicator not in INDICATORS:
                raise ModelSpecError(f"unknown indicator {item.indicator}")
            if item.indicator in seen:
                raise ModelSpecError(f"indicator {item.indicator} mapped twice")
            seen.add(item.indicator)
            if not item.latents or any(latent not in self.latents for latent in item.latents):
                raise ModelSpecError(f"indicator {item.indicator} must load on known latents")

        for row in self.covariates:
            levels = DEMOGRAPHIC_VOCABULARY.get(row.field)
            if levels is None:
                raise ModelSpecError(f"unknown covariate field {row.field}")
            if row.level not in levels[1:]:
                raise ModelSpecError(f"covariate {row.field}={row.level} is not a non-base level")
            if any(latent not in self.latents for latent in row.latents):
                raise ModelSpecError(f"covariate {row.field}={row.level} loads on an unknown latent")

        _build_layout(self)
        return self

    @property
    def dedicated_indicators(self) -> List[str]:
        return [m.indicator for m in self.indicators if len(m.latents) == 1]

    def latent_index(self, latent: str) -> int:
        return self.latents.index(latent)

    def layout(self) -> ParameterLayout:
        if self._layout is None:
            self._layout = _build_layout(self)
        return self._layout

    # Array views of the structural and measurement parameters

    def pi_matrix(self, values: Mapping[str, float]) -> np.ndarray:
        """Structural slopes as a (covariates x latents) matrix."""
        pi = np.zeros((len(self.covariates), len(self.latents)))
        for q, row in enumerate(self.covariates):
            for latent in row.latents:
                pi[q, self.latent_index(latent)] = values[pi_name(latent, row.field, row.level)]
        return pi

    def covariate_vector(self, demographics: Demographics) -> np.ndarray:
        """0/1 structural dummies s_n for one respondent."""
        return np.array(
            [1.0 if getattr(demographics, row.field) == row.level else 0.0 for row in self.covariates]
        )

    def measurement_arrays(self, values: Mapping[str, float]):
        """Intercepts (I,), loadings (I, R) and full thresholds (I, 4) with the first at 0."""
        n = len(self.indicators)
        intercepts = np.zeros(n)
        loadings = np.zeros((n, len(self.latents)))
        thresholds = np.zeros((n, N_THRESHOLDS))
        for i, item in enumerate(self.indicators):
            intercepts[i] = values[intercept_name(item.indicator)]
            for latent in item.latents:
                loadings[i, self.latent_index(latent)] = values[loading_name(item.indicator, latent)]
            for k in FREE_THRESHOLDS:
                thresholds[i, k - 1] = values[threshold_name(item.indicator, k)]
        return intercepts, loadings, thresholds


# Parameter naming

def pi_name(latent: str, field_name: str, level: str) -> str:
    return f"pi.{latent}.{field_name}.{level}"


def corr_name(first: str, second: str) -> str:
    return f"corr.{first}.{second}"


def intercept_name(indicator: str) -> str:
    return f"{indicator}.intercept"


def loading_name(indicator: str, latent: str) -> str:
    return f"{indicator}.loading.{latent}"


def threshold_name(indicator: str, k: int) -> str:
    return f"{indicator}.threshold_{k}"


def _term_label(term) -> str:
    side = "EV" if term.alternative == "ev" else "ICEV"
    if isinstance(term, ConstantTerm):
        return f"{side}: Constant"
    if isinstance(term, LinearTerm):
        return f"{side}: {term.expr.label}"
    if isinstance(term, RefPowerTerm):
        return f"{side}: {term.expr.label}: Intercept"
    if isinstance(term, DummyTerm):
        return f"{side}: {term.indicator.capitalize()} level {term.level} (base {term.base})"
    if isinstance(term, LatentMainTerm):
        return f"{side}: {LATENT_LABELS.get(term.latent, term.latent)}"
    return f"{side}: {LATENT_LABELS.get(term.latent, term.latent)} x {term.expr.label}"


def _build_layout(spec: ModelSpec) -> ParameterLayout:
    defs: List[ParameterDef] = []
    kinds: Dict[str, str] = {}

    def add(name: str, kind: str, label: str):
        if name in kinds:
            if kinds[name] != kind:
                raise ModelSpecError(f"parameter {name} used both as {kinds[name]} and {kind}")
            return
        kinds[name] = kind
        defs.append(ParameterDef(name, kind, spec.labels.get(name, label)))

    for term in spec.utility_terms:
        add(term.param, "coefficient", _term_label(term))
        if isinstance(term, RefPowerTerm):
            add(term.curvature, "curvature", _term_label(term).replace(": Intercept", ": Curvature"))

    for row in spec.covariates:
        for latent in row.latents:
            add(pi_name(latent, row.field, row.level), "pi",
                f"{LATENT_LABELS.get(latent, latent)}: {row.field} = {row.level}")

    correlation_names = []
    for i in range(1, len(spec.latents)):
        for j in range(i):
            name = corr_name(spec.latents[j], spec.latents[i])
            correlation_names.append((i, j, name))
            add(name, "correlation",
                f"{LATENT_LABELS.get(spec.latents[j], spec.latents[j])} vs. "
                f"{LATENT_LABELS.get(spec.latents[i], spec.latents[i])}")

    for item in spec.indicators:
        ind = item.indicator.capitalize()
        add(intercept_name(item.indicator), "intercept", f"{ind}: Intercept")
        for latent in item.latents:
            add(loading_name(item.indicator, latent), "loading",
                f"{ind}: {LATENT_LABELS.get(latent, latent)}")
        for k in FREE_THRESHOLDS:
            add(threshold_name(item.indicator, k), "threshold", f"{ind}: Threshold {k}")

    fixed: Dict[str, float] = {}
    parent: Dict[str, str] = {}

    def find(name: str) -> str:
        while parent.get(name, name) != name:
            name = parent[name]
        return name

    for constraint in spec.constraints:
        unknown = [name for name in constraint.params if name not in kinds]
        if unknown:
            raise ModelSpecError(f"constraint references unknown parameters: {', '.join(unknown)}")
        if isinstance(constraint, FixConstraint):
            for name in constraint.params:
                if kinds[name] == "curvature" and not constraint.value > 0:
                    raise ModelSpecError(f"curvature {name} must be fixed to a positive value")
                fixed[name] = float(constraint.value)
        else:
            group_kinds = {kinds[name] for name in constraint.params}
            if len(group_kinds) != 1 or group_kinds & {"threshold", "correlation"}:
                raise ModelSpecError("ties must join parameters of one scalar kind")
            root = find(constraint.params[0])
            for name in constraint.params[1:]:
                other = find(name)
                if other != root:
                    parent[other] = root

    groups: Dict[str, List[str]] = {}
    for name in parent:
        groups.setdefault(find(name), [])
    for d in defs:
        if d.name in parent or d.name in groups:
            groups.setdefault(find(d.name), []).append(d.name)

    tie_root: Dict[str, str] = {}
    for members in groups.values():
        pinned = {fixed[name] for name in members if name in fixed}
        if len(pinned) > 1:
            raise ModelSpecError(f"tied parameters {', '.join(members)} are fixed to different values")
        if pinned:
            # a tie with a fixed member fixes the whole group
            value = pinned.pop()
            for name in members:
                fixed[name] = value
            continue
        # the first declared member carries the free coordinate
        for name in members[1:]:
            tie_root[name] = members[0]

    slots: List[Slot] = []
    blocks: Dict[str, List[str]] = {}
    for d in defs:
        if d.kind == "threshold":
            blocks.setdefault(d.name.split(".")[0], []).append(d.name)
    corr_block = [name for _, _, name in correlation_names]

    def check_block(names: Sequence[str], what: str) -> bool:
        n_fixed = sum(name in fixed for name in names)
        if 0 < n_fixed < len(names):
            raise ModelSpecError(f"{what} can only be fixed as a whole block")
        return n_fixed == len(names)

    seen_blocks = set()
    for d in defs:
        if d.name in fixed or d.name in tie_root:
            continue
        if d.kind == "threshold":
            indicator = d.name.split(".")[0]
            if indicator in seen_blocks or check_block(blocks[indicator], f"thresholds of {indicator}"):
                continue
            seen_blocks.add(indicator)
            slots.append(Slot("thresholds", tuple(blocks[indicator])))
        elif d.kind == "correlation":
            if "corr" in seen_blocks or check_block(corr_block, "the latent correlation matrix"):
                continue
            seen_blocks.add("corr")
            slots.append(Slot("correlation", tuple(corr_block)))
        elif d.kind == "curvature":
            slots.append(Slot("log", (d.name,)))
        else:
            slots.append(Slot("identity", (d.name,)))

    if corr_block and check_block(corr_block, "the latent correlation matrix"):
        corr = np.eye(len(spec.latents))
        for i, j, name in correlation_names:
            corr[i, j] = corr[j, i] = fixed[name]
        if np.linalg.eigvalsh(corr).min() <= 0:
            raise ModelSpecError("fixed latent correlation matrix is not positive definite")

    return ParameterLayout(
        defs=defs,
        fixed=fixed,
        tie_root=tie_root,
        slots=slots,
        latents=spec.latents,
        correlation_names=tuple(correlation_names),
    )


# Parameter completion, validation and transforms

def complete_params(spec: ModelSpec, values: Mapping[str, float]) -> ParameterVector:
    """Fill fixed and tied values, reject unknown or missing names."""
    layout = spec.layout()
    unknown = sorted(set(values) - set(layout.names))
    if unknown:
        raise ParameterError(f"unknown parameters for {spec.name}: {', '.join(unknown)}")

    full: Dict[str, float] = {}
    for name in layout.names:
        if name in layout.fixed:
            if name in values and not math.isclose(values[name], layout.fixed[name], rel_tol=0, abs_tol=1e-12):
                raise ParameterError(f"{name} is fixed at {layout.fixed[name]} but given {values[name]}")
            full[name] = layout.fixed[name]
        elif name in values:
            full[name] = float(values[name])

    for name, root in layout.tie_root.items():
        root_value = full.get(root, values.get(root))
        if root_value is None:
            continue
        if name in values and not math.isclose(values[name], root_value, rel_tol=1e-9, abs_tol=1e-12):
            raise ParameterError(f"{name} is tied to {root} but values differ")
        full[name] = root_value

    missing = [name for name in layout.names if name not in full]
    if missing:
        raise ParameterError(f"missing values for {spec.name}: {', '.join(missing)}")
    return ParameterVector(model=spec.name, values={name: full[name] for name in layout.names})


def validate_params(spec: ModelSpec, params: ParameterVector) -> None:
    """Check positivity, threshold ordering and correlation validity."""
    layout = spec.layout()
    values = params.values
    for name in layout.names:
        value = values.get(name)
        if value is None or not math.isfinite(value):
            raise ParameterError(f"{name} must be a finite number, got {value}")
        if layout.kind(name) == "curvature" and not value > 0:
            raise ParameterError(f"curvature {name} must be positive, got {value}")

    for item in spec.indicators:
        previous = 0.0
        for k in FREE_THRESHOLDS:
            current = values[threshold_name(item.indicator, k)]
            if not current > previous:
                raise ParameterError(f"thresholds of {item.indicator} must increase from 0")
            previous = current

    corr = layout.correlation_matrix(values)
    if np.any(np.abs(corr[~np.eye(len(corr), dtype=bool)]) >= 1) or np.linalg.eigvalsh(corr).min() <= 0:
        raise ParameterError("latent correlation matrix must be a valid correlation matrix")


def _correlation_to_free(corr: np.ndarray, correlation_names) -> np.ndarray:
    chol = np.linalg.cholesky(corr)
    return np.array([chol[i, j] / chol[i, i] for i, j, _ in correlation_names])


def _free_to_correlation(w: np.ndarray, correlation_names, R: int) -> np.ndarray:
    raw = np.eye(R)
    for (i, j, _), value in zip(correlation_names, w):
        raw[i, j] = value
    chol = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    corr = chol @ chol.T
    np.fill_diagonal(corr, 1.0)
    return corr


def pack(spec: ModelSpec, params: ParameterVector) -> np.ndarray:
    """Map constrained parameters to the unconstrained optimization vector."""
    layout = spec.layout()
    values = params.values
    out: List[float] = []
    for slot in layout.slots:
        if slot.kind == "identity":
            out.append(values[slot.names[0]])
        elif slot.kind == "log":
            out.append(math.log(values[slot.names[0]]))
        elif slot.kind == "thresholds":
            cuts = np.array([values[name] for name in slot.names])
            gaps = np.diff(np.concatenate(([0.0], cuts)))
            if np.any(gaps <= 0):
                raise ParameterError(f"thresholds {', '.join(slot.names)} must increase from 0")
            out.extend(np.log(gaps))
        else:
            corr = layout.correlation_matrix(values)
            try:
                out.extend(_correlation_to_free(corr, layout.correlation_names))
            except np.linalg.LinAlgError:
                raise ParameterError("latent correlation matrix is not positive definite")
    vector = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(vector)):
        raise ParameterError("packed parameter vector is not finite")
    return vector


def unpack(spec: ModelSpec, vector: Sequence[float]) -> ParameterVector:
    """Map an unconstrained vector back to named constrained parameters."""
    layout = spec.layout()
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (layout.size,):
        raise ParameterError(f"expected {layout.size} unconstrained values, got {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise ParameterError("unconstrained vector is not finite")

    values: Dict[str, float] = dict(layout.fixed)
    pos = 0
    for slot in layout.slots:
        width = len(slot.names)
        chunk = vector[pos:pos + width]
        pos += width
        if slot.kind == "identity":
            values[slot.names[0]] = float(chunk[0])
        elif slot.kind == "log":
            values[slot.names[0]] = float(np.exp(chunk[0]))
        elif slot.kind == "thresholds":
            for name, cut in zip(slot.names, np.cumsum(np.exp(chunk))):
                values[name] = float(cut)
        else:
            corr = _free_to_correlation(chunk, layout.correlation_names, len(layout.latents))
            for i, j, name in layout.correlation_names:
                values[name] = float(corr[i, j])
    for name, root in layout.tie_root.items():
        values[name] = values[root]
    return ParameterVector(model=spec.name, values={name: values[name] for name in layout.names})


# Attribute features and utility evaluation

def alternative_features(price, range_km, weekly_fuel, fast_charge, spacing, slow_charge, parking, lane) -> Dict:
    """Model-unit features of one alternative (scalars or arrays)."""
    return {
        "price_lacs": price,
        "log_range_100km": np.log(np.asarray(range_km, dtype=float) / 100.0),
        "weekly_fuel_INR100": weekly_fuel,
        "fast_charge_min": fast_charge,
        "spacing": spacing,
        "slow_charge": slow_charge,
        "parking": parking,
        "lane": lane,
    }


def task_features(task: ChoiceTask, weekly_km: float) -> Dict[str, Dict]:
    """Features of both alternatives of a task for a respondent's weekly kilometres."""
    out = {}
    for side, profile in (("ev", task.ev), ("icev", task.icev)):
        out[side] = alternative_features(
            price=profile.price,
            range_km=profile.range,
            weekly_fuel=weekly_fuel_cost(profile.running_cost, weekly_km),
            fast_charge=profile.fast_charge,
            spacing=profile.charger_spacing,
            slow_charge=np.nan if profile.slow_charge is None else profile.slow_charge,
            parking=float(profile.reserved_parking),
            lane=float(profile.special_lane),
        )
    return out


@dataclass
class UtilityParts:
    """Per-alternative utility split into a latent-free base and latent coefficients."""
    base: Dict[str, object]
    latent: Dict[str, List[object]]

    def difference(self):
        """(base, loadings) of the EV minus ICEV utility difference."""
        base = self.base["ev"] - self.base["icev"]
        loadings = [ev - icev for ev, icev in zip(self.latent["ev"], self.latent["icev"])]
        return base, loadings


def utility_parts(
    spec: ModelSpec,
    values: Mapping[str, float],
    features: Mapping[str, Mapping[str, object]],
    indicator_values: Mapping[str, object],
) -> UtilityParts:
    """Evaluate every utility term; works on scalars and on broadcastable arrays."""
    R = len(spec.latents)
    base = {"ev": 0.0, "icev": 0.0}
    latent = {"ev": [0.0] * R, "icev": [0.0] * R}

    for term in spec.utility_terms:
        alt = term.alternative
        coef = values[term.param]
        if isinstance(term, ConstantTerm):
            base[alt] = base[alt] + coef
        elif isinstance(term, LinearTerm):
            base[alt] = base[alt] + coef * term.expr.evaluate(features)
        elif isinstance(term, RefPowerTerm):
            base[alt] = base[alt] + coef * ref_power(term.expr.evaluate(features), values[term.curvature])
        elif isinstance(term, DummyTerm):
            hit = np.asarray(indicator_values[term.indicator]) == term.level
            base[alt] = base[alt] + coef * hit
        elif isinstance(term, LatentMainTerm):
            r = spec.latent_index(term.latent)
            latent[alt][r] = latent[alt][r] + coef
        else:
            r = spec.latent_index(term.latent)
            latent[alt][r] = latent[alt][r] + coef * term.expr.evaluate(features)
    return UtilityParts(base=base, latent=latent)


def _respondent_indicator_values(respondent: Respondent) -> Dict[str, int]:
    return dict(zip(INDICATORS, respondent.indicators))


def _check_referenced_features(spec: ModelSpec, features) -> None:
    for term in spec.utility_terms:
        expr = getattr(term, "expr", None)
        if expr is None:
            continue
        for side in ("ev", "icev"):
            if expr.side in ("ev", "icev") and expr.side != side:
                continue
            value = features[side][expr.attribute]
            if value is None or (np.ndim(value) == 0 and not np.isfinite(value)):
                raise ModelSpecError(f"term {term.param} references absent field {side}.{expr.attribute}")


def systematic_utility(
    spec: ModelSpec,
    params: ParameterVector,
    task: ChoiceTask,
    respondent: Respondent,
    latent_values: Sequence[float],
) -> Tuple[float, float]:
    """(V_EV, V_ICEV) for one task at given latent values."""
    latent_values = np.asarray(latent_values, dtype=float)
    if latent_values.shape != (len(spec.latents),) or not np.all(np.isfinite(latent_values)):
        raise ParameterError("latent_values must be a finite vector with one entry per latent")
    features = task_features(task, respondent.weekly_km)
    _check_referenced_features(spec, features)
    parts = utility_parts(spec, params.values, features, _respondent_indicator_values(respondent))
    out = []
    for alt in ALTERNATIVES:
        value = parts.base[alt] + sum(c * x for c, x in zip(parts.latent[alt], latent_values))
        out.append(float(value))
    return out[0], out[1]


def latent_loading_vector(
    spec: ModelSpec,
    params: ParameterVector,
    task: ChoiceTask,
    respondent: Respondent,
) -> np.ndarray:
    """Coefficients c_t on the latent errors in the EV minus ICEV utility difference."""
    features = task_features(task, respondent.weekly_km)
    parts = utility_parts(spec, params.values, features, _respondent_indicator_values(respondent))
    _, loadings = parts.difference()
    return np.array([float(c) for c in loadings])


# Persistence

@handle_io_error
def load_spec(path: Union[str, Path]) -> ModelSpec:
    with open(path, encoding="utf-8") as f:
        return ModelSpec.model_validate(json.load(f))


@handle_io_error
def load_params(spec: ModelSpec, path: Union[str, Path]) -> ParameterVector:
    with open(path, encoding="utf-8") as f:
        document = json.load(f)
    values = document.get("values", document)
    params = complete_params(spec, values)
    validate_params(spec, params)
    return params


@handle_io_error
def save_params(params: ParameterVector, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params.model_dump(), f, indent=2)


def preset_spec(k: int) -> ModelSpec:
    """Shipped Model 1/2/3 specification."""
    return load_spec(settings.PRESET_DIR / f"model{k}.json")


def published_params(k: int, spec: Optional[ModelSpec] = None) -> ParameterVector:
    """Published point estimates for Model k (structural and measurement parts are shared)."""
    spec = spec or preset_spec(k)
    return load_params(spec, settings.PRESET_DIR / f"params_model{k}.json")
