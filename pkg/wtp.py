"""Willingness to pay at demographic-profile latent means, and implied discount rates.

WTP for a change of an EV attribute is the marginal utility of that attribute
times the change, divided by the marginal utility of the EV price. Marginals
are derivatives of the EV minus ICEV utility difference taken at an
evaluation point, so curvature makes them depend on the deviation from the
ICEV reference.
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import bisect

from exceptions import (
    DiscountRateDomainError,
    InvalidInputError,
    SingularityError,
    ZeroPriceMarginalError,
    handle_io_error,
)
from models import Demographics
from modelspec import (
    LatentInteractionTerm,
    LinearTerm,
    ModelSpec,
    ParameterVector,
    RefPowerTerm,
    alternative_features,
)

logger = logging.getLogger(__name__)

# Deviations closer to the reference than this make curved marginals singular.
SINGULARITY_EPS = 1e-6
INR_PER_USD = 75.2
WEEKS_PER_YEAR = 52
THOUSAND_INR_PER_LAC = 100.0

# WTP attribute -> (model feature, default change in raw units)
ATTRIBUTES: Dict[str, tuple] = {
    "price": ("price_lacs", 1.0),
    "fastcharge": ("fast_charge_min", -10.0),
    "range": ("log_range_100km", 100.0),
    "fuel": ("weekly_fuel_INR100", -1.0),
}


class EvaluationPoint(BaseModel):
    """ICEV reference profile and the EV attribute values where marginals are taken."""
    model_config = ConfigDict(frozen=True)

    icev_price: float = Field(10.0, gt=0, description="ICEV price, lacs")
    icev_range: float = Field(800.0, gt=0, description="ICEV range, km")
    icev_fast_charge: float = Field(5.0, gt=0, description="ICEV refuelling time, minutes")
    icev_weekly_fuel: float = Field(5.0, gt=0, description="ICEV weekly fuel cost, INR 100")
    ev_price: float = Field(13.0, gt=0, description="EV price, lacs")
    ev_range: float = Field(200.0, gt=0, description="EV range, km")
    ev_fast_charge: float = Field(60.0, gt=0, description="EV fast charging time, minutes")
    ev_weekly_fuel: float = Field(4.0, gt=0, description="EV weekly fuel cost, INR 100")

    @model_validator(mode="after")
    def check_prices(self) -> "EvaluationPoint":
        if not self.ev_price > self.icev_price:
            raise InvalidInputError(f"EV price {self.ev_price} must exceed ICEV price {self.icev_price}")
        return self

    def features(self) -> Dict[str, Dict[str, float]]:
        return {
            "ev": alternative_features(
                price=self.ev_price, range_km=self.ev_range, weekly_fuel=self.ev_weekly_fuel,
                fast_charge=self.ev_fast_charge, spacing=math.nan, slow_charge=math.nan,
                parking=math.nan, lane=math.nan,
            ),
            "icev": alternative_features(
                price=self.icev_price, range_km=self.icev_range, weekly_fuel=self.icev_weekly_fuel,
                fast_charge=self.icev_fast_charge, spacing=math.nan, slow_charge=math.nan,
                parking=math.nan, lane=math.nan,
            ),
        }

    def with_attribute(self, attribute: str, value: float) -> "EvaluationPoint":
        """Copy with the EV value of one WTP attribute replaced."""
        field_name = {
            "price": "ev_price",
            "fastcharge": "ev_fast_charge",
            "range": "ev_range",
            "fuel": "ev_weekly_fuel",
        }[_check_attribute(attribute)]
        return self.model_validate({**self.model_dump(), field_name: value})


class Profile(BaseModel):
    """A named demographic profile."""

    name: str = Field(..., description="Profile name used in reports")
    description: str = Field("", description="Free-text description")
    demographics: Demographics


class WtpGrid(BaseModel):
    ev_price: List[float] = Field(..., min_length=1, description="EV prices, lacs")
    attribute_values: List[float] = Field(..., min_length=1, description="EV attribute values, raw units")


def _check_attribute(attribute: str) -> str:
    if attribute not in ATTRIBUTES:
        raise InvalidInputError(f"attribute must be one of {', '.join(ATTRIBUTES)}, got {attribute}")
    return attribute


def profile_latent_means(spec: ModelSpec, params: ParameterVector, demographics: Demographics) -> np.ndarray:
    """Latent means Pi s for a demographic profile (gamma at zero)."""
    means = spec.covariate_vector(demographics) @ spec.pi_matrix(params.values)
    if not np.all(np.isfinite(means)):
        raise InvalidInputError("latent means are not finite")
    return means


def marginal_utility_terms(
    spec: ModelSpec,
    params: ParameterVector,
    point: EvaluationPoint,
    attribute: str,
    latent_means: Optional[Sequence[float]] = None,
) -> Dict[str, float]:
    """Contribution of each term to d(V_EV - V_ICEV)/d(EV attribute), per raw unit."""
    feature, _ = ATTRIBUTES[_check_attribute(attribute)]
    values = params.values
    features = point.features()
    means = np.zeros(len(spec.latents)) if latent_means is None else np.asarray(latent_means, dtype=float)
    # d log(range / 100) / d range
    chain = 1.0 / point.ev_range if attribute == "range" else 1.0

    out: Dict[str, float] = {}
    for term in spec.utility_terms:
        expr = getattr(term, "expr", None)
        if expr is None or expr.attribute != feature or expr.ev_sign == 0.0:
            continue
        direction = expr.ev_sign * (1.0 if term.alternative == "ev" else -1.0) * chain
        coef = values[term.param]
        if isinstance(term, LinearTerm):
            slope = coef
        elif isinstance(term, RefPowerTerm):
            alpha = values[term.curvature]
            if alpha == 1:
                slope = coef
            else:
                deviation = float(expr.evaluate(features))
                if abs(deviation) < SINGULARITY_EPS and alpha < 1:
                    raise SingularityError(attribute, deviation)
                slope = coef * alpha * abs(deviation) ** (alpha - 1.0)
        elif isinstance(term, LatentInteractionTerm):
            slope = coef * means[spec.latent_index(term.latent)]
        else:
            continue
        out[term.param] = out.get(term.param, 0.0) + slope * direction
    return out


def marginal_utility(
    spec: ModelSpec,
    params: ParameterVector,
    point: EvaluationPoint,
    attribute: str,
    latent_means: Optional[Sequence[float]] = None,
) -> float:
    """Marginal utility of an EV attribute per raw unit (lacs, minutes, km or INR 100/week)."""
    return math.fsum(marginal_utility_terms(spec, params, point, attribute, latent_means).values())


def wtp(
    spec: ModelSpec,
    params: ParameterVector,
    point: EvaluationPoint,
    attribute: str,
    unit_change: Optional[float] = None,
    latent_means: Optional[Sequence[float]] = None,
) -> float:
    """WTP in lacs for changing the EV attribute by unit_change; positive for improvements."""
    change = ATTRIBUTES[_check_attribute(attribute)][1] if unit_change is None else unit_change
    price_marginal = marginal_utility(spec, params, point, "price", latent_means)
    if price_marginal == 0.0:
        raise ZeroPriceMarginalError()
    return -(marginal_utility(spec, params, point, attribute, latent_means) * change) / price_marginal


def wtp_thousand_inr(lacs: float) -> float:
    return lacs * THOUSAND_INR_PER_LAC


def usd(thousand_inr: float) -> float:
    """Report-only currency conversion."""
    return thousand_inr * 1000.0 / INR_PER_USD


def wtp_curve(
    spec: ModelSpec,
    params: ParameterVector,
    attribute: str,
    grid: WtpGrid,
    profile: Optional[Profile] = None,
    point: Optional[EvaluationPoint] = None,
    unit_change: Optional[float] = None,
) -> pd.DataFrame:
    """WTP over a grid of EV prices and EV attribute values."""
    if _check_attribute(attribute) == "price":
        raise InvalidInputError("WTP curves are defined for fastcharge, range and fuel")
    point = point or EvaluationPoint()
    means = profile_latent_means(spec, params, profile.demographics) if profile else None
    rows = []
    for ev_price in grid.ev_price:
        for value in grid.attribute_values:
            at = point.with_attribute("price", ev_price).with_attribute(attribute, value)
            lacs = wtp(spec, params, at, attribute, unit_change, means)
            rows.append({
                "model": spec.name,
                "profile": profile.name if profile else "none",
                "ev_price": ev_price,
                "attr_value": value,
                "wtp_thousand_inr": wtp_thousand_inr(lacs),
            })
    logger.info(f"Evaluated {len(rows)} {attribute} WTP points for {spec.name}")
    return pd.DataFrame(rows, columns=["model", "profile", "ev_price", "attr_value", "wtp_thousand_inr"])


def annuity_present_value(weekly_saving: float, weekly_rate: float, weeks: int) -> float:
    """A (1 - (1 + i)^-n) / i, with the zero-rate limit A n."""
    if weekly_rate == 0.0:
        return weekly_saving * weeks
    return -weekly_saving * math.expm1(-weeks * math.log1p(weekly_rate)) / weekly_rate


def discount_rate(wtp_price: float, weekly_saving: float, years: int) -> float:
    """Annual discount rate equating a WTP to the present value of weekly savings."""
    if not wtp_price > 0 or not weekly_saving > 0 or years < 1:
        raise InvalidInputError("wtp_price and weekly_saving must be positive and years >= 1")
    weeks = int(years) * WEEKS_PER_YEAR
    undiscounted = weekly_saving * weeks
    if math.isclose(wtp_price, undiscounted, rel_tol=1e-12):
        return 0.0

    def residual(rate: float) -> float:
        return annuity_present_value(weekly_saving, rate, weeks) - wtp_price

    # Paying more than the undiscounted savings implies a negative rate.
    low, high = (1e-12, 10.0) if wtp_price < undiscounted else (-0.05, -1e-12)
    f_low, f_high = residual(low), residual(high)
    if not (math.isfinite(f_low) and math.isfinite(f_high)) or f_low * f_high > 0:
        raise DiscountRateDomainError(
            f"no sign change on weekly rate bracket ({low}, {high}) for P={wtp_price}, A={weekly_saving}, n={weeks}"
        )
    weekly = bisect(residual, low, high, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(residual(weekly)) > 1e-6:
        raise DiscountRateDomainError(f"bisection residual {residual(weekly):.3g} exceeds 1e-6")
    return math.expm1(WEEKS_PER_YEAR * math.log1p(weekly))


def format_rate(rate: float) -> str:
    return f"{rate * 100:.1f}%"


@handle_io_error
def load_profile(path: Union[str, Path]) -> Profile:
    with open(path, encoding="utf-8") as f:
        return Profile.model_validate(json.load(f))


@handle_io_error
def load_grid(path: Union[str, Path]) -> WtpGrid:
    with open(path, encoding="utf-8") as f:
        return WtpGrid.model_validate(json.load(f))


@handle_io_error
def write_curve(curve: pd.DataFrame, path: Union[str, Path]) -> None:
    curve.to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Wrote {len(curve)} WTP rows to {path}")
