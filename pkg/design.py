"""Randomized pivot choice-experiment design.

A bank of scenario templates is generated with marginal attribute-level
balance (each level of an attribute appears equally often, columns permuted
independently). Respondents draw tasks from the bank without replacement and
the EV price is pivoted on their reported ICEV price.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from exceptions import DesignSpecError, InvalidInputError, handle_io_error
from models import AlternativeProfile, ChoiceTask, Respondent

logger = logging.getLogger(__name__)

# Attribute columns of a template, in the fixed order used for seeded permutations.
BANK_COLUMNS = (
    "ev_price_markup",
    "icev_run_cost",
    "ev_run_cost",
    "icev_range",
    "ev_range",
    "ev_slow_charge",
    "icev_fast_charge",
    "ev_fast_charge",
    "icev_spacing",
    "ev_spacing",
    "ev_parking",
    "ev_lane",
)

PRICE_DECIMALS = 4


class DesignSpec(BaseModel):
    """Attribute levels of the experiment and bank geometry."""
    model_config = ConfigDict(frozen=True)

    ev_price_markup: Tuple[float, ...] = Field((0.30, 0.45, 0.60), description="EV price markup over the ICEV price")
    icev_run_cost: Tuple[float, ...] = Field((3.0, 4.0, 5.0), description="ICEV running cost, INR/km")
    ev_run_cost: Tuple[float, ...] = Field((0.5, 1.0, 1.5), description="EV running cost, INR/km")
    icev_range: Tuple[float, ...] = Field((600.0, 800.0), description="ICEV range, km")
    ev_range: Tuple[float, ...] = Field((150.0, 200.0, 250.0), description="EV range, km")
    ev_slow_charge: Tuple[float, ...] = Field((6.0, 8.0, 10.0), description="EV slow charging time, hours")
    icev_fast_charge: Tuple[float, ...] = Field((5.0, 10.0), description="ICEV refuelling time, minutes")
    ev_fast_charge: Tuple[float, ...] = Field((30.0, 60.0, 90.0), description="EV fast charging time, minutes")
    icev_spacing: Tuple[float, ...] = Field((1.0,), description="Distance between fuel stations, km")
    ev_spacing: Tuple[float, ...] = Field((3.0, 5.0, 7.0), description="Distance between fast chargers, km")
    ev_parking: Tuple[bool, ...] = Field((True, False), description="Reserved parking for EVs")
    ev_lane: Tuple[bool, ...] = Field((True, False), description="Specialised lanes for EVs")
    bank_size: int = Field(24, ge=1, description="Number of scenario templates")
    tasks_per_respondent: int = Field(3, ge=1, description="Templates drawn per respondent")

    def levels(self, column: str) -> Tuple:
        return getattr(self, column)

    def validate_spec(self) -> None:
        """Check level sets, balance divisibility and the comparison relations."""
        for column in BANK_COLUMNS:
            levels = self.levels(column)
            if not levels:
                raise DesignSpecError(f"level set {column} is empty")
            if self.bank_size % len(levels) != 0:
                raise DesignSpecError(
                    f"bank_size {self.bank_size} is not divisible by the {len(levels)} levels of {column}"
                )
        if self.tasks_per_respondent > self.bank_size:
            raise DesignSpecError("tasks_per_respondent exceeds bank_size")
        self.validate_relations()

    def validate_relations(self) -> None:
        """Every level combination must satisfy the EV/ICEV comparison relations."""
        checks = [
            (min(self.ev_price_markup) > 0, "every EV price markup must be positive"),
            (max(self.ev_range) < min(self.icev_range), "max EV range must be below min ICEV range"),
            (min(self.ev_fast_charge) > max(self.icev_fast_charge),
             "min EV fast charge must exceed max ICEV refuelling time"),
            (max(self.ev_run_cost) < min(self.icev_run_cost),
             "max EV running cost must be below min ICEV running cost"),
            (min(self.ev_spacing) > max(self.icev_spacing),
             "min EV charger spacing must exceed max ICEV station spacing"),
        ]
        for holds, message in checks:
            if not holds:
                raise DesignSpecError(message)


class ScenarioTemplate(BaseModel):
    """One bank scenario; the EV price is still a relative markup."""
    model_config = ConfigDict(frozen=True)

    scenario: int = Field(..., ge=1, description="1-based scenario number in the bank")
    ev_price_markup: float
    icev_run_cost: float
    ev_run_cost: float
    icev_range: float
    ev_range: float
    ev_slow_charge: float
    icev_fast_charge: float
    ev_fast_charge: float
    icev_spacing: float
    ev_spacing: float
    ev_parking: bool
    ev_lane: bool

    def materialize(self, reported_price: float) -> ChoiceTask:
        """Pivot the template on a respondent's reported ICEV price."""
        if not reported_price > 0:
            raise InvalidInputError(f"reported ICEV price must be positive, got {reported_price}")
        ev_price = round(reported_price * (1.0 + self.ev_price_markup), PRICE_DECIMALS)
        if self.ev_price_markup > 0 and ev_price <= reported_price:
            # rounding ate the premium: smallest representable price above the ICEV
            ev_price = round(reported_price + 10.0 ** -PRICE_DECIMALS, PRICE_DECIMALS)
        return ChoiceTask(
            task_id=f"S{self.scenario:02d}",
            icev=AlternativeProfile(
                price=reported_price,
                running_cost=self.icev_run_cost,
                range=self.icev_range,
                slow_charge=None,
                fast_charge=self.icev_fast_charge,
                charger_spacing=self.icev_spacing,
            ),
            ev=AlternativeProfile(
                price=ev_price,
                running_cost=self.ev_run_cost,
                range=self.ev_range,
                slow_charge=self.ev_slow_charge,
                fast_charge=self.ev_fast_charge,
                charger_spacing=self.ev_spacing,
                reserved_parking=self.ev_parking,
                special_lane=self.ev_lane,
            ),
        )


def generate_bank(spec: DesignSpec, seed: int) -> List[ScenarioTemplate]:
    """Generate a marginally balanced bank of scenario templates."""
    spec.validate_spec()
    rng = np.random.default_rng(seed)

    columns = {}
    for column in BANK_COLUMNS:
        levels = spec.levels(column)
        repeats = spec.bank_size // len(levels)
        balanced = np.repeat(np.arange(len(levels)), repeats)
        columns[column] = [levels[i] for i in rng.permutation(balanced)]

    bank = [
        ScenarioTemplate(scenario=s + 1, **{column: columns[column][s] for column in BANK_COLUMNS})
        for s in range(spec.bank_size)
    ]
    logger.debug(f"Generated bank of {len(bank)} scenarios with seed {seed}")
    return bank


def assign_tasks(
    bank: Sequence[ScenarioTemplate],
    respondent: Union[Respondent, float],
    seed: int,
    tasks_per_respondent: int = 3,
) -> List[ChoiceTask]:
    """Draw distinct templates without replacement and pivot them on the reported price."""
    reported_price = respondent.reported_icev_price if isinstance(respondent, Respondent) else float(respondent)
    if not reported_price > 0:
        raise InvalidInputError(f"reported ICEV price must be positive, got {reported_price}")
    if tasks_per_respondent > len(bank):
        raise DesignSpecError("cannot draw more tasks than the bank holds")

    rng = np.random.default_rng(seed)
    picks = rng.choice(len(bank), size=tasks_per_respondent, replace=False)
    return [bank[int(i)].materialize(reported_price) for i in picks]


def respondent_seeds(seed: int, n: int) -> List[int]:
    """Independent per-respondent integer seeds derived from one master seed."""
    state = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def build_design(
    spec: DesignSpec,
    prices: Iterable[Tuple[str, float]],
    seed: int,
) -> List[Tuple[str, List[ChoiceTask]]]:
    """Assign tasks to (respondent_id, reported price) pairs from one master seed."""
    prices = list(prices)
    bank = generate_bank(spec, seed)
    seeds = respondent_seeds(seed, len(prices))
    return [
        (respondent_id, assign_tasks(bank, price, s, spec.tasks_per_respondent))
        for (respondent_id, price), s in zip(prices, seeds)
    ]


@handle_io_error
def load_design_spec(path: Union[str, Path]) -> DesignSpec:
    with open(path, encoding="utf-8") as f:
        spec = DesignSpec.model_validate(json.load(f))
    spec.validate_spec()
    return spec


def bank_frame(bank: Sequence[ScenarioTemplate]) -> pd.DataFrame:
    return pd.DataFrame([template.model_dump() for template in bank])


@handle_io_error
def write_bank(bank: Sequence[ScenarioTemplate], path: Union[str, Path]) -> None:
    bank_frame(bank).to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Wrote scenario bank ({len(bank)} templates) to {path}")
