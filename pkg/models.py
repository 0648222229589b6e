"""Pydantic records for respondents, choice tasks and datasets."""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from exceptions import (
    ComparisonRelationError,
    DataValidationError,
    DuplicateRespondentError,
    IndicatorDomainError,
    InvalidInputError,
    UnknownCategoryError,
)

SCHEMA_VERSION = "1"

INDICATORS: Tuple[str, ...] = tuple(f"ind{k:02d}" for k in range(1, 12))
INDICATOR_LEVELS = (1, 2, 3, 4, 5)

# Closed vocabularies; the first level of each is the structural-equation base category.
DEMOGRAPHIC_VOCABULARY: Dict[str, Tuple[str, ...]] = {
    "location": ("delhi_and_others", "mumbai", "bangalore", "chennai", "calcutta"),
    "gender": ("male", "female"),
    "marital": ("single_and_others", "couple", "couple_with_kid"),
    "income_band": ("ge_20", "lt_5", "5_10", "10_15", "15_20"),
    "education": ("masters_plus", "below_bachelor", "bachelor"),
    "employment": ("private", "government", "self_employed", "unemployed"),
}

INDICATOR_LABELS: Dict[str, Dict[int, str]] = {
    "ind10": {
        1: "Never heard",
        2: "Have heard, but no knowledge",
        3: "Have little knowledge",
        4: "Have a fair amount of knowledge",
        5: "Know all about EVs",
    },
    "ind11": {
        1: "Strongly disagree",
        2: "Disagree",
        3: "Neutral",
        4: "Agree",
        5: "Strongly agree",
    },
}


class Alternative(str, Enum):
    """The two alternatives of every choice task."""
    EV = "EV"
    ICEV = "ICEV"


def chosen_from(ev_chosen: bool) -> Alternative:
    return Alternative.EV if ev_chosen else Alternative.ICEV


def weekly_fuel_cost(running_cost: float, weekly_km: float) -> float:
    """Weekly operating cost in units of INR 100."""
    if not running_cost > 0 or not weekly_km > 0:
        raise InvalidInputError(
            f"running_cost and weekly_km must be positive, got {running_cost} and {weekly_km}"
        )
    return running_cost * weekly_km / 100.0


class AlternativeProfile(BaseModel):
    """Attribute profile of one alternative in a choice task."""
    model_config = ConfigDict(frozen=True)

    price: float = Field(..., gt=0, description="On-road price in INR lacs")
    running_cost: float = Field(..., gt=0, description="Running cost in INR per km")
    range: float = Field(..., gt=0, description="Driving range in km")
    slow_charge: Optional[float] = Field(None, description="Slow charging time in hours; absent for ICEV")
    fast_charge: float = Field(..., gt=0, description="Fast charging / refuelling time in minutes")
    charger_spacing: float = Field(..., gt=0, description="Distance between fast chargers in km")
    reserved_parking: bool = Field(False, description="Reserved parking available")
    special_lane: bool = Field(False, description="Access to specialised lanes")


class ChoiceTask(BaseModel):
    """One scenario: ICEV and EV profiles plus the observed choice."""
    model_config = ConfigDict(frozen=True)

    task_id: str = Field(..., min_length=1, description="Task identifier, unique within a respondent")
    icev: AlternativeProfile
    ev: AlternativeProfile
    chosen: Optional[Alternative] = Field(None, description="Observed choice; unset before simulation")

    @model_validator(mode="after")
    def check_comparison_relations(self) -> "ChoiceTask":
        relations = [
            (self.ev.price > self.icev.price, "ev.price > icev.price"),
            (self.ev.range < self.icev.range, "ev.range < icev.range"),
            (self.ev.fast_charge > self.icev.fast_charge, "ev.fast_charge > icev.fast_charge"),
            (self.ev.running_cost < self.icev.running_cost, "ev.running_cost < icev.running_cost"),
            (self.ev.charger_spacing > self.icev.charger_spacing,
             "ev.charger_spacing > icev.charger_spacing"),
        ]
        for holds, relation in relations:
            if not holds:
                raise ComparisonRelationError(self.task_id, relation)
        return self

    @property
    def ev_chosen(self) -> bool:
        return self.chosen == Alternative.EV


class Demographics(BaseModel):
    """Categorical demographic record using the structural-equation vocabulary."""
    model_config = ConfigDict(frozen=True)

    location: str = Field(..., description="Respondent city")
    gender: str = Field(..., description="Respondent gender")
    marital: str = Field(..., description="Marital status / household type")
    income_band: str = Field(..., description="Annual household income band in lacs")
    education: str = Field(..., description="Highest education level")
    employment: str = Field(..., description="Employment type")

    @field_validator("location", "gender", "marital", "income_band", "education", "employment")
    @classmethod
    def check_vocabulary(cls, value: str, info) -> str:
        allowed = DEMOGRAPHIC_VOCABULARY[info.field_name]
        if value not in allowed:
            raise UnknownCategoryError(info.field_name, value, allowed)
        return value

    @classmethod
    def base(cls) -> "Demographics":
        """Profile with every field at its base category."""
        return cls(**{field: levels[0] for field, levels in DEMOGRAPHIC_VOCABULARY.items()})


class Respondent(BaseModel):
    """A survey respondent with demographics, indicators and assigned tasks."""
    model_config = ConfigDict(frozen=True)

    respondent_id: str = Field(..., min_length=1, description="Unique respondent identifier")
    demographics: Demographics
    reported_icev_price: float = Field(..., gt=0, description="Reported ICEV price in INR lacs")
    weekly_km: float = Field(..., gt=0, description="Weekly kilometres travelled")
    indicators: Tuple[int, ...] = Field(..., description="Ind01..Ind11 responses on a 1..5 scale")
    tasks: Tuple[ChoiceTask, ...] = Field(default=(), description="Assigned choice tasks")

    @model_validator(mode="after")
    def check_indicators(self) -> "Respondent":
        if len(self.indicators) != len(INDICATORS):
            raise DataValidationError(
                f"Respondent {self.respondent_id} has {len(self.indicators)} indicators; "
                f"expected exactly {len(INDICATORS)} (Ind01-Ind11)"
            )
        for name, value in zip(INDICATORS, self.indicators):
            if value not in INDICATOR_LEVELS:
                raise IndicatorDomainError(name.capitalize(), self.respondent_id, value)
        task_ids = [task.task_id for task in self.tasks]
        if len(set(task_ids)) != len(task_ids):
            raise DataValidationError(f"Respondent {self.respondent_id} has duplicate task ids")
        return self

    def indicator(self, name: str) -> int:
        """Response to one indicator, addressed as 'ind01'..'ind11'."""
        return self.indicators[INDICATORS.index(name.lower())]


class Dataset(BaseModel):
    """Validated collection of respondents."""
    model_config = ConfigDict(frozen=True)

    respondents: Tuple[Respondent, ...] = Field(..., description="Respondents in file order")
    schema_version: str = Field(SCHEMA_VERSION, description="Dataset schema version tag")

    @model_validator(mode="after")
    def check_unique_ids(self) -> "Dataset":
        seen = set()
        for respondent in self.respondents:
            if respondent.respondent_id in seen:
                raise DuplicateRespondentError(respondent.respondent_id)
            seen.add(respondent.respondent_id)
        return self

    def __len__(self) -> int:
        return len(self.respondents)

    @property
    def n_tasks(self) -> int:
        return sum(len(r.tasks) for r in self.respondents)

    def require_choices(self) -> None:
        """Estimation needs every task to carry an observed choice."""
        for respondent in self.respondents:
            if not respondent.tasks:
                raise DataValidationError(f"Respondent {respondent.respondent_id} has no tasks")
            for task in respondent.tasks:
                if task.chosen is None:
                    raise DataValidationError(
                        f"Task {task.task_id} of respondent {respondent.respondent_id} has no observed choice"
                    )

    def sorted_by_id(self) -> List[Respondent]:
        return sorted(self.respondents, key=lambda r: r.respondent_id)
