"""Dataset ingestion and persistence using CSV files."""

import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from exceptions import ComparisonRelationError, DataValidationError, RefChoiceError, handle_io_error
from models import (
    INDICATORS,
    AlternativeProfile,
    ChoiceTask,
    Dataset,
    Demographics,
    Respondent,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RESPONDENT_COLUMNS = [
    "respondent_id", "location", "gender", "marital", "income_band", "education",
    "employment", "reported_icev_price_lacs", "weekly_km", *INDICATORS,
]

TASK_COLUMNS = [
    "respondent_id", "task_id",
    "icev_price_lacs", "icev_run_cost", "icev_range_km", "icev_fast_min", "icev_spacing_km",
    "ev_price_lacs", "ev_run_cost", "ev_range_km", "ev_slow_hr", "ev_fast_min", "ev_spacing_km",
    "ev_parking", "ev_lane", "chosen",
]

# CSV row 1 is the header.
_FIRST_DATA_ROW = 2


def _read_table(path: PathLike, columns: List[str]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise DataValidationError(
            f"{Path(path).name} is missing columns: {', '.join(missing)}", row=1
        )
    return frame


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        field = " -> ".join(str(loc) for loc in error["loc"])
        parts.append(f"{field}: {error['msg']}")
    return "; ".join(parts)


def _task_from_row(row: Dict[str, Any]) -> ChoiceTask:
    slow = row["ev_slow_hr"].strip()
    chosen = row["chosen"].strip()
    return ChoiceTask(
        task_id=row["task_id"],
        icev=AlternativeProfile(
            price=row["icev_price_lacs"],
            running_cost=row["icev_run_cost"],
            range=row["icev_range_km"],
            slow_charge=None,
            fast_charge=row["icev_fast_min"],
            charger_spacing=row["icev_spacing_km"],
        ),
        ev=AlternativeProfile(
            price=row["ev_price_lacs"],
            running_cost=row["ev_run_cost"],
            range=row["ev_range_km"],
            slow_charge=slow if slow else None,
            fast_charge=row["ev_fast_min"],
            charger_spacing=row["ev_spacing_km"],
            reserved_parking=row["ev_parking"],
            special_lane=row["ev_lane"],
        ),
        chosen=chosen if chosen else None,
    )


@handle_io_error
def load_dataset(respondents_file: PathLike, tasks_file: PathLike) -> Dataset:
    """Load and validate respondents.csv and tasks.csv into a Dataset."""
    task_frame = _read_table(tasks_file, TASK_COLUMNS)
    tasks_by_respondent: Dict[str, List[ChoiceTask]] = defaultdict(list)

    for offset, row in enumerate(task_frame.to_dict(orient="records")):
        row_number = offset + _FIRST_DATA_ROW
        try:
            task = _task_from_row(row)
        except ComparisonRelationError as e:
            raise ComparisonRelationError(e.task_id, e.relation, row["respondent_id"])
        except ValidationError as e:
            raise DataValidationError(
                f"Cannot parse task {row.get('task_id')} in {Path(tasks_file).name}",
                row=row_number,
                detail=_format_validation_error(e),
            )
        tasks_by_respondent[row["respondent_id"]].append(task)

    respondent_frame = _read_table(respondents_file, RESPONDENT_COLUMNS)
    respondents = []
    for offset, row in enumerate(respondent_frame.to_dict(orient="records")):
        row_number = offset + _FIRST_DATA_ROW
        respondent_id = row["respondent_id"]
        try:
            respondents.append(Respondent(
                respondent_id=respondent_id,
                demographics=Demographics(
                    location=row["location"],
                    gender=row["gender"],
                    marital=row["marital"],
                    income_band=row["income_band"],
                    education=row["education"],
                    employment=row["employment"],
                ),
                reported_icev_price=row["reported_icev_price_lacs"],
                weekly_km=row["weekly_km"],
                indicators=tuple(row[name] for name in INDICATORS),
                tasks=tuple(tasks_by_respondent.pop(respondent_id, [])),
            ))
        except ValidationError as e:
            raise DataValidationError(
                f"Cannot parse respondent {respondent_id} in {Path(respondents_file).name}",
                row=row_number,
                detail=_format_validation_error(e),
            )
        except RefChoiceError as e:
            if isinstance(e, DataValidationError) and e.row is None:
                e.row = row_number
            raise

    if tasks_by_respondent:
        orphans = ", ".join(sorted(tasks_by_respondent))
        raise DataValidationError(f"Tasks reference unknown respondents: {orphans}")

    dataset = Dataset(respondents=tuple(respondents))
    logger.info(
        f"Loaded {len(dataset)} respondents and {dataset.n_tasks} tasks "
        f"from {Path(respondents_file).name} / {Path(tasks_file).name}"
    )
    return dataset


def _flag(value: bool) -> int:
    return 1 if value else 0


def _task_row(respondent_id: str, task: ChoiceTask) -> Dict[str, Any]:
    return {
        "respondent_id": respondent_id,
        "task_id": task.task_id,
        "icev_price_lacs": task.icev.price,
        "icev_run_cost": task.icev.running_cost,
        "icev_range_km": task.icev.range,
        "icev_fast_min": task.icev.fast_charge,
        "icev_spacing_km": task.icev.charger_spacing,
        "ev_price_lacs": task.ev.price,
        "ev_run_cost": task.ev.running_cost,
        "ev_range_km": task.ev.range,
        "ev_slow_hr": "" if task.ev.slow_charge is None else task.ev.slow_charge,
        "ev_fast_min": task.ev.fast_charge,
        "ev_spacing_km": task.ev.charger_spacing,
        "ev_parking": _flag(task.ev.reserved_parking),
        "ev_lane": _flag(task.ev.special_lane),
        "chosen": "" if task.chosen is None else task.chosen.value,
    }


def assignments_frame(assignments: Iterable[Tuple[str, Sequence[ChoiceTask]]]) -> pd.DataFrame:
    """(respondent_id, tasks) pairs in the tasks.csv layout."""
    rows = [_task_row(respondent_id, task) for respondent_id, tasks in assignments for task in tasks]
    return pd.DataFrame(rows, columns=TASK_COLUMNS)


def tasks_frame(dataset: Dataset) -> pd.DataFrame:
    """Tasks of every respondent in the tasks.csv layout."""
    return assignments_frame((r.respondent_id, r.tasks) for r in dataset.respondents)


def respondents_frame(dataset: Dataset) -> pd.DataFrame:
    """Respondents in the respondents.csv layout."""
    rows = []
    for respondent in dataset.respondents:
        row = {"respondent_id": respondent.respondent_id}
        row.update(respondent.demographics.model_dump())
        row["reported_icev_price_lacs"] = respondent.reported_icev_price
        row["weekly_km"] = respondent.weekly_km
        row.update(dict(zip(INDICATORS, respondent.indicators)))
        rows.append(row)
    return pd.DataFrame(rows, columns=RESPONDENT_COLUMNS)


@handle_io_error
def write_dataset(dataset: Dataset, respondents_file: PathLike, tasks_file: PathLike) -> None:
    """Write a Dataset to respondents.csv and tasks.csv."""
    respondents_frame(dataset).to_csv(respondents_file, index=False, encoding="utf-8")
    write_tasks(dataset, tasks_file)
    logger.info(f"Wrote {len(dataset)} respondents to {respondents_file}")


@handle_io_error
def write_tasks(dataset: Dataset, tasks_file: PathLike) -> None:
    """Write only the tasks.csv half of a dataset."""
    tasks_frame(dataset).to_csv(tasks_file, index=False, encoding="utf-8")
    logger.info(f"Wrote {dataset.n_tasks} tasks to {tasks_file}")


@handle_io_error
def write_assignments(assignments: Iterable[Tuple[str, Sequence[ChoiceTask]]], tasks_file: PathLike) -> None:
    """Write designed tasks (no observed choices) in the tasks.csv layout."""
    frame = assignments_frame(assignments)
    frame.to_csv(tasks_file, index=False, encoding="utf-8")
    logger.info(f"Wrote {len(frame)} designed tasks to {tasks_file}")


@handle_io_error
def load_reported_prices(respondents_file: PathLike) -> List[Tuple[str, float]]:
    """(respondent_id, reported ICEV price) pairs from a respondents.csv."""
    frame = _read_table(respondents_file, ["respondent_id", "reported_icev_price_lacs"])
    out = []
    for offset, row in enumerate(frame.to_dict(orient="records")):
        try:
            price = float(row["reported_icev_price_lacs"])
        except ValueError:
            price = float("nan")
        if not price > 0:
            raise DataValidationError(
                f"Reported ICEV price of {row['respondent_id']} must be a positive number",
                row=offset + _FIRST_DATA_ROW,
            )
        out.append((row["respondent_id"], price))
    return out
