"""Firm-record ingestion, value added, and filtering."""

import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from laborstat.errors import PipelineError
from laborstat.models import (
    VALUE_ADDED_FIELDS,
    CleaningReport,
    CleanRecord,
    FirmRecord,
    RejectionReason,
)

logger = logging.getLogger(__name__)

DEFAULT_EXCLUSIONS = (
    "finance and insurance",
    "deep-sea foreign transport of freight",
    "holding companies",
)

RECORD_COLUMNS = (
    "firm_id",
    "year",
    "sector",
    *VALUE_ADDED_FIELDS,
    "workers",
)


class RecordCleaner:

    def __init__(
        self,
        exclusions: Sequence[str] = DEFAULT_EXCLUSIONS,
        include_sectors: Optional[Sequence[str]] = None,
        years: Optional[Sequence[int]] = None
    ):
        self.exclusions = {s.strip() for s in exclusions if s.strip()}
        self.include_sectors = (
            {s.strip() for s in include_sectors} if include_sectors else None
        )
        self.years = set(years) if years else None

    @staticmethod
    def value_added(record: FirmRecord) -> Optional[float]:
        """Sum of the six value-added components; None if any is missing."""
        components = [getattr(record, name) for name in VALUE_ADDED_FIELDS]
        if any(value is None for value in components):
            return None
        return math.fsum(components)

    def rejection_reason(
        self,
        record: Union[FirmRecord, CleanRecord]
    ) -> Optional[RejectionReason]:
        if record.sector in self.exclusions:
            return RejectionReason.EXCLUDED_SECTOR
        if self.include_sectors is not None and record.sector not in self.include_sectors:
            return RejectionReason.SECTOR_NOT_INCLUDED
        if self.years is not None and record.year not in self.years:
            return RejectionReason.YEAR_NOT_SELECTED
        if isinstance(record, CleanRecord):
            return None

        value_added = self.value_added(record)
        if value_added is None:
            return RejectionReason.MISSING_VALUE_ADDED
        if record.workers is None:
            return RejectionReason.MISSING_WORKERS
        if value_added <= 0:
            return RejectionReason.NONPOSITIVE_VALUE_ADDED
        return None

    def clean_record(self, record: Union[FirmRecord, CleanRecord]) -> CleanRecord:
        if isinstance(record, CleanRecord):
            return record
        value_added = self.value_added(record)
        return CleanRecord(
            firm_id=record.firm_id,
            year=record.year,
            sector=record.sector,
            Y=value_added,
            n=record.workers,
            c=value_added / record.workers,
        )

    def clean_batch(
        self,
        records: Iterable[Union[FirmRecord, CleanRecord]]
    ) -> Tuple[List[CleanRecord], CleaningReport]:
        report = CleaningReport(exclusions=sorted(self.exclusions))
        cleaned: List[CleanRecord] = []

        for record in records:
            report.input_count += 1
            reason = self.rejection_reason(record)
            if reason is not None:
                report.reject(reason)
                logger.debug(f"Rejected {record.firm_id}/{record.year}: {reason.value}")
                continue
            cleaned.append(self.clean_record(record))

        report.output_count = len(cleaned)
        logger.info(
            f"Cleaned {report.input_count} records: {report.output_count} kept, "
            f"{report.rejected_total} rejected {report.rejected}"
        )
        return cleaned, report


def clean(
    records: Iterable[Union[FirmRecord, CleanRecord]],
    exclusions: Sequence[str] = DEFAULT_EXCLUSIONS,
    include_sectors: Optional[Sequence[str]] = None,
    years: Optional[Sequence[int]] = None
) -> Tuple[List[CleanRecord], CleaningReport]:
    return RecordCleaner(exclusions, include_sectors, years).clean_batch(records)


def parse_sector_list(value: Optional[str]) -> List[str]:
    """Comma-separated sector names; an empty string means none."""
    if not value:
        return []
    return [part.strip() for part in value.split(",") if part.strip()]


def _optional(value) -> Optional[object]:
    if value is None:
        return None
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def read_records(path: Path, unit_scale: float = 1.0) -> List[FirmRecord]:
    """Read firm records from CSV; an empty field is a missing value.

    Monetary columns are multiplied by unit_scale once, so that they are
    expressed in 10^3 yen afterwards.
    """
    if not unit_scale > 0:
        raise PipelineError(f"unit_scale must be positive, got {unit_scale}")
    try:
        frame = pd.read_csv(
            path,
            dtype={"firm_id": str, "sector": str},
            keep_default_na=False,
            na_values=[""],
            encoding="utf-8",
        )
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise PipelineError(f"cannot read records from {path}: {e}") from e

    missing = [column for column in RECORD_COLUMNS if column not in frame.columns]
    if missing:
        raise PipelineError(f"{path} lacks columns {missing}")

    records: List[FirmRecord] = []
    for row_number, row in enumerate(frame.to_dict(orient="records"), start=2):
        values = {column: _optional(row[column]) for column in RECORD_COLUMNS}
        for name in VALUE_ADDED_FIELDS:
            if values[name] is not None:
                values[name] = float(values[name]) * unit_scale
        workers = values["workers"]
        if workers is not None:
            if float(workers) != int(float(workers)):
                raise PipelineError(f"{path}:{row_number}: workers must be an integer, got {workers}")
            values["workers"] = int(float(workers))
        values["sector"] = values["sector"] or ""
        if values["firm_id"] is None:
            raise PipelineError(f"{path}:{row_number}: firm_id is empty")
        values["firm_id"] = str(values["firm_id"])
        try:
            records.append(FirmRecord(**values))
        except ValidationError as e:
            raise PipelineError(f"{path}:{row_number}: {e}") from e

    logger.info(f"Read {len(records)} records from {path}")
    return records


def records_frame(records: Iterable[FirmRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [record.model_dump() for record in records],
        columns=list(RECORD_COLUMNS),
    )
