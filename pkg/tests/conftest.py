import sys
from pathlib import Path
from typing import List

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from laborstat.equilibrium import TABLE1
from laborstat.models import FirmRecord, Limiter, ModelParams, ProductivityGrid

RECORD_HEADER = (
    "firm_id,year,sector,net_profits,labor_costs,financing_costs,"
    "rental_expenses,taxes,depreciation,workers\n"
)

# F1: Y=100, n=4 -> c=25      F2: excluded sector     F3: taxes missing
# F4: workers missing         F5: Y=-150              F6: Y=1000, n=2 -> c=500
RECORD_ROWS = (
    "F1,2008,manufacturing,10,50,5,5,10,20,4\n"
    "F2,2008,finance and insurance,10,50,5,5,10,20,1\n"
    "F3,2008,manufacturing,10,50,5,5,,20,3\n"
    "F4,2008,services,10,50,5,5,10,20,\n"
    "F5,2008,services,-200,10,10,10,10,10,5\n"
    "F6,2009,services,100,300,20,30,50,500,2\n"
)


@pytest.fixture
def all_params() -> ModelParams:
    return TABLE1["all"]


@pytest.fixture
def small_grid() -> ProductivityGrid:
    return ProductivityGrid(levels=5, dc=1.0)


@pytest.fixture
def unbounded() -> Limiter:
    return Limiter.unbounded()


@pytest.fixture
def firm_records() -> List[FirmRecord]:
    def record(firm_id, year, sector, values, workers):
        names = ("net_profits", "labor_costs", "financing_costs",
                 "rental_expenses", "taxes", "depreciation")
        return FirmRecord(
            firm_id=firm_id, year=year, sector=sector, workers=workers,
            **dict(zip(names, values))
        )

    return [
        record("F1", 2008, "manufacturing", (10, 50, 5, 5, 10, 20), 4),
        record("F2", 2008, "finance and insurance", (10, 50, 5, 5, 10, 20), 1),
        record("F3", 2008, "manufacturing", (10, 50, 5, 5, None, 20), 3),
        record("F4", 2008, "services", (10, 50, 5, 5, 10, 20), None),
        record("F5", 2008, "services", (-200, 10, 10, 10, 10, 10), 5),
        record("F6", 2009, "services", (100, 300, 20, 30, 50, 500), 2),
    ]


@pytest.fixture
def records_csv(tmp_path: Path) -> Path:
    path = tmp_path / "records.csv"
    path.write_text(RECORD_HEADER + RECORD_ROWS, encoding="utf-8")
    return path
