"""Synthetic firm populations drawn around the equilibrium law."""

import logging
from typing import List, Optional, Sequence

import numpy as np

from laborstat.equilibrium import mean_occupancy
from laborstat.errors import DomainError
from laborstat.models import VALUE_ADDED_FIELDS, FirmRecord, ModelParams

logger = logging.getLogger(__name__)

# split of value added across its components; sums to 1
COMPONENT_SHARES = (0.15, 0.55, 0.05, 0.05, 0.1, 0.1)


def synthetic_population(
    p: ModelParams,
    n_firms: int,
    c_min: float = 1e3,
    c_max: float = 1e6,
    seed: Optional[int] = None,
    year: int = 2008,
    sectors: Sequence[str] = ("manufacturing", "non-manufacturing")
) -> List[FirmRecord]:
    """Firms with ln c uniform on [ln c_min, ln c_max] and Poisson worker counts.

    A firm's worker count is Poisson around mean_occupancy(c), raised to 1
    when the draw is zero. Value added is c * n split over the six
    components by COMPONENT_SHARES.
    """
    if n_firms < 1:
        raise DomainError(f"n_firms must be positive, got {n_firms}")
    if not 0 < c_min < c_max:
        raise DomainError(f"invalid productivity range ({c_min}, {c_max})")

    rng = np.random.default_rng(seed)
    c = np.exp(rng.uniform(np.log(c_min), np.log(c_max), n_firms))
    n = np.maximum(rng.poisson(np.asarray(mean_occupancy(c, p))), 1)
    value_added = c * n

    records = []
    for index, (y, workers) in enumerate(zip(value_added.tolist(), n.tolist())):
        components = {
            name: y * share for name, share in zip(VALUE_ADDED_FIELDS, COMPONENT_SHARES)
        }
        records.append(FirmRecord(
            firm_id=f"S{index:07d}",
            year=year,
            sector=sectors[index % len(sectors)],
            workers=int(workers),
            **components,
        ))

    logger.info(f"Generated {n_firms} synthetic firms on [{c_min:g}, {c_max:g}]")
    return records
