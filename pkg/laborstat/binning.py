"""Log-binned productivity densities and the mean-workers curve."""

import logging
from typing import Sequence, Tuple

import numpy as np

from laborstat.errors import EmptyInputError
from laborstat.models import BinnedCurve, CleanRecord, LogBinning, LogDensity

logger = logging.getLogger(__name__)


def bin_index(c: np.ndarray, binning: LogBinning) -> np.ndarray:
    """0-based bin of each c, -1 outside [c_min, c_max]."""
    edges = binning.edges()
    index = np.searchsorted(edges, c, side="right") - 1
    # the top edge belongs to the last bin
    index = np.where(c == edges[-1], binning.n_bins - 1, index)
    inside = (c >= binning.c_min) & (c <= binning.c_max) & (index >= 0) & (index < binning.n_bins)
    return np.where(inside, index, -1)


def _binned_sums(
    records: Sequence[CleanRecord],
    binning: LogBinning
) -> Tuple[np.ndarray, np.ndarray]:
    c = np.array([record.c for record in records], dtype=float)
    n = np.array([record.n for record in records], dtype=np.int64)
    index = bin_index(c, binning)
    inside = index >= 0
    if not inside.any():
        raise EmptyInputError(
            f"no records inside [{binning.c_min:g}, {binning.c_max:g}]"
        )
    skipped = int((~inside).sum())
    if skipped:
        logger.info(f"{skipped} records fall outside the binning range")
    firms = np.bincount(index[inside], minlength=binning.n_bins)
    workers = np.bincount(index[inside], weights=n[inside], minlength=binning.n_bins)
    return firms, workers


def count_outside(records: Sequence[CleanRecord], binning: LogBinning) -> int:
    if not records:
        return 0
    c = np.array([record.c for record in records], dtype=float)
    return int((bin_index(c, binning) < 0).sum())


def _density(mass: np.ndarray, binning: LogBinning) -> LogDensity:
    edges = binning.edges()
    width = binning.log_width
    return LogDensity(
        bin_lo=edges[:-1].tolist(),
        bin_hi=edges[1:].tolist(),
        density=(mass / mass.sum() / width).tolist(),
        log_width=width,
    )


def firm_pdf(records: Sequence[CleanRecord], binning: LogBinning) -> LogDensity:
    """Density of ln c over firms, each firm weighted 1."""
    if not records:
        raise EmptyInputError("firm_pdf of an empty record list")
    firms, _ = _binned_sums(records, binning)
    return _density(firms.astype(float), binning)


def worker_pdf(records: Sequence[CleanRecord], binning: LogBinning) -> LogDensity:
    """Density of ln c over workers, each firm weighted by its n."""
    if not records:
        raise EmptyInputError("worker_pdf of an empty record list")
    _, workers = _binned_sums(records, binning)
    return _density(workers, binning)


def mean_workers_curve(records: Sequence[CleanRecord], binning: LogBinning) -> BinnedCurve:
    """Per occupied bin: geometric-mean center, mean n, firm count."""
    if not records:
        raise EmptyInputError("mean_workers_curve of an empty record list")
    firms, workers = _binned_sums(records, binning)
    occupied = firms > 0
    centers = binning.centers()[occupied]
    return BinnedCurve(
        c_center=centers.tolist(),
        n_mean=(workers[occupied] / firms[occupied]).tolist(),
        weight=firms[occupied].astype(float).tolist(),
    )
