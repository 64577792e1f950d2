"""Chi-square estimation of (beta, mu, A, gamma) from a binned occupancy curve."""

import logging
import math
from typing import Dict, List, Optional, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field
from scipy import optimize

from laborstat.equilibrium import mean_occupancy, peak_productivity
from laborstat.errors import DomainError, IllPosedError, InsufficientDataError, LaborstatError, SolverError
from laborstat.models import BinnedCurve, FitResult, FitStart, LogBinning, ModelParams

logger = logging.getLogger(__name__)

PENALTY = 1e30
RESIDUAL_SPACES = ("log", "linear")
MIN_BINS = 8
MIN_DECADES = 2.0


class FitStarts(BaseModel):
    """Multi-start grid: every (beta, gamma) pair, with (A, mu) from the data.

    ln A comes from the tail, where occupancy follows g(c); mu from the
    lowest bin, where it follows exp(-beta * (c - mu)).
    """

    betas: List[float] = Field(default_factory=lambda: [-1e-3, -1e-4, -1e-5], min_length=1)
    gammas: List[float] = Field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0], min_length=1)
    tail_bins: int = Field(default=3, ge=1)

    def points(self, c: np.ndarray, log_n: np.ndarray) -> List[np.ndarray]:
        if any(beta == 0 for beta in self.betas):
            raise DomainError("start betas must be non-zero")
        tail = slice(-min(self.tail_bins, len(c)), None)
        points = []
        for beta in self.betas:
            for gamma in self.gammas:
                log_a = float(np.mean(log_n[tail] + gamma * np.log(c[tail])))
                mu = float(c[0] + log_n[0] / beta)
                points.append(np.array([beta, mu, log_a, gamma]))
        return points


def _log_model(c: np.ndarray, theta: np.ndarray) -> np.ndarray:
    beta, mu, log_a, gamma = theta
    log_g = log_a - gamma * np.log(c)
    return log_g - np.logaddexp(0.0, log_g + beta * (c - mu))


def _residuals(
    theta: np.ndarray,
    c: np.ndarray,
    n: np.ndarray,
    log_n: np.ndarray,
    residuals: str
) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        log_model = _log_model(c, theta)
        if residuals == "log":
            return log_n - log_model
        return n - np.exp(log_model)


def _objective(
    theta: np.ndarray,
    c: np.ndarray,
    n: np.ndarray,
    log_n: np.ndarray,
    weight: np.ndarray,
    residuals: str
) -> float:
    if not np.all(np.isfinite(theta)) or theta[3] < 0:
        return PENALTY
    r = _residuals(theta, c, n, log_n, residuals)
    value = float(np.sum(weight * r * r))
    if not math.isfinite(value):
        return PENALTY
    return value


def _check_residuals(residuals: str) -> None:
    if residuals not in RESIDUAL_SPACES:
        raise DomainError(f"residuals must be one of {RESIDUAL_SPACES}, got {residuals!r}")


def chi_square(p: ModelParams, data: BinnedCurve, residuals: str = "log") -> float:
    """sum_b weight_b * (ln n_b - ln model(c_b))**2; large finite penalty if the model breaks."""
    _check_residuals(residuals)
    if len(data) == 0:
        raise InsufficientDataError("chi-square of an empty curve")
    c, n, weight = data.arrays()
    theta = np.array([p.beta, p.mu, math.log(p.A), p.gamma])
    value = _objective(theta, c, n, np.log(n), weight, residuals)
    if value >= PENALTY:
        logger.warning(f"Model non-finite for {p.model_dump()}; returning penalty")
    return value


def _theta_to_params(theta: np.ndarray) -> ModelParams:
    beta, mu, log_a, gamma = (float(v) for v in theta)
    if log_a > 709.0:
        raise SolverError(f"fitted ln A={log_a:.3g} overflows")
    return ModelParams(beta=beta, mu=mu, A=math.exp(log_a), gamma=gamma)


def fit(
    data: BinnedCurve,
    starts: Optional[FitStarts] = None,
    tol: float = 1e-8,
    max_evals: int = 10_000,
    polish: bool = True,
    residuals: str = "log"
) -> FitResult:
    """Multi-start Nelder-Mead over (beta, mu, ln A, gamma).

    Each start runs in coordinates scaled by its own starting magnitudes.
    The lowest chi-square wins, ties going to the earlier start; the winner
    is optionally polished with Levenberg-Marquardt on the residual vector.
    """
    _check_residuals(residuals)
    if len(data) < MIN_BINS:
        raise IllPosedError(f"need at least {MIN_BINS} bins, got {len(data)}")
    c, n, weight = data.arrays()
    if math.log10(c[-1] / c[0]) < MIN_DECADES:
        raise IllPosedError(
            f"bins span {math.log10(c[-1] / c[0]):.2f} decades, need {MIN_DECADES}"
        )

    starts = starts or FitStarts()
    log_n = np.log(n)
    c_scale = float(np.exp(np.mean(np.log(c))))

    def objective(theta: np.ndarray) -> float:
        return _objective(theta, c, n, log_n, weight, residuals)

    trace: List[FitStart] = []
    best_theta: Optional[np.ndarray] = None
    best_chi2 = math.inf
    best_index = 0
    best_converged = False
    total_evals = 0

    for index, theta0 in enumerate(starts.points(c, log_n)):
        scale = np.array([abs(theta0[0]), max(abs(theta0[1]), c_scale), 1.0, 1.0])
        z0 = theta0 / scale
        result = optimize.minimize(
            lambda z: objective(z * scale),
            z0,
            method="Nelder-Mead",
            options={
                "xatol": tol * (1.0 + float(np.linalg.norm(z0))),
                "fatol": 1e-10,
                "maxfev": max_evals,
                "maxiter": max_evals,
                "adaptive": True,
            },
        )
        theta = result.x * scale
        chi2 = objective(theta)
        total_evals += int(result.nfev)
        trace.append(FitStart(
            index=index,
            beta=float(theta0[0]),
            mu=float(theta0[1]),
            log_a=float(theta0[2]),
            gamma=float(theta0[3]),
            chi2=chi2,
            n_evals=int(result.nfev),
            converged=bool(result.success),
        ))
        logger.debug(
            f"Start {index}: chi2={chi2:.6g} after {result.nfev} evaluations "
            f"(converged={result.success})"
        )
        if chi2 < best_chi2:
            best_theta, best_chi2 = theta, chi2
            best_index, best_converged = index, bool(result.success)

    if best_theta is None or best_chi2 >= PENALTY:
        raise SolverError("every start stayed in the penalty region")

    polished = False
    polish_converged: Optional[bool] = None
    if polish:
        scale = np.array([abs(best_theta[0]) or 1.0, max(abs(best_theta[1]), c_scale), 1.0, 1.0])
        root_w = np.sqrt(weight)

        def residual_vector(z: np.ndarray) -> np.ndarray:
            r = root_w * _residuals(z * scale, c, n, log_n, residuals)
            return np.nan_to_num(r, nan=1e15, posinf=1e15, neginf=-1e15)

        try:
            ls = optimize.least_squares(
                residual_vector,
                best_theta / scale,
                method="lm",
                xtol=1e-14,
                ftol=1e-14,
                gtol=1e-14,
                max_nfev=max_evals,
            )
            total_evals += int(ls.nfev)
            polish_converged = bool(ls.success)
            candidate = ls.x * scale
            candidate_chi2 = objective(candidate)
            if candidate_chi2 < best_chi2:
                best_theta, best_chi2 = candidate, candidate_chi2
                polished = True
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.warning(f"Least-squares polish failed: {e}")

    params = _theta_to_params(best_theta)
    chi2 = chi_square(params, data, residuals)

    if not best_converged:
        logger.warning(
            f"No start converged within {max_evals} evaluations; best chi2={chi2:.6g}"
        )

    try:
        peak = peak_productivity(params)
    except LaborstatError as e:
        logger.info(f"Fitted curve has no interior peak: {e}")
        peak = None

    logger.info(
        f"Fit: beta={params.beta:.6g}, mu={params.mu:.6g}, A={params.A:.6g}, "
        f"gamma={params.gamma:.6g}, chi2={chi2:.6g} (start {best_index}, polished={polished})"
    )
    return FitResult(
        params=params,
        chi2=chi2,
        n_evals=total_evals,
        converged=best_converged,
        start_index=best_index,
        polished=polished,
        polish_converged=polish_converged,
        peak=peak,
        residuals=residuals,
        starts=trace,
    )


def log_centers(c_min: float, c_max: float, count: int) -> np.ndarray:
    if not 0 < c_min < c_max or count < 1:
        raise DomainError(f"invalid bin spec ({c_min}, {c_max}, {count})")
    return np.geomspace(c_min, c_max, count)


def synthetic_curve(
    p: ModelParams,
    bins: Union[LogBinning, ArrayLike],
    sigma: float = 0.0,
    seed: Optional[int] = None
) -> BinnedCurve:
    """Model occupancy at bin centers times exp(sigma * z), z standard normal."""
    if sigma < 0:
        raise DomainError(f"sigma must be non-negative, got {sigma}")
    centers = bins.centers() if isinstance(bins, LogBinning) else np.asarray(bins, dtype=float)
    centers = np.atleast_1d(centers)
    n = np.atleast_1d(np.asarray(mean_occupancy(centers, p), dtype=float))
    if sigma > 0:
        rng = np.random.default_rng(seed)
        n = n * np.exp(sigma * rng.standard_normal(len(centers)))
    return BinnedCurve(
        c_center=centers.tolist(),
        n_mean=n.tolist(),
        weight=[1.0] * len(centers),
    )


def fitted_curve(params: ModelParams, data: BinnedCurve) -> Dict[str, np.ndarray]:
    """The model sampled at the input bin centers, next to the data."""
    c, n, weight = data.arrays()
    return {
        "c_center": c,
        "n_mean": n,
        "n_model": np.atleast_1d(np.asarray(mean_occupancy(c, params), dtype=float)),
        "weight": weight,
    }
