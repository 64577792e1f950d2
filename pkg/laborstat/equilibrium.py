"""Closed-form equilibrium law for workers across productivity levels.

Occupancy follows n = L(c, n) * exp(-beta * (c - mu)). With the linear-ramp
limiter L = max(0, 1 - n / g(c)) and g(c) = A * c**(-gamma) the solution is a
generalized Fermi-Dirac law, n = g / (g * exp(beta * (c - mu)) + 1), which
tends to the Boltzmann form exp(-beta * (c - mu)) as g grows without bound.

Everything here is a pure function of its arguments. Scalars in give floats
out; numpy arrays in give arrays out.
"""

import logging
import math
from typing import Dict, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import optimize, special

from laborstat.errors import (
    BracketError,
    DomainError,
    NoInteriorPeakError,
    NumericError,
    SolverError,
)
from laborstat.models import CapacityLaw, Limiter, ModelParams

logger = logging.getLogger(__name__)

ArrayOrFloat = Union[float, np.ndarray]

# largest argument of exp() that stays finite in double precision
MAX_EXP_ARG = 709.78

TABLE1: Dict[str, ModelParams] = {
    "all": ModelParams(beta=-1.25e-4, mu=-2.32e4, A=5.84e7, gamma=1.18),
    "manufacturing": ModelParams(beta=-1.78e-4, mu=-1.63e4, A=8.51e7, gamma=1.17),
    "non_manufacturing": ModelParams(beta=-0.86e-4, mu=-3.47e4, A=1.52e7, gamma=1.08),
}

TABLE1_PEAKS: Dict[str, float] = {
    "all": 3.14e4,
    "manufacturing": 2.70e4,
    "non_manufacturing": 3.74e4,
}


def _positive(c: ArrayLike, name: str = "c") -> np.ndarray:
    arr = np.asarray(c, dtype=float)
    if not np.all(arr > 0):
        raise DomainError(f"{name} must be positive, got {c!r}")
    return arr


def _unwrap(values: np.ndarray) -> ArrayOrFloat:
    if np.ndim(values) == 0:
        return float(values)
    return values


def _require_finite(values: np.ndarray, what: str, **context) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite {what}; inputs: {context}")
    return values


def capacity(c: ArrayLike, law: CapacityLaw) -> ArrayOrFloat:
    """g(c) = A * c**(-gamma); a positive real, never rounded."""
    arr = _positive(c)
    return _unwrap(law.A * arr ** (-law.gamma))


def log_capacity(c: ArrayLike, law: CapacityLaw) -> ArrayOrFloat:
    arr = _positive(c)
    return _unwrap(math.log(law.A) - law.gamma * np.log(arr))


def limiter_value(c: ArrayLike, n: ArrayLike, lim: Limiter) -> ArrayOrFloat:
    """L(c, n) in [0, 1]; zero at and beyond capacity for the linear ramp."""
    c_arr = _positive(c)
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise DomainError(f"occupancy must be non-negative, got {n!r}")
    if lim.is_unbounded:
        return _unwrap(np.ones(np.broadcast(c_arr, n_arr).shape))
    g = lim.capacity.A * c_arr ** (-lim.capacity.gamma)
    return _unwrap(np.maximum(0.0, (g - n_arr) / g))


def log_mean_occupancy(c: ArrayLike, p: ModelParams) -> ArrayOrFloat:
    """ln of the generalized Fermi-Dirac occupancy, overflow-safe."""
    arr = _positive(c)
    log_g = np.asarray(log_capacity(arr, p.capacity_law))
    exponent = p.beta * (arr - p.mu)
    log_n = log_g - np.logaddexp(0.0, log_g + exponent)
    _require_finite(log_n, "log occupancy", c=c, params=p.model_dump())
    return _unwrap(log_n)


def mean_occupancy(
    c: ArrayLike,
    p: ModelParams,
    limiter: Optional[Limiter] = None
) -> ArrayOrFloat:
    """g / (g * exp(beta * (c - mu)) + 1).

    With an unbounded limiter this is the Boltzmann law exactly. A linear-ramp
    limiter passed here supplies the capacity law in place of (A, gamma).
    """
    if limiter is not None:
        if limiter.is_unbounded:
            return boltzmann_occupancy(c, p.beta, p.mu)
        p = ModelParams(beta=p.beta, mu=p.mu, A=limiter.capacity.A, gamma=limiter.capacity.gamma)
    log_n = np.asarray(log_mean_occupancy(c, p))
    return _unwrap(np.exp(log_n))


def log_boltzmann_occupancy(c: ArrayLike, beta: float, mu: float) -> ArrayOrFloat:
    arr = _positive(c)
    return _unwrap(-beta * (arr - mu))


def boltzmann_occupancy(c: ArrayLike, beta: float, mu: float) -> ArrayOrFloat:
    """exp(-beta * (c - mu)); the g -> infinity limit."""
    exponent = np.asarray(log_boltzmann_occupancy(c, beta, mu))
    if np.any(exponent > MAX_EXP_ARG):
        raise NumericError(
            f"Boltzmann occupancy overflows: exponent up to {float(np.max(exponent)):.6g}"
        )
    return _unwrap(np.exp(exponent))


def fermi_dirac_occupancy(c: ArrayLike, beta: float, mu: float) -> ArrayOrFloat:
    """Standard Fermi-Dirac occupancy, the g = 1 case."""
    arr = _positive(c)
    return _unwrap(special.expit(-beta * (arr - mu)))


def solve_occupancy_fixed_point(
    c: float,
    lim: Limiter,
    beta: float,
    mu: float,
    tol: float = 1e-12
) -> float:
    """Solve n = L(c, n) * exp(-beta * (c - mu)) for n >= 0 by bisection.

    The limiter must be non-increasing in n. The bracket is
    [0, max(g(c), exp(-beta * (c - mu)))].
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if not c > 0:
        raise DomainError(f"c must be positive, got {c!r}")

    log_boltz = -beta * (c - mu)
    if log_boltz > MAX_EXP_ARG:
        raise NumericError(f"exp(-beta (c - mu)) overflows at c={c}")
    boltz = math.exp(log_boltz)
    if boltz == 0.0:
        return 0.0

    if lim.is_unbounded:
        g = math.inf
        upper = boltz
    else:
        g = lim.capacity.A * c ** (-lim.capacity.gamma)
        upper = max(g, boltz)

    def residual(n: float) -> float:
        ramp = 1.0 if g == math.inf else max(0.0, (g - n) / g)
        return n - ramp * boltz

    f_lo = residual(0.0)
    f_hi = residual(upper)
    if f_hi == 0.0:
        return upper
    if f_lo == 0.0:
        return 0.0
    if f_lo * f_hi > 0:
        raise SolverError(
            f"no sign change on [0, {upper:.6g}] (f={f_lo:.3g}, {f_hi:.3g}); "
            "is the limiter non-increasing in n?"
        )

    scale = min(g, boltz)
    root = optimize.bisect(
        residual,
        0.0,
        upper,
        xtol=max(0.5 * tol * scale, 1e-300),
        rtol=max(tol, 4 * np.finfo(float).eps),
        maxiter=10_000,
    )

    if abs(residual(root)) > max(tol, 1e-9) * (root + boltz):
        raise SolverError(f"bisection residual too large at c={c}: {residual(root):.3g}")
    return float(root)


def log_partition(c: ArrayLike, p: ModelParams) -> ArrayOrFloat:
    """ln Z = g * ln(1 + exp(-beta * (c - mu)) / g)."""
    arr = _positive(c)
    log_g = np.asarray(log_capacity(arr, p.capacity_law))
    g = np.exp(log_g)
    exponent = -p.beta * (arr - p.mu)
    log_z = g * np.logaddexp(0.0, exponent - log_g)
    _require_finite(log_z, "log partition function", c=c, params=p.model_dump())
    return _unwrap(log_z)


def _peak_condition(c: float, p: ModelParams) -> float:
    # ln(|beta| g e^{beta (c - mu)}) - ln(gamma / c); positive while occupancy rises
    return (
        math.log(-p.beta)
        + math.log(p.A)
        - p.gamma * math.log(c)
        + p.beta * (c - p.mu)
        - math.log(p.gamma)
        + math.log(c)
    )


def peak_productivity(
    p: ModelParams,
    bracket: Optional[Tuple[float, float]] = None,
    rtol: float = 1e-8
) -> float:
    """Productivity at which mean_occupancy peaks.

    Solves g(c) * exp(beta * (c - mu)) = -gamma / (beta * c). Without a
    bracket the first rising-to-falling sign change on a log grid over
    [1e-3, 1e12] is used.
    """
    if p.beta >= 0 or p.gamma == 0:
        raise NoInteriorPeakError(
            f"occupancy is monotone for beta={p.beta}, gamma={p.gamma}; no interior peak"
        )

    def condition(c: float) -> float:
        return _peak_condition(c, p)

    if bracket is None:
        grid = np.logspace(-3, 12, 1501)
        values = np.array([condition(c) for c in grid])
        crossings = np.nonzero((values[:-1] > 0) & (values[1:] <= 0))[0]
        if crossings.size == 0:
            raise BracketError("no rising-to-falling crossing on [1e-3, 1e12]")
        lo, hi = float(grid[crossings[0]]), float(grid[crossings[0] + 1])
    else:
        lo, hi = bracket
        if not 0 < lo < hi:
            raise DomainError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
        if not (condition(lo) > 0 >= condition(hi)):
            raise BracketError(f"bracket {bracket} does not contain the peak")

    c_peak = optimize.brentq(condition, lo, hi, xtol=1e-12 * lo, rtol=rtol)
    logger.debug(f"Peak productivity {c_peak:.6g} for {p.model_dump()}")
    return float(c_peak)


def beta_mu_product(p: ModelParams) -> float:
    """beta * mu, the combination a fit constrains most sharply."""
    return p.beta_mu


def occupancy_curve(p: ModelParams, c_values: ArrayLike) -> Dict[str, np.ndarray]:
    """Columns for plotting the law: c, n_mean, g_of_c, boltzmann (ln-safe)."""
    c_arr = _positive(np.atleast_1d(np.asarray(c_values, dtype=float)))
    log_boltz = -p.beta * (c_arr - p.mu)
    boltz = np.where(log_boltz > MAX_EXP_ARG, np.inf, np.exp(np.minimum(log_boltz, MAX_EXP_ARG)))
    return {
        "c": c_arr,
        "n_mean": np.asarray(mean_occupancy(c_arr, p)),
        "g_of_c": np.asarray(capacity(c_arr, p.capacity_law)),
        "boltzmann": boltz,
    }
