"""Self-check suites run by ``labor.py verify``.

closed-form  fixed point vs closed form, published peaks, Boltzmann and
             Fermi-Dirac limits, partition-function derivative
balance      conservation, flux balance and stationary shape of long chains
roundtrip    fitting synthetic curves back to their generating parameters
"""

import logging
import math
import time
from typing import Callable, Dict, List, Optional

import numpy as np

from laborstat.equilibrium import (
    TABLE1,
    TABLE1_PEAKS,
    boltzmann_occupancy,
    fermi_dirac_occupancy,
    log_partition,
    mean_occupancy,
    peak_productivity,
    solve_occupancy_fixed_point,
)
from laborstat.errors import DomainError, InvariantError, LaborstatError
from laborstat.fitting import fit, log_centers, synthetic_curve
from laborstat.models import (
    CheckResult,
    Limiter,
    ModelParams,
    ProductivityGrid,
    SimConfig,
    VerifyReport,
)
from laborstat.simulator import (
    flux_balance_report,
    g_linearity_check,
    implied_parameters,
    init_state,
    run,
)

logger = logging.getLogger(__name__)

SUITE_NAMES = ("closed-form", "balance", "roundtrip", "all")

# fixed so that every verify run sweeps the same points
SWEEP_SEED = 20080101


def _timed(name: str, check: Callable[[], CheckResult]) -> CheckResult:
    started = time.perf_counter()
    try:
        result = check()
    except InvariantError:
        raise
    except LaborstatError as e:
        result = CheckResult(name=name, passed=False, detail=f"{type(e).__name__}: {e}")
    result.duration_seconds = time.perf_counter() - started
    level = logging.INFO if result.passed else logging.WARNING
    logger.log(level, f"[{'PASS' if result.passed else 'FAIL'}] {name}: {result.detail}")
    return result


def check_fixed_point_sweep(points: int = 1000, rtol: float = 1e-8) -> CheckResult:
    """Bisection with the linear ramp against the closed form over six decades of c."""
    rng = np.random.default_rng(SWEEP_SEED)
    c = np.exp(rng.uniform(math.log(1e1), math.log(1e7), points))
    mu = rng.uniform(-5e4, 5e4, points)
    x = rng.uniform(-30.0, 30.0, points)
    A = np.exp(rng.uniform(math.log(1e3), math.log(1e9), points))
    gamma = rng.uniform(0.0, 2.0, points)

    worst = 0.0
    for ci, mi, xi, ai, gi in zip(c, mu, x, A, gamma):
        if ci == mi:
            continue
        beta = float(xi / (ci - mi))
        p = ModelParams(beta=beta, mu=float(mi), A=float(ai), gamma=float(gi))
        lim = Limiter.linear_ramp(float(ai), float(gi))
        expected = float(mean_occupancy(float(ci), p))
        solved = solve_occupancy_fixed_point(float(ci), lim, beta, float(mi))
        worst = max(worst, abs(solved - expected) / expected)

    return CheckResult(
        name="fixed-point-sweep",
        passed=worst <= rtol,
        detail=f"{points} points, worst relative error {worst:.3g}",
        value=worst,
        threshold=rtol,
    )


def check_table1_peaks(rtol: float = 0.05) -> CheckResult:
    errors = {}
    for row, params in TABLE1.items():
        c_peak = peak_productivity(params)
        errors[row] = abs(c_peak - TABLE1_PEAKS[row]) / TABLE1_PEAKS[row]
    worst = max(errors.values())
    return CheckResult(
        name="table1-peaks",
        passed=worst <= rtol,
        detail=", ".join(f"{row} {error:.2%}" for row, error in errors.items()),
        value=worst,
        threshold=rtol,
    )


def check_boltzmann_limit(rtol: float = 1e-6) -> CheckResult:
    p = ModelParams(beta=-1e-4, mu=0.0, A=1e9, gamma=0.0)
    c = np.geomspace(1e-2, 1e4, 200)
    law = np.asarray(mean_occupancy(c, p))
    boltz = np.asarray(boltzmann_occupancy(c, p.beta, p.mu))
    worst = float(np.max(np.abs(law - boltz) / boltz))
    return CheckResult(
        name="boltzmann-limit",
        passed=worst <= rtol,
        detail=f"A=1e9, gamma=0: worst relative gap {worst:.3g}",
        value=worst,
        threshold=rtol,
    )


def check_unit_capacity(rtol: float = 1e-12) -> CheckResult:
    p = ModelParams(beta=0.5, mu=4.0, A=1.0, gamma=0.0)
    c = np.linspace(0.5, 10.0, 50)
    law = np.asarray(mean_occupancy(c, p))
    fermi = np.asarray(fermi_dirac_occupancy(c, p.beta, p.mu))
    worst = float(np.max(np.abs(law - fermi) / fermi))
    return CheckResult(
        name="unit-capacity",
        passed=worst <= rtol,
        detail=f"A=1, gamma=0: worst relative gap {worst:.3g}",
        value=worst,
        threshold=rtol,
    )


def check_partition_derivative(points: int = 100, rtol: float = 1e-6) -> CheckResult:
    """(1 / beta) d ln Z / d mu by central difference against mean_occupancy."""
    rng = np.random.default_rng(SWEEP_SEED + 1)
    worst = 0.0
    for _ in range(points):
        c = float(np.exp(rng.uniform(math.log(1e2), math.log(1e5))))
        beta = -float(rng.uniform(1e-4, 1e-3))
        mu = float(rng.choice([-1.0, 1.0]) * rng.uniform(5e3, 5e4))
        A = float(np.exp(rng.uniform(math.log(1e5), math.log(1e9))))
        gamma = float(rng.uniform(0.5, 1.5))
        h = 1e-6 * abs(mu)

        upper = float(log_partition(c, ModelParams(beta=beta, mu=mu + h, A=A, gamma=gamma)))
        lower = float(log_partition(c, ModelParams(beta=beta, mu=mu - h, A=A, gamma=gamma)))
        derivative = (upper - lower) / (2.0 * h) / beta
        expected = float(mean_occupancy(c, ModelParams(beta=beta, mu=mu, A=A, gamma=gamma)))
        worst = max(worst, abs(derivative - expected) / expected)

    return CheckResult(
        name="partition-derivative",
        passed=worst <= rtol,
        detail=f"{points} points, worst relative error {worst:.3g}",
        value=worst,
        threshold=rtol,
    )


def closed_form_suite() -> List[CheckResult]:
    return [
        _timed("fixed-point-sweep", check_fixed_point_sweep),
        _timed("table1-peaks", check_table1_peaks),
        _timed("boltzmann-limit", check_boltzmann_limit),
        _timed("unit-capacity", check_unit_capacity),
        _timed("partition-derivative", check_partition_derivative),
    ]


def reference_config(
    steps: int = 10_000_000,
    seed: int = 42,
    limiter: Optional[Limiter] = None
) -> SimConfig:
    """M = 20, dc = 1, with a tenth of the run as burn-in."""
    return SimConfig(
        seed=seed,
        steps=steps,
        burn_in=steps // 10,
        sample_every=100,
        limiter=limiter or Limiter.unbounded(),
        grid=ProductivityGrid(levels=20, dc=1.0),
    )


def check_reference_run(
    steps: int = 10_000_000,
    seed: int = 42,
    max_outlier_fraction: float = 0.01,
    min_r_squared: float = 0.99
) -> List[CheckResult]:
    """N = 2000 workers with the mean level near 5.75, no limiter."""
    config = reference_config(steps, seed)
    state = init_state(config.grid, config.limiter, workers=2000, total_index=11_500)
    result = run(config, state)

    final = result.final_state
    conserved = final.workers == state.workers and final.total_index == state.total_index
    checks = [CheckResult(
        name="conservation",
        passed=conserved,
        detail=f"N {state.workers} -> {final.workers}, Yidx {state.total_index} -> {final.total_index}",
    )]

    report = flux_balance_report(result.ledger)
    checks.append(CheckResult(
        name="flux-balance",
        passed=bool(report.rows) and report.outlier_fraction <= max_outlier_fraction,
        detail=(
            f"{len(report.rows)} signatures, {report.outlier_fraction:.2%} beyond "
            f"|z| > {report.z_threshold}"
        ),
        value=report.outlier_fraction,
        threshold=max_outlier_fraction,
    ))

    linearity = g_linearity_check(result.averages, config.limiter, config.grid)
    beta, _ = implied_parameters(config.grid, config.limiter, state.workers, state.total_index)
    same_sign = math.copysign(1.0, linearity.slope) == math.copysign(1.0, -beta)
    checks.append(CheckResult(
        name="boltzmann-shape",
        passed=linearity.r_squared > min_r_squared and same_sign,
        detail=(
            f"R^2={linearity.r_squared:.5f}, slope={linearity.slope:.4g}, "
            f"implied beta={beta:.4g}"
        ),
        value=linearity.r_squared,
        threshold=min_r_squared,
    ))
    return checks


def check_ramp_run(
    steps: int = 2_000_000,
    seed: int = 7,
    min_r_squared: float = 0.99
) -> CheckResult:
    """Constant capacity 300 per level with the mean level near 13, so the ramp binds."""
    config = reference_config(steps, seed, Limiter.linear_ramp(300.0, 0.0))
    state = init_state(config.grid, config.limiter, workers=2000, total_index=26_000)
    result = run(config, state)
    linearity = g_linearity_check(result.averages, config.limiter, config.grid)
    return CheckResult(
        name="ramp-linearity",
        passed=linearity.r_squared > min_r_squared,
        detail=(
            f"R^2={linearity.r_squared:.5f} over {len(linearity.levels_used)} levels, "
            f"beta={linearity.beta:.4g}"
        ),
        value=linearity.r_squared,
        threshold=min_r_squared,
    )


def balance_suite(
    steps: int = 10_000_000,
    ramp_steps: int = 2_000_000,
    seed: int = 42,
    max_outlier_fraction: float = 0.01
) -> List[CheckResult]:
    started = time.perf_counter()
    try:
        checks = check_reference_run(steps, seed, max_outlier_fraction)
    except InvariantError:
        raise
    except LaborstatError as e:
        checks = [CheckResult(name="reference-run", passed=False, detail=f"{type(e).__name__}: {e}")]
    elapsed = time.perf_counter() - started
    for check in checks:
        check.duration_seconds = elapsed / len(checks)
        logger.log(
            logging.INFO if check.passed else logging.WARNING,
            f"[{'PASS' if check.passed else 'FAIL'}] {check.name}: {check.detail}"
        )
    checks.append(_timed("ramp-linearity", lambda: check_ramp_run(ramp_steps, seed + 1)))
    return checks


def _relative(estimate: float, truth: float) -> float:
    return abs(estimate - truth) / abs(truth)


def _param_errors(fitted: ModelParams, truth: ModelParams) -> Dict[str, float]:
    return {
        "beta": _relative(fitted.beta, truth.beta),
        "mu": _relative(fitted.mu, truth.mu),
        "gamma": _relative(fitted.gamma, truth.gamma),
        "ln_A": _relative(math.log(fitted.A), math.log(truth.A)),
    }


def check_noiseless_roundtrip(bins: int = 50, rtol: float = 1e-3) -> CheckResult:
    truth = TABLE1["all"]
    curve = synthetic_curve(truth, log_centers(1e2, 1e7, bins))
    errors = _param_errors(fit(curve).params, truth)
    worst = max(errors.values())
    return CheckResult(
        name="noiseless-roundtrip",
        passed=worst <= rtol,
        detail=", ".join(f"{name} {error:.2e}" for name, error in errors.items()),
        value=worst,
        threshold=rtol,
    )


def check_noisy_roundtrip(
    bins: int = 50,
    sigma: float = 0.05,
    seeds: int = 10,
    required: int = 9
) -> CheckResult:
    """Within 5% on beta, mu, gamma and 2% on ln A for most noise seeds."""
    truth = TABLE1["all"]
    centers = log_centers(1e2, 1e7, bins)
    good = 0
    for seed in range(seeds):
        curve = synthetic_curve(truth, centers, sigma=sigma, seed=seed)
        try:
            errors = _param_errors(fit(curve).params, truth)
        except LaborstatError as e:
            logger.warning(f"Noisy fit for seed {seed} failed: {e}")
            continue
        ok = (
            errors["beta"] <= 0.05
            and errors["mu"] <= 0.05
            and errors["gamma"] <= 0.05
            and errors["ln_A"] <= 0.02
        )
        logger.debug(f"Seed {seed}: {errors} -> {'ok' if ok else 'off'}")
        good += ok
    return CheckResult(
        name="noisy-roundtrip",
        passed=good >= required,
        detail=f"{good}/{seeds} seeds within tolerance at sigma={sigma}",
        value=float(good),
        threshold=float(required),
    )


def roundtrip_suite() -> List[CheckResult]:
    return [
        _timed("noiseless-roundtrip", check_noiseless_roundtrip),
        _timed("noisy-roundtrip", check_noisy_roundtrip),
    ]


def run_suite(name: str, steps: int = 10_000_000, seed: int = 42) -> VerifyReport:
    """Run one named suite, or all of them in a fixed order."""
    if name not in SUITE_NAMES:
        raise DomainError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")

    report = VerifyReport(suite=name)
    if name in ("closed-form", "all"):
        report.checks.extend(closed_form_suite())
    if name in ("balance", "all"):
        report.checks.extend(balance_suite(steps=steps, seed=seed))
    if name in ("roundtrip", "all"):
        report.checks.extend(roundtrip_suite())

    logger.info(
        f"Suite {name}: {sum(c.passed for c in report.checks)}/{len(report.checks)} checks passed"
    )
    return report
