import math

import numpy as np
import pytest
from pydantic import ValidationError

from laborstat.equilibrium import (
    TABLE1,
    TABLE1_PEAKS,
    beta_mu_product,
    boltzmann_occupancy,
    capacity,
    fermi_dirac_occupancy,
    limiter_value,
    log_mean_occupancy,
    log_partition,
    mean_occupancy,
    occupancy_curve,
    peak_productivity,
    solve_occupancy_fixed_point,
)
from laborstat.errors import BracketError, DomainError, NoInteriorPeakError, NumericError
from laborstat.models import CapacityLaw, Limiter, ModelParams


def test_capacity_power_law() -> None:
    law = CapacityLaw(A=100.0, gamma=1.0)
    assert capacity(10.0, law) == pytest.approx(10.0)
    assert capacity(np.array([1.0, 100.0]), law) == pytest.approx([100.0, 1.0])


def test_capacity_rejects_nonpositive_c() -> None:
    with pytest.raises(DomainError):
        capacity(0.0, CapacityLaw(A=1.0, gamma=1.0))


def test_linear_ramp_limiter() -> None:
    lim = Limiter.linear_ramp(10.0, 0.0)
    assert limiter_value(3.0, 5, lim) == pytest.approx(0.5)
    assert limiter_value(3.0, 10, lim) == 0.0
    assert limiter_value(3.0, 12, lim) == 0.0
    assert limiter_value(3.0, 0, lim) == 1.0


def test_unbounded_limiter_is_one() -> None:
    assert limiter_value(3.0, 1e12, Limiter.unbounded()) == 1.0


def test_limiter_rejects_negative_occupancy() -> None:
    with pytest.raises(DomainError):
        limiter_value(1.0, -1, Limiter.linear_ramp(10.0, 0.0))


def test_linear_ramp_requires_capacity() -> None:
    with pytest.raises(ValidationError):
        Limiter(kind="linear-ramp")


def test_params_reject_non_finite_and_bad_capacity() -> None:
    with pytest.raises(ValidationError):
        ModelParams(beta=float("nan"), mu=0.0, A=1.0, gamma=1.0)
    with pytest.raises(ValidationError):
        ModelParams(beta=-1e-4, mu=0.0, A=0.0, gamma=1.0)
    with pytest.raises(ValidationError):
        ModelParams(beta=-1e-4, mu=0.0, A=1.0, gamma=-0.5)


def test_unit_capacity_reduces_to_fermi_dirac() -> None:
    p = ModelParams(beta=0.5, mu=4.0, A=1.0, gamma=0.0)
    c = np.linspace(0.5, 10.0, 20)
    np.testing.assert_allclose(
        mean_occupancy(c, p), fermi_dirac_occupancy(c, p.beta, p.mu), rtol=1e-12
    )


def test_mean_occupancy_never_exceeds_capacity_or_boltzmann(all_params: ModelParams) -> None:
    c = np.geomspace(1e1, 1e7, 200)
    n = mean_occupancy(c, all_params)
    assert np.all(n > 0)
    assert np.all(n <= capacity(c, all_params.capacity_law) * (1 + 1e-12))
    assert np.all(n <= np.exp(-all_params.beta * (c - all_params.mu)) * (1 + 1e-12))


def test_log_form_survives_huge_exponents() -> None:
    p = ModelParams(beta=-1.0, mu=0.0, A=50.0, gamma=0.0)
    # exp(beta (c - mu)) underflows, exp(-beta (c - mu)) overflows; n -> g
    assert mean_occupancy(5000.0, p) == pytest.approx(50.0)
    assert log_mean_occupancy(5000.0, p) == pytest.approx(math.log(50.0))


def test_scalar_in_scalar_out(all_params: ModelParams) -> None:
    assert isinstance(mean_occupancy(1e4, all_params), float)
    assert isinstance(mean_occupancy(np.array([1e4, 2e4]), all_params), np.ndarray)


def test_unbounded_limiter_gives_boltzmann(all_params: ModelParams) -> None:
    c = np.geomspace(1e2, 1e4, 10)
    np.testing.assert_allclose(
        mean_occupancy(c, all_params, limiter=Limiter.unbounded()),
        boltzmann_occupancy(c, all_params.beta, all_params.mu),
        rtol=1e-14,
    )


def test_boltzmann_limit_for_large_capacity() -> None:
    p = ModelParams(beta=-1e-4, mu=0.0, A=1e9, gamma=0.0)
    c = np.geomspace(1e-2, 1e4, 200)
    np.testing.assert_allclose(
        mean_occupancy(c, p), boltzmann_occupancy(c, p.beta, p.mu), rtol=1e-6
    )


def test_boltzmann_overflow_raises() -> None:
    with pytest.raises(NumericError):
        boltzmann_occupancy(1000.0, -1.0, 0.0)


@pytest.mark.parametrize("c,beta,mu,A,gamma", [
    (10.0, -1e-4, -2e4, 5.84e7, 1.18),
    (3.14e4, -1.25e-4, -2.32e4, 5.84e7, 1.18),
    (1e6, -1.78e-4, -1.63e4, 8.51e7, 1.17),
    (50.0, 0.2, 40.0, 3.0, 0.0),
    (2.0, 1.5, 1.0, 1.0, 0.5),
])
def test_fixed_point_matches_closed_form(c, beta, mu, A, gamma) -> None:
    p = ModelParams(beta=beta, mu=mu, A=A, gamma=gamma)
    solved = solve_occupancy_fixed_point(c, Limiter.linear_ramp(A, gamma), beta, mu)
    assert solved == pytest.approx(mean_occupancy(c, p), rel=1e-8)


def test_fixed_point_without_limiter_is_boltzmann() -> None:
    solved = solve_occupancy_fixed_point(100.0, Limiter.unbounded(), -1e-3, 0.0)
    assert solved == pytest.approx(math.exp(0.1), rel=1e-10)


def test_fixed_point_rejects_bad_input() -> None:
    with pytest.raises(DomainError):
        solve_occupancy_fixed_point(-1.0, Limiter.unbounded(), 1.0, 0.0)
    with pytest.raises(DomainError):
        solve_occupancy_fixed_point(1.0, Limiter.unbounded(), 1.0, 0.0, tol=0.0)


@pytest.mark.parametrize("row", sorted(TABLE1))
def test_published_peaks(row: str) -> None:
    assert peak_productivity(TABLE1[row]) == pytest.approx(TABLE1_PEAKS[row], rel=0.05)


def test_peak_is_a_local_maximum(all_params: ModelParams) -> None:
    c_p = peak_productivity(all_params)
    at_peak = mean_occupancy(c_p, all_params)
    assert at_peak > mean_occupancy(c_p * 1.01, all_params)
    assert at_peak > mean_occupancy(c_p / 1.01, all_params)


def test_peak_with_explicit_bracket(all_params: ModelParams) -> None:
    assert peak_productivity(all_params, bracket=(1e4, 1e5)) == pytest.approx(
        peak_productivity(all_params), rel=1e-7
    )
    with pytest.raises(BracketError):
        peak_productivity(all_params, bracket=(1e5, 1e6))


def test_no_interior_peak() -> None:
    with pytest.raises(NoInteriorPeakError):
        peak_productivity(ModelParams(beta=1e-4, mu=0.0, A=1e6, gamma=1.0))
    with pytest.raises(NoInteriorPeakError):
        peak_productivity(ModelParams(beta=-1e-4, mu=0.0, A=1e6, gamma=0.0))


def test_partition_derivative_gives_occupancy() -> None:
    rng = np.random.default_rng(3)
    for _ in range(25):
        c = float(np.exp(rng.uniform(math.log(1e2), math.log(1e5))))
        beta = -float(rng.uniform(1e-4, 1e-3))
        mu = float(rng.choice([-1.0, 1.0]) * rng.uniform(5e3, 5e4))
        A = float(np.exp(rng.uniform(math.log(1e5), math.log(1e9))))
        gamma = float(rng.uniform(0.5, 1.5))
        h = 1e-6 * abs(mu)

        upper = log_partition(c, ModelParams(beta=beta, mu=mu + h, A=A, gamma=gamma))
        lower = log_partition(c, ModelParams(beta=beta, mu=mu - h, A=A, gamma=gamma))
        expected = mean_occupancy(c, ModelParams(beta=beta, mu=mu, A=A, gamma=gamma))
        assert (upper - lower) / (2 * h) / beta == pytest.approx(expected, rel=1e-6)


def test_occupancy_curve_columns(all_params: ModelParams) -> None:
    columns = occupancy_curve(all_params, [1e3, 1e4, 1e5])
    assert set(columns) == {"c", "n_mean", "g_of_c", "boltzmann"}
    assert len(columns["n_mean"]) == 3
    # at large c the capacity binds
    assert columns["n_mean"][-1] == pytest.approx(columns["g_of_c"][-1], rel=1e-2)


def test_beta_mu_product(all_params: ModelParams) -> None:
    assert beta_mu_product(all_params) == pytest.approx(-1.25e-4 * -2.32e4)
