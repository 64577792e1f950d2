import pytest

from laborstat.errors import DomainError
from laborstat.verify import (
    check_boltzmann_limit,
    check_fixed_point_sweep,
    check_noiseless_roundtrip,
    check_partition_derivative,
    check_ramp_run,
    check_reference_run,
    check_table1_peaks,
    check_unit_capacity,
    run_suite,
)


def test_closed_form_checks_pass() -> None:
    for check in (
        check_fixed_point_sweep(points=200),
        check_table1_peaks(),
        check_boltzmann_limit(),
        check_unit_capacity(),
        check_partition_derivative(points=30),
    ):
        assert check.passed, check.detail
        assert check.value <= check.threshold


def test_short_reference_run() -> None:
    checks = check_reference_run(steps=500_000, max_outlier_fraction=0.02)
    assert [c.name for c in checks] == ["conservation", "flux-balance", "boltzmann-shape"]
    assert all(c.passed for c in checks), [c.detail for c in checks]


def test_short_ramp_run() -> None:
    check = check_ramp_run(steps=500_000, min_r_squared=0.95)
    assert check.passed, check.detail


def test_noiseless_roundtrip_check() -> None:
    assert check_noiseless_roundtrip().passed


def test_unknown_suite() -> None:
    with pytest.raises(DomainError):
        run_suite("bogus")


def test_closed_form_suite_report() -> None:
    report = run_suite("closed-form")
    assert report.passed, report.failed
    assert len(report.checks) == 5
    assert all(c.duration_seconds >= 0 for c in report.checks)


@pytest.mark.slow
def test_full_verification() -> None:
    report = run_suite("all")
    assert report.passed, report.failed
