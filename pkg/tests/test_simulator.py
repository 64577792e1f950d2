from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from laborstat.errors import DomainError, FeasibilityError, InsufficientDataError, InvariantError
from laborstat.models import Limiter, ProductivityGrid, SimConfig, SystemState
from laborstat.simulator import (
    ExchangeChain,
    FluxLedger,
    Move,
    TimeAverages,
    acceptance_probability,
    destination_pairs,
    flux_balance_report,
    g_linearity_check,
    implied_parameters,
    init_state,
    level_caps,
    merge_results,
    propose_move,
    run,
    run_chains,
    start_limits,
)

REFERENCE_GRID = ProductivityGrid(levels=20, dc=1.0)


def _config(steps, seed=1, limiter=None, grid=REFERENCE_GRID, burn_in=0, sample_every=10, debug=False):
    return SimConfig(
        seed=seed,
        steps=steps,
        burn_in=burn_in,
        sample_every=sample_every,
        limiter=limiter or Limiter.unbounded(),
        grid=grid,
        debug=debug,
    )


def test_destination_pairs() -> None:
    assert destination_pairs(2, 3) == [(1, 1)]
    assert destination_pairs(4, 3) == [(1, 3), (2, 2), (3, 1)]
    assert destination_pairs(5, 3) == [(2, 3), (3, 2)]
    assert destination_pairs(6, 3) == [(3, 3)]


def test_level_caps(small_grid: ProductivityGrid) -> None:
    assert level_caps(small_grid, Limiter.unbounded()) is None
    assert level_caps(small_grid, Limiter.linear_ramp(2.5, 0.0)) == [3] * 5


@pytest.mark.parametrize("amplitude,limit", [(10.0, 9), (2.5, 2), (1.0, 0), (0.5, 0)])
def test_start_limits_stay_below_capacity(small_grid, amplitude, limit) -> None:
    assert start_limits(small_grid, Limiter.linear_ramp(amplitude, 0.0)) == [limit] * 5
    assert start_limits(small_grid, Limiter.unbounded()) is None


def test_init_state_starts_below_integer_capacity(small_grid: ProductivityGrid) -> None:
    lim = Limiter.linear_ramp(10.0, 0.0)
    state = init_state(small_grid, lim, workers=20, total_index=40)
    assert max(state.occupancy) < 10
    assert state.workers == 20
    assert state.total_index == 40
    # nine per level puts the lowest reachable index sum at 33
    with pytest.raises(FeasibilityError):
        init_state(small_grid, lim, workers=20, total_index=30)


def test_init_state_starts_below_fractional_capacity(small_grid: ProductivityGrid) -> None:
    lim = Limiter.linear_ramp(2.5, 0.0)
    with pytest.raises(FeasibilityError):
        init_state(small_grid, lim, workers=6, total_index=9)
    assert max(init_state(small_grid, lim, workers=6, total_index=15).occupancy) == 2


def test_init_state_target_mode(small_grid: ProductivityGrid, unbounded: Limiter) -> None:
    state = init_state(small_grid, unbounded, workers=4, total_index=10)
    assert state.occupancy == [2, 0, 1, 0, 1]
    assert state.workers == 4
    assert state.total_index == 10


def test_init_state_respects_caps(small_grid: ProductivityGrid) -> None:
    lim = Limiter.linear_ramp(2.5, 0.0)
    state = init_state(small_grid, lim, workers=5, total_index=9)
    assert state.occupancy == [2, 2, 1, 0, 0]
    assert state.workers == 5
    assert state.total_index == 9


@pytest.mark.parametrize("workers,total_index", [(4, 3), (4, 21)])
def test_init_state_unreachable_totals(small_grid, unbounded, workers, total_index) -> None:
    with pytest.raises(FeasibilityError):
        init_state(small_grid, unbounded, workers=workers, total_index=total_index)


def test_init_state_capacity_too_small() -> None:
    grid = ProductivityGrid(levels=3, dc=1.0)
    with pytest.raises(FeasibilityError):
        init_state(grid, Limiter.linear_ramp(1.0, 0.0), workers=4, total_index=8)


def test_init_state_explicit(small_grid: ProductivityGrid, unbounded: Limiter) -> None:
    state = init_state(small_grid, unbounded, occupancy=[1, 0, 2, 0, 0])
    assert state.workers == 3
    assert state.total_index == 7
    with pytest.raises(FeasibilityError):
        init_state(small_grid, unbounded, occupancy=[1, 2])
    with pytest.raises(FeasibilityError):
        init_state(small_grid, unbounded, occupancy=[1, -1, 0, 0, 0])
    with pytest.raises(FeasibilityError):
        init_state(small_grid, Limiter.linear_ramp(2.0, 0.0), occupancy=[3, 0, 0, 0, 0])
    with pytest.raises(FeasibilityError):
        init_state(small_grid, Limiter.linear_ramp(2.0, 0.0), occupancy=[2, 0, 0, 0, 0])
    assert init_state(small_grid, Limiter.linear_ramp(2.5, 0.0), occupancy=[2, 0, 0, 0, 0]).workers == 2


def test_system_state_checks_cached_totals() -> None:
    with pytest.raises(ValidationError):
        SystemState(occupancy=[1, 1], workers=3, total_index=3)


def test_sim_config_rejects_burn_in_past_steps(small_grid: ProductivityGrid) -> None:
    with pytest.raises(ValidationError):
        _config(10, grid=small_grid, burn_in=20)


def test_propose_move_is_legal(small_grid: ProductivityGrid) -> None:
    state = SystemState.from_occupancy([0, 5, 0, 0, 0])
    rng = np.random.default_rng(0)
    for _ in range(50):
        move = propose_move(state, small_grid, rng)
        assert (move.i, move.j) == (2, 2)
        assert move.k + move.l == 4
        assert 1 <= move.k <= 5 and 1 <= move.l <= 5


def test_propose_move_needs_two_workers(small_grid: ProductivityGrid) -> None:
    with pytest.raises(DomainError):
        propose_move(SystemState.from_occupancy([1, 0, 0, 0, 0]), small_grid, np.random.default_rng(0))


def test_destinations_are_uniform(small_grid: ProductivityGrid, unbounded: Limiter) -> None:
    state = SystemState.from_occupancy([0, 0, 10, 0, 0])
    chain = ExchangeChain(state, small_grid, unbounded, np.random.default_rng(11))
    counts = Counter()
    for _ in range(200_000):
        u1, u2, u3, _ = chain.draw()
        _, _, _, _, k, _ = chain.propose(u1, u2, u3)
        counts[k] += 1
    assert sorted(counts) == [1, 2, 3, 4, 5]
    observed = [counts[k] for k in range(1, 6)]
    assert stats.chisquare(observed).pvalue > 1e-3


def test_workers_are_picked_uniformly(unbounded: Limiter) -> None:
    grid = ProductivityGrid(levels=2, dc=1.0)
    chain = ExchangeChain(SystemState.from_occupancy([30, 70]), grid, unbounded, np.random.default_rng(5))
    firsts = Counter()
    for _ in range(100_000):
        u1, u2, u3, _ = chain.draw()
        _, _, i, _, _, _ = chain.propose(u1, u2, u3)
        firsts[i] += 1
    assert firsts[1] / 100_000 == pytest.approx(0.3, abs=0.01)


def test_acceptance_probability() -> None:
    grid = ProductivityGrid(levels=3, dc=1.0)
    lim = Limiter.linear_ramp(3.0, 0.0)
    state = SystemState.from_occupancy([1, 1, 1])
    # both land on level 2: (3 - 1) / 3 then (3 - 2) / 3
    assert acceptance_probability(state, Move(1, 3, 2, 2), lim, grid) == pytest.approx(2 / 9)
    # the movers free their own places first
    assert acceptance_probability(state, Move(1, 2, 2, 1), lim, grid) == pytest.approx(1.0)
    assert acceptance_probability(state, Move(1, 3, 2, 2), Limiter.unbounded(), grid) == 1.0


def test_acceptance_zero_at_capacity() -> None:
    grid = ProductivityGrid(levels=3, dc=1.0)
    lim = Limiter.linear_ramp(2.0, 0.0)
    state = SystemState.from_occupancy([1, 2, 1])
    assert acceptance_probability(state, Move(1, 3, 2, 2), lim, grid) == 0.0


def test_zero_steps_returns_initial_state(small_grid, unbounded) -> None:
    state = init_state(small_grid, unbounded, workers=4, total_index=10)
    result = run(_config(0, grid=small_grid), state)
    assert result.final_state == state
    assert result.averages.samples == 0
    assert len(result.ledger) == 0
    assert result.acceptance_rate == 0.0


def test_run_is_deterministic() -> None:
    state = init_state(REFERENCE_GRID, Limiter.unbounded(), workers=200, total_index=1150)
    first = run(_config(20_000, seed=9), state)
    second = run(_config(20_000, seed=9), state)
    other = run(_config(20_000, seed=10), state)
    assert first.final_state == second.final_state
    assert first.ledger.counts == second.ledger.counts
    np.testing.assert_array_equal(first.averages.sums, second.averages.sums)
    assert other.ledger.counts != first.ledger.counts


def test_run_conserves_totals_with_ramp() -> None:
    lim = Limiter.linear_ramp(40.0, 0.0)
    state = init_state(REFERENCE_GRID, lim, workers=300, total_index=3000)
    result = run(_config(50_000, seed=3, limiter=lim, debug=True), state)
    assert result.final_state.workers == 300
    assert result.final_state.total_index == 3000
    assert max(result.final_state.occupancy) <= 40
    assert 0 < result.accepted < result.proposals


def test_frozen_hook_rejects_everything() -> None:
    state = init_state(REFERENCE_GRID, Limiter.unbounded(), workers=100, total_index=600)
    result = run(_config(5_000), state, acceptance_hook=lambda move, p: 0.0)
    assert result.accepted == 0
    assert result.final_state == state
    assert len(result.ledger) == 0


BLOCKED_SIGNATURE = (1, 3, 2, 2)


def _block_reverse(move: Move, p: float) -> float:
    return 0.0 if FluxLedger.canonical(move) == (BLOCKED_SIGNATURE, 1) else p


def test_blocked_reverse_moves_break_flux_balance() -> None:
    state = init_state(REFERENCE_GRID, Limiter.unbounded(), workers=100, total_index=600)
    short = run(_config(20_000), state, acceptance_hook=_block_reverse)
    long = run(_config(200_000), state, acceptance_hook=_block_reverse)

    assert long.ledger.reverse(BLOCKED_SIGNATURE) == 0
    assert long.ledger.forward(BLOCKED_SIGNATURE) > short.ledger.forward(BLOCKED_SIGNATURE) > 0

    short_report = flux_balance_report(short.ledger, min_count=10)
    long_report = flux_balance_report(long.ledger, min_count=10)
    short_z = max(abs(row.z_score) for row in short_report.rows)
    long_z = max(abs(row.z_score) for row in long_report.rows)
    assert long_z > short_z
    assert long_report.outlier_fraction > 0


def test_run_ledger_counts_only_flux_carrying_moves() -> None:
    state = init_state(REFERENCE_GRID, Limiter.unbounded(), workers=100, total_index=600)
    result = run(_config(20_000), state)
    assert 0 < result.ledger.total() <= result.accepted


def test_run_rejects_infeasible_start(small_grid: ProductivityGrid) -> None:
    lim = Limiter.linear_ramp(1.0, 0.0)
    with pytest.raises(FeasibilityError):
        run(_config(10, grid=small_grid, limiter=lim), SystemState.from_occupancy([3, 0, 0, 0, 0]))


def test_check_invariants_detects_drift(small_grid, unbounded) -> None:
    chain = ExchangeChain(SystemState.from_occupancy([2, 2, 0, 0, 0]), small_grid, unbounded,
                          np.random.default_rng(0))
    chain.check_invariants()
    chain.counts[1] += 1
    with pytest.raises(InvariantError):
        chain.check_invariants()


def test_flux_ledger_canonical_keys() -> None:
    ledger = FluxLedger()
    ledger.record(Move(3, 1, 2, 2))
    ledger.record(Move(2, 2, 1, 3))
    ledger.record(Move(2, 2, 3, 1))
    ledger.record(Move(1, 3, 3, 1))
    assert ledger.forward((1, 3, 2, 2)) == 1
    assert ledger.reverse((1, 3, 2, 2)) == 2
    assert len(ledger) == 1
    assert ledger.total() == 3


def test_flux_balance_report_z_scores() -> None:
    ledger = FluxLedger(counts={(1, 3, 2, 2): [200, 100], (1, 4, 2, 3): [50, 40], (1, 2, 1, 2): [0, 0]})
    report = flux_balance_report(ledger)
    assert len(report.rows) == 1
    assert report.rows[0].z_score == pytest.approx(100 / 300 ** 0.5)
    assert report.outlier_fraction == 1.0


def test_time_averages() -> None:
    averages = TimeAverages.empty(3)
    with pytest.raises(InsufficientDataError):
        averages.mean
    merged = TimeAverages(samples=2, sums=np.array([2.0, 4.0]), sums_sq=np.array([2.0, 10.0])).merge(
        TimeAverages.from_means([3.0, 1.0])
    )
    assert merged.samples == 3
    np.testing.assert_allclose(merged.mean, [5 / 3, 5 / 3])
    with pytest.raises(ValidationError):
        TimeAverages(samples=-1, sums=np.zeros(2), sums_sq=np.zeros(2))


def test_run_chains_merge() -> None:
    state = init_state(REFERENCE_GRID, Limiter.unbounded(), workers=100, total_index=600)
    results = run_chains(_config(2_000), state, seeds=[1, 2, 3])
    averages, ledger = merge_results(results)
    assert averages.samples == sum(r.averages.samples for r in results) == 600
    assert ledger.total() == sum(r.ledger.total() for r in results)
    assert results[0].config.seed == 1 and results[2].config.seed == 3


def test_implied_parameters_sign() -> None:
    beta_low, _ = implied_parameters(REFERENCE_GRID, Limiter.unbounded(), 2000, 11_500)
    beta_high, _ = implied_parameters(REFERENCE_GRID, Limiter.unbounded(), 2000, 30_000)
    assert beta_low > 0
    assert beta_high < 0


def test_boltzmann_shape_and_flux_balance() -> None:
    """Unbounded chain: ln n linear in c with the slope implied by the totals."""
    state = init_state(REFERENCE_GRID, Limiter.unbounded(), workers=2000, total_index=11_500)
    result = run(_config(500_000, seed=42, burn_in=50_000, sample_every=50), state)

    assert result.final_state.workers == 2000
    assert result.final_state.total_index == 11_500

    linearity = g_linearity_check(result.averages, Limiter.unbounded(), REFERENCE_GRID)
    beta, _ = implied_parameters(REFERENCE_GRID, Limiter.unbounded(), 2000, 11_500)
    assert linearity.r_squared > 0.99
    assert linearity.slope < 0
    assert linearity.beta == pytest.approx(beta, rel=0.1)

    report = flux_balance_report(result.ledger)
    assert report.rows
    assert report.outlier_fraction <= 0.02


def test_ramp_linearity_short_run() -> None:
    lim = Limiter.linear_ramp(300.0, 0.0)
    state = init_state(REFERENCE_GRID, lim, workers=2000, total_index=26_000)
    result = run(_config(500_000, seed=7, limiter=lim, burn_in=50_000, sample_every=50), state)
    linearity = g_linearity_check(result.averages, lim, REFERENCE_GRID)
    assert linearity.r_squared > 0.95
    # mean level above the middle of the grid means negative temperature
    assert linearity.beta < 0


def test_linearity_needs_three_levels() -> None:
    averages = TimeAverages.from_means([5.0, 0.0, 0.0, 0.0, 0.0])
    with pytest.raises(InsufficientDataError):
        g_linearity_check(averages, Limiter.unbounded(), ProductivityGrid(levels=5, dc=1.0))


@pytest.mark.slow
def test_reference_run_conserves_exactly() -> None:
    state = init_state(REFERENCE_GRID, Limiter.unbounded(), workers=2000, total_index=11_500)
    result = run(_config(10_000_000, seed=42, burn_in=1_000_000, sample_every=100), state)
    assert result.final_state.workers == 2000
    assert result.final_state.total_index == 11_500
    assert flux_balance_report(result.ledger).outlier_fraction <= 0.01
    assert g_linearity_check(result.averages, Limiter.unbounded(), REFERENCE_GRID).r_squared > 0.99


@pytest.mark.slow
def test_ramp_linearity_long_run() -> None:
    lim = Limiter.linear_ramp(300.0, 0.0)
    state = init_state(REFERENCE_GRID, lim, workers=2000, total_index=26_000)
    result = run(_config(5_000_000, seed=7, limiter=lim, burn_in=500_000, sample_every=100), state)
    assert g_linearity_check(result.averages, lim, REFERENCE_GRID).r_squared > 0.99
