"""Ehrenfest-Brillouin exchange chain over a discrete productivity grid.

Two distinct workers leave levels i and j and land on levels k and l with
i + j = k + l, so both the worker count and the output index sum are
conserved exactly. Destinations are drawn uniformly from the ordered pairs
with the same sum; the move is accepted with probability L(c_k, n_k) *
L(c_l, n_l), evaluated after the movers have left their sources.

Random numbers come from numpy's PCG64 (``np.random.default_rng(seed)``),
consumed four per proposal in fixed-size blocks, so a (seed, config, state)
triple always yields the same trajectory.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize, stats

from laborstat.equilibrium import capacity, limiter_value
from laborstat.errors import (
    DomainError,
    FeasibilityError,
    InsufficientDataError,
    InvariantError,
    SolverError,
)
from laborstat.models import (
    FluxBalanceReport,
    FluxBalanceRow,
    Limiter,
    LinearityFit,
    ProductivityGrid,
    SimConfig,
    SystemState,
)

logger = logging.getLogger(__name__)

DRAW_BLOCK = 1 << 15

Signature = Tuple[int, int, int, int]


class Move(NamedTuple):
    i: int
    j: int
    k: int
    l: int

    @property
    def source(self) -> Tuple[int, int]:
        return (self.i, self.j) if self.i <= self.j else (self.j, self.i)

    @property
    def destination(self) -> Tuple[int, int]:
        return (self.k, self.l) if self.k <= self.l else (self.l, self.k)

    @property
    def is_identity(self) -> bool:
        return self.source == self.destination


AcceptanceHook = Callable[[Move, float], float]


class TimeAverages(BaseModel):
    """Running sums of sampled occupancy vectors."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: int = Field(default=0, ge=0)
    sums: np.ndarray
    sums_sq: np.ndarray

    @classmethod
    def empty(cls, levels: int) -> "TimeAverages":
        return cls(sums=np.zeros(levels), sums_sq=np.zeros(levels))

    @classmethod
    def from_means(cls, means: Sequence[float]) -> "TimeAverages":
        arr = np.asarray(means, dtype=float)
        return cls(samples=1, sums=arr.copy(), sums_sq=arr ** 2)

    @property
    def levels(self) -> int:
        return len(self.sums)

    @property
    def mean(self) -> np.ndarray:
        if self.samples == 0:
            raise InsufficientDataError("no occupancy samples were taken")
        return self.sums / self.samples

    @property
    def variance(self) -> np.ndarray:
        mean = self.mean
        return np.maximum(self.sums_sq / self.samples - mean ** 2, 0.0)

    def merge(self, other: "TimeAverages") -> "TimeAverages":
        if other.levels != self.levels:
            raise DomainError("cannot merge averages over different grids")
        return TimeAverages(
            samples=self.samples + other.samples,
            sums=self.sums + other.sums,
            sums_sq=self.sums_sq + other.sums_sq,
        )


class FluxLedger(BaseModel):
    """Forward/reverse counts of executed moves per unordered signature.

    A move (i, j) -> (k, l) is stored under its sorted pairs; the direction
    whose source pair sorts first is "forward". Moves whose source and
    destination pairs coincide carry no flux and are not recorded.
    """

    counts: Dict[Signature, List[int]] = Field(default_factory=dict)

    @staticmethod
    def canonical(move: Move) -> Optional[Tuple[Signature, int]]:
        if move.is_identity:
            return None
        src, dst = move.source, move.destination
        if src < dst:
            return src + dst, 0
        return dst + src, 1

    def record(self, move: Move) -> None:
        key = self.canonical(move)
        if key is None:
            return
        signature, slot = key
        entry = self.counts.get(signature)
        if entry is None:
            entry = self.counts[signature] = [0, 0]
        entry[slot] += 1

    def forward(self, signature: Signature) -> int:
        return self.counts.get(signature, [0, 0])[0]

    def reverse(self, signature: Signature) -> int:
        return self.counts.get(signature, [0, 0])[1]

    def merge(self, other: "FluxLedger") -> "FluxLedger":
        merged = {key: list(value) for key, value in self.counts.items()}
        for key, (fwd, rev) in other.counts.items():
            entry = merged.setdefault(key, [0, 0])
            entry[0] += fwd
            entry[1] += rev
        return FluxLedger(counts=merged)

    def total(self) -> int:
        return sum(f + r for f, r in self.counts.values())

    def __len__(self) -> int:
        return len(self.counts)


class SimulationResult(BaseModel):
    config: SimConfig
    final_state: SystemState
    averages: TimeAverages
    ledger: FluxLedger
    proposals: int = Field(..., ge=0)
    accepted: int = Field(..., ge=0)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0


def level_caps(grid: ProductivityGrid, limiter: Limiter) -> Optional[List[int]]:
    """Largest reachable occupancy per level, ceil(g(c_i)); None if unbounded.

    A worker is placed only while n < g, so a running chain never exceeds
    ceil(g).
    """
    if limiter.is_unbounded:
        return None
    g = np.atleast_1d(capacity(grid.c_values(), limiter.capacity))
    return [math.ceil(value) for value in g]


def start_limits(grid: ProductivityGrid, limiter: Limiter) -> Optional[List[int]]:
    """Largest integer strictly below g(c_i) per level; None if unbounded."""
    caps = level_caps(grid, limiter)
    if caps is None:
        return None
    return [cap - 1 for cap in caps]


def destination_pairs(s: int, levels: int) -> List[Tuple[int, int]]:
    """All ordered (k, l) with k + l = s and 1 <= k, l <= levels."""
    lo, hi = max(1, s - levels), min(levels, s - 1)
    return [(k, s - k) for k in range(lo, hi + 1)]


def _pick_destination(s: int, levels: int, u: float) -> Tuple[int, int]:
    lo = s - levels if s - levels > 1 else 1
    hi = levels if levels < s - 1 else s - 1
    width = hi - lo + 1
    offset = int(u * width)
    if offset >= width:
        offset = width - 1
    k = lo + offset
    return k, s - k


def _pick_two(n_workers: int, u1: float, u2: float) -> Tuple[int, int]:
    a = int(u1 * n_workers)
    if a >= n_workers:
        a = n_workers - 1
    b = int(u2 * (n_workers - 1))
    if b >= n_workers - 1:
        b = n_workers - 2
    if b >= a:
        b += 1
    return a, b


def init_state(
    grid: ProductivityGrid,
    limiter: Limiter,
    occupancy: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
    total_index: Optional[int] = None
) -> SystemState:
    """Explicit occupancy, or a deterministic state hitting (N, Yidx).

    Every level starts strictly below its capacity. Target mode fills levels
    from the bottom, spilling past full levels to the next one up, then
    moves single workers one level up (the highest movable worker first)
    until the index sum matches.
    """
    bounds = start_limits(grid, limiter)
    levels = grid.levels

    if occupancy is not None:
        occupancy = [int(n) for n in occupancy]
        if len(occupancy) != levels:
            raise FeasibilityError(f"occupancy has {len(occupancy)} levels, grid has {levels}")
        if any(n < 0 for n in occupancy):
            raise FeasibilityError("occupancy must be non-negative")
        if bounds is not None:
            over = [i for i, (n, cap) in enumerate(zip(occupancy, bounds), 1) if n > cap]
            if over:
                raise FeasibilityError(f"levels {over} are at or above capacity")
        return SystemState.from_occupancy(occupancy)

    if workers is None or total_index is None:
        raise DomainError("give either an occupancy or both workers and total_index")
    if workers < 1 or not workers <= total_index <= workers * levels:
        raise FeasibilityError(
            f"(N={workers}, Yidx={total_index}) unreachable on {levels} levels"
        )

    limits = bounds if bounds is not None else [workers] * levels
    if sum(limits) < workers:
        raise FeasibilityError(f"total capacity {sum(limits)} is below N={workers}")

    counts = [0] * (levels + 1)
    remaining = workers
    for level in range(1, levels + 1):
        placed = min(remaining, limits[level - 1])
        counts[level] = placed
        remaining -= placed
        if remaining == 0:
            break

    current = sum(i * n for i, n in enumerate(counts))
    if current > total_index:
        raise FeasibilityError(
            f"Yidx={total_index} is below the smallest feasible index sum {current}"
        )

    while current < total_index:
        for level in range(levels - 1, 0, -1):
            if counts[level] > 0 and counts[level + 1] < limits[level]:
                counts[level] -= 1
                counts[level + 1] += 1
                current += 1
                break
        else:
            raise FeasibilityError(
                f"Yidx={total_index} exceeds the largest feasible index sum {current}"
            )

    logger.debug(f"Initial occupancy {counts[1:]}")
    return SystemState.from_occupancy(counts[1:])


class ExchangeChain:
    """Mutable chain: per-level counts plus a worker -> level table."""

    def __init__(
        self,
        state: SystemState,
        grid: ProductivityGrid,
        limiter: Limiter,
        rng: np.random.Generator
    ):
        if state.levels != grid.levels:
            raise DomainError(f"state has {state.levels} levels, grid has {grid.levels}")
        self.levels = grid.levels
        self.workers = state.workers
        self.total_index = state.total_index
        self.counts = [0] + list(state.occupancy)
        self.members = [
            level for level, n in enumerate(state.occupancy, 1) for _ in range(n)
        ]
        self.caps = level_caps(grid, limiter)
        if limiter.is_unbounded:
            self._g: Optional[List[float]] = None
        else:
            self._g = [math.inf] + list(np.atleast_1d(capacity(grid.c_values(), limiter.capacity)))
        self._rng = rng
        self._block: List[List[float]] = []
        self._cursor = 0

    def draw(self) -> List[float]:
        if self._cursor >= len(self._block):
            self._block = self._rng.random((DRAW_BLOCK, 4)).tolist()
            self._cursor = 0
        row = self._block[self._cursor]
        self._cursor += 1
        return row

    def propose(self, u1: float, u2: float, u3: float) -> Tuple[int, int, int, int, int, int]:
        a, b = _pick_two(self.workers, u1, u2)
        i = self.members[a]
        j = self.members[b]
        k, l = _pick_destination(i + j, self.levels, u3)
        return a, b, i, j, k, l

    def acceptance(self, i: int, j: int, k: int, l: int) -> float:
        g = self._g
        if g is None:
            return 1.0
        counts = self.counts
        nk = counts[k] - (k == i) - (k == j)
        first = (g[k] - nk) / g[k]
        if first <= 0.0:
            return 0.0
        if k != l:
            nl = counts[l] - (l == i) - (l == j)
            second = (g[l] - nl) / g[l]
        else:
            second = (g[k] - nk - 1) / g[k]
        if second <= 0.0:
            return 0.0
        return first * second

    def apply(self, a: int, b: int, i: int, j: int, k: int, l: int) -> None:
        self.members[a] = k
        self.members[b] = l
        counts = self.counts
        counts[i] -= 1
        counts[j] -= 1
        counts[k] += 1
        counts[l] += 1

    def check_invariants(self) -> None:
        counts = self.counts
        if any(n < 0 for n in counts):
            raise InvariantError(f"negative occupancy: {counts[1:]}")
        if sum(counts) != self.workers:
            raise InvariantError(f"worker count drifted: {sum(counts)} != {self.workers}")
        index_sum = sum(i * n for i, n in enumerate(counts))
        if index_sum != self.total_index:
            raise InvariantError(f"index sum drifted: {index_sum} != {self.total_index}")
        if self.caps is not None:
            over = [i for i in range(1, self.levels + 1) if counts[i] > self.caps[i - 1]]
            if over:
                raise InvariantError(f"capacity breached at levels {over}")

    def state(self) -> SystemState:
        return SystemState.from_occupancy(self.counts[1:])


def propose_move(
    state: SystemState,
    grid: ProductivityGrid,
    rng: np.random.Generator
) -> Move:
    """Pick two distinct workers uniformly and a destination pair with the same index sum."""
    if state.workers < 2:
        raise DomainError(f"need at least two workers to propose a move, have {state.workers}")
    u1, u2, u3 = rng.random(3)
    a, b = _pick_two(state.workers, u1, u2)
    cumulative = np.cumsum(state.occupancy)
    i = int(np.searchsorted(cumulative, a, side="right")) + 1
    j = int(np.searchsorted(cumulative, b, side="right")) + 1
    k, l = _pick_destination(i + j, grid.levels, u3)
    return Move(i, j, k, l)


def acceptance_probability(
    state: SystemState,
    move: Move,
    lim: Limiter,
    grid: ProductivityGrid
) -> float:
    """L(c_k, n_k') * L(c_l, n_l'), with n' the occupancy after the movers left.

    When both movers land on the same level they are placed one after the
    other, giving L(c_k, n_k') * L(c_k, n_k' + 1).
    """
    i, j, k, l = move
    occ = state.occupancy
    nk = occ[k - 1] - (k == i) - (k == j)
    if nk < 0:
        raise DomainError(f"move {move} is not legal for occupancy {occ}")
    first = limiter_value(grid.c(k), nk, lim)
    if k != l:
        nl = occ[l - 1] - (l == i) - (l == j)
        second = limiter_value(grid.c(l), nl, lim)
    else:
        second = limiter_value(grid.c(k), nk + 1, lim)
    return float(first * second)


def run(
    config: SimConfig,
    state: SystemState,
    acceptance_hook: Optional[AcceptanceHook] = None
) -> SimulationResult:
    """Execute config.steps proposals from state.

    acceptance_hook, if given, receives each move with its acceptance
    probability and returns the probability actually used.
    """
    rng = np.random.default_rng(config.seed)
    chain = ExchangeChain(state, config.grid, config.limiter, rng)
    try:
        chain.check_invariants()
    except InvariantError as e:
        raise FeasibilityError(f"initial state is infeasible: {e}") from e

    steps = config.steps
    if steps > 0 and state.workers < 2:
        raise FeasibilityError("a chain needs at least two workers")

    levels = config.grid.levels
    counts = chain.counts
    sums = [0] * (levels + 1)
    sums_sq = [0] * (levels + 1)
    samples = 0
    accepted = 0
    burn_in = config.burn_in
    next_sample = burn_in + config.sample_every
    ledger = FluxLedger()
    debug = config.debug
    log_every = max(steps // 10, 1)

    logger.info(
        f"Running {steps} proposals on {levels} levels "
        f"(N={chain.workers}, Yidx={chain.total_index}, limiter={config.limiter.kind.value})"
    )

    for t in range(1, steps + 1):
        u1, u2, u3, u4 = chain.draw()
        a, b, i, j, k, l = chain.propose(u1, u2, u3)
        p = chain.acceptance(i, j, k, l)
        if acceptance_hook is not None:
            p = acceptance_hook(Move(i, j, k, l), p)

        if p > 0.0 and u4 < p:
            chain.apply(a, b, i, j, k, l)
            accepted += 1
            if t > burn_in:
                ledger.record(Move(i, j, k, l))
            if debug:
                chain.check_invariants()

        if t == next_sample:
            for level in range(1, levels + 1):
                n = counts[level]
                sums[level] += n
                sums_sq[level] += n * n
            samples += 1
            next_sample += config.sample_every

        if steps >= 1_000_000 and t % log_every == 0:
            logger.info(f"Progress: {t}/{steps} proposals, {accepted} accepted")

    chain.check_invariants()

    averages = TimeAverages(
        samples=samples,
        sums=np.asarray(sums[1:], dtype=float),
        sums_sq=np.asarray(sums_sq[1:], dtype=float),
    )
    result = SimulationResult(
        config=config,
        final_state=chain.state(),
        averages=averages,
        ledger=ledger,
        proposals=steps,
        accepted=accepted,
    )
    logger.info(
        f"Chain finished: {accepted}/{steps} accepted "
        f"({result.acceptance_rate:.3f}), {samples} samples, {len(ledger)} flux signatures"
    )
    return result


def _run_seed(args: Tuple[SimConfig, SystemState]) -> SimulationResult:
    config, state = args
    return run(config, state)


def run_chains(
    config: SimConfig,
    state: SystemState,
    seeds: Sequence[int],
    max_workers: int = 1
) -> List[SimulationResult]:
    """Independent chains from one initial state, one per seed, in seed order."""
    jobs = [(config.model_copy(update={"seed": seed}), state) for seed in seeds]
    if max_workers <= 1:
        return [_run_seed(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_seed, jobs))


def merge_results(results: Sequence[SimulationResult]) -> Tuple[TimeAverages, FluxLedger]:
    if not results:
        raise InsufficientDataError("no chains to merge")
    averages = results[0].averages
    ledger = results[0].ledger
    for result in results[1:]:
        averages = averages.merge(result.averages)
        ledger = ledger.merge(result.ledger)
    return averages, ledger


def flux_balance_report(
    ledger: FluxLedger,
    min_count: int = 100,
    z_threshold: float = 3.0
) -> FluxBalanceReport:
    """z = (f - r) / sqrt(f + r) for every signature with f + r >= min_count."""
    rows = []
    for signature in sorted(ledger.counts):
        forward, reverse = ledger.counts[signature]
        total = forward + reverse
        if total < min_count:
            continue
        rows.append(FluxBalanceRow(
            signature=list(signature),
            forward=forward,
            reverse=reverse,
            z_score=(forward - reverse) / math.sqrt(total),
        ))

    outliers = sum(1 for row in rows if abs(row.z_score) > z_threshold)
    fraction = outliers / len(rows) if rows else 0.0
    if rows:
        logger.info(
            f"Flux balance: {len(rows)} signatures with >= {min_count} moves, "
            f"{outliers} beyond |z| > {z_threshold}"
        )
    return FluxBalanceReport(
        rows=rows,
        min_count=min_count,
        z_threshold=z_threshold,
        outlier_fraction=fraction,
    )


def g_linearity_check(
    averages: TimeAverages,
    lim: Limiter,
    grid: ProductivityGrid
) -> LinearityFit:
    """Regress ln(n / L(c, n)) on c over levels where both are positive.

    The slope estimates -beta and the intercept beta * mu.
    """
    means = averages.mean
    c = grid.c_values()
    ramp = np.atleast_1d(limiter_value(c, means, lim))
    usable = (means > 0) & (ramp > 0)
    if usable.sum() < 3:
        raise InsufficientDataError(
            f"only {int(usable.sum())} levels with positive occupancy and limiter"
        )

    x = c[usable]
    y = np.log(means[usable] / ramp[usable])
    fit = stats.linregress(x, y)
    return LinearityFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        r_squared=float(fit.rvalue ** 2),
        slope_stderr=float(fit.stderr),
        intercept_stderr=float(fit.intercept_stderr),
        levels_used=[int(i) + 1 for i in np.nonzero(usable)[0]],
    )


def _expanding_brentq(func: Callable[[float], float], lo: float, hi: float) -> float:
    f_lo, f_hi = func(lo), func(hi)
    for _ in range(200):
        if f_lo * f_hi <= 0:
            return optimize.brentq(func, lo, hi, xtol=1e-14, rtol=1e-12)
        width = hi - lo
        lo, hi = lo - width, hi + width
        f_lo, f_hi = func(lo), func(hi)
    raise SolverError("could not bracket a root")


def implied_parameters(
    grid: ProductivityGrid,
    limiter: Limiter,
    workers: int,
    total_index: int
) -> Tuple[float, float]:
    """(beta, beta * mu) for which the equilibrium law reproduces N and Yidx.

    Occupancies are n_i = g_i / (g_i * exp(beta * c_i - beta * mu) + 1), or
    exp(beta * mu - beta * c_i) without a limiter.
    """
    c = grid.c_values()
    index = np.arange(1, grid.levels + 1, dtype=float)
    target_mean = total_index / workers
    if not 1.0 < target_mean < grid.levels:
        raise SolverError(f"mean level {target_mean} leaves no interior solution")

    if limiter.is_unbounded:
        def occupancy(beta: float, a: float) -> np.ndarray:
            return np.exp(a - beta * c)
    else:
        log_g = np.log(np.atleast_1d(capacity(c, limiter.capacity)))
        if np.exp(log_g).sum() <= workers:
            raise SolverError("capacity cannot hold N workers on this grid")

        def occupancy(beta: float, a: float) -> np.ndarray:
            return np.exp(log_g - np.logaddexp(0.0, log_g + beta * c - a))

    def intercept_for(beta: float) -> float:
        if limiter.is_unbounded:
            weights = -beta * c
            return math.log(workers) - float(np.logaddexp.reduce(weights))
        return _expanding_brentq(
            lambda a: float(occupancy(beta, a).sum()) - workers, -1.0, 1.0
        )

    def mean_level_gap(beta_dc: float) -> float:
        beta = beta_dc / grid.dc
        n = occupancy(beta, intercept_for(beta))
        return float((index * n).sum() / n.sum()) - target_mean

    bound = 60.0
    if mean_level_gap(-bound) * mean_level_gap(bound) > 0:
        raise SolverError("mean level is not reachable for |beta * dc| <= 60")
    beta_dc = optimize.brentq(mean_level_gap, -bound, bound, xtol=1e-13, rtol=1e-12)
    beta = beta_dc / grid.dc
    return beta, intercept_for(beta)
