from __future__ import annotations

import functools
import itertools
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np
from scipy import stats

from brar_pps import backends
from brar_pps.backends.exact import SubsetTable
from brar_pps.bounds import ks_confidence_radius
from brar_pps.errors import DesignError, StateSpaceTooLarge
from brar_pps.methods import Method
from brar_pps.state import Increment, TrialState
from brar_pps.streams import derive_seed
from brar_pps.trial import (
    CONTINUE,
    AnalysisOutcome,
    Statistics,
    TrialSummary,
    evaluate_tests,
    normalized,
    response_rates,
    restricted,
    simulate_trial,
    statistic_method,
    tuned_probs,
)


if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator

    from brar_pps.design import TrialDesign
    from brar_pps.methods import PpsMethod
    from brar_pps.special import LogBetaCache

logger = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 50_000_000
TIE_TOLERANCE = 1e-12
MASS_TOLERANCE = 1e-12
BISECTION_TOLERANCE = 1e-6

# (counts, dropped bitmask, running maximum of the superiority statistic)
LiveKey = tuple[tuple[int, ...], int, float]


class OCMode(StrEnum):
    EXACT = "exact"
    SIMULATED = "simulated"


@dataclass(frozen=True)
class TerminalState:
    counts: tuple[int, ...]  # (s_0, f_0, s_1, f_1, ...)
    dropped: int
    outcome: AnalysisOutcome
    stop_patient: int
    running_max: float = -math.inf

    @property
    def allocations(self) -> tuple[int, ...]:
        return tuple(s + f for s, f in zip(self.counts[0::2], self.counts[1::2], strict=True))


@dataclass
class StateDistribution:
    layer: int
    live: dict[LiveKey, float]
    terminal: dict[TerminalState, float]

    def total_mass(self) -> float:
        return math.fsum(self.live.values()) + math.fsum(self.terminal.values())


@dataclass(frozen=True)
class OCReport:
    mode: OCMode
    true_p: tuple[float, ...]
    threshold: float
    superior_arm: int
    rejection_rate: float
    type_i_error: float | None
    power: float | None
    power_inferior: float | None
    epasa: float
    vpasa: float
    replications: int | None = None
    confidence_radius: float | None = None
    shrunk_radius: float | None = None
    epasa_se: float | None = None
    vpasa_se: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Calibration:
    threshold: float
    type_i_error: float
    p: float | None = None
    profile: tuple[tuple[float, float], ...] = ()


def _arms(mask: int, k: int) -> tuple[int, ...]:
    return tuple(j for j in range(k) if mask >> j & 1)


def _mask(arms: Iterable[int]) -> int:
    return functools.reduce(lambda acc, j: acc | 1 << j, arms, 0)


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)


class _TableChain:
    """Exact subset tables for states above a common base, each derived from a stored predecessor."""

    def __init__(self, base: TrialState, cache: LogBetaCache | None) -> None:
        self._base = base.params
        self._tables = {base.params: SubsetTable.for_state(base, cache)}

    def table(self, state: TrialState) -> SubsetTable:
        key = state.params
        chain = []
        while key not in self._tables:
            index = max(i for i, (v, b) in enumerate(zip(key, self._base, strict=True)) if v > b)
            chain.append(index)
            key = (*key[:index], key[index] - 1, *key[index + 1 :])
        table = self._tables[key]
        for index in reversed(chain):
            table = table.copy().apply(Increment(index // 2, index % 2))
            self._tables[table.state.params] = table
        return table


class _StatisticSource:
    """Memoised superiority and inferiority statistics of one method over many states."""

    def __init__(self, method: PpsMethod, priors: TrialState, cache: LogBetaCache | None) -> None:
        self.method = method
        self._cache = cache
        self._superiority: dict[tuple[int, ...], np.ndarray] = {}
        self._inferiority: dict[tuple[int, ...], np.ndarray] = {}
        exact = method.tag is Method.EXACT
        self._tables = _TableChain(priors, cache) if exact else None
        self._swapped = _TableChain(priors.swapped(), cache) if exact else None

    def superiority(self, state: TrialState) -> np.ndarray:
        key = state.params
        if key not in self._superiority:
            if self._tables is not None:
                self._superiority[key] = self._tables.table(state).singletons()
            else:
                self._superiority[key] = backends.superiority(state, self.method, cache=self._cache)
        return self._superiority[key]

    def inferiority(self, state: TrialState) -> np.ndarray:
        key = state.params
        if key not in self._inferiority:
            if self._swapped is not None:
                self._inferiority[key] = self._swapped.table(state.swapped()).singletons()
            else:
                self._inferiority[key] = backends.inferiority(state, self.method, cache=self._cache)
        return self._inferiority[key]


def estimate_state_count(design: TrialDesign) -> int:
    """Upper bound on the number of count vectors stored over all layers."""
    cells = 2 * design.k
    total = (design.burn_in + 1) ** design.k
    for patients in design.block_ends():
        total += math.comb(patients + cells - 1, cells - 1)
    return total


def _check_exact_design(design: TrialDesign, state_cap: int) -> None:
    for role, method in (("randomisation", design.rand_method), ("test", design.test_method)):
        if method.tag is Method.SAMPLING:
            msg = f"Exact operating characteristics need a deterministic {role} method, got {method}; use simulation"
            raise DesignError(msg)
    allowed = {design.adaptive_start, *design.block_ends()}
    if stray := sorted(set(design.schedule) - allowed):
        msg = f"Exact operating characteristics need analyses at block ends, got {stray}"
        raise DesignError(msg)
    estimate = estimate_state_count(design)
    if estimate > state_cap:
        logger.info("Refusing forward equations for %s: about %d states", design.describe(), estimate)
        msg = (
            f"Forward equations would visit about {estimate:.3g} states, above the cap of {state_cap:.3g}; "
            "use simulation or a smaller design"
        )
        raise StateSpaceTooLarge(msg, estimate=estimate, cap=state_cap)


class ForwardEquations:
    """Layer-by-layer propagation of probability mass over trial states."""

    def __init__(
        self,
        design: TrialDesign,
        true_p,
        *,
        state_cap: int = DEFAULT_STATE_CAP,
        running_max: bool = False,
    ) -> None:
        _check_exact_design(design, state_cap)
        self.design = design
        self.p = response_rates(true_p, design.k)
        self.state_cap = state_cap
        self.running_max = running_max
        # Tracking the running maximum replaces stopping for superiority.
        self._rules = replace(design, superiority_threshold=1.0, inferiority_threshold=None) if running_max else design
        cache = design.log_beta_cache()
        rand_method = statistic_method(design.rand_method)
        test_method = statistic_method(design.test_method)
        self._rand = _StatisticSource(rand_method, design.prior_state, cache)
        self._test = (
            self._rand if test_method == rand_method else _StatisticSource(test_method, design.prior_state, cache)
        )
        self._allocations: dict[tuple[tuple[int, ...], int], np.ndarray] = {}
        self._move_tables: dict[tuple[tuple[int, ...], int], tuple] = {}
        self._stored = 0

    def _state(self, counts: tuple[int, ...]) -> TrialState:
        return TrialState.from_counts(self.design.prior_state, counts[0::2], counts[1::2])

    def _guard(self, layer_size: int) -> None:
        self._stored += layer_size
        if self._stored > self.state_cap:
            msg = f"Forward equations stored more than {self.state_cap:.3g} states"
            raise StateSpaceTooLarge(msg, estimate=self._stored, cap=self.state_cap)

    def run(self) -> StateDistribution:
        design = self.design
        live: dict[LiveKey, float] = {((0,) * (2 * design.k), 0, -math.inf): 1.0}
        terminal: dict[TerminalState, float] = defaultdict(float)
        schedule = set(design.schedule)

        position = design.adaptive_start
        if position > 0:
            live = self._burn_in(live)
        if position in schedule:
            live = self._analyse(live, terminal, position)
        while position < design.n and live:
            length = min(design.block_size, design.n - position)
            live = self._advance(live, length)
            position += length
            if position in schedule:
                live = self._analyse(live, terminal, position)
            logger.debug("Layer %d: %d live states, %d terminal", position, len(live), len(terminal))

        for (counts, dropped, running), mass in live.items():
            terminal[TerminalState(counts, dropped, CONTINUE, position, running)] += mass
        return StateDistribution(position, {}, dict(terminal))

    def _burn_in(self, live: dict[LiveKey, float]) -> dict[LiveKey, float]:
        burn_in = self.design.burn_in
        outcomes = np.arange(burn_in + 1)
        pmfs = [stats.binom.pmf(outcomes, burn_in, p) for p in self.p]
        ((start, dropped, running), mass), *_ = live.items()
        out: dict[LiveKey, float] = {}
        for successes in itertools.product(range(burn_in + 1), repeat=self.design.k):
            weight = mass * math.prod(float(pmfs[j][s]) for j, s in enumerate(successes))
            if weight > 0:
                counts = tuple(c + d for c, d in zip(start, _interleave(successes, burn_in), strict=True))
                out[counts, dropped, running] = weight
        self._guard(len(out))
        return out

    def _allocation(self, counts: tuple[int, ...], dropped: int) -> np.ndarray:
        key = (counts, dropped)
        if key not in self._allocations:
            state = self._state(counts)
            probs = normalized(self._rand.superiority(state))
            if self.design.tuning is not None:
                allocated = np.add(counts[0::2], counts[1::2])
                probs = tuned_probs(probs, state, allocated, self.design.tuning)
            self._allocations[key] = restricted(probs, _arms(dropped, self.design.k))
        return self._allocations[key]

    def _moves(self, active: tuple[int, ...], length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Every (allocation, responses) outcome of a block over the active arms.

        Returns the allocation per composition, the composition of each outcome, the count
        increments of each outcome and its binomial weight.
        """
        compositions = list(_compositions(length, len(active)))
        pmf = {
            (j, m): stats.binom.pmf(np.arange(m + 1), m, self.p[j]) for j in active for m in range(length + 1)
        }
        rows, deltas, weights = [], [], []
        for row, composition in enumerate(compositions):
            for successes in itertools.product(*(range(m + 1) for m in composition)):
                weight = math.prod(float(pmf[j, m][s]) for j, m, s in zip(active, composition, successes, strict=True))
                if weight == 0:
                    continue
                delta = [0] * (2 * self.design.k)
                for j, m, s in zip(active, composition, successes, strict=True):
                    delta[2 * j] = s
                    delta[2 * j + 1] = m - s
                rows.append(row)
                deltas.append(delta)
                weights.append(weight)
        return (
            np.array(compositions, dtype=np.int64),
            np.array(rows, dtype=np.int64),
            np.array(deltas, dtype=np.int64).reshape(-1, 2 * self.design.k),
            np.array(weights),
        )

    def _advance(self, live: dict[LiveKey, float], length: int) -> dict[LiveKey, float]:
        out: dict[LiveKey, float] = defaultdict(float)
        for (counts, dropped, running), mass in live.items():
            probs = self._allocation(counts, dropped)
            active = tuple(int(j) for j in np.flatnonzero(probs > 0))
            if (active, length) not in self._move_tables:
                self._move_tables[active, length] = self._moves(active, length)
            compositions, rows, deltas, weights = self._move_tables[active, length]
            allocation = stats.multinomial.pmf(compositions, length, probs[list(active)])
            masses = mass * allocation[rows] * weights
            targets = np.asarray(counts) + deltas
            for target, value in zip(targets.tolist(), masses.tolist(), strict=True):
                if value > 0:
                    out[tuple(target), dropped, running] += value
        self._guard(len(out))
        return out

    def _analyse(
        self,
        live: dict[LiveKey, float],
        terminal: dict[TerminalState, float],
        position: int,
    ) -> dict[LiveKey, float]:
        design = self._rules
        final = position == design.n
        wants_inferiority = final and design.inferiority_threshold is not None
        out: dict[LiveKey, float] = defaultdict(float)
        for (counts, dropped, running), mass in live.items():
            state = self._state(counts)
            dropped_arms = _arms(dropped, design.k)
            sup = self._test.superiority(state)
            inf = self._test.inferiority(state) if wants_inferiority else None
            if self.running_max:
                active = [j for j in range(design.k) if j not in dropped_arms]
                if active:
                    running = max(running, max(float(sup[j]) for j in active))
            statistics = Statistics(tuple(map(float, sup)), None if inf is None else tuple(map(float, inf)))
            outcome = evaluate_tests(state, design, final=final, dropped=dropped_arms, statistics=statistics)
            dropped |= _mask(outcome.dropped)
            if outcome.stops:
                terminal[TerminalState(counts, dropped, outcome, position, running)] += mass
            else:
                out[counts, dropped, running] += mass
        return out


def _interleave(successes: Iterable[int], trials: int) -> tuple[int, ...]:
    return tuple(v for s in successes for v in (s, trials - s))


def forward_distribution(
    design: TrialDesign,
    true_p,
    threshold: float | None = None,
    *,
    state_cap: int = DEFAULT_STATE_CAP,
) -> StateDistribution:
    if threshold is not None:
        design = design.with_threshold(threshold)
    return ForwardEquations(design, true_p, state_cap=state_cap).run()


def _unique_extreme(p: np.ndarray, *, highest: bool) -> int | None:
    target = p.max() if highest else p.min()
    winners = np.flatnonzero(p == target)
    return int(winners[0]) if winners.size == 1 else None


def _functionals(
    design: TrialDesign,
    p: np.ndarray,
    superior_arm: int | None,
    records: Iterable[tuple[float, AnalysisOutcome, tuple[int, ...], int]],
) -> dict:
    """Weighted OC functionals; records are (weight, outcome, allocations, stop patient)."""
    best = _unique_extreme(p, highest=True)
    worst = _unique_extreme(p, highest=False)
    focus = superior_arm if superior_arm is not None else int(np.argmax(p))
    inferiority = design.inferiority_threshold is not None

    rejected = powered = powered_inferior = 0.0
    credited, weights = [], []
    for weight, outcome, allocations, stop in records:
        weights.append(weight)
        if outcome.rejects:
            rejected += weight
        if best is not None and outcome.claims_best(best):
            powered += weight
        if worst is not None and outcome.claims_worst(worst):
            powered_inferior += weight
        bonus = design.n - stop if outcome.claims_best(focus) else 0
        credited.append(allocations[focus] + bonus)

    w = np.asarray(weights)
    x = np.asarray(credited, dtype=float)
    epasa = float(np.dot(w, x))
    vpasa = max(0.0, float(np.dot(w, (x - epasa) ** 2)))
    null = best is None and (not inferiority or worst is None)
    return {
        "superior_arm": focus,
        "rejection_rate": rejected,
        "type_i_error": rejected if null else None,
        "power": powered if best is not None else None,
        "power_inferior": powered_inferior if inferiority and worst is not None else None,
        "epasa": epasa,
        "vpasa": vpasa,
        "_credited": x,
    }


def exact_ocs(
    design: TrialDesign,
    true_p,
    threshold: float | None = None,
    *,
    superior_arm: int | None = None,
    state_cap: int = DEFAULT_STATE_CAP,
) -> OCReport:
    if threshold is not None:
        design = design.with_threshold(threshold)
    p = response_rates(true_p, design.k)
    distribution = forward_distribution(design, p, state_cap=state_cap)
    records = (
        (mass, terminal.outcome, terminal.allocations, terminal.stop_patient)
        for terminal, mass in distribution.terminal.items()
    )
    values = _functionals(design, p, superior_arm, records)
    values.pop("_credited")
    return OCReport(
        mode=OCMode.EXACT,
        true_p=tuple(float(v) for v in p),
        threshold=design.superiority_threshold,
        **values,
    )


def _replicate(args: tuple[TrialDesign, tuple[float, ...], int]) -> TrialSummary:
    design, true_p, seed = args
    return simulate_trial(design, true_p, seed).summary()


def simulate_replications(
    design: TrialDesign,
    true_p,
    replications: int,
    master_seed: int = 0,
    *,
    threads: int = 1,
) -> list[TrialSummary]:
    """Terminal records of `replications` trials, replication r seeded from (master_seed, r)."""
    p = tuple(float(v) for v in response_rates(true_p, design.k))
    jobs = [(design, p, derive_seed(master_seed, r)) for r in range(replications)]
    logger.info("Simulating %d trials of %s at p=%s on %d worker(s)", replications, design.describe(), p, threads)
    if threads <= 1 or replications <= 1:
        return [_replicate(job) for job in jobs]
    chunksize = max(1, replications // (threads * 8))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_replicate, jobs, chunksize=chunksize))


def summarise_replications(
    design: TrialDesign,
    true_p,
    summaries: list[TrialSummary],
    *,
    delta: float = 0.05,
    superior_arm: int | None = None,
) -> OCReport:
    replications = len(summaries)
    if replications < 1:
        msg = "Cannot summarise zero replications"
        raise ValueError(msg)
    p = response_rates(true_p, design.k)
    weight = 1.0 / replications
    records = ((weight, s.outcome, s.allocations, s.stop_patient) for s in summaries)
    values = _functionals(design, p, superior_arm, records)
    credited = values.pop("_credited")
    radius = ks_confidence_radius(replications, 0.5, delta)
    estimate = values["rejection_rate"]
    shrunk = ks_confidence_radius(replications, min(0.5, estimate + radius), delta)
    spread = (credited - values["epasa"]) ** 2
    scale = math.sqrt(replications)
    return OCReport(
        mode=OCMode.SIMULATED,
        true_p=tuple(float(v) for v in p),
        threshold=design.superiority_threshold,
        replications=replications,
        confidence_radius=radius,
        shrunk_radius=shrunk,
        epasa_se=float(np.std(credited, ddof=1)) / scale if replications > 1 else None,
        vpasa_se=float(np.std(spread, ddof=1)) / scale if replications > 1 else None,
        **values,
    )


def simulate_ocs(
    design: TrialDesign,
    true_p,
    replications: int,
    master_seed: int = 0,
    *,
    threshold: float | None = None,
    delta: float = 0.05,
    threads: int = 1,
    superior_arm: int | None = None,
) -> OCReport:
    if replications < 1:
        msg = f"Simulated operating characteristics need at least one replication, got {replications}"
        raise ValueError(msg)
    if threshold is not None:
        design = design.with_threshold(threshold)
    summaries = simulate_replications(design, true_p, replications, master_seed, threads=threads)
    return summarise_replications(design, true_p, summaries, delta=delta, superior_arm=superior_arm)


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        msg = f"alpha must lie in [0, 1], got {alpha}"
        raise ValueError(msg)


def calibrate_pp(
    design: TrialDesign,
    p: float,
    alpha: float,
    *,
    state_cap: int = DEFAULT_STATE_CAP,
) -> Calibration:
    """Smallest threshold keeping the type I error at p_0 = ... = p_{k-1} = p within alpha."""
    _check_alpha(alpha)
    null = (p,) * design.k
    if design.inferiority_threshold is not None:
        return _calibrate_by_bisection(design, p, alpha, state_cap)

    # Rejection under threshold c is exactly {running maximum > c}.
    distribution = ForwardEquations(design, null, state_cap=state_cap, running_max=True).run()
    masses: dict[float, float] = defaultdict(float)
    for terminal, mass in distribution.terminal.items():
        masses[terminal.running_max] += mass

    groups: list[list[float]] = []
    for value in sorted(masses, reverse=True):
        if groups and groups[-1][0] - value <= TIE_TOLERANCE * max(1.0, abs(value)):
            groups[-1][1] += masses[value]
        else:
            groups.append([value, masses[value]])

    rejected = 0.0
    for value, mass in groups:
        if value <= 0:
            break
        if rejected + mass > alpha + MASS_TOLERANCE:
            logger.debug("PP threshold at p=%g: %.12g (type I error %.6g)", p, value, rejected)
            return Calibration(value, rejected, p)
        rejected += mass
    return Calibration(0.0, rejected, p)


def _calibrate_by_bisection(design: TrialDesign, p: float, alpha: float, state_cap: int) -> Calibration:
    null = (p,) * design.k

    def rate(threshold: float) -> float:
        return exact_ocs(design, null, threshold, state_cap=state_cap).rejection_rate

    if (at_zero := rate(0.0)) <= alpha + MASS_TOLERANCE:
        return Calibration(0.0, at_zero, p)
    if (at_one := rate(1.0)) > alpha + MASS_TOLERANCE:
        logger.warning("No superiority threshold controls the type I error at p=%g below %g", p, alpha)
        return Calibration(1.0, at_one, p)
    low, high, achieved = 0.0, 1.0, at_one
    while high - low > BISECTION_TOLERANCE:
        middle = (low + high) / 2
        value = rate(middle)
        logger.debug("Bisection at p=%g: c=%.7f gives %.6g", p, middle, value)
        if value <= alpha + MASS_TOLERANCE:
            high, achieved = middle, value
        else:
            low = middle
    return Calibration(high, achieved, p)


def calibrate_ux(
    design: TrialDesign,
    alpha: float,
    *,
    step: float = 0.01,
    refine_step: float = 0.001,
    state_cap: int = DEFAULT_STATE_CAP,
) -> Calibration:
    """Threshold controlling the type I error over the whole null: the largest PP threshold on a p-grid."""
    _check_alpha(alpha)
    if not 0 < refine_step <= step <= 1:
        msg = f"Grid steps must satisfy 0 < refine_step <= step <= 1, got {refine_step} and {step}"
        raise ValueError(msg)
    results: dict[float, Calibration] = {}

    def visit(grid: np.ndarray) -> None:
        for p in np.round(grid, 12):
            value = float(min(1.0, max(0.0, p)))
            if value not in results:
                results[value] = calibrate_pp(design, value, alpha, state_cap=state_cap)

    visit(np.arange(0.0, 1.0 + step / 2, step))
    coarse = max(results.values(), key=lambda c: (c.threshold, -(c.p or 0.0)))
    centre = coarse.p or 0.0
    visit(np.arange(max(0.0, centre - step), min(1.0, centre + step) + refine_step / 2, refine_step))
    best = max(results.values(), key=lambda c: (c.threshold, -(c.p or 0.0)))
    profile = tuple(sorted((p, c.threshold) for p, c in results.items()))
    return Calibration(best.threshold, best.type_i_error, best.p, profile)
