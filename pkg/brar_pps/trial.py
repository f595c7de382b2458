from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from brar_pps import backends
from brar_pps.backends.exact import SubsetTable
from brar_pps.methods import Method, PpsMethod
from brar_pps.special import reg_inc_beta
from brar_pps.state import FAILURE, SUCCESS, Increment, TrialState
from brar_pps.streams import derive_seed, stream


if TYPE_CHECKING:
    from collections.abc import Collection, Sequence

    from brar_pps.design import TrialDesign, VarianceScaling
    from brar_pps.special import LogBetaCache

logger = logging.getLogger(__name__)

RENORMALIZE_TOLERANCE = 1e-12
MAX_REDRAWS = 10_000


class Decision(StrEnum):
    CONTINUE = "continue"
    DROP = "drop"
    SUPERIOR = "superior"
    INFERIOR = "inferior"
    COMPOSITE = "composite"
    FUTILITY = "futility"


STOPPING = frozenset({Decision.SUPERIOR, Decision.INFERIOR, Decision.COMPOSITE, Decision.FUTILITY})
REJECTING = frozenset({Decision.SUPERIOR, Decision.INFERIOR, Decision.COMPOSITE})


@dataclass(frozen=True)
class AnalysisOutcome:
    decision: Decision = Decision.CONTINUE
    best: int | None = None
    worst: int | None = None
    dropped: tuple[int, ...] = ()

    @property
    def stops(self) -> bool:
        return self.decision in STOPPING

    @property
    def rejects(self) -> bool:
        return self.decision in REJECTING

    def claims_best(self, arm: int) -> bool:
        return self.decision in {Decision.SUPERIOR, Decision.COMPOSITE} and self.best == arm

    def claims_worst(self, arm: int) -> bool:
        return self.decision in {Decision.INFERIOR, Decision.COMPOSITE} and self.worst == arm

    def __str__(self) -> str:
        parts = [str(self.decision)]
        if self.best is not None:
            parts.append(f"best={self.best}")
        if self.worst is not None:
            parts.append(f"worst={self.worst}")
        if self.dropped:
            parts.append(f"dropped={','.join(map(str, self.dropped))}")
        return " ".join(parts)


CONTINUE = AnalysisOutcome()


@dataclass(frozen=True)
class Statistics:
    superiority: tuple[float, ...]
    inferiority: tuple[float, ...] | None = None


@dataclass(frozen=True)
class PatientRecord:
    arm: int
    outcome: int  # 1 = response
    probabilities: tuple[float, ...]


@dataclass(frozen=True)
class AnalysisRecord:
    patients: int
    statistics: Statistics
    outcome: AnalysisOutcome


@dataclass(frozen=True)
class TrialSummary:
    """Terminal record of one trial, small enough to ship between processes."""

    seed: int
    stop_patient: int
    outcome: AnalysisOutcome
    successes: tuple[int, ...]
    failures: tuple[int, ...]
    statistics: Statistics | None

    @property
    def allocations(self) -> tuple[int, ...]:
        return tuple(s + f for s, f in zip(self.successes, self.failures, strict=True))


@dataclass(frozen=True)
class TrialHistory:
    design: TrialDesign
    true_p: tuple[float, ...]
    seed: int
    patients: tuple[PatientRecord, ...]
    analyses: tuple[AnalysisRecord, ...]
    final_state: TrialState

    @property
    def stop_patient(self) -> int:
        return len(self.patients)

    @property
    def outcome(self) -> AnalysisOutcome:
        if self.analyses and self.analyses[-1].outcome.stops:
            return self.analyses[-1].outcome
        return CONTINUE

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        successes = np.zeros(self.design.k, dtype=np.int64)
        failures = np.zeros(self.design.k, dtype=np.int64)
        for record in self.patients:
            if record.outcome:
                successes[record.arm] += 1
            else:
                failures[record.arm] += 1
        return successes, failures

    def summary(self) -> TrialSummary:
        successes, failures = self.counts()
        return TrialSummary(
            seed=self.seed,
            stop_patient=self.stop_patient,
            outcome=self.outcome,
            successes=tuple(int(s) for s in successes),
            failures=tuple(int(f) for f in failures),
            statistics=self.analyses[-1].statistics if self.analyses else None,
        )


def normalized(probs) -> np.ndarray:
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    total = probs.sum()
    if total <= 0:
        return np.full(probs.shape[0], 1.0 / probs.shape[0])
    if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
        probs = probs / total
    return probs


def restricted(probs: np.ndarray, dropped: Collection[int]) -> np.ndarray:
    """Zero the dropped arms and renormalise over the rest."""
    if not dropped:
        return probs
    probs = probs.copy()
    probs[list(dropped)] = 0.0
    total = probs.sum()
    if total > 0:
        return probs / total
    active = np.ones(probs.shape[0], dtype=bool)
    active[list(dropped)] = False
    return active / active.sum()


def sbrar_probs(
    source: TrialState | SubsetTable,
    method: PpsMethod | None = None,
    *,
    seed: int | None = None,
    cache: LogBetaCache | None = None,
) -> np.ndarray:
    """Allocation probabilities: each arm's posterior probability of being best."""
    if isinstance(source, SubsetTable):
        return normalized(source.singletons())
    return normalized(backends.superiority(source, method or PpsMethod(), seed=seed, cache=cache))


def tuned_probs(raw, state: TrialState, counts, tuning: VarianceScaling) -> np.ndarray:
    """Variance-scaled allocation probabilities."""
    raw = np.asarray(raw, dtype=float)
    counts = np.asarray(counts, dtype=float)
    tuned = (raw * state.variances() / (counts + 1.0)) ** (1.0 / tuning.power)
    total = tuned.sum()
    if not total > 0:
        logger.warning("Variance scaling degenerated at %s; using the untuned probabilities", state)
        return raw
    return tuned / total


def posterior_draw_allocation(
    state: TrialState,
    seed: int | np.random.Generator,
    active: Collection[int] | None = None,
) -> int:
    """Arm with the largest posterior draw, redrawing while the winner is not active."""
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    x = state.as_array()
    draws = rng.beta(x[:, 0], x[:, 1])
    for _ in range(MAX_REDRAWS):
        arm = int(np.argmax(draws))
        if active is None or arm in active:
            return arm
        draws = rng.beta(x[:, 0], x[:, 1])
    logger.debug("No active arm won %d posterior draws at %s", MAX_REDRAWS, state)
    return max(active, key=lambda j: draws[j])


def _best(values: np.ndarray, arms: Sequence[int]) -> int:
    # Lowest index wins ties.
    return min(arms, key=lambda j: (-values[j], j))


def _worst(values: np.ndarray, arms: Sequence[int]) -> int:
    return min(arms, key=lambda j: (values[j], j))


def compute_statistics(
    state: TrialState,
    design: TrialDesign,
    *,
    final: bool = True,
    seed: int | None = None,
    cache: LogBetaCache | None = None,
) -> Statistics:
    sup = backends.superiority(state, design.test_method, seed=seed, cache=cache)
    inf = None
    if final and design.inferiority_threshold is not None:
        inf = backends.inferiority(state, design.test_method, seed=seed, cache=cache)
    return Statistics(tuple(map(float, sup)), None if inf is None else tuple(map(float, inf)))


def evaluate_tests(
    state: TrialState,
    design: TrialDesign,
    *,
    final: bool = True,
    dropped: Collection[int] = (),
    statistics: Statistics | None = None,
) -> AnalysisOutcome:
    """Decision at one analysis: interim analyses test superiority and the drop rule, the final one also inferiority."""
    active = [j for j in range(design.k) if j not in dropped]
    if not active:
        return AnalysisOutcome(Decision.FUTILITY)
    if statistics is None:
        statistics = compute_statistics(state, design, final=final)
    sup = np.asarray(statistics.superiority)
    threshold = design.superiority_threshold

    if final and design.inferiority_threshold is not None and statistics.inferiority is not None:
        means = state.means()
        best, worst = _best(means, active), _worst(means, active)
        superior = bool(sup[best] > threshold)
        inferior = best != worst and bool(statistics.inferiority[worst] > design.inferiority_threshold)
        if superior and inferior:
            return AnalysisOutcome(Decision.COMPOSITE, best=best, worst=worst)
        if superior:
            return AnalysisOutcome(Decision.SUPERIOR, best=best)
        if inferior:
            return AnalysisOutcome(Decision.INFERIOR, worst=worst)
        return CONTINUE

    best = _best(sup, active)
    if sup[best] > threshold:
        return AnalysisOutcome(Decision.SUPERIOR, best=best)
    if final or design.drop_rule is None:
        return CONTINUE

    rule = design.drop_rule
    newly = tuple(j for j in active if reg_inc_beta(rule.p_low, *state.arm(j)) >= rule.confidence)
    if len(newly) == len(active):
        return AnalysisOutcome(Decision.FUTILITY, dropped=newly)
    if newly:
        return AnalysisOutcome(Decision.DROP, dropped=newly)
    return CONTINUE


class PpsTracker:
    """Superiority statistics of one method along a single trial path."""

    def __init__(self, method: PpsMethod, priors: TrialState, seed: int, cache: LogBetaCache | None) -> None:
        self.method = method
        self.state = priors
        self._seed = seed
        self._cache = cache
        self._table = SubsetTable.for_state(priors, cache) if method.tag is Method.EXACT else None
        self._memo: tuple[int, np.ndarray] | None = None

    def observe(self, inc: Increment) -> None:
        self.state = self.state.incremented(inc)
        if self._table is not None:
            self._table.apply(inc)

    def superiority(self, patients: int) -> np.ndarray:
        if self._table is not None:
            return self._table.singletons()
        if self._memo is None or self._memo[0] != patients:
            seed = self._seed_for(patients)
            self._memo = (patients, backends.superiority(self.state, self.method, seed=seed, cache=self._cache))
        return self._memo[1]

    def inferiority(self, patients: int) -> np.ndarray:
        seed = self._seed_for(patients, 1)
        return backends.inferiority(self.state, self.method, seed=seed, cache=self._cache)

    def _seed_for(self, *key: int) -> int:
        # Sampling gets a fresh substream per patient; deterministic methods keep their configured seed.
        return self.method.seed if self.method.deterministic else derive_seed(self._seed, *key)

    def statistics(self, patients: int, *, inferiority: bool) -> Statistics:
        sup = tuple(float(v) for v in self.superiority(patients))
        inf = tuple(float(v) for v in self.inferiority(patients)) if inferiority else None
        return Statistics(sup, inf)


def statistic_method(method: PpsMethod) -> PpsMethod:
    # Exact values do not depend on seeds or sample counts; the posterior draw follows them.
    if method.tag in {Method.EXACT, Method.POSTERIOR_DRAW}:
        return PpsMethod()
    return method


def response_rates(true_p, k: int) -> np.ndarray:
    p = np.asarray(true_p, dtype=float)
    if p.shape != (k,) or np.any((p < 0) | (p > 1)):
        msg = f"Expected {k} response probabilities in [0, 1], got {list(p)}"
        raise ValueError(msg)
    return p


def simulate_trial(design: TrialDesign, true_p, seed: int = 0) -> TrialHistory:
    p = response_rates(true_p, design.k)
    k = design.k
    rng = stream(seed)
    cache = design.log_beta_cache()
    rand_method = statistic_method(design.rand_method)
    test_method = statistic_method(design.test_method)
    rand = PpsTracker(rand_method, design.prior_state, seed, cache)
    test = rand if test_method == rand_method else PpsTracker(test_method, design.prior_state, seed, cache)
    trackers = [rand] if test is rand else [rand, test]

    schedule = set(design.schedule)
    posterior_draw = design.rand_method.tag is Method.POSTERIOR_DRAW
    uniform = np.full(k, 1.0 / k)
    probs = uniform
    block_state = design.prior_state
    dropped: set[int] = set()
    patients: list[PatientRecord] = []
    analyses: list[AnalysisRecord] = []

    for i in range(design.n):
        if i < design.adaptive_start:
            arm = i % k
            probs = uniform
        else:
            if (i - design.adaptive_start) % design.block_size == 0:
                probs = _allocation(design, rand, i, dropped)
                block_state = rand.state
            if posterior_draw:
                active = [j for j in range(k) if j not in dropped]
                arm = posterior_draw_allocation(block_state, rng, active)
            else:
                arm = int(rng.choice(k, p=probs))

        response = bool(rng.random() < p[arm])
        inc = Increment(arm, SUCCESS if response else FAILURE)
        for tracker in trackers:
            tracker.observe(inc)
        patients.append(PatientRecord(arm, int(response), tuple(float(v) for v in probs)))

        if i + 1 in schedule:
            final = i + 1 == design.n
            stats = test.statistics(i + 1, inferiority=final and design.inferiority_threshold is not None)
            outcome = evaluate_tests(test.state, design, final=final, dropped=dropped, statistics=stats)
            analyses.append(AnalysisRecord(i + 1, stats, outcome))
            if outcome.stops:
                break
            if outcome.dropped:
                # Analyses may fall inside a block; dropped arms leave the current allocation at once.
                dropped.update(outcome.dropped)
                probs = restricted(probs, dropped)

    history = TrialHistory(
        design=design,
        true_p=tuple(float(v) for v in p),
        seed=seed,
        patients=tuple(patients),
        analyses=tuple(analyses),
        final_state=rand.state,
    )
    logger.debug("Trial %d stopped after %d patients: %s", seed, history.stop_patient, history.outcome)
    return history


def _allocation(design: TrialDesign, rand: PpsTracker, patients: int, dropped: Collection[int]) -> np.ndarray:
    probs = normalized(rand.superiority(patients))
    if design.tuning is not None:
        counts = rand.state.as_array().sum(axis=1) - design.prior_state.as_array().sum(axis=1)
        probs = tuned_probs(probs, rand.state, counts, design.tuning)
    return restricted(probs, dropped)


def replay_statistics(history: TrialHistory) -> list[Statistics]:
    """Recompute the test statistics of every recorded analysis along the recorded patient path."""
    design = history.design
    tracker = PpsTracker(
        statistic_method(design.test_method), design.prior_state, history.seed, design.log_beta_cache()
    )
    wanted = {record.patients: record.statistics.inferiority is not None for record in history.analyses}
    replayed = []
    for count, record in enumerate(history.patients, start=1):
        tracker.observe(Increment(record.arm, SUCCESS if record.outcome else FAILURE))
        if count in wanted:
            replayed.append(tracker.statistics(count, inferiority=wanted[count]))
    return replayed
