from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import special

from brar_pps.errors import ConsistencyError
from brar_pps.state import Increment, TrialState, path_between


if TYPE_CHECKING:
    from collections.abc import Iterable

    from brar_pps.special import LogBetaCache

logger = logging.getLogger(__name__)

MAX_ARMS = 20
CHECK_INTERVAL = 64
SUM_TOLERANCE = 1e-9
REBUILD_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SubsetLayout:
    """Bitmask bookkeeping shared by every table with `k` arms."""

    k: int
    member: np.ndarray  # (2^k, k) bool, arm j in subset S
    counts: np.ndarray  # (2^k, k) int, member as integers for merging parameters
    union: np.ndarray  # (2^k, k) int, bitmask of S | {j}
    by_size: tuple[np.ndarray, ...]  # subsets grouped by cardinality


@functools.cache
def subset_layout(k: int) -> SubsetLayout:
    if not 2 <= k <= MAX_ARMS:  # noqa: PLR2004
        msg = f"The subset table supports 2 to {MAX_ARMS} arms, got {k}"
        raise ValueError(msg)
    masks = np.arange(1 << k)
    bits = 1 << np.arange(k)
    member = (masks[:, None] & bits[None, :]) != 0
    member.setflags(write=False)
    size = member.sum(axis=1)
    return SubsetLayout(
        k=k,
        member=member,
        counts=member.astype(np.int64),
        union=masks[:, None] | bits[None, :],
        by_size=tuple(np.flatnonzero(size == s) for s in range(k + 1)),
    )


def uniform_merged_superiority(i: int, j: int) -> float:
    """P(Beta(j, j) > max of i independent uniforms)."""
    if i == 0:
        return 1.0
    jp = np.arange(1, j, dtype=float)
    terms = (
        np.exp(special.betaln(i + jp, jp + 2) - special.betaln(jp, jp + 1))
        - np.exp(special.betaln(i + jp, jp + 1) - special.betaln(jp, jp))
    ) / jp
    return 1.0 / (i + 1) + i * float(terms.sum())


class SubsetTable:
    """P(x; S) for every non-empty subset S of the arms at one trial state.

    Index 0 (the empty set) is unused; the full set holds 1.
    """

    def __init__(self, state: TrialState, probs: np.ndarray, cache: LogBetaCache | None = None) -> None:
        self._params = state.as_array()
        self.probs = probs
        self.cache = cache
        self.guarded = True
        self._steps = 0

    @classmethod
    def uniform(cls, k: int, cache: LogBetaCache | None = None) -> SubsetTable:
        layout = subset_layout(k)
        values = [uniform_merged_superiority(k - s, s) for s in range(k + 1)]
        probs = np.zeros(1 << k)
        for size in range(1, k + 1):
            probs[layout.by_size[size]] = values[size]
        probs[-1] = 1.0
        return cls(TrialState.uniform(k), probs, cache)

    @classmethod
    def for_state(cls, state: TrialState, cache: LogBetaCache | None = None, *, guarded: bool = True) -> SubsetTable:
        """Table for `state`, reached by the dummy path from the all-ones state."""
        table = cls.uniform(state.k, cache)
        table.guarded = guarded
        for inc in path_between(TrialState.uniform(state.k), state):
            table.apply(inc)
        table.guarded = True
        return table

    @property
    def k(self) -> int:
        return self._params.shape[0]

    @property
    def state(self) -> TrialState:
        return TrialState(tuple(int(p) for p in self._params.ravel()))

    def singletons(self) -> np.ndarray:
        return self.probs[1 << np.arange(self.k)].copy()

    def __getitem__(self, subset: int) -> float:
        return float(self.probs[subset])

    def copy(self) -> SubsetTable:
        clone = SubsetTable.__new__(SubsetTable)
        clone._params = self._params.copy()
        clone.probs = self.probs.copy()
        clone.cache = self.cache
        clone.guarded = self.guarded
        clone._steps = self._steps
        return clone

    def _log_beta(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.cache is not None and self.cache.covers(a, b):
            return self.cache.table[a, b]
        return special.betaln(a, b)

    def apply(self, inc: Increment) -> SubsetTable:
        """Move the table to state + e_{arm, slot} in place."""
        j, s = inc.arm, inc.slot
        if j >= self.k:
            msg = f"Arm {j} out of range for a {self.k}-arm table"
            raise ValueError(msg)
        layout = subset_layout(self.k)
        x = self._params

        merged = layout.counts @ x
        merged[0] = 1  # empty set, never read
        pair = merged[:, None, :] + x[None, :, :]
        # coef[S, j'] = B(x_j' + M_S) / (B(x_j') B(M_S)), M_S the merged parameters of S.
        coef = np.exp(
            self._log_beta(pair[..., 0], pair[..., 1])
            - self._log_beta(x[:, 0], x[:, 1])[None, :]
            - self._log_beta(merged[:, 0], merged[:, 1])[:, None]
        )
        inside_sign = 1.0 if s == 0 else -1.0

        for size in range(1, self.k):
            subsets = layout.by_size[size]
            contrib = np.where(
                layout.member[subsets],
                0.0,
                coef[subsets] * self.probs[layout.union[subsets]],
            )
            contains = layout.member[subsets, j]
            delta = np.where(
                contains,
                inside_sign * contrib.sum(axis=1) / merged[subsets, s],
                -inside_sign * contrib[:, j] / x[j, s],
            )
            self.probs[subsets] += delta

        x[j, s] += 1
        self._steps += 1
        if self.guarded and self._steps % CHECK_INTERVAL == 0:
            self._check_drift()
        return self

    def drift(self) -> float:
        return abs(float(self.singletons().sum()) - 1.0)

    def _check_drift(self) -> None:
        drift = self.drift()
        if drift <= SUM_TOLERANCE:
            return
        if drift <= REBUILD_TOLERANCE:
            logger.debug("Singleton sum off by %.3g at %s", drift, self.state)
            return
        logger.warning("Singleton sum drifted by %.3g at %s; rebuilding the table", drift, self.state)
        rebuilt = SubsetTable.for_state(self.state, self.cache, guarded=False)
        if rebuilt.drift() > REBUILD_TOLERANCE:
            msg = f"Subset table for {self.state} is inconsistent (singleton sum off by {rebuilt.drift():.3g})"
            raise ConsistencyError(msg)
        self.probs = rebuilt.probs


def subset_table_uniform(k: int, cache: LogBetaCache | None = None) -> SubsetTable:
    return SubsetTable.uniform(k, cache)


def apply_increment(table: SubsetTable, inc: Increment) -> SubsetTable:
    return table.apply(inc)


def run_path(
    priors: TrialState,
    path: Iterable[Increment],
    cache: LogBetaCache | None = None,
) -> list[np.ndarray]:
    """Singleton probabilities at the prior state and after every increment of `path`."""
    table = SubsetTable.for_state(priors, cache)
    vectors = [table.singletons()]
    for inc in path:
        vectors.append(table.apply(inc).singletons())
    return vectors


def _two_arm_sum(focal: tuple[int, int], opponent: tuple[int, int]) -> float:
    (a, b), (c, d) = focal, opponent
    i = np.arange(a, dtype=float)
    log_terms = special.betaln(c + i, d + b) - np.log(b + i) - special.betaln(1 + i, b) - special.betaln(c, d)
    return float(np.exp(log_terms).sum())


def pps_two_arm(focal: tuple[int, int], opponent: tuple[int, int]) -> float:
    """P(X > Y) for X ~ Beta(*focal), Y ~ Beta(*opponent)."""
    x2, x3 = focal
    x0, x1 = opponent
    if min(x0, x1, x2, x3) < 1:
        msg = f"Beta parameters must be positive integers, got focal {focal} and opponent {opponent}"
        raise ValueError(msg)
    # Four equivalent sums; evaluate the shortest. The flag marks a complement.
    candidates = (
        (x2, (x2, x3), (x0, x1), False),
        (x0, (x0, x1), (x2, x3), True),
        (x1, (x1, x0), (x3, x2), False),
        (x3, (x3, x2), (x1, x0), True),
    )
    _, f, o, complement = min(candidates, key=lambda c: c[0])
    value = _two_arm_sum(f, o)
    return 1.0 - value if complement else value


def exact_superiority(state: TrialState, cache: LogBetaCache | None = None) -> np.ndarray:
    if state.k == 2:  # noqa: PLR2004
        p = pps_two_arm(state.arm(0), state.arm(1))
        return np.array([p, 1.0 - p])
    return SubsetTable.for_state(state, cache).singletons()


def pps_single(
    focal: tuple[int, int],
    opponents: Iterable[tuple[int, int]],
    cache: LogBetaCache | None = None,
) -> float:
    opponents = list(opponents)
    if len(opponents) == 1:
        return pps_two_arm(focal, opponents[0])
    state = TrialState.from_arms([focal, *opponents])
    return float(SubsetTable.for_state(state, cache).singletons()[0])


def exact_inferiority(state: TrialState, cache: LogBetaCache | None = None) -> np.ndarray:
    return exact_superiority(state.swapped(), cache)


def inferiority_pps(source: SubsetTable | TrialState, arm: int, cache: LogBetaCache | None = None) -> float:
    """Posterior probability that `arm` has the lowest response rate."""
    state = source.state if isinstance(source, SubsetTable) else source
    return float(exact_inferiority(state, cache)[arm])
