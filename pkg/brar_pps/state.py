from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np


if TYPE_CHECKING:
    from collections.abc import Iterable

SUCCESS = 0
FAILURE = 1


@dataclass(frozen=True)
class Increment:
    """Grow slot `slot` (0 = success, 1 = failure) of arm `arm` by one."""

    arm: int
    slot: int

    def __post_init__(self) -> None:
        if self.arm < 0:
            msg = f"Arm index must be non-negative, got {self.arm}"
            raise ValueError(msg)
        if self.slot not in {SUCCESS, FAILURE}:
            msg = f"Slot must be 0 or 1, got {self.slot}"
            raise ValueError(msg)

    @property
    def index(self) -> int:
        return 2 * self.arm + self.slot

    def flipped(self) -> Increment:
        return Increment(self.arm, 1 - self.slot)


@dataclass(frozen=True)
class TrialState:
    """Beta posterior parameters (a_0, b_0, a_1, b_1, ...) of every arm."""

    params: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.params) < 4 or len(self.params) % 2:  # noqa: PLR2004
            msg = f"A trial state needs an even number (>= 4) of parameters, got {len(self.params)}"
            raise ValueError(msg)
        if any(p < 1 for p in self.params):
            msg = f"Beta parameters must be positive integers, got {self.params}"
            raise ValueError(msg)

    @classmethod
    def uniform(cls, k: int) -> TrialState:
        return cls((1,) * (2 * k))

    @classmethod
    def from_arms(cls, arms: Iterable[tuple[int, int]]) -> TrialState:
        return cls(tuple(int(p) for arm in arms for p in arm))

    @classmethod
    def from_counts(cls, priors: TrialState, successes, failures) -> TrialState:
        return cls.from_arms(
            (a + int(s), b + int(f)) for (a, b), s, f in zip(priors.arms(), successes, failures, strict=True)
        )

    @property
    def k(self) -> int:
        return len(self.params) // 2

    def arm(self, j: int) -> tuple[int, int]:
        return self.params[2 * j], self.params[2 * j + 1]

    def arms(self) -> list[tuple[int, int]]:
        return [self.arm(j) for j in range(self.k)]

    def as_array(self) -> np.ndarray:
        return np.array(self.params, dtype=np.int64).reshape(self.k, 2)

    def incremented(self, inc: Increment) -> TrialState:
        if inc.arm >= self.k:
            msg = f"Arm {inc.arm} out of range for a {self.k}-arm state"
            raise ValueError(msg)
        params = list(self.params)
        params[inc.index] += 1
        return TrialState(tuple(params))

    def swapped(self) -> TrialState:
        """Exchange each arm's parameters: superiority on the result is inferiority on self."""
        return TrialState.from_arms((b, a) for a, b in self.arms())

    def means(self) -> np.ndarray:
        x = self.as_array().astype(float)
        return x[:, 0] / x.sum(axis=1)

    def variances(self) -> np.ndarray:
        x = self.as_array().astype(float)
        total = x.sum(axis=1)
        return x[:, 0] * x[:, 1] / (total * total * (total + 1))

    def __str__(self) -> str:
        return " | ".join(f"{a},{b}" for a, b in self.arms())


def path_between(start: TrialState, end: TrialState) -> list[Increment]:
    """Increments leading from `start` to `end`, arm by arm, successes before failures."""
    if start.k != end.k:
        msg = f"States have different arm counts ({start.k} and {end.k})"
        raise ValueError(msg)
    path = []
    for index, (lo, hi) in enumerate(zip(start.params, end.params, strict=True)):
        if hi < lo:
            msg = f"{end} cannot be reached from {start}"
            raise ValueError(msg)
        path.extend([Increment(index // 2, index % 2)] * (hi - lo))
    return path
