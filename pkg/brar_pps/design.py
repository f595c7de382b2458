from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import cast

from brar_pps.backends.exact import MAX_ARMS
from brar_pps.errors import DesignError
from brar_pps.methods import Method, PpsMethod
from brar_pps.special import LogBetaCache, log_beta_cache
from brar_pps.state import TrialState


@dataclass(frozen=True)
class DropRule:
    """Drop arm j once P(p_j < p_low) >= confidence."""

    p_low: float = 0.25
    confidence: float = 0.95


@dataclass(frozen=True)
class VarianceScaling:
    power: int = 2


@dataclass(frozen=True)
class TrialDesign:
    k: int
    n: int
    priors: TrialState | None = None
    burn_in: int = 0
    block_size: int = 1
    analysis_schedule: tuple[int, ...] | None = None
    superiority_threshold: float = 0.975
    inferiority_threshold: float | None = None
    drop_rule: DropRule | None = None
    tuning: VarianceScaling | None = None
    rand_method: PpsMethod = field(default_factory=PpsMethod)
    test_method: PpsMethod = field(default_factory=PpsMethod)

    def __post_init__(self) -> None:
        if self.k < 2:  # noqa: PLR2004
            msg = f"A trial needs at least two arms, got k={self.k}"
            raise DesignError(msg)
        if self.priors is None:
            object.__setattr__(self, "priors", TrialState.uniform(self.k))
        if self.analysis_schedule is None:
            object.__setattr__(self, "analysis_schedule", (self.n,) if self.n > 0 else ())
        object.__setattr__(self, "analysis_schedule", tuple(sorted(set(self.analysis_schedule))))
        self.validate()

    @property
    def prior_state(self) -> TrialState:
        return cast("TrialState", self.priors)

    @property
    def schedule(self) -> tuple[int, ...]:
        return cast("tuple[int, ...]", self.analysis_schedule)

    @property
    def adaptive_start(self) -> int:
        return self.k * self.burn_in

    def validate(self) -> None:
        if self.prior_state.k != self.k:
            msg = f"Priors describe {self.prior_state.k} arms but k={self.k}"
            raise DesignError(msg)
        if self.n < 0 or self.burn_in < 0:
            msg = f"Sample size and burn-in must be non-negative, got n={self.n}, B={self.burn_in}"
            raise DesignError(msg)
        if self.adaptive_start > self.n:
            msg = f"Burn-in of {self.burn_in} per arm needs {self.adaptive_start} patients but n={self.n}"
            raise DesignError(msg)
        if self.block_size < 1:
            msg = f"Block size must be at least 1, got {self.block_size}"
            raise DesignError(msg)
        lowest = max(1, self.adaptive_start)
        if any(not lowest <= point <= self.n for point in self.schedule):
            msg = f"Analysis points must lie in [{lowest}, {self.n}], got {list(self.schedule)}"
            raise DesignError(msg)
        for name in ("superiority_threshold", "inferiority_threshold"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                msg = f"{name} must lie in [0, 1], got {value}"
                raise DesignError(msg)
        if self.drop_rule is not None and not (
            0.0 <= self.drop_rule.p_low <= 1.0 and 0.0 <= self.drop_rule.confidence <= 1.0
        ):
            msg = f"Drop rule values must lie in [0, 1], got {self.drop_rule}"
            raise DesignError(msg)
        if self.tuning is not None and self.tuning.power < 1:
            msg = f"Variance scaling power must be at least 1, got {self.tuning.power}"
            raise DesignError(msg)
        if self.tuning is not None and self.rand_method.tag is Method.POSTERIOR_DRAW:
            msg = "Posterior-draw randomisation cannot be tuned: tuning needs explicit probabilities"
            raise DesignError(msg)
        if self.test_method.tag is Method.POSTERIOR_DRAW:
            msg = "Posterior draw is a randomisation rule, not a test statistic"
            raise DesignError(msg)
        exact_tags = {Method.EXACT, Method.POSTERIOR_DRAW}
        if self.k > MAX_ARMS and {self.rand_method.tag, self.test_method.tag} & exact_tags:
            msg = f"Exact computation supports at most {MAX_ARMS} arms, got k={self.k}"
            raise DesignError(msg)

    def block_ends(self) -> list[int]:
        """Patient counts at which an adaptive block closes."""
        return list(range(self.adaptive_start + self.block_size, self.n, self.block_size)) + (
            [self.n] if self.n > self.adaptive_start else []
        )

    def adaptive_blocks(self) -> int:
        return math.ceil((self.n - self.adaptive_start) / self.block_size)

    def log_beta_cache(self) -> LogBetaCache:
        """Cache sized to cover every Beta argument a trial under this design can reach."""
        return log_beta_cache(2 * (self.n + max(self.prior_state.params)))

    def with_threshold(self, threshold: float) -> TrialDesign:
        return replace(self, superiority_threshold=threshold)

    def describe(self) -> str:
        return (
            f"k={self.k} n={self.n} B={self.burn_in} b={self.block_size} "
            f"rand={self.rand_method} test={self.test_method}"
        )


def block_schedule(k: int, n: int, burn_in: int, block_size: int) -> tuple[int, ...]:
    """Every adaptive block end plus n."""
    if n == 0:
        return ()
    start = k * burn_in
    return (*range(start + block_size, n, block_size), n)


def eset_design(
    *,
    burn_in: int = 100,
    block_size: int = 100,
    rand_method: PpsMethod | None = None,
    test_method: PpsMethod | None = None,
    n: int = 720,
) -> TrialDesign:
    """Three-arm design with burn-in, variance scaling, interim stopping, arm dropping and a final inferiority claim."""
    return TrialDesign(
        k=3,
        n=n,
        burn_in=burn_in,
        block_size=block_size,
        analysis_schedule=block_schedule(3, n, burn_in, block_size),
        superiority_threshold=0.975,
        inferiority_threshold=0.975,
        drop_rule=DropRule(0.25, 0.95),
        tuning=VarianceScaling(2),
        rand_method=rand_method or PpsMethod(),
        test_method=test_method or PpsMethod(),
    )
