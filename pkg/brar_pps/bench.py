from __future__ import annotations

import datetime
import logging
import math
import platform
import statistics
import time
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np
from scipy import stats

from brar_pps import backends
from brar_pps.design import TrialDesign, block_schedule
from brar_pps.methods import DEFAULT_SAMPLES, Method, PpsMethod
from brar_pps.special import log_beta_cache
from brar_pps.state import TrialState
from brar_pps.streams import derive_seed
from brar_pps.trial import simulate_trial


if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Sequence

logger = logging.getLogger(__name__)

TIMING_COLUMNS = (
    "study",
    "method",
    "preloaded",
    "k",
    "n",
    "burn_in",
    "block_size",
    "samples",
    "replications",
    "repetitions",
    "median_seconds",
    "max_seconds",
)


class Study(StrEnum):
    SINGLE = "single"
    TRIAL = "trial"


@dataclass(frozen=True)
class Timing:
    study: Study
    method: Method
    k: int
    n: int
    median_seconds: float
    max_seconds: float
    repetitions: int
    burn_in: int = 0
    block_size: int = 1
    samples: int | None = None
    replications: int = 1
    preloaded: bool = False

    def row(self) -> dict:
        return {c: getattr(self, c) for c in TIMING_COLUMNS}

    @classmethod
    def from_row(cls, row: dict[str, str]) -> Timing:
        return cls(
            study=Study(row["study"]),
            method=Method(row["method"]),
            k=int(row["k"]),
            n=int(row["n"]),
            median_seconds=float(row["median_seconds"]),
            max_seconds=float(row["max_seconds"]),
            repetitions=int(row["repetitions"]),
            burn_in=int(row["burn_in"]),
            block_size=int(row["block_size"]),
            samples=int(row["samples"]) if row.get("samples") else None,
            replications=int(row["replications"]),
            preloaded=row.get("preloaded") == "true",
        )


def time_call(fn: Callable[[], object], repetitions: int = 5, warmup: int = 1) -> tuple[float, float]:
    """Median and maximum wall time of `repetitions` calls after `warmup` discarded calls."""
    if repetitions < 1:
        msg = f"Need at least one repetition, got {repetitions}"
        raise ValueError(msg)
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times), max(times)


def worst_case_state(k: int, n: int) -> TrialState:
    """Balanced state a = b = c = d = ...: the slowest exact evaluation for n patients."""
    return TrialState((1 + n // (2 * k),) * (2 * k))


def bench_single(
    k: int,
    sizes: Iterable[int],
    methods: Sequence[PpsMethod],
    *,
    repetitions: int = 5,
    warmup: int = 1,
    preload: bool = True,
) -> list[Timing]:
    timings = []
    for n in sizes:
        state = worst_case_state(k, n)
        for method in methods:
            cache = None
            if method.tag is Method.EXACT and preload:
                cache = log_beta_cache(2 * (n + 2 * k))
            median, maximum = time_call(
                lambda state=state, method=method, cache=cache: backends.estimate(state, 0, method, cache),
                repetitions,
                warmup,
            )
            logger.info("single k=%d n=%d %s: median %.3gs", k, n, method, median)
            timings.append(
                Timing(
                    study=Study.SINGLE,
                    method=method.tag,
                    k=k,
                    n=n,
                    median_seconds=median,
                    max_seconds=maximum,
                    repetitions=repetitions,
                    samples=method.samples if method.tag is Method.SAMPLING else None,
                    preloaded=cache is not None,
                )
            )
    return timings


def worst_case_design(k: int, n: int, burn_in: int, block_size: int, method: PpsMethod) -> TrialDesign:
    """Design whose trials never stop early, analysed after every block."""
    return TrialDesign(
        k=k,
        n=n,
        burn_in=burn_in,
        block_size=block_size,
        analysis_schedule=block_schedule(k, n, burn_in, block_size),
        superiority_threshold=1.0,
        rand_method=method,
        test_method=method,
    )


def bench_trials(
    k: int,
    n: int,
    burn_in: int,
    block_size: int,
    methods: Sequence[PpsMethod],
    *,
    replications: int = 10,
    repetitions: int = 5,
    warmup: int = 1,
    seed: int = 0,
) -> list[Timing]:
    timings = []
    null = (0.5,) * k
    for method in methods:
        design = worst_case_design(k, n, burn_in, block_size, method)

        def run(design: TrialDesign = design) -> None:
            for r in range(replications):
                simulate_trial(design, null, derive_seed(seed, r))

        median, maximum = time_call(run, repetitions, warmup)
        logger.info("trials %s x%d: median %.3gs", design.describe(), replications, median)
        timings.append(
            Timing(
                study=Study.TRIAL,
                method=method.tag,
                k=k,
                n=n,
                median_seconds=median,
                max_seconds=maximum,
                repetitions=repetitions,
                burn_in=burn_in,
                block_size=block_size,
                samples=method.samples if method.tag is Method.SAMPLING else None,
                replications=replications,
            )
        )
    return timings


def _blocks(n: int, k: int, burn_in: int, block_size: int) -> int:
    return math.ceil((n - k * burn_in) / block_size)


@dataclass(frozen=True)
class RuntimeModel:
    """Maximal computation time per trial: n f_EX(k), blocks f_GA(k) and blocks K c_RS."""

    exact: dict[int, float] = field(default_factory=dict)
    gaussian: dict[int, float] = field(default_factory=dict)
    sampling: float | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        constants = [*self.exact.values(), *self.gaussian.values()]
        if self.sampling is not None:
            constants.append(self.sampling)
        if any(not c > 0 for c in constants):
            msg = "Runtime constants must be positive"
            raise ValueError(msg)

    @classmethod
    def reference_hardware(cls) -> RuntimeModel:
        """Published reference constants (-log seconds); usable for predictions, not for assertions."""
        exact = dict(
            zip((2, 3, 4, 5, 6, 7, 8, 12, 13), (10.8, 10.0, 9.32, 8.54, 7.73, 6.87, 6.05, 2.83, 2.03), strict=True)
        )
        gaussian = dict(zip(range(2, 9), (8.93, 8.60, 5.92, 4.74, 3.83, 2.71, 1.94), strict=True))
        return cls(
            exact={k: math.exp(-v) for k, v in exact.items()},
            gaussian={k: math.exp(-v) for k, v in gaussian.items()},
            sampling=7e-4,
            metadata={"machine": "reference hardware", "source": "reference constants"},
        )

    def exact_trend(self):
        """Least-squares line through (k, log f_EX(k))."""
        if len(self.exact) < 2:  # noqa: PLR2004
            msg = "Need exact timings for at least two arm counts to fit a trend"
            raise ValueError(msg)
        ks = sorted(self.exact)
        return stats.linregress(ks, [math.log(self.exact[k]) for k in ks])

    def f_exact(self, k: int) -> float:
        if k in self.exact:
            return self.exact[k]
        trend = self.exact_trend()
        return math.exp(trend.intercept + trend.slope * k)

    def predict(
        self,
        method: Method,
        n: int,
        k: int,
        *,
        burn_in: int = 0,
        block_size: int = 1,
        samples: int = DEFAULT_SAMPLES,
    ) -> float:
        match Method(method):
            case Method.EXACT | Method.POSTERIOR_DRAW:
                return n * self.f_exact(k)
            case Method.GAUSSIAN:
                if k not in self.gaussian:
                    msg = f"No Gaussian timing for k={k}"
                    raise ValueError(msg)
                return _blocks(n, k, burn_in, block_size) * self.gaussian[k]
            case Method.SAMPLING:
                if self.sampling is None:
                    msg = "No repeated-sampling timing in this model"
                    raise ValueError(msg)
                return _blocks(n, k, burn_in, block_size) * samples * self.sampling
            case _:
                msg = f"No runtime model for {method}"
                raise ValueError(msg)

    def to_dict(self) -> dict:
        return {
            "exact": {str(k): v for k, v in sorted(self.exact.items())},
            "gaussian": {str(k): v for k, v in sorted(self.gaussian.items())},
            "sampling": self.sampling,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RuntimeModel:
        return cls(
            exact={int(k): float(v) for k, v in data.get("exact", {}).items()},
            gaussian={int(k): float(v) for k, v in data.get("gaussian", {}).items()},
            sampling=data.get("sampling"),
            metadata=dict(data.get("metadata", {})),
        )


def fit_runtime_model(timings: Iterable[Timing]) -> RuntimeModel:
    """Per-method constants from full-trial timings."""
    exact: dict[int, list[float]] = {}
    gaussian: dict[int, list[float]] = {}
    sampling: list[float] = []
    repetitions = set()
    for t in timings:
        if t.study is not Study.TRIAL or t.replications < 1:
            continue
        per_trial = t.median_seconds / t.replications
        blocks = _blocks(t.n, t.k, t.burn_in, t.block_size)
        repetitions.add(t.repetitions)
        if t.method is Method.EXACT and t.n > 0:
            exact.setdefault(t.k, []).append(per_trial / t.n)
        elif t.method is Method.GAUSSIAN and blocks > 0:
            gaussian.setdefault(t.k, []).append(per_trial / blocks)
        elif t.method is Method.SAMPLING and blocks > 0 and t.samples:
            sampling.append(per_trial / (blocks * t.samples))
    if not (exact or gaussian or sampling):
        msg = "Not enough full-trial timings to fit a runtime model"
        raise ValueError(msg)
    return RuntimeModel(
        exact={k: float(np.median(v)) for k, v in exact.items()},
        gaussian={k: float(np.median(v)) for k, v in gaussian.items()},
        sampling=float(np.median(sampling)) if sampling else None,
        metadata={
            "machine": f"{platform.node()} {platform.machine()} {platform.processor()}".strip(),
            "date": datetime.datetime.now(tz=datetime.UTC).date().isoformat(),
            "repetitions": ",".join(str(r) for r in sorted(repetitions)),
        },
    )
