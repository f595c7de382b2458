from __future__ import annotations

from typing import TYPE_CHECKING

from brar_pps.backends.exact import (
    SubsetTable,
    apply_increment,
    exact_inferiority,
    exact_superiority,
    inferiority_pps,
    pps_single,
    pps_two_arm,
    run_path,
    subset_table_uniform,
)
from brar_pps.backends.gaussian import gaussian_estimate, gaussian_superiority, pps_gaussian
from brar_pps.backends.integration import (
    integration_superiority,
    numeric_integration_estimate,
    pps_numeric_integration,
)
from brar_pps.backends.sampling import pps_repeated_sampling, sampling_estimate, sampling_superiority
from brar_pps.methods import Method, PpsMethod
from brar_pps.special import Estimate


if TYPE_CHECKING:
    from collections.abc import Callable

    import numpy as np

    from brar_pps.special import LogBetaCache
    from brar_pps.state import TrialState

__all__ = [
    "BACKENDS",
    "SubsetTable",
    "apply_increment",
    "estimate",
    "exact_inferiority",
    "exact_superiority",
    "inferiority",
    "inferiority_pps",
    "pps_gaussian",
    "pps_numeric_integration",
    "pps_repeated_sampling",
    "pps_single",
    "pps_two_arm",
    "run_path",
    "subset_table_uniform",
    "superiority",
]


def _exact(state, method, seed, cache):  # noqa: ARG001
    return exact_superiority(state, cache)


def _gaussian(state, method, seed, cache):  # noqa: ARG001
    return gaussian_superiority(state, method.accuracy, seed)


def _sampling(state, method, seed, cache):  # noqa: ARG001
    return sampling_superiority(state, method.samples, seed)


def _integration(state, method, seed, cache):  # noqa: ARG001
    return integration_superiority(state, method.accuracy)


BACKENDS: dict[Method, Callable[[TrialState, PpsMethod, int, LogBetaCache | None], np.ndarray]] = {
    Method.EXACT: _exact,
    Method.GAUSSIAN: _gaussian,
    Method.SAMPLING: _sampling,
    Method.INTEGRATION: _integration,
    # A posterior draw picks each arm with its exact superiority probability.
    Method.POSTERIOR_DRAW: _exact,
}


def superiority(
    state: TrialState,
    method: PpsMethod,
    *,
    seed: int | None = None,
    cache: LogBetaCache | None = None,
) -> np.ndarray:
    """P(arm j is best) for every arm, using `method`. `seed` overrides the method's own seed."""
    return BACKENDS[method.tag](state, method, method.seed if seed is None else seed, cache)


def inferiority(
    state: TrialState,
    method: PpsMethod,
    *,
    seed: int | None = None,
    cache: LogBetaCache | None = None,
) -> np.ndarray:
    return superiority(state.swapped(), method, seed=seed, cache=cache)


def estimate(state: TrialState, arm: int, method: PpsMethod, cache: LogBetaCache | None = None) -> Estimate:
    """Single probability with the method's error figure."""
    match method.tag:
        case Method.GAUSSIAN:
            return gaussian_estimate(state, arm, method.accuracy, method.seed)
        case Method.SAMPLING:
            return sampling_estimate(state, arm, method.samples, method.seed)
        case Method.INTEGRATION:
            return numeric_integration_estimate(state, arm, method.accuracy)
        case _:
            focal, *opponents = [state.arm(arm)] + [state.arm(j) for j in range(state.k) if j != arm]
            return Estimate(pps_single(focal, opponents, cache), 0.0)
