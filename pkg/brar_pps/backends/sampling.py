from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from brar_pps.bounds import rs_error_bound
from brar_pps.special import Estimate
from brar_pps.streams import stream


if TYPE_CHECKING:
    from brar_pps.state import TrialState


def posterior_draws(state: TrialState, samples: int, seed: int) -> np.ndarray:
    """`samples` x k matrix of independent Beta variates, one column per arm."""
    if samples < 1:
        msg = f"The number of samples must be at least 1, got {samples}"
        raise ValueError(msg)
    x = state.as_array()
    return stream(seed).beta(x[:, 0], x[:, 1], size=(samples, state.k))


def sampling_superiority(state: TrialState, samples: int, seed: int = 0) -> np.ndarray:
    """Fraction of draws in which each arm is the strict maximum; ties count for no arm."""
    draws = posterior_draws(state, samples, seed)
    top = draws.max(axis=1)
    unique = (draws == top[:, None]).sum(axis=1) == 1
    winners = draws[unique].argmax(axis=1)
    return np.bincount(winners, minlength=state.k) / samples


def pps_repeated_sampling(state: TrialState, arm: int, samples: int, seed: int = 0) -> float:
    return float(sampling_superiority(state, samples, seed)[arm])


def sampling_estimate(state: TrialState, arm: int, samples: int, seed: int = 0) -> Estimate:
    return Estimate(pps_repeated_sampling(state, arm, samples, seed), rs_error_bound(samples))
