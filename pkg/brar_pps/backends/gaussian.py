from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

from brar_pps.special import DEFAULT_ACCURACY, Estimate, mvn_cdf_estimate, std_normal_cdf


if TYPE_CHECKING:
    from brar_pps.state import TrialState


def gaussian_moments(state: TrialState) -> tuple[np.ndarray, np.ndarray]:
    return state.means(), state.variances()


def gaussian_estimate(
    state: TrialState,
    arm: int,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
) -> Estimate:
    """Moment-matched normal approximation of P(arm is best)."""
    means, variances = gaussian_moments(state)
    others = np.arange(state.k) != arm
    if state.k == 2:  # noqa: PLR2004
        z = (means[arm] - means[others][0]) / math.sqrt(variances.sum())
        return Estimate(float(std_normal_cdf(z)), 0.0)
    # Z_j' = X_j' - X_arm for every other arm; the arm is best when Z <= 0.
    mean = means[others] - means[arm]
    cov = np.diag(variances[others]) + variances[arm]
    return mvn_cdf_estimate(mean, cov, accuracy=accuracy, seed=seed)


def pps_gaussian(state: TrialState, arm: int, accuracy: float = DEFAULT_ACCURACY, seed: int = 0) -> float:
    return gaussian_estimate(state, arm, accuracy, seed).value


def gaussian_superiority(state: TrialState, accuracy: float = DEFAULT_ACCURACY, seed: int = 0) -> np.ndarray:
    if state.k == 2:  # noqa: PLR2004
        p = pps_gaussian(state, 0)
        return np.array([p, 1.0 - p])
    return np.array([pps_gaussian(state, j, accuracy, seed) for j in range(state.k)])
