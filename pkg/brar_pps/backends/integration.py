from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
from scipy import integrate, special

from brar_pps.errors import IntegrationError
from brar_pps.special import DEFAULT_ACCURACY, Estimate


if TYPE_CHECKING:
    from brar_pps.state import TrialState

SUBDIVISION_LIMIT = 200


def numeric_integration_estimate(
    state: TrialState,
    arm: int,
    accuracy: float = DEFAULT_ACCURACY,
    limit: int = SUBDIVISION_LIMIT,
) -> Estimate:
    """Integrate the arm's Beta density times the other arms' Beta CDFs over [0, 1]."""
    if accuracy <= 0:
        msg = f"Accuracy must be positive, got {accuracy}"
        raise ValueError(msg)
    x = state.as_array().astype(float)
    a, b = x[arm]
    others = np.delete(x, arm, axis=0)
    log_norm = special.betaln(a, b)

    def integrand(p: float) -> float:
        density = np.exp(special.xlogy(a - 1, p) + special.xlog1py(b - 1, -p) - log_norm)
        return float(density * np.prod(special.betainc(others[:, 0], others[:, 1], p)))

    points = sorted({float(m) for m in x[:, 0] / x.sum(axis=1)})
    value, error, *rest = integrate.quad(
        integrand, 0.0, 1.0, epsabs=accuracy, epsrel=0.0, limit=limit, points=points, full_output=1
    )
    if len(rest) > 1:
        msg = f"Numerical integration stopped at error {error:.3g}: {rest[1]}"
        raise IntegrationError(msg, achieved=error)
    return Estimate(value, error)


def pps_numeric_integration(state: TrialState, arm: int, accuracy: float = DEFAULT_ACCURACY) -> float:
    return numeric_integration_estimate(state, arm, accuracy).value


def integration_superiority(state: TrialState, accuracy: float = DEFAULT_ACCURACY) -> np.ndarray:
    return np.array([pps_numeric_integration(state, j, accuracy) for j in range(state.k)])
