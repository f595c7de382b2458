from __future__ import annotations

import math

from scipy import special


def _log_binomial(n: int, r: int) -> float:
    return float(special.gammaln(n + 1) - special.gammaln(r + 1) - special.gammaln(n - r + 1))


def rs_error_bound(samples: int) -> float:
    """Mean absolute error of a K-sample repeated-sampling estimate at p = 1/2, the worst case up to 1 + O(1/K)."""
    if samples < 1:
        msg = f"The number of samples must be at least 1, got {samples}"
        raise ValueError(msg)
    return math.exp(_log_binomial(samples - 1, samples // 2) - samples * math.log(2))


def rs_mean_abs_error(p: float, samples: int) -> float:
    """E|X/K - p| for X ~ Binomial(K, p)."""
    if not 0.0 <= p <= 1.0:
        msg = f"p must lie in [0, 1], got {p}"
        raise ValueError(msg)
    if samples < 1:
        msg = f"The number of samples must be at least 1, got {samples}"
        raise ValueError(msg)
    l = math.floor(p * samples) + 1  # noqa: E741
    if p == 0.0 or l > samples:
        return 0.0
    log_value = (
        math.log(2)
        + _log_binomial(samples - 1, l - 1)
        + float(special.xlogy(l, p))
        + float(special.xlog1py(samples - l + 1, -p))
    )
    return math.exp(log_value)


def ks_confidence_radius(samples: int, q: float = 0.5, delta: float = 0.05) -> float:
    """Radius eps with P(|estimate - truth| > eps) <= delta for a binary OC near q."""
    if samples < 1:
        msg = f"The number of samples must be at least 1, got {samples}"
        raise ValueError(msg)
    if not 0.0 < q < 1.0:
        msg = f"q must lie in (0, 1), got {q}"
        raise ValueError(msg)
    if delta <= 0:
        msg = f"delta must be positive, got {delta}"
        raise ValueError(msg)
    if delta >= 2:  # noqa: PLR2004
        return 0.0
    # Exponent rate; its limit at q = 1/2 is 2.
    if abs(1.0 - 2.0 * q) < 1e-9:  # noqa: PLR2004
        rate = 2.0
    else:
        rate = math.log((1.0 - q) / q) / (1.0 - 2.0 * q)
    return math.sqrt(math.log(2.0 / delta) / (samples * rate))
