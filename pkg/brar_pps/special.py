from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special
from scipy.stats import qmc

from brar_pps.errors import IntegrationError


logger = logging.getLogger(__name__)

DEFAULT_ACCURACY = 1e-7

# Quasi-Monte-Carlo settings for d >= 3.
_QMC_RANDOMIZATIONS = 12
_QMC_START_POWER = 10
_QMC_MAX_POWER = 16
_QMC_ERROR_MULTIPLIER = 3.0

_PSD_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float

    def __str__(self) -> str:
        return f"{self.value:.10g} ± {self.error:.2g}"


class LogBetaCache:
    """Dense table of ln B(a, b) for integer arguments 1..max_arg.

    Row and column 0 hold NaN so that the table can be indexed with the arguments directly.
    """

    def __init__(self, max_arg: int) -> None:
        if max_arg < 1:
            msg = f"max_arg must be positive, got {max_arg}"
            raise ValueError(msg)
        self.max_arg = max_arg
        args = np.arange(max_arg + 1, dtype=float)
        args[0] = np.nan
        full = special.betaln(args[:, None], args[None, :])
        # Mirror the upper triangle so the table is exactly symmetric.
        table = np.triu(full) + np.triu(full, 1).T
        table.setflags(write=False)
        self.table = table

    def covers(self, *arrays: np.ndarray) -> bool:
        return all(int(np.max(a, initial=0)) <= self.max_arg for a in arrays)

    def __call__(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if self.covers(a, b):
            return self.table[a, b]
        return special.betaln(a, b)


@functools.lru_cache(maxsize=8)
def log_beta_cache(max_arg: int) -> LogBetaCache:
    return LogBetaCache(max_arg)


def log_beta(a: int, b: int, cache: LogBetaCache | None = None) -> float:
    if a < 1 or b < 1:
        msg = f"log_beta is defined for positive integers, got ({a}, {b})"
        raise ValueError(msg)
    if cache is not None and a <= cache.max_arg and b <= cache.max_arg:
        return float(cache.table[a, b])
    return float(special.betaln(a, b))


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularised incomplete Beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        msg = f"reg_inc_beta needs x in [0, 1], got {x}"
        raise ValueError(msg)
    if a <= 0 or b <= 0:
        msg = f"reg_inc_beta needs positive shape parameters, got ({a}, {b})"
        raise ValueError(msg)
    return float(special.betainc(a, b, x))


def std_normal_cdf(z):
    return special.ndtr(z)


def mvn_cdf_at_origin(
    mean,
    cov,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
) -> float:
    """P(Z <= 0 componentwise) for Z ~ N(mean, cov)."""
    return mvn_cdf_estimate(mean, cov, accuracy=accuracy, seed=seed).value


def mvn_cdf_estimate(
    mean,
    cov,
    accuracy: float = DEFAULT_ACCURACY,
    seed: int = 0,
) -> Estimate:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.shape[0]
    if d < 1 or cov.shape != (d, d):
        msg = f"Shape mismatch: mean has length {d}, covariance is {cov.shape}"
        raise ValueError(msg)
    if accuracy <= 0:
        msg = f"accuracy must be positive, got {accuracy}"
        raise ValueError(msg)
    _check_psd(cov)

    # Components with zero variance are point masses at their mean.
    variances = np.diag(cov)
    degenerate = variances <= 0
    if degenerate.any():
        if np.any(mean[degenerate] > 0):
            return Estimate(0.0, 0.0)
        keep = ~degenerate
        if not keep.any():
            return Estimate(1.0, 0.0)
        return mvn_cdf_estimate(mean[keep], cov[np.ix_(keep, keep)], accuracy=accuracy, seed=seed)

    if d == 1:
        return Estimate(float(std_normal_cdf(-mean[0] / math.sqrt(cov[0, 0]))), 0.0)
    if d == 2:  # noqa: PLR2004
        return _bivariate(mean, cov, accuracy)
    return _genz_qmc(mean, cov, accuracy, seed)


def _check_psd(cov: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(cov))))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=_PSD_TOLERANCE * scale):
        msg = "Covariance matrix is not symmetric"
        raise ValueError(msg)
    smallest = float(np.linalg.eigvalsh(cov)[0])
    if smallest < -_PSD_TOLERANCE * scale:
        msg = f"Covariance matrix is not positive semidefinite (smallest eigenvalue {smallest:.3g})"
        raise ValueError(msg)


def _bivariate(mean: np.ndarray, cov: np.ndarray, accuracy: float) -> Estimate:
    s1, s2 = np.sqrt(np.diag(cov))
    rho = float(np.clip(cov[0, 1] / (s1 * s2), -1.0, 1.0))
    h = -mean[0] / s1
    k = -mean[1] / s2
    residual = 1.0 - rho * rho
    if residual <= 1e-14:  # noqa: PLR2004
        if rho > 0:
            return Estimate(float(std_normal_cdf(min(h, k))), 0.0)
        return Estimate(max(0.0, float(std_normal_cdf(h) - std_normal_cdf(-k))), 0.0)

    root = math.sqrt(residual)

    def integrand(u: float) -> float:
        return math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi) * float(std_normal_cdf((k - rho * u) / root))

    value, error, *rest = integrate.quad(integrand, -np.inf, h, epsabs=accuracy, epsrel=0.0, limit=200, full_output=1)
    if len(rest) > 1:
        msg = f"Bivariate normal quadrature did not converge: {rest[1]}"
        raise IntegrationError(msg, achieved=error)
    return Estimate(min(1.0, max(0.0, value)), error)


def _sov_integrand(points: np.ndarray, chol: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Genz separation-of-variables transform of the orthant probability."""
    n, d = points.shape[0], chol.shape[0]
    tiny = np.finfo(float).tiny
    y = np.zeros((n, d))
    e = np.full(n, std_normal_cdf(upper[0] / chol[0, 0]))
    f = e.copy()
    for i in range(1, d):
        y[:, i - 1] = special.ndtri(np.clip(points[:, i - 1] * e, tiny, 1.0 - 1e-16))
        e = std_normal_cdf((upper[i] - y[:, :i] @ chol[i, :i]) / chol[i, i])
        f *= e
    return f


def _genz_qmc(mean: np.ndarray, cov: np.ndarray, accuracy: float, seed: int) -> Estimate:
    d = mean.shape[0]
    jitter = 1e-13 * float(np.max(np.diag(cov)))
    chol = np.linalg.cholesky(cov + jitter * np.eye(d))
    upper = -mean

    seeds = np.random.SeedSequence(seed).spawn(_QMC_RANDOMIZATIONS)
    engines = [qmc.Sobol(d - 1, scramble=True, seed=np.random.default_rng(s)) for s in seeds]
    sums = np.zeros(_QMC_RANDOMIZATIONS)
    drawn = 0
    error = math.inf
    for power in range(_QMC_START_POWER, _QMC_MAX_POWER + 1):
        batch = (1 << power) - drawn
        for r, engine in enumerate(engines):
            sums[r] += _sov_integrand(engine.random(batch), chol, upper).sum()
        drawn += batch
        means = sums / drawn
        error = _QMC_ERROR_MULTIPLIER * float(np.std(means, ddof=1)) / math.sqrt(_QMC_RANDOMIZATIONS)
        if error <= accuracy:
            return Estimate(float(np.clip(means.mean(), 0.0, 1.0)), error)
        logger.debug("QMC error %.3g above %.3g after %d points per randomisation", error, accuracy, drawn)

    msg = f"Multivariate normal CDF reached error {error:.3g}, above the requested {accuracy:.3g}"
    raise IntegrationError(msg, achieved=error)
