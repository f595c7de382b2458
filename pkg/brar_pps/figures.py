from __future__ import annotations

import logging
from dataclasses import replace
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from brar_pps.backends.exact import pps_two_arm
from brar_pps.bounds import rs_mean_abs_error
from brar_pps.methods import PpsMethod
from brar_pps.oc import calibrate_pp, calibrate_ux, exact_ocs, simulate_ocs
from brar_pps.special import std_normal_cdf


if TYPE_CHECKING:
    from brar_pps.design import TrialDesign

logger = logging.getLogger(__name__)

ERROR_SURFACE_COLUMNS = (
    "arm0_patients",
    "arm1_patients",
    "ga_max_abs_error",
    "ga_mean_abs_error",
    "rs_max_mean_abs_error",
    "rs_mean_mean_abs_error",
)
IMPACT_COLUMNS = ("kind", "test", "threshold", "p0", "p1", "exact", "approx", "difference", "radius")


class FigureStudy(StrEnum):
    ERRORS = "fig1"
    RANDOMISATION = "fig2"
    TESTING = "fig3"


def _gaussian_two_arm(a, b, c, d):
    """Vectorised two-arm normal approximation of P(Beta(a, b) > Beta(c, d))."""
    m0, m1 = a / (a + b), c / (c + d)
    v0 = a * b / ((a + b) ** 2 * (a + b + 1))
    v1 = c * d / ((c + d) ** 2 * (c + d + 1))
    return std_normal_cdf((m0 - m1) / np.sqrt(v0 + v1))


def _cell_errors(n0: int, n1: int, samples: int) -> dict:
    a, c = np.meshgrid(np.arange(n0 + 1), np.arange(n1 + 1), indexing="ij")
    a, c = a.ravel() + 1, c.ravel() + 1
    b, d = n0 + 2 - a, n1 + 2 - c
    exact = np.array(
        [pps_two_arm((int(w), int(x)), (int(y), int(z))) for w, x, y, z in zip(a, b, c, d, strict=True)]
    )
    ga_error = np.abs(_gaussian_two_arm(a, b, c, d) - exact)
    rs_error = np.array([rs_mean_abs_error(float(np.clip(e, 0.0, 1.0)), samples) for e in exact])
    return {
        "arm0_patients": n0,
        "arm1_patients": n1,
        "ga_max_abs_error": float(ga_error.max()),
        "ga_mean_abs_error": float(ga_error.mean()),
        "rs_max_mean_abs_error": float(rs_error.max()),
        "rs_mean_mean_abs_error": float(rs_error.mean()),
    }


def error_surface(max_patients: int, resolution: int, samples: int) -> list[dict]:
    """GA and RS errors over all two-arm states with the given patients per arm, on a grid of per-arm totals."""
    if resolution < 1 or max_patients < 0:
        msg = f"Need resolution >= 1 and max_patients >= 0, got {resolution} and {max_patients}"
        raise ValueError(msg)
    grid = np.unique(np.linspace(0, max_patients, resolution).round().astype(int))
    rows = []
    for n0 in grid:
        for n1 in grid:
            rows.append(_cell_errors(int(n0), int(n1), samples))
        logger.info("Error surface row n0=%d done", n0)
    return rows


def worst_gaussian_error(total: int) -> tuple[float, tuple[int, int, int, int]]:
    """Largest |GA - exact| over two-arm states with `total` patients, with its counts (a, b, c, d)."""
    worst, argmax = -1.0, (0, 0, 0, 0)
    for a in range(total + 1):
        for b in range(total - a + 1):
            rest = total - a - b
            c = np.arange(rest + 1)
            d = rest - c
            ga = _gaussian_two_arm(a + 1, b + 1, c + 1, d + 1)
            for i in range(rest + 1):
                exact = pps_two_arm((a + 1, b + 1), (int(c[i]) + 1, int(d[i]) + 1))
                error = abs(float(ga[i]) - exact)
                if error > worst:
                    worst, argmax = error, (a, b, int(c[i]), int(d[i]))
    return worst, argmax


def _rate(design: TrialDesign, p: tuple[float, float], threshold: float, replications: int, seed: int) -> tuple:
    if design.rand_method.deterministic and design.test_method.deterministic:
        return exact_ocs(design, p, threshold), None
    report = simulate_ocs(design, p, replications, seed, threshold=threshold)
    return report, report.confidence_radius


def impact_rows(
    design: TrialDesign,
    approx: PpsMethod,
    study: FigureStudy,
    *,
    grid_step: float = 0.1,
    reference_p: float = 0.6,
    alpha: float = 0.05,
    replications: int = 1000,
    seed: int = 0,
) -> list[dict]:
    """Type I error curves and power differences when `approx` replaces exact randomisation or testing."""
    if design.k != 2:  # noqa: PLR2004
        msg = f"Impact studies are two-arm, got k={design.k}"
        raise ValueError(msg)
    exact_design = replace(design, rand_method=PpsMethod(), test_method=PpsMethod())
    role = "rand_method" if study is FigureStudy.RANDOMISATION else "test_method"
    approx_design = replace(exact_design, **{role: approx})
    thresholds = {
        "pp": calibrate_pp(exact_design, reference_p, alpha).threshold,
        "ux": calibrate_ux(exact_design, alpha, step=grid_step, refine_step=grid_step / 10).threshold,
    }
    grid = [float(p) for p in np.round(np.arange(0.0, 1.0 + grid_step / 2, grid_step), 12)]
    rows = []
    for test, threshold in thresholds.items():
        for p0 in grid:
            for p1 in grid:
                null = p0 == p1
                reference = exact_ocs(exact_design, (p0, p1), threshold)
                report, radius = _rate(approx_design, (p0, p1), threshold, replications, seed)
                exact_value = reference.rejection_rate if null else reference.power
                approx_value = report.rejection_rate if null else report.power
                rows.append(
                    {
                        "kind": "type_i_error" if null else "power",
                        "test": test,
                        "threshold": threshold,
                        "p0": p0,
                        "p1": p1,
                        "exact": exact_value,
                        "approx": approx_value,
                        "difference": approx_value - exact_value,
                        "radius": radius,
                    }
                )
        logger.info("%s impact rows for the %s test done", study, test)
    return rows

