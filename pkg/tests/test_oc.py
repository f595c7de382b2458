from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from brar_pps.bounds import ks_confidence_radius
from brar_pps.design import DropRule, TrialDesign, VarianceScaling, block_schedule, eset_design
from brar_pps.errors import DesignError, StateSpaceTooLarge
from brar_pps.methods import Method, PpsMethod
from brar_pps.oc import (
    OCMode,
    calibrate_pp,
    calibrate_ux,
    estimate_state_count,
    exact_ocs,
    forward_distribution,
    simulate_ocs,
    simulate_replications,
    summarise_replications,
)


# The oracle below computes probabilities by quadrature and applies the decision rules directly,
# so it shares nothing with the allocation and test code it checks.


def _params(design, counts):
    return [(a + counts[2 * j], b + counts[2 * j + 1]) for j, (a, b) in enumerate(design.prior_state.arms())]


def _extreme_probability(params, arm, *, highest):
    """P(arm has the highest (or lowest) response rate), by quadrature of the Beta densities."""
    a, b = params[arm]
    others = [ab for j, ab in enumerate(params) if j != arm]

    def integrand(x):
        cdfs = [stats.beta.cdf(x, c, d) for c, d in others]
        return stats.beta.pdf(x, a, b) * math.prod(c if highest else 1.0 - c for c in cdfs)

    value, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-14, limit=200)
    return value


def _first_max(values, arms):
    top = max(values[j] for j in arms)
    return next(j for j in arms if values[j] == top)


def _first_min(values, arms):
    low = min(values[j] for j in arms)
    return next(j for j in arms if values[j] == low)


def _oracle_allocation(design, params, counts, dropped):
    k = design.k
    probs = [_extreme_probability(params, j, highest=True) for j in range(k)]
    if design.tuning is not None:
        scaled = []
        for j, (a, b) in enumerate(params):
            variance = a * b / ((a + b) ** 2 * (a + b + 1))
            allocated = counts[2 * j] + counts[2 * j + 1]
            scaled.append((probs[j] * variance / (allocated + 1)) ** (1 / design.tuning.power))
        probs = scaled
    probs = [0.0 if j in dropped else v for j, v in enumerate(probs)]
    total = sum(probs)
    return [v / total for v in probs]


def _oracle_decision(design, params, dropped, *, final):
    """(decision, best, worst, newly dropped) at one analysis."""
    active = [j for j in range(design.k) if j not in dropped]
    if not active:
        return "futility", None, None, ()
    sup = [_extreme_probability(params, j, highest=True) for j in range(design.k)]

    if final and design.inferiority_threshold is not None:
        means = [a / (a + b) for a, b in params]
        inf = [_extreme_probability(params, j, highest=False) for j in range(design.k)]
        best, worst = _first_max(means, active), _first_min(means, active)
        superior = sup[best] > design.superiority_threshold
        inferior = best != worst and inf[worst] > design.inferiority_threshold
        if superior and inferior:
            return "composite", best, worst, ()
        if superior:
            return "superior", best, None, ()
        if inferior:
            return "inferior", None, worst, ()
        return "continue", None, None, ()

    best = _first_max(sup, active)
    if sup[best] > design.superiority_threshold:
        return "superior", best, None, ()
    if final or design.drop_rule is None:
        return "continue", None, None, ()
    rule = design.drop_rule
    newly = tuple(j for j in active if stats.beta.cdf(rule.p_low, *params[j]) >= rule.confidence)
    if len(newly) == len(active):
        return "futility", None, None, newly
    return ("drop" if newly else "continue"), None, None, newly


def _enumerate(design, p):
    """Every patient path of a small design: (weight, decision, best, worst, allocations, stop patient)."""
    k = design.k
    schedule = set(design.schedule)
    records = []

    def allocations(counts):
        return tuple(counts[2 * j] + counts[2 * j + 1] for j in range(k))

    def step(i, counts, dropped, probs, weight):
        if i == design.n:
            records.append((weight, "continue", None, None, allocations(counts), i))
            return
        if i < design.adaptive_start:
            choices = [(i % k, 1.0)]
        else:
            if (i - design.adaptive_start) % design.block_size == 0:
                probs = _oracle_allocation(design, _params(design, counts), counts, dropped)
            choices = [(j, probs[j]) for j in range(k) if probs[j] > 0]
        for arm, chosen in choices:
            for slot, likelihood in ((0, p[arm]), (1, 1 - p[arm])):
                w = weight * chosen * likelihood
                if w == 0:
                    continue
                after = list(counts)
                after[2 * arm + slot] += 1
                if i + 1 not in schedule:
                    step(i + 1, after, dropped, probs, w)
                    continue
                decision, best, worst, newly = _oracle_decision(
                    design, _params(design, after), dropped, final=i + 1 == design.n
                )
                if decision in {"superior", "inferior", "composite", "futility"}:
                    records.append((w, decision, best, worst, allocations(after), i + 1))
                else:
                    step(i + 1, after, dropped | set(newly), probs, w)

    step(0, [0] * (2 * k), frozenset(), None, 1.0)
    return records


def _brute_force(design, p):
    records = _enumerate(design, p)
    p = np.asarray(p)
    focus, weakest = int(np.argmax(p)), int(np.argmin(p))
    claims_best = [d in {"superior", "composite"} and best == focus for _, d, best, _, _, _ in records]
    claims_worst = [d in {"inferior", "composite"} and worst == weakest for _, d, _, worst, _, _ in records]
    weights = np.array([r[0] for r in records])
    credited = np.array(
        [
            alloc[focus] + (design.n - stop if claimed else 0)
            for (*_, alloc, stop), claimed in zip(records, claims_best, strict=True)
        ]
    )
    epasa = float(weights @ credited)
    return {
        "mass": float(weights.sum()),
        "rejection_rate": sum(r[0] for r in records if r[1] in {"superior", "inferior", "composite"}),
        "power": float(weights @ np.array(claims_best, dtype=float)),
        "power_inferior": float(weights @ np.array(claims_worst, dtype=float)),
        "epasa": epasa,
        "vpasa": float(weights @ (credited - epasa) ** 2),
    }


SMALL_DESIGNS = {
    "k2-final": TrialDesign(k=2, n=6, superiority_threshold=0.93),
    "k2-interim": TrialDesign(k=2, n=6, burn_in=1, block_size=2, analysis_schedule=(4, 6), superiority_threshold=0.93),
    "k2-every-block": TrialDesign(
        k=2, n=5, block_size=2, analysis_schedule=block_schedule(2, 5, 0, 2), superiority_threshold=0.93
    ),
    "k2-tuned": TrialDesign(k=2, n=5, block_size=2, tuning=VarianceScaling(2), superiority_threshold=0.93),
    "k3-final": TrialDesign(k=3, n=4, superiority_threshold=0.93),
    "k3-drop": TrialDesign(
        k=3, n=4, analysis_schedule=(2, 4), superiority_threshold=0.93, drop_rule=DropRule(0.5, 0.7)
    ),
    "k3-inferiority": TrialDesign(
        k=3, n=4, analysis_schedule=(3, 4), burn_in=1, superiority_threshold=0.93, inferiority_threshold=0.81
    ),
}


# ---- forward equations ----


class TestForwardEquations:
    @pytest.mark.parametrize("name", list(SMALL_DESIGNS))
    @pytest.mark.parametrize("scenario", ["null", "alternative"])
    def test_matches_path_enumeration(self, name, scenario):
        design = SMALL_DESIGNS[name]
        p = (0.4,) * design.k if scenario == "null" else tuple(np.linspace(0.2, 0.8, design.k))
        expected = _brute_force(design, p)
        report = exact_ocs(design, p)

        assert expected["mass"] == pytest.approx(1.0, abs=1e-12)
        assert report.mode is OCMode.EXACT
        assert report.rejection_rate == pytest.approx(expected["rejection_rate"], abs=1e-9)
        assert report.epasa == pytest.approx(expected["epasa"], abs=1e-9)
        assert report.vpasa == pytest.approx(expected["vpasa"], abs=1e-9)
        if scenario == "null":
            assert report.type_i_error == pytest.approx(expected["rejection_rate"], abs=1e-9)
            assert report.power is None
        else:
            assert report.type_i_error is None
            assert report.power == pytest.approx(expected["power"], abs=1e-9)
            if design.inferiority_threshold is not None:
                assert report.power_inferior == pytest.approx(expected["power_inferior"], abs=1e-9)

    @pytest.mark.parametrize("name", list(SMALL_DESIGNS))
    def test_mass_is_conserved(self, name):
        distribution = forward_distribution(SMALL_DESIGNS[name], (0.3,) * SMALL_DESIGNS[name].k)
        assert distribution.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert not distribution.live

    def test_threshold_override(self):
        design = SMALL_DESIGNS["k2-interim"]
        assert exact_ocs(design, (0.5, 0.5), threshold=1.0).rejection_rate == 0.0
        assert exact_ocs(design, (0.5, 0.5), threshold=0.0).threshold == 0.0

    def test_gaussian_test_statistic_is_allowed(self):
        design = TrialDesign(k=2, n=4, test_method=PpsMethod(Method.GAUSSIAN))
        assert 0.0 <= exact_ocs(design, (0.5, 0.5)).rejection_rate <= 1.0

    def test_sampling_methods_are_rejected(self):
        design = TrialDesign(k=2, n=4, rand_method=PpsMethod(Method.SAMPLING))
        with pytest.raises(DesignError, match="use simulation"):
            exact_ocs(design, (0.5, 0.5))

    def test_analyses_off_block_ends_are_rejected(self):
        design = TrialDesign(k=2, n=6, block_size=3, analysis_schedule=(4, 6))
        with pytest.raises(DesignError, match=r"block ends, got \[4\]"):
            exact_ocs(design, (0.5, 0.5))

    def test_state_cap(self):
        design = TrialDesign(k=3, n=100)
        with pytest.raises(StateSpaceTooLarge) as info:
            exact_ocs(design, (0.5, 0.5, 0.5), state_cap=1000)
        assert info.value.cap == 1000
        assert info.value.estimate == estimate_state_count(design)

    def test_state_count_estimate(self):
        assert estimate_state_count(TrialDesign(k=2, n=2, block_size=2)) == 1 + math.comb(5, 3)
        assert estimate_state_count(TrialDesign(k=2, n=2, burn_in=1)) == 4


# ---- simulated operating characteristics ----


class TestSimulated:
    def test_agrees_with_exact(self):
        design = SMALL_DESIGNS["k2-interim"]
        p = (0.3, 0.7)
        exact = exact_ocs(design, p)
        simulated = simulate_ocs(design, p, 4000, master_seed=1, delta=1e-6)
        assert simulated.mode is OCMode.SIMULATED
        assert simulated.replications == 4000
        assert abs(simulated.rejection_rate - exact.rejection_rate) <= simulated.confidence_radius
        assert abs(simulated.epasa - exact.epasa) <= 5 * simulated.epasa_se

    def test_radii(self):
        report = simulate_ocs(SMALL_DESIGNS["k2-final"], (0.5, 0.5), 200, delta=0.1)
        assert report.confidence_radius == ks_confidence_radius(200, 0.5, 0.1)
        assert report.shrunk_radius <= report.confidence_radius

    def test_reproducible_across_worker_counts(self):
        design = SMALL_DESIGNS["k3-drop"]
        serial = simulate_replications(design, (0.2, 0.5, 0.8), 24, 3, threads=1)
        parallel = simulate_replications(design, (0.2, 0.5, 0.8), 24, 3, threads=2)
        assert serial == parallel

    def test_single_replication_has_no_standard_errors(self):
        report = simulate_ocs(SMALL_DESIGNS["k2-final"], (0.5, 0.5), 1)
        assert report.epasa_se is None
        assert report.vpasa_se is None

    def test_requires_replications(self):
        with pytest.raises(ValueError, match="at least one replication"):
            simulate_ocs(SMALL_DESIGNS["k2-final"], (0.5, 0.5), 0)
        with pytest.raises(ValueError, match="zero replications"):
            summarise_replications(SMALL_DESIGNS["k2-final"], (0.5, 0.5), [])

    def test_superior_arm_override(self):
        design = SMALL_DESIGNS["k2-final"]
        report = exact_ocs(design, (0.5, 0.5), superior_arm=1)
        assert report.superior_arm == 1
        assert report.epasa == pytest.approx(3.0, abs=1e-9)


# ---- calibration ----


class TestCalibration:
    def test_pp_threshold_is_minimal(self):
        design = TrialDesign(k=2, n=6, analysis_schedule=(2, 4, 6))
        calibration = calibrate_pp(design, 0.5, 0.1)
        assert 0.0 < calibration.threshold < 1.0
        at = exact_ocs(design, (0.5, 0.5), calibration.threshold)
        assert at.rejection_rate <= 0.1 + 1e-12
        assert at.rejection_rate == pytest.approx(calibration.type_i_error, abs=1e-12)
        below = exact_ocs(design, (0.5, 0.5), calibration.threshold - 1e-9)
        assert below.rejection_rate > 0.1

    def test_alpha_one_allows_any_threshold(self):
        calibration = calibrate_pp(TrialDesign(k=2, n=4), 0.3, 1.0)
        assert calibration.threshold == 0.0
        assert calibration.type_i_error == pytest.approx(1.0)

    def test_alpha_zero(self):
        design = TrialDesign(k=2, n=4)
        calibration = calibrate_pp(design, 0.5, 0.0)
        assert calibration.type_i_error == 0.0
        assert exact_ocs(design, (0.5, 0.5), calibration.threshold).rejection_rate == 0.0

    def test_inferiority_design_uses_bisection(self):
        design = SMALL_DESIGNS["k3-inferiority"]
        calibration = calibrate_pp(design, 0.5, 0.2)
        assert calibration.type_i_error <= 0.2 + 1e-12
        assert exact_ocs(design, (0.5,) * 3, calibration.threshold).rejection_rate == pytest.approx(
            calibration.type_i_error
        )

    def test_ux_dominates_every_pp_threshold(self):
        design = TrialDesign(k=2, n=4, analysis_schedule=(2, 4))
        ux = calibrate_ux(design, 0.1, step=0.25, refine_step=0.05)
        thresholds = dict(ux.profile)
        assert {0.0, 0.25, 0.5, 0.75, 1.0} <= set(thresholds)
        assert ux.threshold == max(thresholds.values())
        assert thresholds[ux.p] == ux.threshold
        assert calibrate_pp(design, 0.25, 0.1).threshold == thresholds[0.25]

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_alpha_domain(self, alpha):
        with pytest.raises(ValueError, match="alpha"):
            calibrate_pp(TrialDesign(k=2, n=2), 0.5, alpha)

    def test_grid_domain(self):
        with pytest.raises(ValueError, match="Grid steps"):
            calibrate_ux(TrialDesign(k=2, n=2), 0.05, step=0.01, refine_step=0.1)


# ---- three-arm case study ----


@pytest.mark.slow
class TestCaseStudy:
    def test_type_i_error(self):
        report = simulate_ocs(eset_design(), (0.5, 0.5, 0.5), 10_000, master_seed=2024, threads=4)
        assert report.type_i_error == pytest.approx(0.0380, abs=0.006)

    def test_power(self):
        report = simulate_ocs(eset_design(), (0.5, 0.5, 0.65), 10_000, master_seed=2024, threads=4)
        assert report.power == pytest.approx(0.9073, abs=0.015)

    def test_gaussian_small_blocks_inflate_type_i_error(self):
        gaussian = PpsMethod(Method.GAUSSIAN)
        design = eset_design(burn_in=0, block_size=20, rand_method=gaussian, test_method=gaussian)
        report = simulate_ocs(design, (0.5, 0.5, 0.5), 10_000, master_seed=2024, threads=4)
        assert report.type_i_error == pytest.approx(0.1144, abs=0.012)
