from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import sys
import time
from pathlib import Path
from typing import TYPE_CHECKING

from brar_pps import __version__, backends
from brar_pps.bench import TIMING_COLUMNS, RuntimeModel, Timing, bench_single, bench_trials, fit_runtime_model
from brar_pps.config import RunConfig, load_config
from brar_pps.errors import ConfigError, IntegrationError, StateSpaceTooLarge
from brar_pps.figures import (
    ERROR_SURFACE_COLUMNS,
    IMPACT_COLUMNS,
    FigureStudy,
    error_surface,
    impact_rows,
    worst_gaussian_error,
)
from brar_pps.methods import DEFAULT_SAMPLES, Method, PpsMethod, parse_method
from brar_pps.oc import (
    OCMode,
    calibrate_pp,
    calibrate_ux,
    exact_ocs,
    simulate_ocs,
    simulate_replications,
    summarise_replications,
)
from brar_pps.recommend import BurnIn, Frequency, Priority, classify_burn_in, classify_frequency, recommend
from brar_pps.report import OutputFormat, read_csv, write_json, write_rows
from brar_pps.special import DEFAULT_ACCURACY
from brar_pps.state import TrialState


if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence
    from typing import TextIO

    from brar_pps.design import TrialDesign
    from brar_pps.trial import TrialSummary

logger = logging.getLogger(__name__)

EXIT_CONFIG = 3
EXIT_INFEASIBLE = 4

PPS_COLUMNS = ("k", "method", "value", "error", "seconds")
CALIBRATION_COLUMNS = ("test", "alpha", "p", "threshold", "type_i_error")
OC_COLUMNS = (
    "scenario",
    "mode",
    "true_p",
    "threshold",
    "superior_arm",
    "rejection_rate",
    "type_i_error",
    "power",
    "power_inferior",
    "epasa",
    "vpasa",
    "replications",
    "confidence_radius",
    "shrunk_radius",
    "epasa_se",
    "vpasa_se",
)
WORST_ERROR_COLUMNS = ("total", "ga_max_abs_error", "a", "b", "c", "d")
RUNTIME_COLUMNS = ("method", "k", "seconds")


def _pair(text: str) -> tuple[int, int]:
    values = _beta_parameters(text)
    if len(values) != 2:  # noqa: PLR2004
        msg = f"expected 'a,b', got {text!r}"
        raise argparse.ArgumentTypeError(msg)
    return values[0], values[1]


def _beta_parameters(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        msg = f"expected comma-separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from None
    if any(v < 1 for v in values):
        msg = f"Beta parameters must be positive integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg)
    return values


def _probabilities(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        msg = f"expected comma-separated probabilities, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from None


def _method_name(text: str) -> Method:
    try:
        return parse_method(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed, overrides the configuration")
    common.add_argument("--threads", type=int, help="worker processes for replications")
    common.add_argument("--out", type=Path, help="output file (default: stdout)")
    common.add_argument("--format", choices=[f.value for f in OutputFormat], help="output format (default: csv)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = argparse.ArgumentParser(
        prog="brar-pps",
        description="Posterior probabilities of superiority for Bayesian response-adaptive randomisation trials.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pps = sub.add_parser("pps", parents=[common], help="compute one posterior probability of superiority")
    pps.add_argument("--k", type=int, required=True, help="number of arms")
    pps.add_argument("--focal", type=_pair, required=True, help="Beta parameters a,b of the focal arm")
    pps.add_argument("--opp", type=_beta_parameters, required=True, help="a,b pairs of the other k-1 arms, flattened")
    pps.add_argument("--method", type=_method_name, default=Method.EXACT)
    pps.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="draws for repeated sampling")
    pps.add_argument("--accuracy", type=float, default=DEFAULT_ACCURACY, help="target error for GA and NI")

    simulate = sub.add_parser("simulate", parents=[common], help="simulate trials, one row per replication")
    simulate.add_argument("--p", type=_probabilities, action="append", help="response rates, repeatable")
    simulate.add_argument("--replications", type=int)

    calibrate = sub.add_parser("calibrate", parents=[common], help="calibrate the PP or UX superiority threshold")
    calibrate.add_argument("--test", choices=["pp", "ux"])
    calibrate.add_argument("--alpha", type=float)
    calibrate.add_argument("--p", type=float, help="null response rate for the PP test")

    oc = sub.add_parser("oc", parents=[common], help="operating characteristics per scenario")
    oc.add_argument("--p", type=_probabilities, action="append", help="response rates, repeatable")
    oc.add_argument("--mode", choices=[m.value for m in OCMode])
    oc.add_argument("--replications", type=int)
    oc.add_argument("--threshold", type=float)

    sub.add_parser("bench", parents=[common], help="time the methods on single probabilities and full trials")

    fit = sub.add_parser("fit-runtime", parents=[common], help="fit the runtime model to bench timings")
    fit.add_argument("timings", type=Path, nargs="?", help="CSV written by 'bench'")
    fit.add_argument("--reference", action="store_true", help="emit the reference-hardware constants instead")

    rec = sub.add_parser("recommend", parents=[common], help="look up the recommended method")
    rec.add_argument("--k", type=int, required=True)
    rec.add_argument("--frequency", choices=[f.value for f in Frequency])
    rec.add_argument("--burn-in", choices=[b.value for b in BurnIn])
    rec.add_argument("--priority", choices=[p.value for p in Priority], default=Priority.ACCURACY.value)
    rec.add_argument("--block-size", type=int, help="classify the analysis frequency from b")
    rec.add_argument("--burn-in-patients", type=int, help="classify the burn-in from B (needs --n)")
    rec.add_argument("--n", type=int)

    fig = sub.add_parser("figure-data", parents=[common], help="plot-ready grids for the error and impact studies")
    fig.add_argument("study", choices=[s.value for s in FigureStudy])
    fig.add_argument("--worst-total", type=int, action="append", help="exhaustive worst GA error at this total")
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    output = config.output
    if args.out is not None:
        output = dataclasses.replace(output, path=str(args.out))
    if args.format is not None:
        output = dataclasses.replace(output, format=OutputFormat(args.format))
    simulation, bench, figure = config.simulation, config.bench, config.figure
    if args.seed is not None:
        simulation = dataclasses.replace(simulation, seed=args.seed)
        bench = dataclasses.replace(bench, seed=args.seed)
        figure = dataclasses.replace(figure, seed=args.seed)
    if args.threads is not None:
        if args.threads < 1:
            msg = f"--threads must be at least 1, got {args.threads}"
            raise ConfigError(msg)
        simulation = dataclasses.replace(simulation, threads=args.threads)
    return dataclasses.replace(config, output=output, simulation=simulation, bench=bench, figure=figure)


@contextlib.contextmanager
def _output(config: RunConfig) -> Iterator[TextIO]:
    if config.output.path is None:
        yield sys.stdout
        return
    path = Path(config.output.path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        yield f


def _design(config: RunConfig, command: str) -> TrialDesign:
    if config.design is None:
        msg = f"'{command}' needs a [design] table in --config"
        raise ConfigError(msg)
    return config.design


def _scenarios(config: RunConfig, extra: Sequence[tuple[float, ...]] | None, command: str) -> list[tuple[float, ...]]:
    scenarios = list(extra) if extra else list(config.simulation.scenarios)
    if not scenarios:
        msg = f"'{command}' needs response rates: pass --p or set [simulation] scenarios"
        raise ConfigError(msg)
    return scenarios


# ---- commands ----


def cmd_pps(args: argparse.Namespace, config: RunConfig) -> None:
    state = TrialState((*args.focal, *args.opp))
    method = PpsMethod(
        tag=args.method,
        samples=args.samples,
        seed=args.seed if args.seed is not None else 0,
        accuracy=args.accuracy,
    )
    start = time.perf_counter()
    result = backends.estimate(state, 0, method)
    seconds = time.perf_counter() - start
    row = {"k": args.k, "method": str(method), "value": result.value, "error": result.error, "seconds": seconds}
    with _output(config) as out:
        write_rows([row], PPS_COLUMNS, out, config.output.format)
    print(f"P(arm 0 best | {state}) = {result} by {method} in {seconds * 1e3:.3f} ms", file=sys.stderr)


def _replication_columns(k: int) -> tuple[str, ...]:
    return (
        "scenario",
        "seed",
        "stop_patient",
        "decision",
        "best",
        "worst",
        "dropped",
        *(f"successes_{j}" for j in range(k)),
        *(f"failures_{j}" for j in range(k)),
        *(f"superiority_{j}" for j in range(k)),
    )


def _replication_row(scenario: int, summary: TrialSummary) -> dict:
    outcome = summary.outcome
    row = {
        "scenario": scenario,
        "seed": summary.seed,
        "stop_patient": summary.stop_patient,
        "decision": str(outcome.decision),
        "best": outcome.best,
        "worst": outcome.worst,
        "dropped": ";".join(map(str, outcome.dropped)),
    }
    for j, (s, f) in enumerate(zip(summary.successes, summary.failures, strict=True)):
        row[f"successes_{j}"] = s
        row[f"failures_{j}"] = f
    if summary.statistics is not None:
        for j, value in enumerate(summary.statistics.superiority):
            row[f"superiority_{j}"] = value
    return row


def _oc_row(scenario: int, report) -> dict:
    row = report.as_dict()
    row["scenario"] = scenario
    row["true_p"] = ";".join(repr(p) for p in report.true_p)
    row["mode"] = str(report.mode)
    return row


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> None:
    design = _design(config, "simulate")
    scenarios = _scenarios(config, args.p, "simulate")
    settings = config.simulation
    replications = args.replications if args.replications is not None else settings.replications
    if replications < 0:
        msg = f"replications must be non-negative, got {replications}"
        raise ConfigError(msg)

    rows, summaries = [], []
    for index, p in enumerate(scenarios):
        records = simulate_replications(design, p, replications, settings.seed, threads=settings.threads)
        rows.extend(_replication_row(index, r) for r in records)
        if not records:
            logger.warning("No replications for scenario %d; no summary", index)
            continue
        report = summarise_replications(design, p, records, delta=settings.delta, superior_arm=settings.superior_arm)
        summaries.append(_oc_row(index, report))
        print(
            f"scenario {index} p={report.true_p}: rejection {report.rejection_rate:.4%} "
            f"(± {report.confidence_radius:.4f}, shrunk ± {report.shrunk_radius:.4f}), EPASA {report.epasa:.1f}",
            file=sys.stderr,
        )

    with _output(config) as out:
        write_rows(rows, _replication_columns(design.k), out, config.output.format, summary=summaries)


def cmd_calibrate(args: argparse.Namespace, config: RunConfig) -> None:
    design = _design(config, "calibrate")
    settings = config.calibration
    test = args.test or settings.test
    alpha = args.alpha if args.alpha is not None else settings.alpha
    state_cap = config.oc.state_cap
    if test == "ux":
        result = calibrate_ux(
            design, alpha, step=settings.grid_step, refine_step=settings.refine_step, state_cap=state_cap
        )
    else:
        p = args.p if args.p is not None else settings.p
        result = calibrate_pp(design, p, alpha, state_cap=state_cap)
    row = {
        "test": test,
        "alpha": alpha,
        "p": result.p,
        "threshold": result.threshold,
        "type_i_error": result.type_i_error,
    }
    profile = [{"p": p, "threshold": c} for p, c in result.profile]
    with _output(config) as out:
        write_rows([row], CALIBRATION_COLUMNS, out, config.output.format, profile=profile)


def cmd_oc(args: argparse.Namespace, config: RunConfig) -> None:
    design = _design(config, "oc")
    scenarios = _scenarios(config, args.p, "oc")
    settings = config.simulation
    mode = OCMode(args.mode) if args.mode else config.oc.mode
    threshold = args.threshold if args.threshold is not None else config.oc.threshold
    replications = args.replications if args.replications is not None else settings.replications

    rows = []
    for index, p in enumerate(scenarios):
        if mode is OCMode.EXACT:
            report = exact_ocs(
                design, p, threshold, superior_arm=settings.superior_arm, state_cap=config.oc.state_cap
            )
        else:
            report = simulate_ocs(
                design,
                p,
                replications,
                settings.seed,
                threshold=threshold,
                delta=settings.delta,
                threads=settings.threads,
                superior_arm=settings.superior_arm,
            )
        rows.append(_oc_row(index, report))
    with _output(config) as out:
        write_rows(rows, OC_COLUMNS, out, config.output.format)


def _bench_methods(config: RunConfig) -> list[PpsMethod]:
    settings = config.bench
    try:
        return [
            PpsMethod(tag=parse_method(name), samples=settings.samples, seed=settings.seed, accuracy=settings.accuracy)
            for name in settings.methods
        ]
    except ValueError as e:
        msg = f"[bench] {e}"
        raise ConfigError(msg) from e


def cmd_bench(args: argparse.Namespace, config: RunConfig) -> None:  # noqa: ARG001
    settings = config.bench
    methods = _bench_methods(config)
    timings = bench_single(
        settings.single_k,
        settings.single_sizes,
        methods,
        repetitions=settings.repetitions,
        warmup=settings.warmup,
        preload=settings.preload,
    )
    trial_methods = [m for m in methods if m.tag is not Method.INTEGRATION]
    for scenario in settings.trials:
        timings += bench_trials(
            scenario.k,
            scenario.n,
            scenario.burn_in,
            scenario.block_size,
            trial_methods,
            replications=scenario.replications,
            repetitions=settings.repetitions,
            warmup=settings.warmup,
            seed=settings.seed,
        )
    with _output(config) as out:
        write_rows([t.row() for t in timings], TIMING_COLUMNS, out, config.output.format)


def cmd_fit_runtime(args: argparse.Namespace, config: RunConfig) -> None:
    if args.reference:
        model = RuntimeModel.reference_hardware()
    elif args.timings is None:
        msg = "fit-runtime needs a timings CSV or --reference"
        raise ConfigError(msg)
    else:
        try:
            rows = read_csv(args.timings)
        except OSError as e:
            msg = f"Cannot read timings {args.timings}: {e}"
            raise ConfigError(msg) from e
        model = fit_runtime_model(Timing.from_row(row) for row in rows)

    with _output(config) as out:
        if config.output.format is OutputFormat.JSON:
            write_json(model.to_dict(), out)
            return
        rows = [{"method": str(Method.EXACT), "k": k, "seconds": v} for k, v in sorted(model.exact.items())]
        rows += [{"method": str(Method.GAUSSIAN), "k": k, "seconds": v} for k, v in sorted(model.gaussian.items())]
        if model.sampling is not None:
            rows.append({"method": str(Method.SAMPLING), "k": None, "seconds": model.sampling})
        write_rows(rows, RUNTIME_COLUMNS, out, config.output.format)


def cmd_recommend(args: argparse.Namespace, config: RunConfig) -> None:
    frequency = args.frequency
    if frequency is None and args.block_size is not None:
        frequency = classify_frequency(args.block_size)
    burn_in = args.burn_in
    if burn_in is None and args.burn_in_patients is not None:
        if args.n is None:
            msg = "--burn-in-patients needs --n"
            raise ConfigError(msg)
        burn_in = classify_burn_in(args.k, args.burn_in_patients, args.n)
    if frequency is None or burn_in is None:
        msg = "recommend needs --frequency (or --block-size) and --burn-in (or --burn-in-patients with --n)"
        raise ConfigError(msg)

    methods = recommend(args.k, Frequency(frequency), BurnIn(burn_in), Priority(args.priority))
    row = {
        "k": args.k,
        "frequency": str(frequency),
        "burn_in": str(burn_in),
        "priority": args.priority,
        "methods": "/".join(methods),
    }
    with _output(config) as out:
        write_rows([row], ("k", "frequency", "burn_in", "priority", "methods"), out, config.output.format)


def cmd_figure_data(args: argparse.Namespace, config: RunConfig) -> None:
    settings = config.figure
    study = FigureStudy(args.study)
    if study is FigureStudy.ERRORS and args.worst_total:
        rows = []
        for total in args.worst_total:
            error, (a, b, c, d) = worst_gaussian_error(total)
            rows.append({"total": total, "ga_max_abs_error": error, "a": a, "b": b, "c": c, "d": d})
        columns = WORST_ERROR_COLUMNS
    elif study is FigureStudy.ERRORS:
        rows = error_surface(settings.max_patients, settings.resolution, settings.samples)
        columns = ERROR_SURFACE_COLUMNS
    else:
        try:
            approx = PpsMethod(tag=parse_method(settings.approx_method), samples=settings.samples, seed=settings.seed)
        except ValueError as e:
            msg = f"[figure] {e}"
            raise ConfigError(msg) from e
        rows = impact_rows(
            _design(config, "figure-data"),
            approx,
            study,
            grid_step=settings.grid_step,
            reference_p=settings.reference_p,
            alpha=settings.alpha,
            replications=settings.replications,
            seed=settings.seed,
        )
        columns = IMPACT_COLUMNS
    with _output(config) as out:
        write_rows(rows, columns, out, config.output.format)


COMMANDS = {
    "pps": cmd_pps,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "oc": cmd_oc,
    "bench": cmd_bench,
    "fit-runtime": cmd_fit_runtime,
    "recommend": cmd_recommend,
    "figure-data": cmd_figure_data,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "pps" and args.k < 2:  # noqa: PLR2004
        parser.error(f"--k must be at least 2, got {args.k}")
    if args.command == "pps" and len(args.opp) != 2 * (args.k - 1):
        parser.error(f"--opp needs {2 * (args.k - 1)} integers for k={args.k}, got {len(args.opp)}")
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args.config) if args.config is not None else RunConfig()
        config = _apply_overrides(config, args)
        COMMANDS[args.command](args, config)
    except StateSpaceTooLarge as e:
        print(f"brar-pps: {e} Reduce n or k, or rerun with --mode simulated.", file=sys.stderr)
        return EXIT_INFEASIBLE
    except IntegrationError as e:
        print(f"brar-pps: {e} Loosen --accuracy or choose another method.", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as e:
        # ConfigError, DesignError and argument-range errors from the library.
        print(f"brar-pps: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return 0
