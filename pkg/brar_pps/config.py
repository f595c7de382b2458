from __future__ import annotations

import json
import tomllib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from brar_pps.design import DropRule, TrialDesign, VarianceScaling, block_schedule
from brar_pps.errors import ConfigError, DesignError
from brar_pps.methods import DEFAULT_SAMPLES, PpsMethod, parse_method
from brar_pps.oc import DEFAULT_STATE_CAP, OCMode
from brar_pps.report import OutputFormat
from brar_pps.special import DEFAULT_ACCURACY
from brar_pps.state import TrialState


if TYPE_CHECKING:
    from pathlib import Path


@dataclass(frozen=True)
class SimulationConfig:
    replications: int = 1000
    seed: int = 0
    threads: int = 1
    delta: float = 0.05
    scenarios: tuple[tuple[float, ...], ...] = ()
    superior_arm: int | None = None


@dataclass(frozen=True)
class CalibrationConfig:
    test: str = "pp"
    alpha: float = 0.05
    p: float = 0.5
    grid_step: float = 0.01
    refine_step: float = 0.001


@dataclass(frozen=True)
class OCConfig:
    mode: OCMode = OCMode.EXACT
    state_cap: int = DEFAULT_STATE_CAP
    threshold: float | None = None


@dataclass(frozen=True)
class TrialBenchConfig:
    k: int
    n: int
    burn_in: int = 0
    block_size: int = 1
    replications: int = 10


@dataclass(frozen=True)
class BenchConfig:
    repetitions: int = 5
    warmup: int = 1
    methods: tuple[str, ...] = ("exact", "gaussian", "sampling", "integration")
    samples: int = DEFAULT_SAMPLES
    accuracy: float = DEFAULT_ACCURACY
    preload: bool = True
    single_k: int = 2
    single_sizes: tuple[int, ...] = (100, 200, 400, 800)
    trials: tuple[TrialBenchConfig, ...] = ()
    seed: int = 0


@dataclass(frozen=True)
class FigureConfig:
    study: str = "fig1"
    max_patients: int = 60
    resolution: int = 13
    samples: int = DEFAULT_SAMPLES
    approx_method: str = "gaussian"
    grid_step: float = 0.1
    reference_p: float = 0.6
    alpha: float = 0.05
    replications: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    path: str | None = None
    format: OutputFormat = OutputFormat.CSV


@dataclass(frozen=True)
class RunConfig:
    design: TrialDesign | None = None
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    oc: OCConfig = field(default_factory=OCConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    figure: FigureConfig = field(default_factory=FigureConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_NUMBER = (int, float)
_METHOD_KEYS = {"method": str, "samples": int, "seed": int, "accuracy": _NUMBER}
_DESIGN_KEYS = {
    "k": int,
    "n": int,
    "priors": list,
    "burn_in": int,
    "block_size": int,
    "analysis_schedule": (list, str),
    "superiority_threshold": _NUMBER,
    "inferiority_threshold": _NUMBER,
    "randomisation": dict,
    "testing": dict,
    "tuning": dict,
    "drop_rule": dict,
}
_SECTIONS = {"design", "simulation", "calibration", "oc", "bench", "figure", "output"}


def _section(data: dict, name: str, schema: dict[str, type | tuple[type, ...]]) -> dict[str, Any]:
    """Validate one table: known keys only, each of the expected type."""
    if not isinstance(data, dict):
        msg = f"[{name}] must be a table"
        raise ConfigError(msg)
    if unknown := sorted(set(data) - set(schema)):
        msg = f"Unknown key(s) in [{name}]: {', '.join(unknown)}"
        raise ConfigError(msg)
    for key, value in data.items():
        expected = schema[key]
        # bool is an int subclass; reject it where a number is wanted.
        if not isinstance(value, expected) or (isinstance(value, bool) and expected is not bool):
            msg = f"[{name}] {key} has the wrong type: {value!r}"
            raise ConfigError(msg)
    return data


def _dataclass_schema(cls) -> dict[str, type | tuple[type, ...]]:
    kinds = {
        "int": int,
        "float": _NUMBER,
        "bool": bool,
        "str": str,
        "int | None": int,
        "float | None": _NUMBER,
        "str | None": str,
    }
    return {name: kinds.get(str(f.type), (list, str)) for name, f in cls.__dataclass_fields__.items()}


def _method(data: dict, name: str) -> PpsMethod:
    section = _section(data, name, _METHOD_KEYS)
    try:
        return PpsMethod(
            tag=parse_method(section.get("method", "exact")),
            samples=section.get("samples", DEFAULT_SAMPLES),
            seed=section.get("seed", 0),
            accuracy=float(section.get("accuracy", DEFAULT_ACCURACY)),
        )
    except ValueError as e:
        msg = f"[{name}] {e}"
        raise ConfigError(msg) from e


def parse_design(data: dict) -> TrialDesign:
    section = _section(data, "design", _DESIGN_KEYS)
    for key in ("k", "n"):
        if key not in section:
            msg = f"[design] is missing '{key}'"
            raise ConfigError(msg)
    k, n = section["k"], section["n"]
    burn_in = section.get("burn_in", 0)
    block_size = section.get("block_size", 1)

    priors = None
    if "priors" in section:
        try:
            priors = TrialState.from_arms((int(a), int(b)) for a, b in section["priors"])
        except (TypeError, ValueError) as e:
            msg = f"[design] priors must be a list of [a, b] pairs of positive integers: {e}"
            raise ConfigError(msg) from e

    schedule = section.get("analysis_schedule")
    if schedule == "blocks":
        schedule = block_schedule(k, n, burn_in, block_size)
    elif isinstance(schedule, str):
        msg = f"[design] analysis_schedule must be a list of patient counts or 'blocks', got {schedule!r}"
        raise ConfigError(msg)
    elif schedule is not None:
        schedule = tuple(schedule)

    tuning = None
    if "tuning" in section:
        tuning = VarianceScaling(**_section(section["tuning"], "design.tuning", {"power": int}))
    drop_rule = None
    if "drop_rule" in section:
        drop_rule = DropRule(
            **_section(section["drop_rule"], "design.drop_rule", {"p_low": _NUMBER, "confidence": _NUMBER})
        )

    try:
        return TrialDesign(
            k=k,
            n=n,
            priors=priors,
            burn_in=burn_in,
            block_size=block_size,
            analysis_schedule=schedule,
            superiority_threshold=float(section.get("superiority_threshold", 0.975)),
            inferiority_threshold=section.get("inferiority_threshold"),
            drop_rule=drop_rule,
            tuning=tuning,
            rand_method=_method(section.get("randomisation", {}), "design.randomisation"),
            test_method=_method(section.get("testing", {}), "design.testing"),
        )
    except DesignError as e:
        raise ConfigError(str(e)) from e


def _scenarios(values: list, name: str) -> tuple[tuple[float, ...], ...]:
    try:
        return tuple(tuple(float(p) for p in scenario) for scenario in values)
    except (TypeError, ValueError) as e:
        msg = f"[{name}] scenarios must be lists of response probabilities"
        raise ConfigError(msg) from e


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        msg = "A configuration document must be a table at the top level"
        raise ConfigError(msg)
    if unknown := sorted(set(data) - _SECTIONS):
        msg = f"Unknown section(s): {', '.join(unknown)}"
        raise ConfigError(msg)

    simulation = dict(_section(data.get("simulation", {}), "simulation", _dataclass_schema(SimulationConfig)))
    if "scenarios" in simulation:
        simulation["scenarios"] = _scenarios(simulation["scenarios"], "simulation")

    calibration = _section(data.get("calibration", {}), "calibration", _dataclass_schema(CalibrationConfig))
    if calibration.get("test", "pp") not in {"pp", "ux"}:
        msg = f"[calibration] test must be 'pp' or 'ux', got {calibration['test']!r}"
        raise ConfigError(msg)

    oc = dict(_section(data.get("oc", {}), "oc", {"mode": str, "state_cap": int, "threshold": _NUMBER}))
    try:
        oc["mode"] = OCMode(oc.get("mode", OCMode.EXACT))
    except ValueError as e:
        msg = f"[oc] mode must be 'exact' or 'simulated', got {oc['mode']!r}"
        raise ConfigError(msg) from e

    bench = dict(_section(data.get("bench", {}), "bench", _dataclass_schema(BenchConfig)))
    for key in ("methods", "single_sizes"):
        if key in bench:
            bench[key] = tuple(bench[key])
    if "trials" in bench:
        schema = _dataclass_schema(TrialBenchConfig)
        try:
            bench["trials"] = tuple(TrialBenchConfig(**_section(t, "bench.trials", schema)) for t in bench["trials"])
        except TypeError as e:
            msg = f"Invalid configuration: [bench.trials] {e}"
            raise ConfigError(msg) from e

    figure = _section(data.get("figure", {}), "figure", _dataclass_schema(FigureConfig))
    output = dict(_section(data.get("output", {}), "output", {"path": str, "format": str}))
    if "format" in output:
        try:
            output["format"] = OutputFormat(output["format"])
        except ValueError as e:
            msg = f"[output] format must be 'csv' or 'json', got {output['format']!r}"
            raise ConfigError(msg) from e

    try:
        return RunConfig(
            design=parse_design(data["design"]) if "design" in data else None,
            simulation=SimulationConfig(**simulation),
            calibration=CalibrationConfig(**calibration),
            oc=OCConfig(**oc),
            bench=BenchConfig(**bench),
            figure=FigureConfig(**figure),
            output=OutputConfig(**output),
        )
    except TypeError as e:
        msg = f"Invalid configuration: {e}"
        raise ConfigError(msg) from e


def load_config(path: Path) -> RunConfig:
    """Read a TOML or JSON run configuration, chosen by file suffix."""
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        elif path.suffix == ".toml":
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            msg = f"Cannot infer the configuration format of '{path.name}'. Use a .toml or .json file"
            raise ConfigError(msg)
    except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        msg = f"Cannot read configuration {path}: {e}"
        raise ConfigError(msg) from e
    return parse_config(data)
