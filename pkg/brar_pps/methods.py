from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum

from brar_pps.special import DEFAULT_ACCURACY


DEFAULT_SAMPLES = 10_000


class Method(StrEnum):
    EXACT = "exact"
    GAUSSIAN = "gaussian"
    SAMPLING = "sampling"
    INTEGRATION = "integration"
    POSTERIOR_DRAW = "posterior-draw"


ALIASES = {
    "ex": Method.EXACT,
    "ga": Method.GAUSSIAN,
    "rs": Method.SAMPLING,
    "ni": Method.INTEGRATION,
    "pd": Method.POSTERIOR_DRAW,
}

LABELS = {
    Method.EXACT: "EX",
    Method.GAUSSIAN: "GA",
    Method.SAMPLING: "RS",
    Method.INTEGRATION: "NI",
    Method.POSTERIOR_DRAW: "PD",
}


def parse_method(name: str) -> Method:
    key = name.strip().lower()
    if key in ALIASES:
        return ALIASES[key]
    try:
        return Method(key)
    except ValueError:
        choices = ", ".join([*Method, *ALIASES])
        msg = f"Unknown method '{name}'. Expected one of: {choices}"
        raise ValueError(msg) from None


@dataclass(frozen=True)
class PpsMethod:
    tag: Method = Method.EXACT
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    accuracy: float = DEFAULT_ACCURACY

    def __post_init__(self) -> None:
        if self.samples < 1:
            msg = f"The number of samples must be at least 1, got {self.samples}"
            raise ValueError(msg)
        if self.accuracy <= 0:
            msg = f"Accuracy must be positive, got {self.accuracy}"
            raise ValueError(msg)

    @property
    def deterministic(self) -> bool:
        return self.tag not in {Method.SAMPLING, Method.POSTERIOR_DRAW}

    def __str__(self) -> str:
        label = LABELS[self.tag]
        if self.tag is Method.SAMPLING:
            return f"{label}(K={self.samples})"
        if self.tag in {Method.GAUSSIAN, Method.INTEGRATION}:
            return f"{label}(accuracy={self.accuracy:g})"
        return label
