from __future__ import annotations

from enum import StrEnum


FREQUENT_BLOCK_SIZE = 5
SHORT_BURN_IN_FRACTION = 1 / 8


class Priority(StrEnum):
    ACCURACY = "acc"
    MIX = "mix"
    COMPUTATION = "comp"


class Frequency(StrEnum):
    FREQUENT = "frequent"
    INFREQUENT = "infrequent"


class BurnIn(StrEnum):
    LONGER = "longer"
    SHORTER = "shorter"


class ArmBand(StrEnum):
    FEW = "<=7"
    SEVERAL = "8-12"
    MANY = ">=13"


# Columns: infrequent/longer, infrequent/shorter, frequent/longer, frequent/shorter.
COLUMNS = (
    (Frequency.INFREQUENT, BurnIn.LONGER),
    (Frequency.INFREQUENT, BurnIn.SHORTER),
    (Frequency.FREQUENT, BurnIn.LONGER),
    (Frequency.FREQUENT, BurnIn.SHORTER),
)

TABLE: dict[tuple[ArmBand, Priority], tuple[str, str, str, str]] = {
    (ArmBand.FEW, Priority.ACCURACY): ("Exact", "Exact", "Exact", "Exact"),
    (ArmBand.FEW, Priority.MIX): ("GA", "Exact", "Exact", "Exact"),
    (ArmBand.FEW, Priority.COMPUTATION): ("GA", "Exact/GA", "Exact/GA", "Exact"),
    (ArmBand.SEVERAL, Priority.ACCURACY): ("Exact", "Exact", "Exact", "Exact"),
    (ArmBand.SEVERAL, Priority.MIX): ("RS", "Exact", "Exact", "Exact"),
    (ArmBand.SEVERAL, Priority.COMPUTATION): ("RS", "Exact/RS", "Exact/RS", "Exact"),
    (ArmBand.MANY, Priority.ACCURACY): ("Exact", "Exact", "Exact", "Exact"),
    (ArmBand.MANY, Priority.MIX): ("RS", "RS", "RS", "Exact/RS"),
    (ArmBand.MANY, Priority.COMPUTATION): ("RS", "RS", "RS", "RS"),
}


def arm_band(k: int) -> ArmBand:
    if k < 2:  # noqa: PLR2004
        msg = f"A trial needs at least two arms, got k={k}"
        raise ValueError(msg)
    if k <= 7:  # noqa: PLR2004
        return ArmBand.FEW
    if k <= 12:  # noqa: PLR2004
        return ArmBand.SEVERAL
    return ArmBand.MANY


def classify_frequency(block_size: int, threshold: int = FREQUENT_BLOCK_SIZE) -> Frequency:
    return Frequency.FREQUENT if block_size <= threshold else Frequency.INFREQUENT


def classify_burn_in(k: int, burn_in: int, n: int, fraction: float = SHORT_BURN_IN_FRACTION) -> BurnIn:
    return BurnIn.SHORTER if k * burn_in <= n * fraction else BurnIn.LONGER


def recommend(k: int, frequency: Frequency, burn_in: BurnIn, priority: Priority) -> tuple[str, ...]:
    """Recommended method(s), best first; a cell like "Exact/GA" yields both."""
    cell = TABLE[arm_band(k), Priority(priority)][COLUMNS.index((Frequency(frequency), BurnIn(burn_in)))]
    return tuple(cell.split("/"))
