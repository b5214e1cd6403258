"""Pure affinity arithmetic: loss, average/distance criteria, intervals, scores."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import EmptyInput, InsufficientSamples, NonPositiveDuration

DEFAULT_SCALE_MAX = 9.0

# Two-sided Student-t critical values, df = 1..30.
_T_TABLE: dict[float, tuple[float, ...]] = {
    0.80: (
        3.0777, 1.8856, 1.6377, 1.5332, 1.4759, 1.4398, 1.4149, 1.3968, 1.3830, 1.3722,
        1.3634, 1.3562, 1.3502, 1.3450, 1.3406, 1.3368, 1.3334, 1.3304, 1.3277, 1.3253,
        1.3232, 1.3212, 1.3195, 1.3178, 1.3163, 1.3150, 1.3137, 1.3125, 1.3114, 1.3104,
    ),
    0.90: (
        6.3138, 2.9200, 2.3534, 2.1318, 2.0150, 1.9432, 1.8946, 1.8595, 1.8331, 1.8125,
        1.7959, 1.7823, 1.7709, 1.7613, 1.7531, 1.7459, 1.7396, 1.7341, 1.7291, 1.7247,
        1.7207, 1.7171, 1.7139, 1.7109, 1.7081, 1.7056, 1.7033, 1.7011, 1.6991, 1.6973,
    ),
    0.95: (
        12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060, 2.2622, 2.2281,
        2.2010, 2.1788, 2.1604, 2.1448, 2.1314, 2.1199, 2.1098, 2.1009, 2.0930, 2.0860,
        2.0796, 2.0739, 2.0687, 2.0639, 2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423,
    ),
    0.98: (
        31.8205, 6.9646, 4.5407, 3.7469, 3.3649, 3.1427, 2.9980, 2.8965, 2.8214, 2.7638,
        2.7181, 2.6810, 2.6503, 2.6245, 2.6025, 2.5835, 2.5669, 2.5524, 2.5395, 2.5280,
        2.5176, 2.5083, 2.4999, 2.4922, 2.4851, 2.4786, 2.4727, 2.4671, 2.4620, 2.4573,
    ),
    0.99: (
        63.6567, 9.9248, 5.8409, 4.6041, 4.0321, 3.7074, 3.4995, 3.3554, 3.2498, 3.1693,
        3.1058, 3.0545, 3.0123, 2.9768, 2.9467, 2.9208, 2.8982, 2.8784, 2.8609, 2.8453,
        2.8314, 2.8188, 2.8073, 2.7969, 2.7874, 2.7787, 2.7707, 2.7633, 2.7564, 2.7500,
    ),
}


def t_critical(level: float, df: int) -> float:
    """Two-sided critical value of Student's t for ``df`` degrees of freedom.

    Tabulated for df <= 30; larger df use the normal quantile with the
    first four Cornish-Fisher correction terms, which is within 1e-4 of the
    exact value from df = 31 upward.
    """
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    if df <= 30:
        for tabled, row in _T_TABLE.items():
            if math.isclose(level, tabled, abs_tol=1e-9):
                return row[df - 1]
        raise ValueError(f"no t-table row for level {level}; supported: {sorted(_T_TABLE)}")
    z = statistics.NormalDist().inv_cdf(0.5 + level / 2.0)
    return (
        z
        + (z**3 + z) / (4 * df)
        + (5 * z**5 + 16 * z**3 + 3 * z) / (96 * df**2)
        + (3 * z**7 + 19 * z**5 + 17 * z**3 - 15 * z) / (384 * df**3)
        + (79 * z**9 + 776 * z**7 + 1482 * z**5 - 1920 * z**3 - 945 * z) / (92160 * df**4)
    )


@dataclass(frozen=True)
class PairMetrics:
    loss_first: float
    loss_second: float
    average: float
    distance: float


class AffinityClass(str, Enum):
    COEXIST = "coexist"
    CONDITIONAL = "conditional"
    AVOID = "avoid"


@dataclass(frozen=True)
class ClassificationThresholds:
    coexist_max_avg: float = 25.0
    coexist_max_distance: float = 25.0
    avoid_min_avg: float = 150.0

    def __post_init__(self) -> None:
        if not 0 <= self.coexist_max_avg < self.avoid_min_avg:
            raise ValueError("thresholds need 0 <= coexist_max_avg < avoid_min_avg")
        if self.coexist_max_distance < 0:
            raise ValueError("coexist_max_distance must be >= 0")

    def to_dict(self) -> dict[str, float]:
        return {
            "coexist_max_avg": self.coexist_max_avg,
            "coexist_max_distance": self.coexist_max_distance,
            "avoid_min_avg": self.avoid_min_avg,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ClassificationThresholds":
        return cls(
            coexist_max_avg=float(raw["coexist_max_avg"]),
            coexist_max_distance=float(raw["coexist_max_distance"]),
            avoid_min_avg=float(raw["avoid_min_avg"]),
        )


def loss_percent(baseline_mean: float, corun_mean: float) -> float:
    """Relative slowdown of a co-run against its solo baseline, in percent."""
    if not baseline_mean > 0 or not corun_mean > 0:
        raise NonPositiveDuration(
            f"durations must be positive (baseline={baseline_mean}, corun={corun_mean})"
        )
    return 100.0 * (corun_mean - baseline_mean) / baseline_mean


def pair_metrics(loss_first: float, loss_second: float) -> PairMetrics:
    return PairMetrics(
        loss_first=loss_first,
        loss_second=loss_second,
        average=(loss_first + loss_second) / 2.0,
        distance=abs(loss_first - loss_second),
    )


def confidence_interval(samples: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    n = len(samples)
    if n < 2:
        raise InsufficientSamples("confidence interval", n)
    mean = statistics.fmean(samples)
    sd = statistics.stdev(samples)
    half = t_critical(level, n - 1) * sd / math.sqrt(n)
    return (mean - half, mean + half)


def normalize_scores(values: Sequence[float], scale_max: float = DEFAULT_SCALE_MAX) -> list[float]:
    """Min-max map ``values`` onto ``[0, scale_max]``; all-equal input maps to 0."""
    if not values:
        raise EmptyInput("cannot normalize an empty list")
    if not scale_max > 0:
        raise ValueError("scale_max must be positive")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    span = hi - lo
    if math.isinf(span):
        # rescale first so the span fits in a float
        return normalize_scores([v / 2.0 for v in values], scale_max)
    return [min(scale_max, (v - lo) / span * scale_max) for v in values]


def classify(metrics: PairMetrics, thresholds: ClassificationThresholds | None = None) -> AffinityClass:
    thresholds = thresholds or ClassificationThresholds()
    average = max(metrics.average, 0.0)
    if average >= thresholds.avoid_min_avg:
        return AffinityClass.AVOID
    if average <= thresholds.coexist_max_avg and metrics.distance <= thresholds.coexist_max_distance:
        return AffinityClass.COEXIST
    return AffinityClass.CONDITIONAL
