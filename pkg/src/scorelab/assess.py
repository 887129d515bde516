"""Multi-criteria comparison of scoring techniques.

Every fitted model becomes a record of one technique; per technique the
best records by validation power form a pool, the pools are normalized
together, and each record gets a weighted distance to the ideal point,
the corner where every normalized criterion is 0.  Lower distance means
a better model.  Rankings, distribution summaries and the two-technique
scatter all read from those distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .glm import ADJUSTMENT_METHODS
from .metrics import ModelCriteria

TECHNIQUES = ("REG", "LOG", "GRP", *(m.name for m in ADJUSTMENT_METHODS))

# names of the normalized axes, in weight order
_COORDS = ("prediction", "stability", "collinearity", "significance")


class AssessError(ValueError):
    """Raised on malformed records or weight profiles."""


@dataclass(frozen=True)
class WeightProfile:
    prediction: float
    stability: float
    collinearity: float
    significance: float

    def __post_init__(self):
        vals = self.as_array()
        if (vals < 0).any():
            raise AssessError("weights must be non-negative")
        if abs(float(vals.sum()) - 1.0) > 1e-12:
            raise AssessError("weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.prediction, self.stability, self.collinearity, self.significance]
        )


EQUAL = WeightProfile(0.40, 0.40, 0.10, 0.10)
STABILITY_HEAVY = WeightProfile(0.25, 0.55, 0.10, 0.10)
PREDICTION_HEAVY = WeightProfile(0.55, 0.25, 0.10, 0.10)

WEIGHT_PRESETS = {
    "equal": EQUAL,
    "stability_heavy": STABILITY_HEAVY,
    "prediction_heavy": PREDICTION_HEAVY,
}


@dataclass
class ModelRecord:
    technique: str
    model_id: str
    variables: tuple[str, ...]
    criteria: ModelCriteria
    fit: object | None = None

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise AssessError(f"unknown technique label {self.technique!r}")


def top_pool(records: list[ModelRecord], k: int = 700) -> list[ModelRecord]:
    """Best k by validation power; ties prefer stability, then the model id."""
    if not records:
        return []
    labels = {r.technique for r in records}
    if len(labels) != 1:
        raise AssessError(f"pool mixes techniques: {sorted(labels)}")
    ordered = sorted(
        records,
        key=lambda r: (-r.criteria.ar_valid, abs(r.criteria.ar_diff), r.model_id),
    )
    return ordered[:k]


# -- normalization and distance ----------------------------------------------

def _minmax(values) -> tuple[float, float]:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return (math.nan, math.nan)
    return (min(finite), max(finite))


_RANGE_FIELDS = (
    "ar_valid",
    "abs_ar_diff",
    "max_vif",
    "max_pearson",
    "max_cond_index",
    "max_pvalue",
)


def _raw(record: ModelRecord, name: str) -> float:
    if name == "abs_ar_diff":
        return abs(record.criteria.ar_diff)
    return getattr(record.criteria, name)


def pool_ranges(records: list[ModelRecord]):
    """Min-max range per criterion over the pooled comparison set.

    Non-finite values stay out of the ranges; a criterion constant across
    the pool is reported so callers can surface the dead coordinate.
    """
    ranges: dict[str, tuple[float, float]] = {}
    warnings: list[str] = []
    for name in _RANGE_FIELDS:
        lo, hi = _minmax(_raw(r, name) for r in records)
        ranges[name] = (lo, hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            warnings.append(f"criterion {name} is constant across the pool; coordinate zeroed")
    return ranges, warnings


def _norm(value: float, rng: tuple[float, float], higher_is_better: bool = False) -> float:
    lo, hi = rng
    if not math.isfinite(value):
        return 1.0
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return 0.0
    x = (value - lo) / (hi - lo)
    x = min(max(x, 0.0), 1.0)
    return 1.0 - x if higher_is_better else x


def coordinates(record: ModelRecord, ranges: dict[str, tuple[float, float]]) -> np.ndarray:
    """The four normalized axes: prediction, stability, collinearity, significance."""
    d_pred = _norm(record.criteria.ar_valid, ranges["ar_valid"], higher_is_better=True)
    d_stab = _norm(abs(record.criteria.ar_diff), ranges["abs_ar_diff"])
    d_coll = (
        _norm(record.criteria.max_vif, ranges["max_vif"])
        + _norm(record.criteria.max_pearson, ranges["max_pearson"])
        + _norm(record.criteria.max_cond_index, ranges["max_cond_index"])
    ) / 3.0
    d_sig = _norm(record.criteria.max_pvalue, ranges["max_pvalue"])
    return np.array([d_pred, d_stab, d_coll, d_sig])


def weighted_distance(coords: np.ndarray, weights: WeightProfile) -> float:
    return float(math.sqrt(float(weights.as_array() @ (np.asarray(coords) ** 2))))


def ideal_distance(record: ModelRecord, pool: list[ModelRecord], weights: WeightProfile) -> float:
    """Distance from the pool's ideal corner; 0 means best-in-pool everywhere."""
    ranges, _ = pool_ranges(pool)
    return weighted_distance(coordinates(record, ranges), weights)


# -- reports -----------------------------------------------------------------

@dataclass(frozen=True)
class DistributionSummary:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    @classmethod
    def from_values(cls, values) -> "DistributionSummary":
        arr = np.asarray(list(values), dtype=float)
        qs = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
        return cls(*(float(q) for q in qs))


@dataclass
class ComparisonReport:
    weights: WeightProfile
    pools: dict[str, list[ModelRecord]]
    distances: dict[str, np.ndarray]
    ranking: list[tuple[str, DistributionSummary]]
    criterion_summaries: dict[str, dict[str, DistributionSummary]]
    ranges: dict[str, tuple[float, float]]
    warnings: list[str] = field(default_factory=list)


def compare_techniques(
    records: list[ModelRecord],
    weights: WeightProfile = EQUAL,
    k: int = 700,
) -> ComparisonReport:
    """Pool, normalize and rank every technique present in the records.

    Pools are capped per technique before the shared normalization, so a
    prolific technique cannot stretch the ranges with its long tail.
    Ranking ascends by median distance, ties on the technique label.
    """
    if not records:
        raise AssessError("no records to compare")
    grouped: dict[str, list[ModelRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.technique, []).append(rec)
    pools = {
        t: top_pool(grouped[t], k) for t in TECHNIQUES if t in grouped
    }
    pooled = [r for rs in pools.values() for r in rs]
    ranges, warnings = pool_ranges(pooled)
    distances = {
        t: np.array([weighted_distance(coordinates(r, ranges), weights) for r in rs])
        for t, rs in pools.items()
    }
    ranking = sorted(
        ((t, DistributionSummary.from_values(d)) for t, d in distances.items()),
        key=lambda item: (item[1].median, item[0]),
    )
    criterion_summaries = {
        name: {
            t: DistributionSummary.from_values(_raw(r, name) for r in rs)
            for t, rs in pools.items()
        }
        for name in _RANGE_FIELDS
    }
    return ComparisonReport(
        weights=weights,
        pools=pools,
        distances=distances,
        ranking=ranking,
        criterion_summaries=criterion_summaries,
        ranges=ranges,
        warnings=warnings,
    )


@dataclass
class HeadToHead:
    rows: list[tuple[str, float, float]]  # technique, ar_valid, ar_diff
    medians: dict[str, dict[str, float]]


def head_to_head(log_records: list[ModelRecord], nbm_records: list[ModelRecord]) -> HeadToHead:
    """The two-technique scatter data: power against stability.

    Emits one row per model plus per-technique medians of both axes, the
    absolute stability axis included since that is what "more stable"
    means.
    """
    if not log_records or not nbm_records:
        raise AssessError("head-to-head needs both pools non-empty")
    rows: list[tuple[str, float, float]] = []
    medians: dict[str, dict[str, float]] = {}
    for pool in (log_records, nbm_records):
        label = pool[0].technique
        for rec in pool:
            rows.append((rec.technique, rec.criteria.ar_valid, rec.criteria.ar_diff))
        medians[label] = {
            "ar_valid": float(np.median([r.criteria.ar_valid for r in pool])),
            "ar_diff": float(np.median([r.criteria.ar_diff for r in pool])),
            "abs_ar_diff": float(np.median([abs(r.criteria.ar_diff) for r in pool])),
        }
    return HeadToHead(rows=rows, medians=medians)
