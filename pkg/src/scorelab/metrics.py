"""Model criteria: predictive power, stability, collinearity, significance.

Pure numpy throughout.  The statistics here feed the multi-criteria
assessment: Gini on both samples, the signed relative Gini delta,
variance inflation, pairwise correlation, condition indices, and the
worst coefficient p-value (the latter is produced by the fitting module
and only carried in :class:`ModelCriteria`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class ModelCriteria:
    """Everything assessed about one fitted model."""

    ar_train: float
    ar_valid: float
    ar_diff: float
    max_vif: float
    max_pearson: float
    max_cond_index: float
    max_pvalue: float

    def as_row(self) -> list[float]:
        return [
            self.ar_train,
            self.ar_valid,
            self.ar_diff,
            self.max_vif,
            self.max_pearson,
            self.max_cond_index,
            self.max_pvalue,
        ]

    FIELDS = (
        "ar_train",
        "ar_valid",
        "ar_diff",
        "max_vif",
        "max_pearson",
        "max_cond_index",
        "max_pvalue",
    )


def gini(scores, labels) -> float:
    """Accuracy ratio 2*AUC - 1, ties getting half credit.

    Rank-based: with average ranks r_i over the pooled sample,
    AUC = (sum of bad ranks - n_bad*(n_bad+1)/2) / (n_bad*n_good),
    which is O(n log n) and equals the pair-counting definition.
    Labels follow the convention bad = 1; positive Gini means bads
    score higher.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricsError("scores and labels must be equal-length 1-d arrays")
    n_bad = int(np.sum(labels == 1))
    n_good = int(np.sum(labels == 0))
    if n_bad + n_good != labels.size:
        raise MetricsError("labels must be 0/1")
    if n_bad == 0 or n_good == 0:
        raise MetricsError("gini needs both classes present")
    ranks = _average_ranks(scores)
    auc = (ranks[labels == 1].sum() - n_bad * (n_bad + 1) / 2.0) / (n_bad * n_good)
    return 2.0 * auc - 1.0


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    # midpoint of the 1-based rank range occupied by each tie run
    boundaries = np.concatenate(([True], sx[1:] != sx[:-1]))
    run_id = np.cumsum(boundaries) - 1
    starts = np.flatnonzero(boundaries)
    ends = np.append(starts[1:], x.size)
    mid = (starts + 1 + ends) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = mid[run_id]
    return ranks


def ar_diff(ar_train: float, ar_valid: float) -> float:
    """Signed relative Gini delta (train - valid)/train.

    Positive means the model lost power out of time; negative means the
    validation sample scored better.  Callers take the absolute value
    when they need a stability penalty.
    """
    if ar_train == 0:
        raise MetricsError("ar_diff undefined for ar_train = 0")
    return (ar_train - ar_valid) / ar_train


@dataclass
class CollinearityStats:
    max_vif: float
    max_pearson: float
    max_cond_index: float
    exact_collinear: bool = False


def collinearity(design: np.ndarray, *, intercept_col: int = 0) -> CollinearityStats:
    """VIF, pairwise correlation and condition-index maxima of a design.

    VIF_j = 1/(1 - R2_j) comes from the inverse of the correlation
    matrix of the non-intercept columns.  Condition indices follow the
    unit-length-column convention with the intercept kept in.  Exactly
    collinear designs report infinite VIF and set a flag rather than
    raising.
    """
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise MetricsError("design must be 2-d")
    n, p = design.shape
    keep = [j for j in range(p) if j != intercept_col]
    x = design[:, keep]

    cond = _condition_indices(design)
    max_cond = float(cond.max()) if cond.size else 1.0

    if x.shape[1] < 2:
        return CollinearityStats(1.0, 0.0, max_cond)

    sd = x.std(axis=0, ddof=0)
    if np.any(sd == 0):
        # a constant predictor duplicates the intercept
        return CollinearityStats(np.inf, 1.0, max_cond, exact_collinear=True)
    corr = np.corrcoef(x, rowvar=False)
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    max_pearson = float(np.max(np.abs(off)))

    eigvals = np.linalg.eigvalsh(corr)
    if eigvals[0] < 1e-14 * max(eigvals[-1], 1.0):
        return CollinearityStats(np.inf, max_pearson, max_cond, exact_collinear=True)
    vifs = np.diag(np.linalg.inv(corr))
    return CollinearityStats(float(vifs.max()), max_pearson, max_cond)


def _condition_indices(design: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(design, axis=0)
    if np.any(norms == 0):
        raise MetricsError("zero column in design")
    scaled = design / norms
    sing = np.linalg.svd(scaled, compute_uv=False)
    smallest = max(sing[-1], np.finfo(float).tiny)
    return sing[0] / np.maximum(sing, smallest)
