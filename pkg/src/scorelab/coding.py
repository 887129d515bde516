"""Design-matrix construction for the three estimation families.

REG passes raw numerics through with train-mean imputation.  LOG maps
every binned attribute to its training logit, one column per variable.
The indicator family expands each variable into k-1 columns: DUMMY
against a lowest-risk reference, or one of three cumulative layouts
(descending, ascending, monotonic) whose columns mark group boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .binning import BinningMap, VariableBinning
from .dataio import Dataset

REG = "REG"
LOG = "LOG"
DUMMY = "DUMMY"
NESTED_DESC = "NESTED_DESC"
NESTED_ASC = "NESTED_ASC"
NESTED_MONO = "NESTED_MONO"
INTERCEPT = "INTERCEPT"

NESTED_SCHEMES = (NESTED_DESC, NESTED_ASC, NESTED_MONO)
INDICATOR_SCHEMES = (DUMMY, *NESTED_SCHEMES)


class CodingError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnLabel:
    variable: str
    scheme: str
    attribute: int | None = None  # DUMMY: the indicated attribute
    boundary: int | None = None   # NESTED_*: ids <= boundary sit left of the split

    def text(self) -> str:
        if self.scheme == INTERCEPT:
            return "intercept"
        if self.attribute is not None:
            return f"{self.variable}[{self.attribute}]"
        if self.boundary is not None:
            return f"{self.variable}|{self.boundary}"
        return self.variable


@dataclass
class DesignMatrix:
    values: np.ndarray            # (n, p) with the intercept in column 0
    labels: list[ColumnLabel]
    excluded: list[str] = field(default_factory=list)    # REG: categorical variables
    degenerate: list[str] = field(default_factory=list)  # single-attribute variables

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.labels):
            raise CodingError("labels do not align with design columns")
        if self.labels[0].scheme != INTERCEPT or not np.all(self.values[:, 0] == 1.0):
            raise CodingError("column 0 must be a constant intercept")
        if np.isnan(self.values).any():
            raise CodingError("design matrix contains missing values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def variables(self) -> list[str]:
        out = []
        for lab in self.labels[1:]:
            if lab.variable not in out:
                out.append(lab.variable)
        return out

    def columns_of(self, variable: str) -> list[int]:
        return [j for j, lab in enumerate(self.labels) if lab.variable == variable]


def _with_intercept(cols: list[np.ndarray], labels: list[ColumnLabel], n: int,
                    excluded=None, degenerate=None) -> DesignMatrix:
    values = np.column_stack([np.ones(n), *cols]) if cols else np.ones((n, 1))
    return DesignMatrix(
        values,
        [ColumnLabel("", INTERCEPT), *labels],
        excluded=excluded or [],
        degenerate=degenerate or [],
    )


# -- REG ---------------------------------------------------------------------

def train_means(dataset: Dataset, variables: list[str]) -> dict[str, float]:
    means = {}
    for name in variables:
        col = dataset.column(name)
        if col.kind != "numeric":
            continue
        seen = ~np.isnan(col.values)
        if not seen.any():
            raise CodingError(f"variable {name!r} is entirely missing in training data")
        means[name] = float(col.values[seen].mean())
    return means


def encode_reg(dataset: Dataset, variables: list[str], means: dict[str, float]) -> DesignMatrix:
    """Raw numeric design with train-mean imputation.

    Categorical variables do not enter REG; they come back in
    `excluded` so the caller can report them.
    """
    cols, labels, excluded = [], [], []
    for name in variables:
        col = dataset.column(name)
        if col.kind == "categorical":
            excluded.append(name)
            continue
        if col.kind != "numeric":
            raise CodingError(f"variable {name!r} has kind {col.kind!r}")
        if name not in means:
            raise CodingError(f"no training mean for variable {name!r}")
        values = col.values.copy()
        values[np.isnan(values)] = means[name]
        cols.append(values)
        labels.append(ColumnLabel(name, REG))
    return _with_intercept(cols, labels, dataset.n_rows, excluded=excluded)


# -- LOG ---------------------------------------------------------------------

def _attribute_values(binned: Dataset, vb: VariableBinning) -> np.ndarray:
    ids = binned.column(vb.name).values.astype(np.int64)
    known = set(vb.attributes)
    bad = [int(a) for a in np.unique(ids) if int(a) not in known]
    if bad:
        raise CodingError(f"attribute {bad[0]} of {vb.name!r} is absent from the binning map")
    return ids

def encode_log(
    binned: Dataset,
    bmap: BinningMap,
    variables: list[str] | None = None,
    use_woe: bool = False,
) -> DesignMatrix:
    """One column per variable: the training logit of the row's attribute.

    With `use_woe` the column carries weight of evidence in bad-over-good
    orientation instead; per variable that differs from the logit only by
    an additive constant.
    """
    if variables is None:
        variables = [v for v in bmap.variables if v in binned.names]
    cols, labels = [], []
    for name in variables:
        vb = bmap.variables[name]
        ids = _attribute_values(binned, vb)
        shift = 0.0
        if use_woe:
            total_bad = sum(a.n_bad + 0.5 for a in vb.attributes.values())
            total_good = sum(a.n_good + 0.5 for a in vb.attributes.values())
            shift = math.log(total_bad / total_good)
        lookup = np.zeros(max(vb.attributes) + 1)
        for a, st in vb.attributes.items():
            lookup[a] = st.logit - shift
        cols.append(lookup[ids])
        labels.append(ColumnLabel(name, LOG))
    return _with_intercept(cols, labels, binned.n_rows)


# -- indicator codings -------------------------------------------------------

def _effective_ids(vb: VariableBinning, ids: np.ndarray, grouping: dict[int, int] | None):
    if grouping is None:
        ordered = sorted(vb.attributes)
        remap = {a: i + 1 for i, a in enumerate(ordered)}
    else:
        missing = [a for a in vb.attributes if a not in grouping]
        if missing:
            raise CodingError(f"grouping for {vb.name!r} does not cover attribute {missing[0]}")
        remap = grouping
    k = max(remap.values())
    if set(remap.values()) != set(range(1, k + 1)):
        raise CodingError(f"grouping for {vb.name!r} has non-contiguous group ids")
    lookup = np.zeros(max(vb.attributes) + 1, dtype=np.int64)
    for a, g in remap.items():
        lookup[a] = g
    return lookup[ids], remap, k


def _group_rates(vb: VariableBinning, remap: dict[int, int], k: int) -> np.ndarray:
    good = np.zeros(k)
    bad = np.zeros(k)
    for a, st in vb.attributes.items():
        good[remap[a] - 1] += st.n_good
        bad[remap[a] - 1] += st.n_bad
    return bad / np.maximum(good + bad, 1.0)


def reference_attribute(vb: VariableBinning, grouping: dict[int, int] | None = None) -> int:
    """DUMMY reference: the (effective) attribute with the lowest default
    rate, ties to the lowest id."""
    _, remap, k = _effective_ids(vb, np.empty(0, dtype=np.int64), grouping)
    rates = _group_rates(vb, remap, k)
    return int(np.argmin(rates)) + 1  # argmin takes the first, and ids ascend


def encode_indicator(
    binned: Dataset,
    bmap: BinningMap,
    scheme: str,
    variables: list[str] | None = None,
    grouping: dict[str, dict[int, int]] | None = None,
) -> DesignMatrix:
    """k-1 indicator columns per variable in the requested layout.

    DUMMY indicates every non-reference attribute.  The NESTED layouts
    emit one column per boundary between adjacent attribute ids:
    descending marks rows above the boundary, ascending rows at or
    below it, monotonic mirrors ascending with boundaries walked from
    the top.  Single-attribute variables contribute no columns and are
    reported as degenerate.
    """
    if scheme not in INDICATOR_SCHEMES:
        raise CodingError(f"unknown indicator scheme {scheme!r}")
    if variables is None:
        variables = [v for v in bmap.variables if v in binned.names]
    cols, labels, degenerate = [], [], []
    for name in variables:
        vb = bmap.variables[name]
        ids = _attribute_values(binned, vb)
        gids, remap, k = _effective_ids(vb, ids, grouping.get(name) if grouping else None)
        if k == 1:
            degenerate.append(name)
            continue
        if scheme == DUMMY:
            ref = reference_attribute(vb, grouping.get(name) if grouping else None)
            for a in range(1, k + 1):
                if a == ref:
                    continue
                cols.append((gids == a).astype(float))
                labels.append(ColumnLabel(name, DUMMY, attribute=a))
        elif scheme == NESTED_DESC:
            for j in range(1, k):
                cols.append((gids >= j + 1).astype(float))
                labels.append(ColumnLabel(name, scheme, boundary=j))
        elif scheme == NESTED_ASC:
            for j in range(1, k):
                cols.append((gids <= j).astype(float))
                labels.append(ColumnLabel(name, scheme, boundary=j))
        else:  # NESTED_MONO: same splits, boundaries visited top-down
            for j in range(1, k):
                cols.append((gids <= k - j).astype(float))
                labels.append(ColumnLabel(name, scheme, boundary=k - j))
    return _with_intercept(cols, labels, binned.n_rows, degenerate=degenerate)


# -- scorecard export --------------------------------------------------------

@dataclass
class ScorecardRow:
    variable: str
    condition: str
    points: int


def _attribute_conditions(vb: VariableBinning) -> dict[int, str]:
    out: dict[int, str] = {}
    if vb.kind == "numeric":
        cuts = [repr(float(c)) for c in vb.cuts]
        n_value = len(vb.cuts) + 1
        for a in range(1, n_value + 1):
            if n_value == 1:
                out[a] = "any value"
            elif a == 1:
                out[a] = f"<= {cuts[0]}"
            elif a == n_value:
                out[a] = f"> {cuts[-1]}"
            else:
                out[a] = f"({cuts[a - 2]}, {cuts[a - 1]}]"
    else:
        groups: dict[int, list[str]] = {}
        for lv, g in vb.groups.items():
            groups.setdefault(g, []).append(lv)
        for g, lvs in groups.items():
            out[g] = ", ".join(sorted(lvs))
    if vb.missing_separate:
        out[vb.missing_attribute] = "missing"
    elif vb.missing_attribute in out:
        out[vb.missing_attribute] += " or missing"
    return out


def scorecard_table(
    labels: list[ColumnLabel],
    beta: np.ndarray,
    bmap: BinningMap,
    pdo: float = 20.0,
    base_points: float = 600.0,
    base_odds: float = 50.0,
) -> tuple[int, list[ScorecardRow]]:
    """Integer scorecard from a fitted LOG or indicator model.

    Standard points-to-double-odds scaling: `base_points` at good:bad
    odds of `base_odds`, `pdo` points halving the bad rate.  Partial
    scores are shifted per variable so the worst attribute scores 0;
    the returned base absorbs the shifts.
    """
    if len(labels) != beta.size:
        raise CodingError("labels do not align with coefficients")
    factor = pdo / math.log(2.0)
    base = base_points - factor * math.log(base_odds) - factor * float(beta[0])

    by_var: dict[str, list[int]] = {}
    for j, lab in enumerate(labels):
        if lab.scheme == INTERCEPT:
            continue
        if lab.scheme == REG:
            raise CodingError("scorecards only apply to LOG or indicator models")
        by_var.setdefault(lab.variable, []).append(j)

    rows: list[ScorecardRow] = []
    for name, cols in by_var.items():
        vb = bmap.variables[name]
        conditions = _attribute_conditions(vb)
        contrib: dict[int, float] = {}
        for a in sorted(vb.attributes):
            eta = 0.0
            for j in cols:
                lab = labels[j]
                if lab.scheme == LOG:
                    eta += float(beta[j]) * vb.attributes[a].logit
                elif lab.scheme == DUMMY:
                    eta += float(beta[j]) * (1.0 if a == lab.attribute else 0.0)
                elif lab.scheme == NESTED_DESC:
                    eta += float(beta[j]) * (1.0 if a > lab.boundary else 0.0)
                else:  # ascending and monotonic share the indicator shape
                    eta += float(beta[j]) * (1.0 if a <= lab.boundary else 0.0)
            contrib[a] = -factor * eta
        shift = min(contrib.values())
        base += shift
        for a in sorted(contrib):
            rows.append(ScorecardRow(name, conditions.get(a, f"attribute {a}"),
                                     int(round(contrib[a] - shift))))
    return int(round(base)), rows
