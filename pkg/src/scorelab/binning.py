"""Supervised discretization: entropy splits for numerics, rate merges
for categoricals, good/bad bookkeeping per attribute."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Column, Dataset


class BinningError(ValueError):
    pass


SMOOTHING = 0.5  # added to each of n_good/n_bad so logits stay finite


@dataclass
class AttributeStats:
    n_good: int
    n_bad: int

    @property
    def n(self) -> int:
        return self.n_good + self.n_bad

    @property
    def rate(self) -> float:
        return self.n_bad / self.n if self.n else 0.0

    @property
    def logit(self) -> float:
        return math.log((self.n_bad + SMOOTHING) / (self.n_good + SMOOTHING))


@dataclass
class VariableBinning:
    name: str
    kind: str  # numeric | categorical
    cuts: list[float] = field(default_factory=list)
    groups: dict[str, int] = field(default_factory=dict)
    missing_attribute: int = 1
    missing_separate: bool = False
    attributes: dict[int, AttributeStats] = field(default_factory=dict)
    degenerate: bool = False
    fallback_attribute: int = 1  # unseen categorical levels land here

    @property
    def attribute_ids(self) -> list[int]:
        return sorted(self.attributes)

    def n_attributes(self) -> int:
        return len(self.attributes)


@dataclass
class BinningMap:
    variables: dict[str, VariableBinning]
    n_train: int
    max_bins: int
    max_groups: int
    min_share: float

    def usable_variables(self) -> list[str]:
        return [n for n, v in self.variables.items() if not v.degenerate]


# -- entropy splitting -------------------------------------------------------

def _count_entropy(n_good: np.ndarray, n_bad: np.ndarray):
    """Entropy in nats, scaled by count: n*H(bad share). Vectorized."""
    n = n_good + n_bad
    with np.errstate(divide="ignore", invalid="ignore"):
        term_g = np.where(n_good > 0, n_good * np.log(n_good / n), 0.0)
        term_b = np.where(n_bad > 0, n_bad * np.log(n_bad / n), 0.0)
    return -(term_g + term_b)


def entropy_bin(values, targets, max_bins: int = 7, min_share: float = 0.05):
    """Cut points by best-first binary splitting on information gain.

    Missing values count toward the share floor but never host a cut.
    Stops at max_bins value bins, when no candidate leaves min_share on
    both sides, or when the best remaining gain is zero.  A variable
    with fewer than two distinct values comes back with no cuts and the
    degenerate flag set.
    """
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets)
    if values.shape != targets.shape:
        raise BinningError("values and targets must align")
    n_total = values.size
    seen = ~np.isnan(values)
    x, y = values[seen], targets[seen]
    if np.unique(x).size < 2:
        return [], True

    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    bad_prefix = np.concatenate(([0], np.cumsum(y)))
    min_count = max(1, math.ceil(min_share * n_total))

    def seg_entropy(lo, hi):
        b = bad_prefix[hi] - bad_prefix[lo]
        return float(_count_entropy(np.array(hi - lo - b), np.array(b)))

    def best_split(lo, hi):
        # candidate positions: boundaries between distinct neighbours
        pos = np.flatnonzero(x[lo + 1 : hi] != x[lo : hi - 1]) + lo + 1
        if pos.size == 0:
            return None
        left_n = pos - lo
        right_n = hi - pos
        ok = (left_n >= min_count) & (right_n >= min_count)
        pos = pos[ok]
        if pos.size == 0:
            return None
        left_b = bad_prefix[pos] - bad_prefix[lo]
        right_b = bad_prefix[hi] - bad_prefix[pos]
        gains = (
            seg_entropy(lo, hi)
            - _count_entropy(pos - lo - left_b, left_b)
            - _count_entropy(hi - pos - right_b, right_b)
        )
        k = int(np.argmax(gains))
        return float(gains[k]), int(pos[k])

    segments = [(0, x.size)]
    cuts: list[float] = []
    while len(segments) < max_bins:
        best = None
        for si, (lo, hi) in enumerate(segments):
            cand = best_split(lo, hi)
            if cand and (best is None or cand[0] > best[0]):
                best = (cand[0], cand[1], si)
        if best is None or best[0] <= 0:
            break
        _, pos, si = best
        lo, hi = segments[si]
        segments[si : si + 1] = [(lo, pos), (pos, hi)]
        cuts.append(float(x[pos - 1] + x[pos]) / 2.0)
    return sorted(cuts), False


# -- categorical merging -----------------------------------------------------

def merge_categories(levels, targets, max_groups: int = 7, min_share: float = 0.05):
    """Group levels by risk: sort on default rate, then merge adjacent
    groups until the group count and every share respect the limits.
    Size violations absorb the smallest group into its closer-rate
    neighbour; the count limit always removes the smallest rate gap.
    """
    levels = np.asarray(levels, dtype=object)
    targets = np.asarray(targets)
    if levels.shape != targets.shape:
        raise BinningError("levels and targets must align")
    seen = levels != None  # noqa: E711  (elementwise on object dtype)
    n_total = levels.size
    if not seen.any():
        raise BinningError("no non-missing level present")
    uniq, inverse = np.unique(levels[seen].astype(str), return_inverse=True)
    counts = np.bincount(inverse, minlength=uniq.size)
    bads = np.bincount(inverse, weights=np.asarray(targets)[seen].astype(float),
                       minlength=uniq.size).astype(np.int64)
    stats = sorted(
        (bads[i] / counts[i], str(uniq[i]), int(counts[i]), int(bads[i]))
        for i in range(uniq.size)
    )
    if len(stats) == 1:
        return {stats[0][1]: 1}, True

    groups = [{"levels": [lv], "n": n, "bad": b} for _, lv, n, b in stats]
    min_count = max(1, math.ceil(min_share * n_total))

    def rate(g):
        return g["bad"] / g["n"]

    def merge(i):
        a, b = groups[i], groups[i + 1]
        groups[i : i + 2] = [
            {"levels": a["levels"] + b["levels"], "n": a["n"] + b["n"], "bad": a["bad"] + b["bad"]}
        ]

    while len(groups) > 1:
        if len(groups) > max_groups:
            gaps = [rate(groups[i + 1]) - rate(groups[i]) for i in range(len(groups) - 1)]
            merge(int(np.argmin(gaps)))
        elif min(g["n"] for g in groups) < min_count:
            sizes = [g["n"] for g in groups]
            i = int(np.argmin(sizes))
            if i == 0:
                merge(0)
            elif i == len(groups) - 1:
                merge(i - 1)
            else:
                left_gap = rate(groups[i]) - rate(groups[i - 1])
                right_gap = rate(groups[i + 1]) - rate(groups[i])
                merge(i if right_gap < left_gap else i - 1)
        else:
            break

    grouping = {}
    for gid, g in enumerate(groups, start=1):
        for lv in g["levels"]:
            grouping[lv] = gid
    return grouping, False


# -- fitting and applying ----------------------------------------------------

def _closest_rate_attribute(attrs: dict[int, AttributeStats], target_rate: float) -> int:
    return min(attrs, key=lambda a: (abs(attrs[a].rate - target_rate), a))


def _fit_numeric(name, values, targets, max_bins, min_share) -> VariableBinning:
    cuts, degenerate = entropy_bin(values, targets, max_bins, min_share)
    vb = VariableBinning(name=name, kind="numeric", cuts=list(cuts), degenerate=degenerate)
    missing = np.isnan(values)
    ids = np.searchsorted(np.asarray(vb.cuts), values[~missing], side="left") + 1
    n_value_attrs = len(vb.cuts) + 1
    attrs = {
        a: AttributeStats(
            n_good=int(np.sum((ids == a) & (targets[~missing] == 0))),
            n_bad=int(np.sum((ids == a) & (targets[~missing] == 1))),
        )
        for a in range(1, n_value_attrs + 1)
    }
    _attach_missing(vb, attrs, missing, targets, values.size, min_share, n_value_attrs)
    return vb


def _fit_categorical(name, values, targets, max_groups, min_share) -> VariableBinning:
    missing = values == None  # noqa: E711
    grouping, degenerate = merge_categories(values, targets, max_groups, min_share)
    vb = VariableBinning(name=name, kind="categorical", groups=grouping, degenerate=degenerate)
    n_groups = max(grouping.values())
    uniq, inverse = np.unique(values[~missing].astype(str), return_inverse=True)
    codes = np.array([grouping[str(u)] for u in uniq], dtype=np.int64)[inverse]
    attrs = {
        a: AttributeStats(
            n_good=int(np.sum((codes == a) & (targets[~missing] == 0))),
            n_bad=int(np.sum((codes == a) & (targets[~missing] == 1))),
        )
        for a in range(1, n_groups + 1)
    }
    _attach_missing(vb, attrs, missing, targets, values.size, min_share, n_groups)
    vb.fallback_attribute = max(
        (a for a in vb.attributes if a <= n_groups),
        key=lambda a: (vb.attributes[a].n, -a),
    )
    # a lone group cannot carry signal even with a separate missing attribute
    if n_groups == 1 and not vb.missing_separate:
        vb.degenerate = True
    return vb


def _attach_missing(vb, attrs, missing, targets, n_total, min_share, n_value_attrs):
    n_miss = int(missing.sum())
    if n_miss == 0:
        vb.missing_separate = False
        overall = sum(a.n_bad for a in attrs.values()) / max(
            sum(a.n for a in attrs.values()), 1
        )
        vb.missing_attribute = _closest_rate_attribute(attrs, overall)
        vb.attributes = attrs
        return
    miss_bad = int(targets[missing].sum())
    if n_miss / n_total >= min_share:
        vb.missing_separate = True
        vb.missing_attribute = n_value_attrs + 1
        attrs[vb.missing_attribute] = AttributeStats(n_good=n_miss - miss_bad, n_bad=miss_bad)
    else:
        vb.missing_separate = False
        vb.missing_attribute = _closest_rate_attribute(attrs, miss_bad / n_miss)
        tgt = attrs[vb.missing_attribute]
        tgt.n_good += n_miss - miss_bad
        tgt.n_bad += miss_bad
    vb.attributes = attrs


def fit_binning(
    dataset: Dataset,
    max_bins: int = 7,
    max_groups: int = 7,
    min_share: float = 0.05,
    variables: list[str] | None = None,
) -> BinningMap:
    """Fit per-variable binnings on (training) data.

    Only numeric and categorical predictor columns participate unless an
    explicit variable list narrows them down.
    """
    if variables is None:
        variables = dataset.predictor_names()
    targets = dataset.target()
    out: dict[str, VariableBinning] = {}
    for name in variables:
        col = dataset.column(name)
        if col.kind == "numeric":
            out[name] = _fit_numeric(name, col.values, targets, max_bins, min_share)
        elif col.kind == "categorical":
            out[name] = _fit_categorical(name, col.values, targets, max_groups, min_share)
        else:
            raise BinningError(f"column {name!r} has kind {col.kind!r}, cannot bin")
    return BinningMap(
        variables=out,
        n_train=dataset.n_rows,
        max_bins=max_bins,
        max_groups=max_groups,
        min_share=min_share,
    )


def attribute_ids(vb: VariableBinning, column: Column) -> tuple[np.ndarray, int]:
    """Attribute id per row for one column; second element counts unseen levels."""
    if vb.kind == "numeric":
        values = column.values
        ids = np.empty(values.size, dtype=np.int64)
        missing = np.isnan(values)
        ids[~missing] = np.searchsorted(np.asarray(vb.cuts), values[~missing], side="left") + 1
        ids[missing] = vb.missing_attribute
        return ids, 0
    values = column.values
    ids = np.full(values.size, vb.missing_attribute, dtype=np.int64)
    seen = values != None  # noqa: E711
    if seen.any():
        uniq, inverse = np.unique(values[seen].astype(str), return_inverse=True)
        lookup = np.array(
            [vb.groups.get(str(u), vb.fallback_attribute) for u in uniq], dtype=np.int64
        )
        known = np.array([str(u) in vb.groups for u in uniq])
        unseen = int(np.sum(~known[inverse]))
        ids[seen] = lookup[inverse]
    else:
        unseen = 0
    return ids, unseen


def apply_binning(bmap: BinningMap, dataset: Dataset) -> tuple[Dataset, dict[str, int]]:
    """Replace mapped predictor columns with attribute ids.

    Other columns pass through untouched; unmapped predictors are
    dropped.  Returns the binned dataset and a per-variable counter of
    unseen categorical levels, which fall back to the largest group.
    """
    has_target = any(c.kind == "target" for c in dataset.columns)
    columns = []
    warnings: dict[str, int] = {}
    for col in dataset.columns:
        if col.name in bmap.variables:
            ids, unseen = attribute_ids(bmap.variables[col.name], col)
            if unseen:
                warnings[col.name] = unseen
            columns.append(Column(col.name, "numeric", ids.astype(float)))
        elif col.kind in ("numeric", "categorical"):
            continue
        else:
            columns.append(Column(col.name, col.kind, col.values.copy()))
    return Dataset(columns, require_target=has_target), warnings


# -- text serialization ------------------------------------------------------

def binning_to_text(bmap: BinningMap) -> str:
    lines = [
        "# binning map",
        f"n_train = {bmap.n_train}",
        f"max_bins = {bmap.max_bins}",
        f"max_groups = {bmap.max_groups}",
        f"min_share = {bmap.min_share!r}",
    ]
    for name, vb in bmap.variables.items():
        if any(ch in name for ch in ",:=[]\n"):
            raise BinningError(f"variable name {name!r} cannot be serialized")
        lines += ["", f"[variable {name}]", f"kind = {vb.kind}"]
        lines.append(f"degenerate = {'yes' if vb.degenerate else 'no'}")
        if vb.kind == "numeric":
            lines.append("cuts = " + ", ".join(repr(float(c)) for c in vb.cuts))
        else:
            for lv in vb.groups:
                if any(ch in lv for ch in ",:=[]\n"):
                    raise BinningError(f"level {lv!r} of {name!r} cannot be serialized")
            lines.append("groups = " + ", ".join(f"{lv}:{g}" for lv, g in vb.groups.items()))
            lines.append(f"fallback = {vb.fallback_attribute}")
        mode = "separate" if vb.missing_separate else "merged"
        lines.append(f"missing = {mode} {vb.missing_attribute}")
        for a in vb.attribute_ids:
            st = vb.attributes[a]
            lines.append(
                f"attr {a}: n_good={st.n_good}, n_bad={st.n_bad}, logit={st.logit:.6f}"
            )
    return "\n".join(lines) + "\n"


_ATTR_RE = re.compile(r"attr (\d+): n_good=(\d+), n_bad=(\d+), logit=")


def binning_from_text(text: str) -> BinningMap:
    header: dict[str, str] = {}
    variables: dict[str, VariableBinning] = {}
    vb: VariableBinning | None = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[variable "):
            vname = line[len("[variable ") : -1]
            vb = VariableBinning(name=vname, kind="numeric")
            variables[vname] = vb
            continue
        m = _ATTR_RE.match(line)
        if m:
            if vb is None:
                raise BinningError(f"line {lineno}: attribute outside a variable block")
            vb.attributes[int(m.group(1))] = AttributeStats(
                n_good=int(m.group(2)), n_bad=int(m.group(3))
            )
            continue
        if "=" not in line:
            raise BinningError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if vb is None:
            header[key] = val
            continue
        if key == "kind":
            vb.kind = val
        elif key == "degenerate":
            vb.degenerate = val == "yes"
        elif key == "cuts":
            vb.cuts = [float(c) for c in val.split(",")] if val else []
        elif key == "groups":
            vb.groups = {}
            for part in val.split(","):
                lv, gid = part.strip().rsplit(":", 1)
                vb.groups[lv] = int(gid)
        elif key == "fallback":
            vb.fallback_attribute = int(val)
        elif key == "missing":
            mode, attr = val.split()
            vb.missing_separate = mode == "separate"
            vb.missing_attribute = int(attr)
        else:
            raise BinningError(f"line {lineno}: unknown key {key!r}")
    try:
        return BinningMap(
            variables=variables,
            n_train=int(header["n_train"]),
            max_bins=int(header["max_bins"]),
            max_groups=int(header["max_groups"]),
            min_share=float(header["min_share"]),
        )
    except KeyError as exc:
        raise BinningError(f"missing header field {exc.args[0]}") from None


def save_binning(bmap: BinningMap, path) -> None:
    Path(path).write_text(binning_to_text(bmap), encoding="utf-8")


def load_binning(path) -> BinningMap:
    return binning_from_text(Path(path).read_text(encoding="utf-8"))
