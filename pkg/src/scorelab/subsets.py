"""Variable pre-selection and best-subsets search over single-column codings.

Pre-selection throws out variables whose one-dimensional power is too small
or too unstable between the train and validation windows.  The search then
ranks variable subsets of each requested size by a null-anchored score
chi-square, a criterion that is monotone in nested subsets and therefore
admits exact branch-and-bound pruning.  Small instances fall back to plain
enumeration.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .coding import INTERCEPT, DesignMatrix
from .metrics import gini

EXHAUSTIVE_CAP = 200_000  # enumerate when C(p, s) stays at or under this
_PRUNE_SLACK = 1e-9


class SubsetsError(ValueError):
    """Raised when selection inputs cannot produce a usable pool."""


# -- pre-selection -----------------------------------------------------------

@dataclass
class CandidatePool:
    members: list[str]
    train_gini: dict[str, float]
    valid_gini: dict[str, float]
    instability: dict[str, float]
    rejected: dict[str, str] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.members


def _single_columns(design: DesignMatrix) -> dict[str, np.ndarray]:
    cols: dict[str, np.ndarray] = {}
    for j, lab in enumerate(design.labels):
        if lab.scheme == INTERCEPT:
            continue
        if lab.variable in cols:
            raise SubsetsError(
                f"variable {lab.variable!r} occupies more than one design column"
            )
        cols[lab.variable] = design.values[:, j]
    return cols


def preselect(
    train_design: DesignMatrix,
    train_targets: np.ndarray,
    valid_design: DesignMatrix,
    valid_targets: np.ndarray,
    min_gini: float = 0.05,
    max_instability: float = 0.5,
) -> CandidatePool:
    """Keep variables strong and stable on their own.

    Power is the absolute one-column accuracy ratio; direction does not
    matter here.  Instability is (train - valid)/train of those ginis, so
    a variable that improves out of time always stays.
    """
    train_cols = _single_columns(train_design)
    valid_cols = _single_columns(valid_design)
    missing = [v for v in train_cols if v not in valid_cols]
    if missing:
        raise SubsetsError(f"variable {missing[0]!r} is absent from the validation design")
    members: list[str] = []
    g_tr: dict[str, float] = {}
    g_va: dict[str, float] = {}
    inst: dict[str, float] = {}
    rejected: dict[str, str] = {}
    for name, col in train_cols.items():
        tr = abs(gini(col, train_targets))
        va = abs(gini(valid_cols[name], valid_targets))
        g_tr[name] = tr
        g_va[name] = va
        ratio = (tr - va) / tr if tr > 0 else math.inf
        inst[name] = ratio
        if tr < min_gini:
            rejected[name] = f"train gini {tr:.4f} below {min_gini}"
        elif ratio > max_instability:
            rejected[name] = f"instability {ratio:.4f} above {max_instability}"
        else:
            members.append(name)
    if not members:
        raise SubsetsError(
            "no variables survive pre-selection; relax min_gini or max_instability"
        )
    return CandidatePool(
        members=members,
        train_gini=g_tr,
        valid_gini=g_va,
        instability=inst,
        rejected=rejected,
    )


# -- the search criterion ----------------------------------------------------

def _design_stats(design: DesignMatrix, targets: np.ndarray):
    cols = _single_columns(design)
    names = list(cols)
    x = np.column_stack([cols[n] for n in names]) if names else np.empty((design.n_rows, 0))
    y = np.asarray(targets, dtype=float).ravel()
    if y.shape[0] != x.shape[0]:
        raise SubsetsError("targets do not align with the design")
    ybar = y.mean()
    if not 0.0 < ybar < 1.0:
        raise SubsetsError("targets contain a single class")
    xc = x - x.mean(axis=0)
    z = y - ybar
    gram = xc.T @ xc
    u = xc.T @ z
    w = ybar * (1.0 - ybar)
    return names, gram, u, w


def _criterion(gram: np.ndarray, u: np.ndarray, w: float, idx) -> float:
    idx = list(idx)
    gs = gram[np.ix_(idx, idx)]
    us = u[idx]
    try:
        sol = np.linalg.solve(gs, us)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(gs, us, rcond=None)[0]
    return float(us @ sol / w)


def subset_criterion(design: DesignMatrix, targets: np.ndarray, variables) -> float:
    """Score chi-square of the given variables against the intercept-only null."""
    names, gram, u, w = _design_stats(design, targets)
    missing = [v for v in variables if v not in names]
    if missing:
        raise SubsetsError(f"unknown variable {missing[0]!r} in subset")
    idx = [names.index(v) for v in variables]
    if len(set(idx)) != len(idx):
        raise SubsetsError("subset repeats a variable")
    return _criterion(gram, u, w, idx)


# -- families ----------------------------------------------------------------

@dataclass(frozen=True)
class SubsetEntry:
    size: int
    rank: int
    criterion: float
    variables: tuple[str, ...]


@dataclass
class SubsetFamily:
    label: str
    top_k: int
    by_size: dict[int, list[SubsetEntry]]
    warnings: list[str] = field(default_factory=list)

    def sizes(self) -> list[int]:
        return sorted(self.by_size)

    def entries(self) -> list[SubsetEntry]:
        return [e for s in self.sizes() for e in self.by_size[s]]

    def total(self) -> int:
        return sum(len(v) for v in self.by_size.values())


class _TopTracker:
    """Keeps the best subsets seen, with a boundary for pruning.

    Records are compacted once they outgrow four times the capacity, so
    memory stays bounded while ties near the boundary are preserved.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.records: list[tuple[float, tuple[str, ...]]] = []
        self._sorted = False

    def add(self, crit: float, names: tuple[str, ...]) -> None:
        self.records.append((crit, names))
        self._sorted = False
        if len(self.records) > 4 * self.capacity:
            self._compact()

    def _compact(self) -> None:
        self.records.sort(key=lambda r: (-r[0], r[1]))
        del self.records[self.capacity:]
        self._sorted = True

    def boundary(self) -> float:
        if len(self.records) < self.capacity:
            return -math.inf
        if not self._sorted:
            self._compact()
        return self.records[-1][0]

    def full(self) -> bool:
        return len(self.records) >= self.capacity

    def final(self) -> list[tuple[float, tuple[str, ...]]]:
        self._compact()
        return list(self.records)


def _exhaustive_size(gram, u, w, names, size, tracker, chunk=20_000):
    p = len(names)
    combos = itertools.combinations(range(p), size)
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            break
        idx = np.array(block, dtype=np.intp)
        gs = gram[idx[:, :, None], idx[:, None, :]]
        us = u[idx]
        try:
            sol = np.linalg.solve(gs, us[..., None])[..., 0]
            crits = (us * sol).sum(axis=1) / w
        except np.linalg.LinAlgError:
            crits = np.array([_criterion(gram, u, w, row) for row in block])
        for row, crit in zip(block, crits):
            tracker.add(float(crit), tuple(sorted(names[j] for j in row)))


def _branch_and_bound_size(gram, u, w, names, size, tracker):
    p = len(names)
    singles = np.array([_criterion(gram, u, w, [j]) for j in range(p)])
    order = sorted(range(p), key=lambda j: (-singles[j], names[j]))

    def dfs(included: list[int], pos: int) -> None:
        if len(included) == size:
            crit = _criterion(gram, u, w, included)
            tracker.add(crit, tuple(sorted(names[j] for j in included)))
            return
        rest = order[pos:]
        if len(included) + len(rest) < size:
            return
        bound = _criterion(gram, u, w, included + rest)
        if tracker.full() and bound <= tracker.boundary() - _PRUNE_SLACK:
            return
        dfs(included + [rest[0]], pos + 1)
        dfs(included, pos + 1)

    dfs([], 0)


def best_subsets(
    design: DesignMatrix,
    targets: np.ndarray,
    sizes=range(6, 13),
    top_k: int = 100,
    method: str = "auto",
    label: str = "",
    exhaustive_cap: int = EXHAUSTIVE_CAP,
) -> SubsetFamily:
    """Top subsets of each size by the null score chi-square.

    `method` picks the search: "auto" enumerates whenever C(p, size) is at
    most `exhaustive_cap` and branches-and-bounds otherwise; the other two
    values force one path.  Ranking ties break on the sorted variable
    names, so results are deterministic.
    """
    if method not in ("auto", "exhaustive", "branch_and_bound"):
        raise SubsetsError(f"unknown search method {method!r}")
    if top_k < 1:
        raise SubsetsError("top_k must be positive")
    names, gram, u, w = _design_stats(design, targets)
    p = len(names)
    by_size: dict[int, list[SubsetEntry]] = {}
    warnings: list[str] = []
    for size in sizes:
        if size < 1:
            raise SubsetsError(f"subset size {size} is not positive")
        if size > p:
            warnings.append(f"size {size} exceeds the {p}-variable pool; skipped")
            continue
        tracker = _TopTracker(top_k)
        n_combos = math.comb(p, size)
        if method == "exhaustive" or (method == "auto" and n_combos <= exhaustive_cap):
            _exhaustive_size(gram, u, w, names, size, tracker)
        else:
            _branch_and_bound_size(gram, u, w, names, size, tracker)
        entries = [
            SubsetEntry(size=size, rank=r + 1, criterion=crit, variables=vars_)
            for r, (crit, vars_) in enumerate(tracker.final())
        ]
        by_size[size] = entries
    return SubsetFamily(label=label, top_k=top_k, by_size=by_size, warnings=warnings)


def grp_union(reg_family: SubsetFamily, log_family: SubsetFamily):
    """Both families end to end, duplicates kept, provenance attached."""
    out: list[tuple[str, SubsetEntry]] = []
    out.extend((reg_family.label or "REG", e) for e in reg_family.entries())
    out.extend((log_family.label or "LOG", e) for e in log_family.entries())
    return out


# -- serialization -----------------------------------------------------------

def family_to_csv(family: SubsetFamily, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["size", "rank", "criterion", "variables"])
        for entry in family.entries():
            writer.writerow(
                [entry.size, entry.rank, repr(entry.criterion), ",".join(entry.variables)]
            )


def family_from_csv(path, label: str = "") -> SubsetFamily:
    by_size: dict[int, list[SubsetEntry]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["size", "rank", "criterion", "variables"]:
            raise SubsetsError(f"unrecognized subset file header in {path}")
        for row in reader:
            if len(row) != 4:
                raise SubsetsError(f"malformed subset row in {path}: {row!r}")
            size, rank = int(row[0]), int(row[1])
            entry = SubsetEntry(
                size=size,
                rank=rank,
                criterion=float(row[2]),
                variables=tuple(row[3].split(",")) if row[3] else (),
            )
            by_size.setdefault(size, []).append(entry)
    for size, entries in by_size.items():
        if [e.rank for e in entries] != list(range(1, len(entries) + 1)):
            raise SubsetsError(f"subset ranks for size {size} are not 1..n in {path}")
    top_k = max((len(v) for v in by_size.values()), default=0)
    return SubsetFamily(label=label, top_k=top_k, by_size=by_size)
