"""Logistic regression with inference, and attribute adjustment on top of it.

The estimator is plain maximum likelihood, found by iteratively reweighted
least squares with step halving.  Above the single fit sit two elimination
algorithms over indicator columns, backward and stepwise, and the twelve
named adjustment methods that pair an elimination run on a nested coding
with a final re-estimation under either the same nested scheme or the
reference (dummy) coding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit
from scipy.stats import chi2 as chi2_dist

from .coding import (
    DUMMY,
    INTERCEPT,
    NESTED_ASC,
    NESTED_DESC,
    NESTED_MONO,
    ColumnLabel,
    DesignMatrix,
    encode_indicator,
)

MAX_ITERATIONS = 50
BETA_TOL = 1e-8
SEPARATION_BOUND = 25.0  # |beta| on a unit-sd column beyond this is treated as divergence


class GlmError(ValueError):
    """Raised when a design cannot be estimated."""


@dataclass
class ModelFit:
    """A fitted logistic model together with its Wald inference.

    `labels` mirrors the design columns, intercept first.  `trail` keeps a
    human-readable record of any elimination steps that produced this fit.
    """

    labels: list[ColumnLabel]
    beta: np.ndarray
    covariance: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    wald_chi2: np.ndarray
    p_values: np.ndarray
    n_obs: int
    warnings: list[str] = field(default_factory=list)
    trail: list[str] = field(default_factory=list)
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def n_cols(self) -> int:
        return len(self.labels)

    def predict(self, values: np.ndarray) -> np.ndarray:
        if values.shape[1] != self.beta.shape[0]:
            raise GlmError("prediction design has the wrong number of columns")
        return expit(values @ self.beta)

    def max_pvalue(self) -> float:
        """Largest Wald p-value over the non-intercept columns.

        An intercept-only model carries no variable evidence at all; its
        worst p-value is reported as 1.0.
        """
        ps = [p for lab, p in zip(self.labels, self.p_values) if lab.scheme != INTERCEPT]
        return float(max(ps)) if ps else 1.0

    def text_block(self) -> str:
        state = "yes" if self.converged else "no"
        lines = [
            f"loglik={self.loglik:.6f} iterations={self.iterations} "
            f"converged={state} n_obs={self.n_obs}"
        ]
        for lab, b, p in zip(self.labels, self.beta, self.p_values):
            lines.append(f"  {lab.text():<28s} beta={b:+.6f}  p={p:.4g}")
        for note in self.trail:
            lines.append(f"  # {note}")
        for note in self.warnings:
            lines.append(f"  ! {note}")
        return "\n".join(lines)


def _loglik(y: np.ndarray, eta: np.ndarray) -> float:
    # divergent trial steps overflow here; callers treat nan/-inf as refusal
    with np.errstate(over="ignore", invalid="ignore"):
        return float(y @ eta - np.logaddexp(0.0, eta).sum())


def _dependent_columns(design: DesignMatrix) -> list[str]:
    r, perm = scipy.linalg.qr(design.values, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.values.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    dependent = sorted(int(j) for j in perm[rank:])
    return [design.labels[j].text() for j in dependent]


def fit(
    design: DesignMatrix,
    targets: np.ndarray,
    beta_start: np.ndarray | None = None,
    max_iterations: int = MAX_ITERATIONS,
    tol: float = BETA_TOL,
) -> ModelFit:
    """Maximum-likelihood logistic fit.

    Newton steps on the observed information with step halving whenever a
    full step would lower the log-likelihood; convergence once the largest
    coefficient change falls under `tol`.  Complete or quasi-complete
    separation is flagged on the returned fit rather than raised, so
    callers that only need predictions can still use it.
    """
    x = design.values
    y = np.asarray(targets, dtype=float).ravel()
    n, p = x.shape
    if y.shape[0] != n:
        raise GlmError("targets do not align with the design")
    if not np.isin(y, (0.0, 1.0)).all():
        raise GlmError("targets must be binary")
    if n <= p:
        raise GlmError(f"{n} rows cannot support {p} coefficients")

    beta = np.zeros(p) if beta_start is None else np.asarray(beta_start, dtype=float).copy()
    if beta.shape != (p,):
        raise GlmError("starting coefficients do not align with the design")
    scales = x.std(axis=0)
    scales[scales == 0.0] = 1.0
    eta = x @ beta
    ll = _loglik(y, eta)
    trace = [ll]
    warnings: list[str] = []
    converged = False
    iterations = 0

    for iteration in range(1, max_iterations + 1):
        iterations = iteration
        mu = expit(eta)
        w = mu * (1.0 - mu)
        score = x.T @ (y - mu)
        info = (x * w[:, None]).T @ x
        try:
            lower = np.linalg.cholesky(info)
            delta = scipy.linalg.cho_solve((lower, True), score)
        except np.linalg.LinAlgError:
            if iteration == 1:
                names = _dependent_columns(design)
                if names:
                    raise GlmError(
                        "singular information matrix; dependent columns: " + ", ".join(names)
                    ) from None
                # full-rank design, weights collapsed at the start point
            with np.errstate(over="ignore", invalid="ignore"):
                delta = np.linalg.pinv(info) @ score
            warnings.append("information matrix became singular; pseudo-inverse step taken")

        step = 1.0
        halvings = 0
        # NaN counts as a decrease: an overflowing step must not be accepted
        with np.errstate(over="ignore", invalid="ignore"):
            cand_beta = beta + delta
            cand_eta = x @ cand_beta
            cand_ll = _loglik(y, cand_eta)
            while not cand_ll >= ll - 1e-12 * (1.0 + abs(ll)) and halvings < 40:
                step *= 0.5
                halvings += 1
                cand_beta = beta + step * delta
                cand_eta = x @ cand_beta
                cand_ll = _loglik(y, cand_eta)
        if not cand_ll >= ll - 1e-12 * (1.0 + abs(ll)):
            # no ascent direction left at working precision
            converged = True
            break
        beta, eta, ll = cand_beta, cand_eta, cand_ll
        trace.append(ll)
        if step * float(np.abs(delta).max()) < tol:
            converged = True
            break
        if (np.abs(beta) * scales > SEPARATION_BOUND).any():
            break  # runaway coefficients; the flagging below reports it

    runaway = np.abs(beta) * scales > SEPARATION_BOUND
    if runaway.any():
        converged = False
        names = [design.labels[j].text() for j in np.flatnonzero(runaway)]
        warnings.append(
            "possible complete or quasi-complete separation on: " + ", ".join(names)
        )

    # a separated fit carries huge coefficients; the inference below may
    # overflow to inf, which the chi2/p-value guards already handle
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        mu = expit(eta)
        w = mu * (1.0 - mu)
        info = (x * w[:, None]).T @ x
        try:
            lower = np.linalg.cholesky(info)
            cov = scipy.linalg.cho_solve((lower, True), np.eye(p))
        except np.linalg.LinAlgError:
            cov = np.linalg.pinv(info)
            warnings.append("covariance taken from a pseudo-inverse of the information matrix")
        cov = (cov + cov.T) / 2.0

        variances = np.clip(np.diag(cov), 0.0, None)
        chi2 = np.where(variances > 0.0, beta**2 / variances, np.where(beta == 0.0, 0.0, np.inf))
    p_values = chi2_dist.sf(chi2, 1)
    p_values = np.where(np.isfinite(chi2), p_values, 0.0)

    return ModelFit(
        labels=list(design.labels),
        beta=beta,
        covariance=cov,
        loglik=ll,
        iterations=iterations,
        converged=converged,
        wald_chi2=chi2,
        p_values=p_values,
        n_obs=n,
        warnings=warnings,
        loglik_trace=trace,
    )


def _keep_columns(design: DesignMatrix, keep: list[int]) -> DesignMatrix:
    return DesignMatrix(
        design.values[:, keep].copy(),
        [design.labels[j] for j in keep],
        excluded=list(design.excluded),
        degenerate=list(design.degenerate),
    )


def prune_dependent(design: DesignMatrix) -> tuple[DesignMatrix, list[int], list[str]]:
    """Drop the columns a pivoted QR flags as exactly linearly dependent.

    Deterministically linked predictors can make indicator designs
    rank-deficient; the redundant columns carry no information of their
    own, so they leave before the fit, the way classical scoring tools
    zero aliased terms.  Returns the reduced design, the kept column
    indices, and the dropped column names.
    """
    r, perm = scipy.linalg.qr(design.values, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.values.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank >= design.n_cols:
        return design, list(range(design.n_cols)), []
    dependent = {int(j) for j in perm[rank:]}
    dependent.discard(0)  # the intercept stays whatever the pivoting says
    keep = [j for j in range(design.n_cols) if j not in dependent]
    dropped = [design.labels[j].text() for j in sorted(dependent)]
    return _keep_columns(design, keep), keep, dropped


def backward_adjust(design: DesignMatrix, targets: np.ndarray, stay_p: float = 0.05) -> ModelFit:
    """Remove, one at a time, the least significant indicator column.

    Only single columns leave the model; a variable keeps its other
    columns, so one weak attribute does not take the whole variable with
    it.  Ties on the p-value keep the earliest column.  A variable whose
    last column is removed is recorded in the fit warnings.
    """
    current = design
    result = fit(current, targets)
    trail: list[str] = []
    extra: list[str] = []
    while True:
        worst = None
        for j, lab in enumerate(current.labels):
            if lab.scheme == INTERCEPT:
                continue
            if result.p_values[j] > stay_p and (worst is None or result.p_values[j] > result.p_values[worst]):
                worst = j
        if worst is None:
            break
        label = current.labels[worst]
        trail.append(f"removed {label.text()} (wald p={result.p_values[worst]:.4g})")
        keep = [j for j in range(current.n_cols) if j != worst]
        start = np.delete(result.beta, worst)
        current = _keep_columns(current, keep)
        if label.variable not in current.variables():
            extra.append(f"variable {label.variable!r} lost its last column")
        result = fit(current, targets, beta_start=start)
    result.trail = trail
    result.warnings = result.warnings + extra
    return result


def _score_tests(
    x_in: np.ndarray,
    beta: np.ndarray,
    candidates: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """Rao score chi-square for adding each candidate column on its own."""
    eta = x_in @ beta
    mu = expit(eta)
    w = mu * (1.0 - mu)
    resid = y - mu
    u = candidates.T @ resid
    wx = x_in * w[:, None]
    info = x_in.T @ wx
    cross = candidates.T @ wx  # (m, p_in)
    try:
        solved = np.linalg.solve(info, cross.T)  # (p_in, m)
    except np.linalg.LinAlgError:
        # weights collapse under quasi-separation; keep testing anyway
        solved = np.linalg.lstsq(info, cross.T, rcond=None)[0]
    quad = np.einsum("ij,ji->i", cross, solved)
    own = (candidates * candidates * w[:, None]).sum(axis=0)
    variance = own - quad
    with np.errstate(divide="ignore", invalid="ignore"):
        chi2 = np.where(variance > 1e-12, u * u / variance, 0.0)
    return chi2


def stepwise_adjust(
    design: DesignMatrix,
    targets: np.ndarray,
    entry_p: float = 0.05,
    stay_p: float = 0.05,
) -> ModelFit:
    """Classic stepwise over indicator columns.

    Score-test entry of the best excluded column, Wald removal of
    columns that no longer hold up, repeated until no move is possible.
    Re-entering a column set that was already visited stops the loop, so
    the procedure always terminates.
    """
    y = np.asarray(targets, dtype=float).ravel()
    p = design.n_cols
    included = [0]
    visited = {frozenset(included)}
    current = _keep_columns(design, included)
    result = fit(current, y)
    trail: list[str] = []
    while True:
        moved = False
        excluded = [j for j in range(1, p) if j not in included]
        if excluded and entry_p > 0.0:
            chi2 = _score_tests(current.values, result.beta, design.values[:, excluded], y)
            pvals = chi2_dist.sf(chi2, 1)
            best = None
            for pos in range(len(excluded)):
                if pvals[pos] <= entry_p and (best is None or chi2[pos] > chi2[best]):
                    best = pos
            if best is not None:
                j = excluded[best]
                proposal = frozenset(included + [j])
                if proposal in visited:
                    break
                included = sorted(included + [j])
                visited.add(proposal)
                trail.append(f"entered {design.labels[j].text()} (score p={pvals[best]:.4g})")
                current = _keep_columns(design, included)
                result = fit(current, y)
                moved = True
        while True:
            worst = None
            for pos, j in enumerate(included):
                if current.labels[pos].scheme == INTERCEPT:
                    continue
                if result.p_values[pos] > stay_p and (
                    worst is None or result.p_values[pos] > result.p_values[worst]
                ):
                    worst = pos
            if worst is None:
                break
            j = included[worst]
            proposal = frozenset(v for v in included if v != j)
            trail.append(f"removed {design.labels[j].text()} (wald p={result.p_values[worst]:.4g})")
            included = [v for v in included if v != j]
            current = _keep_columns(design, included)
            result = fit(current, y, beta_start=np.delete(result.beta, worst))
            moved = True
            if proposal in visited:
                moved = False
                break
            visited.add(proposal)
        if not moved:
            break
    result.trail = trail
    return result


# -- the twelve adjustment methods -------------------------------------------

@dataclass(frozen=True)
class AdjustmentMethod:
    name: str
    estimation: str  # "nested" or "dummy"
    selection: str   # "backward" or "stepwise"
    coding: str      # the nested scheme the selection runs on

    def estimation_scheme(self) -> str:
        return self.coding if self.estimation == "nested" else DUMMY


_CODING_LETTER = {"A": NESTED_ASC, "D": NESTED_DESC, "M": NESTED_MONO}
_SELECTION_LETTER = {"B": "backward", "S": "stepwise"}
_ESTIMATION_LETTER = {"N": "nested", "D": "dummy"}

ADJUSTMENT_METHODS = tuple(
    AdjustmentMethod(
        name=e + s + c,
        estimation=_ESTIMATION_LETTER[e],
        selection=_SELECTION_LETTER[s],
        coding=_CODING_LETTER[c],
    )
    for e in "ND"
    for s in "BS"
    for c in "ADM"
)

METHODS_BY_NAME = {m.name: m for m in ADJUSTMENT_METHODS}


@dataclass
class AdjustmentResult:
    method: AdjustmentMethod
    fit: ModelFit
    variables: list[str]
    groupings: dict[str, dict[int, int]]
    selection_fit: ModelFit
    collapsed: list[str]  # variables reduced to a single group


def _merged_groupings(
    bmap,
    variables: list[str],
    selection_fit: ModelFit,
) -> tuple[dict[str, dict[int, int]], list[str]]:
    """Translate surviving boundary columns into per-variable groupings.

    A nested column at boundary b splits group ids <= b from the rest;
    dropping it welds those neighbours together.  Groups are renumbered
    1..k' in the original order.
    """
    survivors: dict[str, set[int]] = {name: set() for name in variables}
    for lab in selection_fit.labels:
        if lab.scheme == INTERCEPT or lab.boundary is None:
            continue
        survivors.setdefault(lab.variable, set()).add(lab.boundary)
    groupings: dict[str, dict[int, int]] = {}
    collapsed: list[str] = []
    for name in variables:
        vb = bmap.variables[name]
        ordered = sorted(vb.attributes)
        kept = survivors.get(name, set())
        grouping = {}
        for i, attr in enumerate(ordered):
            g = i + 1
            grouping[attr] = 1 + sum(1 for b in kept if b < g)
        groupings[name] = grouping
        if max(grouping.values()) == 1 and len(ordered) > 1:
            collapsed.append(name)
    return groupings, collapsed


def apply_adjustment(
    method: AdjustmentMethod,
    binned,
    bmap,
    variables: list[str],
    entry_p: float = 0.05,
    stay_p: float = 0.05,
) -> AdjustmentResult:
    """Run one named adjustment on binned training data.

    The selection pass runs on the method's nested coding; whatever
    boundaries it eliminates merge the adjacent attribute groups.  The
    merged grouping is then re-estimated under the method's estimation
    coding and that final fit is returned.
    """
    if method.name not in METHODS_BY_NAME:
        raise GlmError(f"unknown adjustment method {method.name!r}")
    design = encode_indicator(binned, bmap, method.coding, variables)
    y = binned.target()
    if method.selection == "backward":
        selection = backward_adjust(design, y, stay_p=stay_p)
    else:
        selection = stepwise_adjust(design, y, entry_p=entry_p, stay_p=stay_p)
    groupings, collapsed = _merged_groupings(bmap, variables, selection)
    final_design = encode_indicator(
        binned, bmap, method.estimation_scheme(), variables, grouping=groupings
    )
    final = fit(final_design, y)
    final.trail = list(selection.trail)
    if collapsed:
        final.warnings = final.warnings + [
            f"variable {name!r} collapsed to a single group" for name in collapsed
        ]
    return AdjustmentResult(
        method=method,
        fit=final,
        variables=list(variables),
        groupings=groupings,
        selection_fit=selection,
        collapsed=collapsed,
    )


def encode_adjusted(result: AdjustmentResult, binned, bmap) -> DesignMatrix:
    """Encode another dataset exactly the way the adjusted model was fitted."""
    return encode_indicator(
        binned,
        bmap,
        result.method.estimation_scheme(),
        result.variables,
        grouping=result.groupings,
    )


def run_adjustments(
    binned,
    bmap,
    variables: list[str],
    methods=None,
    entry_p: float = 0.05,
    stay_p: float = 0.05,
) -> dict[str, AdjustmentResult]:
    """The requested adjustments, sharing selection passes between them.

    Methods that differ only in the estimation coding reuse the same
    selection run, which halves the costly part.  With no `methods`
    argument all twelve run.
    """
    wanted = list(ADJUSTMENT_METHODS) if methods is None else list(methods)
    for m in wanted:
        if METHODS_BY_NAME.get(m.name) is not m:
            raise GlmError(f"unknown adjustment method {m!r}")
    y = binned.target()
    results: dict[str, AdjustmentResult] = {}
    passes = sorted({(m.selection, m.coding) for m in wanted})
    for selection_name, coding in passes:
        design = encode_indicator(binned, bmap, coding, variables)
        design, _, pre_dropped = prune_dependent(design)
        if selection_name == "backward":
            selection = backward_adjust(design, y, stay_p=stay_p)
        else:
            selection = stepwise_adjust(design, y, entry_p=entry_p, stay_p=stay_p)
        groupings, collapsed = _merged_groupings(bmap, variables, selection)
        for method in wanted:
            if (method.selection, method.coding) != (selection_name, coding):
                continue
            final_design = encode_indicator(
                binned, bmap, method.estimation_scheme(), variables, grouping=groupings
            )
            final = fit(final_design, y)
            final.trail = list(selection.trail)
            if pre_dropped:
                final.warnings = final.warnings + [
                    f"dropped dependent column {text} before selection" for text in pre_dropped
                ]
            if collapsed:
                final.warnings = final.warnings + [
                    f"variable {name!r} collapsed to a single group" for name in collapsed
                ]
            results[method.name] = AdjustmentResult(
                method=method,
                fit=final,
                variables=list(variables),
                groupings=groupings,
                selection_fit=selection,
                collapsed=collapsed,
            )
    return {m.name: results[m.name] for m in ADJUSTMENT_METHODS if m.name in results}


def run_all_adjustments(
    binned,
    bmap,
    variables: list[str],
    entry_p: float = 0.05,
    stay_p: float = 0.05,
) -> dict[str, AdjustmentResult]:
    """All twelve adjustments; see `run_adjustments`."""
    return run_adjustments(binned, bmap, variables, entry_p=entry_p, stay_p=stay_p)


# -- reporting helpers -------------------------------------------------------

def variable_lr_pvalues(design: DesignMatrix, targets: np.ndarray,
                        full_fit: ModelFit | None = None) -> dict[str, float]:
    """Likelihood-ratio p-value per variable, dropping all of its columns.

    Reporting only; the elimination algorithms work on single columns.
    """
    full = full_fit if full_fit is not None else fit(design, targets)
    out: dict[str, float] = {}
    for name in design.variables():
        cols = design.columns_of(name)
        keep = [j for j in range(design.n_cols) if j not in cols]
        reduced = fit(_keep_columns(design, keep), targets)
        lr = max(0.0, 2.0 * (full.loglik - reduced.loglik))
        out[name] = float(chi2_dist.sf(lr, len(cols)))
    return out


def sign_consistency(model: ModelFit) -> tuple[int, int]:
    """(consistent, total) count of variables whose nested betas share a sign.

    Zero coefficients count as agreeing with either sign.  Observed to
    hold on generated data; reported, never asserted.
    """
    by_var: dict[str, list[float]] = {}
    for lab, b in zip(model.labels, model.beta):
        if lab.scheme in (NESTED_ASC, NESTED_DESC, NESTED_MONO):
            by_var.setdefault(lab.variable, []).append(float(b))
    consistent = 0
    for betas in by_var.values():
        if all(b >= 0.0 for b in betas) or all(b <= 0.0 for b in betas):
            consistent += 1
    return consistent, len(by_var)
