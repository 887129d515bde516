"""Seeded longitudinal consumer-credit portfolio simulator.

Accounts open in monthly vintages and migrate between delinquency
buckets under a row-stochastic transition matrix.  A sinusoidal macro
driver scales each row's worsening mass over time, so portfolio risk is
cyclic; a latent per-account score decides which accounts take the bad
migrations, so individual risk rank-orders by score while aggregate roll
rates still match the matrix.  Application variables are noisy proxies
of the latent score (the recoverable signal), plus pure noise columns.
Targets flag accounts that cross a days-past-due threshold within a
fixed window after the observation month.

Random streams are keyed per vintage as [seed, 11, v] and the monthly
migration lottery as [seed, 13, t], so output is reproducible
bit-for-bit and independent of any parallel schedule across vintages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import Column, Dataset


class GeneratorError(ValueError):
    pass


# -- state space -------------------------------------------------------------

@dataclass(frozen=True)
class Bucket:
    label: str
    dpd_lo: int | None  # None: not a delinquency state (paid off)
    dpd_hi: int | None


BUCKETS = (
    Bucket("CURRENT", 0, 0),
    Bucket("DPD1_30", 1, 30),
    Bucket("DPD31_60", 31, 60),
    Bucket("DPD61_90", 61, 90),
    Bucket("DPD90PLUS", 91, None),
    Bucket("PAIDOFF", None, None),
)
CURRENT, DPD1_30, DPD31_60, DPD61_90, DPD90PLUS, PAIDOFF = range(6)
ABSORBING = frozenset({DPD90PLUS, PAIDOFF})

# delinquency severity used by behavioral aggregates; paid-off counts clean
SEVERITY = np.array([0, 1, 2, 3, 4, 0], dtype=np.int8)

_ROW_SUM_TOL = 1e-12


@dataclass
class TransitionMatrix:
    """Monthly migration probabilities over an ordered bucket list."""

    probs: np.ndarray
    buckets: tuple[Bucket, ...] = BUCKETS
    absorbing: frozenset[int] = ABSORBING

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=float)
        k = len(self.buckets)
        if self.probs.shape != (k, k):
            raise GeneratorError(f"probs must be {k}x{k}, got {self.probs.shape}")
        if np.any(self.probs < -_ROW_SUM_TOL) or np.any(self.probs > 1 + _ROW_SUM_TOL):
            raise GeneratorError("probabilities must lie in [0, 1]")
        sums = self.probs.sum(axis=1)
        off = np.flatnonzero(np.abs(sums - 1.0) > _ROW_SUM_TOL)
        if off.size:
            i = off[0]
            raise GeneratorError(
                f"row {self.buckets[i].label} sums to {sums[i]!r}, not 1"
            )
        for i in self.absorbing:
            row = np.zeros(k)
            row[i] = 1.0
            if not np.array_equal(self.probs[i], row):
                raise GeneratorError(f"absorbing row {self.buckets[i].label} is not a unit vector")

    @property
    def n_states(self) -> int:
        return len(self.buckets)

    def worsening(self, i: int) -> np.ndarray:
        """Destination indices with a strictly higher DPD floor than state i."""
        lo = self.buckets[i].dpd_lo
        if lo is None:
            return np.empty(0, dtype=int)
        return np.array(
            [j for j, b in enumerate(self.buckets) if b.dpd_lo is not None and b.dpd_lo > lo],
            dtype=int,
        )

    def assignment_order(self) -> np.ndarray:
        """Destinations from kindest to harshest (paid off first, deep DPD last)."""
        key = [(-1 if b.dpd_lo is None else b.dpd_lo, j) for j, b in enumerate(self.buckets)]
        return np.array([j for _, j in sorted(key)], dtype=int)


def scale_worsening(matrix: TransitionMatrix, factor: float) -> TransitionMatrix:
    """Multiply every non-absorbing row's worsening mass by `factor`.

    The stay probability absorbs the difference so rows stay stochastic;
    a factor large enough to exhaust it is an error naming the row.
    """
    if factor < 0:
        raise GeneratorError("factor must be nonnegative")
    probs = matrix.probs.copy()
    for i in range(matrix.n_states):
        if i in matrix.absorbing:
            continue
        w = matrix.worsening(i)
        if w.size == 0:
            continue
        delta = probs[i, w].sum() * (factor - 1.0)
        stay = probs[i, i] - delta
        if stay < -_ROW_SUM_TOL:
            raise GeneratorError(
                f"row {matrix.buckets[i].label}: stay probability would fall to {stay:.6f}"
            )
        probs[i, w] *= factor
        probs[i, i] = max(stay, 0.0)
    return TransitionMatrix(probs, matrix.buckets, matrix.absorbing)


def modulated_matrix(
    base: TransitionMatrix, macro_value: float, sensitivity: float
) -> TransitionMatrix:
    """Macro-conditioned matrix: worsening mass scaled by exp(sensitivity*macro)."""
    if sensitivity < 0:
        raise GeneratorError("sensitivity must be nonnegative")
    return scale_worsening(base, math.exp(sensitivity * macro_value))


@dataclass(frozen=True)
class MacroCycle:
    """Single sinusoidal macro driver, value(t) in [-amplitude, amplitude]."""

    amplitude: float = 0.3
    period_months: int = 24
    phase: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.amplitude < 1:
            raise GeneratorError("amplitude must lie in [0, 1)")
        if self.period_months < 1:
            raise GeneratorError("period_months must be positive")

    def value(self, t: float) -> float:
        return self.amplitude * math.sin(2 * math.pi * t / self.period_months + self.phase)


# base monthly roll rates (medium risk); small/large scale worsening x0.5/x2
DEFAULT_PROBS = np.array(
    [
        [0.92, 0.05, 0.01, 0.00, 0.00, 0.02],
        [0.55, 0.30, 0.12, 0.02, 0.00, 0.01],
        [0.22, 0.28, 0.32, 0.14, 0.03, 0.01],
        [0.09, 0.10, 0.15, 0.45, 0.21, 0.00],
        [0.00, 0.00, 0.00, 0.00, 1.00, 0.00],
        [0.00, 0.00, 0.00, 0.00, 0.00, 1.00],
    ]
)

RISK_SCALES = {"small": 0.5, "medium": 1.0, "large": 2.0}

SEGMENT_LABELS = ("standard", "premium", "starter", "legacy")
SEGMENT_SHARES = (0.35, 0.30, 0.20, 0.15)
SEGMENT_EFFECTS = (0.0, 0.55, -0.65, -0.20)  # added to the latent score
CHANNEL_LABELS = ("branch", "online", "broker")

# latent score weights: higher score = safer account
_AGE_WEIGHT = 0.30
_INCOME_WEIGHT = 0.40
_APP_WEIGHT = 0.55
_APP_DECAY = 0.85
_IDIO_WEIGHT = 0.90
_MIGRATION_NOISE = 0.5


@dataclass
class GeneratorConfig:
    seed: int
    months: int = 36
    accounts_per_month: int = 40
    n_informative: int = 4
    n_noise: int = 4
    risk_level: str = "medium"
    base_matrix: TransitionMatrix | None = None
    macro: MacroCycle = field(default_factory=MacroCycle)
    macro_sensitivity: float = 1.0
    start_period: int = 200401
    missing_rate: float = 0.03

    def __post_init__(self) -> None:
        if self.months < 7:
            raise GeneratorError("months must be >= 7 so a 6-month target window fits")
        if self.accounts_per_month < 1:
            raise GeneratorError("accounts_per_month must be positive")
        if self.n_informative < 1 or self.n_noise < 0:
            raise GeneratorError("variable counts out of range")
        if self.risk_level not in RISK_SCALES:
            raise GeneratorError(f"risk_level must be one of {sorted(RISK_SCALES)}")
        if self.macro_sensitivity < 0:
            raise GeneratorError("macro_sensitivity must be nonnegative")
        if not 0 <= self.missing_rate < 1:
            raise GeneratorError("missing_rate must lie in [0, 1)")
        if self.base_matrix is None:
            self.base_matrix = TransitionMatrix(DEFAULT_PROBS.copy())

    def effective_matrix(self) -> TransitionMatrix:
        return scale_worsening(self.base_matrix, RISK_SCALES[self.risk_level])


def desk_config(seed: int, **overrides) -> GeneratorConfig:
    """Small configuration that runs a full study in minutes.

    48 months keeps a whole macro cycle inside the training window while
    leaving a year of labeled data beyond it for out-of-time validation.
    """
    overrides.setdefault("months", 48)
    return GeneratorConfig(seed=seed, **overrides)


def full_scale_config(seed: int) -> GeneratorConfig:
    """Preset on the order of the published benchmark: 2,693,460 rows x 56 columns."""
    return GeneratorConfig(
        seed=seed, months=120, accounts_per_month=371, n_informative=20, n_noise=20
    )


# -- migration ---------------------------------------------------------------

def _quota_counts(n: int, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Integer destination counts: floor(n*p) plus a largest-remainder lottery."""
    counts = np.floor(n * p).astype(np.int64)
    rem = n * p - counts
    short = int(n - counts.sum())
    if short > 0:
        positive = np.flatnonzero(rem > 0)
        if short > positive.size:
            extra = np.argsort(-rem, kind="stable")[:short]
        else:
            extra = rng.choice(p.size, size=short, replace=False, p=rem / rem.sum())
        counts[extra] += 1
    return counts


def step_accounts(
    current: np.ndarray,
    scores: np.ndarray,
    noise: np.ndarray,
    matrix: TransitionMatrix,
    rng: np.random.Generator,
) -> np.ndarray:
    """Advance every account one month.

    Accounts in absorbing buckets stay put.  Each non-absorbing cohort
    gets integer destination counts from its matrix row (exact up to the
    remainder lottery), and destinations are dealt by badness
    (1 - score percentile within the cohort) + 0.5 * noise, the worst
    badness taking the harshest destination.  Ties break on position.
    """
    current = np.asarray(current)
    new = current.copy()
    order_dest = matrix.assignment_order()
    for i in range(matrix.n_states):
        if i in matrix.absorbing:
            continue
        idx = np.flatnonzero(current == i)
        n = idx.size
        if n == 0:
            continue
        counts = _quota_counts(n, matrix.probs[i], rng)
        rank = np.empty(n, dtype=np.int64)
        rank[np.argsort(scores[idx], kind="stable")] = np.arange(n)
        pct = (rank + 0.5) / n
        badness = (1.0 - pct) + _MIGRATION_NOISE * noise[idx]
        order = np.argsort(badness, kind="stable")
        dest = np.repeat(order_dest, counts[order_dest])
        new[idx[order]] = dest
    return new


# -- portfolio assembly ------------------------------------------------------

@dataclass
class Portfolio:
    """Generated account-month panel plus the internals tests need."""

    config: GeneratorConfig
    data: Dataset
    states: np.ndarray       # (n_accounts, months+1) bucket ids, -1 before opening
    open_month: np.ndarray   # (n_accounts,) 1-based vintage month
    latent_score: np.ndarray
    macro_values: np.ndarray  # (months+1,) macro value per month, index 0 unused


def _period_of(start: int, t: int) -> int:
    y, m = divmod(start, 100)
    total = y * 12 + (m - 1) + (t - 1)
    return (total // 12) * 100 + total % 12 + 1


def month_index(period: int, start: int) -> int:
    """0-based count of calendar months from `start` to `period`."""
    y0, m0 = divmod(start, 100)
    y, m = divmod(period, 100)
    return (y - y0) * 12 + (m - m0)


def _rolling_max(grid: np.ndarray, window: int) -> np.ndarray:
    padded = np.pad(grid, ((0, 0), (window - 1, 0)), constant_values=-1)
    return sliding_window_view(padded, window, axis=1).max(axis=2)


def _rolling_sum(grid: np.ndarray, window: int) -> np.ndarray:
    padded = np.pad(grid.astype(np.int16), ((0, 0), (window - 1, 0)), constant_values=0)
    return sliding_window_view(padded, window, axis=1).sum(axis=2)


def generate_portfolio(config: GeneratorConfig) -> Portfolio:
    months, per_month = config.months, config.accounts_per_month
    n_accounts = months * per_month
    base = config.effective_matrix()
    macro_values = np.array([config.macro.value(t) for t in range(months + 1)])
    monthly = [None] + [
        modulated_matrix(base, macro_values[t], config.macro_sensitivity)
        for t in range(1, months + 1)
    ]
    open_month = np.repeat(np.arange(1, months + 1), per_month)

    # application-time draws, one independent stream per vintage
    n_inf, n_noise = config.n_informative, config.n_noise
    age = np.empty(n_accounts)
    income = np.empty(n_accounts)
    seg_codes = np.empty(n_accounts, dtype=np.int64)
    app = np.empty((n_accounts, n_inf))
    channel_codes = np.empty(n_accounts, dtype=np.int64)
    noise_vals = np.empty((n_accounts, n_noise))
    score = np.empty(n_accounts)
    mig_noise = np.zeros((n_accounts, months + 1))
    app_weights = _APP_WEIGHT * _APP_DECAY ** np.arange(n_inf)
    for v in range(1, months + 1):
        rng = np.random.default_rng([config.seed, 11, v])
        sl = slice((v - 1) * per_month, v * per_month)
        u_age = rng.standard_normal(per_month)
        u_inc = rng.standard_normal(per_month)
        seg = rng.choice(len(SEGMENT_LABELS), size=per_month, p=SEGMENT_SHARES)
        raw_app = rng.standard_normal((per_month, n_inf))
        miss = rng.random((per_month, n_inf)) < config.missing_rate
        chan = rng.integers(0, len(CHANNEL_LABELS), per_month)
        nz = rng.standard_normal((per_month, n_noise))
        eps = rng.standard_normal(per_month)
        mig_noise[sl, v:] = rng.standard_normal((per_month, months - v + 1))

        age[sl] = np.round(np.clip(45 + 12 * u_age, 18, 92), 1)
        income[sl] = np.round(np.exp(10 + 0.6 * u_inc), 2)
        seg_codes[sl] = seg
        channel_codes[sl] = chan
        noise_vals[sl] = np.round(nz, 6)
        score[sl] = (
            _AGE_WEIGHT * u_age
            + _INCOME_WEIGHT * u_inc
            + np.asarray(SEGMENT_EFFECTS)[seg]
            + raw_app @ app_weights
            + _IDIO_WEIGHT * eps
        )
        observed = np.round(raw_app, 6)
        observed[miss] = np.nan
        app[sl] = observed

    # monthly migration; new vintages enter at CURRENT
    states = np.full((n_accounts, months + 1), -1, dtype=np.int8)
    for t in range(1, months + 1):
        n_prev = (t - 1) * per_month
        if n_prev:
            states[:n_prev, t] = step_accounts(
                states[:n_prev, t - 1],
                score[:n_prev],
                mig_noise[:n_prev, t],
                monthly[t],
                np.random.default_rng([config.seed, 13, t]),
            )
        states[n_prev : t * per_month, t] = CURRENT

    # behavioral aggregates over the account's own history
    sev_grid = np.where(states >= 0, SEVERITY[np.clip(states, 0, None)], -1).astype(np.int8)
    worst = {w: _rolling_max(sev_grid, w) for w in (3, 6, 12)}
    delinq = (sev_grid >= 1).astype(np.int8)
    n_delinq = {w: _rolling_sum(delinq, w) for w in (6, 12)}

    # one row per account-month, ordered by (period, id)
    total = per_month * months * (months + 1) // 2
    row_id = np.empty(total, dtype=np.int64)
    row_t = np.empty(total, dtype=np.int64)
    offset = 0
    for t in range(1, months + 1):
        k = t * per_month
        row_id[offset : offset + k] = np.arange(k)
        row_t[offset : offset + k] = t
        offset += k

    period_lookup = np.array([0] + [_period_of(config.start_period, t) for t in range(1, months + 1)])
    seg_arr = np.array(SEGMENT_LABELS, dtype=object)[seg_codes[row_id]]
    chan_arr = np.array(CHANNEL_LABELS, dtype=object)[channel_codes[row_id]]
    status_arr = np.array([b.label for b in base.buckets], dtype=object)[states[row_id, row_t]]

    columns = [
        Column("id", "id", row_id),
        Column("period", "period", period_lookup[row_t]),
        Column("age", "numeric", age[row_id]),
        Column("income", "numeric", income[row_id]),
        Column("segment", "categorical", seg_arr),
    ]
    for k in range(n_inf):
        columns.append(Column(f"app_{k + 1}", "numeric", app[row_id, k]))
    columns += [
        Column("status", "categorical", status_arr),
        Column("months_on_book", "numeric", (row_t - open_month[row_id] + 1).astype(float)),
        Column("worst_3m", "numeric", worst[3][row_id, row_t].astype(float)),
        Column("worst_6m", "numeric", worst[6][row_id, row_t].astype(float)),
        Column("worst_12m", "numeric", worst[12][row_id, row_t].astype(float)),
        Column("n_delinq_6m", "numeric", n_delinq[6][row_id, row_t].astype(float)),
        Column("n_delinq_12m", "numeric", n_delinq[12][row_id, row_t].astype(float)),
    ]
    for k in range(n_noise):
        columns.append(Column(f"noise_{k + 1}", "numeric", noise_vals[row_id, k]))
    columns += [
        Column("channel", "categorical", chan_arr),
        Column("latent_score", "latent", score[row_id]),
        Column("latent_macro", "latent", macro_values[row_t]),
    ]
    data = Dataset(columns, require_target=False)
    return Portfolio(config, data, states, open_month, score, macro_values)


# -- target labelling --------------------------------------------------------

def assign_targets(
    data: Dataset,
    horizon: int = 6,
    dpd_threshold: int = 60,
    buckets: tuple[Bucket, ...] = BUCKETS,
) -> tuple[Dataset, int]:
    """Label each row 1 iff the account's bucket exceeds `dpd_threshold`
    days past due at some point in the `horizon` months after the row's
    month.  Rows whose window runs past the end of the panel are dropped;
    the drop count is returned alongside the labelled dataset.
    """
    if horizon < 1:
        raise GeneratorError("horizon must be positive")
    ids = data.column("id").values
    periods = data.periods()
    start = int(periods.min())
    midx = np.array([month_index(p, start) for p in np.asarray(periods)])
    n_months = int(midx.max()) + 1
    if n_months <= horizon:
        raise GeneratorError(
            f"horizon {horizon} exceeds the {n_months}-month generated history"
        )
    label_to_code = {b.label: i for i, b in enumerate(buckets)}
    status = data.column("status").values
    try:
        codes = np.array([label_to_code[s] for s in status], dtype=np.int8)
    except KeyError as exc:
        raise GeneratorError(f"unknown bucket label {exc.args[0]!r} in status column") from None

    uids, id_idx = np.unique(ids, return_inverse=True)
    grid = np.full((uids.size, n_months), -1, dtype=np.int8)
    grid[id_idx, midx] = codes

    exceeds = np.array(
        [b.dpd_lo is not None and b.dpd_lo > dpd_threshold for b in buckets]
    )
    bad_grid = np.zeros(grid.shape, dtype=bool)
    seen = grid >= 0
    bad_grid[seen] = exceeds[grid[seen]]
    padded = np.pad(bad_grid, ((0, 0), (0, horizon)), constant_values=False)
    fut_any = sliding_window_view(padded, horizon, axis=1).any(axis=2)

    keep = midx <= n_months - 1 - horizon
    n_dropped = int((~keep).sum())
    if not keep.any():
        raise GeneratorError("no row has a complete target window")
    targets = fut_any[id_idx[keep], midx[keep] + 1].astype(np.int64)

    columns = [
        Column(c.name, c.kind, c.values[keep].copy())
        for c in data.columns
        if c.kind != "target"
    ]
    columns.append(Column("target", "target", targets))
    return Dataset(columns), n_dropped


def generate_labeled(
    config: GeneratorConfig, horizon: int = 6, dpd_threshold: int = 60
) -> Dataset:
    """Generate a portfolio and label it in one step."""
    portfolio = generate_portfolio(config)
    labeled, _ = assign_targets(portfolio.data, horizon, dpd_threshold,
                                config.effective_matrix().buckets)
    return labeled


def default_rate_series(
    data: Dataset, buckets: tuple[Bucket, ...] = BUCKETS
) -> tuple[np.ndarray, np.ndarray]:
    """Per-period mean target over the active book, ordered by period.

    Rows already in an absorbing bucket (written off or paid off) are
    not at risk, so they are excluded from both numerator and
    denominator; this is the usual observation-point convention.
    """
    periods = np.asarray(data.periods())
    targets = data.target().astype(float)
    if "status" in data.names:
        absorbed = {buckets[i].label for i in ABSORBING}
        status = data.column("status").values
        at_risk = np.array([s not in absorbed for s in status])
        periods, targets = periods[at_risk], targets[at_risk]
    uperiods, inverse = np.unique(periods, return_inverse=True)
    totals = np.bincount(inverse, weights=targets)
    counts = np.bincount(inverse)
    return uperiods, totals / counts
