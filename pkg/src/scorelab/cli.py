"""Command-line pipeline driver.

Runs the experiment end to end or one stage at a time, every stage
reading and writing plain files in the output directory so an
interrupted run can resume where it stopped:

    generate -> dataset.csv
    bin      -> binning.txt
    select   -> subsets_reg.csv, subsets_log.csv
    fit      -> criteria.csv, ledger.txt, best_models.txt
    assess   -> ranking_*.csv, scatter_log_nbm.csv (+ optional .svg)

`report` is `assess` under another name: both are pure functions of
criteria.csv.  `run` chains all five stages.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assess import (
    TECHNIQUES,
    WEIGHT_PRESETS,
    ModelRecord,
    compare_techniques,
    head_to_head,
    top_pool,
)
from .binning import apply_binning, fit_binning, load_binning, save_binning
from .coding import DUMMY, DesignMatrix, encode_indicator, encode_log, encode_reg, train_means
from .dataio import load_csv, save_csv, subsample, time_partition
from .datagen import RISK_SCALES, desk_config, full_scale_config, generate_labeled
from .glm import ADJUSTMENT_METHODS, encode_adjusted, fit, prune_dependent, run_adjustments
from .metrics import ModelCriteria, ar_diff, collinearity, gini
from .subsets import best_subsets, family_from_csv, family_to_csv, grp_union, preselect


class CliError(ValueError):
    """Configuration or pipeline error with a message fit for the console."""


# artifact names inside the output directory
DATASET_FILE = "dataset.csv"
BINNING_FILE = "binning.txt"
SUBSETS_REG_FILE = "subsets_reg.csv"
SUBSETS_LOG_FILE = "subsets_log.csv"
CRITERIA_FILE = "criteria.csv"
LEDGER_FILE = "ledger.txt"
BEST_MODELS_FILE = "best_models.txt"
SCATTER_FILE = "scatter_log_nbm.csv"
SCATTER_SVG_FILE = "scatter_log_nbm.svg"
RANKING_FILES = {
    "equal": "ranking_equal.csv",
    "stability_heavy": "ranking_stab.csv",
    "prediction_heavy": "ranking_pred.csv",
}

ADJUSTMENT_NAMES = tuple(m.name for m in ADJUSTMENT_METHODS)

_PRESET_DEFAULTS = {
    # boundary, sizes, top_k
    "desk": (200606, (3, 4, 5), 10),
    "full": (201112, tuple(range(6, 13)), 100),
}


# -- configuration -----------------------------------------------------------

KNOWN_KEYS = (
    "data.source",
    "generate.preset",
    "generate.seed",
    "generate.months",
    "generate.accounts_per_month",
    "generate.informative",
    "generate.noise",
    "generate.risk_level",
    "csv.path",
    "subsample.fraction",
    "partition.boundary",
    "binning.max_bins",
    "binning.max_groups",
    "binning.min_share",
    "preselect.min_gini",
    "preselect.max_instability",
    "subsets.sizes",
    "subsets.top_k",
    "techniques",
    "weights",
    "assess.top_k",
    "adjust.entry_p",
    "adjust.stay_p",
    "output.svg",
    "output.dir",
)


def parse_config_text(text: str) -> dict[str, str]:
    """`key = value` lines; blank lines and # comments allowed."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise CliError(f"line {lineno}: unknown configuration key {key!r}")
        if key in mapping:
            raise CliError(f"line {lineno}: duplicate configuration key {key!r}")
        if not value:
            raise CliError(f"line {lineno}: empty value for {key!r}")
        mapping[key] = value
    return mapping


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise CliError(f"{key} expects an integer, got {value!r}") from None


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise CliError(f"{key} expects a number, got {value!r}") from None


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("yes", "true", "1"):
        return True
    if lowered in ("no", "false", "0"):
        return False
    raise CliError(f"{key} expects yes or no, got {value!r}")


def parse_sizes(value: str) -> tuple[int, ...]:
    """Comma-separated sizes; `a-b` spans an inclusive range."""
    sizes: list[int] = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            raise CliError(f"subsets.sizes has an empty entry in {value!r}")
        if "-" in part[1:]:
            lo_text, hi_text = part.split("-", 1)
            lo = _parse_int("subsets.sizes", lo_text)
            hi = _parse_int("subsets.sizes", hi_text)
            if hi < lo:
                raise CliError(f"subsets.sizes range {part!r} runs backwards")
            sizes.extend(range(lo, hi + 1))
        else:
            sizes.append(_parse_int("subsets.sizes", part))
    out: list[int] = []
    for s in sizes:
        if s < 1:
            raise CliError(f"subset size must be positive, got {s}")
        if s not in out:
            out.append(s)
    return tuple(out)


def parse_techniques(value: str) -> tuple[str, ...]:
    if value.strip().upper() == "ALL":
        return TECHNIQUES
    wanted = []
    for part in value.split(","):
        name = part.strip().upper()
        if not name:
            continue
        if name not in TECHNIQUES:
            raise CliError(f"unknown technique {name!r}; choose from {', '.join(TECHNIQUES)}")
        if name not in wanted:
            wanted.append(name)
    if not wanted:
        raise CliError("techniques must name at least one technique")
    return tuple(sorted(wanted, key=TECHNIQUES.index))


def parse_weights(value: str) -> tuple[str, ...]:
    wanted = []
    for part in value.split(","):
        name = part.strip().lower()
        if not name:
            continue
        if name not in WEIGHT_PRESETS:
            raise CliError(
                f"unknown weight profile {name!r}; choose from {', '.join(sorted(WEIGHT_PRESETS))}"
            )
        if name not in wanted:
            wanted.append(name)
    if not wanted:
        raise CliError("weights must name at least one profile")
    return tuple(wanted)


@dataclass
class ExperimentConfig:
    """Everything a run needs, resolved from file plus flag overrides."""

    source: str = "generate"
    preset: str = "desk"
    seed: int = 42
    months: int | None = None
    accounts_per_month: int | None = None
    informative: int | None = None
    noise: int | None = None
    risk_level: str | None = None
    csv_path: str | None = None
    fraction: float = 1.0
    boundary: int | None = None
    max_bins: int = 7
    max_groups: int = 7
    min_share: float = 0.05
    min_gini: float = 0.05
    max_instability: float = 0.5
    sizes: tuple[int, ...] | None = None
    top_k: int | None = None
    techniques: tuple[str, ...] = TECHNIQUES
    weights: tuple[str, ...] = ("equal", "stability_heavy", "prediction_heavy")
    assess_top_k: int = 700
    entry_p: float = 0.05
    stay_p: float = 0.05
    svg: bool = False
    out_dir: str = "runout"

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ExperimentConfig":
        cfg = cls()
        for key, value in mapping.items():
            if key == "data.source":
                if value not in ("generate", "csv"):
                    raise CliError(f"data.source must be generate or csv, got {value!r}")
                cfg.source = value
            elif key == "generate.preset":
                if value not in _PRESET_DEFAULTS:
                    raise CliError(f"generate.preset must be desk or full, got {value!r}")
                cfg.preset = value
            elif key == "generate.seed":
                cfg.seed = _parse_int(key, value)
            elif key == "generate.months":
                cfg.months = _parse_int(key, value)
            elif key == "generate.accounts_per_month":
                cfg.accounts_per_month = _parse_int(key, value)
            elif key == "generate.informative":
                cfg.informative = _parse_int(key, value)
            elif key == "generate.noise":
                cfg.noise = _parse_int(key, value)
            elif key == "generate.risk_level":
                if value not in RISK_SCALES:
                    raise CliError(
                        f"generate.risk_level must be one of {', '.join(sorted(RISK_SCALES))}"
                    )
                cfg.risk_level = value
            elif key == "csv.path":
                cfg.csv_path = value
            elif key == "subsample.fraction":
                cfg.fraction = _parse_float(key, value)
                if not 0 < cfg.fraction <= 1:
                    raise CliError("subsample.fraction must lie in (0, 1]")
            elif key == "partition.boundary":
                cfg.boundary = _parse_int(key, value)
            elif key == "binning.max_bins":
                cfg.max_bins = _parse_int(key, value)
            elif key == "binning.max_groups":
                cfg.max_groups = _parse_int(key, value)
            elif key == "binning.min_share":
                cfg.min_share = _parse_float(key, value)
            elif key == "preselect.min_gini":
                cfg.min_gini = _parse_float(key, value)
            elif key == "preselect.max_instability":
                cfg.max_instability = _parse_float(key, value)
            elif key == "subsets.sizes":
                cfg.sizes = parse_sizes(value)
            elif key == "subsets.top_k":
                cfg.top_k = _parse_int(key, value)
                if cfg.top_k < 1:
                    raise CliError("subsets.top_k must be positive")
            elif key == "techniques":
                cfg.techniques = parse_techniques(value)
            elif key == "weights":
                cfg.weights = parse_weights(value)
            elif key == "assess.top_k":
                cfg.assess_top_k = _parse_int(key, value)
                if cfg.assess_top_k < 1:
                    raise CliError("assess.top_k must be positive")
            elif key == "adjust.entry_p":
                cfg.entry_p = _parse_float(key, value)
            elif key == "adjust.stay_p":
                cfg.stay_p = _parse_float(key, value)
            elif key == "output.svg":
                cfg.svg = _parse_bool(key, value)
            elif key == "output.dir":
                cfg.out_dir = value
            else:
                raise CliError(f"unknown configuration key {key!r}")
        if cfg.source == "csv" and cfg.csv_path is None:
            raise CliError("data.source = csv requires csv.path")
        return cfg

    def resolved_sizes(self) -> tuple[int, ...]:
        if self.sizes is not None:
            return self.sizes
        return _PRESET_DEFAULTS[self.preset][1]

    def resolved_top_k(self) -> int:
        if self.top_k is not None:
            return self.top_k
        return _PRESET_DEFAULTS[self.preset][2]

    def resolved_boundary(self) -> int:
        if self.boundary is not None:
            return self.boundary
        if self.source == "csv":
            raise CliError("partition.boundary is required when data.source = csv")
        return _PRESET_DEFAULTS[self.preset][0]

    def generator_config(self):
        base = desk_config(self.seed) if self.preset == "desk" else full_scale_config(self.seed)
        overrides = {}
        if self.months is not None:
            overrides["months"] = self.months
        if self.accounts_per_month is not None:
            overrides["accounts_per_month"] = self.accounts_per_month
        if self.informative is not None:
            overrides["n_informative"] = self.informative
        if self.noise is not None:
            overrides["n_noise"] = self.noise
        if self.risk_level is not None:
            overrides["risk_level"] = self.risk_level
        return dataclasses.replace(base, **overrides) if overrides else base

    def adjustment_methods(self):
        return [m for m in ADJUSTMENT_METHODS if m.name in self.techniques]

    def needs_grp(self) -> bool:
        return "GRP" in self.techniques or bool(self.adjustment_methods())

    def needs_reg_family(self) -> bool:
        return "REG" in self.techniques or self.needs_grp()

    def needs_log_family(self) -> bool:
        return "LOG" in self.techniques or self.needs_grp()


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise CliError(f"configuration file {path!r} does not exist")
    return ExperimentConfig.from_mapping(parse_config_text(p.read_text()))


# -- shared stage plumbing ---------------------------------------------------

def _require(out: Path, name: str, producer: str) -> Path:
    path = out / name
    if not path.is_file():
        raise CliError(f"missing {name}; run the {producer} subcommand first")
    return path


def _load_dataset(out: Path):
    return load_csv(_require(out, DATASET_FILE, "generate"))


def _load_binning(out: Path):
    return load_binning(_require(out, BINNING_FILE, "bin"))


def _take_columns(design: DesignMatrix, keep: list[int]) -> DesignMatrix:
    return DesignMatrix(
        design.values[:, keep].copy(),
        [design.labels[j] for j in keep],
        excluded=list(design.excluded),
        degenerate=list(design.degenerate),
    )


def _subset_design(design: DesignMatrix, variables) -> DesignMatrix:
    """Restrict a design to the intercept plus the named variables."""
    wanted = set(variables)
    keep = [0] + [j for j in range(1, design.n_cols) if design.labels[j].variable in wanted]
    return _take_columns(design, keep)


def _fit_pruned(train_design, valid_design, y_train):
    """Fit after shedding exactly collinear columns, both windows in step."""
    reduced_tr, keep, dropped = prune_dependent(train_design)
    model_fit = fit(reduced_tr, y_train)
    if dropped:
        model_fit.warnings = model_fit.warnings + [
            f"dropped dependent column {text}" for text in dropped
        ]
        valid_design = _take_columns(valid_design, keep)
    return model_fit, reduced_tr, valid_design


def _say(message: str) -> None:
    print(message)


# -- generate ----------------------------------------------------------------

def stage_generate(cfg: ExperimentConfig, out: Path) -> None:
    if cfg.source == "csv":
        path = Path(cfg.csv_path)
        if not path.is_file():
            raise CliError(f"csv.path {cfg.csv_path!r} does not exist")
        dataset = load_csv(path)
    else:
        dataset = generate_labeled(cfg.generator_config())
    if cfg.fraction < 1.0:
        dataset = subsample(dataset, cfg.fraction, cfg.seed)
    save_csv(dataset, out / DATASET_FILE)
    _say(f"dataset: {dataset.n_rows} rows, {len(dataset.predictor_names())} predictors")


# -- bin ---------------------------------------------------------------------

def stage_bin(cfg: ExperimentConfig, out: Path) -> None:
    dataset = _load_dataset(out)
    part = time_partition(dataset, cfg.resolved_boundary())
    bmap = fit_binning(
        part.train,
        max_bins=cfg.max_bins,
        max_groups=cfg.max_groups,
        min_share=cfg.min_share,
    )
    save_binning(bmap, out / BINNING_FILE)
    usable = bmap.usable_variables()
    _say(f"binning: {len(usable)} usable variables at boundary {part.boundary}")


# -- select ------------------------------------------------------------------

def _select_family(train_design, valid_design, y_train, y_valid, cfg, label):
    pool = preselect(
        train_design,
        y_train,
        valid_design,
        y_valid,
        min_gini=cfg.min_gini,
        max_instability=cfg.max_instability,
    )
    family = best_subsets(
        _subset_design(train_design, pool.members),
        y_train,
        sizes=cfg.resolved_sizes(),
        top_k=cfg.resolved_top_k(),
        label=label,
    )
    _say(
        f"{label}: {len(pool.members)} variables after pre-selection, "
        f"{family.total()} subsets kept"
    )
    for warning in family.warnings:
        _say(f"{label}: {warning}")
    return family


def stage_select(cfg: ExperimentConfig, out: Path) -> None:
    dataset = _load_dataset(out)
    bmap = _load_binning(out)
    part = time_partition(dataset, cfg.resolved_boundary())
    y_train = part.train.target()
    y_valid = part.valid.target()

    if cfg.needs_reg_family():
        numeric = [n for n in part.train.predictor_names() if part.train.kind(n) == "numeric"]
        means = train_means(part.train, numeric)
        design_tr = encode_reg(part.train, numeric, means)
        design_va = encode_reg(part.valid, numeric, means)
        family = _select_family(design_tr, design_va, y_train, y_valid, cfg, "REG")
        family_to_csv(family, out / SUBSETS_REG_FILE)

    if cfg.needs_log_family():
        binned_tr, _ = apply_binning(bmap, part.train)
        binned_va, _ = apply_binning(bmap, part.valid)
        usable = bmap.usable_variables()
        design_tr = encode_log(binned_tr, bmap, usable)
        design_va = encode_log(binned_va, bmap, usable)
        family = _select_family(design_tr, design_va, y_train, y_valid, cfg, "LOG")
        family_to_csv(family, out / SUBSETS_LOG_FILE)


# -- fit ---------------------------------------------------------------------

NEUTRAL_CRITERIA = ModelCriteria(
    ar_train=0.0,
    ar_valid=0.0,
    ar_diff=0.0,
    max_vif=1.0,
    max_pearson=0.0,
    max_cond_index=1.0,
    max_pvalue=1.0,
)

_SOURCE_ORDER = {"": 0, "REG": 1, "LOG": 2}


def _model_criteria(model_fit, train_design, valid_design, y_train, y_valid) -> ModelCriteria:
    if train_design.n_cols == 1:
        # every term dropped or collapsed; nothing to score or test
        return NEUTRAL_CRITERIA
    p_train = model_fit.predict(train_design.values)
    p_valid = model_fit.predict(valid_design.values)
    g_train = gini(p_train, y_train)
    g_valid = gini(p_valid, y_valid)
    diff = ar_diff(g_train, g_valid) if g_train != 0.0 else 0.0
    stats = collinearity(train_design.values)
    return ModelCriteria(
        ar_train=g_train,
        ar_valid=g_valid,
        ar_diff=diff,
        max_vif=stats.max_vif,
        max_pearson=stats.max_pearson,
        max_cond_index=stats.max_cond_index,
        max_pvalue=model_fit.max_pvalue(),
    )


@dataclass
class _FitRow:
    technique: str
    model_id: str
    source: str
    size: int
    rank: int
    variables: tuple[str, ...]
    criteria: ModelCriteria
    converged: bool
    fit: object

    def sort_key(self):
        return (TECHNIQUES.index(self.technique), _SOURCE_ORDER[self.source], self.size, self.rank)


CRITERIA_HEADER = [
    "technique",
    "model_id",
    "source",
    "size",
    "rank",
    "variables",
    *ModelCriteria.FIELDS,
    "converged",
]


def _write_criteria(rows: list[_FitRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CRITERIA_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.technique,
                    row.model_id,
                    row.source,
                    row.size,
                    row.rank,
                    ",".join(row.variables),
                    *[repr(float(v)) for v in row.criteria.as_row()],
                    "yes" if row.converged else "no",
                ]
            )


def _write_ledger(counts: list[tuple[str, int]], path: Path) -> None:
    with open(path, "w") as fh:
        for label, n in counts:
            fh.write(f"{label} {n}\n")


def _write_best_models(rows: list[_FitRow], path: Path) -> None:
    best: dict[str, _FitRow] = {}
    for row in rows:
        key = (-row.criteria.ar_valid, abs(row.criteria.ar_diff), row.model_id)
        incumbent = best.get(row.technique)
        if incumbent is None or key < (
            -incumbent.criteria.ar_valid,
            abs(incumbent.criteria.ar_diff),
            incumbent.model_id,
        ):
            best[row.technique] = row
    with open(path, "w") as fh:
        for technique in TECHNIQUES:
            row = best.get(technique)
            if row is None:
                continue
            fh.write(f"== {technique} best: {row.model_id} ==\n")
            fh.write(f"variables: {', '.join(row.variables)}\n")
            fh.write(
                f"ar_train={row.criteria.ar_train:.4f} "
                f"ar_valid={row.criteria.ar_valid:.4f} "
                f"ar_diff={row.criteria.ar_diff:+.4f}\n"
            )
            fh.write(row.fit.text_block())
            fh.write("\n")


def _fit_linear_family(family, design_tr, design_va, y_train, y_valid, technique):
    """REG and LOG: one plain fit per stored subset."""
    rows = []
    for entry in family.entries():
        sub_tr = _subset_design(design_tr, entry.variables)
        sub_va = _subset_design(design_va, entry.variables)
        model_fit, sub_tr, sub_va = _fit_pruned(sub_tr, sub_va, y_train)
        rows.append(
            _FitRow(
                technique=technique,
                model_id=f"{technique}/s{entry.size}/r{entry.rank:03d}",
                source="",
                size=entry.size,
                rank=entry.rank,
                variables=entry.variables,
                criteria=_model_criteria(model_fit, sub_tr, sub_va, y_train, y_valid),
                converged=model_fit.converged,
                fit=model_fit,
            )
        )
    return rows


def stage_fit(cfg: ExperimentConfig, out: Path) -> None:
    dataset = _load_dataset(out)
    reg_family = None
    log_family = None
    if cfg.needs_reg_family():
        reg_family = family_from_csv(_require(out, SUBSETS_REG_FILE, "select"), label="REG")
    if cfg.needs_log_family():
        log_family = family_from_csv(_require(out, SUBSETS_LOG_FILE, "select"), label="LOG")

    part = time_partition(dataset, cfg.resolved_boundary())
    y_train = part.train.target()
    y_valid = part.valid.target()

    rows: list[_FitRow] = []
    counts: list[tuple[str, int]] = []

    if "REG" in cfg.techniques:
        union_vars = sorted({v for e in reg_family.entries() for v in e.variables})
        means = train_means(part.train, union_vars)
        design_tr = encode_reg(part.train, union_vars, means)
        design_va = encode_reg(part.valid, union_vars, means)
        reg_rows = _fit_linear_family(reg_family, design_tr, design_va, y_train, y_valid, "REG")
        rows.extend(reg_rows)
        counts.append(("REG", len(reg_rows)))
        _say(f"REG: {len(reg_rows)} models fitted")

    needs_binned = "LOG" in cfg.techniques or cfg.needs_grp()
    if needs_binned:
        bmap = _load_binning(out)
        binned_tr, _ = apply_binning(bmap, part.train)
        binned_va, _ = apply_binning(bmap, part.valid)

    if "LOG" in cfg.techniques:
        usable = bmap.usable_variables()
        design_tr = encode_log(binned_tr, bmap, usable)
        design_va = encode_log(binned_va, bmap, usable)
        log_rows = _fit_linear_family(log_family, design_tr, design_va, y_train, y_valid, "LOG")
        rows.extend(log_rows)
        counts.append(("LOG", len(log_rows)))
        _say(f"LOG: {len(log_rows)} models fitted")

    if cfg.needs_grp():
        union = grp_union(reg_family, log_family)
        methods = cfg.adjustment_methods()
        grp_cache: dict[tuple[str, ...], tuple[ModelCriteria, bool, object]] = {}
        adj_cache: dict[tuple[str, ...], dict] = {}
        seen: set[tuple[str, ...]] = set()
        unique_sets: list[tuple[str, ...]] = []
        for _, entry in union:
            if entry.variables not in seen:
                seen.add(entry.variables)
                unique_sets.append(entry.variables)

        for variables in unique_sets:
            var_list = list(variables)
            if "GRP" in cfg.techniques:
                d_tr = encode_indicator(binned_tr, bmap, DUMMY, var_list)
                d_va = encode_indicator(binned_va, bmap, DUMMY, var_list)
                model_fit, d_tr, d_va = _fit_pruned(d_tr, d_va, y_train)
                grp_cache[variables] = (
                    _model_criteria(model_fit, d_tr, d_va, y_train, y_valid),
                    model_fit.converged,
                    model_fit,
                )
            if methods:
                results = run_adjustments(
                    binned_tr,
                    bmap,
                    var_list,
                    methods=methods,
                    entry_p=cfg.entry_p,
                    stay_p=cfg.stay_p,
                )
                per_method = {}
                for name, result in results.items():
                    d_tr = encode_adjusted(result, binned_tr, bmap)
                    d_va = encode_adjusted(result, binned_va, bmap)
                    per_method[name] = (
                        _model_criteria(result.fit, d_tr, d_va, y_train, y_valid),
                        result.fit.converged,
                        result.fit,
                    )
                adj_cache[variables] = per_method

        grp_rows = []
        adj_rows = []
        for source, entry in union:
            suffix = f"{source}/s{entry.size}/r{entry.rank:03d}"
            if "GRP" in cfg.techniques:
                criteria, converged, model_fit = grp_cache[entry.variables]
                grp_rows.append(
                    _FitRow(
                        technique="GRP",
                        model_id=f"GRP/{suffix}",
                        source=source,
                        size=entry.size,
                        rank=entry.rank,
                        variables=entry.variables,
                        criteria=criteria,
                        converged=converged,
                        fit=model_fit,
                    )
                )
            for method in methods:
                criteria, converged, model_fit = adj_cache[entry.variables][method.name]
                adj_rows.append(
                    _FitRow(
                        technique=method.name,
                        model_id=f"{method.name}/{suffix}",
                        source=source,
                        size=entry.size,
                        rank=entry.rank,
                        variables=entry.variables,
                        criteria=criteria,
                        converged=converged,
                        fit=model_fit,
                    )
                )
        if "GRP" in cfg.techniques:
            rows.extend(grp_rows)
            counts.append(("GRP", len(grp_rows)))
            _say(f"GRP: {len(grp_rows)} models fitted")
        if methods:
            rows.extend(adj_rows)
            counts.append(("adjustments", len(adj_rows)))
            _say(f"adjustments: {len(adj_rows)} models across {len(methods)} methods")

    rows.sort(key=_FitRow.sort_key)
    _write_criteria(rows, out / CRITERIA_FILE)
    _write_ledger(counts, out / LEDGER_FILE)
    _write_best_models(rows, out / BEST_MODELS_FILE)
    _say(f"criteria: {len(rows)} rows total")


# -- assess ------------------------------------------------------------------

def load_records(path: Path) -> list[ModelRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CRITERIA_HEADER:
            raise CliError(f"unrecognized criteria file header in {path}")
        for row in reader:
            if len(row) != len(CRITERIA_HEADER):
                raise CliError(f"malformed criteria row: {row!r}")
            variables = tuple(v for v in row[5].split(",") if v)
            values = [float(v) for v in row[6:13]]
            records.append(
                ModelRecord(
                    technique=row[0],
                    model_id=row[1],
                    variables=variables,
                    criteria=ModelCriteria(*values),
                )
            )
    if not records:
        raise CliError(f"criteria file {path} holds no models")
    return records


def _write_ranking(report, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "technique", "models", "minimum", "q1", "median", "q3", "maximum"])
        for position, (technique, summary) in enumerate(report.ranking, start=1):
            writer.writerow(
                [
                    position,
                    technique,
                    len(report.pools[technique]),
                    repr(float(summary.minimum)),
                    repr(float(summary.q1)),
                    repr(float(summary.median)),
                    repr(float(summary.q3)),
                    repr(float(summary.maximum)),
                ]
            )


def _write_scatter_csv(h2h, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["technique", "ar_valid", "ar_diff"])
        for technique, av, ad in h2h.rows:
            writer.writerow([technique, repr(float(av)), repr(float(ad))])


def _star_points(cx: float, cy: float, outer: float, inner: float) -> str:
    # ten vertices, tip upward
    points = []
    for k in range(10):
        radius = outer if k % 2 == 0 else inner
        angle = -np.pi / 2 + k * np.pi / 5
        points.append(f"{cx + radius * np.cos(angle):.2f},{cy + radius * np.sin(angle):.2f}")
    return " ".join(points)


def _write_scatter_svg(h2h, path: Path) -> None:
    """Validation power against stability, one glyph per model."""
    width, height = 720, 540
    left, right, top, bottom = 70, 24, 24, 56
    xs = [av for _, av, _ in h2h.rows]
    ys = [ad for _, _, ad in h2h.rows]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x_pad = 0.05 * (x1 - x0)
    y_pad = 0.05 * (y1 - y0)
    x0, x1 = x0 - x_pad, x1 + x_pad
    y0, y1 = y0 - y_pad, y1 + y_pad

    def sx(v: float) -> float:
        return left + (v - x0) / (x1 - x0) * (width - left - right)

    def sy(v: float) -> float:
        return top + (y1 - v) / (y1 - y0) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
    ]
    for i in range(5):
        vx = x0 + i * (x1 - x0) / 4
        px = sx(vx)
        parts.append(
            f'<line x1="{px:.2f}" y1="{height - bottom}" x2="{px:.2f}" '
            f'y2="{height - bottom + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{height - bottom + 20}" font-size="12" '
            f'text-anchor="middle">{vx:.3f}</text>'
        )
        vy = y0 + i * (y1 - y0) / 4
        py = sy(vy)
        parts.append(
            f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{py + 4:.2f}" font-size="12" '
            f'text-anchor="end">{vy:.3f}</text>'
        )
    parts.append(
        f'<text x="{(left + width - right) / 2:.2f}" y="{height - 12}" font-size="13" '
        f'text-anchor="middle">validation accuracy ratio</text>'
    )
    parts.append(
        f'<text x="16" y="{(top + height - bottom) / 2:.2f}" font-size="13" '
        f'text-anchor="middle" transform="rotate(-90 16 {(top + height - bottom) / 2:.2f})">'
        "relative train-valid delta</text>"
    )
    for technique, av, ad in h2h.rows:
        px, py = sx(av), sy(ad)
        if technique == "LOG":
            parts.append(
                f'<polygon points="{_star_points(px, py, 5.0, 2.2)}" fill="#1a466b"/>'
            )
        else:
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3.2" fill="#999999"/>')
    legend_y = top + 16
    parts.append(
        f'<polygon points="{_star_points(width - right - 120, legend_y, 5.0, 2.2)}" fill="#1a466b"/>'
    )
    parts.append(
        f'<text x="{width - right - 110}" y="{legend_y + 4}" font-size="12">LOG</text>'
    )
    parts.append(
        f'<circle cx="{width - right - 60}" cy="{legend_y}" r="3.2" fill="#999999"/>'
    )
    parts.append(
        f'<text x="{width - right - 50}" y="{legend_y + 4}" font-size="12">NBM</text>'
    )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def stage_assess(cfg: ExperimentConfig, out: Path) -> None:
    records = load_records(_require(out, CRITERIA_FILE, "fit"))

    for name in cfg.weights:
        report = compare_techniques(records, WEIGHT_PRESETS[name], k=cfg.assess_top_k)
        _write_ranking(report, out / RANKING_FILES[name])
        leader, summary = report.ranking[0]
        _say(f"{name}: {leader} leads with median distance {summary.median:.4f}")
        for warning in report.warnings:
            _say(f"{name}: {warning}")

    log_records = [r for r in records if r.technique == "LOG"]
    nbm_records = [r for r in records if r.technique == "NBM"]
    if log_records and nbm_records:
        h2h = head_to_head(
            top_pool(log_records, cfg.assess_top_k),
            top_pool(nbm_records, cfg.assess_top_k),
        )
        _write_scatter_csv(h2h, out / SCATTER_FILE)
        if cfg.svg:
            _write_scatter_svg(h2h, out / SCATTER_SVG_FILE)
        for label in ("LOG", "NBM"):
            med = h2h.medians[label]
            _say(
                f"{label}: median ar_valid {med['ar_valid']:.4f}, "
                f"median |ar_diff| {med['abs_ar_diff']:.4f}"
            )
    else:
        _say("scatter skipped: needs both LOG and NBM in the run")


# -- entry point -------------------------------------------------------------

STAGES = {
    "generate": stage_generate,
    "bin": stage_bin,
    "select": stage_select,
    "fit": stage_fit,
    "assess": stage_assess,
    "report": stage_assess,
}

RUN_SEQUENCE = ("generate", "bin", "select", "fit", "assess")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scorelab",
        description="Credit scoring laboratory: generate portfolio data, "
        "bin, select subsets, fit scoring techniques, and compare them.",
    )
    parser.add_argument(
        "stage",
        choices=["run", *STAGES],
        help="pipeline stage to execute; 'run' chains generate through assess",
    )
    parser.add_argument("--config", metavar="PATH", help="configuration file")
    parser.add_argument("--seed", type=int, metavar="N", help="override the generator seed")
    parser.add_argument("--out", metavar="DIR", help="override the output directory")
    parser.add_argument(
        "--techniques",
        metavar="LIST",
        help="comma-separated technique labels, or ALL",
    )
    parser.add_argument(
        "--desk-scale",
        action="store_true",
        help="apply the reduced desk preset (sizes 3-5, top 10)",
    )
    return parser


def apply_flag_overrides(cfg: ExperimentConfig, args) -> None:
    if args.desk_scale:
        cfg.preset = "desk"
        cfg.sizes = _PRESET_DEFAULTS["desk"][1]
        cfg.top_k = _PRESET_DEFAULTS["desk"][2]
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.techniques is not None:
        cfg.techniques = parse_techniques(args.techniques)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        apply_flag_overrides(cfg, args)
    except CliError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = RUN_SEQUENCE if args.stage == "run" else (args.stage,)
    for name in stages:
        try:
            STAGES[name](cfg, out)
        except Exception as exc:
            print(f"stage {name} failed: {exc}", file=sys.stderr)
            return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
