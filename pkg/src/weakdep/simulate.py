"""Seeded Monte Carlo harness for confidence-set coverage experiments.

A plan pairs laws (each carrying its certified functional value) with
region constructors; the harness samples, applies every constructor to the
same draw, and tallies coverage, diameters, full-range fractions and
degenerate-sample errors.  Per-replication seeds derive from the master
seed and the (law, replication) indices through a counter-based seed
sequence, so replications are independent, reproducible, and safe to
execute concurrently.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adversarial import BaseLawSpec, generate_sequence
from .confsets import (
    EMPTY_REGION,
    FULL_REGION,
    Interval,
    RegionResult,
    binary_union_set,
    diameter,
    normal_quantile,
    region_from_intervals,
    score_invert_late,
    theta_grid,
    wald_ci,
)
from .errors import WeakdepError
from .functionals import FunctionalSpec
from .laws import DiscreteLaw, law_from_dict, law_to_dict, sample

CSV_COLUMNS = (
    "label", "method", "n", "reps", "coverage", "wilson_lo", "wilson_hi",
    "diam_mean", "diam_p50", "diam_p90", "frac_fullrange", "frac_error",
)


def _quantile(values: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile that tolerates infinite order statistics."""
    ordered = np.sort(values)
    pos = q / 100.0 * (ordered.size - 1)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    if ordered[lo] == ordered[hi]:
        return float(ordered[lo])
    return float(ordered[lo] + (ordered[hi] - ordered[lo]) * (pos - lo))


def wilson_interval(successes: int, trials: int, level: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    z = normal_quantile(0.5 + level / 2.0)
    p_hat = successes / trials
    denom = 1.0 + z * z / trials
    center = (p_hat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p_hat * (1 - p_hat) / trials + z * z / (4 * trials**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class LawCase:
    """A law under test together with its certified functional value."""

    label: str
    law: DiscreteLaw
    true_phi: float


@dataclass(frozen=True)
class MethodConfig:
    """Named constructor plus its options (flat key/value pairs)."""

    name: str
    options: dict = field(default_factory=dict)

    KNOWN = ("wald", "score", "union", "fullrange", "empty", "oracle")

    def __post_init__(self):
        if self.name not in self.KNOWN:
            raise ValueError(f"unknown method {self.name!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    laws: tuple
    methods: tuple
    n: int
    reps: int
    level: float
    seed: int
    s: Interval

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")


def _bind_method(cfg: MethodConfig, plan: ExperimentPlan, case: LawCase):
    """Turn a method config into dataset -> RegionResult."""
    alpha = 1.0 - plan.level
    opts = dict(cfg.options)
    if cfg.name == "wald":
        func = opts.pop("functional")
        if isinstance(func, dict):
            func = FunctionalSpec.from_dict(func)
        cross_fit = bool(opts.pop("cross_fit", False))
        tol = float(opts.pop("tol", 1e-8))
        _reject_extra(cfg, opts)
        support = case.law.support
        return lambda ds: wald_ci(
            ds, func, support, alpha, s=plan.s, cross_fit=cross_fit, tol=tol
        )
    if cfg.name == "score":
        points = int(opts.pop("points", 4001))
        _reject_extra(cfg, opts)
        grid = theta_grid(plan.s, points)
        return lambda ds: score_invert_late(ds, alpha, grid, s=plan.s)
    if cfg.name == "union":
        variant = opts.pop("variant", "paper")
        _reject_extra(cfg, opts)
        return lambda ds: binary_union_set(ds, alpha, plan.s, variant=variant)
    if cfg.name == "fullrange":
        _reject_extra(cfg, opts)
        return lambda ds: RegionResult(region=FULL_REGION)
    if cfg.name == "empty":
        _reject_extra(cfg, opts)
        return lambda ds: RegionResult(region=EMPTY_REGION)
    if cfg.name == "oracle":
        eps = float(opts.pop("epsilon", 0.0))
        _reject_extra(cfg, opts)
        region = region_from_intervals(
            [Interval(case.true_phi - eps, case.true_phi + eps)], plan.s
        )
        return lambda ds: RegionResult(region=region)
    raise AssertionError(cfg.name)


def _reject_extra(cfg, leftover):
    if leftover:
        raise ValueError(f"method {cfg.name!r}: unknown options {sorted(leftover)}")


@dataclass(frozen=True)
class CellReport:
    """Tallies for one (law, method) pair."""

    label: str
    method: str
    n: int
    reps: int
    covered: int            # clean covers, errors excluded
    missed: int
    errors: int
    coverage: float         # (covered + errors) / reps; errors give the full range
    wilson_lo: float
    wilson_hi: float
    diam_mean: float
    diam_p50: float
    diam_p90: float
    frac_fullrange: float
    frac_error: float
    frac_diam_ge_s: float
    runtime: float
    diameters: tuple
    outcomes: tuple

    def csv_row(self):
        def fmt(v):
            if isinstance(v, float):
                return "inf" if math.isinf(v) else repr(v)
            return str(v)

        return [fmt(getattr(self, c)) for c in CSV_COLUMNS]

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v

        d = {c: clean(getattr(self, c)) for c in CSV_COLUMNS}
        d.update(
            covered=self.covered, missed=self.missed, errors=self.errors,
            frac_diam_ge_s=self.frac_diam_ge_s, runtime=self.runtime,
            diameters=[clean(v) for v in self.diameters],
            outcomes=list(self.outcomes),
        )
        return d


@dataclass(frozen=True)
class CoverageReport:
    cells: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for cell in self.cells:
            writer.writerow(cell.csv_row())
        return buf.getvalue()

    def to_dict(self):
        return {"cells": [cell.to_dict() for cell in self.cells]}

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def cell(self, label, method) -> CellReport:
        for c in self.cells:
            if c.label == label and c.method == method:
                return c
        raise KeyError((label, method))


def _replicate(plan, case, law_idx, rep_idx, constructors):
    """One replication: draw once, apply every method to the same dataset."""
    seed = np.random.SeedSequence(entropy=plan.seed, spawn_key=(law_idx, rep_idx))
    dataset = sample(case.law, plan.n, seed)
    out = []
    for method in constructors:
        try:
            result = method(dataset)
        except WeakdepError as exc:
            result = RegionResult(region=FULL_REGION, degenerate=True, message=str(exc))
        diam = diameter(result.region, plan.s)
        if result.degenerate:
            outcome = "error"
        elif result.region.contains(case.true_phi):
            outcome = "cover"
        else:
            outcome = "miss"
        out.append((outcome, diam, result.region.is_full))
    return out


def run(plan: ExperimentPlan, threads: int = 0) -> CoverageReport:
    """Execute the plan; deterministic given the master seed.

    threads > 1 executes replications in a thread pool; aggregation is
    index-assigned, so results are identical to the serial order.
    """
    s_diam = plan.s.hi - plan.s.lo
    cells = []
    for law_idx, case in enumerate(plan.laws):
        constructors = [_bind_method(m, plan, case) for m in plan.methods]
        started = time.perf_counter()
        results = [None] * plan.reps

        def work(rep_idx, _case=case, _idx=law_idx, _ctors=constructors):
            results[rep_idx] = _replicate(plan, _case, _idx, rep_idx, _ctors)

        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, range(plan.reps)))
        else:
            for rep_idx in range(plan.reps):
                work(rep_idx)
        elapsed = time.perf_counter() - started

        for method_idx, method in enumerate(plan.methods):
            outcomes = tuple(results[r][method_idx][0] for r in range(plan.reps))
            diams = tuple(results[r][method_idx][1] for r in range(plan.reps))
            fulls = sum(results[r][method_idx][2] for r in range(plan.reps))
            covered = sum(o == "cover" for o in outcomes)
            errors = sum(o == "error" for o in outcomes)
            missed = plan.reps - covered - errors
            coverage = (covered + errors) / plan.reps
            wl, wh = wilson_interval(covered + errors, plan.reps)
            diam_arr = np.array(diams)
            cells.append(CellReport(
                label=case.label,
                method=method.name,
                n=plan.n,
                reps=plan.reps,
                covered=covered,
                missed=missed,
                errors=errors,
                coverage=coverage,
                wilson_lo=wl,
                wilson_hi=wh,
                diam_mean=float(diam_arr.mean()),
                diam_p50=_quantile(diam_arr, 50),
                diam_p90=_quantile(diam_arr, 90),
                frac_fullrange=fulls / plan.reps,
                frac_error=errors / plan.reps,
                frac_diam_ge_s=float(np.mean(diam_arr >= s_diam)),
                runtime=elapsed,
                diameters=diams,
                outcomes=outcomes,
            ))
    return CoverageReport(cells=tuple(cells))


def weak_dependence_sweep(
    base: BaseLawSpec,
    zeta: float,
    tv_targets,
    n: int,
    reps: int,
    level: float,
    seed: int,
    methods,
    s: Interval,
    threads: int = 0,
):
    """Coverage along a generated weak-dependence sequence.

    Returns (sequence, report); report labels carry the per-step distance
    to the base so coverage-versus-closeness curves can be read off.
    """
    sequence = generate_sequence(base, zeta, tv_targets)
    laws = tuple(
        LawCase(
            label=f"step{t + 1}_tv{step.tv_to_base:.3g}",
            law=step.law,
            true_phi=zeta,
        )
        for t, step in enumerate(sequence.steps)
    )
    plan = ExperimentPlan(
        laws=laws, methods=tuple(methods), n=n, reps=reps,
        level=level, seed=seed, s=s,
    )
    return sequence, run(plan, threads=threads)


# ---------------------------------------------------------------------------
# plan (de)serialization for the CLI

_PLAN_KEYS = {"laws", "methods", "n", "reps", "level", "seed", "s"}
_LAW_KEYS = {"label", "law", "true_phi"}


def plan_from_dict(d) -> ExperimentPlan:
    unknown = set(d) - _PLAN_KEYS
    if unknown:
        raise ValueError(f"unknown plan keys {sorted(unknown)}")
    missing = _PLAN_KEYS - set(d)
    if missing:
        raise ValueError(f"missing plan keys {sorted(missing)}")
    laws = []
    for entry in d["laws"]:
        unknown = set(entry) - _LAW_KEYS
        if unknown:
            raise ValueError(f"unknown law keys {sorted(unknown)}")
        laws.append(LawCase(
            label=str(entry["label"]),
            law=law_from_dict(entry["law"]),
            true_phi=float(entry["true_phi"]),
        ))
    methods = []
    for entry in d["methods"]:
        entry = dict(entry)
        name = entry.pop("name")
        methods.append(MethodConfig(name=name, options=entry))
    lo, hi = d["s"]
    return ExperimentPlan(
        laws=tuple(laws),
        methods=tuple(methods),
        n=int(d["n"]),
        reps=int(d["reps"]),
        level=float(d["level"]),
        seed=int(d["seed"]),
        s=Interval(float(lo), float(hi)),
    )


def plan_to_dict(plan: ExperimentPlan):
    return {
        "laws": [
            {
                "label": case.label,
                "law": law_to_dict(case.law),
                "true_phi": case.true_phi,
            }
            for case in plan.laws
        ],
        "methods": [
            {"name": m.name, **m.options} for m in plan.methods
        ],
        "n": plan.n,
        "reps": plan.reps,
        "level": plan.level,
        "seed": plan.seed,
        "s": [plan.s.lo, plan.s.hi],
    }
