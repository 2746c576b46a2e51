"""Detection metrics and the synthetic benchmark sweep."""

from __future__ import annotations

import csv
import logging
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Collection, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from rodd.cube import Coordinate
from rodd.errors import DegenerateLabels, DomainMismatch, IncompleteBlock, ValidationError
from rodd.estimators import ESTIMATORS, LABELS, ForestParams, fit_estimator
from rodd.scoring import TAU, ScoreRecord, detect
from rodd.synth import SynthConfig, synthesize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @staticmethod
    def _rate(num: int, den: int) -> float:
        # undefined ratios are reported as 1.0; see the *_defined flags
        return num / den if den else 1.0

    @property
    def sensitivity(self) -> float:
        return self._rate(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return self._rate(self.tn, self.tn + self.fp)

    @property
    def accuracy(self) -> float:
        return self._rate(self.tp + self.tn, self.total)

    @property
    def sensitivity_defined(self) -> bool:
        return self.tp + self.fn > 0

    @property
    def specificity_defined(self) -> bool:
        return self.tn + self.fp > 0


def _labels(records: Sequence[ScoreRecord], mask: Collection[Coordinate]) -> np.ndarray:
    coords = [r.coord for r in records]
    domain = set(coords)
    if len(domain) != len(coords):
        raise DomainMismatch("records contain a coordinate more than once")
    stray = [c for c in mask if c not in domain]
    if stray:
        raise DomainMismatch(f"{len(stray)} outlier coordinate(s) have no score record, e.g. {stray[0]}")
    mask = set(mask)
    return np.array([c in mask for c in coords], dtype=bool)


def confusion(records: Sequence[ScoreRecord], mask: Collection[Coordinate]) -> ConfusionCounts:
    truth = _labels(records, mask)
    flagged = np.array([r.is_outlier for r in records], dtype=bool)
    return ConfusionCounts(
        tp=int(np.sum(flagged & truth)),
        fp=int(np.sum(flagged & ~truth)),
        tn=int(np.sum(~flagged & ~truth)),
        fn=int(np.sum(~flagged & truth)),
    )


def auc_scores(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one outlier and one inlier")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc(records: Sequence[ScoreRecord], mask: Collection[Coordinate]) -> float:
    """AUC of the threshold-free raw scores against the true outlier set."""
    truth = _labels(records, mask)
    return auc_scores([r.raw_score for r in records], truth)


@dataclass(frozen=True)
class BenchResult:
    estimator: str
    config_id: str
    seed: int
    sensitivity: float
    specificity: float
    accuracy: float
    auc: float
    rho: float
    converged: bool
    n_cells: int
    n_outliers: int
    runtime: float = 0.0
    error: str = ""

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.config_id, self.seed, self.estimator)

    @property
    def ok(self) -> bool:
        return not self.error


# runtime is hardware-dependent, so the canonical results file leaves it out
ALL_COLUMNS = [f.name for f in fields(BenchResult)]
RESULT_COLUMNS = [c for c in ALL_COLUMNS if c != "runtime"]


def config_id(cfg: SynthConfig) -> str:
    shape = "x".join(str(k) for _, k in cfg.dims)
    return f"{shape}_r{cfg.outlier_rate:g}_d{cfg.noise_divisor:g}"


@dataclass(frozen=True)
class BenchProfile:
    base_configs: tuple[SynthConfig, ...]
    noise_divisors: tuple[float, ...]
    outlier_rates: tuple[float, ...]
    forest: ForestParams

    def grid(self) -> list[SynthConfig]:
        return [
            base.with_(noise_divisor=d, outlier_rate=r)
            for base in self.base_configs
            for d in self.noise_divisors
            for r in self.outlier_rates
        ]


# Two shapes of different size and balance. The desk noise levels are the three
# lowest of the standard divisor set: at divisors 2.5 and 5 the integer noise
# swamps the planted shifts and every estimator sits near chance at this scale.
DESK_BASES = (
    SynthConfig(),
    SynthConfig(dims=(("month", 8), ("product", 6), ("city", 10)), value_ranges=((50, 150),) * 3),
)
DESK = BenchProfile(DESK_BASES, (7.5, 10.0, 12.5), (0.01, 0.05), ForestParams())
PAPER = BenchProfile(DESK_BASES, (2.5, 5.0, 7.5, 10.0, 12.5), (0.0025, 0.01, 0.05), ForestParams.paper())
# a seconds-long sweep for smoke tests and demos
SMOKE = BenchProfile(
    (SynthConfig(dims=(("month", 6), ("product", 5), ("city", 4)), value_ranges=((50, 150),) * 3),),
    (12.5,), (0.05,), ForestParams(n_trees=10),
)
PROFILES = {"desk": DESK, "paper": PAPER, "smoke": SMOKE}


def run_one(cfg: SynthConfig, estimator: str, seed: int, forest: ForestParams | None = None,
            tau: float = TAU, threads: int | None = 1) -> BenchResult:
    """Synthesize one cube and evaluate one estimator on it."""
    cfg = cfg.with_(seed=seed)
    cid = config_id(cfg)
    try:
        labeled = synthesize(cfg)
        fp = (forest or ForestParams()).with_seed(seed)
        t0 = time.perf_counter()
        est = fit_estimator(labeled.cube, estimator, fp, threads=threads)
        det = detect(labeled.cube, est, tau)
        runtime = time.perf_counter() - t0
        cc = confusion(det.records, labeled.outlier_mask)
        return BenchResult(estimator, cid, seed, cc.sensitivity, cc.specificity, cc.accuracy,
                           auc(det.records, labeled.outlier_mask), det.rho.rho, det.rho.converged,
                           len(det), len(labeled.outlier_mask), runtime)
    except Exception as exc:  # a failed run is recorded, the sweep continues
        logger.exception("run %s/%s/seed %d failed", cid, estimator, seed)
        nan = float("nan")
        return BenchResult(estimator, cid, seed, nan, nan, nan, nan, nan, False, 0, 0, 0.0,
                           f"{type(exc).__name__}: {exc}")


def _run_task(args):
    return run_one(*args)


def bench_sweep(
    grid: Sequence[SynthConfig],
    seeds: Sequence[int],
    estimators: Sequence[str] = ESTIMATORS,
    forest: ForestParams | None = None,
    tau: float = TAU,
    workers: int = 1,
    skip: Collection[tuple[str, int, str]] = (),
    on_result: Callable[[BenchResult], None] | None = None,
) -> list[BenchResult]:
    """Evaluate every estimator on every (config, seed) cube.

    ``skip`` holds ``(config_id, seed, estimator)`` keys already computed,
    which lets an interrupted sweep resume. Results come back sorted by key,
    whatever the worker count.
    """
    if not grid or not seeds or not estimators:
        raise ValidationError("bench_sweep needs a non-empty grid, seed list and estimator list")
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise ValidationError(f"unknown estimator(s): {', '.join(unknown)}")
    skip = set(skip)
    tasks = [
        (cfg, est, seed, forest, tau, 1)
        for cfg in grid for seed in seeds for est in estimators
        if (config_id(cfg.with_(seed=seed)), seed, est) not in skip
    ]
    results = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_task, tasks):
                results.append(res)
                if on_result:
                    on_result(res)
    else:
        for task in tasks:
            res = _run_task(task)
            results.append(res)
            if on_result:
                on_result(res)
    return sort_results(results)


def sort_results(results: Iterable[BenchResult]) -> list[BenchResult]:
    order = {e: i for i, e in enumerate(ESTIMATORS)}
    return sorted(results, key=lambda r: (r.config_id, r.seed, order.get(r.estimator, 99), r.estimator))


def summarize(results: Iterable[BenchResult]) -> dict[str, dict[str, float]]:
    """Mean metrics per estimator over successful runs."""
    groups: dict[str, list[BenchResult]] = defaultdict(list)
    for r in results:
        if r.ok:
            groups[r.estimator].append(r)
    out = {}
    for est in [e for e in ESTIMATORS if e in groups] + sorted(set(groups) - set(ESTIMATORS)):
        rs = groups[est]
        out[est] = {
            m: float(np.mean([getattr(r, m) for r in rs]))
            for m in ("sensitivity", "specificity", "accuracy", "auc")
        } | {"runs": len(rs)}
    return out


def format_summary(summary: dict[str, dict[str, float]]) -> str:
    head = f"{'Estimator':<10} {'Sensitivity':>11} {'Specificity':>11} {'Accuracy':>9} {'AUC':>7}"
    lines = [head, "-" * len(head)]
    for est, s in summary.items():
        lines.append(f"{LABELS.get(est, est):<10} {s['sensitivity']:>11.4f} {s['specificity']:>11.4f} "
                     f"{s['accuracy']:>9.4f} {s['auc']:>7.4f}")
    return "\n".join(lines) + "\n"


def adjusted_auc(results: Iterable[BenchResult]) -> list[dict]:
    """AUC minus the mean AUC of its (config, seed) block across estimators."""
    results = [r for r in results if r.ok]
    estimators = sorted({r.estimator for r in results})
    blocks: dict[tuple[str, int], dict[str, float]] = defaultdict(dict)
    for r in results:
        blocks[(r.config_id, r.seed)][r.estimator] = r.auc
    rows = []
    for (cid, seed), aucs in sorted(blocks.items()):
        if sorted(aucs) != estimators:
            missing = sorted(set(estimators) - set(aucs))
            raise IncompleteBlock(f"block {cid}/seed {seed} lacks estimator(s) {', '.join(missing)}")
        mean = float(np.mean(list(aucs.values())))
        for est in estimators:
            rows.append({"config_id": cid, "seed": seed, "estimator": est,
                         "auc": aucs[est], "adjusted_auc": aucs[est] - mean})
    return rows


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def result_row(r: BenchResult, columns: Sequence[str] = RESULT_COLUMNS) -> list[str]:
    d = asdict(r)
    return [_cell(d[c]) for c in columns]


def write_results(results: Iterable[BenchResult], path: str | Path,
                  columns: Sequence[str] = RESULT_COLUMNS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in results:
            w.writerow(result_row(r, columns))


def read_results(path: str | Path) -> list[BenchResult]:
    types = {f.name: f.type for f in fields(BenchResult)}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                if t in ("int",):
                    kw[k] = int(v)
                elif t == "float":
                    kw[k] = float(v)
                elif t == "bool":
                    kw[k] = v == "1"
                else:
                    kw[k] = v
            out.append(BenchResult(**kw))
    return out
