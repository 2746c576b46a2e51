"""Acceptance gate: one PASS/FAIL line per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -s`` to see the report; the lines
are also written straight to the terminal when output is captured. The
desk-scale sweep behind criteria 1 and 2 runs once per session (about ten
minutes on one core).
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

from oracles import auc_trapezoid_ref, injection_ref, rho_grid_ref
from rodd.bench import DESK, auc_scores, bench_sweep, format_summary, summarize
from rodd.cli import main as cli_main
from rodd.cube import DataCube, Dimension
from rodd.estimators import ForestParams, TrimSpec, fit_coefficients, fit_estimator, fit_forest
from rodd.scoring import detect, solve_rho
from rodd.synth import Effects, SynthConfig, assemble_noiseless, inject_outliers, synthesize

SEEDS = (1, 2, 3, 4, 5)


@pytest.fixture
def report(capsys, request):
    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        with capsys.disabled():
            print("\n" + line)
        request.node.user_properties.append(("acceptance", line))
        assert ok, line

    return emit


@pytest.fixture(scope="module")
def desk_sweep():
    grid = DESK.grid()
    t0 = time.perf_counter()
    results = bench_sweep(grid, SEEDS, forest=DESK.forest)
    elapsed = time.perf_counter() - t0
    return results, summarize(results), elapsed


def _dims(shape):
    return [Dimension(f"d{p}", tuple(f"c{i}" for i in range(k))) for p, k in enumerate(shape)]


def test_criterion_1_ordering(desk_sweep, report, capsys):
    results, summary, elapsed = desk_sweep
    with capsys.disabled():
        print("\n" + format_summary(summary) + f"({len(results)} runs in {elapsed:.0f} s)")
    auc = {e: s["auc"] for e, s in summary.items()}
    failed = sum(not r.ok for r in results)
    rf_beats = auc["rf"] > auc["s75"]
    gap = min(v for e, v in auc.items() if e != "median") - auc["median"]
    ok = len(results) >= 300 and failed == 0 and rf_beats and gap >= 0.05
    report(1, ok, f"{len(results)} runs, {failed} failed; AUC RF {auc['rf']:.4f} vs S75 {auc['s75']:.4f} "
                  f"({'RF ahead' if rf_beats else 'RF not ahead'}); Median gap {gap:.4f} (need >= 0.05)")


def test_criterion_2_trimmed_cluster(desk_sweep, report):
    _, summary, _ = desk_sweep
    vals = [summary[e]["auc"] for e in ("s60", "s75", "s90")]
    spread = max(vals) - min(vals)
    report(2, spread <= 0.03, f"S60/S75/S90 AUC {vals[0]:.4f}/{vals[1]:.4f}/{vals[2]:.4f}, spread {spread:.4f} (<= 0.03)")


def test_criterion_3_exact_recovery(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        shape = tuple(int(k) for k in rng.integers(2, 6, size=int(rng.integers(3, 5))))
        n = len(shape)
        main = [rng.normal(0, 0.5, size=k) for k in shape]
        pair = {ab: rng.normal(0, 0.3, size=(shape[ab[0]], shape[ab[1]]))
                for ab in itertools.combinations(range(n), 2)}
        mu = rng.normal(4.0, 1.0)
        cells = {}
        for c in itertools.product(*[range(k) for k in shape]):
            v = mu + sum(main[p][c[p]] for p in range(n)) + sum(m[c[a], c[b]] for (a, b), m in pair.items())
            cells[c] = float(np.exp(v))
        cube = DataCube(_dims(shape), cells)
        det = detect(cube, fit_coefficients(cube, TrimSpec(0.0)))
        worst = max(worst, float(det.raw_scores.max()))
    report(3, worst < 1e-6, f"max raw score over 100 log-additive cubes = {worst:.3g} (< 1e-6)")


def test_criterion_4_rho_oracle(report):
    rng = np.random.default_rng(77)
    worst_dev, worst_res, failures = 0.0, 0.0, 0
    for _ in range(50):
        k = int(rng.integers(5, 150))
        y_hat = rng.uniform(1.5, 800.0, size=k)
        y = np.abs(y_hat + rng.normal(size=k) * y_hat ** (rng.uniform(0.1, 1.8) / 2)) + 0.05
        pairs = np.column_stack([y, y_hat])
        est = solve_rho(pairs)
        ref = rho_grid_ref([tuple(p) for p in pairs])
        if ref is None or not est.converged:
            failures += 1
            continue
        worst_dev = max(worst_dev, abs(est.rho - ref))
        worst_res = max(worst_res, abs(est.residual) / est.scale)
    two = solve_rho([(2 * np.e, np.e)])
    zero = solve_rho([(np.e + 1, np.e)])
    fixtures = abs(two.rho - 2) < 1e-9 and abs(zero.rho) < 1e-9
    ok = failures == 0 and worst_dev <= 1e-3 and worst_res <= 1e-8 and fixtures
    report(4, ok, f"50 collections: max |rho - grid| = {worst_dev:.2e} (<= 1e-3), max |F|/scale = "
                  f"{worst_res:.1e} (<= 1e-8), {failures} unresolved; fixtures rho=2 -> {two.rho:.12f}, "
                  f"rho=0 -> {zero.rho:.1e}")


def test_criterion_5_auc_oracle(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(4, 200))
        labels = rng.random(n) < rng.uniform(0.05, 0.6)
        labels[0], labels[1] = True, False
        # every other set is tie-heavy: scores drawn from a handful of levels
        scores = rng.integers(0, 4, size=n).astype(float) if i % 2 else rng.normal(size=n)
        worst = max(worst, abs(auc_scores(scores, labels) - auc_trapezoid_ref(scores.tolist(), labels.tolist())))
    report(5, worst <= 1e-9, f"max |rank AUC - trapezoid AUC| over 100 sets = {worst:.1e} (<= 1e-9)")


def test_criterion_6_table_one(report):
    # product {VC}, location {Osaka, Berlin}, time {January, February}
    effects = Effects(
        (np.array([98]), np.array([110, 87]), np.array([91, 93])),
        {(0, 1): np.array([[4, 0]]), (0, 2): np.array([[0, -3]]), (1, 2): np.array([[4, 0], [0, 5]])},
    )
    cube = assemble_noiseless(effects, _dims((1, 2, 2)))
    first, second = cube.cells[(0, 0, 0)], cube.cells[(0, 1, 1)]
    others = (cube.cells[(0, 0, 1)], cube.cells[(0, 1, 0)])
    ok = first == 101 and second == 93 and others == (101, 92)
    report(6, ok, f"VC/Osaka/January = {first:g} (expected 101), VC/Berlin/February = {second:g} "
                  f"(expected 93); remaining cells {others[0]:g}, {others[1]:g} (expected 101, 92)")


def test_criterion_7_injection_oracle(report):
    rng = np.random.default_rng(31)
    mismatches = 0
    for trial in range(20):
        cells = {c: float(rng.integers(20, 200)) for c in itertools.product(range(3), repeat=3)}
        cube = DataCube(_dims((3, 3, 3)), cells)
        injected, mask = inject_outliers(cube, float(rng.choice([0.03, 0.1, 0.2])), np.random.default_rng(trial))
        expected = injection_ref(cells, (3, 3, 3), mask)
        mismatches += sum(injected.cells[c] != (expected[c] if c in mask else cells[c]) for c in cells)
    report(7, mismatches == 0, f"{mismatches} mismatching cells over 20 random 3x3x3 cubes (exact)")


def test_criterion_8_determinism(tmp_path, toy_csv, report):
    detect_args = ["detect", "--input", str(toy_csv), "--dims", "product,month,city", "--measure", "sales"]
    checks = {}

    def twice(name, argv_for):
        outs = []
        for k, argv in enumerate(argv_for):
            target = tmp_path / f"{name}{k}"
            cli_main([str(a) for a in argv(target)])
            if target.is_file():
                outs.append([("scores", target.read_bytes())])
            else:
                # manifests carry timestamps and runtimes.csv carries wall-clock timings
                outs.append([(p.name, p.read_bytes()) for p in sorted(target.iterdir())
                             if "manifest" not in p.name and p.name != "runtimes.csv"])
        checks[name] = all(o == outs[0] for o in outs)

    for est in ("s75", "s60", "s90", "median"):
        twice(est, [lambda t, e=est: detect_args + ["--estimator", e, "--output", t]] * 2)
    twice("rf", [lambda t, th=th: detect_args + ["--estimator", "rf", "--seed", 3, "--threads", th, "--output", t]
                 for th in (1, 2, 4)])
    twice("synth", [lambda t: ["synth", "--seed", 7, "--out", t]] * 2)
    twice("bench", [lambda t, th=th: ["bench", "--profile", "smoke", "--seeds", 2, "--threads", th, "--out", t]
                    for th in (1, 2)])
    bad = [k for k, v in checks.items() if not v]
    report(8, not bad, f"byte-identical repeats for {', '.join(checks)}"
                       + (f"; differing: {', '.join(bad)}" if bad else " (RF at 1/2/4 threads)"))


def test_criterion_9_interpolation(report):
    rng = np.random.default_rng(9)
    params = ForestParams(n_trees=1, bootstrap=False, max_features="all", max_depth=10_000,
                          min_samples_split=2, min_samples_leaf=1)
    worst = 0.0
    for _ in range(20):
        shape = tuple(int(k) for k in rng.integers(2, 7, size=3))
        cells = {c: float(rng.uniform(1, 1000)) for c in itertools.product(*[range(k) for k in shape])}
        cube = DataCube(_dims(shape), cells)
        pred = fit_forest(cube, params).predict_cells(cube)
        worst = max(worst, float(np.max(np.abs(pred - cube.values) / cube.values)))
    report(9, worst <= 1e-9, f"max relative training error over 20 cubes = {worst:.1e} (<= 1e-9)")


def test_criterion_10_runtime(report):
    cube = synthesize(SynthConfig(seed=1)).cube
    assert len(cube) == 1080
    times = {}
    for est in ("s75", "s60", "s90", "median", "rf"):
        t0 = time.perf_counter()
        detect(cube, fit_estimator(cube, est, ForestParams(seed=1)))
        times[est] = time.perf_counter() - t0
    fast = max(v for k, v in times.items() if k != "rf")
    ratio = times["rf"] / fast
    ok = fast < 1.0 and times["rf"] < 60.0
    report(10, ok, "seconds " + ", ".join(f"{k} {v:.2f}" for k, v in times.items())
                   + f"; RF/slowest-trimmed ratio {ratio:.0f}x (limits 1 s and 60 s)")
