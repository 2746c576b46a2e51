"""Command-line entry point: ``rodd detect | synth | bench | replay``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from rodd import __version__
from rodd.bench import (
    PROFILES,
    ALL_COLUMNS,
    BenchProfile,
    adjusted_auc,
    bench_sweep,
    format_summary,
    read_results,
    result_row,
    sort_results,
    summarize,
    write_results,
)
from rodd.cube import read_csv
from rodd.errors import RoddError
from rodd.estimators import ESTIMATORS, ForestParams, fit_estimator
from rodd.estimators.anova import CoefficientTable
from rodd.scoring import TAU, detect
from rodd.synth import SynthConfig, synthesize

logger = logging.getLogger("rodd")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _env_threads() -> int:
    return max(1, int(os.environ.get("RODD_THREADS", "1")))


def _write_manifest(path: Path, command: str, argv: Sequence[str], config: dict, seed: int | None,
                    started: str, outputs: Sequence[Path], **extra) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": [str(p) for p in outputs],
        **extra,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _forest_params(args) -> ForestParams:
    if args.paper_params:
        params = ForestParams.paper()
    elif args.forest_config:
        params = ForestParams.from_dict(json.loads(Path(args.forest_config).read_text()))
    else:
        params = ForestParams()
    return params.with_seed(args.seed)


def cmd_detect(args, argv) -> int:
    started = _now()
    dims = [d.strip() for d in args.dims.split(",") if d.strip()]
    cube = read_csv(args.input, dims, args.measure, delimiter=args.delimiter)
    params = _forest_params(args)
    est = fit_estimator(cube, args.estimator, params, threads=args.threads)
    det = detect(cube, est, args.tau)
    det.meta.update(estimator=args.estimator, seed=args.seed)
    out = Path(args.output)
    fmt = args.format or ("json" if out.suffix == ".json" else "csv")
    if fmt == "json":
        det.to_json(out)
    else:
        det.to_csv(out)
    outputs = [out]
    if args.coefficients and isinstance(est, CoefficientTable):
        est.to_csv(args.coefficients)
        outputs.append(Path(args.coefficients))
    config = {"input": str(args.input), "dims": dims, "measure": args.measure,
              "estimator": args.estimator, "tau": args.tau, "delimiter": args.delimiter,
              "format": fmt}
    if args.estimator == "rf":
        config["forest"] = params.to_dict()
    _write_manifest(out.with_name(out.name + ".manifest.json"), "detect", argv, config, args.seed,
                    started, outputs, rho=det.rho.rho, converged=det.rho.converged)
    print(f"{len(det.outliers)} of {len(det)} cells flagged (rho={det.rho.rho:.6g}"
          f"{'' if det.rho.converged else ', not converged'}) -> {out}")
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    started = _now()
    counts = [int(k) for k in args.dims.split(",")]
    base = SynthConfig()
    names = [n for n, _ in base.dims] if len(counts) == len(base.dims) else [f"d{i + 1}" for i in range(len(counts))]
    ranges = base.value_ranges if len(counts) == len(base.value_ranges) else ((50, 150),) * len(counts)
    cfg = SynthConfig(dims=tuple(zip(names, counts)), value_ranges=ranges,
                      outlier_rate=args.outlier_rate, noise_divisor=args.noise_divisor, seed=args.seed)
    labeled = synthesize(cfg)
    out = Path(args.out)
    labeled.save(out)
    files = [out / f for f in ("cube.csv", "noiseless.csv", "mask.csv", "config.json")]
    _write_manifest(out / "manifest.json", "synth", argv, cfg.to_dict(), args.seed, started, files)
    print(f"{len(labeled.cube)} cells, {len(labeled.outlier_mask)} outliers -> {out}")
    return EXIT_OK


def _parse_estimators(spec: str) -> list[str]:
    if spec == "all":
        return list(ESTIMATORS)
    names = [s.strip().lower() for s in spec.split(",") if s.strip()]
    bad = [n for n in names if n not in ESTIMATORS]
    if bad:
        raise RoddError(f"unknown estimator(s): {', '.join(bad)}")
    return names


def cmd_bench(args, argv) -> int:
    started = _now()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    partial = out / "results.partial.csv"
    runtimes_path = out / "runtimes.csv"

    if args.resume:
        prior = json.loads((out / "manifest.json").read_text())
        argv = prior["argv"]
        cfg = prior["config"]
        args.profile, args.seeds, args.estimators = cfg["profile"], cfg["seeds"], cfg["estimators"]
        args.tau = cfg["tau"]
    profile: BenchProfile = PROFILES[args.profile]
    estimators = _parse_estimators(args.estimators)
    seeds = list(range(1, args.seeds + 1))
    config = {"profile": args.profile, "seeds": args.seeds, "estimators": args.estimators, "tau": args.tau,
              "grid": [c.to_dict() for c in profile.grid()], "forest": profile.forest.to_dict()}
    if args.profile == "paper":
        print("warning: the paper profile fits 1500-tree forests; expect hours of runtime", file=sys.stderr)

    done = read_results(partial) if args.resume and partial.exists() else []
    if not args.resume:
        partial.unlink(missing_ok=True)
        _write_manifest(out / "manifest.json", "bench", argv, config, None, started, [], status="running")

    new_file = not partial.exists()
    with open(partial, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(ALL_COLUMNS)

        def record(res):
            writer.writerow(result_row(res, ALL_COLUMNS))
            fh.flush()
            label = "FAILED " + res.error if res.error else f"auc={res.auc:.4f}"
            logger.info("%s seed=%d %s %s", res.config_id, res.seed, res.estimator, label)

        fresh = bench_sweep(profile.grid(), seeds, estimators, forest=profile.forest, tau=args.tau,
                            workers=args.threads, skip={r.key for r in done}, on_result=record)
    results = sort_results(done + fresh)

    write_results(results, out / "results.csv")
    write_results(results, runtimes_path, ["config_id", "seed", "estimator", "runtime"])
    summary = summarize(results)
    (out / "summary.txt").write_text(format_summary(summary), encoding="utf-8")
    try:
        adj = adjusted_auc(results)
    except RoddError as exc:
        logger.warning("adjusted AUC skipped: %s", exc)
        adj = []
    with open(out / "adjusted_auc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_id", "seed", "estimator", "auc", "adjusted_auc"])
        for row in adj:
            w.writerow([row["config_id"], row["seed"], row["estimator"], repr(row["auc"]), repr(row["adjusted_auc"])])
    with open(out / "results.json", "w") as fh:
        json.dump({"config": config, "version": __version__, "summary": summary,
                   "results": [{k: v for k, v in r.__dict__.items() if k != "runtime"} for r in results]},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    partial.unlink(missing_ok=True)
    outputs = [out / f for f in ("results.csv", "summary.txt", "adjusted_auc.csv", "results.json", "runtimes.csv")]
    _write_manifest(out / "manifest.json", "bench", argv, config, None, started, outputs, status="complete")
    sys.stdout.write(format_summary(summary))
    failed = sum(1 for r in results if not r.ok)
    if failed:
        print(f"{failed} of {len(results)} runs failed", file=sys.stderr)
    return EXIT_NUMERIC if results and failed == len(results) else EXIT_OK


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    return main(manifest["argv"])


def build_parser() -> argparse.ArgumentParser:
    threads_default = _env_threads()
    parser = argparse.ArgumentParser(prog="rodd", description="Robust outlier detection in data cubes.",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"rodd {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("detect", help="score every cell of a CSV cube", formatter_class=fmt)
    p.add_argument("--input", required=True, help="CSV file, one column per dimension plus a measure")
    p.add_argument("--dims", required=True, help="comma-separated dimension columns")
    p.add_argument("--measure", required=True, help="measure column")
    p.add_argument("--estimator", choices=ESTIMATORS, default="s75")
    p.add_argument("--tau", type=float, default=TAU, help="outlier threshold on the raw score")
    p.add_argument("--seed", type=int, default=0, help="forest seed")
    p.add_argument("--output", required=True, help="score file (.csv, or .json for the JSON layout)")
    p.add_argument("--format", choices=("csv", "json"), default=None, help="override the output format")
    p.add_argument("--delimiter", default=",", help="input CSV delimiter")
    p.add_argument("--paper-params", action="store_true", help="use the 1500-tree forest preset")
    p.add_argument("--forest-config", default=None, help="JSON file with forest parameters")
    p.add_argument("--coefficients", default=None, help="also write the fitted effect table here")
    p.add_argument("--threads", type=int, default=threads_default,
                   help="worker threads for forest fitting (env RODD_THREADS); results do not depend on it")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", help="write a labelled synthetic cube", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--outlier-rate", type=float, default=0.01)
    p.add_argument("--noise-divisor", type=float, default=5.0)
    p.add_argument("--dims", default="12,9,10", help="category count per dimension")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="run the estimator comparison sweep", formatter_class=fmt)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--estimators", default="all", help="'all' or a comma-separated list")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds per configuration")
    p.add_argument("--tau", type=float, default=TAU)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true", help="continue an interrupted sweep from its manifest")
    p.add_argument("--threads", type=int, default=threads_default,
                   help="worker processes (env RODD_THREADS); results do not depend on it")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest", formatter_class=fmt)
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except RoddError as exc:
        print(f"rodd {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"rodd {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
