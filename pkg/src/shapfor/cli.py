"""Command-line interface: fit, analyze, oracle, generate, benchmark."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import benchmarks
from .forest import EnsembleFormatError, deserialize, serialize
from .oracle import mc_shapley, mc_variance
from .sampler import Dataset, SamplerConfig, fit
from .sensitivity import DEFAULT_EXACT_THRESHOLD, assemble_report
from .testbed import FUNCTION_NAMES, GenerationSpec, TestFunction, generate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ValidationError(ValueError):
    pass


def read_csv_dataset(path: str, response: str = "y") -> Dataset:
    """Load a dataset from a headered CSV; non-response columns are inputs."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValidationError(f"{path}: empty CSV file")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValidationError(
                        f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    col = next(i for i, v in enumerate(row)
                               if not _is_float(v)) + 1
                    raise ValidationError(f"{path}:{lineno}: column {col}: {exc}")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}")
    if response not in header:
        raise ValidationError(
            f"response column {response!r} not found; available columns: "
            + ", ".join(header))
    if len(rows) < 2:
        raise ValidationError(f"{path}: need at least 2 data rows")
    data = np.asarray(rows)
    y_col = header.index(response)
    x_cols = [i for i in range(len(header)) if i != y_col]
    try:
        return Dataset(data[:, x_cols], data[:, y_col])
    except ValueError as exc:
        raise ValidationError(str(exc))


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def write_csv_dataset(path: str, dataset: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(dataset.p)] + ["y"])
        for xi, yi in zip(dataset.X, dataset.y):
            writer.writerow([format(v, ".17g") for v in xi] + [format(yi, ".17g")])


def _default_threads() -> int:
    env = os.environ.get("SHAPFOR_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _write_report(report, out_prefix: str, plot: bool) -> list:
    paths = []
    json_path = out_prefix + ".json"
    with open(json_path, "w") as fh:
        fh.write(report.to_json() + "\n")
    paths.append(json_path)
    txt_path = out_prefix + ".txt"
    with open(txt_path, "w") as fh:
        fh.write(report.to_text())
    paths.append(txt_path)
    if plot:
        plot_path = out_prefix + "_plot.csv"
        with open(plot_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["input", "index", "point", "lo", "hi"])
            for row in report.plot_rows():
                writer.writerow(row)
        paths.append(plot_path)
    return paths


def cmd_fit(args) -> int:
    dataset = read_csv_dataset(args.csv, args.response)
    config = SamplerConfig(
        num_trees=args.trees, n_burn=args.burn, n_draw=args.draws, thin=args.thin,
        sparsity=args.sparsity, splitnet_mode=args.splitnet,
        splitnet_grid=args.grid, seed=args.seed,
    )
    progress = None
    if args.verbose:
        def progress(sweep, total, rate, sigma2):
            print(f"sweep {sweep}/{total} accept_rate={rate:.3f} sigma2={sigma2:.5g}")
    ensemble = fit(dataset, config, progress=progress)
    with open(args.out, "w") as fh:
        serialize(ensemble, fh)
    sig2 = np.array([s2 for _, s2 in ensemble.draws]) * ensemble.y_scaling[1] ** 2
    print(f"wrote {args.out}: p={ensemble.p} n_draw={ensemble.n_draw} "
          f"T={len(ensemble.draws[0][0].trees)}")
    print(f"sigma2 posterior mean (raw units): {sig2.mean():.6g}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        with open(args.ensemble) as fh:
            ensemble = deserialize(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {args.ensemble}: {exc}")
    except EnsembleFormatError as exc:
        raise ValidationError(str(exc))
    levels = tuple(float(v) for v in args.levels.split(","))
    report = assemble_report(
        ensemble, m=args.m, levels=levels, seed=args.seed,
        exact_threshold=args.exact_threshold, n_jobs=args.threads,
    )
    paths = _write_report(report, args.out, plot=args.plot)
    print("wrote " + ", ".join(paths))
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.function not in FUNCTION_NAMES:
        raise ValidationError(
            f"unknown function {args.function!r}; choose from {FUNCTION_NAMES}")
    fn = TestFunction(args.function, d=args.active, p=args.dim or args.active)
    box = fn.as_blackbox()
    rng = np.random.default_rng(args.seed)
    var, var_se = mc_variance(box, N=args.n_var, rng=rng)
    cache: dict = {}
    inputs = []
    for j in range(box.p):
        est, se = mc_shapley(box, j, n_subsets=args.subsets, n_outer=args.outer,
                             n_inner=args.inner, rng=rng, cost_cache=cache)
        inputs.append({
            "input": j,
            "S": {"point": est, "stderr": se},
            "normalized": {"S": {"point": est / var, "stderr": se / var}},
        })
    payload = {
        "metadata": {
            "method": "mc", "function": args.function, "seed": args.seed,
            "n_subsets": args.subsets, "n_outer": args.outer, "n_inner": args.inner,
        },
        "variance": {"point": var, "stderr": var_se},
        "inputs": inputs,
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.function not in FUNCTION_NAMES:
        raise ValidationError(
            f"unknown function {args.function!r}; choose from {FUNCTION_NAMES}")
    fn = TestFunction(args.function, d=args.active, p=args.dim or args.active)
    spec = GenerationSpec(n=args.n, noise_ratio=args.noise, seed=args.seed)
    dataset = generate(fn, spec)
    write_csv_dataset(args.out, dataset)
    print(f"wrote {args.out}: n={dataset.n} p={dataset.p}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    runner = benchmarks.SUITES.get(args.suite)
    if runner is None:
        raise ValidationError(
            f"unknown suite {args.suite!r}; choose from {sorted(benchmarks.SUITES)}")
    os.makedirs(args.out, exist_ok=True)
    metrics = runner(seed=args.seed)
    out_path = os.path.join(args.out, f"{args.suite}.json")
    with open(out_path, "w") as fh:
        json.dump(metrics, fh, indent=2, default=float)
        fh.write("\n")
    status = "PASS" if metrics["pass"] else "FAIL"
    print(f"{args.suite}: {status} (details in {out_path})")
    return EXIT_OK if metrics["pass"] else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapfor",
        description="Sum-of-trees regression with closed-form Shapley effects "
                    "and Sobol' indices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p_fit.add_argument("csv")
    p_fit.add_argument("--response", default="y")
    p_fit.add_argument("--trees", type=int, default=200)
    p_fit.add_argument("--draws", type=int, default=1000)
    p_fit.add_argument("--burn", type=int, default=1000)
    p_fit.add_argument("--thin", type=int, default=1)
    p_fit.add_argument("--sparsity", action="store_true")
    p_fit.add_argument("--splitnet", choices=["uniform_grid", "observed_values"],
                       default="uniform_grid")
    p_fit.add_argument("--grid", type=int, default=100)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--verbose", action="store_true")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_an = sub.add_parser("analyze", help="compute sensitivity report from an ensemble file")
    p_an.add_argument("ensemble")
    p_an.add_argument("--m", type=int, default=1)
    p_an.add_argument("--levels", default="0.025,0.975")
    p_an.add_argument("--seed", type=int, default=0)
    p_an.add_argument("--exact-threshold", type=int, default=DEFAULT_EXACT_THRESHOLD)
    p_an.add_argument("--threads", type=int, default=_default_threads())
    p_an.add_argument("--plot", action="store_true")
    p_an.add_argument("--out", required=True, help="output path prefix")
    p_an.set_defaults(func=cmd_analyze)

    p_or = sub.add_parser("oracle", help="Monte-Carlo Shapley estimates for a test function")
    p_or.add_argument("function")
    p_or.add_argument("--active", type=int, default=5)
    p_or.add_argument("--dim", type=int, default=None)
    p_or.add_argument("--subsets", type=int, default=64)
    p_or.add_argument("--outer", type=int, default=10000)
    p_or.add_argument("--inner", type=int, default=16)
    p_or.add_argument("--n-var", type=int, default=1_000_000)
    p_or.add_argument("--seed", type=int, default=0)
    p_or.add_argument("--out", required=True)
    p_or.set_defaults(func=cmd_oracle)

    p_gen = sub.add_parser("generate", help="generate a synthetic CSV dataset")
    p_gen.add_argument("function")
    p_gen.add_argument("--active", type=int, default=5)
    p_gen.add_argument("--dim", type=int, default=None)
    p_gen.add_argument("--n", type=int, default=None)
    p_gen.add_argument("--noise", type=float, default=0.25)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_generate)

    p_bm = sub.add_parser("benchmark", help="run a named acceptance scenario")
    p_bm.add_argument("suite")
    p_bm.add_argument("--seed", type=int, required=True)
    p_bm.add_argument("--out", default="benchmark-results")
    p_bm.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
