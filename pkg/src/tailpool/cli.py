"""Command-line interface.

Exit status is 0 on success, 1 for bad input and 2 for numerical failure
(singular matrix, degenerate design).
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import math
import os
import sys
from collections import OrderedDict

import numpy as np

from . import __version__
from .distributed import aggregate, dump_summaries, load_summaries, machine_summarize
from .errors import NumericalError
from .pipeline import pool_samples, resolve_ks, test_homogeneity, test_homoskedasticity
from .simulation import load_config, result_rows, run_experiment, write_csv
from .tail import SortedSample, default_k

SCHEMA_VERSION = 1
SEED_ENV = "TAILPOOL_SEED"


class InputError(ValueError):
    pass


def read_samples(path) -> "OrderedDict[str, np.ndarray]":
    """Read a long-format ``sample_id,value`` CSV, preserving row order within samples."""
    groups: OrderedDict[str, list[float]] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample_id", "value"]:
            raise InputError(f"{path}: header must be 'sample_id,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise InputError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                value = float(row[1])
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad value {row[1]!r}") from None
            if not math.isfinite(value):
                raise InputError(f"{path}:{lineno}: non-finite value")
            groups.setdefault(row[0].strip(), []).append(value)
    if not groups:
        raise InputError(f"{path}: no data rows")
    return OrderedDict((sid, np.asarray(v)) for sid, v in groups.items())


def parse_ks(args, data: "OrderedDict[str, np.ndarray]") -> list[int]:
    sizes = [x.size for x in data.values()]
    if args.k_frac is not None:
        if args.k:
            raise InputError("use either --k-frac or --k, not both")
        return resolve_ks(sizes, k_fraction=args.k_frac)
    ks = [default_k(n) for n in sizes]
    ids = list(data)
    for item in args.k or []:
        if "=" in item:
            sid, _, val = item.partition("=")
            if sid not in data:
                raise InputError(f"--k: unknown sample id {sid!r}")
            targets = [ids.index(sid)]
        else:
            val, targets = item, range(len(ids))
        try:
            kval = int(val)
        except ValueError:
            raise InputError(f"--k: bad value {item!r}") from None
        for t in targets:
            ks[t] = kval
    return ks


def clean(obj):
    """Round floats to 10 significant digits and map non-finite values to null."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.10g}") if math.isfinite(x) else None
    return obj


def emit(payload: dict, output) -> None:
    text = json.dumps(clean({"schema_version": SCHEMA_VERSION, **payload}), indent=2) + "\n"
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(output, "w") as fh:
            fh.write(text)


def _estimate_dict(est, interval) -> dict:
    return {
        "gamma": est.gamma,
        "stderr": est.stderr,
        "bias_est": est.bias_est,
        "weights": est.weights,
        "correction": est.correction,
        "interval": {"lower": interval.lower, "upper": interval.upper, "level": interval.level},
    }


def _test_dict(res) -> dict:
    return {
        "statistic": res.statistic,
        "dof": res.dof,
        "p_value": res.p_value,
        "reject_at": {f"{a:g}": bool(r) for a, r in res.reject_at.items()},
    }


def cmd_pool_estimate(args) -> int:
    data = read_samples(args.input)
    ks = parse_ks(args, data)
    rep = pool_samples(
        list(data.values()), ks, independent=args.independent, p_levels=args.p,
        level=args.level, nonnegative=args.nonnegative, ids=list(data),
    )
    if args.weights not in rep.estimates:
        raise InputError(f"unknown weight scheme {args.weights!r}")
    marginal = [
        {"sample_id": sid, "n": f.n, "k": f.k, "gamma_hat": f.gamma_hat, "threshold": f.threshold,
         "rho_hat": so.rho_hat, "beta_hat": so.beta_hat, "second_order_degenerate": so.degenerate}
        for sid, f, so in zip(data, rep.fits, rep.second_order)
    ]
    emit({
        "command": "pool-estimate",
        "sample_ids": list(data),
        "k_total": rep.k_total,
        "n_total": rep.n_total,
        "dependence": "independent" if rep.copula is None else "estimated",
        "tail_copula": rep.copula,
        "marginal": marginal,
        "selected": args.weights,
        "estimates": {name: _estimate_dict(est, rep.intervals[name]) for name, est in rep.estimates.items()},
        "quantiles": [{"p": p, **rep.quantiles[p]} for p in args.p],
    }, args.output)
    return 0


def cmd_pool_test(args) -> int:
    data = read_samples(args.input)
    if len(data) < 2:
        raise InputError("tests need at least two samples")
    ks = parse_ks(args, data)
    rep = pool_samples(list(data.values()), ks, independent=args.independent, ids=list(data))
    if args.test == "homogeneity":
        res = test_homogeneity(rep)
    else:
        if args.p is None:
            raise InputError("homoskedasticity test needs --p")
        res = test_homoskedasticity(rep, args.p)
    emit({
        "command": "pool-test",
        "test": args.test,
        "p": args.p,
        "sample_ids": list(data),
        "k": ks,
        "dependence": "independent" if rep.copula is None else "estimated",
        **_test_dict(res),
    }, args.output)
    return 0


def cmd_machine_summarize(args) -> int:
    data = read_samples(args.input)
    ks = parse_ks(args, data)
    summaries = [
        machine_summarize(SortedSample.from_values(x, sid), k, tuning=args.tuning)
        for (sid, x), k in zip(data.items(), ks)
    ]
    if args.output in (None, "-"):
        emit({"command": "machine-summarize", "summaries": [s.to_dict() for s in summaries]}, None)
    else:
        dump_summaries(summaries, args.output)
    return 0


def cmd_aggregate(args) -> int:
    paths = []
    for pattern in args.summaries:
        matched = sorted(glob.glob(pattern))
        if not matched:
            raise InputError(f"no summary files match {pattern!r}")
        paths.extend(matched)
    summaries = load_summaries(paths)
    rep = aggregate(summaries, p_levels=args.p, level=args.level, nonnegative=args.nonnegative)
    ests = rep.estimates()
    if args.scheme not in ests:
        raise InputError(f"unknown scheme {args.scheme!r}")
    emit({
        "command": "aggregate",
        "machine_ids": sorted(s.machine_id for s in summaries),
        "selected": args.scheme,
        "estimates": {name: _estimate_dict(est, rep.intervals[name]) for name, est in ests.items()},
        "lambda_hat_pooled": rep.lambda_hat_pooled,
        "lambda0": rep.lambda0,
        "quantiles": [{"p": p, **rep.quantiles[p]} for p in args.p],
        "diagnostics": rep.diagnostics,
    }, args.output)
    return 0


def cmd_simulate(args) -> int:
    seed = args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    scenarios = load_config(args.config, seed=seed, workers=args.workers)
    rows = []
    for name, spec, cfg in scenarios:
        rows.extend(result_rows(name, run_experiment(spec, cfg)))
    write_csv(rows, sys.stdout if args.output in (None, "-") else args.output)
    return 0


def _probability(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < x < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return x


def _add_k_options(p):
    p.add_argument("--k-frac", type=_probability, help="k_j = floor(f * n_j)")
    p.add_argument("--k", action="append", metavar="ID=K",
                   help="explicit k for one sample (repeatable); a bare integer applies to all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailpool", description="Pooled tail index and extreme quantile estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool-estimate", help="pool tail estimates across samples")
    p.add_argument("input", help="long-format CSV with header sample_id,value")
    _add_k_options(p)
    p.add_argument("--weights", default="variance_optimal", help="scheme reported as 'selected'")
    p.add_argument("--level", type=_probability, default=0.95)
    p.add_argument("--p", type=_probability, action="append", default=[], help="tail probability (repeatable)")
    p.add_argument("--independent", action="store_true", help="assume independent samples")
    p.add_argument("--nonnegative", action="store_true", help="project AMSE weights onto the simplex")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_pool_estimate)

    p = sub.add_parser("pool-test", help="homogeneity or homoskedasticity test")
    p.add_argument("input")
    p.add_argument("--test", choices=("homogeneity", "homoskedasticity"), required=True)
    _add_k_options(p)
    p.add_argument("--p", type=_probability)
    p.add_argument("--independent", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_pool_test)

    p = sub.add_parser("machine-summarize", help="reduce each sample to a machine summary")
    p.add_argument("input")
    _add_k_options(p)
    p.add_argument("--tuning", type=float, default=0.0, help="moment-ratio tuning parameter")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_machine_summarize)

    p = sub.add_parser("aggregate", help="pool machine summaries")
    p.add_argument("summaries", nargs="+", help="summary JSON files or glob patterns")
    p.add_argument("--p", type=_probability, action="append", default=[])
    p.add_argument("--scheme", default="variance_optimal")
    p.add_argument("--level", type=_probability, default=0.95)
    p.add_argument("--nonnegative", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("simulate", help="run Monte Carlo scenarios from a TOML config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help=f"overrides the config seed; {SEED_ENV} overrides this")
    p.add_argument("--workers", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"tailpool: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"tailpool: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
