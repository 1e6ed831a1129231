"""``fairfrs`` command line: ingest, train, bound, mc, elbow and experiment.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
Output files go to ``--out``, else ``$FAIRFRS_OUTPUT_DIR``, else the working
directory. Every output is a pure function of the flags and the seed; only the
manifest header carries a timestamp.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, Partition, load_movielens, restrict_seed_items, split
from .experiments import (ExperimentPlan, RunSpec, execute, fairness_report, final_metrics,
                          read_config, run_plan)
from .factor import Hyperparams, load_matrix
from .metrics import comm_cost, write_trace_csv
from .sampling import bound_report, cluster_representation_mc, kmeans_elbow

log = logging.getLogger("fairfrs")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
OUTPUT_ENV = "FAIRFRS_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _nonneg(kind):
    def conv(text):
        v = kind(text)
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
        return v
    return conv


def _out_dir(args):
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --- subcommands ------------------------------------------------------------

def cmd_ingest(args):
    ds = load_movielens(args.dir, args.format)
    part = split(ds, args.train_frac, args.seed_user_frac, args.seed)
    if args.seed_keep_frac < 1:
        part = restrict_seed_items(part, args.seed_keep_frac, args.seed)
    path = _out_dir(args) / args.manifest
    manifest = part.to_manifest(path)
    c = manifest["counts"]
    print(f"wrote {path}: {c['users']} users, {c['items']} items, {c['train']} train, "
          f"{c['test']} test, {c['seed_users']} seed users")
    return EXIT_OK


_HP_FLAGS = ("k", "tau", "T", "rho", "t_s", "lambda_r", "lambda_f", "eta", "gamma",
             "gamma_decay", "gamma_server", "T_local", "T_predict", "fair_holdout")


def _hyperparams(args):
    base = {}
    if args.config:
        cfg = read_config(args.config)
        base.update(cfg.get("hyperparams", cfg))
    for name in _HP_FLAGS:
        v = getattr(args, name)
        if v is not None:
            base[name] = v
    if args.train_sampled_only:
        base["train_sampled_only"] = True
    try:
        return Hyperparams(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad hyperparameters: {exc}") from exc


def _partition(args):
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        src = manifest["header"]["source"]
        ds = load_movielens(args.dir or src["path"], args.format or src["format"])
        return Partition.from_manifest(ds, manifest)
    if not args.dir:
        raise UsageError("train needs --manifest or --dir")
    ds = load_movielens(args.dir, args.format or "ml100k")
    return split(ds, args.train_frac, args.seed_user_frac, args.seed)


def cmd_train(args):
    hp = _hyperparams(args)
    mode = args.mode.replace("-", "_")
    part = _partition(args)
    spec = RunSpec(mode, mode, hp, args.attribute)
    out = _out_dir(args)
    config = {"mode": mode, "attribute": args.attribute, "seed": args.seed,
              "workers": args.workers, "hyperparams": hp.to_dict(),
              "partition": part.params, "version": __version__}
    _write_json(out / "config.json", config)
    try:
        res = execute(spec, part, args.seed, args.workers)
    except (ValueError, KeyError) as exc:
        raise DatasetError(str(exc)) from exc
    write_trace_csv(res.traces, out / "trace.csv")
    res.model.save(out / "model")
    summary = {
        "config": config,
        "final": final_metrics(res),
        "comm": comm_cost(res.traces),
        "ldap_series": [t.ldap for t in res.traces],
        "rmse_series": [t.rmse_test for t in res.traces],
    }
    if res.full_round_params:
        summary["comm"]["reduction"] = summary["final"]["comm_reduction"]
    _write_json(out / "summary.json", summary)
    _write_json(out / "fairness_report.json", fairness_report(res, spec, args.seed))
    last = res.traces[-1]
    print(f"{mode}: {len(res.traces)} rounds, test rmse {last.rmse_test:.4f}, "
          f"ldap({args.attribute}) {last.ldap:+.4f}; outputs in {out}")
    return EXIT_OK


def cmd_bound(args):
    if args.lemma1:
        if args.sample is None:
            raise UsageError("--lemma1 needs --sample")
        rep = bound_report("lemma1", sample_size=args.sample, epsilon=args.eps)
    else:
        if args.n is None:
            raise UsageError("--theorem1 needs --n")
        a, b = args.range
        if not a < b:
            raise UsageError(f"--range needs a < b, got {a} {b}")
        rep = bound_report("theorem1", n=args.n, tau=args.tau, epsilon=args.eps,
                           rating_range=(a, b))
    _emit(json.dumps(rep, sort_keys=True) + "\n", args.out_file)
    return EXIT_OK


def cmd_mc(args):
    if args.tau > 1:
        raise UsageError("--tau must be in (0, 1]")
    rep = cluster_representation_mc(args.n, args.k, args.tau, args.trials, args.deviation,
                                    args.seed, balanced=not args.iid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic", "value"])
    for key in ("mean_count", "exceed_prob", "min_count"):
        w.writerow([key, repr(rep[key]) if isinstance(rep[key], float) else rep[key]])
    _emit(buf.getvalue(), args.out_file)
    if args.out_file is not None:
        detail = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in rep.items()}
        _write_json(Path(args.out_file).with_suffix(".json"), detail)
    return EXIT_OK


def _read_vectors(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".csv":
        return np.loadtxt(path, delimiter=",", ndmin=2)
    return load_matrix(path)


def cmd_elbow(args):
    if args.k_min > args.k_max:
        raise UsageError("--k-min exceeds --k-max")
    try:
        X = _read_vectors(args.vectors)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{args.vectors}: {exc}") from exc
    rows = kmeans_elbow(X, range(args.k_min, args.k_max + 1), args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["K", "inertia"])
    for K, inertia in rows:
        w.writerow([K, repr(inertia)])
    _emit(buf.getvalue(), args.out_file)
    return EXIT_OK


def cmd_experiment(args):
    try:
        plan = ExperimentPlan.load(args.plan)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad plan {args.plan}: {exc}") from exc
    if args.out or os.environ.get(OUTPUT_ENV):
        plan.output_dir = str(_out_dir(args))
    summary = run_plan(plan, workers=args.workers)
    for name, entry in summary["runs"].items():
        fin = entry.get("final", {})
        if fin:
            print(f"{name}: rmse {fin['rmse']['mean']:.4f} +- {fin['rmse']['std']:.4f}, "
                  f"|ldap| {fin['ldap_abs']['mean']:.4f} +- {fin['ldap_abs']['std']:.4f} "
                  f"({entry['completed']} runs)")
    if summary["failures"]:
        print(f"{len(summary['failures'])} run(s) failed; see summary.json", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="fairfrs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_flags(q, required):
        q.add_argument("--dir", required=required, help="MovieLens directory")
        q.add_argument("--format", choices=("ml100k", "ml1m"), default="ml100k" if required else None)
        q.add_argument("--train-frac", type=_positive(float), default=0.8)
        q.add_argument("--seed-user-frac", type=_nonneg(float), default=0.0)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")

    q = sub.add_parser("ingest", help="validate a dataset and write a partition manifest")
    data_flags(q, True)
    q.add_argument("--seed-keep-frac", type=_positive(float), default=1.0)
    q.add_argument("--manifest", default="manifest.json", help="manifest file name")
    q.set_defaults(func=cmd_ingest)

    q = sub.add_parser("train", help="train one model and write trace, summary and model")
    data_flags(q, False)
    q.add_argument("--mode", required=True,
                   choices=("mf-central", "fedrec", "rs-fedrec", "rs-fairfrs"))
    q.add_argument("--manifest", help="partition manifest from ingest")
    q.add_argument("--config", help="TOML/JSON file of hyperparameters")
    q.add_argument("--attribute", default="gender", choices=("gender", "age"))
    q.add_argument("--workers", type=_positive(int), default=1)
    q.add_argument("--train-sampled-only", action="store_true")
    d = Hyperparams()
    for flag in _HP_FLAGS:
        kind = type(getattr(d, flag))
        q.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=_nonneg(kind), default=None,
                       help=f"default {getattr(d, flag)}")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("bound", help="evaluate a sampling concentration bound")
    g = q.add_mutually_exclusive_group(required=True)
    g.add_argument("--theorem1", action="store_true")
    g.add_argument("--lemma1", action="store_true")
    q.add_argument("--n", type=_positive(int))
    q.add_argument("--tau", type=_positive(float), default=0.35)
    q.add_argument("--eps", type=_positive(float), required=True)
    q.add_argument("--range", type=float, nargs=2, default=(1.0, 5.0), metavar=("A", "B"))
    q.add_argument("--sample", type=_positive(int), help="sampled clients |C| for --lemma1")
    q.add_argument("--out-file")
    q.set_defaults(func=cmd_bound)

    q = sub.add_parser("mc", help="Monte Carlo cluster representation under sampling")
    q.add_argument("--n", type=_positive(int), required=True)
    q.add_argument("--k", type=_positive(int), required=True, help="number of clusters")
    q.add_argument("--tau", type=_positive(float), default=0.35)
    q.add_argument("--trials", type=_positive(int), default=500)
    q.add_argument("--deviation", type=_positive(float), default=0.15)
    q.add_argument("--iid", action="store_true", help="i.i.d. cluster labels instead of balanced")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out-file")
    q.set_defaults(func=cmd_mc)

    q = sub.add_parser("elbow", help="k-means inertia over a range of K")
    q.add_argument("--vectors", required=True, help="matrix dump, .npy or .csv of row vectors")
    q.add_argument("--k-min", type=_positive(int), default=1)
    q.add_argument("--k-max", type=_positive(int), default=30)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out-file")
    q.set_defaults(func=cmd_elbow)

    q = sub.add_parser("experiment", help="run a TOML/JSON experiment plan")
    q.add_argument("--plan", required=True)
    q.add_argument("--workers", type=_positive(int), default=1)
    q.add_argument("--out")
    q.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fairfrs {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"fairfrs {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"fairfrs {args.command}: runtime error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
