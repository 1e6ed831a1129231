"""Repeated-run experiment plans: traces, summaries and plot-ready aggregates.

A plan names a dataset split, a list of runs (mode, hyperparameters, attribute)
and a repetition count. Repetition ``r`` uses seed ``base_seed + r`` both for
the train/test/seed split and for training, so every run in a repetition sees
the same partition and comparisons between modes are paired.

Output layout under ``output_dir``::

    plan.json                    the plan as executed
    traces/<run>/seed<s>.csv     one RoundTrace CSV per run and repetition
    fairness/<run>/seed<s>.json  signed and absolute parity per attribute
    summary.json                 mean and std of final metrics per run
    plot_ldap_by_round.csv       mean |L^dap| per round, one column per run
    plot_ldap_vs_rmse.csv        final (rmse, |L^dap|) per run and seed
"""

from __future__ import annotations

import csv
import json
import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import load_movielens, split
from .factor import Hyperparams
from .metrics import write_trace_csv
from .protocol import MODES, run_central_mf, run_training

log = logging.getLogger(__name__)

ALL_MODES = ("mf_central",) + MODES


def read_config(path):
    """Parse a ``.json`` file as JSON and anything else as TOML."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    return tomllib.loads(path.read_text())


@dataclass
class RunSpec:
    name: str
    mode: str
    hp: Hyperparams = field(default_factory=Hyperparams)
    attribute: str = "gender"

    def __post_init__(self):
        self.mode = self.mode.replace("-", "_")
        if self.mode not in ALL_MODES:
            raise ValueError(f"run {self.name!r}: unknown mode {self.mode!r}; "
                             f"expected one of {ALL_MODES}")

    def to_dict(self):
        return {"name": self.name, "mode": self.mode, "attribute": self.attribute,
                "hyperparams": self.hp.to_dict()}


@dataclass
class ExperimentPlan:
    dataset: dict
    runs: list
    repetitions: int = 10
    base_seed: int = 0
    output_dir: str = "runs"
    parallel: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.runs:
            raise ValueError("plan has no runs")
        names = [r.name for r in self.runs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate run names in {names}")
        ds = {"format": "ml100k", "train_frac": 0.8, "seed_user_frac": 0.0}
        ds.update(self.dataset)
        if "path" not in ds:
            raise ValueError("dataset section needs a path")
        self.dataset = ds

    @property
    def seeds(self):
        return [self.base_seed + r for r in range(self.repetitions)]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        defaults = d.pop("hyperparams", {})
        runs = []
        for i, r in enumerate(d.pop("runs", [])):
            r = dict(r)
            hp = Hyperparams(**{**defaults, **r.pop("hyperparams", {})})
            runs.append(RunSpec(r.pop("name", f"run{i}"), r.pop("mode"), hp,
                                r.pop("attribute", "gender")))
            if r:
                raise ValueError(f"run {runs[-1].name!r}: unknown keys {sorted(r)}")
        return cls(dataset=d.pop("dataset", {}), runs=runs, **d)

    @classmethod
    def load(cls, path):
        """Read a TOML or JSON plan file."""
        return cls.from_dict(read_config(path))

    def to_dict(self):
        return {"dataset": self.dataset, "repetitions": self.repetitions,
                "base_seed": self.base_seed, "output_dir": str(self.output_dir),
                "parallel": self.parallel, "runs": [r.to_dict() for r in self.runs]}


def execute(spec, partition, seed, workers=1):
    """Run one spec on one partition and return its TrainingResult."""
    if spec.mode == "mf_central":
        return run_central_mf(partition, spec.hp, seed, spec.attribute)
    return run_training(partition, spec.hp, spec.mode, seed, attribute=spec.attribute,
                        workers=workers)


def final_metrics(result):
    """Headline numbers from the last round of a run."""
    last = result.traces[-1]
    out = {"rmse": last.rmse_test, "ldap": last.ldap, "ldap_abs": abs(last.ldap),
           "rmse_group_a": last.rmse_group_a, "rmse_group_b": last.rmse_group_b}
    if result.full_round_params:
        sent = sum(t.params_uploaded for t in result.traces)
        out["comm_reduction"] = 1.0 - sent / (result.full_round_params * len(result.traces))
    for attr, g in last.groups.items():
        out[f"ldap_abs_{attr}"] = g["ldap_abs"]
    return out


def fairness_report(result, spec, seed):
    last = result.traces[-1]
    return {
        "run": spec.name, "mode": spec.mode, "seed": seed, "attribute": spec.attribute,
        "final": {a: {"ldap": g["ldap"], "ldap_abs": g["ldap_abs"],
                      "rmse_disadvantaged": g["rmse_a"], "rmse_advantaged": g["rmse_b"]}
                  for a, g in last.groups.items()},
        "ldap_by_round": {a: [t.groups[a]["ldap"] for t in result.traces] for a in last.groups},
    }


def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if len(a) > 1 else 0.0,
            "n": int(len(a))}


def _dump(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def run_plan(plan, dataset=None, workers=1):
    """Execute every run of ``plan`` for every seed and write the result files.

    Failed runs are logged and listed in the summary; the others still run.
    Returns the summary dict.
    """
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "plan.json", plan.to_dict())
    ds_cfg = plan.dataset
    if dataset is None:
        dataset = load_movielens(ds_cfg["path"], ds_cfg["format"])

    jobs = [(spec, seed) for seed in plan.seeds for spec in plan.runs]
    # one shared partition per seed, built up front so worker threads only read
    partitions = {seed: split(dataset, ds_cfg["train_frac"], ds_cfg["seed_user_frac"], seed)
                  for seed in plan.seeds}

    def job(item):
        spec, seed = item
        try:
            res = execute(spec, partitions[seed], seed, workers)
        except Exception as exc:  # recorded, the plan goes on
            log.error("run %s seed %d failed: %s", spec.name, seed, exc)
            return spec.name, seed, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
        write_path = out / "traces" / spec.name / f"seed{seed}.csv"
        write_path.parent.mkdir(parents=True, exist_ok=True)
        write_trace_csv(res.traces, write_path)
        _dump(out / "fairness" / spec.name / f"seed{seed}.json", fairness_report(res, spec, seed))
        series = [abs(t.ldap) for t in res.traces]
        return spec.name, seed, (final_metrics(res), series), None

    if plan.parallel > 1:
        with ThreadPoolExecutor(plan.parallel) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    return _summarize(plan, results, out)


def _summarize(plan, results, out):
    # sort so the summary is independent of completion order
    results = sorted(results, key=lambda r: (r[0], r[1]))
    summary = {"plan": plan.to_dict(), "seeds": plan.seeds, "runs": {}, "failures": []}
    by_round, scatter = {}, []
    for spec in plan.runs:
        ok = [(seed, res) for name, seed, res, err in results if name == spec.name and res]
        entry = {"mode": spec.mode, "attribute": spec.attribute, "completed": len(ok)}
        if ok:
            keys = sorted(set.intersection(*(set(r[0]) for _, r in ok)))
            entry["final"] = {k: _mean_std([r[0][k] for _, r in ok]) for k in keys}
            curves = np.array([r[1] for _, r in ok])
            by_round[spec.name] = curves.mean(axis=0)
            scatter += [(spec.name, seed, r[0]["rmse"], r[0]["ldap_abs"]) for seed, r in ok]
        summary["runs"][spec.name] = entry
    summary["failures"] = [{"run": n, "seed": s, "error": e} for n, s, _, e in results if e]

    _dump(out / "summary.json", summary)
    if by_round:
        names = list(by_round)
        rounds = max(len(v) for v in by_round.values())
        with open(out / "plot_ldap_by_round.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round"] + names)
            for t in range(rounds):
                w.writerow([t] + [repr(float(by_round[n][t])) if t < len(by_round[n]) else ""
                                  for n in names])
        with open(out / "plot_ldap_vs_rmse.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "seed", "rmse", "ldap_abs"])
            for name, seed, r, l in scatter:
                w.writerow([name, seed, repr(r), repr(l)])
    return summary

