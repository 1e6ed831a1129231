"""Accuracy metrics, per-round traces and communication accounting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

TRACE_COLUMNS = ("round", "mode", "tau", "rmse_test", "rmse_group_a", "rmse_group_b",
                 "ldap", "params_uploaded", "gamma")


def rmse(predictions, ratings, clamp=None):
    """Root mean squared error; ``clamp=(a, b)`` clips predictions first."""
    predictions = np.asarray(predictions, dtype=np.float64)
    ratings = np.asarray(ratings, dtype=np.float64)
    if predictions.size == 0:
        raise ValueError("rmse of an empty prediction set")
    if clamp is not None:
        predictions = np.clip(predictions, *clamp)
    return float(np.sqrt(np.mean((predictions - ratings) ** 2)))


def group_rmse(users, predictions, ratings, groups, clamp=None):
    """RMSE over the disadvantaged group's pairs and over the advantaged group's pairs."""
    users = np.asarray(users)
    in_g = groups.disadvantaged[users]
    if in_g.all() or not in_g.any():
        raise ValueError(f"group {groups.attribute!r} has no test ratings on one side")
    predictions, ratings = np.asarray(predictions), np.asarray(ratings)
    return (rmse(predictions[in_g], ratings[in_g], clamp),
            rmse(predictions[~in_g], ratings[~in_g], clamp))


@dataclass
class RoundTrace:
    round: int
    mode: str
    tau: float
    rmse_test: float
    rmse_group_a: float
    rmse_group_b: float
    ldap: float
    params_uploaded: int
    gamma: float
    clients_uploaded: int = 0
    groups: dict = field(default_factory=dict)  # attribute -> per-group RMSE and ldap
    wall_time: float = 0.0

    @property
    def ldap_abs(self):
        return abs(self.ldap)

    def row(self):
        return {c: getattr(self, c) for c in TRACE_COLUMNS}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace_csv(traces, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t in traces:
            w.writerow([_fmt(t.row()[c]) for c in TRACE_COLUMNS])


def read_trace_csv(path):
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(RoundTrace(
                round=int(rec["round"]), mode=rec["mode"], tau=float(rec["tau"]),
                rmse_test=float(rec["rmse_test"]), rmse_group_a=float(rec["rmse_group_a"]),
                rmse_group_b=float(rec["rmse_group_b"]), ldap=float(rec["ldap"]),
                params_uploaded=int(rec["params_uploaded"]), gamma=float(rec["gamma"])))
    return out


def comm_cost(trace, baseline=None):
    """Parameter totals for a trace and, given a tau=1 baseline, the relative reduction.

    ``wall_clock_reduction`` is always ``None``: only parameter counts are
    hardware-independent.
    """
    params = np.array([t.params_uploaded for t in trace], dtype=np.int64)
    report = {
        "total_params": int(params.sum()),
        "per_round_mean": float(params.mean()) if len(params) else 0.0,
        "reduction": None,
        "wall_clock_reduction": None,
    }
    if baseline is not None:
        if len(baseline) != len(trace):
            raise ValueError(f"round counts differ: {len(trace)} vs baseline {len(baseline)}")
        base = np.array([t.params_uploaded for t in baseline], dtype=np.int64)
        report["reduction"] = float(1.0 - params.sum() / base.sum())
    return report
