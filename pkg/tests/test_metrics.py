import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fairfrs.fairness import GroupPartition
from fairfrs.metrics import (TRACE_COLUMNS, RoundTrace, comm_cost, group_rmse, read_trace_csv,
                             rmse, write_trace_csv)
from oracles import rmse_loop


def test_rmse_examples():
    assert rmse([3.0, 4.0], [3.0, 4.0]) == 0.0
    assert rmse([1.0, 5.0], [3.0, 3.0]) == 2.0
    with pytest.raises(ValueError):
        rmse([], [])


def test_rmse_matches_loop(rng):
    p, r = rng.uniform(0, 6, 100), rng.integers(1, 6, 100).astype(float)
    assert rmse(p, r) == pytest.approx(rmse_loop(p, r), abs=1e-12)
    assert rmse(p, r, (1, 5)) == pytest.approx(rmse_loop(p, r, (1, 5)), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 20, elements=st.floats(1, 5)), arrays(float, 20, elements=st.floats(1, 5)))
def test_clamp_is_noop_in_range(p, r):
    assert rmse(p, r) == rmse(p, r, (1, 5))


@settings(max_examples=60, deadline=None)
@given(arrays(float, 20, elements=st.floats(-2, 8)), arrays(float, 20, elements=st.floats(1, 5)))
def test_clamp_never_hurts(p, r):
    assert rmse(p, r, (1, 5)) <= rmse(p, r) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 20))
def test_group_rmse_recombines(seed):
    rng = np.random.default_rng(seed)
    users = rng.integers(0, 10, 60)
    users[:2] = [0, 1]
    flags = np.zeros(10, bool)
    flags[0] = True
    flags[rng.integers(0, 10, 3)] = True
    flags[1] = False
    gp = GroupPartition("x", flags, "a", "b")
    p, r = rng.uniform(1, 5, 60), rng.uniform(1, 5, 60)
    a, b = group_rmse(users, p, r, gp)
    n_a = flags[users].sum()
    total = rmse(p, r)
    assert n_a * a ** 2 + (60 - n_a) * b ** 2 == pytest.approx(60 * total ** 2, abs=1e-9)
    # per-group values equal masked recomputation
    assert a == pytest.approx(rmse_loop(p[flags[users]], r[flags[users]]), abs=1e-12)


def test_group_rmse_identical_predictions():
    users = np.array([0, 1, 0, 1])
    gp = GroupPartition("x", np.array([True, False]), "a", "b")
    a, b = group_rmse(users, np.full(4, 3.0), np.full(4, 4.0), gp)
    assert a == b == 1.0


def test_group_rmse_empty_group():
    gp = GroupPartition("x", np.array([True, False]), "a", "b")
    with pytest.raises(ValueError):
        group_rmse(np.array([0, 0]), np.ones(2), np.ones(2), gp)


def trace(params):
    return [RoundTrace(t, "m", 1.0, 1.0, 1.0, 1.0, 0.0, p, 0.1) for t, p in enumerate(params)]


def test_comm_cost():
    base = trace([100, 100, 100])
    assert comm_cost(base, base)["reduction"] == 0.0
    rep = comm_cost(trace([35, 30, 40]), base)
    assert rep["reduction"] == pytest.approx(0.65)
    assert rep["total_params"] == 105 and rep["per_round_mean"] == 35.0
    assert rep["wall_clock_reduction"] is None
    assert comm_cost(base)["reduction"] is None
    with pytest.raises(ValueError, match="round counts"):
        comm_cost(trace([1, 2]), base)


def test_expected_reduction_uniform_clients(rng):
    # n clients with equal item counts, ceil(0.35 n) sampled per round
    n, k, T = 1000, 20, 20
    sent = [int(np.ceil(0.35 * n)) * 30 * k for _ in range(T)]
    rep = comm_cost(trace(sent), trace([n * 30 * k] * T))
    assert rep["reduction"] == pytest.approx(0.65, abs=0.01)


def test_trace_csv_roundtrip(tmp_path):
    tr = [RoundTrace(0, "rs_fedrec", 0.35, 0.1 + 0.2, 1 / 3, 2 / 3, -1e-17, 1234, 0.6)]
    p = tmp_path / "t.csv"
    write_trace_csv(tr, p)
    assert p.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
    back = read_trace_csv(p)
    assert back[0].row() == tr[0].row()
