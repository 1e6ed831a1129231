import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairfrs import Hyperparams, run_central_mf, run_training, split
from fairfrs.factor import item_gradients
from fairfrs.protocol import (HYBRID_FILLING, USER_AVERAGING, ClientState, GradientUpload,
                              _Population, _streams, aggregate, client_filling, client_round,
                              sample_clients, sample_virtual_items)
from oracles import naive_aggregate, scalar_training


def make_client(rng, m=12, n_items=4, k=3):
    items = np.sort(rng.choice(m, n_items, replace=False))
    return ClientState(7, rng.normal(0, 0.3, k), items, rng.integers(1, 6, n_items).astype(float))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 500), st.floats(0.01, 1.0), st.integers(0, 2 ** 20))
def test_sample_clients_shape(n, tau, seed):
    s = sample_clients(n, tau, np.random.default_rng(seed))
    assert len(s) == min(n, max(1, int(np.ceil(tau * n - 1e-9))))
    assert len(np.unique(s)) == len(s) and np.all(np.diff(s) > 0)
    assert s.min() >= 0 and s.max() < n


def test_sample_clients_full_and_errors():
    assert np.array_equal(sample_clients(5, 1.0, 0), np.arange(5))
    for tau in (0.0, 1.2):
        with pytest.raises(ValueError):
            sample_clients(5, tau, 0)


def test_virtual_items_disjoint_and_sized(rng):
    c = make_client(rng)
    sample_virtual_items(c, 12, 2.0, rng)
    assert len(c.virtual_items) == 8 and not set(c.virtual_items) & set(c.items)
    c2 = make_client(rng, m=6, n_items=4)
    sample_virtual_items(c2, 6, 2.0, rng)
    assert len(c2.virtual_items) == 2  # capped by the unrated pool


def test_user_averaging_uses_mean(rng):
    c = sample_virtual_items(make_client(rng), 12, 2.0, rng)
    client_filling(c, None, USER_AVERAGING, Hyperparams())
    assert np.all(c.r_virtual == c.ratings.mean())


def test_hybrid_filling_predicts(rng):
    c = sample_virtual_items(make_client(rng), 12, 1.0, rng)
    V = rng.normal(size=(12, 3))
    client_filling(c, V, USER_AVERAGING, Hyperparams())
    u0 = c.u.copy()
    client_filling(c, V, HYBRID_FILLING, Hyperparams(T_local=3), gamma=0.1)
    assert not np.array_equal(c.u, u0)
    assert np.allclose(c.r_virtual, V[c.virtual_items] @ c.u)


def test_filling_errors(rng):
    c = ClientState(0, np.zeros(2), np.array([], int), np.array([]), np.array([1]), np.array([0.]))
    with pytest.raises(ValueError):
        client_filling(c, None, USER_AVERAGING, Hyperparams())
    c2 = sample_virtual_items(make_client(rng), 12, 1.0, rng)
    with pytest.raises(ValueError):
        client_filling(c2, None, "median", Hyperparams())


def test_exact_prediction_uploads_regularizer():
    u, v = np.array([1.0, 2.0]), np.array([0.5, 1.0])
    c = ClientState(0, u.copy(), np.array([0]), np.array([u @ v]),
                    np.array([], int), np.array([]))
    V = v[None, :]
    _, up = client_round(c, V, None, Hyperparams(k=2, eta=0.0, lambda_r=0.1, rho=0), 0)
    assert np.allclose(up.gradients, 0.1 * V)


def test_upload_covers_true_and_virtual_items_only(rng):
    c = sample_virtual_items(make_client(rng), 12, 2.0, rng)
    V = rng.normal(size=(12, 3))
    _, up = client_round(c, V, None, Hyperparams(k=3), 0)
    assert sorted(up.item_ids) == sorted(np.concatenate([c.items, c.virtual_items]))
    assert up.n_params == len(up.item_ids) * 3
    payload = json.loads(up.to_json())
    assert set(payload) == {"user_id", "item_ids", "gradients"}


def test_client_round_with_fair_rows(rng):
    c = sample_virtual_items(make_client(rng), 12, 1.0, rng)
    V, Vf = rng.normal(size=(12, 3)), rng.normal(size=(12, 3))
    hp = Hyperparams(k=3, eta=0.5)
    c_copy = ClientState(c.user_id, c.u.copy(), c.items, c.ratings, c.virtual_items,
                         c.r_virtual.copy())
    _, a = client_round(c, V, Vf, hp, 0)
    _, b = client_round(c_copy, V, None, hp, 0)
    items = a.item_ids
    assert np.allclose(a.gradients - b.gradients, 2 * 0.5 * (V[items] - Vf[items]))


def test_aggregate_matches_naive_mean(rng):
    m, k = 30, 4
    uploads = [GradientUpload(int(u), np.sort(rng.choice(m, rng.integers(1, 10), replace=False)),
                              None) for u in rng.permutation(50)]
    for up in uploads:
        up.gradients = rng.normal(size=(len(up.item_ids), k))
    assert np.array_equal(aggregate(uploads, m, k), naive_aggregate(uploads, m, k))


def test_aggregate_skips_untouched_items():
    up = GradientUpload(0, np.array([1]), np.ones((1, 2)))
    out = aggregate([up], 3, 2)
    assert out[0].tolist() == [0, 0] and out[1].tolist() == [1, 1]


def _virtual_map(partition, hp, seed):
    pop = _Population(partition, partition.dataset.m, hp.rho, _streams(seed)["virtual"])
    out = {}
    for c, u in enumerate(pop.clients):
        lo, hi = pop.starts[c], pop.starts[c] + pop.counts[c]
        out[int(u)] = pop.item[lo:hi][~pop.observed[lo:hi]]
    return out


@pytest.mark.parametrize("mode,extra", [("fedrec", {}), ("rs_fedrec", {}),
                                        ("rs_fedrec", {"train_sampled_only": True})])
def test_engine_matches_scalar_reference(synth_part, small_hp, mode, extra):
    hp = small_hp.replace(**extra)
    res = run_training(synth_part, hp, mode, rng_seed=4)
    U, V, counts = scalar_training(synth_part, hp, mode, 4, _virtual_map(synth_part, hp, 4))
    assert np.allclose(res.model.item_vectors, V, rtol=0, atol=1e-10)
    assert np.allclose(res.model.user_vectors, U, rtol=0, atol=1e-10)
    assert [t.params_uploaded for t in res.traces] == [c * hp.k for c in counts]


def test_tau_one_matches_fedrec_bitwise(synth_part, small_hp):
    a = run_training(synth_part, small_hp.replace(tau=1.0), "rs_fedrec", 2)
    b = run_training(synth_part, small_hp, "fedrec", 2)
    assert np.array_equal(a.model.item_vectors, b.model.item_vectors)
    assert [t.row() | {"mode": 0} for t in a.traces] == [t.row() | {"mode": 0} for t in b.traces]


def test_fair_mode_without_penalties_matches_rs_fedrec(synth_part, small_hp):
    hp = small_hp.replace(eta=0.0, lambda_f=0.0)
    a = run_training(synth_part, hp, "rs_fairfrs", 5)
    b = run_training(synth_part, hp, "rs_fedrec", 5)
    assert np.array_equal(a.model.item_vectors, b.model.item_vectors)
    assert np.array_equal(a.model.user_vectors, b.model.user_vectors)


def test_workers_do_not_change_results(synth_part, small_hp):
    runs = [run_training(synth_part, small_hp, "rs_fairfrs", 1, workers=w) for w in (1, 3, 8)]
    for r in runs[1:]:
        assert np.array_equal(r.model.item_vectors, runs[0].model.item_vectors)
        assert [t.row() for t in r.traces] == [t.row() for t in runs[0].traces]


def test_params_uploaded_counts_payloads(synth_part, small_hp):
    seen = {}
    hook = lambda t, up: seen.setdefault(t, []).append(up)
    res = run_training(synth_part, small_hp, "rs_fairfrs", 0, upload_hook=hook)
    for tr in res.traces:
        ups = seen[tr.round]
        assert tr.params_uploaded == sum(u.n_params for u in ups)
        assert tr.clients_uploaded == len(ups) == int(np.ceil(small_hp.tau * len(
            synth_part.client_users) - 1e-9))
        assert len({u.user_id for u in ups}) == len(ups)


def test_uploads_leak_nothing_private(synth_part, small_hp):
    ds = synth_part.dataset
    res_holder = []

    def hook(t, up):
        payload = json.loads(up.to_json())
        assert set(payload) == {"user_id", "item_ids", "gradients"}
        res_holder.append(up)

    res = run_training(synth_part, small_hp, "rs_fairfrs", 0, upload_hook=hook)
    U = res.model.user_vectors
    for up in res_holder:
        assert not np.any(np.all(np.isclose(up.gradients[:, None, :], U[None, :, :]), axis=2))


def test_trace_fields(synth_part, small_hp):
    res = run_training(synth_part, small_hp, "rs_fedrec", 0, attribute="age")
    assert len(res.traces) == small_hp.T
    assert all(t.rmse_test >= 0 for t in res.traces)
    assert set(res.traces[0].groups) == {"age", "gender"}
    g = [t.gamma for t in res.traces]
    assert np.allclose(g, small_hp.gamma * small_hp.gamma_decay ** np.arange(small_hp.T))
    assert res.traces[-1].ldap == res.traces[-1].groups["age"]["ldap"]


def test_checkpoints(tmp_path, synth_part, small_hp):
    run_training(synth_part, small_hp, "rs_fairfrs", 0, checkpoint_dir=tmp_path,
                 checkpoint_every=3)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "round003.V.bin" in names and "round006.V_fair.bin" in names


def test_fair_mode_needs_seed_data(synth, small_hp):
    with pytest.raises(ValueError, match="seed"):
        run_training(split(synth, 0.8, 0.0, 0), small_hp, "rs_fairfrs", 0)


def test_unknown_mode_and_attribute(synth_part, small_hp):
    with pytest.raises(ValueError):
        run_training(synth_part, small_hp, "fedavg", 0)
    with pytest.raises(KeyError):
        run_training(synth_part, small_hp, "rs_fedrec", 0, attribute="income")


def test_central_mf_learns(synth_part):
    res = run_central_mf(synth_part, Hyperparams(k=4, T=30, gamma_server=0.02))
    r = [t.rmse_test for t in res.traces]
    assert r[-1] < r[0] and res.traces[0].mode == "mf_central"


def test_item_gradients_reused_by_client_round(rng):
    c = sample_virtual_items(make_client(rng), 12, 1.0, rng)
    V = rng.normal(size=(12, 3))
    client_filling(c, V, USER_AVERAGING, Hyperparams())
    u0, tg = c.u.copy(), c.targets()
    _, up = client_round(c, V, None, Hyperparams(k=3, lambda_r=0.05), 0)
    assert np.array_equal(up.gradients, item_gradients(u0, V[up.item_ids], tg, 0.05))
