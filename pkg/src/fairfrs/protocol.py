"""Federated rounds: client filling and local updates, sampling, aggregation.

Three modes share one engine:

* ``fedrec``: every client uploads every round (tau forced to 1).
* ``rs_fedrec``: a uniform ``tau`` share of clients uploads each round.
* ``rs_fairfrs``: as ``rs_fedrec``, plus server-side FairMF on the seed data
  and a proximity pull of local item gradients toward the fair item vectors.

Client work is vectorized over contiguous blocks of clients; ``workers > 1``
spreads the blocks over threads. Each block owns disjoint rows of U and of the
per-entry buffers, and aggregation sums in ascending user order, so results do
not depend on the worker count.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, factor
from .fairness import GroupPartition, compute_ldap, fairmf, identify_groups
from .factor import Hyperparams, dump_matrix
from .metrics import RoundTrace, group_rmse, rmse

log = logging.getLogger(__name__)

MODES = ("fedrec", "rs_fedrec", "rs_fairfrs")
USER_AVERAGING, HYBRID_FILLING = "user_averaging", "hybrid_filling"


@dataclass
class ClientState:
    user_id: int
    u: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    virtual_items: np.ndarray | None = None
    r_virtual: np.ndarray | None = None
    labels: dict = field(default_factory=dict)  # never leaves the client

    def all_items(self):
        return np.concatenate([self.items, self.virtual_items])

    def targets(self):
        return np.concatenate([self.ratings, self.r_virtual])


@dataclass
class GradientUpload:
    user_id: int
    item_ids: np.ndarray
    gradients: np.ndarray

    def to_json(self):
        return json.dumps({"user_id": int(self.user_id),
                           "item_ids": [int(i) for i in self.item_ids],
                           "gradients": self.gradients.tolist()})

    @property
    def n_params(self):
        return int(self.gradients.size)


@dataclass
class ServerState:
    V: np.ndarray
    V_fair: np.ndarray | None = None
    U_fair: np.ndarray | None = None
    seed_user_ids: np.ndarray | None = None

    def save(self, prefix):
        dump_matrix(f"{prefix}.V.bin", self.V)
        if self.V_fair is not None:
            dump_matrix(f"{prefix}.V_fair.bin", self.V_fair)
            dump_matrix(f"{prefix}.U_fair.bin", self.U_fair)


@dataclass
class TrainingResult:
    model: factor.FactorModel
    server: ServerState
    traces: list
    full_round_params: int = 0  # what one round uploads when every client takes part


# --- single-client API ------------------------------------------------------

def sample_virtual_items(client, m, rho, rng):
    """Draw I'_u from the items the client has not rated, |I'_u| = rho |I_u| (capped)."""
    pool = np.setdiff1d(np.arange(m), client.items, assume_unique=False)
    size = min(int(round(rho * len(client.items))), len(pool))
    client.virtual_items = np.sort(rng.choice(pool, size=size, replace=False))
    client.r_virtual = np.full(size, np.nan)
    return client


def client_filling(client, V, strategy, hp, gamma=None):
    """Assign virtual ratings by user averaging or hybrid filling (in place)."""
    if len(client.ratings) == 0:
        raise ValueError(f"client {client.user_id} has no observed ratings")
    if strategy == USER_AVERAGING:
        client.r_virtual = np.full(len(client.virtual_items), float(np.mean(client.ratings)))
    elif strategy == HYBRID_FILLING:
        gamma = hp.gamma if gamma is None else gamma
        items = client.all_items()
        for _ in range(hp.T_local):
            g = factor.user_gradient(client.u, V[items], client.targets(), hp.lambda_r)
            client.u = client.u - gamma * g
        client.r_virtual = V[client.virtual_items] @ client.u
    else:
        raise ValueError(f"unknown filling strategy {strategy!r}")
    return client


def client_round(client, V, V_fair, hp, round, gamma=None):
    """One local step: filling, gradients of the local objective, user update.

    Returns the client and its upload (item gradients for I_u and I'_u only).
    """
    gamma = hp.gamma if gamma is None else gamma
    strategy = USER_AVERAGING if round < hp.T_predict else HYBRID_FILLING
    client_filling(client, V, strategy, hp, gamma)
    items = client.all_items()
    fair_rows = V_fair[items] if V_fair is not None else None
    eta = hp.eta if V_fair is not None else 0.0
    gu, gv = factor.fo_client_gradients(client.u, V[items], client.targets(), fair_rows,
                                        eta, hp.lambda_r)
    client.u = client.u - gamma * gu
    return client, GradientUpload(client.user_id, items, gv)


def aggregate(uploads, m, k):
    """Per-item mean of uploaded gradients; items nobody uploaded get zero."""
    total = np.zeros((m, k))
    count = np.zeros(m, dtype=np.int64)
    for up in sorted(uploads, key=lambda x: x.user_id):
        np.add.at(total, up.item_ids, up.gradients)
        np.add.at(count, up.item_ids, 1)
    out = np.zeros((m, k))
    hit = count > 0
    out[hit] = total[hit] / count[hit, None]
    return out


def sample_clients(n, tau, rng):
    """ceil(tau n) distinct ids in [0, n), uniform without replacement, sorted."""
    if not 0 < tau <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    size = max(1, min(n, math.ceil(tau * n - 1e-9)))
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if size == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


# --- vectorized engine ------------------------------------------------------

class _Population:
    """Flattened true+virtual entries of all clients, grouped by ascending user."""

    def __init__(self, partition, m, rho, rng):
        users, items, values = partition.train
        clients, starts_true, counts_true = np.unique(users, return_index=True, return_counts=True)
        self.clients = clients
        e_user, e_item, e_rating, e_obs = [], [], [], []
        self.means = np.empty(len(clients))
        all_items = np.arange(m)
        for c, (u, s, cnt) in enumerate(zip(clients, starts_true, counts_true)):
            it, rv = items[s:s + cnt], values[s:s + cnt]
            pool = np.setdiff1d(all_items, it, assume_unique=True)
            vsize = min(int(round(rho * cnt)), len(pool))
            virt = np.sort(rng.choice(pool, size=vsize, replace=False))
            self.means[c] = rv.mean()
            e_user.append(np.full(cnt + vsize, u))
            e_item.append(np.concatenate([it, virt]))
            e_rating.append(np.concatenate([rv, np.full(vsize, np.nan)]))
            e_obs.append(np.concatenate([np.ones(cnt, bool), np.zeros(vsize, bool)]))
        self.user = np.concatenate(e_user).astype(np.int64)
        self.item = np.concatenate(e_item).astype(np.int64)
        self.rating = np.concatenate(e_rating)
        self.observed = np.concatenate(e_obs)
        self.counts = np.array([len(x) for x in e_user], dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(np.int64)
        self.owner = np.repeat(np.arange(len(clients)), self.counts)
        self.r_virtual = np.where(self.observed, np.nan, self.means[self.owner])

    def targets(self, lo, hi):
        return np.where(self.observed[lo:hi], self.rating[lo:hi], self.r_virtual[lo:hi])

    def blocks(self, clients_idx, n_blocks):
        """Split client indices (sorted) into contiguous blocks of roughly equal size."""
        if len(clients_idx) == 0:
            return []
        return [b for b in np.array_split(clients_idx, max(1, n_blocks)) if len(b)]


def _local_work(pop, block, U, V, V_fair, hp, gamma, hybrid, eta, grads):
    """Filling, gradients and user update for a block of client indices (in place)."""
    fair = V_fair if V_fair is not None else np.zeros((1, V.shape[1]))
    _kernels.client_block(np.ascontiguousarray(block, dtype=np.int64), pop.clients, pop.starts,
                          pop.counts, U, V, fair, pop.item, pop.rating, pop.observed,
                          pop.r_virtual, hybrid, hp.T_local, float(gamma), float(hp.lambda_r),
                          float(eta), grads)


def _evaluate(U, V, test, groups, clamp):
    users, items, values = test
    pred = np.einsum("ij,ij->i", U[users], V[items])
    if clamp is not None:
        pred = np.clip(pred, *clamp)
    out = {"rmse": rmse(pred, values)}
    for name, gp in groups.items():
        a, b = group_rmse(users, pred, values, gp)
        rep = compute_ldap(users, pred, values, gp)
        out[name] = {"rmse_a": a, "rmse_b": b, "ldap": rep.ldap, "ldap_abs": rep.ldap_abs,
                     "n_a": rep.n_g, "n_b": rep.n_not_g}
    return out


def _seed_holdout(seed_local, frac, rng):
    """Per seed user, withhold ``frac`` of ratings (users with < 2 keep all) for the parity sign."""
    holdout = np.zeros(len(seed_local), dtype=bool)
    if frac <= 0:
        return ~holdout, holdout
    for s in np.unique(seed_local):
        rows = np.flatnonzero(seed_local == s)
        n_out = int(np.floor(frac * len(rows)))
        if len(rows) >= 2 and n_out:
            holdout[rng.choice(rows, size=n_out, replace=False)] = True
    return ~holdout, holdout


def _streams(rng_seed):
    names = ("init", "virtual", "sampling", "server")
    seqs = np.random.SeedSequence(rng_seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, seqs)}


def run_training(partition, hp=None, mode="rs_fedrec", rng_seed=0, attribute="gender",
                 workers=1, upload_hook=None, clamp=(1.0, 5.0), checkpoint_dir=None,
                 checkpoint_every=0):
    """Run ``hp.T`` communication rounds and return the model, server state and traces.

    ``upload_hook(round, upload)`` receives every GradientUpload that reaches the
    server, in ascending user order; building uploads costs time, so pass it
    only when needed.
    """
    hp = hp or Hyperparams()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "fedrec":
        hp = hp.replace(tau=1.0)
    ds = partition.dataset
    rngs = _streams(rng_seed)

    model = factor.init_model(ds.n, ds.m, hp.k, rngs["init"], scale=hp.init_std)
    U, V = model.user_vectors, model.item_vectors
    if len(partition.client_users) == 0:
        raise ValueError("no clients with training ratings")
    pop = _Population(partition, ds.m, hp.rho, rngs["virtual"])
    n_clients = len(pop.clients)
    all_idx = np.arange(n_clients)

    groups = {a: identify_groups(ds, a) for a in sorted(ds.attributes)}
    if attribute not in groups:
        raise KeyError(f"unknown attribute {attribute!r}")
    test = partition.test

    server = ServerState(V)
    fair = mode == "rs_fairfrs"
    if fair:
        s_users, s_items, s_values = partition.server_seed
        seed_ids, s_local = np.unique(s_users, return_inverse=True)
        if len(seed_ids) == 0:
            raise ValueError("rs_fairfrs needs server seed data (seed_user_frac > 0)")
        gp = groups[attribute]
        seed_groups = GroupPartition(attribute, gp.disadvantaged[seed_ids],
                                     gp.disadvantaged_label, gp.advantaged_label)
        server.U_fair = rngs["server"].normal(0.0, hp.init_std, (len(seed_ids), hp.k))
        server.seed_user_ids = seed_ids
        fit, holdout = _seed_holdout(s_local, hp.fair_holdout, rngs["server"])
        s_fit = (s_local[fit], s_items[fit], s_values[fit])
        s_hold = (s_local[holdout], s_items[holdout], s_values[holdout]) if holdout.any() else None

    grads = np.zeros((len(pop.user), hp.k))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    traces = []
    gamma = hp.gamma
    try:
        for t in range(hp.T):
            t0 = time.perf_counter()
            V_fair, eta = None, 0.0
            if fair:
                server.U_fair, server.V_fair = fairmf(
                    *s_fit, V, server.U_fair, seed_groups, hp.t_s, hp.lambda_r, hp.lambda_f,
                    hp.gamma_server, rngs["server"], holdout=s_hold)
                V_fair, eta = server.V_fair, hp.eta

            sampled = (all_idx if mode == "fedrec"
                       else sample_clients(n_clients, hp.tau, rngs["sampling"]))
            active = sampled if hp.train_sampled_only else all_idx
            hybrid = t >= hp.T_predict
            blocks = pop.blocks(active, workers)
            job = lambda b: _local_work(pop, b, U, V, V_fair, hp, gamma, hybrid, eta, grads)
            if pool is None:
                for b in blocks:
                    job(b)
            else:
                list(pool.map(job, blocks))

            emask = np.zeros(n_clients, bool)
            emask[sampled] = True
            emask = emask[pop.owner]
            if upload_hook is not None:
                for c in sampled:
                    lo, hi = pop.starts[c], pop.starts[c] + pop.counts[c]
                    upload_hook(t, GradientUpload(int(pop.clients[c]), pop.item[lo:hi].copy(),
                                                  grads[lo:hi].copy()))
            total = np.zeros_like(V)
            count = np.zeros(ds.m, dtype=np.int64)
            _kernels.accumulate(emask, pop.item, grads, total, count)
            hit = count > 0
            V[hit] = V[hit] - gamma * (total[hit] / count[hit, None])

            ev = _evaluate(U, V, test, groups, clamp)
            main = ev[attribute]
            traces.append(RoundTrace(
                round=t, mode=mode, tau=hp.tau, rmse_test=ev["rmse"],
                rmse_group_a=main["rmse_a"], rmse_group_b=main["rmse_b"], ldap=main["ldap"],
                params_uploaded=int(emask.sum()) * hp.k, gamma=gamma,
                clients_uploaded=len(sampled),
                groups={a: ev[a] for a in groups}, wall_time=time.perf_counter() - t0))
            if checkpoint_dir and checkpoint_every and (t + 1) % checkpoint_every == 0:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                server.save(Path(checkpoint_dir) / f"round{t + 1:03d}")
            gamma = gamma * hp.gamma_decay
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainingResult(factor.FactorModel(U, V), server, traces, len(pop.user) * hp.k)


def run_central_mf(partition, hp=None, rng_seed=0, attribute="gender", clamp=(1.0, 5.0)):
    """Centralized SGD matrix factorization on the pooled train split; one epoch per round."""
    from .fairness import _sweep

    hp = hp or Hyperparams()
    ds = partition.dataset
    rngs = _streams(rng_seed)
    model = factor.init_model(ds.n, ds.m, hp.k, rngs["init"], scale=hp.init_std)
    U, V = model.user_vectors, model.item_vectors
    users, items, values = partition.train
    weights = np.ones(len(values))
    groups = {a: identify_groups(ds, a) for a in sorted(ds.attributes)}
    test = partition.test
    traces = []
    for t in range(hp.T):
        t0 = time.perf_counter()
        order = rngs["sampling"].permutation(len(values))
        _sweep(U, V, users, items, values, weights, order, float(hp.lambda_r),
               float(hp.gamma_server))
        ev = _evaluate(U, V, test, groups, clamp)
        main = ev[attribute]
        traces.append(RoundTrace(
            round=t, mode="mf_central", tau=1.0, rmse_test=ev["rmse"],
            rmse_group_a=main["rmse_a"], rmse_group_b=main["rmse_b"], ldap=main["ldap"],
            params_uploaded=0, gamma=hp.gamma_server, clients_uploaded=0,
            groups={a: ev[a] for a in groups}, wall_time=time.perf_counter() - t0))
    return TrainingResult(factor.FactorModel(U, V), ServerState(V), traces)
