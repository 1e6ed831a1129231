"""Independent reference implementations: plain loops and finite differences."""

import math

import numpy as np

from fairfrs import factor
from fairfrs.fairness import fairmf_gradients, fairmf_objective, ldap_coefficients
from fairfrs.fairness import GroupPartition


def rmse_loop(pred, ratings, clamp=None):
    s = 0.0
    for p, r in zip(pred, ratings):
        if clamp is not None:
            p = min(max(p, clamp[0]), clamp[1])
        s += (p - r) ** 2
    return math.sqrt(s / len(pred))


def ldap_loop(users, pred, ratings, disadvantaged):
    per = {}
    for u, p, r in zip(users, pred, ratings):
        per.setdefault(int(u), []).append((p - r) ** 2)
    g = [sum(v) / len(v) for u, v in per.items() if disadvantaged[u]]
    ng = [sum(v) / len(v) for u, v in per.items() if not disadvantaged[u]]
    return sum(g) / len(g) - sum(ng) / len(ng)


def naive_aggregate(uploads, m, k):
    """Per-item mean over uploaders, summing clients in ascending id order."""
    out = np.zeros((m, k))
    for i in range(m):
        rows = [up.gradients[j] for up in sorted(uploads, key=lambda x: x.user_id)
                for j, it in enumerate(up.item_ids) if it == i]
        if rows:
            acc = np.zeros(k)
            for r in rows:
                acc = acc + r
            out[i] = acc / len(rows)
    return out


def _fd(f, x, h=1e-6):
    return factor.numeric_gradient(f, x, h)


def gradient_cases(n_cases=100, seed=0):
    """Relative errors of every analytic gradient against central differences.

    Returns a list of (objective name, k, relative error). All objectives are
    checked in their half-derivative form except the proximity term, whose
    derivative is taken in full (see ``fairfrs.factor``).
    """
    rng = np.random.default_rng(seed)
    out = []
    for case in range(n_cases):
        k = (1, 2, 20)[case % 3]
        nu, ni = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        U, V = rng.normal(0, 0.7, (nu, k)), rng.normal(0, 0.7, (ni, k))
        lam = float(rng.uniform(0, 0.5))
        # one observed pair per (u, i) drawn at random, at least one per user
        pairs = sorted({(u, int(rng.integers(ni))) for u in range(nu)}
                       | {(int(rng.integers(nu)), int(rng.integers(ni))) for _ in range(4)})
        users = np.array([p[0] for p in pairs])
        items = np.array([p[1] for p in pairs])
        vals = rng.integers(1, 6, len(pairs)).astype(float)

        # pooled MF loss, with respect to both factor matrices
        def loss_U(x):
            return 0.5 * factor.mf_loss(x, V, users, items, vals, lam)

        def loss_V(x):
            return 0.5 * factor.mf_loss(U, x, users, items, vals, lam)

        resid = np.einsum("ij,ij->i", U[users], V[items]) - vals
        gU = np.zeros_like(U)
        gV = np.zeros_like(V)
        np.add.at(gU, users, resid[:, None] * V[items] + lam * U[users])
        np.add.at(gV, items, resid[:, None] * U[users] + lam * V[items])
        out.append(("mf_loss/U", k, factor.relative_error(gU, _fd(loss_U, U))))
        out.append(("mf_loss/V", k, factor.relative_error(gV, _fd(loss_V, V))))

        # one client: normalized user objective and per-item objectives
        u = U[0]
        Vi = V[rng.permutation(ni)[:max(1, ni - 1)]]
        tg = rng.uniform(1, 5, len(Vi))
        f_u = lambda x: (0.5 * np.sum((Vi @ x - tg) ** 2) / len(Vi)
                         + 0.5 * lam * x @ x)
        out.append(("user_gradient", k, factor.relative_error(
            factor.user_gradient(u, Vi, tg, lam), _fd(f_u, u))))
        gv = factor.item_gradients(u, Vi, tg, lam)
        f_v = lambda x: 0.5 * np.sum((x @ u - tg) ** 2) + 0.5 * lam * np.sum(x * x)
        out.append(("item_gradient", k, factor.relative_error(gv, _fd(f_v, Vi))))
        single = factor.item_gradient(u, Vi[0], tg[0], 1, 0.0, lam)
        out.append(("item_gradient/single", k, factor.relative_error(single, gv[0])))

        # fairness-oriented client objective
        eta = float(rng.uniform(0.1, 1.0))
        Vf = Vi + rng.normal(0, 0.3, Vi.shape)
        _, gfo = factor.fo_client_gradients(u, Vi, tg, Vf, eta, lam)
        f_fo = lambda x: f_v(x) + eta * np.sum((Vf - x) ** 2)
        out.append(("fo_item", k, factor.relative_error(gfo, _fd(f_fo, Vi))))

        # fair MF objective (penalty away from its kink)
        dis = np.zeros(nu, bool)
        dis[0] = True
        gp = GroupPartition("g", dis, "a", "b")
        coef = ldap_coefficients(users, gp)
        lam_f = float(rng.uniform(0.5, 5.0))
        gfU, gfV = fairmf_gradients(U, V, users, items, vals, coef, lam, lam_f)
        fU = lambda x: 0.5 * fairmf_objective(x, V, users, items, vals, coef, lam, lam_f)
        fV = lambda x: 0.5 * fairmf_objective(U, x, users, items, vals, coef, lam, lam_f)
        out.append(("fairmf/U", k, factor.relative_error(gfU, _fd(fU, U))))
        out.append(("fairmf/V", k, factor.relative_error(gfV, _fd(fV, V))))
    return out


def scalar_training(partition, hp, mode, rng_seed, virtual_items):
    """Slow reference for run_training's federated modes without FairMF.

    ``virtual_items`` maps user -> virtual item array (taken from the engine's
    own draw, since the sampling of I'_u is not what is being checked).
    Returns (U, V, list of per-round uploaded entry counts).
    """
    from fairfrs.protocol import (ClientState, _streams, aggregate, client_round,
                                  sample_clients)
    ds = partition.dataset
    rngs = _streams(rng_seed)
    model = factor.init_model(ds.n, ds.m, hp.k, rngs["init"], scale=hp.init_std)
    U, V = model.user_vectors.copy(), model.item_vectors.copy()
    per_user = partition.per_user("train")
    clients = []
    for u in sorted(per_user):
        it, rv = per_user[u]
        clients.append(ClientState(u, U[u].copy(), it, rv, virtual_items=virtual_items[u],
                                   r_virtual=np.full(len(virtual_items[u]), rv.mean())))
    if mode == "fedrec":
        hp = hp.replace(tau=1.0)
    gamma = hp.gamma
    counts = []
    for t in range(hp.T):
        sampled = (np.arange(len(clients)) if mode == "fedrec"
                   else sample_clients(len(clients), hp.tau, rngs["sampling"]))
        chosen = set(sampled.tolist())
        uploads = []
        for c, cl in enumerate(clients):
            if hp.train_sampled_only and c not in chosen:
                continue
            _, up = client_round(cl, V, None, hp, t, gamma)
            if c in chosen:
                uploads.append(up)
        agg = aggregate(uploads, ds.m, hp.k)
        V = V - gamma * agg
        counts.append(sum(len(up.item_ids) for up in uploads))
        gamma *= hp.gamma_decay
    for cl in clients:
        U[cl.user_id] = cl.u
    return U, V, counts
