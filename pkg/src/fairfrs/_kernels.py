"""Compiled inner loops for the round engine.

Each client is processed independently and in a fixed order, so splitting the
client range into blocks (one per worker) cannot change any result.
"""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _user_grad(U, V, owner, item, target, lo, hi, lambda_r, out):
    k = U.shape[1]
    for d in range(k):
        out[d] = 0.0
    for j in range(lo, hi):
        i = item[j]
        pred = 0.0
        for d in range(k):
            pred += U[owner, d] * V[i, d]
        e = pred - target[j - lo]
        for d in range(k):
            out[d] += e * V[i, d]
    n = hi - lo
    for d in range(k):
        out[d] = out[d] / n + lambda_r * U[owner, d]


@numba.njit(cache=True, nogil=True)
def client_block(clients, owners, starts, counts, U, V, V_fair, item, rating, observed,
                 r_virtual, hybrid, T_local, gamma, lambda_r, eta, grads):
    """Filling, gradients and the user step for every client index in ``clients``."""
    k = U.shape[1]
    gu = np.empty(k)
    for c in clients:
        u = owners[c]
        lo = starts[c]
        hi = lo + counts[c]
        tg = np.empty(hi - lo)
        for j in range(lo, hi):
            tg[j - lo] = rating[j] if observed[j] else r_virtual[j]
        if hybrid:
            for _ in range(T_local):
                _user_grad(U, V, u, item, tg, lo, hi, lambda_r, gu)
                for d in range(k):
                    U[u, d] -= gamma * gu[d]
            for j in range(lo, hi):
                if not observed[j]:
                    i = item[j]
                    pred = 0.0
                    for d in range(k):
                        pred += U[u, d] * V[i, d]
                    r_virtual[j] = pred
                    tg[j - lo] = pred
        _user_grad(U, V, u, item, tg, lo, hi, lambda_r, gu)
        for j in range(lo, hi):
            i = item[j]
            pred = 0.0
            for d in range(k):
                pred += U[u, d] * V[i, d]
            e = pred - tg[j - lo]
            for d in range(k):
                grads[j, d] = e * U[u, d] + lambda_r * V[i, d]
            if eta != 0.0:
                for d in range(k):
                    grads[j, d] += 2.0 * eta * (V[i, d] - V_fair[i, d])
        for d in range(k):
            U[u, d] -= gamma * gu[d]


@numba.njit(cache=True)
def accumulate(entry_mask, item, grads, total, count):
    """Sum gradients per item over masked entries, in entry order."""
    k = grads.shape[1]
    for j in range(item.shape[0]):
        if entry_mask[j]:
            i = item[j]
            count[i] += 1
            for d in range(k):
                total[i, d] += grads[j, d]
