"""Demographic accuracy parity and server-side fair matrix factorization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroupPartition:
    """Binary split of users; ``disadvantaged[u]`` marks membership of the minority g."""

    attribute: str
    disadvantaged: np.ndarray
    disadvantaged_label: str
    advantaged_label: str

    @property
    def g(self):
        return np.flatnonzero(self.disadvantaged)

    @property
    def not_g(self):
        return np.flatnonzero(~self.disadvantaged)

    def swapped(self):
        return GroupPartition(self.attribute, ~self.disadvantaged,
                              self.advantaged_label, self.disadvantaged_label)


@dataclass(frozen=True)
class FairnessReport:
    ldap: float
    loss_g: float
    loss_not_g: float
    n_g: int
    n_not_g: int

    @property
    def ldap_abs(self):
        return abs(self.ldap)

    def to_dict(self):
        return {"ldap": self.ldap, "ldap_abs": self.ldap_abs, "loss_g": self.loss_g,
                "loss_not_g": self.loss_not_g, "n_g": self.n_g, "n_not_g": self.n_not_g}


def identify_groups(dataset, attribute):
    """The smaller group by user count is disadvantaged; ties go to the first label."""
    if attribute not in dataset.attributes:
        raise KeyError(f"dataset has no attribute {attribute!r}; "
                       f"available: {sorted(dataset.attributes)}")
    labels = dataset.attributes[attribute]
    values, counts = np.unique(labels, return_counts=True)
    if len(values) != 2:
        raise ValueError(f"attribute {attribute!r} is not binary: {values.tolist()}")
    if counts[0] == counts[1]:
        log.warning("attribute %r splits users evenly; parity is degenerate, "
                    "treating %r as disadvantaged", attribute, values[0])
        dis = 0
    else:
        dis = int(np.argmin(counts))
    return GroupPartition(attribute, labels == values[dis], str(values[dis]), str(values[1 - dis]))


def per_user_mse(users, errors, n):
    """Mean squared error per user; NaN for users without pairs."""
    users = np.asarray(users)
    cnt = np.bincount(users, minlength=n)
    sse = np.bincount(users, weights=np.square(errors), minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sse / cnt, cnt


def compute_ldap(users, predictions, ratings, groups):
    """Group-mean of per-user MSE for g minus the same for not-g."""
    errors = np.asarray(predictions, dtype=np.float64) - np.asarray(ratings, dtype=np.float64)
    mse, cnt = per_user_mse(users, errors, len(groups.disadvantaged))
    seen = cnt > 0
    in_g, in_not_g = seen & groups.disadvantaged, seen & ~groups.disadvantaged
    if not in_g.any() or not in_not_g.any():
        raise ValueError(f"group {groups.attribute!r} has an empty side among evaluated users "
                         f"(|g|={int(in_g.sum())}, |not g|={int(in_not_g.sum())})")
    loss_g, loss_ng = float(np.mean(mse[in_g])), float(np.mean(mse[in_not_g]))
    return FairnessReport(loss_g - loss_ng, loss_g, loss_ng, int(in_g.sum()), int(in_not_g.sum()))


def ldap_coefficients(users, groups):
    """Signed weight of each pair's squared error inside the parity loss.

    +1/(|g| |I_u|) for g users, -1/(|not g| |I_u|) for the rest, so that the
    parity loss equals ``sum(coef * err**2)``.
    """
    n = len(groups.disadvantaged)
    cnt = np.bincount(users, minlength=n)
    seen = cnt > 0
    n_g = int((seen & groups.disadvantaged).sum())
    n_ng = int((seen & ~groups.disadvantaged).sum())
    if n_g == 0 or n_ng == 0:
        raise ValueError(f"seed data lacks one side of {groups.attribute!r} "
                         f"(|g|={n_g}, |not g|={n_ng}); increase the seed fraction")
    dis = groups.disadvantaged[users]
    return np.where(dis, 1.0 / n_g, -1.0 / n_ng) / cnt[users]


def fairmf_gradients(U, V, users, items, values, coef, lambda_r, lambda_f):
    """Full-batch half-gradients of ``L^MF + lambda_f |L^dap|`` (the FairMF objective).

    Returned arrays have the shapes of U and V. The kink of |L^dap| uses subgradient 0.
    """
    err = values - np.einsum("ij,ij->i", U[users], V[items])
    sign = np.sign(np.sum(coef * err ** 2))
    w = 1.0 + lambda_f * sign * coef
    gU, gV = np.zeros_like(U), np.zeros_like(V)
    np.add.at(gU, users, -(w * err)[:, None] * V[items] + lambda_r * U[users])
    np.add.at(gV, items, -(w * err)[:, None] * U[users] + lambda_r * V[items])
    return gU, gV


def fairmf_objective(U, V, users, items, values, coef, lambda_r, lambda_f):
    err = values - np.einsum("ij,ij->i", U[users], V[items])
    reg = np.einsum("ij,ij->i", U[users], U[users]) + np.einsum("ij,ij->i", V[items], V[items])
    return float(np.sum(err ** 2) + lambda_r * np.sum(reg) + lambda_f * abs(np.sum(coef * err ** 2)))


@numba.njit(cache=True)
def _sweep(U, V, users, items, values, weights, order, lambda_r, gamma):
    k = U.shape[1]
    for t in range(order.shape[0]):
        j = order[t]
        s, i = users[j], items[j]
        pred = 0.0
        for d in range(k):
            pred += U[s, d] * V[i, d]
        e = weights[j] * (values[j] - pred)
        for d in range(k):
            us, vi = U[s, d], V[i, d]
            U[s, d] = us - gamma * (lambda_r * us - e * vi)
            V[i, d] = vi - gamma * (lambda_r * vi - e * us)


def fairmf(seed_users, seed_items, seed_values, V, U_fair, groups, t_s, lambda_r, lambda_f,
           gamma, rng=None, holdout=None):
    """Run ``t_s`` stochastic sweeps of FairMF over the server seed ratings.

    ``seed_users`` index rows of ``U_fair`` (local seed ids) while ``groups``
    is indexed by those same local ids. Each sweep evaluates the sign of the
    parity loss, then visits every rating once (in a fresh random order when
    ``rng`` is given) and takes one SGD step on its user and item vector with
    the rating's squared error weighted by ``1 + lambda_f * sign * coef``,
    clipped at zero so a large ``lambda_f`` never turns a step into ascent.

    The sign comes from the fitted ratings themselves, or from ``holdout``
    (a ``(users, items, values)`` triple of withheld seed ratings) when given.
    Items absent from the seed data keep their rows.

    Returns new ``(U_fair, V_fair)``; inputs are not modified.
    """
    U = np.array(U_fair, dtype=np.float64, copy=True)
    Vf = np.array(V, dtype=np.float64, copy=True)
    if t_s == 0:
        return U, Vf
    if len(seed_values) == 0:
        raise ValueError("server seed data is empty")
    users = np.ascontiguousarray(seed_users, dtype=np.int64)
    items = np.ascontiguousarray(seed_items, dtype=np.int64)
    values = np.ascontiguousarray(seed_values, dtype=np.float64)
    coef = ldap_coefficients(users, groups) if lambda_f else np.zeros(len(values))
    if holdout is not None and lambda_f:
        h_users, h_items, h_values = (np.asarray(a) for a in holdout)
        h_coef = ldap_coefficients(h_users, groups)
    else:
        h_users, h_items, h_values, h_coef = users, items, values, coef
    order = np.arange(len(values))
    for _ in range(t_s):
        if lambda_f:
            err = h_values - np.einsum("ij,ij->i", U[h_users], Vf[h_items])
            sign = np.sign(np.sum(h_coef * err ** 2))
            weights = np.maximum(1.0 + lambda_f * sign * coef, 0.0)
        else:
            weights = np.ones(len(values))
        if rng is not None:
            order = rng.permutation(len(values))
        _sweep(U, Vf, users, items, values, weights, order, float(lambda_r), float(gamma))
    return U, Vf
