"""Matrix-factorization primitives shared by the client, the server and FairMF.

Gradient convention: every gradient here is *half* the derivative of the
squared-error objective it belongs to, so ``(u.v - r) u + lambda_r v`` is the
item gradient of ``(r - u.v)^2 + lambda_r (|u|^2 + |v|^2)``. The proximity term
``eta |v_fair - v|^2`` is differentiated in full, giving ``2 eta (v - v_fair)``.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Hyperparams:
    k: int = 20
    lambda_r: float = 0.02
    lambda_f: float = 0.1
    eta: float = 0.1
    gamma: float = 0.6
    gamma_decay: float = 0.9
    rho: float = 2.0
    tau: float = 0.35
    T: int = 20
    t_s: int = 15
    T_local: int = 5
    T_predict: int = 6
    gamma_server: float = 0.01
    init_std: float = 0.05
    fair_holdout: float = 0.0  # share of seed ratings that only steer the penalty sign
    train_sampled_only: bool = False

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not 0 < self.gamma_decay <= 1:
            raise ValueError(f"gamma_decay must be in (0, 1], got {self.gamma_decay}")
        for name in ("lambda_r", "lambda_f", "eta", "gamma", "rho", "T", "t_s",
                     "T_local", "T_predict", "gamma_server", "init_std", "fair_holdout"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


@dataclass
class FactorModel:
    user_vectors: np.ndarray
    item_vectors: np.ndarray

    @property
    def k(self):
        return self.item_vectors.shape[1]

    def save(self, prefix):
        dump_matrix(f"{prefix}.U.bin", self.user_vectors)
        dump_matrix(f"{prefix}.V.bin", self.item_vectors)

    @classmethod
    def load(cls, prefix):
        return cls(load_matrix(f"{prefix}.U.bin"), load_matrix(f"{prefix}.V.bin"))


_MAGIC = b"FFRSMAT1"


def dump_matrix(path, a):
    """Write a float64 matrix as magic, (rows, cols) uint64 header, row-major data."""
    a = np.ascontiguousarray(a, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<QQ", *a.shape))
        fh.write(a.tobytes())


def load_matrix(path):
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a matrix dump")
    rows, cols = struct.unpack("<QQ", raw[8:24])
    return np.frombuffer(raw[24:], dtype="<f8").reshape(rows, cols).copy()


def init_model(n, m, k, rng_seed=0, scale=0.01):
    """Draw U (n x k) and V (m x k) i.i.d. from N(0, scale^2)."""
    if min(n, m, k) <= 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(rng_seed)
    return FactorModel(rng.normal(0.0, scale, (n, k)), rng.normal(0.0, scale, (m, k)))


def predict(u, v):
    u, v = np.asarray(u), np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    return float(u @ v)


def mf_loss(U, V, users, items, values, lambda_r):
    """Regularized squared loss with the penalty charged once per observed pair."""
    Uu, Vi = U[users], V[items]
    resid = values - np.einsum("ij,ij->i", Uu, Vi)
    reg = np.einsum("ij,ij->i", Uu, Uu) + np.einsum("ij,ij->i", Vi, Vi)
    return float(np.sum(resid ** 2) + lambda_r * np.sum(reg))


def fill_targets(ratings, observed=None, r_virtual=None):
    """``p r + (1 - p) r'`` per item; unobserved slots take the virtual rating."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if observed is None:
        return ratings
    observed = np.asarray(observed, dtype=bool)
    r_virtual = np.broadcast_to(np.asarray(r_virtual, dtype=np.float64), ratings.shape)
    return np.where(observed, ratings, r_virtual)


def user_gradient(u, V_items, targets, lambda_r):
    """Normalized user gradient over the client's true and virtual items.

    ``V_items`` holds the item vectors of I_u and I'_u (one row each) and
    ``targets`` the true rating or virtual rating for each row.
    """
    V_items = np.atleast_2d(V_items)
    if len(V_items) == 0:
        raise ValueError("user gradient needs at least one item")
    resid = V_items @ u - targets
    return (resid @ V_items) / len(V_items) + lambda_r * u


def item_gradient(u, v, r, p=1, r_virtual=0.0, lambda_r=0.0):
    """Per-(user, item) gradient a client uploads for one item vector."""
    target = r if p else r_virtual
    return (u @ v - target) * u + lambda_r * v


def item_gradients(u, V_items, targets, lambda_r):
    """Row-wise ``item_gradient`` for all of one client's items."""
    resid = V_items @ u - targets
    return resid[:, None] * u[None, :] + lambda_r * V_items


def fo_client_gradients(u, V_items, targets, V_fair_items, eta, lambda_r):
    """User gradient and item gradients of the fairness-oriented local objective.

    With ``eta == 0`` the outputs are bit-identical to ``user_gradient`` and
    ``item_gradients``; the proximity term only touches item gradients.
    """
    if V_fair_items is not None and np.shape(V_fair_items) != np.shape(V_items):
        raise ValueError("V and V_fair rows must have identical shape")
    gu = user_gradient(u, V_items, targets, lambda_r)
    gv = item_gradients(u, V_items, targets, lambda_r)
    if eta:
        gv = gv + 2.0 * eta * (V_items - V_fair_items)
    return gu, gv


# vectorized forms over many clients; entries are grouped contiguously by user

def segment_sum(x, starts):
    """Sum rows of ``x`` within consecutive segments beginning at ``starts``."""
    return np.add.reduceat(x, starts, axis=0)


def batch_residuals(U, V, users, items, targets):
    return np.einsum("ij,ij->i", U[users], V[items]) - targets


def batch_user_gradients(U, V, owners, users, items, targets, starts, counts, lambda_r):
    """Normalized user gradients for the clients ``owners`` (one segment each)."""
    resid = batch_residuals(U, V, users, items, targets)
    s = segment_sum(resid[:, None] * V[items], starts)
    return s / counts[:, None] + lambda_r * U[owners]


def batch_item_gradients(U, V, users, items, targets, lambda_r, V_fair=None, eta=0.0):
    resid = batch_residuals(U, V, users, items, targets)
    g = resid[:, None] * U[users] + lambda_r * V[items]
    if eta:
        g = g + 2.0 * eta * (V[items] - V_fair[items])
    return g


def numeric_gradient(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + h
        fp = f(x)
        flat[j] = old - h
        fm = f(x)
        flat[j] = old
        gf[j] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b, atol=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    diff = np.linalg.norm(a - b)
    if diff <= atol:
        return 0.0
    return float(diff / max(np.linalg.norm(a), np.linalg.norm(b)))
