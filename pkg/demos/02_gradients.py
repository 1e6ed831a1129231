"""The client and server gradients, checked against finite differences."""
# %%
import numpy as np

from fairfrs import factor

rng = np.random.default_rng(0)
k, lam, eta = 5, 0.02, 0.5
u = rng.normal(0, 0.5, k)
V = rng.normal(0, 0.5, (6, k))     # rows for I_u then I'_u
targets = np.array([4, 5, 2, 3.5, 3.5, 3.5])  # virtual slots carry the user's mean

# %% normalized user gradient: half-derivative of the mean squared error + ridge
f_u = lambda x: 0.5 * np.mean((V @ x - targets) ** 2) + 0.5 * lam * x @ x
print("user grad rel err", factor.relative_error(
    factor.user_gradient(u, V, targets, lam), factor.numeric_gradient(f_u, u)))

# %% item gradients, then the fairness-pulled version
V_fair = V + rng.normal(0, 0.1, V.shape)
_, g = factor.fo_client_gradients(u, V, targets, V_fair, eta, lam)
f_v = lambda X: (0.5 * np.sum((X @ u - targets) ** 2) + 0.5 * lam * np.sum(X * X)
                 + eta * np.sum((V_fair - X) ** 2))
print("item grad rel err", factor.relative_error(g, factor.numeric_gradient(f_v, V)))

# eta = 0 gives back the plain gradients bit for bit
_, g0 = factor.fo_client_gradients(u, V, targets, V_fair, 0.0, lam)
print("eta=0 identical:", np.array_equal(g0, factor.item_gradients(u, V, targets, lam)))
